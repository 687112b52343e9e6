#include "rfl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace rfl {

namespace {

constexpr double kGeluC0 = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluC1 = 0.044715;

std::int64_t prod(const Shape& s, std::size_t from, std::size_t to) {
    std::int64_t p = 1;
    for (std::size_t i = from; i < to; ++i) p *= s[i];
    return p;
}

// Right-aligned broadcast: dims equal, or either side 1.
Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
    const std::size_t ra = a.size(), rb = b.size();
    const std::size_t r = std::max(ra, rb);
    Shape out(r);
    for (std::size_t i = 0; i < r; ++i) {
        const std::int64_t da = i < r - ra ? 1 : a[i - (r - ra)];
        const std::int64_t db = i < r - rb ? 1 : b[i - (r - rb)];
        if (da != db && da != 1 && db != 1) {
            throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) +
                             " and " + shape_str(b));
        }
        out[i] = std::max(da, db);
    }
    return out;
}

// Row-major strides; 0 on broadcast (size-1 or absent) dims, right-aligned
// against an output of rank r.
std::vector<std::int64_t> broadcast_steps(const Shape& in, const Shape& out) {
    const std::size_t r = out.size(), ri = in.size();
    std::vector<std::int64_t> strides(ri);
    std::int64_t acc = 1;
    for (std::size_t i = ri; i-- > 0;) {
        strides[i] = acc;
        acc *= in[i];
    }
    std::vector<std::int64_t> steps(r, 0);
    for (std::size_t i = 0; i < ri; ++i) {
        const std::size_t d = r - ri + i;
        steps[d] = in[i] == 1 ? 0 : strides[i];
    }
    return steps;
}

template <class T, class F>
void binary_kernel(const Tensor& a, const Tensor& b, Tensor& out, F f) {
    const auto pa = a.data<T>();
    const auto pb = b.data<T>();
    const auto po = out.data<T>();
    const std::int64_t n = out.numel();
    if (a.shape() == b.shape()) {
        for (std::int64_t i = 0; i < n; ++i) po[i] = f(pa[i], pb[i]);
        return;
    }
    // Suffix fast path: b (leading 1s stripped) equals a's trailing dims.
    if (out.shape() == a.shape()) {
        Shape bs = b.shape();
        while (!bs.empty() && bs.front() == 1) bs.erase(bs.begin());
        const std::size_t ra = a.shape().size();
        if (bs.size() <= ra &&
            std::equal(bs.begin(), bs.end(), a.shape().end() - bs.size())) {
            const std::int64_t inner = shape_numel(bs);
            if (inner > 0) {
                for (std::int64_t o = 0; o < n / inner; ++o) {
                    const T* ra_ = pa.data() + o * inner;
                    T* ro = po.data() + o * inner;
                    for (std::int64_t i = 0; i < inner; ++i) ro[i] = f(ra_[i], pb[i]);
                }
            }
            return;
        }
    }
    const Shape& os = out.shape();
    const std::size_t r = os.size();
    const auto sa = broadcast_steps(a.shape(), os);
    const auto sb = broadcast_steps(b.shape(), os);
    std::vector<std::int64_t> idx(r, 0);
    std::int64_t oa = 0, ob = 0;
    for (std::int64_t e = 0; e < n; ++e) {
        po[e] = f(pa[oa], pb[ob]);
        for (std::size_t d = r; d-- > 0;) {
            ++idx[d];
            oa += sa[d];
            ob += sb[d];
            if (idx[d] < os[d]) break;
            idx[d] = 0;
            oa -= sa[d] * os[d];
            ob -= sb[d] * os[d];
        }
    }
}

template <class F>
Tensor apply_binary(const Tensor& a, const Tensor& b, const char* op, F f) {
    Tensor out = Tensor::zeros(broadcast_shape(a.shape(), b.shape(), op), a.dtype());
    with_dtype(a.dtype(), [&](auto z) {
        using T = decltype(z);
        binary_kernel<T>(a, b, out, [&](T x, T y) { return static_cast<T>(f(x, y)); });
        return 0;
    });
    return out;
}

template <class F>
Tensor apply_unary(const Tensor& a, F f) {
    Tensor out = Tensor::zeros(a.shape(), a.dtype());
    with_dtype(a.dtype(), [&](auto z) {
        using T = decltype(z);
        const auto pa = a.data<T>();
        const auto po = out.data<T>();
        for (std::int64_t i = 0; i < a.numel(); ++i)
            po[i] = static_cast<T>(f(static_cast<double>(pa[i])));
        return 0;
    });
    return out;
}

// Sum `g` down to `target` (right-aligned; summed over broadcast dims).
Tensor reduce_to(const Tensor& g, const Shape& target) {
    if (g.shape() == target) return g;
    Tensor out = Tensor::zeros(target, g.dtype());
    with_dtype(g.dtype(), [&](auto z) {
        using T = decltype(z);
        const auto pg = g.data<T>();
        const auto po = out.data<T>();
        const Shape& gs = g.shape();
        const std::size_t r = gs.size();
        const auto st = broadcast_steps(target, gs);
        std::vector<std::int64_t> idx(r, 0);
        std::int64_t ot = 0;
        for (std::int64_t e = 0; e < g.numel(); ++e) {
            po[ot] += pg[e];
            for (std::size_t d = r; d-- > 0;) {
                ++idx[d];
                ot += st[d];
                if (idx[d] < gs[d]) break;
                idx[d] = 0;
                ot -= st[d] * gs[d];
            }
        }
        return 0;
    });
    return out;
}

void accumulate_into(Tensor& dst, const Tensor& src) {
    with_dtype(dst.dtype(), [&](auto z) {
        using T = decltype(z);
        const auto pd = dst.data<T>();
        const auto ps = src.data<T>();
        for (std::int64_t i = 0; i < dst.numel(); ++i) pd[i] += ps[i];
        return 0;
    });
}

// C[m x n] += op(A) . op(B) with explicit row/col strides so transposed
// operands need no materialized copy. C must be zero-initialized.
template <class T>
void mm_strided(const T* A, const T* B, T* C, std::int64_t m, std::int64_t k,
                std::int64_t n, std::int64_t a_rs, std::int64_t a_cs,
                std::int64_t b_rs, std::int64_t b_cs) {
    for (std::int64_t i = 0; i < m; ++i) {
        T* crow = C + i * n;
        for (std::int64_t p = 0; p < k; ++p) {
            const T aip = A[i * a_rs + p * a_cs];
            if (aip == T(0)) continue;
            const T* bbase = B + p * b_rs;
            if (b_cs == 1) {
                for (std::int64_t j = 0; j < n; ++j) crow[j] += aip * bbase[j];
            } else {
                for (std::int64_t j = 0; j < n; ++j) crow[j] += aip * bbase[j * b_cs];
            }
        }
    }
}

enum class MmMode { nn, nt, tn };  // plain, B transposed, A transposed

Tensor matmul_plain(const Tensor& a, const Tensor& b, MmMode mode) {
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    const std::size_t r = as.size();
    std::int64_t m = 0, k = 0, n = 0, kb = 0;
    switch (mode) {
        case MmMode::nn:
            m = as[r - 2]; k = as[r - 1]; kb = bs[r - 2]; n = bs[r - 1];
            break;
        case MmMode::nt:  // a [m,k] . b[n,k]^T
            m = as[r - 2]; k = as[r - 1]; n = bs[r - 2]; kb = bs[r - 1];
            break;
        case MmMode::tn:  // a[k,m]^T . b [k,n]
            k = as[r - 2]; m = as[r - 1]; kb = bs[r - 2]; n = bs[r - 1];
            break;
    }
    if (k != kb) {
        throw ShapeError("matmul: inner dimensions do not match: " + shape_str(as) +
                         " . " + shape_str(bs));
    }
    Shape out_shape(as.begin(), as.end() - 2);
    out_shape.push_back(m);
    out_shape.push_back(n);
    Tensor out = Tensor::zeros(out_shape, a.dtype());
    const std::int64_t batches = prod(as, 0, r - 2);
    const std::int64_t a_sz = as[r - 2] * as[r - 1];
    const std::int64_t b_sz = bs[r - 2] * bs[r - 1];
    with_dtype(a.dtype(), [&](auto z) {
        using T = decltype(z);
        const T* pa = a.data<T>().data();
        const T* pb = b.data<T>().data();
        T* pc = out.data<T>().data();
        for (std::int64_t bt = 0; bt < batches; ++bt) {
            const T* A = pa + bt * a_sz;
            const T* B = pb + bt * b_sz;
            T* C = pc + bt * m * n;
            switch (mode) {
                case MmMode::nn: mm_strided<T>(A, B, C, m, k, n, k, 1, n, 1); break;
                case MmMode::nt: mm_strided<T>(A, B, C, m, k, n, k, 1, 1, k); break;
                case MmMode::tn: mm_strided<T>(A, B, C, m, k, n, 1, m, n, 1); break;
            }
        }
        return 0;
    });
    return out;
}

void check_matmul_operands(const Tensor& a, const Tensor& b) {
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    if (as.size() < 2 || bs.size() < 2 || as.size() != bs.size()) {
        throw ShapeError("matmul: need equal-rank operands of rank >= 2, got " +
                         shape_str(as) + " and " + shape_str(bs));
    }
    for (std::size_t i = 0; i + 2 < as.size(); ++i) {
        if (as[i] != bs[i]) {
            throw ShapeError("matmul: leading dimensions differ: " + shape_str(as) +
                             " vs " + shape_str(bs));
        }
    }
    if (as[as.size() - 1] != bs[bs.size() - 2]) {
        throw ShapeError("matmul: inner dimensions do not match: " + shape_str(as) +
                         " . " + shape_str(bs));
    }
}

double gelu_tanh(double x) {
    return 0.5 * x * (1.0 + std::tanh(kGeluC0 * (x + kGeluC1 * x * x * x)));
}

double gelu_tanh_grad(double x) {
    const double u = kGeluC0 * (x + kGeluC1 * x * x * x);
    const double t = std::tanh(u);
    const double du = kGeluC0 * (1.0 + 3.0 * kGeluC1 * x * x);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

}  // namespace

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

std::int64_t shape_numel(const Shape& s) { return prod(s, 0, s.size()); }

// --- Tensor -----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, Dtype dt) {
    Tensor t;
    t.shape_ = std::move(shape);
    t.dtype_ = dt;
    const auto n = t.shape_.empty() ? std::size_t{1}
                                    : static_cast<std::size_t>(shape_numel(t.shape_));
    if (dt == Dtype::f64) t.f64_.assign(n, 0.0);
    else t.f32_.assign(n, 0.0f);
    return t;
}

Tensor Tensor::full(Shape shape, double value, Dtype dt) {
    Tensor t = zeros(std::move(shape), dt);
    for (std::int64_t i = 0; i < t.numel(); ++i) t.set_flat(i, value);
    return t;
}

Tensor Tensor::from_values(Shape shape, const std::vector<double>& values, Dtype dt) {
    Tensor t = zeros(std::move(shape), dt);
    if (static_cast<std::int64_t>(values.size()) != t.numel()) {
        throw ShapeError("from_values: " + std::to_string(values.size()) +
                         " values for shape " + shape_str(t.shape()));
    }
    for (std::int64_t i = 0; i < t.numel(); ++i) t.set_flat(i, values[static_cast<std::size_t>(i)]);
    return t;
}

Tensor Tensor::scalar(double value, Dtype dt) { return full({}, value, dt); }

std::int64_t Tensor::numel() const {
    if (shape_.empty()) return defined() ? 1 : 0;
    return shape_numel(shape_);
}

template <>
std::span<float> Tensor::data<float>() {
    if (dtype_ != Dtype::f32) throw ContractError("tensor is not f32");
    return {f32_.data(), f32_.size()};
}
template <>
std::span<double> Tensor::data<double>() {
    if (dtype_ != Dtype::f64) throw ContractError("tensor is not f64");
    return {f64_.data(), f64_.size()};
}
template <>
std::span<const float> Tensor::data<float>() const {
    if (dtype_ != Dtype::f32) throw ContractError("tensor is not f32");
    return {f32_.data(), f32_.size()};
}
template <>
std::span<const double> Tensor::data<double>() const {
    if (dtype_ != Dtype::f64) throw ContractError("tensor is not f64");
    return {f64_.data(), f64_.size()};
}

double Tensor::get_flat(std::int64_t i) const {
    return dtype_ == Dtype::f64 ? f64_[static_cast<std::size_t>(i)]
                                : static_cast<double>(f32_[static_cast<std::size_t>(i)]);
}

void Tensor::set_flat(std::int64_t i, double v) {
    if (dtype_ == Dtype::f64) f64_[static_cast<std::size_t>(i)] = v;
    else f32_[static_cast<std::size_t>(i)] = static_cast<float>(v);
}

double Tensor::item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape_));
    return get_flat(0);
}

Tensor Tensor::astype(Dtype dt) const {
    if (dt == dtype_) return *this;
    Tensor out = zeros(shape_, dt);
    for (std::int64_t i = 0; i < numel(); ++i) out.set_flat(i, get_flat(i));
    return out;
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_numel(shape) != numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(shape_) + " as " +
                         shape_str(shape));
    }
    Tensor out = *this;
    out.shape_ = std::move(shape);
    return out;
}

bool Tensor::all_finite() const {
    for (std::int64_t i = 0; i < numel(); ++i)
        if (!std::isfinite(get_flat(i))) return false;
    return true;
}

bool Tensor::same_values(const Tensor& other) const {
    if (shape_ != other.shape_ || dtype_ != other.dtype_) return false;
    for (std::int64_t i = 0; i < numel(); ++i)
        if (get_flat(i) != other.get_flat(i)) return false;
    return true;
}

double Tensor::max_abs_diff(const Tensor& other) const {
    if (shape_ != other.shape_) {
        throw ShapeError("max_abs_diff: shapes differ: " + shape_str(shape_) + " vs " +
                         shape_str(other.shape_));
    }
    double m = 0.0;
    for (std::int64_t i = 0; i < numel(); ++i)
        m = std::max(m, std::abs(get_flat(i) - other.get_flat(i)));
    return m;
}

// --- Gradients ----------------------------------------------------------------

const Tensor& Gradients::at(NodeId id) const {
    const auto& slot = by_id_[static_cast<std::size_t>(id)];
    if (!slot) throw ContractError("no gradient for node " + std::to_string(id));
    return *slot;
}

// --- Tape --------------------------------------------------------------------

const Tensor& Tape::OpCtx::in(int k) const {
    return tape->value(tape->nodes_[static_cast<std::size_t>(out)].inputs[static_cast<std::size_t>(k)]);
}
const Tensor& Tape::OpCtx::out_value() const { return tape->value(out); }

NodeId Tape::push(Tensor value, std::vector<NodeId> inputs, BackFn back, const char* op) {
    Node n;
    n.value = std::move(value);
    n.inputs = std::move(inputs);
    n.back = std::move(back);
    n.op = op;
    for (NodeId i : n.inputs) n.requires_grad = n.requires_grad || requires_grad(i);
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Tape::leaf(Tensor value, bool requires_grad) {
    if (value.dtype() != dtype_) {
        throw ContractError("leaf dtype does not match tape precision");
    }
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Tape::add(NodeId a, NodeId b) {
    Tensor out = apply_binary(value(a), value(b), "add", [](double x, double y) { return x + y; });
    return push(std::move(out), {a, b},
                [](const OpCtx& c, const Tensor& g) {
                    return std::vector<Tensor>{reduce_to(g, c.in(0).shape()),
                                               reduce_to(g, c.in(1).shape())};
                },
                "add");
}

NodeId Tape::sub(NodeId a, NodeId b) {
    Tensor out = apply_binary(value(a), value(b), "sub", [](double x, double y) { return x - y; });
    return push(std::move(out), {a, b},
                [](const OpCtx& c, const Tensor& g) {
                    Tensor neg = apply_unary(g, [](double v) { return -v; });
                    return std::vector<Tensor>{reduce_to(g, c.in(0).shape()),
                                               reduce_to(neg, c.in(1).shape())};
                },
                "sub");
}

NodeId Tape::mul(NodeId a, NodeId b) {
    Tensor out = apply_binary(value(a), value(b), "mul", [](double x, double y) { return x * y; });
    return push(std::move(out), {a, b},
                [](const OpCtx& c, const Tensor& g) {
                    Tensor ga = apply_binary(g, c.in(1), "mul", [](double x, double y) { return x * y; });
                    Tensor gb = apply_binary(g, c.in(0), "mul", [](double x, double y) { return x * y; });
                    return std::vector<Tensor>{reduce_to(ga, c.in(0).shape()),
                                               reduce_to(gb, c.in(1).shape())};
                },
                "mul");
}

NodeId Tape::scale(NodeId a, double c) {
    Tensor out = with_dtype(dtype_, [&](auto z) {
        using T = decltype(z);
        const T cc = static_cast<T>(c);
        return apply_unary(value(a), [&](double v) { return static_cast<double>(static_cast<T>(v) * cc); });
    });
    return push(std::move(out), {a},
                [c, dt = dtype_](const OpCtx&, const Tensor& g) {
                    Tensor gg = with_dtype(dt, [&](auto z) {
                        using T = decltype(z);
                        const T cc = static_cast<T>(c);
                        return apply_unary(g, [&](double v) { return static_cast<double>(static_cast<T>(v) * cc); });
                    });
                    return std::vector<Tensor>{std::move(gg)};
                },
                "scale");
}

NodeId Tape::relu(NodeId a) {
    Tensor out = apply_unary(value(a), [](double v) { return v > 0.0 ? v : 0.0; });
    return push(std::move(out), {a},
                [](const OpCtx& c, const Tensor& g) {
                    Tensor ga = apply_binary(g, c.in(0), "relu_grad",
                                             [](double gv, double xv) { return xv > 0.0 ? gv : 0.0; });
                    return std::vector<Tensor>{std::move(ga)};
                },
                "relu");
}

NodeId Tape::gelu(NodeId a) {
    Tensor out = apply_unary(value(a), gelu_tanh);
    return push(std::move(out), {a},
                [](const OpCtx& c, const Tensor& g) {
                    Tensor ga = apply_binary(g, c.in(0), "gelu_grad",
                                             [](double gv, double xv) { return gv * gelu_tanh_grad(xv); });
                    return std::vector<Tensor>{std::move(ga)};
                },
                "gelu");
}

NodeId Tape::sign(NodeId a) {
    Tensor out = apply_unary(value(a), [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
    return push(std::move(out), {a},
                [](const OpCtx& c, const Tensor&) {
                    return std::vector<Tensor>{Tensor::zeros(c.in(0).shape(), c.in(0).dtype())};
                },
                "sign");
}

NodeId Tape::clamp(NodeId a, double lo, double hi) {
    Tensor out = apply_unary(value(a), [lo, hi](double v) { return std::min(std::max(v, lo), hi); });
    return push(std::move(out), {a},
                [lo, hi](const OpCtx& c, const Tensor& g) {
                    // Straight-through inside the bounds, zero outside.
                    Tensor ga = apply_binary(g, c.in(0), "clamp_grad", [lo, hi](double gv, double xv) {
                        return (xv >= lo && xv <= hi) ? gv : 0.0;
                    });
                    return std::vector<Tensor>{std::move(ga)};
                },
                "clamp");
}

NodeId Tape::matmul(NodeId a, NodeId b) {
    check_matmul_operands(value(a), value(b));
    Tensor out = matmul_plain(value(a), value(b), MmMode::nn);
    return push(std::move(out), {a, b},
                [](const OpCtx& c, const Tensor& g) {
                    // dA = g . B^T, dB = A^T . g
                    return std::vector<Tensor>{matmul_plain(g, c.in(1), MmMode::nt),
                                               matmul_plain(c.in(0), g, MmMode::tn)};
                },
                "matmul");
}

namespace {

Tensor transpose_plain(const Tensor& in, const std::vector<int>& perm) {
    const std::size_t r = in.shape().size();
    if (perm.size() != r) throw ShapeError("transpose: perm rank mismatch");
    {
        std::vector<int> sorted = perm;
        std::sort(sorted.begin(), sorted.end());
        for (std::size_t i = 0; i < r; ++i)
            if (sorted[i] != static_cast<int>(i)) throw ShapeError("transpose: invalid permutation");
    }
    Shape os(r);
    for (std::size_t i = 0; i < r; ++i) os[i] = in.shape()[static_cast<std::size_t>(perm[i])];
    Tensor out = Tensor::zeros(os, in.dtype());
    with_dtype(in.dtype(), [&](auto z) {
        using T = decltype(z);
        const auto pi = in.data<T>();
        const auto po = out.data<T>();
        std::vector<std::int64_t> in_strides(r);
        std::int64_t acc = 1;
        for (std::size_t i = r; i-- > 0;) {
            in_strides[i] = acc;
            acc *= in.shape()[i];
        }
        std::vector<std::int64_t> step(r);
        for (std::size_t i = 0; i < r; ++i) step[i] = in_strides[static_cast<std::size_t>(perm[i])];
        std::vector<std::int64_t> idx(r, 0);
        std::int64_t off = 0;
        for (std::int64_t e = 0; e < in.numel(); ++e) {
            po[e] = pi[off];
            for (std::size_t d = r; d-- > 0;) {
                ++idx[d];
                off += step[d];
                if (idx[d] < os[d]) break;
                idx[d] = 0;
                off -= step[d] * os[d];
            }
        }
        return 0;
    });
    return out;
}

}  // namespace

NodeId Tape::transpose(NodeId a, std::vector<int> perm) {
    Tensor out = transpose_plain(value(a), perm);
    const std::size_t r = perm.size();
    std::vector<int> inv(r);
    for (std::size_t i = 0; i < r; ++i) inv[static_cast<std::size_t>(perm[i])] = static_cast<int>(i);
    return push(std::move(out), {a},
                [inv](const OpCtx&, const Tensor& g) {
                    return std::vector<Tensor>{transpose_plain(g, inv)};
                },
                "transpose");
}

NodeId Tape::reshape(NodeId a, Shape shape) {
    Tensor out = value(a).reshaped(std::move(shape));
    return push(std::move(out), {a},
                [](const OpCtx& c, const Tensor& g) {
                    return std::vector<Tensor>{g.reshaped(c.in(0).shape())};
                },
                "reshape");
}

NodeId Tape::slice(NodeId a, int axis, std::int64_t start, std::int64_t len) {
    const Tensor& in = value(a);
    const Shape& is = in.shape();
    if (axis < 0 || axis >= in.rank()) throw ShapeError("slice: axis out of range");
    if (start < 0 || len < 0 || start + len > is[static_cast<std::size_t>(axis)]) {
        throw ShapeError("slice: range [" + std::to_string(start) + ", " +
                         std::to_string(start + len) + ") exceeds " + shape_str(is));
    }
    Shape os = is;
    os[static_cast<std::size_t>(axis)] = len;
    Tensor out = Tensor::zeros(os, in.dtype());
    const std::int64_t outer = prod(is, 0, static_cast<std::size_t>(axis));
    const std::int64_t n = is[static_cast<std::size_t>(axis)];
    const std::int64_t inner = prod(is, static_cast<std::size_t>(axis) + 1, is.size());
    with_dtype(in.dtype(), [&](auto z) {
        using T = decltype(z);
        const auto pi = in.data<T>();
        const auto po = out.data<T>();
        for (std::int64_t o = 0; o < outer; ++o)
            std::memcpy(po.data() + o * len * inner, pi.data() + (o * n + start) * inner,
                        static_cast<std::size_t>(len * inner) * sizeof(T));
        return 0;
    });
    return push(std::move(out), {a},
                [start, len, outer, n, inner](const OpCtx& c, const Tensor& g) {
                    Tensor gi = Tensor::zeros(c.in(0).shape(), g.dtype());
                    with_dtype(g.dtype(), [&](auto z) {
                        using T = decltype(z);
                        const auto pg = g.data<T>();
                        const auto po = gi.data<T>();
                        for (std::int64_t o = 0; o < outer; ++o)
                            std::memcpy(po.data() + (o * n + start) * inner,
                                        pg.data() + o * len * inner,
                                        static_cast<std::size_t>(len * inner) * sizeof(T));
                        return 0;
                    });
                    return std::vector<Tensor>{std::move(gi)};
                },
                "slice");
}

NodeId Tape::concat(const std::vector<NodeId>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const Tensor& first = value(parts[0]);
    const std::size_t r = first.shape().size();
    if (axis < 0 || static_cast<std::size_t>(axis) >= r) throw ShapeError("concat: axis out of range");
    std::int64_t total = 0;
    for (NodeId p : parts) {
        const Shape& s = value(p).shape();
        if (s.size() != r) throw ShapeError("concat: rank mismatch");
        for (std::size_t d = 0; d < r; ++d) {
            if (d != static_cast<std::size_t>(axis) && s[d] != first.shape()[d]) {
                throw ShapeError("concat: shapes " + shape_str(first.shape()) + " and " +
                                 shape_str(s) + " differ off-axis");
            }
        }
        total += s[static_cast<std::size_t>(axis)];
    }
    Shape os = first.shape();
    os[static_cast<std::size_t>(axis)] = total;
    Tensor out = Tensor::zeros(os, first.dtype());
    const std::int64_t outer = prod(os, 0, static_cast<std::size_t>(axis));
    const std::int64_t inner = prod(os, static_cast<std::size_t>(axis) + 1, r);
    std::vector<std::int64_t> lens;
    lens.reserve(parts.size());
    for (NodeId p : parts) lens.push_back(value(p).shape()[static_cast<std::size_t>(axis)]);
    with_dtype(first.dtype(), [&](auto z) {
        using T = decltype(z);
        const auto po = out.data<T>();
        std::int64_t off = 0;
        for (std::size_t pi = 0; pi < parts.size(); ++pi) {
            const auto pp = value(parts[pi]).data<T>();
            for (std::int64_t o = 0; o < outer; ++o)
                std::memcpy(po.data() + (o * total + off) * inner,
                            pp.data() + o * lens[pi] * inner,
                            static_cast<std::size_t>(lens[pi] * inner) * sizeof(T));
            off += lens[pi];
        }
        return 0;
    });
    return push(std::move(out), parts,
                [axis, lens, outer, inner, total](const OpCtx&, const Tensor& g) {
                    std::vector<Tensor> gs;
                    gs.reserve(lens.size());
                    std::int64_t off = 0;
                    for (const std::int64_t len : lens) {
                        Shape ps = g.shape();
                        ps[static_cast<std::size_t>(axis)] = len;
                        Tensor gp = Tensor::zeros(ps, g.dtype());
                        with_dtype(g.dtype(), [&](auto z) {
                            using T = decltype(z);
                            const auto pg = g.data<T>();
                            const auto pp = gp.data<T>();
                            for (std::int64_t o = 0; o < outer; ++o)
                                std::memcpy(pp.data() + o * len * inner,
                                            pg.data() + (o * total + off) * inner,
                                            static_cast<std::size_t>(len * inner) * sizeof(T));
                            return 0;
                        });
                        gs.push_back(std::move(gp));
                        off += len;
                    }
                    return gs;
                },
                "concat");
}

NodeId Tape::broadcast_to(NodeId a, Shape shape) {
    const Tensor& in = value(a);
    // Validate via broadcast_shape; result must equal the target.
    const Shape bs = broadcast_shape(in.shape(), shape, "broadcast_to");
    if (bs != shape) {
        throw ShapeError("broadcast_to: cannot broadcast " + shape_str(in.shape()) +
                         " to " + shape_str(shape));
    }
    Tensor zero = Tensor::zeros(shape, in.dtype());
    Tensor out = apply_binary(in, zero, "broadcast_to", [](double x, double) { return x; });
    return push(std::move(out), {a},
                [](const OpCtx& c, const Tensor& g) {
                    return std::vector<Tensor>{reduce_to(g, c.in(0).shape())};
                },
                "broadcast_to");
}

NodeId Tape::sum_all(NodeId a) {
    const Tensor& in = value(a);
    double acc = with_dtype(in.dtype(), [&](auto z) {
        using T = decltype(z);
        T s = T(0);
        const auto p = in.data<T>();
        for (std::int64_t i = 0; i < in.numel(); ++i) s += p[i];
        return static_cast<double>(s);
    });
    return push(Tensor::scalar(acc, in.dtype()), {a},
                [](const OpCtx& c, const Tensor& g) {
                    return std::vector<Tensor>{Tensor::full(c.in(0).shape(), g.item(), g.dtype())};
                },
                "sum_all");
}

NodeId Tape::softmax(NodeId a, int axis) {
    const Tensor& in = value(a);
    if (axis < 0 || axis >= in.rank()) {
        throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(in.shape()));
    }
    const Shape& s = in.shape();
    const std::int64_t outer = prod(s, 0, static_cast<std::size_t>(axis));
    const std::int64_t n = s[static_cast<std::size_t>(axis)];
    const std::int64_t inner = prod(s, static_cast<std::size_t>(axis) + 1, s.size());
    Tensor out = Tensor::zeros(s, in.dtype());
    with_dtype(in.dtype(), [&](auto z) {
        using T = decltype(z);
        const auto pi = in.data<T>();
        const auto po = out.data<T>();
        for (std::int64_t o = 0; o < outer; ++o) {
            for (std::int64_t i = 0; i < inner; ++i) {
                const std::int64_t base = o * n * inner + i;
                T mx = pi[base];
                for (std::int64_t j = 1; j < n; ++j) mx = std::max(mx, pi[base + j * inner]);
                T denom = T(0);
                for (std::int64_t j = 0; j < n; ++j) {
                    const T e = std::exp(pi[base + j * inner] - mx);
                    po[base + j * inner] = e;
                    denom += e;
                }
                for (std::int64_t j = 0; j < n; ++j) po[base + j * inner] /= denom;
            }
        }
        return 0;
    });
    return push(std::move(out), {a},
                [outer, n, inner](const OpCtx& c, const Tensor& g) {
                    const Tensor& y = c.out_value();
                    Tensor gi = Tensor::zeros(y.shape(), y.dtype());
                    with_dtype(y.dtype(), [&](auto z) {
                        using T = decltype(z);
                        const auto py = y.data<T>();
                        const auto pg = g.data<T>();
                        const auto po = gi.data<T>();
                        for (std::int64_t o = 0; o < outer; ++o) {
                            for (std::int64_t i = 0; i < inner; ++i) {
                                const std::int64_t base = o * n * inner + i;
                                T dot = T(0);
                                for (std::int64_t j = 0; j < n; ++j)
                                    dot += pg[base + j * inner] * py[base + j * inner];
                                for (std::int64_t j = 0; j < n; ++j)
                                    po[base + j * inner] =
                                        py[base + j * inner] * (pg[base + j * inner] - dot);
                            }
                        }
                        return 0;
                    });
                    return std::vector<Tensor>{std::move(gi)};
                },
                "softmax");
}

NodeId Tape::layer_norm(NodeId a, NodeId gain, NodeId bias, double eps) {
    const Tensor& in = value(a);
    if (in.rank() < 1) throw ShapeError("layer_norm: rank-0 input");
    const std::int64_t d = in.shape().back();
    const auto check_affine = [&](const Tensor& t, const char* name) {
        if (t.rank() != 1 || t.shape()[0] != d) {
            throw ShapeError(std::string("layer_norm: ") + name + " shape " +
                             shape_str(t.shape()) + " does not match last dim " +
                             std::to_string(d));
        }
    };
    check_affine(value(gain), "gain");
    check_affine(value(bias), "bias");
    const std::int64_t rows = in.numel() / d;
    Tensor out = Tensor::zeros(in.shape(), in.dtype());
    with_dtype(in.dtype(), [&](auto z) {
        using T = decltype(z);
        const auto px = in.data<T>();
        const auto pgm = value(gain).data<T>();
        const auto pb = value(bias).data<T>();
        const auto po = out.data<T>();
        for (std::int64_t r = 0; r < rows; ++r) {
            const T* x = px.data() + r * d;
            T* y = po.data() + r * d;
            T mean = T(0);
            for (std::int64_t j = 0; j < d; ++j) mean += x[j];
            mean /= static_cast<T>(d);
            T var = T(0);
            for (std::int64_t j = 0; j < d; ++j) {
                const T c = x[j] - mean;
                var += c * c;
            }
            var /= static_cast<T>(d);
            const T inv_std = T(1) / std::sqrt(var + static_cast<T>(eps));
            for (std::int64_t j = 0; j < d; ++j)
                y[j] = (x[j] - mean) * inv_std * pgm[j] + pb[j];
        }
        return 0;
    });
    return push(std::move(out), {a, gain, bias},
                [d, rows, eps](const OpCtx& c, const Tensor& g) {
                    const Tensor& in = c.in(0);
                    const Tensor& gn = c.in(1);
                    Tensor gx = Tensor::zeros(in.shape(), in.dtype());
                    Tensor gg = Tensor::zeros(gn.shape(), in.dtype());
                    Tensor gb = Tensor::zeros(gn.shape(), in.dtype());
                    with_dtype(in.dtype(), [&](auto z) {
                        using T = decltype(z);
                        const auto px = in.data<T>();
                        const auto pgm = gn.data<T>();
                        const auto pg = g.data<T>();
                        const auto pgx = gx.data<T>();
                        const auto pgg = gg.data<T>();
                        const auto pgb = gb.data<T>();
                        std::vector<T> xhat(static_cast<std::size_t>(d));
                        for (std::int64_t r = 0; r < rows; ++r) {
                            const T* x = px.data() + r * d;
                            const T* go = pg.data() + r * d;
                            T* gxr = pgx.data() + r * d;
                            T mean = T(0);
                            for (std::int64_t j = 0; j < d; ++j) mean += x[j];
                            mean /= static_cast<T>(d);
                            T var = T(0);
                            for (std::int64_t j = 0; j < d; ++j) {
                                const T cdiff = x[j] - mean;
                                var += cdiff * cdiff;
                            }
                            var /= static_cast<T>(d);
                            const T inv_std = T(1) / std::sqrt(var + static_cast<T>(eps));
                            T m1 = T(0), m2 = T(0);
                            for (std::int64_t j = 0; j < d; ++j) {
                                xhat[static_cast<std::size_t>(j)] = (x[j] - mean) * inv_std;
                                const T dxh = go[j] * pgm[j];
                                m1 += dxh;
                                m2 += dxh * xhat[static_cast<std::size_t>(j)];
                            }
                            m1 /= static_cast<T>(d);
                            m2 /= static_cast<T>(d);
                            for (std::int64_t j = 0; j < d; ++j) {
                                const T dxh = go[j] * pgm[j];
                                gxr[j] = (dxh - m1 - xhat[static_cast<std::size_t>(j)] * m2) * inv_std;
                                pgg[j] += go[j] * xhat[static_cast<std::size_t>(j)];
                                pgb[j] += go[j];
                            }
                        }
                        return 0;
                    });
                    return std::vector<Tensor>{std::move(gx), std::move(gg), std::move(gb)};
                },
                "layer_norm");
}

NodeId Tape::cross_entropy_from_logits(NodeId logits, const std::vector<int>& labels) {
    const Tensor& z = value(logits);
    if (z.rank() != 2) {
        throw ShapeError("cross_entropy: logits must be [batch x classes], got " +
                         shape_str(z.shape()));
    }
    const std::int64_t b = z.shape()[0];
    const std::int64_t classes = z.shape()[1];
    if (static_cast<std::int64_t>(labels.size()) != b) {
        throw ShapeError("cross_entropy: " + std::to_string(labels.size()) +
                         " labels for batch " + std::to_string(b));
    }
    for (int y : labels) {
        if (y < 0 || y >= classes) {
            throw InputError("cross_entropy: label " + std::to_string(y) +
                             " outside [0, " + std::to_string(classes) + ")");
        }
    }
    const double loss = with_dtype(z.dtype(), [&](auto zz) {
        using T = decltype(zz);
        const auto p = z.data<T>();
        T acc = T(0);
        for (std::int64_t i = 0; i < b; ++i) {
            const T* row = p.data() + i * classes;
            T mx = row[0];
            for (std::int64_t j = 1; j < classes; ++j) mx = std::max(mx, row[j]);
            T s = T(0);
            for (std::int64_t j = 0; j < classes; ++j) s += std::exp(row[j] - mx);
            acc += (mx + std::log(s)) - row[labels[static_cast<std::size_t>(i)]];
        }
        return static_cast<double>(acc / static_cast<T>(b));
    });
    return push(Tensor::scalar(loss, z.dtype()), {logits},
                [labels, b, classes](const OpCtx& c, const Tensor& g) {
                    const Tensor& z = c.in(0);
                    Tensor gz = Tensor::zeros(z.shape(), z.dtype());
                    with_dtype(z.dtype(), [&](auto zz) {
                        using T = decltype(zz);
                        const auto p = z.data<T>();
                        const auto pg = gz.data<T>();
                        const T gscale = static_cast<T>(g.item()) / static_cast<T>(b);
                        for (std::int64_t i = 0; i < b; ++i) {
                            const T* row = p.data() + i * classes;
                            T* grow = pg.data() + i * classes;
                            T mx = row[0];
                            for (std::int64_t j = 1; j < classes; ++j) mx = std::max(mx, row[j]);
                            T s = T(0);
                            for (std::int64_t j = 0; j < classes; ++j) s += std::exp(row[j] - mx);
                            for (std::int64_t j = 0; j < classes; ++j) {
                                T soft = std::exp(row[j] - mx) / s;
                                if (j == labels[static_cast<std::size_t>(i)]) soft -= T(1);
                                grow[j] = soft * gscale;
                            }
                        }
                        return 0;
                    });
                    return std::vector<Tensor>{std::move(gz)};
                },
                "cross_entropy");
}

NodeId Tape::extract_patches(NodeId x, int patch) {
    const Tensor& in = value(x);
    if (in.rank() != 4) throw ShapeError("extract_patches: need [b,C,H,W], got " + shape_str(in.shape()));
    const std::int64_t b = in.shape()[0], C = in.shape()[1], H = in.shape()[2], W = in.shape()[3];
    if (patch <= 0 || H % patch != 0 || W % patch != 0) {
        throw ShapeError("extract_patches: patch " + std::to_string(patch) +
                         " does not divide " + shape_str(in.shape()));
    }
    const std::int64_t ph = H / patch, pw = W / patch;
    const std::int64_t np = ph * pw, pd = C * patch * patch;
    Tensor out = Tensor::zeros({b, np, pd}, in.dtype());
    with_dtype(in.dtype(), [&](auto z) {
        using T = decltype(z);
        const auto pi = in.data<T>();
        const auto po = out.data<T>();
        for (std::int64_t ib = 0; ib < b; ++ib)
            for (std::int64_t c = 0; c < C; ++c)
                for (std::int64_t y = 0; y < H; ++y)
                    for (std::int64_t xw = 0; xw < W; ++xw) {
                        const std::int64_t p_idx = (y / patch) * pw + (xw / patch);
                        const std::int64_t within = c * patch * patch + (y % patch) * patch + (xw % patch);
                        po[(ib * np + p_idx) * pd + within] = pi[((ib * C + c) * H + y) * W + xw];
                    }
        return 0;
    });
    return push(std::move(out), {x},
                [patch, b, C, H, W, pw, np, pd](const OpCtx&, const Tensor& g) {
                    Tensor gi = Tensor::zeros({b, C, H, W}, g.dtype());
                    with_dtype(g.dtype(), [&](auto z) {
                        using T = decltype(z);
                        const auto pg = g.data<T>();
                        const auto po = gi.data<T>();
                        for (std::int64_t ib = 0; ib < b; ++ib)
                            for (std::int64_t c = 0; c < C; ++c)
                                for (std::int64_t y = 0; y < H; ++y)
                                    for (std::int64_t xw = 0; xw < W; ++xw) {
                                        const std::int64_t p_idx = (y / patch) * pw + (xw / patch);
                                        const std::int64_t within =
                                            c * patch * patch + (y % patch) * patch + (xw % patch);
                                        po[((ib * C + c) * H + y) * W + xw] =
                                            pg[(ib * np + p_idx) * pd + within];
                                    }
                        return 0;
                    });
                    return std::vector<Tensor>{std::move(gi)};
                },
                "extract_patches");
}

NodeId Tape::bilinear_resize(NodeId x, int out_h, int out_w) {
    const Tensor& in = value(x);
    if (in.rank() != 4) throw ShapeError("bilinear_resize: need [b,C,H,W], got " + shape_str(in.shape()));
    if (out_h <= 0 || out_w <= 0) throw ShapeError("bilinear_resize: non-positive output size");
    const std::int64_t b = in.shape()[0], C = in.shape()[1], H = in.shape()[2], W = in.shape()[3];
    // Half-pixel centers; per-axis taps are shared across the batch.
    struct Taps {
        std::vector<std::int64_t> i0, i1;
        std::vector<double> w1;
    };
    const auto make_taps = [](std::int64_t in_n, int out_n) {
        Taps t;
        t.i0.resize(static_cast<std::size_t>(out_n));
        t.i1.resize(static_cast<std::size_t>(out_n));
        t.w1.resize(static_cast<std::size_t>(out_n));
        const double s = static_cast<double>(in_n) / out_n;
        for (int o = 0; o < out_n; ++o) {
            double src = (o + 0.5) * s - 0.5;
            src = std::min(std::max(src, 0.0), static_cast<double>(in_n - 1));
            const auto lo = static_cast<std::int64_t>(std::floor(src));
            t.i0[static_cast<std::size_t>(o)] = lo;
            t.i1[static_cast<std::size_t>(o)] = std::min(lo + 1, in_n - 1);
            t.w1[static_cast<std::size_t>(o)] = src - static_cast<double>(lo);
        }
        return t;
    };
    const Taps ty = make_taps(H, out_h);
    const Taps tx = make_taps(W, out_w);
    Tensor out = Tensor::zeros({b, C, out_h, out_w}, in.dtype());
    with_dtype(in.dtype(), [&](auto z) {
        using T = decltype(z);
        const auto pi = in.data<T>();
        const auto po = out.data<T>();
        for (std::int64_t ib = 0; ib < b * C; ++ib) {
            const T* src = pi.data() + ib * H * W;
            T* dst = po.data() + ib * out_h * out_w;
            for (int oy = 0; oy < out_h; ++oy) {
                const auto y0 = ty.i0[static_cast<std::size_t>(oy)], y1 = ty.i1[static_cast<std::size_t>(oy)];
                const T wy = static_cast<T>(ty.w1[static_cast<std::size_t>(oy)]);
                for (int ox = 0; ox < out_w; ++ox) {
                    const auto x0 = tx.i0[static_cast<std::size_t>(ox)], x1 = tx.i1[static_cast<std::size_t>(ox)];
                    const T wx = static_cast<T>(tx.w1[static_cast<std::size_t>(ox)]);
                    const T top = src[y0 * W + x0] * (T(1) - wx) + src[y0 * W + x1] * wx;
                    const T bot = src[y1 * W + x0] * (T(1) - wx) + src[y1 * W + x1] * wx;
                    dst[oy * out_w + ox] = top * (T(1) - wy) + bot * wy;
                }
            }
        }
        return 0;
    });
    return push(std::move(out), {x},
                [ty, tx, b, C, H, W, out_h, out_w](const OpCtx&, const Tensor& g) {
                    Tensor gi = Tensor::zeros({b, C, H, W}, g.dtype());
                    with_dtype(g.dtype(), [&](auto z) {
                        using T = decltype(z);
                        const auto pg = g.data<T>();
                        const auto po = gi.data<T>();
                        for (std::int64_t ib = 0; ib < b * C; ++ib) {
                            const T* src = pg.data() + ib * out_h * out_w;
                            T* dst = po.data() + ib * H * W;
                            for (int oy = 0; oy < out_h; ++oy) {
                                const auto y0 = ty.i0[static_cast<std::size_t>(oy)],
                                           y1 = ty.i1[static_cast<std::size_t>(oy)];
                                const T wy = static_cast<T>(ty.w1[static_cast<std::size_t>(oy)]);
                                for (int ox = 0; ox < out_w; ++ox) {
                                    const auto x0 = tx.i0[static_cast<std::size_t>(ox)],
                                               x1 = tx.i1[static_cast<std::size_t>(ox)];
                                    const T wx = static_cast<T>(tx.w1[static_cast<std::size_t>(ox)]);
                                    const T gv = src[oy * out_w + ox];
                                    dst[y0 * W + x0] += gv * (T(1) - wy) * (T(1) - wx);
                                    dst[y0 * W + x1] += gv * (T(1) - wy) * wx;
                                    dst[y1 * W + x0] += gv * wy * (T(1) - wx);
                                    dst[y1 * W + x1] += gv * wy * wx;
                                }
                            }
                        }
                        return 0;
                    });
                    return std::vector<Tensor>{std::move(gi)};
                },
                "bilinear_resize");
}

NodeId Tape::linear(NodeId x, NodeId weight, NodeId bias) {
    const Shape xs = value(x).shape();
    const Shape& ws = value(weight).shape();
    if (ws.size() != 2) throw ShapeError("linear: weight must be [out x in], got " + shape_str(ws));
    const std::int64_t in_dim = xs.back();
    if (in_dim != ws[1]) {
        throw ShapeError("linear: input " + shape_str(xs) + " vs weight " + shape_str(ws));
    }
    const NodeId wt = transpose(weight, {1, 0});
    NodeId x2 = x;
    if (xs.size() != 2) x2 = reshape(x, {shape_numel(xs) / in_dim, in_dim});
    const NodeId y2 = add(matmul(x2, wt), bias);
    if (xs.size() == 2) return y2;
    Shape os(xs.begin(), xs.end() - 1);
    os.push_back(ws[0]);
    return reshape(y2, std::move(os));
}

Gradients Tape::backward(NodeId loss) {
    const Tensor& lv = value(loss);
    if (lv.numel() != 1) {
        throw ContractError("backward: loss must be scalar, got shape " + shape_str(lv.shape()));
    }
    Gradients grads(nodes_.size());
    if (!requires_grad(loss)) return grads;
    grads.raw(loss) = Tensor::full(lv.shape(), 1.0, dtype_);
    for (NodeId i = loss; i >= 0; --i) {
        const Node& node = nodes_[static_cast<std::size_t>(i)];
        if (!node.requires_grad || !grads.has(i) || !node.back) continue;
        OpCtx ctx{this, i};
        std::vector<Tensor> gin = node.back(ctx, grads.at(i));
        for (std::size_t k = 0; k < node.inputs.size(); ++k) {
            const NodeId src = node.inputs[k];
            if (!requires_grad(src)) continue;
            auto& slot = grads.raw(src);
            if (!slot) slot = std::move(gin[k]);
            else accumulate_into(*slot, gin[k]);
        }
    }
    return grads;
}

// --- oracles and plain helpers ------------------------------------------------

Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f,
                                  const Tensor& x, double h) {
    if (x.dtype() != Dtype::f64) {
        throw ContractError("finite_difference_gradient requires a 64-bit tensor");
    }
    Tensor grad = Tensor::zeros(x.shape(), Dtype::f64);
    Tensor probe = x;
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        const double v = probe.get_flat(i);
        probe.set_flat(i, v + h);
        const double fp = f(probe);
        probe.set_flat(i, v - h);
        const double fm = f(probe);
        probe.set_flat(i, v);
        grad.set_flat(i, (fp - fm) / (2.0 * h));
    }
    return grad;
}

Tensor tensor_add(const Tensor& a, const Tensor& b) {
    return apply_binary(a, b, "add", [](double x, double y) { return x + y; });
}
Tensor tensor_sub(const Tensor& a, const Tensor& b) {
    return apply_binary(a, b, "sub", [](double x, double y) { return x - y; });
}
Tensor tensor_scale(const Tensor& a, double c) {
    return with_dtype(a.dtype(), [&](auto z) {
        using T = decltype(z);
        const T cc = static_cast<T>(c);
        return apply_unary(a, [&](double v) { return static_cast<double>(static_cast<T>(v) * cc); });
    });
}
Tensor tensor_sign(const Tensor& a) {
    return apply_unary(a, [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}
Tensor tensor_clamp(const Tensor& a, double lo, double hi) {
    return apply_unary(a, [lo, hi](double v) { return std::min(std::max(v, lo), hi); });
}

std::vector<double> per_sample_cross_entropy(const Tensor& logits,
                                             const std::vector<int>& labels) {
    if (logits.rank() != 2) throw ShapeError("per_sample_cross_entropy: logits must be 2-D");
    const std::int64_t b = logits.shape()[0], classes = logits.shape()[1];
    std::vector<double> out(static_cast<std::size_t>(b));
    for (std::int64_t i = 0; i < b; ++i) {
        double mx = logits.get_flat(i * classes);
        for (std::int64_t j = 1; j < classes; ++j)
            mx = std::max(mx, logits.get_flat(i * classes + j));
        double s = 0.0;
        for (std::int64_t j = 0; j < classes; ++j)
            s += std::exp(logits.get_flat(i * classes + j) - mx);
        out[static_cast<std::size_t>(i)] =
            (mx + std::log(s)) - logits.get_flat(i * classes + labels[static_cast<std::size_t>(i)]);
    }
    return out;
}

std::vector<int> argmax_rows(const Tensor& logits) {
    if (logits.rank() != 2) throw ShapeError("argmax_rows: logits must be 2-D");
    const std::int64_t b = logits.shape()[0], classes = logits.shape()[1];
    std::vector<int> out(static_cast<std::size_t>(b));
    for (std::int64_t i = 0; i < b; ++i) {
        int best = 0;
        double bv = logits.get_flat(i * classes);
        for (std::int64_t j = 1; j < classes; ++j) {
            const double v = logits.get_flat(i * classes + j);
            if (v > bv) {  // strict: ties keep the lowest class index
                bv = v;
                best = static_cast<int>(j);
            }
        }
        out[static_cast<std::size_t>(i)] = best;
    }
    return out;
}

}  // namespace rfl
