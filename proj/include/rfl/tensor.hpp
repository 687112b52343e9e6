#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rfl/errors.hpp"

namespace rfl {

enum class Dtype { f32, f64 };

using Shape = std::vector<std::int64_t>;

std::string shape_str(const Shape& s);
std::int64_t shape_numel(const Shape& s);

/// Dense row-major tensor. Precision is fixed per tensor: f32 for training,
/// f64 for gradient-check mode. Value semantics; copies are deep.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, Dtype dt = Dtype::f32);
    static Tensor full(Shape shape, double value, Dtype dt = Dtype::f32);
    static Tensor from_values(Shape shape, const std::vector<double>& values,
                              Dtype dt = Dtype::f32);
    static Tensor scalar(double value, Dtype dt = Dtype::f32);

    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    std::int64_t numel() const;
    Dtype dtype() const { return dtype_; }
    bool defined() const { return !shape_.empty() || !f32_.empty() || !f64_.empty(); }

    template <class T>
    std::span<T> data();
    template <class T>
    std::span<const T> data() const;

    // dtype-generic element access (widened to double); used by init, I/O and
    // tests, not by hot kernels.
    double get_flat(std::int64_t i) const;
    void set_flat(std::int64_t i, double v);
    double item() const;  // scalar tensors only

    Tensor astype(Dtype dt) const;
    Tensor reshaped(Shape shape) const;

    bool all_finite() const;
    // Exact elementwise equality (== on values; -0 equals +0).
    bool same_values(const Tensor& other) const;
    double max_abs_diff(const Tensor& other) const;

private:
    Shape shape_;
    Dtype dtype_ = Dtype::f32;
    std::vector<float> f32_;
    std::vector<double> f64_;
};

template <> std::span<float> Tensor::data<float>();
template <> std::span<double> Tensor::data<double>();
template <> std::span<const float> Tensor::data<float>() const;
template <> std::span<const double> Tensor::data<double>() const;

template <class F>
decltype(auto) with_dtype(Dtype dt, F&& f) {
    return dt == Dtype::f64 ? f(double{}) : f(float{});
}

using NodeId = std::int32_t;

/// Gradients produced by Tape::backward, keyed by node id.
class Gradients {
public:
    explicit Gradients(std::size_t n) : by_id_(n) {}
    bool has(NodeId id) const { return by_id_[static_cast<std::size_t>(id)].has_value(); }
    const Tensor& at(NodeId id) const;
    Tensor& slot(NodeId id) { return by_id_[static_cast<std::size_t>(id)].emplace(); }
    std::optional<Tensor>& raw(NodeId id) { return by_id_[static_cast<std::size_t>(id)]; }

private:
    std::vector<std::optional<Tensor>> by_id_;
};

/// Recording tape for reverse-mode differentiation. Nodes are appended in
/// topological order (inputs always precede consumers); backward walks the
/// records once in reverse, accumulating fan-out gradients additively.
/// A tape is single-owner: not copyable, not movable.
class Tape {
public:
    explicit Tape(Dtype dt = Dtype::f32) : dtype_(dt) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Dtype dtype() const { return dtype_; }
    std::size_t size() const { return nodes_.size(); }

    NodeId leaf(Tensor value, bool requires_grad);
    const Tensor& value(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    bool requires_grad(NodeId id) const {
        return nodes_[static_cast<std::size_t>(id)].requires_grad;
    }

    // --- recorded operations -------------------------------------------
    NodeId add(NodeId a, NodeId b);
    NodeId sub(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    NodeId scale(NodeId a, double c);
    NodeId relu(NodeId a);
    NodeId gelu(NodeId a);  // tanh approximation
    NodeId sign(NodeId a);  // zero gradient
    NodeId clamp(NodeId a, double lo, double hi);
    NodeId matmul(NodeId a, NodeId b);  // 2-D, or batched with equal leading dims
    NodeId transpose(NodeId a, std::vector<int> perm);
    NodeId reshape(NodeId a, Shape shape);
    NodeId slice(NodeId a, int axis, std::int64_t start, std::int64_t len);
    NodeId concat(const std::vector<NodeId>& parts, int axis);
    NodeId broadcast_to(NodeId a, Shape shape);
    NodeId sum_all(NodeId a);
    NodeId softmax(NodeId a, int axis);
    NodeId layer_norm(NodeId a, NodeId gain, NodeId bias, double eps = 1e-5);
    NodeId cross_entropy_from_logits(NodeId logits, const std::vector<int>& labels);
    // [b,C,H,W] -> [b, (H/p)*(W/p), C*p*p]; requires p | H and p | W.
    NodeId extract_patches(NodeId x, int patch);
    // Differentiable bilinear resize, half-pixel centers. [b,C,H,W] -> [b,C,oh,ow].
    NodeId bilinear_resize(NodeId x, int out_h, int out_w);

    // y = x . W^T + b  with x [..., in], W [out, in], b [out].
    NodeId linear(NodeId x, NodeId weight, NodeId bias);

    Gradients backward(NodeId loss);

private:
    struct OpCtx;
    using BackFn = std::function<std::vector<Tensor>(const OpCtx&, const Tensor& g)>;

    struct Node {
        Tensor value;
        bool requires_grad = false;
        std::vector<NodeId> inputs;
        BackFn back;  // empty for leaves and non-differentiable ops
        const char* op = "leaf";
    };

    struct OpCtx {
        const Tape* tape;
        NodeId out;
        const Tensor& in(int k) const;
        const Tensor& out_value() const;
    };

    NodeId push(Tensor value, std::vector<NodeId> inputs, BackFn back, const char* op);

    Dtype dtype_;
    std::vector<Node> nodes_;
};

// Central-difference gradient oracle: (f(x + h e_i) - f(x - h e_i)) / 2h.
// Test-side only; requires a 64-bit tensor.
Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f,
                                  const Tensor& x, double h);

// --- plain (untaped) tensor helpers used by attack iteration and metrics ---
Tensor tensor_add(const Tensor& a, const Tensor& b);
Tensor tensor_sub(const Tensor& a, const Tensor& b);
Tensor tensor_scale(const Tensor& a, double c);
Tensor tensor_sign(const Tensor& a);
Tensor tensor_clamp(const Tensor& a, double lo, double hi);
// Per-row softmax cross-entropy pieces for [b, C] logits (no tape).
std::vector<double> per_sample_cross_entropy(const Tensor& logits,
                                             const std::vector<int>& labels);
std::vector<int> argmax_rows(const Tensor& logits);  // ties -> lowest index

}  // namespace rfl
