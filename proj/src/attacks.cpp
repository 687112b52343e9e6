#include "rfl/attacks.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <mutex>
#include <thread>

namespace rfl {

namespace {

// Largest representable h and smallest l such that the working-precision
// differences h - x0 and l - x0, widened to double, stay inside [-eps, eps].
// One-ulp tightening absorbs both the rounding of x0 +/- eps and the rounding
// of the later delta = x_adv - x subtraction, so the ball constraint holds
// exactly against the configured epsilon, not merely within a tolerance.
template <class T>
void exact_ball_bounds(T x0, double eps, T& lo, T& hi) {
    hi = static_cast<T>(static_cast<double>(x0) + eps);
    while (static_cast<double>(static_cast<T>(hi - x0)) > eps) {
        hi = std::nextafter(hi, -std::numeric_limits<T>::infinity());
    }
    lo = static_cast<T>(static_cast<double>(x0) - eps);
    while (static_cast<double>(static_cast<T>(lo - x0)) < -eps) {
        lo = std::nextafter(lo, std::numeric_limits<T>::infinity());
    }
}

template <class T>
void compute_bounds(const Tensor& x, double epsilon, Tensor& lo_t, Tensor& hi_t) {
    const auto px = x.data<T>();
    const auto plo = lo_t.data<T>();
    const auto phi = hi_t.data<T>();
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        T lo, hi;
        exact_ball_bounds<T>(px[i], epsilon, lo, hi);
        plo[i] = std::max(lo, T(0));
        phi[i] = std::min(hi, T(1));
    }
}

template <class T>
void step_and_project(Tensor& x_t, const Tensor& grad, double alpha, const Tensor& lo_t,
                      const Tensor& hi_t) {
    const auto px = x_t.data<T>();
    const auto pg = grad.data<T>();
    const auto plo = lo_t.data<T>();
    const auto phi = hi_t.data<T>();
    const T a = static_cast<T>(alpha);
    for (std::int64_t i = 0; i < x_t.numel(); ++i) {
        const T s = pg[i] > T(0) ? T(1) : (pg[i] < T(0) ? T(-1) : T(0));
        px[i] = std::min(std::max(px[i] + a * s, plo[i]), phi[i]);
    }
}

template <class T>
void random_start_project(Tensor& x_t, const Tensor& x0, double epsilon, RngStream& rng,
                          const Tensor& lo_t, const Tensor& hi_t) {
    const auto px = x_t.data<T>();
    const auto p0 = x0.data<T>();
    const auto plo = lo_t.data<T>();
    const auto phi = hi_t.data<T>();
    for (std::int64_t i = 0; i < x_t.numel(); ++i) {
        const T noise = static_cast<T>(rng.uniform(-epsilon, epsilon));
        px[i] = std::min(std::max(p0[i] + noise, plo[i]), phi[i]);
    }
}

Tensor input_gradient(const Model& model, const Tensor& x_t, const std::vector<int>& y) {
    Tape tape(model.dtype);
    ForwardOptions opts;
    opts.input_requires_grad = true;
    opts.strict_range = false;  // iterates stay in range by construction
    const ForwardBuild fb = model_forward(tape, model, x_t, opts);
    const NodeId loss = tape.cross_entropy_from_logits(fb.logits, y);
    Gradients grads = tape.backward(loss);
    return grads.at(fb.input);
}

// Deterministic chunked parallel map: worker w handles every
// (threads)-strided chunk, results land in caller-indexed slots.
void parallel_chunks(std::int64_t count, int threads, const std::function<void(std::int64_t)>& fn) {
    if (threads <= 1 || count <= 1) {
        for (std::int64_t i = 0; i < count; ++i) fn(i);
        return;
    }
    const int workers = static_cast<int>(std::min<std::int64_t>(threads, count));
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    std::exception_ptr first_error;
    std::mutex error_mutex;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::int64_t i = w; i < count; i += workers) fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace

void AttackConfig::validate() const {
    if (epsilon < 0.0) throw ConfigError("attack: epsilon must be >= 0");
    if (kind == Kind::pgd && !(alpha > 0.0)) throw ConfigError("attack: alpha must be > 0");
    if (steps < 1) throw ConfigError("attack: steps must be >= 1");
}

AttackResult pgd_linf(const Model& model, const Tensor& x, const std::vector<int>& y,
                      const AttackConfig& cfg, RngStream& rng) {
    cfg.validate();
    if (x.dtype() != model.dtype) {
        throw ContractError("pgd_linf: input precision differs from model precision");
    }
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        const double v = x.get_flat(i);
        if (!(v >= 0.0 && v <= 1.0)) {
            throw InputError("pgd_linf: clean input pixel outside [0,1]");
        }
    }
    Tensor lo = Tensor::zeros(x.shape(), x.dtype());
    Tensor hi = Tensor::zeros(x.shape(), x.dtype());
    Tensor x_t = x;
    with_dtype(x.dtype(), [&](auto z) {
        using T = decltype(z);
        compute_bounds<T>(x, cfg.epsilon, lo, hi);
        if (cfg.random_start) random_start_project<T>(x_t, x, cfg.epsilon, rng, lo, hi);
        return 0;
    });
    for (int step = 0; step < cfg.steps; ++step) {
        const Tensor grad = input_gradient(model, x_t, y);
        with_dtype(x.dtype(), [&](auto z) {
            using T = decltype(z);
            step_and_project<T>(x_t, grad, cfg.alpha, lo, hi);
            return 0;
        });
    }
    AttackResult result;
    result.x_adv = x_t;
    result.delta = tensor_sub(x_t, x);
    const Tensor logits = model_logits(model, x_t, /*strict_range=*/false);
    result.adv_loss = per_sample_cross_entropy(logits, y);
    const std::vector<int> preds = argmax_rows(logits);
    result.success.resize(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        result.success[i] = preds[i] != y[i] ? 1 : 0;
    }
    return result;
}

AttackResult fgsm(const Model& model, const Tensor& x, const std::vector<int>& y,
                  double epsilon) {
    AttackConfig cfg;
    cfg.kind = AttackConfig::Kind::fgsm;
    cfg.epsilon = epsilon;
    cfg.alpha = epsilon > 0.0 ? epsilon : 1.0;  // alpha unused when epsilon is 0
    cfg.steps = 1;
    cfg.random_start = false;
    RngStream unused(0);
    return pgd_linf(model, x, y, cfg, unused);
}

double clean_accuracy(const Model& model, const Dataset& ds, int batch_size, int threads) {
    if (ds.size() == 0) throw InputError("clean_accuracy: empty dataset");
    const std::int64_t n = ds.size();
    const std::int64_t batches = (n + batch_size - 1) / batch_size;
    std::vector<std::int64_t> correct(static_cast<std::size_t>(batches), 0);
    std::vector<std::uint32_t> order(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = static_cast<std::uint32_t>(i);
    parallel_chunks(batches, threads, [&](std::int64_t bi) {
        const std::int64_t begin = bi * batch_size;
        const std::int64_t count = std::min<std::int64_t>(batch_size, n - begin);
        Tensor images;
        std::vector<int> labels;
        gather_batch(ds, order.data() + begin, count, images, labels, model.dtype);
        const std::vector<int> preds = argmax_rows(model_logits(model, images));
        std::int64_t c = 0;
        for (std::size_t i = 0; i < labels.size(); ++i) c += preds[i] == labels[i];
        correct[static_cast<std::size_t>(bi)] = c;
    });
    std::int64_t total = 0;
    for (const std::int64_t c : correct) total += c;  // fixed (batch) order
    return static_cast<double>(total) / static_cast<double>(n);
}

AttackEvaluation evaluate_under_attack(const Model& model, const Dataset& ds,
                                       const AttackConfig& cfg, const RngStream& rng,
                                       int batch_size, int threads) {
    if (ds.size() == 0) throw InputError("robust_accuracy: empty dataset");
    cfg.validate();
    const std::int64_t n = ds.size();
    const std::int64_t batches = (n + batch_size - 1) / batch_size;
    RngStream attack_stream = rng.substream(cfg.seed_label);
    std::vector<std::int64_t> correct(static_cast<std::size_t>(batches), 0);
    std::vector<double> loss_sum(static_cast<std::size_t>(batches), 0.0);
    std::vector<std::uint32_t> order(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = static_cast<std::uint32_t>(i);
    parallel_chunks(batches, threads, [&](std::int64_t bi) {
        const std::int64_t begin = bi * batch_size;
        const std::int64_t count = std::min<std::int64_t>(batch_size, n - begin);
        Tensor images;
        std::vector<int> labels;
        gather_batch(ds, order.data() + begin, count, images, labels, model.dtype);
        RngStream batch_rng = attack_stream.substream("batch-" + std::to_string(bi));
        const AttackResult res = pgd_linf(model, images, labels, cfg, batch_rng);
        std::int64_t c = 0;
        double ls = 0.0;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            c += res.success[i] ? 0 : 1;
            ls += res.adv_loss[i];
        }
        correct[static_cast<std::size_t>(bi)] = c;
        loss_sum[static_cast<std::size_t>(bi)] = ls;
    });
    std::int64_t total = 0;
    double loss = 0.0;
    for (std::int64_t bi = 0; bi < batches; ++bi) {  // merge in dataset order
        total += correct[static_cast<std::size_t>(bi)];
        loss += loss_sum[static_cast<std::size_t>(bi)];
    }
    return AttackEvaluation{static_cast<double>(total) / static_cast<double>(n),
                            loss / static_cast<double>(n)};
}

double robust_accuracy(const Model& model, const Dataset& ds, const AttackConfig& cfg,
                       const RngStream& rng, int batch_size, int threads) {
    return evaluate_under_attack(model, ds, cfg, rng, batch_size, threads).robust_acc;
}

double mean_cross_entropy(const Model& model, const Tensor& x, const std::vector<int>& y) {
    const std::vector<double> losses =
        per_sample_cross_entropy(model_logits(model, x, /*strict_range=*/false), y);
    double s = 0.0;
    for (const double v : losses) s += v;
    return s / static_cast<double>(losses.size());
}

}  // namespace rfl
