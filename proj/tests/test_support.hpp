#pragma once

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "rfl/model.hpp"
#include "rfl/rng.hpp"
#include "rfl/tensor.hpp"

namespace rfl::testing {

inline Tensor rand_tensor(const Shape& shape, RngStream& rng, double lo = -1.0,
                          double hi = 1.0, Dtype dt = Dtype::f64) {
    Tensor t = Tensor::zeros(shape, dt);
    for (std::int64_t i = 0; i < t.numel(); ++i) t.set_flat(i, rng.uniform(lo, hi));
    return t;
}

// Keep random inputs away from relu/clamp/sign kinks so central differences
// stay valid.
inline Tensor rand_tensor_away_from(const Shape& shape, RngStream& rng,
                                    const std::vector<double>& kinks, double margin,
                                    double lo = -1.0, double hi = 1.0) {
    Tensor t = Tensor::zeros(shape, Dtype::f64);
    for (std::int64_t i = 0; i < t.numel(); ++i) {
        double v;
        bool ok;
        do {
            v = rng.uniform(lo, hi);
            ok = true;
            for (const double k : kinks) ok = ok && std::abs(v - k) > margin;
        } while (!ok);
        t.set_flat(i, v);
    }
    return t;
}

using GraphBuilder = std::function<NodeId(Tape&, const std::vector<NodeId>&)>;

struct GradCheckReport {
    double max_err = 0.0;   // worst |ad - fd| / max(1, |fd|)
    std::int64_t coords = 0;
};

// Reverse-mode vs central differences on every input, probing through a fixed
// random linear functional of the op output.
inline GradCheckReport check_gradients(const GraphBuilder& build,
                                       const std::vector<Tensor>& inputs,
                                       RngStream& rng, double h = 1e-5) {
    Tape probe_tape(Dtype::f64);
    std::vector<NodeId> probe_ids;
    for (const Tensor& in : inputs) probe_ids.push_back(probe_tape.leaf(in, false));
    const NodeId probe_out = build(probe_tape, probe_ids);
    const Tensor weights =
        rand_tensor(probe_tape.value(probe_out).shape(), rng, -1.0, 1.0, Dtype::f64);

    const auto loss_with = [&](const std::vector<Tensor>& xs) {
        Tape t(Dtype::f64);
        std::vector<NodeId> ids;
        for (const Tensor& x : xs) ids.push_back(t.leaf(x, false));
        const NodeId out = build(t, ids);
        const NodeId w = t.leaf(weights, false);
        return t.value(t.sum_all(t.mul(out, w))).item();
    };

    Tape tape(Dtype::f64);
    std::vector<NodeId> ids;
    for (const Tensor& in : inputs) ids.push_back(tape.leaf(in, true));
    const NodeId out = build(tape, ids);
    const NodeId w = tape.leaf(weights, false);
    const NodeId loss = tape.sum_all(tape.mul(out, w));
    Gradients grads = tape.backward(loss);

    GradCheckReport report;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        std::vector<Tensor> xs = inputs;
        const Tensor fd = finite_difference_gradient(
            [&](const Tensor& x) {
                xs[k] = x;
                return loss_with(xs);
            },
            inputs[k], h);
        xs = inputs;
        const Tensor& ad = grads.at(ids[k]);
        for (std::int64_t i = 0; i < fd.numel(); ++i) {
            const double a = ad.get_flat(i), b = fd.get_flat(i);
            report.max_err = std::max(report.max_err,
                                      std::abs(a - b) / std::max(1.0, std::abs(b)));
            ++report.coords;
        }
    }
    return report;
}

inline std::string temp_dir(const std::string& tag) {
    const auto dir =
        std::filesystem::temp_directory_path() / ("rfl-test-" + tag + "-" +
                                                  std::to_string(::getpid()));
    std::filesystem::create_directories(dir);
    return dir.string();
}

inline ViTConfig micro_vit(int classes = 3) {
    ViTConfig cfg;
    cfg.image_side = 14;
    cfg.channels = 1;
    cfg.patch = 7;
    cfg.depth = 2;
    cfg.width = 16;
    cfg.heads = 2;
    cfg.mlp_ratio = 2;
    cfg.classes = classes;
    return cfg;
}

}  // namespace rfl::testing
