#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rfl/data_io.hpp"
#include "rfl/model.hpp"
#include "rfl/rng.hpp"
#include "rfl/tensor.hpp"

namespace rfl {

/// L-infinity attack description. Epsilon and alpha are in pixel units
/// (inputs live in [0,1]).
struct AttackConfig {
    enum class Kind { fgsm, pgd };
    Kind kind = Kind::pgd;
    double epsilon = 8.0 / 255.0;
    double alpha = 2.0 / 255.0;
    int steps = 7;
    bool random_start = true;
    std::string seed_label = "attack";

    void validate() const;  // throws ConfigError
};

struct AttackResult {
    Tensor x_adv;                        // in [0,1], within the epsilon ball of x
    Tensor delta;                        // x_adv - x
    std::vector<double> adv_loss;        // per-sample cross entropy at x_adv
    std::vector<std::uint8_t> success;   // prediction != label
};

/// Projected sign-gradient ascent on the cross entropy. Every iterate is
/// projected first onto the epsilon ball around the clean input and then onto
/// the pixel range; per-coordinate bounds are pre-tightened by one-ulp steps
/// so that both ||x_adv - x||_inf <= eps and x_adv in [0,1] hold exactly in
/// the working precision, not merely within a tolerance.
/// Gradients flow through the full model, input transform included.
AttackResult pgd_linf(const Model& model, const Tensor& x, const std::vector<int>& y,
                      const AttackConfig& cfg, RngStream& rng);

/// Single sign-gradient step of size epsilon: identical to pgd_linf with
/// (steps=1, alpha=epsilon, random_start=false).
AttackResult fgsm(const Model& model, const Tensor& x, const std::vector<int>& y,
                  double epsilon);

double clean_accuracy(const Model& model, const Dataset& ds, int batch_size = 64,
                      int threads = 1);

struct AttackEvaluation {
    double robust_acc = 0.0;
    double mean_adv_loss = 0.0;
};

/// Fraction of samples still classified correctly under the attack
/// (argmax ties resolved toward the lowest class index). Deterministic given
/// the stream: batch i draws from substream "batch-i" of the attack stream.
AttackEvaluation evaluate_under_attack(const Model& model, const Dataset& ds,
                                       const AttackConfig& cfg, const RngStream& rng,
                                       int batch_size = 64, int threads = 1);

double robust_accuracy(const Model& model, const Dataset& ds, const AttackConfig& cfg,
                       const RngStream& rng, int batch_size = 64, int threads = 1);

double mean_cross_entropy(const Model& model, const Tensor& x, const std::vector<int>& y);

}  // namespace rfl
