#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rfl/attacks.hpp"
#include "rfl/data_io.hpp"
#include "rfl/model.hpp"
#include "rfl/tensor.hpp"

namespace rfl {

/// Decoupled-weight-decay adaptive-moment optimizer settings. The batch-size
/// learning-rate scaling (base_lr * b / 256) is applied exactly once, when the
/// Optimizer is constructed.
struct OptimizerConfig {
    double base_lr = 0.01;
    double weight_decay = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int batch_size = 32;
};

struct ScheduleConfig {
    int total_steps = 1;
    int warmup_steps = 0;  // default constructors use 10% of total

    static ScheduleConfig with_warmup_fraction(int total, double fraction);
    void validate() const;  // 0 <= warmup < total
};

// lr * t/T_w during warmup, then the half-cosine from lr down to 0.
double cosine_warmup_lr(int t, const ScheduleConfig& schedule, double lr);

class Optimizer {
public:
    explicit Optimizer(const OptimizerConfig& cfg);

    double effective_lr() const { return lr_; }
    int step_count() const { return t_; }

    // One update over the given gradients; weight decay touches only roles
    // weight / head-weight / lora-A / lora-B / adapter-down / adapter-up.
    void step(ParameterStore& params, const std::map<std::string, Tensor>& grads,
              double lr_t);

private:
    OptimizerConfig cfg_;
    double lr_;
    int t_ = 0;
    std::map<std::string, std::pair<Tensor, Tensor>> state_;  // first/second moments
};

struct EpochContext {
    Optimizer& optimizer;
    ScheduleConfig schedule;
    RngStream& shuffle_rng;
    RngStream& attack_rng;
    int batch_size = 32;
    int global_step = 0;  // steps already taken; advanced by the epoch
    double grad_clip = 0.0;
};

/// One pass of the outer minimization: per batch, craft adversarial examples
/// with the full model (frozen and tunable parts), then update only the
/// tunable parameters on the adversarial loss. Returns the mean training loss.
double adversarial_epoch(Model& model, const Dataset& train, const AttackConfig& attack,
                         EpochContext& ctx);

/// Same pass with delta = 0; bitwise-identical to adversarial_epoch at
/// epsilon 0 under the same seeds.
double standard_epoch(Model& model, const Dataset& train, EpochContext& ctx);

struct EpochStats {
    double train_loss = 0.0;
    double val_clean_acc = 0.0;
    double val_robust_acc = 0.0;
    double val_adv_loss = 0.0;
    double seconds = 0.0;
};

struct RunRecord {
    std::vector<EpochStats> epochs;
    int selected_epoch = 0;  // 1-based; argmax val robust accuracy, earliest tie
    double test_clean_acc = -1.0;
    double test_robust_acc = -1.0;
};

int early_stop_select(const RunRecord& record);

struct TrainLoopConfig {
    int epochs = 20;
    OptimizerConfig optim;
    std::optional<AttackConfig> train_attack;  // nullopt: standard finetuning
    AttackConfig eval_attack;                  // validation robustness metric
    double warmup_fraction = 0.1;
    std::uint64_t seed = 0;
    int eval_batch_size = 64;
    int threads = 1;
    double grad_clip = 0.0;
    // Early stopping restores the selected epoch's weights; pretraining turns
    // this off and keeps the final epoch.
    bool restore_best = true;
};

/// Full training run with per-epoch validation and early stopping: the model
/// is left at the weights of the selected (best validation robustness) epoch.
RunRecord train_loop(Model& model, const Dataset& train, const Dataset& val,
                     const TrainLoopConfig& cfg);

struct GridCell {
    double lr = 0.0;
    double wd = 0.0;
    RunRecord record;
};

struct GridResult {
    double best_lr = 0.0;
    double best_wd = 0.0;
    std::size_t best_index = 0;
    std::vector<GridCell> cells;
    Model best_model;
};

/// Exhaustive (lr x wd) search; each cell trains a fresh model from
/// make_model() under identical seeds. Winner: highest early-stopped
/// validation robust accuracy, earliest cell on ties. Cells may run in
/// parallel worker threads; results are merged in cell order.
GridResult grid_search(const std::function<Model()>& make_model, const Dataset& train,
                       const Dataset& val, const TrainLoopConfig& base,
                       const std::vector<double>& lr_grid,
                       const std::vector<double>& wd_grid, int cell_threads = 1);

}  // namespace rfl
