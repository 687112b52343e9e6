#pragma once

#include <optional>
#include <string>
#include <vector>

#include "rfl/attacks.hpp"
#include "rfl/data_io.hpp"
#include "rfl/model.hpp"
#include "rfl/strategy.hpp"
#include "rfl/trainer.hpp"

namespace rfl {

/// Everything a run needs, mirroring the config-file sections.
struct ExperimentConfig {
    // [data]
    std::string dataset = "synthetic";  // synthetic | idx | cifar10
    int synth_side = 28;
    int per_class_train = 150;
    int per_class_val = 30;
    int per_class_test = 60;
    int source_lo = 0, source_hi = 4;
    int target_lo = 5, target_hi = 9;
    std::string idx_images, idx_labels;
    std::vector<std::string> cifar_batches;
    int split_train_per_class = -1;
    int split_val_per_class = 3;
    bool official_split = false;

    // [model]
    Arch arch = Arch::vit;
    ViTConfig vit{28, 1, 7, 2, 32, 4, 4, 10};
    std::vector<int> mlp_widths{784, 128};
    InputTransform transform;

    // [strategy]
    Strategy strategy;
    HeadInit head_init;

    // [attack.train] / [attack.eval]
    AttackConfig train_attack;
    AttackConfig eval_attack;

    // [optim]
    OptimizerConfig optim;

    // [schedule]
    int epochs = 20;
    double warmup_fraction = 0.1;

    // [pipeline]
    bool pretrain_adversarial = true;
    bool finetune_adversarial = true;
    AttackConfig pretrain_attack;
    int pretrain_epochs = 10;
    int probe_epochs = 8;
    double probe_base_lr = 0.5;
    double probe_weight_decay = 0.0;
    double regli_l2 = 1e-4;
    std::vector<double> grid_lr, grid_wd;
    std::string out_dir = "runs";
    std::uint64_t seed = 12345;
    int threads = 1;

    ExperimentConfig();
    int source_classes() const { return source_hi - source_lo + 1; }
    int target_classes() const { return target_hi - target_lo + 1; }
};

struct TaskData {
    Dataset train, val, test;
};

/// Source task (pretraining label subset) or target task (disjoint subset).
TaskData load_task(const ExperimentConfig& cfg, bool source);

/// Per-run clean/robust accuracies plus the derived transfer quantities when
/// the paired runs exist.
struct MetricsRecord {
    double clean_acc = 0.0;
    double robust_acc = 0.0;
    std::optional<double> acc_t_std;
    std::optional<double> rob_t_adv;
    std::optional<double> pearson_r;
    double seconds = 0.0;
};

struct StageResult {
    std::string checkpoint;
    RunRecord record;
    MetricsRecord metrics;  // on the task test split
};

// Desk-scale pretraining of the backbone on the source task, standard or
// adversarial per the config. The checkpoint keeps the final epoch's weights;
// the arm tag lands in the file name and the metrics CSV.
StageResult pretrain(const ExperimentConfig& cfg, const std::string& run_id);

// Head-only training on the frozen backbone (standard or adversarial).
StageResult linear_probe(const ExperimentConfig& cfg, const std::string& backbone_ckpt,
                         bool adversarial, const std::string& run_id);

struct RoliResult {
    StageResult probe;     // stage 1: adversarial linear probe
    StageResult finetune;  // stage 2: adversarial finetuning from that probe
};

// Two-stage run: adversarial linear probe, then strategy attachment with the
// probe head and zeroed modules, then adversarial finetuning. Verifies that
// the stage-2 model starts at the probe's function.
RoliResult roli_run(const ExperimentConfig& cfg, const std::string& backbone_ckpt,
                    const std::string& run_id);

// Single finetuning run dispatched on cfg.head_init.scheme (runs any needed
// initialization stage first when no source checkpoint is given).
StageResult finetune_run(const ExperimentConfig& cfg, const std::string& backbone_ckpt,
                         const std::string& run_id);

// Multinomial logistic regression on cached frozen features (full-batch
// gradient descent, L2 penalty, gradient-norm 1e-6 or 10k iterations).
// Returns the checkpoint path of backbone + fitted head.
std::string regli_fit(const ExperimentConfig& cfg, const std::string& backbone_ckpt,
                      double l2, const std::string& out_path);

// (acc(LP_std) - acc(FT_std)) / acc(FT_std); accuracies as fractions or
// percentages (the ratio is scale-invariant).
double transferred_accuracy(double acc_lp_std, double acc_ft_std);
// (rob(LP_adv) - rob(FT_adv)) / rob(FT_adv).
double transferred_robustness(double rob_lp_adv, double rob_ft_adv);

double pearson(const std::vector<double>& xs, const std::vector<double>& ys);

struct RunPair {
    double acc_std = 0.0;
    double rob_adv = 0.0;
};

struct TransferPoint {
    double acc_t = 0.0;
    double rob_t = 0.0;
};

struct PairwiseResult {
    std::vector<TransferPoint> points;  // |ft| x |lp| cross products
    double pearson_r = 0.0;
};

PairwiseResult pairwise_transfer_metrics(const std::vector<RunPair>& ft_pairs,
                                         const std::vector<RunPair>& lp_pairs);

// Per image: input-gradient of the loss, channel-averaged, normalized by the
// per-image max magnitude, written as 8-bit PGM (mid-gray when the gradient
// vanishes). Returns the written paths.
std::vector<std::string> gradviz(const Model& model, const Tensor& images,
                                 const std::vector<int>& labels,
                                 const std::string& out_dir);

struct SpeedRow {
    std::string scheme;
    double wall_seconds = 0.0;
    double robust_acc = 0.0;
    double clean_acc = 0.0;
};

// RanLI / RegLI / StdLI / RoLI initialization, each followed by the same
// adversarial finetune; rows sorted by wall-clock seconds ascending.
std::vector<SpeedRow> speed_report(const ExperimentConfig& cfg,
                                   const std::string& backbone_ckpt,
                                   const std::string& out_csv);

void write_scatter_svg(const std::string& path, const std::vector<TransferPoint>& points,
                       const std::string& x_label, const std::string& y_label,
                       std::optional<double> pearson_r);

}  // namespace rfl
