#include "rfl/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "rfl/peft.hpp"

namespace rfl {

namespace fs = std::filesystem;

namespace {

double now_seconds() {
    return std::chrono::duration<double>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

std::string run_dir(const ExperimentConfig& cfg, const std::string& run_id) {
    const fs::path dir = fs::path(cfg.out_dir) / run_id;
    fs::create_directories(dir);
    return dir.string();
}

Model build_backbone(const ExperimentConfig& cfg, int classes, RngStream& rng) {
    if (cfg.arch == Arch::vit) {
        ViTConfig vc = cfg.vit;
        vc.classes = classes;
        return build_tiny_vit(vc, cfg.transform, rng);
    }
    return build_mlp(cfg.mlp_widths, classes, cfg.transform, rng);
}

// Epoch rows + final test rows. Metric rows carry seconds=0 so identical runs
// write byte-identical CSVs; wall-clock lives in the speed report.
void log_stage(const ExperimentConfig& cfg, const std::string& run_id,
               const std::string& stage, const RunRecord& record,
               const MetricsRecord& metrics) {
    std::vector<MetricsRow> rows;
    for (std::size_t e = 0; e < record.epochs.size(); ++e) {
        const EpochStats& s = record.epochs[e];
        const int epoch = static_cast<int>(e) + 1;
        rows.push_back({run_id, stage, epoch, "train", "loss", s.train_loss, 0.0});
        rows.push_back({run_id, stage, epoch, "val", "clean_acc", s.val_clean_acc, 0.0});
        rows.push_back({run_id, stage, epoch, "val", "robust_acc", s.val_robust_acc, 0.0});
        rows.push_back({run_id, stage, epoch, "val", "adv_loss", s.val_adv_loss, 0.0});
    }
    rows.push_back({run_id, stage, record.selected_epoch, "test", "clean_acc",
                    metrics.clean_acc, 0.0});
    rows.push_back({run_id, stage, record.selected_epoch, "test", "robust_acc",
                    metrics.robust_acc, 0.0});
    write_metrics_csv(rows, run_dir(cfg, run_id) + "/metrics.csv");
}

MetricsRecord evaluate_test(const ExperimentConfig& cfg, const Model& model,
                            const Dataset& test) {
    MetricsRecord m;
    m.clean_acc = clean_accuracy(model, test, 64, cfg.threads);
    m.robust_acc = robust_accuracy(model, test, cfg.eval_attack, RngStream(cfg.seed), 64,
                                   cfg.threads);
    return m;
}

TrainLoopConfig make_loop_config(const ExperimentConfig& cfg, int epochs,
                                 std::optional<AttackConfig> train_attack) {
    TrainLoopConfig lc;
    lc.epochs = epochs;
    lc.optim = cfg.optim;
    lc.train_attack = std::move(train_attack);
    lc.eval_attack = cfg.eval_attack;
    lc.warmup_fraction = cfg.warmup_fraction;
    lc.seed = cfg.seed;
    lc.threads = cfg.threads;
    return lc;
}

}  // namespace

ExperimentConfig::ExperimentConfig() {
    train_attack.steps = 7;
    train_attack.random_start = true;
    eval_attack.steps = 10;
    eval_attack.random_start = false;
    eval_attack.seed_label = "eval-attack";
    pretrain_attack.epsilon = 4.0 / 255.0;
    pretrain_attack.alpha = 2.0 * (4.0 / 255.0) / 3.0;
    pretrain_attack.steps = 3;
    pretrain_attack.random_start = true;
    optim.base_lr = 0.01;
    optim.batch_size = 32;
}

TaskData load_task(const ExperimentConfig& cfg, bool source) {
    const int lo = source ? cfg.source_lo : cfg.target_lo;
    const int hi = source ? cfg.source_hi : cfg.target_hi;
    RngStream rng(cfg.seed);
    if (cfg.dataset == "synthetic") {
        const int per_class = cfg.per_class_train + cfg.per_class_val + cfg.per_class_test;
        Dataset pool = make_synthetic_digits(
            lo, hi, per_class, cfg.synth_side,
            rng.substream(source ? "data-source" : "data-target"));
        SplitSpec spec;
        spec.train_per_class = cfg.per_class_train;
        spec.val_per_class = cfg.per_class_val;
        Splits s = split(pool, spec, rng);
        return TaskData{std::move(s.train), std::move(s.val), std::move(s.test)};
    }
    Dataset full;
    if (cfg.dataset == "idx") {
        full = load_idx(cfg.idx_images, cfg.idx_labels);
    } else if (cfg.dataset == "cifar10") {
        full = load_cifar10_bin(cfg.cifar_batches);
    } else {
        throw ConfigError("unknown dataset id: " + cfg.dataset);
    }
    Dataset task = filter_classes(full, lo, hi);
    SplitSpec spec;
    spec.train_per_class = cfg.split_train_per_class;
    spec.val_per_class = cfg.split_val_per_class;
    spec.official = cfg.official_split;
    Splits s = split(task, spec, rng);
    return TaskData{std::move(s.train), std::move(s.val), std::move(s.test)};
}

StageResult pretrain(const ExperimentConfig& cfg, const std::string& run_id) {
    const TaskData data = load_task(cfg, /*source=*/true);
    RngStream rng(cfg.seed);
    Model model = build_backbone(cfg, cfg.source_classes(), rng);
    attach(model, Strategy{StrategyKind::full_ft}, HeadInit{}, rng);

    TrainLoopConfig lc = make_loop_config(
        cfg, cfg.pretrain_epochs,
        cfg.pretrain_adversarial ? std::optional<AttackConfig>(cfg.pretrain_attack)
                                 : std::nullopt);
    // Pretraining keeps the final epoch; early stopping is a finetuning tool.
    lc.restore_best = false;
    RunRecord record = train_loop(model, data.train, data.val, lc);

    StageResult result;
    result.record = record;
    result.metrics = evaluate_test(cfg, model, data.test);
    const char* arm = cfg.pretrain_adversarial ? "robust" : "standard";
    result.checkpoint = run_dir(cfg, run_id) + "/pretrain_" + arm + ".ckpt";
    save_checkpoint(model, result.checkpoint);
    log_stage(cfg, run_id, std::string("pretrain-") + arm, record, result.metrics);
    return result;
}

namespace {

Model backbone_for_target(const ExperimentConfig& cfg, const std::string& backbone_ckpt) {
    Model model = load_checkpoint(backbone_ckpt);
    detach(model);
    replace_head(model, cfg.target_classes());
    return model;
}

}  // namespace

StageResult linear_probe(const ExperimentConfig& cfg, const std::string& backbone_ckpt,
                         bool adversarial, const std::string& run_id) {
    const TaskData data = load_task(cfg, /*source=*/false);
    Model model = backbone_for_target(cfg, backbone_ckpt);
    RngStream rng(cfg.seed);
    attach(model, Strategy{StrategyKind::linear}, HeadInit{}, rng);

    TrainLoopConfig lc = make_loop_config(
        cfg, cfg.probe_epochs,
        adversarial ? std::optional<AttackConfig>(cfg.train_attack) : std::nullopt);
    lc.optim.base_lr = cfg.probe_base_lr;
    lc.optim.weight_decay = cfg.probe_weight_decay;
    RunRecord record = train_loop(model, data.train, data.val, lc);

    StageResult result;
    result.record = record;
    result.metrics = evaluate_test(cfg, model, data.test);
    result.checkpoint = run_dir(cfg, run_id) + (adversarial ? "/probe_adv.ckpt"
                                                            : "/probe_std.ckpt");
    save_checkpoint(model, result.checkpoint);
    log_stage(cfg, run_id, adversarial ? "probe" : "probe-std", record, result.metrics);
    return result;
}

RoliResult roli_run(const ExperimentConfig& cfg, const std::string& backbone_ckpt,
                    const std::string& run_id) {
    RoliResult out;
    out.probe = linear_probe(cfg, backbone_ckpt, /*adversarial=*/true, run_id);

    const TaskData data = load_task(cfg, /*source=*/false);
    Model probe_model = load_checkpoint(out.probe.checkpoint);
    Model model = load_checkpoint(out.probe.checkpoint);
    detach(model);
    RngStream rng(cfg.seed);
    HeadInit init;
    init.scheme = HeadInitScheme::roli;
    init.source_checkpoint = out.probe.checkpoint;
    attach(model, cfg.strategy, init, rng);

    // Function preservation at step 0: the attached model must start at the
    // probe's function.
    {
        const std::int64_t check = std::min<std::int64_t>(data.val.size(), 32);
        std::vector<std::uint32_t> idx(static_cast<std::size_t>(check));
        for (std::int64_t i = 0; i < check; ++i) idx[static_cast<std::size_t>(i)] =
            static_cast<std::uint32_t>(i);
        Tensor images;
        std::vector<int> labels;
        gather_batch(data.val, idx.data(), check, images, labels, model.dtype);
        const double diff =
            model_logits(model, images).max_abs_diff(model_logits(probe_model, images));
        if (diff > 1e-6) {
            throw ContractError("roli_run: stage-2 step-0 logits deviate from the probe (" +
                                std::to_string(diff) + ")");
        }
    }

    TrainLoopConfig lc = make_loop_config(
        cfg, cfg.epochs,
        cfg.finetune_adversarial ? std::optional<AttackConfig>(cfg.train_attack)
                                 : std::nullopt);
    RunRecord record = train_loop(model, data.train, data.val, lc);

    out.finetune.record = record;
    out.finetune.metrics = evaluate_test(cfg, model, data.test);
    out.finetune.checkpoint = run_dir(cfg, run_id) + "/finetune.ckpt";
    save_checkpoint(model, out.finetune.checkpoint);
    log_stage(cfg, run_id, cfg.finetune_adversarial ? "finetune" : "finetune-std",
              record, out.finetune.metrics);
    return out;
}

StageResult finetune_run(const ExperimentConfig& cfg, const std::string& backbone_ckpt,
                         const std::string& run_id) {
    if (cfg.head_init.scheme == HeadInitScheme::roli) {
        return roli_run(cfg, backbone_ckpt, run_id).finetune;
    }
    const TaskData data = load_task(cfg, /*source=*/false);
    HeadInit init = cfg.head_init;
    if (init.scheme == HeadInitScheme::stdli && init.source_checkpoint.empty()) {
        init.source_checkpoint =
            linear_probe(cfg, backbone_ckpt, /*adversarial=*/false, run_id).checkpoint;
    }
    if (init.scheme == HeadInitScheme::regli && init.source_checkpoint.empty()) {
        init.source_checkpoint =
            regli_fit(cfg, backbone_ckpt, cfg.head_init.regli_l2,
                      run_dir(cfg, run_id) + "/regli_head.ckpt");
    }
    Model model = backbone_for_target(cfg, backbone_ckpt);
    RngStream rng(cfg.seed);
    attach(model, cfg.strategy, init, rng);

    TrainLoopConfig lc = make_loop_config(
        cfg, cfg.epochs,
        cfg.finetune_adversarial ? std::optional<AttackConfig>(cfg.train_attack)
                                 : std::nullopt);
    RunRecord record = train_loop(model, data.train, data.val, lc);

    StageResult result;
    result.record = record;
    result.metrics = evaluate_test(cfg, model, data.test);
    result.checkpoint = run_dir(cfg, run_id) + "/finetune.ckpt";
    save_checkpoint(model, result.checkpoint);
    log_stage(cfg, run_id, cfg.finetune_adversarial ? "finetune" : "finetune-std",
              record, result.metrics);
    return result;
}

std::string regli_fit(const ExperimentConfig& cfg, const std::string& backbone_ckpt,
                      double l2, const std::string& out_path) {
    const TaskData data = load_task(cfg, /*source=*/false);
    Model model = backbone_for_target(cfg, backbone_ckpt);
    const std::int64_t n = data.train.size();
    if (n == 0) throw InputError("regli_fit: empty training split");

    // Cache penultimate features with one pass, no augmentation.
    std::vector<std::uint32_t> order(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] =
        static_cast<std::uint32_t>(i);
    std::int64_t feat_dim = 0;
    std::vector<double> feats;
    std::vector<int> ys;
    for (std::int64_t begin = 0; begin < n; begin += 64) {
        const std::int64_t count = std::min<std::int64_t>(64, n - begin);
        Tensor images;
        std::vector<int> labels;
        gather_batch(data.train, order.data() + begin, count, images, labels, model.dtype);
        const Tensor f = model_features(model, images);
        feat_dim = f.shape()[1];
        for (std::int64_t i = 0; i < f.numel(); ++i) feats.push_back(f.get_flat(i));
        ys.insert(ys.end(), labels.begin(), labels.end());
    }
    const int classes = cfg.target_classes();
    const std::int64_t d = feat_dim;

    // Full-batch GD on mean cross entropy + l2 (weights and bias), step 1/L.
    std::vector<double> w(static_cast<std::size_t>(classes * d), 0.0);
    std::vector<double> bias(static_cast<std::size_t>(classes), 0.0);
    double max_row_sq = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        double sq = 0.0;
        for (std::int64_t j = 0; j < d; ++j) {
            const double v = feats[static_cast<std::size_t>(i * d + j)];
            sq += v * v;
        }
        max_row_sq = std::max(max_row_sq, sq);
    }
    const double lipschitz = 0.5 * (max_row_sq + 1.0) + 2.0 * l2;
    const double step = 1.0 / lipschitz;
    std::vector<double> gw(w.size()), gb(bias.size()), probs(static_cast<std::size_t>(classes));
    double grad_norm = 0.0;
    const int max_iters = 10000;
    int iter = 0;
    for (; iter < max_iters; ++iter) {
        std::fill(gw.begin(), gw.end(), 0.0);
        std::fill(gb.begin(), gb.end(), 0.0);
        for (std::int64_t i = 0; i < n; ++i) {
            const double* x = feats.data() + i * d;
            double mx = -1e300;
            for (int c = 0; c < classes; ++c) {
                double z = bias[static_cast<std::size_t>(c)];
                for (std::int64_t j = 0; j < d; ++j)
                    z += w[static_cast<std::size_t>(c * d + j)] * x[j];
                probs[static_cast<std::size_t>(c)] = z;
                mx = std::max(mx, z);
            }
            double denom = 0.0;
            for (int c = 0; c < classes; ++c) {
                probs[static_cast<std::size_t>(c)] =
                    std::exp(probs[static_cast<std::size_t>(c)] - mx);
                denom += probs[static_cast<std::size_t>(c)];
            }
            for (int c = 0; c < classes; ++c) {
                double r = probs[static_cast<std::size_t>(c)] / denom;
                if (c == ys[static_cast<std::size_t>(i)]) r -= 1.0;
                r /= static_cast<double>(n);
                gb[static_cast<std::size_t>(c)] += r;
                for (std::int64_t j = 0; j < d; ++j)
                    gw[static_cast<std::size_t>(c * d + j)] += r * x[j];
            }
        }
        double sq = 0.0;
        for (std::size_t k = 0; k < w.size(); ++k) {
            gw[k] += 2.0 * l2 * w[k];
            sq += gw[k] * gw[k];
        }
        for (std::size_t k = 0; k < bias.size(); ++k) {
            gb[k] += 2.0 * l2 * bias[k];
            sq += gb[k] * gb[k];
        }
        grad_norm = std::sqrt(sq);
        if (grad_norm < 1e-6) break;
        for (std::size_t k = 0; k < w.size(); ++k) w[k] -= step * gw[k];
        for (std::size_t k = 0; k < bias.size(); ++k) bias[k] -= step * gb[k];
    }
    if (iter == max_iters) {
        std::fprintf(stderr,
                     "warning: regli_fit stopped at %d iterations with gradient norm %.3e; "
                     "keeping the best iterate\n",
                     max_iters, grad_norm);
    }

    Param& hw = model.params.at("head.weight");
    Param& hb = model.params.at("head.bias");
    for (std::int64_t i = 0; i < hw.value.numel(); ++i)
        hw.value.set_flat(i, w[static_cast<std::size_t>(i)]);
    for (std::int64_t i = 0; i < hb.value.numel(); ++i)
        hb.value.set_flat(i, bias[static_cast<std::size_t>(i)]);
    save_checkpoint(model, out_path);
    return out_path;
}

double transferred_accuracy(double acc_lp_std, double acc_ft_std) {
    if (acc_ft_std == 0.0) {
        throw InputError("transferred_accuracy: zero full-finetune accuracy denominator");
    }
    return (acc_lp_std - acc_ft_std) / acc_ft_std;
}

double transferred_robustness(double rob_lp_adv, double rob_ft_adv) {
    if (rob_ft_adv == 0.0) {
        throw InputError("transferred_robustness: zero full-finetune robustness denominator");
    }
    return (rob_lp_adv - rob_ft_adv) / rob_ft_adv;
}

double pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size() || xs.size() < 2) {
        throw InputError("pearson: need two same-length series of at least 2 points");
    }
    const auto n = static_cast<double>(xs.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double dx = xs[i] - mx, dy = ys[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) {
        throw InputError("pearson: undefined for a degenerate (zero-variance) axis");
    }
    return sxy / std::sqrt(sxx * syy);
}

PairwiseResult pairwise_transfer_metrics(const std::vector<RunPair>& ft_pairs,
                                         const std::vector<RunPair>& lp_pairs) {
    if (ft_pairs.empty() || lp_pairs.empty()) {
        throw InputError("pairwise_transfer_metrics: need at least one pair on each side");
    }
    PairwiseResult out;
    std::vector<double> xs, ys;
    for (const RunPair& ft : ft_pairs) {
        for (const RunPair& lp : lp_pairs) {
            TransferPoint p;
            p.acc_t = transferred_accuracy(lp.acc_std, ft.acc_std);
            p.rob_t = transferred_robustness(lp.rob_adv, ft.rob_adv);
            out.points.push_back(p);
            xs.push_back(p.acc_t);
            ys.push_back(p.rob_t);
        }
    }
    out.pearson_r = pearson(xs, ys);
    return out;
}

std::vector<std::string> gradviz(const Model& model, const Tensor& images,
                                 const std::vector<int>& labels,
                                 const std::string& out_dir) {
    if (images.rank() != 4) throw InputError("gradviz: images must be [b,C,H,W]");
    const std::int64_t b = images.shape()[0], C = images.shape()[1];
    const std::int64_t H = images.shape()[2], W = images.shape()[3];
    if (static_cast<std::int64_t>(labels.size()) != b) {
        throw InputError("gradviz: label count does not match batch");
    }
    fs::create_directories(out_dir);
    std::vector<std::string> paths;
    for (std::int64_t i = 0; i < b; ++i) {
        Tensor one = Tensor::zeros({1, C, H, W}, model.dtype);
        for (std::int64_t j = 0; j < C * H * W; ++j)
            one.set_flat(j, images.get_flat(i * C * H * W + j));
        Tape tape(model.dtype);
        ForwardOptions opts;
        opts.input_requires_grad = true;
        const ForwardBuild fb = model_forward(tape, model, one, opts);
        const NodeId loss = tape.cross_entropy_from_logits(
            fb.logits, {labels[static_cast<std::size_t>(i)]});
        Gradients grads = tape.backward(loss);
        std::vector<double> channel_mean(static_cast<std::size_t>(H * W), 0.0);
        if (grads.has(fb.input)) {
            const Tensor& g = grads.at(fb.input);
            for (std::int64_t c = 0; c < C; ++c)
                for (std::int64_t p = 0; p < H * W; ++p)
                    channel_mean[static_cast<std::size_t>(p)] +=
                        g.get_flat(c * H * W + p) / static_cast<double>(C);
        }
        double peak = 0.0;
        for (const double v : channel_mean) peak = std::max(peak, std::abs(v));
        std::vector<std::uint8_t> bytes(static_cast<std::size_t>(H * W), 128);
        if (peak > 0.0) {
            for (std::size_t p = 0; p < bytes.size(); ++p) {
                const double scaled = 127.5 * (1.0 + channel_mean[p] / peak);
                bytes[p] = static_cast<std::uint8_t>(
                    std::min(255.0, std::max(0.0, std::round(scaled))));
            }
        }
        const std::string path = (fs::path(out_dir) / ("grad_" + std::to_string(i) + ".pgm"))
                                     .string();
        write_pgm(path, static_cast<int>(W), static_cast<int>(H), bytes);
        paths.push_back(path);
    }
    return paths;
}

std::vector<SpeedRow> speed_report(const ExperimentConfig& cfg,
                                   const std::string& backbone_ckpt,
                                   const std::string& out_csv) {
    const TaskData data = load_task(cfg, /*source=*/false);
    std::vector<SpeedRow> rows;
    for (const HeadInitScheme scheme :
         {HeadInitScheme::ranli, HeadInitScheme::regli, HeadInitScheme::stdli,
          HeadInitScheme::roli}) {
        ExperimentConfig run_cfg = cfg;
        run_cfg.head_init = HeadInit{};
        run_cfg.head_init.scheme = scheme;
        run_cfg.head_init.regli_l2 = cfg.regli_l2;
        const std::string run_id = std::string("speed-") + head_init_name(scheme);
        const double t0 = now_seconds();
        const StageResult result = finetune_run(run_cfg, backbone_ckpt, run_id);
        const double wall = now_seconds() - t0;
        rows.push_back(SpeedRow{head_init_name(scheme), wall, result.metrics.robust_acc,
                                result.metrics.clean_acc});
    }
    std::sort(rows.begin(), rows.end(),
              [](const SpeedRow& a, const SpeedRow& b) { return a.wall_seconds < b.wall_seconds; });
    std::vector<MetricsRow> csv;
    for (const SpeedRow& r : rows) {
        csv.push_back({r.scheme, "total", 0, "test", "robust_acc", r.robust_acc,
                       r.wall_seconds});
        csv.push_back({r.scheme, "total", 0, "test", "clean_acc", r.clean_acc,
                       r.wall_seconds});
    }
    write_metrics_csv(csv, out_csv);
    return rows;
}

void write_scatter_svg(const std::string& path, const std::vector<TransferPoint>& points,
                       const std::string& x_label, const std::string& y_label,
                       std::optional<double> pearson_r) {
    const int width = 640, height = 480, margin = 60;
    double min_x = 0.0, max_x = 0.0, min_y = 0.0, max_y = 0.0;
    for (const TransferPoint& p : points) {
        min_x = std::min(min_x, p.acc_t);
        max_x = std::max(max_x, p.acc_t);
        min_y = std::min(min_y, p.rob_t);
        max_y = std::max(max_y, p.rob_t);
    }
    if (max_x == min_x) max_x = min_x + 1.0;
    if (max_y == min_y) max_y = min_y + 1.0;
    const auto sx = [&](double v) {
        return margin + (v - min_x) / (max_x - min_x) * (width - 2 * margin);
    };
    const auto sy = [&](double v) {
        return height - margin - (v - min_y) / (max_y - min_y) * (height - 2 * margin);
    };
    std::string svg;
    svg += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) +
           "\" height=\"" + std::to_string(height) + "\">\n";
    svg += "  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "  <line x1=\"%d\" y1=\"%d\" x2=\"%d\" y2=\"%d\" stroke=\"black\"/>\n",
                  margin, height - margin, width - margin, height - margin);
    svg += buf;
    std::snprintf(buf, sizeof buf,
                  "  <line x1=\"%d\" y1=\"%d\" x2=\"%d\" y2=\"%d\" stroke=\"black\"/>\n",
                  margin, margin, margin, height - margin);
    svg += buf;
    for (const TransferPoint& p : points) {
        std::snprintf(buf, sizeof buf,
                      "  <circle cx=\"%.2f\" cy=\"%.2f\" r=\"4\" fill=\"#c0392b\" "
                      "fill-opacity=\"0.75\"/>\n",
                      sx(p.acc_t), sy(p.rob_t));
        svg += buf;
    }
    std::snprintf(buf, sizeof buf,
                  "  <text x=\"%d\" y=\"%d\" font-size=\"14\" text-anchor=\"middle\">%s</text>\n",
                  width / 2, height - 15, x_label.c_str());
    svg += buf;
    std::snprintf(buf, sizeof buf,
                  "  <text x=\"15\" y=\"%d\" font-size=\"14\" text-anchor=\"middle\" "
                  "transform=\"rotate(-90 15 %d)\">%s</text>\n",
                  height / 2, height / 2, y_label.c_str());
    svg += buf;
    if (pearson_r) {
        std::snprintf(buf, sizeof buf,
                      "  <text x=\"%d\" y=\"%d\" font-size=\"13\">Pearson r = %.3f</text>\n",
                      margin + 10, margin + 10, *pearson_r);
        svg += buf;
    }
    svg += "</svg>\n";
    write_file_atomic(path, svg);
}

}  // namespace rfl
