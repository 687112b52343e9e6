// rfl: desk-scale adversarial transfer-learning laboratory.
//
// Subcommands drive the pipeline stages; every run freezes its resolved
// config next to its outputs so results can be reproduced bit-for-bit.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rfl/attacks.hpp"
#include "rfl/config.hpp"
#include "rfl/data_io.hpp"
#include "rfl/peft.hpp"
#include "rfl/pipeline.hpp"

namespace fs = std::filesystem;
using namespace rfl;

namespace {

struct GlobalArgs {
    std::string config_path;
    std::string out_dir;
    std::string run_id;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    // per-command overrides
    std::string strategy, init, eps, steps, arm, regime;
};

ExperimentConfig resolve_config(const GlobalArgs& args) {
    ExperimentConfig cfg;
    if (!args.config_path.empty()) cfg = load_config_file(args.config_path);
    if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
    if (args.seed) {
        cfg.seed = *args.seed;
    } else if (args.config_path.empty()) {
        if (const char* env = std::getenv("RFL_SEED")) {
            cfg.seed = std::strtoull(env, nullptr, 10);
        }
    }
    if (args.threads) cfg.threads = *args.threads;
    if (!args.strategy.empty()) cfg.strategy.kind = strategy_kind_from_name(args.strategy);
    if (!args.init.empty()) cfg.head_init.scheme = head_init_from_name(args.init);
    if (!args.eps.empty()) {
        const double e = parse_rational(args.eps);
        cfg.train_attack.epsilon = e;
        cfg.eval_attack.epsilon = e;
    }
    if (!args.steps.empty()) {
        cfg.eval_attack.steps = static_cast<int>(std::strtol(args.steps.c_str(), nullptr, 10));
    }
    if (args.arm == "standard") cfg.pretrain_adversarial = false;
    if (args.arm == "adversarial") cfg.pretrain_adversarial = true;
    if (args.regime == "standard") cfg.finetune_adversarial = false;
    if (args.regime == "adversarial") cfg.finetune_adversarial = true;
    return cfg;
}

std::string default_run_id(const GlobalArgs& args, const ExperimentConfig& cfg,
                           const std::string& command) {
    if (!args.run_id.empty()) return args.run_id;
    return command + "-" + strategy_kind_name(cfg.strategy.kind) + "-" +
           head_init_name(cfg.head_init.scheme) + "-s" + std::to_string(cfg.seed);
}

void freeze_config(const ExperimentConfig& cfg, const std::string& run_id) {
    const fs::path dir = fs::path(cfg.out_dir) / run_id;
    fs::create_directories(dir);
    write_file_atomic((dir / "config.ini").string(), render_config(cfg));
}

Tensor first_images(const Dataset& ds, int count, std::vector<int>& labels,
                    Dtype dtype) {
    const std::int64_t n = std::min<std::int64_t>(count, ds.size());
    std::vector<std::uint32_t> idx(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] =
        static_cast<std::uint32_t>(i);
    Tensor images;
    gather_batch(ds, idx.data(), n, images, labels, dtype);
    return images;
}

struct AnalyzedRun {
    StrategyKind kind;
    bool adversarial;
    double lr, wd;
    double clean_acc = -1.0, robust_acc = -1.0;
};

std::vector<AnalyzedRun> scan_runs(const std::vector<std::string>& dirs) {
    std::vector<AnalyzedRun> runs;
    for (const auto& dir : dirs) {
        const fs::path cfg_path = fs::path(dir) / "config.ini";
        const fs::path csv_path = fs::path(dir) / "metrics.csv";
        if (!fs::exists(cfg_path) || !fs::exists(csv_path)) continue;
        const ExperimentConfig cfg = load_config_file(cfg_path.string());
        AnalyzedRun run;
        run.kind = cfg.strategy.kind;
        run.adversarial = cfg.finetune_adversarial;
        run.lr = cfg.optim.base_lr;
        run.wd = cfg.optim.weight_decay;
        for (const MetricsRow& row : read_metrics_csv(csv_path.string())) {
            const bool final_stage = row.stage == "finetune" || row.stage == "finetune-std" ||
                                     row.stage == "probe" || row.stage == "probe-std";
            if (!final_stage || row.split != "test") continue;
            if (row.stage == "probe") run.adversarial = true;
            if (row.stage == "probe-std") run.adversarial = false;
            if (row.stage == "probe" || row.stage == "probe-std") {
                run.kind = StrategyKind::linear;
                run.lr = cfg.probe_base_lr;
                run.wd = cfg.probe_weight_decay;
            }
            if (row.metric == "clean_acc") run.clean_acc = row.value;
            if (row.metric == "robust_acc") run.robust_acc = row.value;
        }
        if (run.clean_acc >= 0.0 && run.robust_acc >= 0.0) runs.push_back(run);
    }
    return runs;
}

int run_analyze(const std::vector<std::string>& dirs, const std::string& out_dir) {
    std::vector<AnalyzedRun> runs = scan_runs(dirs);
    // One (lr, wd) setting pairs a standard run's accuracy with the matching
    // adversarial run's robustness.
    const auto collect_pairs = [&](bool linear) {
        std::vector<RunPair> pairs;
        for (const AnalyzedRun& std_run : runs) {
            if (std_run.adversarial || (std_run.kind == StrategyKind::linear) != linear)
                continue;
            for (const AnalyzedRun& adv_run : runs) {
                if (!adv_run.adversarial ||
                    (adv_run.kind == StrategyKind::linear) != linear)
                    continue;
                if (adv_run.lr == std_run.lr && adv_run.wd == std_run.wd) {
                    pairs.push_back(RunPair{std_run.clean_acc, adv_run.robust_acc});
                    break;
                }
            }
        }
        return pairs;
    };
    const std::vector<RunPair> lp_pairs = collect_pairs(true);
    std::vector<RunPair> ft_pairs;
    for (const AnalyzedRun& std_run : runs) {
        if (std_run.adversarial || std_run.kind != StrategyKind::full_ft) continue;
        for (const AnalyzedRun& adv_run : runs) {
            if (adv_run.adversarial && adv_run.kind == StrategyKind::full_ft &&
                adv_run.lr == std_run.lr && adv_run.wd == std_run.wd) {
                ft_pairs.push_back(RunPair{std_run.clean_acc, adv_run.robust_acc});
                break;
            }
        }
    }
    if (ft_pairs.empty() || lp_pairs.empty()) {
        std::fprintf(stderr, "analyze: missing runs:%s%s\n",
                     ft_pairs.empty() ? " paired standard+adversarial full_ft runs" : "",
                     lp_pairs.empty() ? " paired standard+adversarial linear-probe runs" : "");
        return 2;
    }
    std::vector<TransferPoint> points;
    std::optional<double> r;
    try {
        PairwiseResult res = pairwise_transfer_metrics(ft_pairs, lp_pairs);
        points = res.points;
        r = res.pearson_r;
    } catch (const InputError&) {
        // Single point or degenerate axes: report the points without r.
        for (const RunPair& ft : ft_pairs) {
            for (const RunPair& lp : lp_pairs) {
                points.push_back(TransferPoint{transferred_accuracy(lp.acc_std, ft.acc_std),
                                               transferred_robustness(lp.rob_adv, ft.rob_adv)});
            }
        }
    }
    fs::create_directories(out_dir);
    std::vector<MetricsRow> rows;
    for (std::size_t i = 0; i < points.size(); ++i) {
        rows.push_back({"analyze", "transfer", static_cast<int>(i), "pair", "acc_t",
                        points[i].acc_t, 0.0});
        rows.push_back({"analyze", "transfer", static_cast<int>(i), "pair", "rob_t",
                        points[i].rob_t, 0.0});
    }
    if (r) rows.push_back({"analyze", "transfer", 0, "all", "pearson_r", *r, 0.0});
    const std::string csv = (fs::path(out_dir) / "transfer_metrics.csv").string();
    write_metrics_csv(rows, csv);
    const std::string svg = (fs::path(out_dir) / "transfer_scatter.svg").string();
    write_scatter_svg(svg, points, "Transferred accuracy (standard linear probing)",
                      "Transferred robustness (adversarial linear probing)", r);
    std::printf("analyze: %zu points -> %s\n", points.size(), csv.c_str());
    if (r) std::printf("analyze: Pearson r = %.4f\n", *r);
    else std::printf("analyze: Pearson r = NA (fewer than 2 points or degenerate)\n");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"rfl: adversarial transfer-learning laboratory"};
    app.require_subcommand(1);
    app.fallthrough();  // global options may follow the subcommand
    GlobalArgs args;
    app.add_option("--config,-c", args.config_path, "INI config file");
    app.add_option("--seed", args.seed, "master seed (overrides config and RFL_SEED)");
    app.add_option("--out", args.out_dir, "output directory");
    app.add_option("--threads", args.threads, "worker threads for attacks and grid cells");
    app.add_option("--run-id", args.run_id, "run directory name (default derived)");

    std::string backbone, checkpoint;
    int gradviz_count = 8;
    std::vector<std::string> analyze_dirs;
    std::string analyze_out = "analysis";

    CLI::App* cmd_pretrain = app.add_subcommand("pretrain", "train the backbone on the source task");
    cmd_pretrain->add_option("--arm", args.arm, "standard|adversarial")
        ->check(CLI::IsMember({"standard", "adversarial"}));

    CLI::App* cmd_probe = app.add_subcommand("probe", "linear probe on the target task");
    cmd_probe->add_option("--backbone", backbone, "backbone checkpoint")->required();
    bool probe_standard = false;
    cmd_probe->add_flag("--standard", probe_standard, "standard (non-adversarial) probing");

    CLI::App* cmd_finetune = app.add_subcommand("finetune", "finetune on the target task");
    cmd_finetune->add_option("--backbone", backbone, "backbone checkpoint")->required();
    cmd_finetune->add_option("--strategy", args.strategy,
                             "full_ft|adapter|lora|bias|vpt|linear");
    cmd_finetune->add_option("--init", args.init, "ranli|roli|stdli|regli");
    cmd_finetune->add_option("--eps", args.eps, "attack epsilon, e.g. 8/255");
    cmd_finetune->add_option("--steps", args.steps, "evaluation attack steps");
    cmd_finetune->add_option("--regime", args.regime, "standard|adversarial")
        ->check(CLI::IsMember({"standard", "adversarial"}));

    CLI::App* cmd_eval = app.add_subcommand("eval", "evaluate a checkpoint on the target task");
    cmd_eval->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    cmd_eval->add_option("--eps", args.eps, "attack epsilon, e.g. 8/255");
    cmd_eval->add_option("--steps", args.steps, "evaluation attack steps");

    CLI::App* cmd_analyze = app.add_subcommand("analyze", "transfer metrics across runs");
    cmd_analyze->add_option("--runs", analyze_dirs, "run directories")->required();
    cmd_analyze->add_option("--out-dir", analyze_out, "analysis output directory");

    CLI::App* cmd_gradviz = app.add_subcommand("gradviz", "input-gradient images (PGM)");
    cmd_gradviz->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    cmd_gradviz->add_option("--count", gradviz_count, "number of test images");

    CLI::App* cmd_speed = app.add_subcommand("speed", "initialization speed/robustness table");
    cmd_speed->add_option("--backbone", backbone, "backbone checkpoint")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;  // --help exits 0; parse errors exit 2
    }

    try {
        const ExperimentConfig cfg = resolve_config(args);
        if (cmd_pretrain->parsed()) {
            const std::string run_id = default_run_id(args, cfg, "pretrain");
            freeze_config(cfg, run_id);
            const StageResult res = pretrain(cfg, run_id);
            std::printf("pretrain[%s]: test clean %.4f robust %.4f -> %s\n",
                        cfg.pretrain_adversarial ? "robust" : "standard",
                        res.metrics.clean_acc, res.metrics.robust_acc,
                        res.checkpoint.c_str());
        } else if (cmd_probe->parsed()) {
            const std::string run_id = default_run_id(args, cfg, "probe");
            freeze_config(cfg, run_id);
            const StageResult res = linear_probe(cfg, backbone, !probe_standard, run_id);
            std::printf("probe[%s]: test clean %.4f robust %.4f -> %s\n",
                        probe_standard ? "standard" : "adversarial", res.metrics.clean_acc,
                        res.metrics.robust_acc, res.checkpoint.c_str());
        } else if (cmd_finetune->parsed()) {
            const std::string run_id = default_run_id(args, cfg, "finetune");
            freeze_config(cfg, run_id);
            const StageResult res = finetune_run(cfg, backbone, run_id);
            std::printf("finetune[%s,%s]: test clean %.4f robust %.4f -> %s\n",
                        strategy_kind_name(cfg.strategy.kind),
                        head_init_name(cfg.head_init.scheme), res.metrics.clean_acc,
                        res.metrics.robust_acc, res.checkpoint.c_str());
        } else if (cmd_eval->parsed()) {
            const Model model = load_checkpoint(checkpoint);
            const TaskData data = load_task(cfg, /*source=*/false);
            const double clean = clean_accuracy(model, data.test, 64, cfg.threads);
            const double robust = robust_accuracy(model, data.test, cfg.eval_attack,
                                                  RngStream(cfg.seed), 64, cfg.threads);
            std::printf("eval: clean %.4f robust %.4f (eps=%.6f, steps=%d)\n", clean, robust,
                        cfg.eval_attack.epsilon, cfg.eval_attack.steps);
            const std::string run_id = default_run_id(args, cfg, "eval");
            freeze_config(cfg, run_id);
            write_metrics_csv(
                {{run_id, "eval", 0, "test", "clean_acc", clean, 0.0},
                 {run_id, "eval", 0, "test", "robust_acc", robust, 0.0}},
                (fs::path(cfg.out_dir) / run_id / "metrics.csv").string());
        } else if (cmd_analyze->parsed()) {
            return run_analyze(analyze_dirs, analyze_out);
        } else if (cmd_gradviz->parsed()) {
            const Model model = load_checkpoint(checkpoint);
            const TaskData data = load_task(cfg, /*source=*/false);
            std::vector<int> labels;
            const Tensor images = first_images(data.test, gradviz_count, labels, model.dtype);
            const std::string run_id = default_run_id(args, cfg, "gradviz");
            freeze_config(cfg, run_id);
            const auto paths =
                gradviz(model, images, labels, (fs::path(cfg.out_dir) / run_id).string());
            std::printf("gradviz: wrote %zu images under %s\n", paths.size(),
                        (fs::path(cfg.out_dir) / run_id).string().c_str());
        } else if (cmd_speed->parsed()) {
            const std::string run_id = default_run_id(args, cfg, "speed");
            freeze_config(cfg, run_id);
            const std::string csv = (fs::path(cfg.out_dir) / run_id / "speed.csv").string();
            const auto rows = speed_report(cfg, backbone, csv);
            std::printf("%-8s %12s %12s %12s\n", "scheme", "seconds", "robust_acc",
                        "clean_acc");
            for (const SpeedRow& r : rows) {
                std::printf("%-8s %12.2f %12.4f %12.4f\n", r.scheme.c_str(), r.wall_seconds,
                            r.robust_acc, r.clean_acc);
            }
            std::printf("speed: table -> %s\n", csv.c_str());
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
