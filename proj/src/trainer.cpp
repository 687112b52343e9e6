#include "rfl/trainer.hpp"

#include <chrono>
#include <cmath>
#include <mutex>
#include <thread>

namespace rfl {

namespace {

bool decayed_role(Role r) {
    switch (r) {
        case Role::weight:
        case Role::head_weight:
        case Role::lora_a:
        case Role::lora_b:
        case Role::adapter_down:
        case Role::adapter_up:
            return true;
        case Role::bias:
        case Role::norm:
        case Role::head_bias:
        case Role::prompt:
            return false;
    }
    return false;
}

double grad_global_norm(const std::map<std::string, Tensor>& grads) {
    double sq = 0.0;
    for (const auto& [name, g] : grads) {
        for (std::int64_t i = 0; i < g.numel(); ++i) {
            const double v = g.get_flat(i);
            sq += v * v;
        }
    }
    return std::sqrt(sq);
}

void clip_gradients(std::map<std::string, Tensor>& grads, double max_norm, double norm) {
    if (max_norm <= 0.0 || norm <= max_norm) return;
    const double scale = max_norm / norm;
    for (auto& [name, g] : grads) {
        for (std::int64_t i = 0; i < g.numel(); ++i) g.set_flat(i, g.get_flat(i) * scale);
    }
}

// Shared epoch body; `attack` == nullptr runs the standard pass.
double run_epoch(Model& model, const Dataset& train, const AttackConfig* attack,
                 EpochContext& ctx) {
    if (train.size() == 0) throw InputError("epoch: empty training split");
    const int b = std::max(1, ctx.batch_size);
    const std::int64_t n = train.size();
    const auto order = ctx.shuffle_rng.permutation(static_cast<std::uint32_t>(n));
    double loss_sum = 0.0;
    double last_grad_norm = 0.0;
    bool checked_invariants = false;
    for (std::int64_t begin = 0; begin < n; begin += b) {
        const std::int64_t count = std::min<std::int64_t>(b, n - begin);
        Tensor images;
        std::vector<int> labels;
        gather_batch(train, order.data() + begin, count, images, labels, model.dtype);
        Tensor inputs = images;
        if (attack) {
            const AttackResult res = pgd_linf(model, images, labels, *attack, ctx.attack_rng);
            if (!checked_invariants) {
                // Spot-check the attack contract once per epoch.
                for (std::int64_t i = 0; i < res.delta.numel(); ++i) {
                    const double d = res.delta.get_flat(i);
                    const double xa = res.x_adv.get_flat(i);
                    if (std::abs(d) > attack->epsilon || xa < 0.0 || xa > 1.0) {
                        throw ContractError("attack invariant violated during training");
                    }
                }
                checked_invariants = true;
            }
            inputs = res.x_adv;
        }
        Tape tape(model.dtype);
        ForwardOptions opts;
        opts.params_require_grad = true;
        opts.strict_range = false;
        const ForwardBuild fb = model_forward(tape, model, inputs, opts);
        const NodeId loss_node = tape.cross_entropy_from_logits(fb.logits, labels);
        const double loss = tape.value(loss_node).item();
        const int step_index = ctx.global_step + 1;
        const double lr_t =
            cosine_warmup_lr(step_index, ctx.schedule, ctx.optimizer.effective_lr());
        if (!std::isfinite(loss)) {
            throw DivergenceError("training loss is not finite at step " +
                                      std::to_string(step_index) +
                                      " (lr=" + std::to_string(lr_t) +
                                      ", last grad norm=" + std::to_string(last_grad_norm) + ")",
                                  step_index, lr_t, last_grad_norm);
        }
        Gradients grads = tape.backward(loss_node);
        std::map<std::string, Tensor> by_name;
        for (const auto& [name, node] : fb.param_nodes) {
            if (grads.has(node)) by_name.emplace(name, grads.at(node));
        }
        last_grad_norm = grad_global_norm(by_name);
        clip_gradients(by_name, ctx.grad_clip, last_grad_norm);
        ctx.optimizer.step(model.params, by_name, lr_t);
        ctx.global_step = step_index;
        loss_sum += loss * static_cast<double>(count);
    }
    return loss_sum / static_cast<double>(n);
}

}  // namespace

ScheduleConfig ScheduleConfig::with_warmup_fraction(int total, double fraction) {
    ScheduleConfig s;
    s.total_steps = total;
    s.warmup_steps = static_cast<int>(total * fraction);
    if (s.warmup_steps >= total) s.warmup_steps = total - 1;
    if (s.warmup_steps < 0) s.warmup_steps = 0;
    return s;
}

void ScheduleConfig::validate() const {
    if (total_steps < 1 || warmup_steps < 0 || warmup_steps >= total_steps) {
        throw ConfigError("schedule: need 0 <= warmup < total steps");
    }
}

double cosine_warmup_lr(int t, const ScheduleConfig& schedule, double lr) {
    schedule.validate();
    if (t < 1 || t > schedule.total_steps) {
        throw ConfigError("cosine_warmup_lr: step " + std::to_string(t) + " outside [1, " +
                          std::to_string(schedule.total_steps) + "]");
    }
    const int tw = schedule.warmup_steps;
    if (tw > 0 && t <= tw) {
        return lr * static_cast<double>(t) / static_cast<double>(tw);
    }
    const double progress =
        static_cast<double>(t - tw) / static_cast<double>(schedule.total_steps - tw);
    return lr * 0.5 * (1.0 + std::cos(M_PI * progress));
}

Optimizer::Optimizer(const OptimizerConfig& cfg)
    : cfg_(cfg), lr_(cfg.base_lr * cfg.batch_size / 256.0) {
    if (cfg.batch_size < 1) throw ConfigError("optimizer: batch size must be >= 1");
}

void Optimizer::step(ParameterStore& params, const std::map<std::string, Tensor>& grads,
                     double lr_t) {
    ++t_;
    for (const auto& [name, grad] : grads) {
        Param& p = params.at(name);
        if (!p.trainable) {
            throw ContractError("optimizer: gradient supplied for frozen parameter " + name);
        }
        auto it = state_.find(name);
        if (it == state_.end()) {
            it = state_
                     .emplace(name, std::make_pair(Tensor::zeros(grad.shape(), grad.dtype()),
                                                   Tensor::zeros(grad.shape(), grad.dtype())))
                     .first;
        }
        Tensor& m = it->second.first;
        Tensor& v = it->second.second;
        const bool decay = decayed_role(p.role) && cfg_.weight_decay != 0.0;
        with_dtype(grad.dtype(), [&](auto z) {
            using T = decltype(z);
            const auto pg = grad.data<T>();
            const auto pm = m.data<T>();
            const auto pv = v.data<T>();
            const auto pp = p.value.data<T>();
            const T b1 = static_cast<T>(cfg_.beta1);
            const T b2 = static_cast<T>(cfg_.beta2);
            const T eps = static_cast<T>(cfg_.eps);
            const T lr = static_cast<T>(lr_t);
            const T wd = static_cast<T>(cfg_.weight_decay);
            const T c1 = static_cast<T>(1.0 - std::pow(cfg_.beta1, t_));
            const T c2 = static_cast<T>(1.0 - std::pow(cfg_.beta2, t_));
            for (std::int64_t i = 0; i < grad.numel(); ++i) {
                pm[i] = b1 * pm[i] + (T(1) - b1) * pg[i];
                pv[i] = b2 * pv[i] + (T(1) - b2) * pg[i] * pg[i];
                const T mhat = pm[i] / c1;
                const T vhat = pv[i] / c2;
                T update = lr * mhat / (std::sqrt(vhat) + eps);
                if (decay) update += lr * wd * pp[i];
                pp[i] -= update;
            }
            return 0;
        });
    }
}

double adversarial_epoch(Model& model, const Dataset& train, const AttackConfig& attack,
                         EpochContext& ctx) {
    attack.validate();
    return run_epoch(model, train, &attack, ctx);
}

double standard_epoch(Model& model, const Dataset& train, EpochContext& ctx) {
    return run_epoch(model, train, nullptr, ctx);
}

int early_stop_select(const RunRecord& record) {
    if (record.epochs.empty()) throw ContractError("early_stop_select: no epochs recorded");
    int best = 1;
    double best_acc = record.epochs[0].val_robust_acc;
    for (std::size_t e = 1; e < record.epochs.size(); ++e) {
        if (record.epochs[e].val_robust_acc > best_acc) {  // strict: earliest tie wins
            best_acc = record.epochs[e].val_robust_acc;
            best = static_cast<int>(e) + 1;
        }
    }
    return best;
}

RunRecord train_loop(Model& model, const Dataset& train, const Dataset& val,
                     const TrainLoopConfig& cfg) {
    if (model.params.count(true) == 0) {
        throw ContractError("train_loop: model has no trainable parameters");
    }
    if (cfg.epochs < 1) throw ConfigError("train_loop: epochs must be >= 1");
    const std::int64_t steps_per_epoch =
        (train.size() + cfg.optim.batch_size - 1) / cfg.optim.batch_size;
    const ScheduleConfig schedule = ScheduleConfig::with_warmup_fraction(
        static_cast<int>(steps_per_epoch) * cfg.epochs, cfg.warmup_fraction);
    Optimizer optimizer(cfg.optim);
    RngStream master(cfg.seed);
    RngStream shuffle_rng = master.substream("data-shuffle");
    RngStream attack_rng = master.substream("attack");
    RngStream eval_rng = master.substream("eval");
    EpochContext ctx{optimizer, schedule, shuffle_rng,      attack_rng,
                     cfg.optim.batch_size, 0, cfg.grad_clip};

    RunRecord record;
    double best_acc = -1.0;
    std::map<std::string, Tensor> best_params;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        EpochStats stats;
        stats.train_loss = cfg.train_attack
                               ? adversarial_epoch(model, train, *cfg.train_attack, ctx)
                               : standard_epoch(model, train, ctx);
        stats.val_clean_acc = clean_accuracy(model, val, cfg.eval_batch_size, cfg.threads);
        const AttackEvaluation ev = evaluate_under_attack(model, val, cfg.eval_attack,
                                                          eval_rng, cfg.eval_batch_size,
                                                          cfg.threads);
        stats.val_robust_acc = ev.robust_acc;
        stats.val_adv_loss = ev.mean_adv_loss;
        stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                            .count();
        record.epochs.push_back(stats);
        if (cfg.restore_best && stats.val_robust_acc > best_acc) {
            best_acc = stats.val_robust_acc;
            best_params.clear();
            for (const auto& name : model.params.names()) {
                const Param& p = model.params.at(name);
                if (p.trainable) best_params.emplace(name, p.value);
            }
        }
    }
    record.selected_epoch = early_stop_select(record);
    if (cfg.restore_best) {
        for (auto& [name, value] : best_params) {
            model.params.at(name).value = value;
        }
    }
    return record;
}

GridResult grid_search(const std::function<Model()>& make_model, const Dataset& train,
                       const Dataset& val, const TrainLoopConfig& base,
                       const std::vector<double>& lr_grid,
                       const std::vector<double>& wd_grid, int cell_threads) {
    if (lr_grid.empty() || wd_grid.empty()) {
        throw ConfigError("grid_search: learning-rate and weight-decay grids must be nonempty");
    }
    struct CellJob {
        double lr, wd;
        RunRecord record;
        Model model;
    };
    std::vector<CellJob> jobs;
    for (const double lr : lr_grid) {
        for (const double wd : wd_grid) {
            jobs.push_back(CellJob{lr, wd, {}, {}});
        }
    }
    const auto run_cell = [&](std::size_t i) {
        CellJob& job = jobs[i];
        TrainLoopConfig cfg = base;
        cfg.optim.base_lr = job.lr;
        cfg.optim.weight_decay = job.wd;
        job.model = make_model();
        job.record = train_loop(job.model, train, val, cfg);
    };
    const int workers = std::max(1, std::min<int>(cell_threads, static_cast<int>(jobs.size())));
    if (workers == 1) {
        for (std::size_t i = 0; i < jobs.size(); ++i) run_cell(i);
    } else {
        std::vector<std::thread> pool;
        std::exception_ptr first_error;
        std::mutex error_mutex;
        for (int w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                try {
                    for (std::size_t i = static_cast<std::size_t>(w); i < jobs.size();
                         i += static_cast<std::size_t>(workers)) {
                        run_cell(i);
                    }
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!first_error) first_error = std::current_exception();
                }
            });
        }
        for (auto& t : pool) t.join();
        if (first_error) std::rethrow_exception(first_error);
    }
    GridResult result;
    double best = -1.0;
    for (std::size_t i = 0; i < jobs.size(); ++i) {
        const RunRecord& rec = jobs[i].record;
        const double acc =
            rec.epochs[static_cast<std::size_t>(rec.selected_epoch - 1)].val_robust_acc;
        result.cells.push_back(GridCell{jobs[i].lr, jobs[i].wd, rec});
        if (acc > best) {  // earliest cell wins ties
            best = acc;
            result.best_index = i;
            result.best_lr = jobs[i].lr;
            result.best_wd = jobs[i].wd;
        }
    }
    result.best_model = std::move(jobs[result.best_index].model);
    return result;
}

}  // namespace rfl
