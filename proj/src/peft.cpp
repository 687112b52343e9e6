#include "rfl/peft.hpp"

#include <cmath>

#include "rfl/data_io.hpp"

namespace rfl {

namespace {

void require_vit(const Model& m, StrategyKind kind) {
    if (m.arch != Arch::vit) {
        throw InitError(std::string(strategy_kind_name(kind)) +
                        " needs a vision-transformer backbone");
    }
}

void freeze_all(Model& m) {
    for (const auto& name : m.params.names()) m.params.at(name).trainable = false;
}

void unfreeze_all_but_transform(Model& m) {
    for (const auto& name : m.params.names()) {
        m.params.at(name).trainable = !(name == "input.mean" || name == "input.std");
    }
}

void mark_trainable(Model& m, const std::string& name) { m.params.at(name).trainable = true; }

void init_head(Model& m, const HeadInit& head_init, RngStream& rng) {
    Param& hw = m.params.at("head.weight");
    Param& hb = m.params.at("head.bias");
    if (head_init.scheme == HeadInitScheme::ranli) {
        RngStream init = rng.substream("head-init");
        const std::int64_t fan_in = hw.value.shape()[1];
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
        for (std::int64_t i = 0; i < hw.value.numel(); ++i)
            hw.value.set_flat(i, init.uniform(-limit, limit));
        for (std::int64_t i = 0; i < hb.value.numel(); ++i) hb.value.set_flat(i, 0.0);
        return;
    }
    if (head_init.source_checkpoint.empty()) {
        throw InitError(std::string(head_init_name(head_init.scheme)) +
                        " needs a source checkpoint for the head");
    }
    const Model source = load_checkpoint(head_init.source_checkpoint);
    const Tensor& sw = source.params.at("head.weight").value;
    const Tensor& sb = source.params.at("head.bias").value;
    if (sw.shape() != hw.value.shape() || sb.shape() != hb.value.shape()) {
        throw InitError("head shape mismatch with source checkpoint: " +
                        shape_str(sw.shape()) + " vs " + shape_str(hw.value.shape()));
    }
    hw.value = sw.astype(m.dtype);
    hb.value = sb.astype(m.dtype);
}

}  // namespace

void attach(Model& model, const Strategy& strategy, const HeadInit& head_init,
            RngStream& rng) {
    if (model.attached) {
        throw ContractError("attach: model already carries a finetuning strategy");
    }
    if (!model.params.contains("head.weight") || !model.params.contains("head.bias")) {
        throw InitError("attach: model has no registered head");
    }
    const bool zero_modules = head_init.scheme == HeadInitScheme::roli;
    if (strategy.kind == StrategyKind::vpt && zero_modules) {
        // Zeroed prompts still shift every softmax denominator, so probe
        // function preservation cannot hold; the combination is rejected.
        throw InitError("robust linear initialization is not supported for vpt");
    }
    RngStream module_init = rng.substream("peft-init");

    switch (strategy.kind) {
        case StrategyKind::full_ft:
            unfreeze_all_but_transform(model);
            break;
        case StrategyKind::adapter: {
            require_vit(model, strategy.kind);
            if (strategy.adapter_reduction < 1) {
                throw ConfigError("adapter reduction must be >= 1");
            }
            const std::int64_t d = model.vit.width;
            if (d % strategy.adapter_reduction != 0) {
                throw ConfigError("adapter reduction must divide the model width");
            }
            const std::int64_t bottleneck = d / strategy.adapter_reduction;
            freeze_all(model);
            for (int i = 0; i < model.vit.depth; ++i) {
                const std::string pre = "blocks." + std::to_string(i) + ".adapter.";
                Tensor down = Tensor::zeros({bottleneck, d}, model.dtype);
                if (!zero_modules) {
                    const double limit = std::sqrt(6.0 / static_cast<double>(d));
                    for (std::int64_t k = 0; k < down.numel(); ++k)
                        down.set_flat(k, module_init.uniform(-limit, limit));
                }
                model.params.add(pre + "down.weight", std::move(down), true,
                                 Role::adapter_down);
                model.params.add(pre + "down.bias", Tensor::zeros({bottleneck}, model.dtype),
                                 true, Role::bias);
                // Up-projection starts at zero in every scheme, so the adapter
                // begins as the identity map.
                model.params.add(pre + "up.weight", Tensor::zeros({d, bottleneck}, model.dtype),
                                 true, Role::adapter_up);
                model.params.add(pre + "up.bias", Tensor::zeros({d}, model.dtype), true,
                                 Role::bias);
            }
            mark_trainable(model, "head.weight");
            mark_trainable(model, "head.bias");
            break;
        }
        case StrategyKind::lora: {
            require_vit(model, strategy.kind);
            if (strategy.lora_rank < 1) throw ConfigError("lora rank must be >= 1");
            const std::int64_t d = model.vit.width;
            const std::int64_t r = strategy.lora_rank;
            freeze_all(model);
            for (int i = 0; i < model.vit.depth; ++i) {
                for (const char* proj : {"q", "v"}) {
                    const std::string pre =
                        "blocks." + std::to_string(i) + ".attn." + proj + ".";
                    Tensor a = Tensor::zeros({r, d}, model.dtype);
                    if (!zero_modules) {
                        for (std::int64_t k = 0; k < a.numel(); ++k)
                            a.set_flat(k, module_init.normal() * 0.02);
                    }
                    model.params.add(pre + "lora_a", std::move(a), true, Role::lora_a);
                    model.params.add(pre + "lora_b", Tensor::zeros({d, r}, model.dtype), true,
                                     Role::lora_b);
                }
            }
            mark_trainable(model, "head.weight");
            mark_trainable(model, "head.bias");
            break;
        }
        case StrategyKind::bias: {
            freeze_all(model);
            for (const auto& name : model.params.names()) {
                if (model.params.at(name).role == Role::bias) mark_trainable(model, name);
            }
            mark_trainable(model, "head.weight");
            mark_trainable(model, "head.bias");
            break;
        }
        case StrategyKind::vpt: {
            require_vit(model, strategy.kind);
            if (strategy.vpt_tokens < 1) throw ConfigError("vpt needs at least one prompt token");
            const std::int64_t d = model.vit.width;
            const std::int64_t p = strategy.vpt_tokens;
            freeze_all(model);
            const double bound = std::sqrt(6.0 / static_cast<double>(d + p));
            for (int i = 0; i < model.vit.depth; ++i) {
                Tensor prompts = Tensor::zeros({p, d}, model.dtype);
                for (std::int64_t k = 0; k < prompts.numel(); ++k)
                    prompts.set_flat(k, module_init.uniform(-bound, bound));
                model.params.add("prompt." + std::to_string(i), std::move(prompts), true,
                                 Role::prompt);
            }
            mark_trainable(model, "head.weight");
            mark_trainable(model, "head.bias");
            break;
        }
        case StrategyKind::linear: {
            freeze_all(model);
            mark_trainable(model, "head.weight");
            mark_trainable(model, "head.bias");
            break;
        }
    }
    init_head(model, head_init, rng);
    model.attached = strategy;
}

void detach(Model& model) {
    std::vector<std::string> doomed;
    for (const auto& name : model.params.names()) {
        const Role role = model.params.at(name).role;
        const bool module_tensor = role == Role::prompt || role == Role::lora_a ||
                                   role == Role::lora_b || role == Role::adapter_down ||
                                   role == Role::adapter_up ||
                                   name.find(".adapter.") != std::string::npos;
        if (module_tensor) doomed.push_back(name);
    }
    for (const auto& name : doomed) model.params.remove(name);
    unfreeze_all_but_transform(model);
    model.attached.reset();
}

std::pair<std::vector<std::string>, std::vector<std::string>> partition(const Model& model) {
    if (!model.attached) {
        throw ContractError("partition: no strategy attached");
    }
    std::vector<std::string> frozen, tunable;
    for (const auto& name : model.params.names()) {
        (model.params.at(name).trainable ? tunable : frozen).push_back(name);
    }
    return {std::move(frozen), std::move(tunable)};
}

NodeId lora_forward(Tape& tape, NodeId w0, NodeId a, NodeId b, double alpha, int r,
                    NodeId x) {
    const Shape& ws = tape.value(w0).shape();
    const Shape& as = tape.value(a).shape();
    const Shape& bs = tape.value(b).shape();
    if (ws.size() != 2 || as.size() != 2 || bs.size() != 2) {
        throw ShapeError("lora_forward: W0, A, B must be matrices");
    }
    if (as[0] != r || bs[1] != r) {
        throw ShapeError("lora_forward: rank mismatch: A " + shape_str(as) + ", B " +
                         shape_str(bs) + ", r=" + std::to_string(r));
    }
    if (as[1] != ws[1] || bs[0] != ws[0]) {
        throw ShapeError("lora_forward: A/B do not factor " + shape_str(ws));
    }
    const double sc = alpha / static_cast<double>(r);
    const Tensor& xv = tape.value(x);
    if (xv.rank() == 1) {  // column-vector semantics
        const std::int64_t in = xv.shape()[0];
        const NodeId xm = tape.reshape(x, {in, 1});
        const NodeId base = tape.matmul(w0, xm);
        const NodeId delta = tape.scale(tape.matmul(b, tape.matmul(a, xm)), sc);
        return tape.reshape(tape.add(base, delta), {ws[0]});
    }
    if (xv.rank() != 2) throw ShapeError("lora_forward: x must be rank 1 or 2");
    const NodeId base = tape.matmul(x, tape.transpose(w0, {1, 0}));
    const NodeId delta = tape.scale(
        tape.matmul(tape.matmul(x, tape.transpose(a, {1, 0})), tape.transpose(b, {1, 0})), sc);
    return tape.add(base, delta);
}

NodeId adapter_forward(Tape& tape, NodeId h, NodeId w_down, NodeId b_down, NodeId w_up,
                       NodeId b_up) {
    const NodeId z = tape.gelu(tape.linear(h, w_down, b_down));
    return tape.add(h, tape.linear(z, w_up, b_up));
}

NodeId inject_prompts(Tape& tape, int layer_index, NodeId tokens, NodeId prompts,
                      int prompt_count) {
    const Shape& ts = tape.value(tokens).shape();
    const Shape& ps = tape.value(prompts).shape();
    if (ts.size() != 3 || ps.size() != 2 || ps[1] != ts[2] || ps[0] != prompt_count) {
        throw ShapeError("inject_prompts: tokens " + shape_str(ts) + " vs prompts " +
                         shape_str(ps));
    }
    const std::int64_t b = ts[0], s = ts[1], d = ts[2], p = prompt_count;
    const NodeId pb =
        tape.broadcast_to(tape.reshape(prompts, {1, p, d}), {b, p, d});
    const NodeId cls = tape.slice(tokens, 1, 0, 1);
    if (layer_index == 0) {
        return tape.concat({cls, pb, tape.slice(tokens, 1, 1, s - 1)}, 1);
    }
    if (s < 1 + p) {
        throw ShapeError("inject_prompts: sequence too short to carry prompts");
    }
    return tape.concat({cls, pb, tape.slice(tokens, 1, 1 + p, s - 1 - p)}, 1);
}

}  // namespace rfl
