#include "rfl/model.hpp"

#include <algorithm>
#include <cmath>

#include "rfl/peft.hpp"

namespace rfl {

namespace {

void fill_uniform(Tensor& t, RngStream& rng, double lo, double hi) {
    for (std::int64_t i = 0; i < t.numel(); ++i) t.set_flat(i, rng.uniform(lo, hi));
}

void fill_he_uniform(Tensor& t, RngStream& rng, std::int64_t fan_in) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    fill_uniform(t, rng, -limit, limit);
}

void fill_trunc_normal(Tensor& t, RngStream& rng, double sigma) {
    for (std::int64_t i = 0; i < t.numel(); ++i) t.set_flat(i, rng.truncated_normal(sigma));
}

std::string block_name(int i, const char* suffix) {
    return "blocks." + std::to_string(i) + "." + suffix;
}

}  // namespace

const char* role_name(Role r) {
    switch (r) {
        case Role::weight: return "weight";
        case Role::bias: return "bias";
        case Role::norm: return "norm";
        case Role::head_weight: return "head-weight";
        case Role::head_bias: return "head-bias";
        case Role::prompt: return "prompt";
        case Role::lora_a: return "lora-A";
        case Role::lora_b: return "lora-B";
        case Role::adapter_down: return "adapter-down";
        case Role::adapter_up: return "adapter-up";
    }
    return "?";
}

const char* strategy_kind_name(StrategyKind k) {
    switch (k) {
        case StrategyKind::full_ft: return "full_ft";
        case StrategyKind::adapter: return "adapter";
        case StrategyKind::lora: return "lora";
        case StrategyKind::bias: return "bias";
        case StrategyKind::vpt: return "vpt";
        case StrategyKind::linear: return "linear";
    }
    return "?";
}

StrategyKind strategy_kind_from_name(const std::string& name) {
    if (name == "full_ft" || name == "full-ft" || name == "full") return StrategyKind::full_ft;
    if (name == "adapter") return StrategyKind::adapter;
    if (name == "lora") return StrategyKind::lora;
    if (name == "bias") return StrategyKind::bias;
    if (name == "vpt") return StrategyKind::vpt;
    if (name == "linear") return StrategyKind::linear;
    throw ConfigError("unknown strategy kind: " + name);
}

const char* head_init_name(HeadInitScheme s) {
    switch (s) {
        case HeadInitScheme::ranli: return "ranli";
        case HeadInitScheme::roli: return "roli";
        case HeadInitScheme::stdli: return "stdli";
        case HeadInitScheme::regli: return "regli";
    }
    return "?";
}

HeadInitScheme head_init_from_name(const std::string& name) {
    if (name == "ranli") return HeadInitScheme::ranli;
    if (name == "roli") return HeadInitScheme::roli;
    if (name == "stdli") return HeadInitScheme::stdli;
    if (name == "regli") return HeadInitScheme::regli;
    throw ConfigError("unknown head init scheme: " + name);
}

// --- ParameterStore -----------------------------------------------------------

void ParameterStore::add(const std::string& name, Tensor value, bool trainable, Role role) {
    if (map_.count(name)) throw ContractError("duplicate parameter name: " + name);
    order_.push_back(name);
    map_[name] = Param{std::move(value), trainable, role};
}

void ParameterStore::remove(const std::string& name) {
    if (!map_.erase(name)) throw ContractError("no parameter named " + name);
    order_.erase(std::find(order_.begin(), order_.end(), name));
}

bool ParameterStore::contains(const std::string& name) const { return map_.count(name) > 0; }

Param& ParameterStore::at(const std::string& name) {
    auto it = map_.find(name);
    if (it == map_.end()) throw ContractError("no parameter named " + name);
    return it->second;
}

const Param& ParameterStore::at(const std::string& name) const {
    auto it = map_.find(name);
    if (it == map_.end()) throw ContractError("no parameter named " + name);
    return it->second;
}

std::int64_t ParameterStore::count(bool trainable_only) const {
    std::int64_t n = 0;
    for (const auto& name : order_) {
        const Param& p = at(name);
        if (!trainable_only || p.trainable) n += p.value.numel();
    }
    return n;
}

void ParameterStore::set_all_trainable(bool trainable) {
    for (const auto& name : order_) at(name).trainable = trainable;
}

// --- configs -------------------------------------------------------------------

void ViTConfig::validate() const {
    if (image_side <= 0 || channels <= 0 || patch <= 0 || depth <= 0 || width <= 0 ||
        heads <= 0 || mlp_ratio <= 0 || classes <= 0) {
        throw ConfigError("tiny-vit config: all dimensions must be positive");
    }
    if (image_side % patch != 0) {
        throw ConfigError("tiny-vit config: image side " + std::to_string(image_side) +
                          " not divisible by patch " + std::to_string(patch));
    }
    if (width % heads != 0) {
        throw ConfigError("tiny-vit config: width " + std::to_string(width) +
                          " not divisible by heads " + std::to_string(heads));
    }
}

int Model::classes() const {
    if (arch == Arch::vit) return vit.classes;
    return static_cast<int>(params.at("head.weight").value.shape()[0]);
}

// --- builders -------------------------------------------------------------------

namespace {

void add_transform_params(Model& m) {
    const auto c = static_cast<std::int64_t>(m.transform.mean.size());
    if (m.transform.mean.size() != m.transform.std_dev.size()) {
        throw ConfigError("input transform: mean/std channel counts differ");
    }
    for (double s : m.transform.std_dev) {
        if (!(s > 0.0)) throw ConfigError("input transform: std must be strictly positive");
    }
    m.params.add("input.mean", Tensor::from_values({c}, m.transform.mean, m.dtype), false,
                 Role::norm);
    m.params.add("input.std", Tensor::from_values({c}, m.transform.std_dev, m.dtype), false,
                 Role::norm);
}

}  // namespace

Model build_mlp(const std::vector<int>& layer_widths, int classes,
                const InputTransform& transform, RngStream& rng, Dtype dtype) {
    if (layer_widths.size() < 2) {
        throw ConfigError("mlp needs an input width and at least one hidden layer");
    }
    Model m;
    m.arch = Arch::mlp;
    m.mlp_widths = layer_widths;
    m.transform = transform;
    m.dtype = dtype;
    add_transform_params(m);
    RngStream init = rng.substream("init");
    for (std::size_t i = 0; i + 1 < layer_widths.size(); ++i) {
        const std::int64_t in = layer_widths[i], out = layer_widths[i + 1];
        Tensor w = Tensor::zeros({out, in}, dtype);
        fill_he_uniform(w, init, in);
        m.params.add("layers." + std::to_string(i) + ".weight", std::move(w), true, Role::weight);
        m.params.add("layers." + std::to_string(i) + ".bias", Tensor::zeros({out}, dtype), true,
                     Role::bias);
    }
    const std::int64_t feat = layer_widths.back();
    Tensor hw = Tensor::zeros({classes, feat}, dtype);
    fill_he_uniform(hw, init, feat);
    m.params.add("head.weight", std::move(hw), true, Role::head_weight);
    m.params.add("head.bias", Tensor::zeros({classes}, dtype), true, Role::head_bias);
    return m;
}

Model build_tiny_vit(const ViTConfig& cfg, const InputTransform& transform, RngStream& rng,
                     Dtype dtype) {
    cfg.validate();
    Model m;
    m.arch = Arch::vit;
    m.vit = cfg;
    m.transform = transform;
    m.dtype = dtype;
    add_transform_params(m);
    RngStream init = rng.substream("init");
    const std::int64_t d = cfg.width;
    const std::int64_t patch_dim =
        static_cast<std::int64_t>(cfg.channels) * cfg.patch * cfg.patch;

    Tensor pe = Tensor::zeros({d, patch_dim}, dtype);
    fill_he_uniform(pe, init, patch_dim);
    m.params.add("patch_embed.weight", std::move(pe), true, Role::weight);
    m.params.add("patch_embed.bias", Tensor::zeros({d}, dtype), true, Role::bias);

    Tensor cls = Tensor::zeros({1, 1, d}, dtype);
    fill_trunc_normal(cls, init, 0.02);
    m.params.add("cls_token", std::move(cls), true, Role::weight);
    Tensor pos = Tensor::zeros({1, cfg.seq_len(), d}, dtype);
    fill_trunc_normal(pos, init, 0.02);
    m.params.add("pos_embed", std::move(pos), true, Role::weight);

    for (int i = 0; i < cfg.depth; ++i) {
        m.params.add(block_name(i, "ln1.gain"), Tensor::full({d}, 1.0, dtype), true, Role::norm);
        m.params.add(block_name(i, "ln1.bias"), Tensor::zeros({d}, dtype), true, Role::bias);
        for (const char* proj : {"attn.q", "attn.k", "attn.v", "attn.out"}) {
            Tensor w = Tensor::zeros({d, d}, dtype);
            fill_he_uniform(w, init, d);
            m.params.add(block_name(i, (std::string(proj) + ".weight").c_str()), std::move(w),
                         true, Role::weight);
            m.params.add(block_name(i, (std::string(proj) + ".bias").c_str()),
                         Tensor::zeros({d}, dtype), true, Role::bias);
        }
        m.params.add(block_name(i, "ln2.gain"), Tensor::full({d}, 1.0, dtype), true, Role::norm);
        m.params.add(block_name(i, "ln2.bias"), Tensor::zeros({d}, dtype), true, Role::bias);
        const std::int64_t hidden = d * cfg.mlp_ratio;
        Tensor w1 = Tensor::zeros({hidden, d}, dtype);
        fill_he_uniform(w1, init, d);
        m.params.add(block_name(i, "mlp.fc1.weight"), std::move(w1), true, Role::weight);
        m.params.add(block_name(i, "mlp.fc1.bias"), Tensor::zeros({hidden}, dtype), true,
                     Role::bias);
        Tensor w2 = Tensor::zeros({d, hidden}, dtype);
        fill_he_uniform(w2, init, hidden);
        m.params.add(block_name(i, "mlp.fc2.weight"), std::move(w2), true, Role::weight);
        m.params.add(block_name(i, "mlp.fc2.bias"), Tensor::zeros({d}, dtype), true, Role::bias);
    }
    m.params.add("ln_f.gain", Tensor::full({d}, 1.0, dtype), true, Role::norm);
    m.params.add("ln_f.bias", Tensor::zeros({d}, dtype), true, Role::bias);

    Tensor hw = Tensor::zeros({cfg.classes, d}, dtype);
    fill_he_uniform(hw, init, d);
    m.params.add("head.weight", std::move(hw), true, Role::head_weight);
    m.params.add("head.bias", Tensor::zeros({cfg.classes}, dtype), true, Role::head_bias);
    return m;
}

// --- forward --------------------------------------------------------------------

namespace {

struct Builder {
    Tape& tape;
    const Model& m;
    const ForwardOptions& opts;
    std::map<std::string, NodeId> leaves;
    ForwardBuild out;

    NodeId param(const std::string& name) {
        auto it = leaves.find(name);
        if (it != leaves.end()) return it->second;
        const Param& p = m.params.at(name);
        const bool rg = opts.params_require_grad && p.trainable;
        const NodeId id = tape.leaf(p.value, rg);
        leaves.emplace(name, id);
        if (rg) out.param_nodes.emplace_back(name, id);
        return id;
    }

    NodeId transform_input(const Tensor& x_raw) {
        if (x_raw.rank() != 4) {
            throw InputError("forward: input must be [b,C,H,W], got " + shape_str(x_raw.shape()));
        }
        if (opts.strict_range) {
            for (std::int64_t i = 0; i < x_raw.numel(); ++i) {
                const double v = x_raw.get_flat(i);
                if (!(v >= 0.0 && v <= 1.0)) {
                    throw InputError("forward: pixel " + std::to_string(v) +
                                     " outside [0,1] (strict mode)");
                }
            }
        }
        out.input = tape.leaf(x_raw, opts.input_requires_grad);
        NodeId x = out.input;
        if (m.transform.resize_to > 0) {
            x = tape.bilinear_resize(x, m.transform.resize_to, m.transform.resize_to);
        }
        const auto c = static_cast<std::int64_t>(m.transform.mean.size());
        const NodeId mean = tape.reshape(param("input.mean"), {1, c, 1, 1});
        // Reciprocal is precomputed so the graph stays multiply-only.
        Tensor inv_std = Tensor::zeros({c}, m.dtype);
        {
            const Tensor& sd = m.params.at("input.std").value;
            for (std::int64_t i = 0; i < c; ++i) inv_std.set_flat(i, 1.0 / sd.get_flat(i));
        }
        const NodeId inv = tape.reshape(tape.leaf(inv_std, false), {1, c, 1, 1});
        return tape.mul(tape.sub(x, mean), inv);
    }

    NodeId linear_param(NodeId x, const std::string& prefix) {
        return tape.linear(x, param(prefix + ".weight"), param(prefix + ".bias"));
    }

    // q/v projections carry the low-rank branch when LoRA is attached.
    NodeId projection(NodeId x, const std::string& prefix, bool lora_target) {
        NodeId y = linear_param(x, prefix);
        if (lora_target && m.attached && m.attached->kind == StrategyKind::lora) {
            const Strategy& s = *m.attached;
            const NodeId a = param(prefix + ".lora_a");
            const NodeId b = param(prefix + ".lora_b");
            const double sc = s.lora_alpha / static_cast<double>(s.lora_rank);
            const NodeId delta =
                tape.scale(tape.matmul(tape.matmul(x, tape.transpose(a, {1, 0})),
                                       tape.transpose(b, {1, 0})),
                           sc);
            y = tape.add(y, delta);
        }
        return y;
    }

    NodeId attention(NodeId seq, int block, std::int64_t b, std::int64_t s) {
        const std::int64_t d = m.vit.width;
        const std::int64_t heads = m.vit.heads;
        const std::int64_t hd = d / heads;
        const std::string pre = "blocks." + std::to_string(block) + ".attn.";
        const NodeId flat = tape.reshape(seq, {b * s, d});
        const auto split = [&](NodeId proj) {
            return tape.transpose(tape.reshape(proj, {b, s, heads, hd}), {0, 2, 1, 3});
        };
        const NodeId q = split(projection(flat, pre + "q", true));
        const NodeId k = split(projection(flat, pre + "k", false));
        const NodeId v = split(projection(flat, pre + "v", true));
        const NodeId scores =
            tape.scale(tape.matmul(q, tape.transpose(k, {0, 1, 3, 2})),
                       1.0 / std::sqrt(static_cast<double>(hd)));
        const NodeId probs = tape.softmax(scores, 3);
        if (opts.capture) opts.capture->attention_probs.push_back(probs);
        const NodeId ctx = tape.matmul(probs, v);  // [b, heads, s, hd]
        const NodeId merged = tape.reshape(tape.transpose(ctx, {0, 2, 1, 3}), {b * s, d});
        return tape.reshape(linear_param(merged, pre + "out"), {b, s, d});
    }

    NodeId vit_block(NodeId seq, int block, std::int64_t b, std::int64_t s) {
        const std::string bn = "blocks." + std::to_string(block) + ".";
        const NodeId h1 = tape.layer_norm(seq, param(bn + "ln1.gain"), param(bn + "ln1.bias"));
        seq = tape.add(seq, attention(h1, block, b, s));
        const NodeId h2 = tape.layer_norm(seq, param(bn + "ln2.gain"), param(bn + "ln2.bias"));
        NodeId mlp = tape.linear(tape.gelu(linear_param(h2, bn + "mlp.fc1")),
                                 param(bn + "mlp.fc2.weight"), param(bn + "mlp.fc2.bias"));
        if (m.attached && m.attached->kind == StrategyKind::adapter) {
            mlp = adapter_forward(tape, mlp, param(bn + "adapter.down.weight"),
                                  param(bn + "adapter.down.bias"),
                                  param(bn + "adapter.up.weight"),
                                  param(bn + "adapter.up.bias"));
        }
        return tape.add(seq, mlp);
    }

    NodeId vit_forward(NodeId x) {
        const ViTConfig& cfg = m.vit;
        const std::int64_t b = tape.value(x).shape()[0];
        const std::int64_t d = cfg.width;
        const NodeId patches = tape.extract_patches(x, cfg.patch);
        const std::int64_t np = tape.value(patches).shape()[1];
        const NodeId emb = tape.reshape(
            linear_param(tape.reshape(patches, {b * np, tape.value(patches).shape()[2]}),
                         "patch_embed"),
            {b, np, d});
        const NodeId cls = tape.broadcast_to(param("cls_token"), {b, 1, d});
        NodeId seq = tape.concat({cls, emb}, 1);
        seq = tape.add(seq, param("pos_embed"));
        std::int64_t s = np + 1;
        const bool vpt = m.attached && m.attached->kind == StrategyKind::vpt;
        for (int i = 0; i < cfg.depth; ++i) {
            if (vpt) {
                const int p = m.attached->vpt_tokens;
                seq = inject_prompts(tape, i, seq, param("prompt." + std::to_string(i)), p);
                s = tape.value(seq).shape()[1];
            }
            seq = vit_block(seq, i, b, s);
        }
        const NodeId normed =
            tape.layer_norm(seq, param("ln_f.gain"), param("ln_f.bias"));
        const NodeId cls_out = tape.reshape(tape.slice(normed, 1, 0, 1), {b, d});
        out.features = cls_out;
        return linear_param(cls_out, "head");
    }

    NodeId mlp_forward(NodeId x) {
        const Tensor& xv = tape.value(x);
        const std::int64_t b = xv.shape()[0];
        const std::int64_t dim = xv.numel() / b;
        if (!m.mlp_widths.empty() && m.mlp_widths[0] != dim) {
            throw InputError("forward: flattened input dim " + std::to_string(dim) +
                             " does not match configured width " +
                             std::to_string(m.mlp_widths[0]));
        }
        NodeId h = tape.reshape(x, {b, dim});
        for (std::size_t i = 0; i + 1 < m.mlp_widths.size(); ++i) {
            h = tape.relu(linear_param(h, "layers." + std::to_string(i)));
        }
        out.features = h;
        return linear_param(h, "head");
    }
};

}  // namespace

ForwardBuild model_forward(Tape& tape, const Model& model, const Tensor& x_raw,
                           const ForwardOptions& opts) {
    if (x_raw.dtype() != model.dtype) {
        throw ContractError("forward: input precision differs from model precision");
    }
    if (tape.dtype() != model.dtype) {
        throw ContractError("forward: tape precision differs from model precision");
    }
    Builder builder{tape, model, opts, {}, {}};
    const NodeId x = builder.transform_input(x_raw);
    builder.out.logits =
        model.arch == Arch::vit ? builder.vit_forward(x) : builder.mlp_forward(x);
    return std::move(builder.out);
}

Tensor model_logits(const Model& model, const Tensor& x_raw, bool strict_range) {
    Tape tape(model.dtype);
    ForwardOptions opts;
    opts.strict_range = strict_range;
    const ForwardBuild fb = model_forward(tape, model, x_raw, opts);
    return tape.value(fb.logits);
}

Tensor model_features(const Model& model, const Tensor& x_raw) {
    Tape tape(model.dtype);
    const ForwardBuild fb = model_forward(tape, model, x_raw, {});
    return tape.value(fb.features);
}

std::int64_t count_params(const Model& model, bool trainable_only) {
    // input.mean / input.std are fixed transform constants, not weights.
    std::int64_t n = 0;
    for (const auto& name : model.params.names()) {
        if (name == "input.mean" || name == "input.std") continue;
        const Param& p = model.params.at(name);
        if (!trainable_only || p.trainable) n += p.value.numel();
    }
    return n;
}

void replace_head(Model& model, int classes) {
    if (classes < 1) throw ConfigError("replace_head: class count must be >= 1");
    const std::int64_t feat = model.params.at("head.weight").value.shape()[1];
    const bool trainable = model.params.at("head.weight").trainable;
    model.params.remove("head.weight");
    model.params.remove("head.bias");
    model.params.add("head.weight", Tensor::zeros({classes, feat}, model.dtype), trainable,
                     Role::head_weight);
    model.params.add("head.bias", Tensor::zeros({classes}, model.dtype), trainable,
                     Role::head_bias);
    if (model.arch == Arch::vit) model.vit.classes = classes;
}

void convert_model_dtype(Model& model, Dtype dtype) {
    if (model.dtype == dtype) return;
    model.dtype = dtype;
    for (const auto& name : model.params.names()) {
        Param& p = model.params.at(name);
        p.value = p.value.astype(dtype);
    }
}

}  // namespace rfl
