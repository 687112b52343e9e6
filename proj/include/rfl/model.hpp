#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rfl/rng.hpp"
#include "rfl/strategy.hpp"
#include "rfl/tensor.hpp"

namespace rfl {

enum class Role : std::uint8_t {
    weight = 0,
    bias = 1,
    norm = 2,
    head_weight = 3,
    head_bias = 4,
    prompt = 5,
    lora_a = 6,
    lora_b = 7,
    adapter_down = 8,
    adapter_up = 9,
};

const char* role_name(Role r);

struct Param {
    Tensor value;
    bool trainable = true;
    Role role = Role::weight;
};

/// Named parameter tensors with trainable flags and roles. The trainable set
/// is the tunable partition; its complement stays frozen during finetuning.
/// Registration order is stable and defines checkpoint layout.
class ParameterStore {
public:
    void add(const std::string& name, Tensor value, bool trainable, Role role);
    void remove(const std::string& name);
    bool contains(const std::string& name) const;
    Param& at(const std::string& name);
    const Param& at(const std::string& name) const;
    const std::vector<std::string>& names() const { return order_; }
    std::size_t size() const { return order_.size(); }
    std::int64_t count(bool trainable_only) const;
    void set_all_trainable(bool trainable);

private:
    std::vector<std::string> order_;
    std::map<std::string, Param> map_;
};

struct ViTConfig {
    int image_side = 28;
    int channels = 1;
    int patch = 7;
    int depth = 4;
    int width = 256;
    int heads = 4;
    int mlp_ratio = 4;
    int classes = 10;

    int patches_per_side() const { return image_side / patch; }
    int seq_len() const { return 1 + patches_per_side() * patches_per_side(); }
    void validate() const;  // throws ConfigError
};

/// Pixel-space normalization (and optional differentiable bilinear resize)
/// folded into the forward pass as its first, non-trainable stage, so attacks
/// always operate on raw [0,1] pixels.
struct InputTransform {
    std::vector<double> mean{0.5};
    std::vector<double> std_dev{0.5};
    int resize_to = 0;  // 0 = no resize
};

enum class Arch { mlp, vit };

struct Model {
    Arch arch = Arch::vit;
    ViTConfig vit;
    std::vector<int> mlp_widths;  // [input dim, hidden...]
    InputTransform transform;
    Dtype dtype = Dtype::f32;
    ParameterStore params;
    std::optional<Strategy> attached;

    int classes() const;
};

struct ForwardCapture {
    std::vector<NodeId> attention_probs;  // one per block, post-softmax
};

struct ForwardOptions {
    bool input_requires_grad = false;
    bool params_require_grad = false;  // trainable params only
    bool strict_range = true;          // reject pixels outside [0,1]
    ForwardCapture* capture = nullptr;
};

struct ForwardBuild {
    NodeId input = -1;
    NodeId logits = -1;
    NodeId features = -1;  // pre-head representation
    std::vector<std::pair<std::string, NodeId>> param_nodes;  // grad-requiring params
};

Model build_mlp(const std::vector<int>& layer_widths, int classes,
                const InputTransform& transform, RngStream& rng,
                Dtype dtype = Dtype::f32);

Model build_tiny_vit(const ViTConfig& cfg, const InputTransform& transform,
                     RngStream& rng, Dtype dtype = Dtype::f32);

ForwardBuild model_forward(Tape& tape, const Model& model, const Tensor& x_raw,
                           const ForwardOptions& opts = {});

// Convenience evaluation without gradients.
Tensor model_logits(const Model& model, const Tensor& x_raw, bool strict_range = true);
Tensor model_features(const Model& model, const Tensor& x_raw);

std::int64_t count_params(const Model& model, bool trainable_only);

// Swap the classification head for a fresh zero-valued one with the given
// class count (used when moving a backbone to a new task).
void replace_head(Model& model, int classes);

// Convert every parameter tensor (used to run a checkpoint in 64-bit
// gradient-check mode).
void convert_model_dtype(Model& model, Dtype dtype);

}  // namespace rfl
