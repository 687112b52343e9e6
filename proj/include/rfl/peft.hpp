#pragma once

#include <string>
#include <utility>
#include <vector>

#include "rfl/model.hpp"
#include "rfl/rng.hpp"
#include "rfl/strategy.hpp"
#include "rfl/tensor.hpp"

namespace rfl {

/// Attach a finetuning strategy to a backbone: adds any new modules
/// (LoRA/adapter/prompt tensors), re-initializes the head per the chosen
/// scheme, and sets the trainable mask that partitions the parameters into
/// frozen and tunable sets. Attaching twice is rejected.
void attach(Model& model, const Strategy& strategy, const HeadInit& head_init,
            RngStream& rng);

/// Remove strategy modules and the attachment mark; all parameters become
/// trainable again (bare-backbone state).
void detach(Model& model);

/// (frozen names, tunable names) — disjoint and exhaustive.
std::pair<std::vector<std::string>, std::vector<std::string>> partition(const Model& model);

// h = W0.x + (alpha/r) B.A.x  with W0 [out x in], A [r x in], B [out x r].
// x may be a vector [in] or row-major batch [... x in].
NodeId lora_forward(Tape& tape, NodeId w0, NodeId a, NodeId b, double alpha, int r,
                    NodeId x);

// Residual bottleneck inserted after each MLP block:
// h + W_up . gelu(W_down . h + b_down) + b_up.
NodeId adapter_forward(Tape& tape, NodeId h, NodeId w_down, NodeId b_down,
                       NodeId w_up, NodeId b_up);

// Layer 0 prepends the prompts right after the class token; deeper layers
// overwrite the prompt positions with that layer's own fresh prompts.
// tokens [b x S x d], prompts [p x d].
NodeId inject_prompts(Tape& tape, int layer_index, NodeId tokens, NodeId prompts,
                      int prompt_count);

}  // namespace rfl
