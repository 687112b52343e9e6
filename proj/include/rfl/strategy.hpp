#pragma once

#include <string>

namespace rfl {

enum class StrategyKind { full_ft, adapter, lora, bias, vpt, linear };

const char* strategy_kind_name(StrategyKind k);
StrategyKind strategy_kind_from_name(const std::string& name);

/// Finetuning-method descriptor. Defaults follow the fixed method constants:
/// adapter reduction 8, LoRA rank/scale 16 on query+value, 10 prompt tokens.
struct Strategy {
    StrategyKind kind = StrategyKind::full_ft;
    int adapter_reduction = 8;
    int lora_rank = 16;
    double lora_alpha = 16.0;
    int vpt_tokens = 10;
};

enum class HeadInitScheme { ranli, roli, stdli, regli };

const char* head_init_name(HeadInitScheme s);
HeadInitScheme head_init_from_name(const std::string& name);

/// Linear-head initialization. RoLI/StdLI/RegLI copy the head from a source
/// checkpoint (adversarial probe, standard probe, or logistic-regression fit);
/// RanLI draws a fresh He-uniform head.
struct HeadInit {
    HeadInitScheme scheme = HeadInitScheme::ranli;
    std::string source_checkpoint;
    double regli_l2 = 1e-4;
};

}  // namespace rfl
