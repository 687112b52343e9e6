#pragma once

#include <string>

#include "rfl/pipeline.hpp"

namespace rfl {

/// Parse "p/q" rationals ("8/255") or plain decimals. Rationals are converted
/// exactly once, here, to the nearest 32-bit float (widened back to double);
/// the chosen expansion is echoed to stderr.
double parse_rational(const std::string& text);

/// INI-style config: sections [data] [model] [strategy] [attack.train]
/// [attack.eval] [optim] [schedule] [pipeline]; unknown sections or keys are
/// rejected.
ExperimentConfig load_config_file(const std::string& path);
ExperimentConfig parse_config_text(const std::string& text, const std::string& origin);

// One key assignment (also backs CLI overrides).
void apply_config_value(ExperimentConfig& cfg, const std::string& section,
                        const std::string& key, const std::string& value);

// Fully resolved INI text; doubles rendered with enough digits to round-trip
// bit-exactly, so a frozen copy reproduces the run.
std::string render_config(const ExperimentConfig& cfg);

}  // namespace rfl
