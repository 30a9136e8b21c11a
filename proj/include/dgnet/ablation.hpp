#pragma once

#include <string>
#include <vector>

#include "dgnet/run_config.hpp"

namespace dgnet {

struct AblationArm {
    std::string name;
    std::string description;
};

/// Every module and loss ablation arm in a fixed order; "all" is the full model.
const std::vector<AblationArm>& ablation_arms();

/// Applies the arm's switches to a configuration. Throws ConfigError naming
/// the valid arms for an unknown name.
void apply_arm(const std::string& name, RunConfig& config);

} // namespace dgnet
