#include "dgnet/ablation.hpp"

namespace dgnet {

const std::vector<AblationArm>& ablation_arms()
{
    static const std::vector<AblationArm> arms{
        {"all", "full model, all losses"},
        {"instead-all", "FRR and FRS each replaced by a size-matched CBM group"},
        {"wo-cci", "FRR without channel combination inference"},
        {"wo-fsm", "FRR without the fusion stack (1x1 projection instead)"},
        {"wo-sigmoid", "Sense blocks without the sigmoid gate"},
        {"remove-frr", "FRR deleted"},
        {"instead-frr", "FRR replaced by a size-matched CBM group"},
        {"wo-lapla", "Sense blocks without the Laplacian high-pass"},
        {"wo-senb", "Sense blocks without the smoothing tail"},
        {"remove-frs", "FRS deleted"},
        {"instead-frs", "FRS replaced by a size-matched CBM group"},
        {"wo-l1", "loss without the L1 term"},
        {"wo-ssim", "loss without the SSIM term"},
        {"wo-ld", "loss without the dynamic pseudo-label term"},
    };
    return arms;
}

void apply_arm(const std::string& name, RunConfig& config)
{
    Ablation& a = config.model.ablation;
    LossWeights& w = config.train.loss;
    if (name == "all") return;
    if (name == "instead-all") {
        a.frr_instead = true;
        a.frs_instead = true;
    } else if (name == "wo-cci") {
        a.cci = false;
    } else if (name == "wo-fsm") {
        a.fsm = false;
    } else if (name == "wo-sigmoid") {
        a.sense_sigmoid = false;
    } else if (name == "remove-frr") {
        a.frr = false;
    } else if (name == "instead-frr") {
        a.frr_instead = true;
    } else if (name == "wo-lapla") {
        a.laplacian = false;
    } else if (name == "wo-senb") {
        a.sense_tail = false;
    } else if (name == "remove-frs") {
        a.frs = false;
    } else if (name == "instead-frs") {
        a.frs_instead = true;
    } else if (name == "wo-l1") {
        w.alpha = 0.0;
    } else if (name == "wo-ssim") {
        w.beta = 0.0;
    } else if (name == "wo-ld") {
        w.gamma = 0.0;
    } else {
        std::string valid;
        for (const AblationArm& arm : ablation_arms()) valid += (valid.empty() ? "" : ", ") + arm.name;
        throw ConfigError("unknown ablation arm '" + name + "'; valid arms: " + valid);
    }
}

} // namespace dgnet
