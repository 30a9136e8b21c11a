#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dgnet/dgnet.hpp"
#include "dgnet/trainer.hpp"

namespace dgnet {

/// Model and training settings addressed by flat dotted keys
/// (model.base_width, loss.gamma, clahe.tiles, ...).
///
/// Values are applied in order; setting model.variant to s or l also resets
/// n1, n2 and base_width to that variant's defaults.
struct RunConfig {
    ModelConfig model = ModelConfig::small();
    TrainConfig train;

    /// Throws ConfigError for an unknown key or an unparsable value.
    void set(const std::string& key, const std::string& value);
    /// "key=value", as given to --set.
    void set_assignment(const std::string& assignment);
    /// key=value lines; blank lines and lines starting with '#' are skipped.
    void merge_file(const std::filesystem::path& path);
    void merge_text(const std::string& text, const std::string& origin = "<text>");
    /// Throws ConfigError on violated model or training invariants.
    void validate() const;
    /// Every key with its effective value, one "key=value" line each, sorted by key.
    std::string dump() const;

    static std::vector<std::string> keys();
};

} // namespace dgnet
