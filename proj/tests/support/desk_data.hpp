#pragma once

#include <cstdint>
#include <filesystem>

#include "dgnet/dataset.hpp"

namespace dgnet::testing {

/// Fresh empty directory under the system temp dir.
std::filesystem::path scratch_dir(const std::string& name);

/// 24 paired 96x96 images: references are quadrant crops of the natural
/// fixtures, raw images apply per-channel gains (0.55, 0.9, 1.0) and Gaussian
/// noise (sigma 0.02). Written as PNGs under root/raw and root/reference.
DatasetIndex make_desk_dataset(const std::filesystem::path& root, std::uint64_t seed = 7);

/// Small paired dataset of `count` synthetic size x size images.
DatasetIndex make_tiny_dataset(const std::filesystem::path& root, int count, int size, std::uint64_t seed = 3);

} // namespace dgnet::testing
