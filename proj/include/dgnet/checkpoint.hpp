#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "dgnet/dgnet.hpp"

namespace dgnet {

/// Checkpoint file layout (all integers little-endian):
///   "DGN1" | u32 version | u32 n, config text | u32 n, metadata text (key=value lines)
///   | u32 array count | per array: u32 n, name | u8 dtype (0 = f32) | 4 x i64 shape
///   | u64 payload offset | ... | f32 payload | u32 crc32 of every preceding byte.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointArray {
    std::string name;
    Shape shape;
    std::vector<float> data;
};

struct Checkpoint {
    ModelConfig config;
    std::map<std::string, std::string> meta;
    std::vector<CheckpointArray> arrays;

    const CheckpointArray* find(const std::string& name) const;
    /// Throws IntegrityError when the array is absent.
    const CheckpointArray& at(const std::string& name) const;
};

/// Throws IoError when the file cannot be written.
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);

/// Throws IoError for an unreadable file, IntegrityError for a truncated or
/// corrupted file or an unknown version.
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Appends every parameter and buffer of a model, each name prefixed.
void append_model_state(Checkpoint& checkpoint, DGNet<float>& model, const std::string& prefix = "");

/// Restores the arrays written by append_model_state. Throws ConfigError when
/// the checkpoint's model config differs from the model's and IntegrityError
/// when an array is missing or mis-shaped.
void load_model_state(DGNet<float>& model, const Checkpoint& checkpoint, const std::string& prefix = "");

/// Model for inference: EMA weights when present, else the raw weights.
DGNet<float> load_inference_model(const std::filesystem::path& path);

} // namespace dgnet
