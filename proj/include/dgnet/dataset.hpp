#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "dgnet/tensor.hpp"

namespace dgnet {

struct DatasetEntry {
    std::string id; ///< path relative to raw/, also the reference file name
    std::filesystem::path raw;
    std::optional<std::filesystem::path> reference;
};

enum class DatasetKind { Paired, Unpaired };

/// Images under <root>/raw with same-named counterparts under <root>/reference.
class DatasetIndex {
public:
    DatasetIndex() = default;
    DatasetIndex(DatasetKind kind, std::vector<DatasetEntry> entries);

    /// Every PNG / JPEG under root/raw (recursively); paired when root/reference
    /// exists, in which case each raw file needs its counterpart.
    static DatasetIndex scan(const std::filesystem::path& root);
    /// Entries listed in a manifest of relative paths, one per line.
    static DatasetIndex from_manifest(const std::filesystem::path& root, const std::filesystem::path& manifest);
    /// All image files directly in dir, unpaired.
    static DatasetIndex from_directory(const std::filesystem::path& dir);

    void write_manifest(const std::filesystem::path& path) const;

    DatasetKind kind() const { return kind_; }
    const std::vector<DatasetEntry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }

private:
    DatasetKind kind_ = DatasetKind::Paired;
    std::vector<DatasetEntry> entries_;
};

bool is_image_file(const std::filesystem::path& path);

struct SplitSpec {
    std::size_t train_count = 800;
    std::size_t val_count = 90;
    std::uint64_t seed = 0;
};

/// Seeded shuffle of the id-sorted entries, then a prefix split. Throws
/// ConfigError when the counts exceed the dataset and UsageError for an
/// unpaired index.
std::pair<DatasetIndex, DatasetIndex> split_dataset(const DatasetIndex& index, const SplitSpec& spec);

/// Uniform integer in [0, bound) by rejection sampling; independent of the
/// standard library's distribution implementations.
std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound);

template <class Item>
void seeded_shuffle(std::vector<Item>& items, std::mt19937_64& rng)
{
    for (std::size_t i = items.size(); i > 1; --i) {
        std::swap(items[i - 1], items[uniform_below(rng, i)]);
    }
}

struct ResizeSchedule {
    int start_size = 256;
    int end_size = 400;
    int stages = 4;

    void validate() const;
};

/// Stage floor(epoch * stages / total_epochs), sized start + stage * (end - start)
/// / (stages - 1) and rounded down to a multiple of 8. With fewer epochs than
/// stages the stage is epoch * (stages - 1) / (total_epochs - 1).
int progressive_size(int epoch, int total_epochs, const ResizeSchedule& schedule);

struct Batch {
    std::vector<std::string> ids;
    Tensor<float> raw;
    Tensor<float> reference;
};

/// One epoch of batches over a paired index. Order depends only on
/// (seed, epoch); the last batch may be smaller. Images are resized to
/// size x size.
class BatchIterator {
public:
    BatchIterator(const DatasetIndex& index, int batch, int size, std::uint64_t seed, int epoch);

    std::size_t batch_count() const;
    const std::vector<std::size_t>& order() const { return order_; }
    /// Loads the next batch; false once the epoch is exhausted.
    bool next(Batch& out);
    /// Advances past `count` batches without loading them.
    void skip(std::size_t count);

private:
    const DatasetIndex* index_;
    int batch_;
    int size_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
};

} // namespace dgnet
