#include "dgnet/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>
#include <set>

#include "dgnet/image_io.hpp"

namespace dgnet {

namespace fs = std::filesystem;

bool is_image_file(const fs::path& path)
{
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

DatasetIndex::DatasetIndex(DatasetKind kind, std::vector<DatasetEntry> entries)
    : kind_(kind), entries_(std::move(entries))
{
    std::set<std::string> ids;
    for (const DatasetEntry& e : entries_) {
        if (!ids.insert(e.id).second) throw ConfigError("dataset: duplicate id '" + e.id + "'");
        if (kind_ == DatasetKind::Paired && !e.reference) {
            throw ConfigError("dataset: paired entry '" + e.id + "' has no reference");
        }
    }
}

namespace {

DatasetEntry make_entry(const fs::path& root, const std::string& id, bool paired)
{
    DatasetEntry e;
    e.id = id;
    e.raw = root / "raw" / id;
    if (!fs::is_regular_file(e.raw)) throw IoError("dataset: missing raw image " + e.raw.string());
    if (paired) {
        e.reference = root / "reference" / id;
        if (!fs::is_regular_file(*e.reference)) {
            throw IoError("dataset: missing reference image " + e.reference->string());
        }
    }
    return e;
}

} // namespace

DatasetIndex DatasetIndex::scan(const fs::path& root)
{
    const fs::path raw = root / "raw";
    if (!fs::is_directory(raw)) throw IoError("dataset: no raw/ directory under " + root.string());
    const bool paired = fs::is_directory(root / "reference");
    std::vector<std::string> ids;
    for (const auto& item : fs::recursive_directory_iterator(raw)) {
        if (item.is_regular_file() && is_image_file(item.path())) {
            ids.push_back(fs::relative(item.path(), raw).generic_string());
        }
    }
    std::sort(ids.begin(), ids.end());
    std::vector<DatasetEntry> entries;
    for (const std::string& id : ids) entries.push_back(make_entry(root, id, paired));
    return DatasetIndex(paired ? DatasetKind::Paired : DatasetKind::Unpaired, std::move(entries));
}

DatasetIndex DatasetIndex::from_manifest(const fs::path& root, const fs::path& manifest)
{
    std::ifstream in(manifest);
    if (!in) throw IoError("dataset: cannot read manifest " + manifest.string());
    const bool paired = fs::is_directory(root / "reference");
    std::vector<DatasetEntry> entries;
    std::string line;
    while (std::getline(in, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
        if (line.empty()) continue;
        entries.push_back(make_entry(root, line, paired));
    }
    return DatasetIndex(paired ? DatasetKind::Paired : DatasetKind::Unpaired, std::move(entries));
}

DatasetIndex DatasetIndex::from_directory(const fs::path& dir)
{
    if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
    std::vector<DatasetEntry> entries;
    for (const auto& item : fs::directory_iterator(dir)) {
        if (item.is_regular_file() && is_image_file(item.path())) {
            entries.push_back(DatasetEntry{item.path().filename().string(), item.path(), std::nullopt});
        }
    }
    std::sort(entries.begin(), entries.end(),
              [](const DatasetEntry& a, const DatasetEntry& b) { return a.id < b.id; });
    return DatasetIndex(DatasetKind::Unpaired, std::move(entries));
}

void DatasetIndex::write_manifest(const fs::path& path) const
{
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write manifest " + path.string());
    for (const DatasetEntry& e : entries_) out << e.id << '\n';
    if (!out) throw IoError("cannot write manifest " + path.string());
}

std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound)
{
    if (bound == 0) throw UsageError("uniform_below: empty range");
    // Largest multiple of bound representable in 64 bits, minus one.
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t v = rng();
    while (v >= limit) v = rng();
    return v % bound;
}

std::pair<DatasetIndex, DatasetIndex> split_dataset(const DatasetIndex& index, const SplitSpec& spec)
{
    if (index.kind() != DatasetKind::Paired) throw UsageError("split_dataset: index is not paired");
    if (spec.train_count + spec.val_count > index.size()) {
        throw ConfigError("split_dataset: train " + std::to_string(spec.train_count) + " + val " +
                          std::to_string(spec.val_count) + " exceeds dataset size " + std::to_string(index.size()));
    }
    std::vector<DatasetEntry> entries = index.entries();
    std::sort(entries.begin(), entries.end(), [](const DatasetEntry& a, const DatasetEntry& b) { return a.id < b.id; });
    std::mt19937_64 rng(spec.seed);
    seeded_shuffle(entries, rng);
    const auto train_end = entries.begin() + static_cast<std::ptrdiff_t>(spec.train_count);
    const auto val_end = train_end + static_cast<std::ptrdiff_t>(spec.val_count);
    return {DatasetIndex(DatasetKind::Paired, std::vector<DatasetEntry>(entries.begin(), train_end)),
            DatasetIndex(DatasetKind::Paired, std::vector<DatasetEntry>(train_end, val_end))};
}

void ResizeSchedule::validate() const
{
    if (stages < 1) throw ConfigError("resize schedule: stages must be >= 1");
    if (start_size < 16 || start_size > end_size) throw ConfigError("resize schedule: need 16 <= start <= end");
    if (start_size % 8 != 0 || end_size % 8 != 0) throw ConfigError("resize schedule: sizes must be divisible by 8");
}

int progressive_size(int epoch, int total_epochs, const ResizeSchedule& schedule)
{
    schedule.validate();
    if (total_epochs < 1 || epoch < 0 || epoch >= total_epochs) {
        throw ConfigError("progressive_size: epoch " + std::to_string(epoch) + " outside [0, " +
                          std::to_string(total_epochs) + ")");
    }
    if (schedule.stages == 1) return schedule.start_size;
    // Fewer epochs than stages: stages are skipped so the last epoch still ends
    // the schedule.
    const long long stage =
        total_epochs >= schedule.stages
            ? std::min<long long>(schedule.stages - 1, static_cast<long long>(epoch) * schedule.stages / total_epochs)
            : (total_epochs == 1 ? 0 : static_cast<long long>(epoch) * (schedule.stages - 1) / (total_epochs - 1));
    const long long size =
        schedule.start_size + stage * (schedule.end_size - schedule.start_size) / (schedule.stages - 1);
    return static_cast<int>(size / 8 * 8);
}

BatchIterator::BatchIterator(const DatasetIndex& index, int batch, int size, std::uint64_t seed, int epoch)
    : index_(&index), batch_(batch), size_(size)
{
    if (index.empty()) throw ConfigError("batch_iterator: empty dataset");
    if (index.kind() != DatasetKind::Paired) throw UsageError("batch_iterator: index is not paired");
    if (batch < 1) throw ConfigError("batch_iterator: batch must be >= 1");
    if (size < 16 || size % 8 != 0) throw ConfigError("batch_iterator: size must be >= 16 and divisible by 8");
    order_.resize(index.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(epoch)};
    std::mt19937_64 rng(seq);
    seeded_shuffle(order_, rng);
}

std::size_t BatchIterator::batch_count() const
{
    return (order_.size() + static_cast<std::size_t>(batch_) - 1) / static_cast<std::size_t>(batch_);
}

bool BatchIterator::next(Batch& out)
{
    if (cursor_ >= order_.size()) return false;
    const std::size_t end = std::min(order_.size(), cursor_ + static_cast<std::size_t>(batch_));
    std::vector<Tensor<float>> raws;
    std::vector<Tensor<float>> refs;
    out.ids.clear();
    for (std::size_t k = cursor_; k < end; ++k) {
        const DatasetEntry& e = index_->entries()[order_[k]];
        out.ids.push_back(e.id);
        Tensor<float> raw = load_image(e.raw);
        Tensor<float> ref = load_image(*e.reference);
        if (raw.shape().h != size_ || raw.shape().w != size_) raw = resize_bilinear(raw, size_);
        if (ref.shape().h != size_ || ref.shape().w != size_) ref = resize_bilinear(ref, size_);
        raws.push_back(raw);
        refs.push_back(ref);
    }
    cursor_ = end;
    out.raw = stack_batch(raws);
    out.reference = stack_batch(refs);
    return true;
}

void BatchIterator::skip(std::size_t count)
{
    cursor_ = std::min(order_.size(), cursor_ + count * static_cast<std::size_t>(batch_));
}

} // namespace dgnet
