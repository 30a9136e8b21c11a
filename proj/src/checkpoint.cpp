#include "dgnet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include <zlib.h>

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

namespace dgnet {

namespace {

constexpr char kMagic[4] = {'D', 'G', 'N', '1'};

class Writer {
public:
    template <class V>
    void put(V value)
    {
        const auto* p = reinterpret_cast<const char*>(&value);
        bytes_.insert(bytes_.end(), p, p + sizeof(V));
    }
    void put_bytes(const void* data, std::size_t size)
    {
        const auto* p = static_cast<const char*>(data);
        bytes_.insert(bytes_.end(), p, p + size);
    }
    void put_string(const std::string& s)
    {
        put(static_cast<std::uint32_t>(s.size()));
        put_bytes(s.data(), s.size());
    }
    std::vector<char>& bytes() { return bytes_; }

private:
    std::vector<char> bytes_;
};

class Reader {
public:
    Reader(const std::vector<char>& bytes, std::size_t limit) : bytes_(bytes), limit_(limit) {}

    template <class V>
    V get()
    {
        V value;
        std::memcpy(&value, take(sizeof(V)), sizeof(V));
        return value;
    }
    std::string get_string()
    {
        const auto n = get<std::uint32_t>();
        const char* p = take(n);
        return std::string(p, n);
    }
    const char* take(std::size_t n)
    {
        if (n > limit_ - pos_) throw IntegrityError("checkpoint truncated");
        const char* p = bytes_.data() + pos_;
        pos_ += n;
        return p;
    }
    std::size_t pos() const { return pos_; }

private:
    const std::vector<char>& bytes_;
    std::size_t limit_;
    std::size_t pos_ = 0;
};

std::uint32_t crc_of(const char* data, std::size_t size)
{
    uLong crc = crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; feed in bounded pieces.
    while (size > 0) {
        const auto piece = static_cast<uInt>(std::min<std::size_t>(size, 1u << 30));
        crc = crc32(crc, reinterpret_cast<const Bytef*>(data), piece);
        data += piece;
        size -= piece;
    }
    return static_cast<std::uint32_t>(crc);
}

std::string meta_text(const std::map<std::string, std::string>& meta)
{
    std::string out;
    for (const auto& [k, v] : meta) out += k + "=" + v + "\n";
    return out;
}

std::map<std::string, std::string> parse_meta(const std::string& text)
{
    std::map<std::string, std::string> meta;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw IntegrityError("checkpoint: malformed metadata line '" + line + "'");
        meta[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return meta;
}

} // namespace

const CheckpointArray* Checkpoint::find(const std::string& name) const
{
    for (const CheckpointArray& a : arrays) {
        if (a.name == name) return &a;
    }
    return nullptr;
}

const CheckpointArray& Checkpoint::at(const std::string& name) const
{
    const CheckpointArray* a = find(name);
    if (a == nullptr) throw IntegrityError("checkpoint: missing array '" + name + "'");
    return *a;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint)
{
    Writer w;
    w.put_bytes(kMagic, 4);
    w.put(kCheckpointVersion);
    w.put_string(checkpoint.config.serialize());
    w.put_string(meta_text(checkpoint.meta));
    w.put(static_cast<std::uint32_t>(checkpoint.arrays.size()));

    std::uint64_t offset = 0;
    for (const CheckpointArray& a : checkpoint.arrays) {
        if (a.data.size() != a.shape.numel()) {
            throw UsageError("checkpoint: array '" + a.name + "' length does not match its shape");
        }
        w.put_string(a.name);
        w.put(std::uint8_t{0});
        w.put(a.shape.n);
        w.put(a.shape.c);
        w.put(a.shape.h);
        w.put(a.shape.w);
        w.put(offset);
        offset += a.data.size() * sizeof(float);
    }
    for (const CheckpointArray& a : checkpoint.arrays) w.put_bytes(a.data.data(), a.data.size() * sizeof(float));
    w.put(crc_of(w.bytes().data(), w.bytes().size()));

    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
    }
    // Write to a sibling and rename so a crash never leaves a partial file.
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write checkpoint " + path.string());
        out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
        if (!out) throw IoError("cannot write checkpoint " + path.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot write checkpoint " + path.string() + ": " + ec.message());
}

Checkpoint read_checkpoint(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read checkpoint " + path.string());
    const std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw IntegrityError("not a checkpoint (bad magic or truncated): " + path.string());
    }
    const std::size_t body = bytes.size() - sizeof(std::uint32_t);
    std::uint32_t stored = 0;
    std::memcpy(&stored, bytes.data() + body, sizeof stored);

    Reader r(bytes, body);
    r.take(4);
    const auto version = r.get<std::uint32_t>();
    if (version != kCheckpointVersion) {
        throw IntegrityError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                             std::to_string(kCheckpointVersion) + ")");
    }
    if (crc_of(bytes.data(), body) != stored) throw IntegrityError("checkpoint checksum mismatch: " + path.string());

    Checkpoint ck;
    try {
        ck.config = ModelConfig::parse(r.get_string());
    } catch (const ConfigError& e) {
        throw IntegrityError(std::string("checkpoint: unreadable model config: ") + e.what());
    }
    ck.meta = parse_meta(r.get_string());
    const auto count = r.get<std::uint32_t>();
    struct Entry {
        std::string name;
        Shape shape;
        std::uint64_t offset;
    };
    std::vector<Entry> entries;
    for (std::uint32_t i = 0; i < count; ++i) {
        Entry e;
        e.name = r.get_string();
        if (r.get<std::uint8_t>() != 0) throw IntegrityError("checkpoint: unknown dtype for '" + e.name + "'");
        e.shape.n = r.get<std::int64_t>();
        e.shape.c = r.get<std::int64_t>();
        e.shape.h = r.get<std::int64_t>();
        e.shape.w = r.get<std::int64_t>();
        if (e.shape.n < 0 || e.shape.c < 0 || e.shape.h < 0 || e.shape.w < 0) {
            throw IntegrityError("checkpoint: negative extent for '" + e.name + "'");
        }
        e.offset = r.get<std::uint64_t>();
        entries.push_back(std::move(e));
    }
    const std::size_t payload = r.pos();
    for (Entry& e : entries) {
        const std::size_t size = e.shape.numel() * sizeof(float);
        if (e.offset > body - payload || size > body - payload - e.offset) {
            throw IntegrityError("checkpoint: array '" + e.name + "' exceeds the payload");
        }
        CheckpointArray a;
        a.name = std::move(e.name);
        a.shape = e.shape;
        a.data.resize(e.shape.numel());
        std::memcpy(a.data.data(), bytes.data() + payload + e.offset, size);
        ck.arrays.push_back(std::move(a));
    }
    return ck;
}

void append_model_state(Checkpoint& checkpoint, DGNet<float>& model, const std::string& prefix)
{
    for (Parameter<float>* p : model.parameters()) {
        checkpoint.arrays.push_back(
            {prefix + p->name, p->tensor.shape(), std::vector<float>(p->tensor.data().begin(), p->tensor.data().end())});
    }
    model.visit_buffers([&](const std::string& name, std::vector<float>& b) {
        checkpoint.arrays.push_back({prefix + name, Shape{1, static_cast<std::int64_t>(b.size()), 1, 1}, b});
    });
}

void load_model_state(DGNet<float>& model, const Checkpoint& checkpoint, const std::string& prefix)
{
    if (!(checkpoint.config == model.config())) {
        throw ConfigError("checkpoint was written for a different model (" + to_string(checkpoint.config.variant) +
                          ", width " + std::to_string(checkpoint.config.base_width) + ") than the one configured (" +
                          to_string(model.config().variant) + ", width " + std::to_string(model.config().base_width) +
                          ")");
    }
    for (Parameter<float>* p : model.parameters()) {
        const CheckpointArray& a = checkpoint.at(prefix + p->name);
        if (a.shape != p->tensor.shape()) throw IntegrityError("checkpoint: shape mismatch for '" + a.name + "'");
        std::copy(a.data.begin(), a.data.end(), p->tensor.data().begin());
    }
    model.visit_buffers([&](const std::string& name, std::vector<float>& b) {
        const CheckpointArray& a = checkpoint.at(prefix + name);
        if (a.data.size() != b.size()) throw IntegrityError("checkpoint: shape mismatch for '" + a.name + "'");
        b = a.data;
    });
}

DGNet<float> load_inference_model(const std::filesystem::path& path)
{
    const Checkpoint ck = read_checkpoint(path);
    DGNet<float> model(ck.config, 0);
    const bool has_ema = ck.find("ema." + model.parameters().front()->name) != nullptr;
    load_model_state(model, ck, has_ema ? "ema." : "");
    return model;
}

} // namespace dgnet
