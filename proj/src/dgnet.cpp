#include "dgnet/dgnet.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <sstream>

namespace dgnet {

namespace {

template <class T>
Tensor<T> kaiming_normal(Shape shape, std::mt19937_64& rng)
{
    const double fan_in = static_cast<double>(shape.c * shape.h * shape.w);
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
    Tensor<T> t(shape);
    for (T& v : t.data()) v = static_cast<T>(dist(rng));
    return t;
}

template <class T>
Tensor<T> channel_vector(std::int64_t channels, T value)
{
    return Tensor<T>(Shape{1, channels, 1, 1}, value);
}

const char* bool_text(bool v) { return v ? "1" : "0"; }

bool parse_bool(const std::string& key, const std::string& value)
{
    if (value == "1" || value == "true") return true;
    if (value == "0" || value == "false") return false;
    throw ConfigError("model config: '" + key + "' expects a boolean, got '" + value + "'");
}

int parse_int(const std::string& key, const std::string& value)
{
    try {
        std::size_t used = 0;
        const int v = std::stoi(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("model config: '" + key + "' expects an integer, got '" + value + "'");
    }
}

} // namespace

// ---------------------------------------------------------------------------
// ModelConfig

ModelConfig ModelConfig::small()
{
    ModelConfig c;
    c.variant = Variant::S;
    c.n1 = 3;
    c.n2 = 3;
    c.base_width = 39;
    c.sense_blocks = 2;
    return c;
}

ModelConfig ModelConfig::large()
{
    ModelConfig c;
    c.variant = Variant::L;
    c.n1 = 6;
    c.n2 = 6;
    c.base_width = 60;
    c.sense_blocks = 2;
    return c;
}

ModelConfig ModelConfig::for_variant(Variant variant)
{
    switch (variant) {
    case Variant::S: return small();
    case Variant::L: return large();
    case Variant::Custom: break;
    }
    return small();
}

void ModelConfig::validate() const
{
    if (n1 < 1 || n2 < 1) throw ConfigError("model config: n1 and n2 must be positive");
    if (base_width < 3 || base_width % 3 != 0) {
        throw ConfigError("model config: base_width must be a positive multiple of 3, got " +
                          std::to_string(base_width));
    }
    if (sense_blocks < 1) throw ConfigError("model config: sense_blocks must be positive");
    if (variant == Variant::S && (n1 != 3 || n2 != 3)) {
        throw ConfigError("model config: variant s requires n1 = 3 and n2 = 3");
    }
    if (variant == Variant::L && (n1 != 6 || n2 != 6)) {
        throw ConfigError("model config: variant l requires n1 = 6 and n2 = 6");
    }
    if (ablation.frr_instead && !ablation.frr) {
        throw ConfigError("model config: FRR cannot be both removed and replaced");
    }
    if (ablation.frs_instead && !ablation.frs) {
        throw ConfigError("model config: FRS cannot be both removed and replaced");
    }
}

std::string to_string(Variant variant)
{
    switch (variant) {
    case Variant::S: return "s";
    case Variant::L: return "l";
    case Variant::Custom: return "custom";
    }
    return "custom";
}

Variant parse_variant(const std::string& text)
{
    if (text == "s" || text == "S") return Variant::S;
    if (text == "l" || text == "L") return Variant::L;
    if (text == "custom") return Variant::Custom;
    throw ConfigError("unknown model variant '" + text + "' (expected s, l or custom)");
}

std::string ModelConfig::serialize() const
{
    std::ostringstream out;
    out << "variant=" << to_string(variant) << '\n'
        << "n1=" << n1 << '\n'
        << "n2=" << n2 << '\n'
        << "base_width=" << base_width << '\n'
        << "sense_blocks=" << sense_blocks << '\n'
        << "frr_input=" << (frr_input == FrrInput::Rgb ? "rgb" : "features") << '\n'
        << "ablation.frr=" << bool_text(ablation.frr) << '\n'
        << "ablation.frs=" << bool_text(ablation.frs) << '\n'
        << "ablation.cci=" << bool_text(ablation.cci) << '\n'
        << "ablation.fsm=" << bool_text(ablation.fsm) << '\n'
        << "ablation.sense_sigmoid=" << bool_text(ablation.sense_sigmoid) << '\n'
        << "ablation.laplacian=" << bool_text(ablation.laplacian) << '\n'
        << "ablation.sense_tail=" << bool_text(ablation.sense_tail) << '\n'
        << "ablation.frr_instead=" << bool_text(ablation.frr_instead) << '\n'
        << "ablation.frs_instead=" << bool_text(ablation.frs_instead) << '\n';
    return out.str();
}

ModelConfig ModelConfig::parse(const std::string& text)
{
    ModelConfig c;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("model config: malformed line '" + line + "'");
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 1);
        if (key == "variant") c.variant = parse_variant(value);
        else if (key == "n1") c.n1 = parse_int(key, value);
        else if (key == "n2") c.n2 = parse_int(key, value);
        else if (key == "base_width") c.base_width = parse_int(key, value);
        else if (key == "sense_blocks") c.sense_blocks = parse_int(key, value);
        else if (key == "frr_input") {
            if (value == "rgb") c.frr_input = FrrInput::Rgb;
            else if (value == "features") c.frr_input = FrrInput::Features;
            else throw ConfigError("model config: frr_input must be 'features' or 'rgb'");
        }
        else if (key == "ablation.frr") c.ablation.frr = parse_bool(key, value);
        else if (key == "ablation.frs") c.ablation.frs = parse_bool(key, value);
        else if (key == "ablation.cci") c.ablation.cci = parse_bool(key, value);
        else if (key == "ablation.fsm") c.ablation.fsm = parse_bool(key, value);
        else if (key == "ablation.sense_sigmoid") c.ablation.sense_sigmoid = parse_bool(key, value);
        else if (key == "ablation.laplacian") c.ablation.laplacian = parse_bool(key, value);
        else if (key == "ablation.sense_tail") c.ablation.sense_tail = parse_bool(key, value);
        else if (key == "ablation.frr_instead") c.ablation.frr_instead = parse_bool(key, value);
        else if (key == "ablation.frs_instead") c.ablation.frs_instead = parse_bool(key, value);
        else throw ConfigError("model config: unknown key '" + key + "'");
    }
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Laplacian

template <class T>
Tensor<T> laplacian_kernel(std::int64_t channels)
{
    static constexpr double kStencil[9] = {0, 1, 0, 1, -4, 1, 0, 1, 0};
    Tensor<T> k(Shape{channels, 1, 3, 3});
    for (std::int64_t c = 0; c < channels; ++c) {
        for (int i = 0; i < 9; ++i) k.raw()[c * 9 + i] = static_cast<T>(kStencil[i]);
    }
    return k;
}

template <class T>
Tensor<T> laplacian_highpass(const Tensor<T>& input, const Tensor<T>& kernel)
{
    const auto channels = static_cast<int>(input.shape().c);
    return conv2d(pad_replicate(input, 1), kernel, static_cast<const Tensor<T>*>(nullptr),
                  Conv2dOptions{1, 0, channels});
}

// ---------------------------------------------------------------------------
// Cbm

template <class T>
Cbm<T>::Cbm(const std::string& name, std::int64_t in_channels, std::int64_t out_channels, int groups,
            std::mt19937_64& rng)
    : name_(name),
      weight_(name + ".conv.weight", kaiming_normal<T>(Shape{out_channels, in_channels / groups, 3, 3}, rng)),
      gamma_(name + ".bn.gamma", channel_vector<T>(out_channels, T(1))),
      beta_(name + ".bn.beta", channel_vector<T>(out_channels, T(0))),
      bn_(out_channels),
      groups_(groups)
{
    if (in_channels % groups != 0 || out_channels % groups != 0) {
        throw ConfigError(name + ": groups=" + std::to_string(groups) + " does not divide " +
                          std::to_string(in_channels) + "->" + std::to_string(out_channels));
    }
}

template <class T>
Tensor<T> Cbm<T>::forward(const Tensor<T>& x, Mode mode)
{
    Tensor<T> y = conv2d(x, weight_.tensor, static_cast<const Tensor<T>*>(nullptr), Conv2dOptions{1, 1, groups_});
    y = batchnorm2d(y, gamma_.tensor, beta_.tensor, bn_, mode);
    return mish(y);
}

template <class T>
void Cbm<T>::visit(const std::function<void(Parameter<T>&)>& params,
                   const std::function<void(const std::string&, std::vector<T>&)>& buffers)
{
    if (params) {
        params(weight_);
        params(gamma_);
        params(beta_);
    }
    if (buffers) {
        buffers(name_ + ".bn.running_mean", bn_.running_mean);
        buffers(name_ + ".bn.running_var", bn_.running_var);
    }
}

// ---------------------------------------------------------------------------
// CciBlock

template <class T>
CciBlock<T>::CciBlock(const std::string& name, std::int64_t in_channels, std::int64_t width, int depth,
                      std::mt19937_64& rng)
    : in_channels_(in_channels)
{
    if (in_channels % 3 != 0) {
        throw ConfigError(name + ": input channels " + std::to_string(in_channels) +
                          " not divisible by 3");
    }
    std::int64_t channels = 2 * in_channels;
    for (int i = 0; i < depth; ++i) {
        gcb_.emplace_back(name + ".gcb." + std::to_string(i), channels, 2 * width, 3, rng);
        channels = 2 * width;
    }
}

template <class T>
Tensor<T> CciBlock<T>::grouped_forward(const Tensor<T>& combined, Mode mode)
{
    Tensor<T> x = combined;
    for (auto& block : gcb_) x = block.forward(x, mode);
    return x;
}

template <class T>
Tensor<T> CciBlock<T>::forward(const Tensor<T>& f_in, Mode mode)
{
    if (f_in.shape().c != in_channels_) {
        throw DimensionError("CCI expects " + std::to_string(in_channels_) + " channels, got " +
                             f_in.shape().str());
    }
    Tensor<T> combined = concat_channels<T>({f_in, f_in});
    Tensor<T> c_fix = grouped_forward(combined, mode);
    return concat_channels<T>({c_fix, f_in});
}

template <class T>
std::int64_t CciBlock<T>::out_channels() const
{
    return gcb_.back().out_channels() + in_channels_;
}

template <class T>
void CciBlock<T>::visit(const std::function<void(Parameter<T>&)>& params,
                        const std::function<void(const std::string&, std::vector<T>&)>& buffers)
{
    for (auto& block : gcb_) block.visit(params, buffers);
}

// ---------------------------------------------------------------------------
// FrrModule

template <class T>
FrrModule<T>::FrrModule(const ModelConfig& config, std::int64_t in_channels, std::mt19937_64& rng)
{
    const std::int64_t width = config.base_width;
    std::int64_t channels = in_channels;
    if (config.ablation.cci) {
        cci_.emplace("frr.cci", in_channels, width, config.n1, rng);
        channels = cci_->out_channels();
    }
    if (config.ablation.fsm) {
        for (int i = 0; i < config.n2; ++i) {
            fsm_.emplace_back("frr.fsm." + std::to_string(i), i == 0 ? channels : width, width, 1, rng);
        }
    } else {
        proj_weight_.emplace("frr.proj.weight", kaiming_normal<T>(Shape{width, channels, 1, 1}, rng));
        proj_bias_.emplace("frr.proj.bias", channel_vector<T>(width, T(0)));
    }
}

template <class T>
Tensor<T> FrrModule<T>::fusion_forward(const Tensor<T>& b_fix, Mode mode)
{
    if (proj_weight_) return conv2d(b_fix, proj_weight_->tensor, &proj_bias_->tensor, Conv2dOptions{1, 0, 1});
    Tensor<T> x = b_fix;
    for (auto& block : fsm_) x = block.forward(x, mode);
    return x;
}

template <class T>
Tensor<T> FrrModule<T>::forward(const Tensor<T>& f_in, Mode mode)
{
    Tensor<T> b_fix = cci_ ? cci_->forward(f_in, mode) : f_in;
    return fusion_forward(b_fix, mode);
}

template <class T>
void FrrModule<T>::visit(const std::function<void(Parameter<T>&)>& params,
                         const std::function<void(const std::string&, std::vector<T>&)>& buffers)
{
    if (cci_) cci_->visit(params, buffers);
    for (auto& block : fsm_) block.visit(params, buffers);
    if (params && proj_weight_) {
        params(*proj_weight_);
        params(*proj_bias_);
    }
}

// ---------------------------------------------------------------------------
// SenseBlock

template <class T>
SenseBlock<T>::SenseBlock(const std::string& name, std::int64_t channels, const Ablation& ablation,
                          std::mt19937_64& rng)
    : use_laplacian_(ablation.laplacian),
      use_tail_(ablation.sense_tail),
      use_sigmoid_(ablation.sense_sigmoid),
      laplacian_(name + ".laplacian", laplacian_kernel<T>(channels), false),
      normal_(name + ".normal", channels, channels, 1, rng),
      gamma_(name + ".bn.gamma", channel_vector<T>(channels, T(1))),
      beta_(name + ".bn.beta", channel_vector<T>(channels, T(0))),
      bn_(channels)
{
    if (use_tail_) {
        tail_.emplace(name + ".tail", channels, channels, 1, rng);
        conv_weight_.emplace(name + ".conv.weight", kaiming_normal<T>(Shape{channels, channels, 3, 3}, rng));
        conv_bias_.emplace(name + ".conv.bias", channel_vector<T>(channels, T(0)));
    }
}

template <class T>
Tensor<T> SenseBlock<T>::forward(const Tensor<T>& f_in, Mode mode)
{
    Tensor<T> f_normal = normal_.forward(f_in, mode);
    Tensor<T> pre = use_laplacian_ ? sub(f_normal, laplacian_highpass(f_in, laplacian_.tensor)) : f_normal;
    Tensor<T> attention = mish(batchnorm2d(pre, gamma_.tensor, beta_.tensor, bn_, mode));
    if (!use_tail_) return add(f_in, attention);
    Tensor<T> t = conv2d(tail_->forward(attention, mode), conv_weight_->tensor, &conv_bias_->tensor,
                         Conv2dOptions{1, 1, 1});
    return add(f_in, use_sigmoid_ ? sigmoid(t) : t);
}

template <class T>
void SenseBlock<T>::visit(const std::function<void(Parameter<T>&)>& params,
                          const std::function<void(const std::string&, std::vector<T>&)>& buffers)
{
    // The Laplacian is listed even when the branch is disabled so checkpoints
    // keep one layout per width.
    if (params) params(laplacian_);
    normal_.visit(params, buffers);
    if (params) {
        params(gamma_);
        params(beta_);
    }
    if (buffers) {
        const std::string prefix = gamma_.name.substr(0, gamma_.name.size() - std::string(".gamma").size());
        buffers(prefix + ".running_mean", bn_.running_mean);
        buffers(prefix + ".running_var", bn_.running_var);
    }
    if (tail_) {
        tail_->visit(params, buffers);
        if (params) {
            params(*conv_weight_);
            params(*conv_bias_);
        }
    }
}

// ---------------------------------------------------------------------------
// CbmGroup

template <class T>
CbmGroup<T>::CbmGroup(const std::string& name, std::int64_t in_channels, std::int64_t hidden,
                      std::int64_t out_channels, int depth, std::mt19937_64& rng)
{
    if (depth < 1) throw ConfigError(name + ": depth must be positive");
    for (int i = 0; i < depth; ++i) {
        const std::int64_t in = i == 0 ? in_channels : hidden;
        const std::int64_t out = i == depth - 1 ? out_channels : hidden;
        blocks_.emplace_back(name + "." + std::to_string(i), in, out, 1, rng);
    }
}

template <class T>
Tensor<T> CbmGroup<T>::forward(const Tensor<T>& x, Mode mode)
{
    Tensor<T> y = x;
    for (auto& block : blocks_) y = block.forward(y, mode);
    return y;
}

template <class T>
void CbmGroup<T>::visit(const std::function<void(Parameter<T>&)>& params,
                        const std::function<void(const std::string&, std::vector<T>&)>& buffers)
{
    for (auto& block : blocks_) block.visit(params, buffers);
}

template <class T>
std::int64_t CbmGroup<T>::count(std::int64_t in_channels, std::int64_t hidden, std::int64_t out_channels,
                                int depth)
{
    std::int64_t total = 0;
    for (int i = 0; i < depth; ++i) {
        const std::int64_t in = i == 0 ? in_channels : hidden;
        const std::int64_t out = i == depth - 1 ? out_channels : hidden;
        total += 9 * in * out + 2 * out;
    }
    return total;
}

template <class T>
std::int64_t CbmGroup<T>::matched_hidden(std::int64_t in_channels, std::int64_t out_channels, int depth,
                                         std::int64_t target)
{
    std::int64_t best = 1;
    std::int64_t best_gap = std::numeric_limits<std::int64_t>::max();
    for (std::int64_t h = 1; h <= 4096; ++h) {
        const std::int64_t c = count(in_channels, h, out_channels, depth);
        const std::int64_t gap = c > target ? c - target : target - c;
        if (gap < best_gap) {
            best_gap = gap;
            best = h;
        }
        if (c > target) break;
    }
    return best;
}

// ---------------------------------------------------------------------------
// DGNet

template <class T>
void validate_image_batch(const Tensor<T>& image)
{
    const Shape& s = image.shape();
    if (s.n < 1 || s.c != 3) throw DimensionError("expected an (N, 3, H, W) image batch, got " + s.str());
    if (s.h < 16 || s.w < 16 || s.h % 8 != 0 || s.w % 8 != 0) {
        throw DimensionError("image height and width must be >= 16 and divisible by 8, got " + s.str());
    }
    for (const T v : image.data()) {
        if (!(v >= T(0) && v <= T(1))) throw ValidationError("input pixel values must lie in [0, 1]");
    }
}

namespace {

template <class T>
std::int64_t count_trainable(const std::function<void(const std::function<void(Parameter<T>&)>&)>& visit)
{
    std::int64_t total = 0;
    visit([&](Parameter<T>& p) {
        if (p.trainable) total += static_cast<std::int64_t>(p.tensor.numel());
    });
    return total;
}

} // namespace

template <class T>
DGNet<T>::DGNet(const ModelConfig& config, std::uint64_t seed) : config_(config)
{
    config_.validate();
    std::mt19937_64 rng(seed);
    const Ablation& ab = config_.ablation;
    const std::int64_t width = config_.base_width;

    const bool frr_on_rgb = ab.frr && !ab.frr_instead && config_.frr_input == FrrInput::Rgb;
    if (!frr_on_rgb) stem_.emplace("stem", 3, width, 1, rng);

    if (ab.frr) {
        const std::int64_t frr_in = frr_on_rgb ? 3 : width;
        if (ab.frr_instead) {
            // Size target: the FRR this config would otherwise build.
            std::mt19937_64 scratch(seed);
            FrrModule<T> reference(config_, width, scratch);
            const std::int64_t target =
                count_trainable<T>([&](const auto& fn) { reference.visit(fn, nullptr); });
            const int depth = (ab.cci ? config_.n1 : 0) + (ab.fsm ? config_.n2 : 1);
            const std::int64_t hidden = CbmGroup<T>::matched_hidden(width, width, depth, target);
            frr_group_.emplace("frr.instead", width, hidden, width, depth, rng);
            frr_audit_ = ReplacementAudit{target, CbmGroup<T>::count(width, hidden, width, depth), hidden, depth};
        } else {
            frr_.emplace(config_, frr_in, rng);
        }
    }

    if (ab.frs) {
        if (ab.frs_instead) {
            std::mt19937_64 scratch(seed);
            std::int64_t target = 0;
            for (int i = 0; i < config_.sense_blocks; ++i) {
                SenseBlock<T> reference("frs.reference", width, ab, scratch);
                target += count_trainable<T>([&](const auto& fn) { reference.visit(fn, nullptr); });
            }
            const int depth = (ab.sense_tail ? 3 : 1) * config_.sense_blocks;
            const std::int64_t hidden = CbmGroup<T>::matched_hidden(width, width, depth, target);
            frs_group_.emplace("frs.instead", width, hidden, width, depth, rng);
            frs_audit_ = ReplacementAudit{target, CbmGroup<T>::count(width, hidden, width, depth), hidden, depth};
        } else {
            for (int i = 0; i < config_.sense_blocks; ++i) {
                sense_.emplace_back("frs.sense." + std::to_string(i), width, ab, rng);
            }
        }
    }

    head_weight_ = Parameter<T>("head.conv.weight", kaiming_normal<T>(Shape{3, width, 3, 3}, rng));
    head_bias_ = Parameter<T>("head.conv.bias", channel_vector<T>(3, T(0)));
}

template <class T>
Tensor<T> DGNet<T>::forward(const Tensor<T>& image, Mode mode)
{
    validate_image_batch(image);
    Tensor<T> f = stem_ ? stem_->forward(image, mode) : image;
    if (frr_) f = frr_->forward(f, mode);
    if (frr_group_) f = frr_group_->forward(f, mode);
    for (auto& block : sense_) f = block.forward(f, mode);
    if (frs_group_) f = frs_group_->forward(f, mode);
    return sigmoid(conv2d(f, head_weight_.tensor, &head_bias_.tensor, Conv2dOptions{1, 1, 1}));
}

template <class T>
void DGNet<T>::visit(const std::function<void(Parameter<T>&)>& params,
                     const std::function<void(const std::string&, std::vector<T>&)>& buffers)
{
    if (stem_) stem_->visit(params, buffers);
    if (frr_) frr_->visit(params, buffers);
    if (frr_group_) frr_group_->visit(params, buffers);
    for (auto& block : sense_) block.visit(params, buffers);
    if (frs_group_) frs_group_->visit(params, buffers);
    if (params) {
        params(head_weight_);
        params(head_bias_);
    }
}

template <class T>
std::vector<Parameter<T>*> DGNet<T>::parameters()
{
    std::vector<Parameter<T>*> out;
    visit([&](Parameter<T>& p) { out.push_back(&p); }, nullptr);
    return out;
}

template <class T>
void DGNet<T>::visit_buffers(const std::function<void(const std::string&, std::vector<T>&)>& fn)
{
    visit(nullptr, fn);
}

template <class T>
std::int64_t DGNet<T>::trainable_count()
{
    std::int64_t total = 0;
    for (Parameter<T>* p : parameters()) {
        if (p->trainable) total += static_cast<std::int64_t>(p->tensor.numel());
    }
    return total;
}

template <class T>
void DGNet<T>::zero_grad()
{
    for (Parameter<T>* p : parameters()) p->tensor.zero_grad();
}

template <class T>
void DGNet<T>::copy_state_from(DGNet& other)
{
    if (!(other.config() == config_)) throw ConfigError("copy_state_from: model configs differ");
    auto src = other.parameters();
    auto dst = parameters();
    for (std::size_t i = 0; i < dst.size(); ++i) {
        std::copy(src[i]->tensor.data().begin(), src[i]->tensor.data().end(), dst[i]->tensor.data().begin());
    }
    std::vector<std::vector<T>*> src_buffers;
    other.visit_buffers([&](const std::string&, std::vector<T>& b) { src_buffers.push_back(&b); });
    std::size_t i = 0;
    visit_buffers([&](const std::string&, std::vector<T>& b) { b = *src_buffers[i++]; });
}

std::int64_t param_count(const ModelConfig& config)
{
    DGNet<float> model(config, 0);
    return model.trainable_count();
}

#define DGNET_INSTANTIATE_NN(T)                                                           \
    template Tensor<T> laplacian_kernel<T>(std::int64_t);                                 \
    template Tensor<T> laplacian_highpass<T>(const Tensor<T>&, const Tensor<T>&);         \
    template void validate_image_batch<T>(const Tensor<T>&);                              \
    template class Cbm<T>;                                                                \
    template class CciBlock<T>;                                                           \
    template class FrrModule<T>;                                                          \
    template class SenseBlock<T>;                                                         \
    template class CbmGroup<T>;                                                           \
    template class DGNet<T>;

DGNET_INSTANTIATE_NN(float)
DGNET_INSTANTIATE_NN(double)

#undef DGNET_INSTANTIATE_NN

} // namespace dgnet
