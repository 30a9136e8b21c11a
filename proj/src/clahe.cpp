#include "dgnet/clahe.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace dgnet {

void ClaheConfig::validate() const
{
    if (tiles < 1) throw ConfigError("clahe: tiles must be >= 1");
    if (bins < 2) throw ConfigError("clahe: bins must be >= 2");
    if (!(clip_limit >= 1.0)) throw ConfigError("clahe: clip_limit must be >= 1.0");
}

namespace {

struct BinPosition {
    int lower = 0;
    double upper_weight = 0.0; // share of the count that goes to lower + 1
};

BinPosition locate(double value, int bins)
{
    const double x = std::clamp(value, 0.0, 1.0) * bins - 0.5;
    if (x <= 0.0) return {0, 0.0};
    if (x >= bins - 1) return {bins - 1, 0.0};
    const int k = static_cast<int>(std::floor(x));
    return {k, x - k};
}

} // namespace

TileMapping::TileMapping(std::span<const double> values, const ClaheConfig& config)
{
    const int bins = config.bins;
    identity_ = !values.empty() && std::all_of(values.begin(), values.end(),
                                               [&](double v) { return v == values.front(); });
    std::vector<double> hist(static_cast<std::size_t>(bins), 0.0);
    for (const double v : values) {
        const BinPosition p = locate(v, bins);
        hist[p.lower] += 1.0 - p.upper_weight;
        if (p.upper_weight > 0.0) hist[p.lower + 1] += p.upper_weight;
    }

    const double total = static_cast<double>(values.size());
    const double limit = config.clip_limit * total / bins;
    double excess = 0.0;
    for (double& h : hist) {
        if (h > limit) {
            excess += h - limit;
            h = limit;
        }
    }
    const double share = excess / bins;

    table_.resize(static_cast<std::size_t>(bins));
    double below = 0.0;
    for (int k = 0; k < bins; ++k) {
        const double mass = (hist[k] + share) / total;
        table_[k] = below + 0.5 * mass;
        below += mass;
    }
}

double TileMapping::operator()(double value) const
{
    if (identity_) return std::clamp(value, 0.0, 1.0);
    const BinPosition p = locate(value, static_cast<int>(table_.size()));
    if (p.upper_weight == 0.0) return table_[p.lower];
    return (1.0 - p.upper_weight) * table_[p.lower] + p.upper_weight * table_[p.lower + 1];
}

TileSpan tile_span(int size, int count, int index)
{
    const auto s = static_cast<long long>(size);
    return TileSpan{static_cast<int>(s * index / count), static_cast<int>(s * (index + 1) / count)};
}

namespace {

struct AxisBlend {
    int first = 0;
    int second = 0;
    double weight = 0.0; // share of `second`
};

// Neighbouring tile pair and interpolation weight along one axis for every
// coordinate.
std::vector<AxisBlend> axis_blend(int size, int tiles, ClaheBlend blend)
{
    std::vector<AxisBlend> out(static_cast<std::size_t>(size));
    std::vector<double> centers(static_cast<std::size_t>(tiles));
    for (int i = 0; i < tiles; ++i) centers[i] = tile_span(size, tiles, i).center();
    int own = 0;
    for (int p = 0; p < size; ++p) {
        while (own + 1 < tiles && p >= tile_span(size, tiles, own + 1).begin) ++own;
        if (blend == ClaheBlend::None) {
            out[p] = {own, own, 0.0};
            continue;
        }
        if (p <= centers.front()) {
            out[p] = {0, 0, 0.0};
        } else if (p >= centers.back()) {
            out[p] = {tiles - 1, tiles - 1, 0.0};
        } else {
            int i = 0;
            while (!(p >= centers[i] && p < centers[i + 1])) ++i;
            out[p] = {i, i + 1, (p - centers[i]) / (centers[i + 1] - centers[i])};
        }
    }
    return out;
}

} // namespace

template <class T>
Tensor<T> clahe(const Tensor<T>& image, const ClaheConfig& config)
{
    config.validate();
    const Shape& s = image.shape();
    const int height = static_cast<int>(s.h);
    const int width = static_cast<int>(s.w);
    const int tiles = config.tiles;
    if (height < tiles || width < tiles) {
        throw ConfigError("clahe: image " + s.str() + " smaller than the " + std::to_string(tiles) + "x" +
                          std::to_string(tiles) + " tile grid");
    }

    const T* src_all = image.raw();
    if (!std::all_of(src_all, src_all + image.numel(), [](T v) { return std::isfinite(v); })) {
        throw ValidationError("clahe: non-finite input value");
    }

    const auto rows = axis_blend(height, tiles, config.blend);
    const auto cols = axis_blend(width, tiles, config.blend);
    Tensor<T> out(s);
    const std::int64_t planes = s.n * s.c;

#pragma omp parallel for schedule(static)
    for (std::int64_t plane = 0; plane < planes; ++plane) {
        const T* src = image.raw() + plane * s.plane();
        T* dst = out.raw() + plane * s.plane();

        std::vector<TileMapping> maps;
        maps.reserve(static_cast<std::size_t>(tiles * tiles));
        std::vector<double> values;
        for (int ty = 0; ty < tiles; ++ty) {
            const TileSpan ry = tile_span(height, tiles, ty);
            for (int tx = 0; tx < tiles; ++tx) {
                const TileSpan rx = tile_span(width, tiles, tx);
                values.clear();
                for (int y = ry.begin; y < ry.end; ++y) {
                    for (int x = rx.begin; x < rx.end; ++x) {
                        values.push_back(static_cast<double>(src[y * width + x]));
                    }
                }
                maps.emplace_back(values, config);
            }
        }

        for (int y = 0; y < height; ++y) {
            const AxisBlend& by = rows[y];
            for (int x = 0; x < width; ++x) {
                const AxisBlend& bx = cols[x];
                const double v = std::clamp(static_cast<double>(src[y * width + x]), 0.0, 1.0);
                const auto m = [&](int ty, int tx) { return maps[ty * tiles + tx](v); };
                // a + w (b - a) returns a exactly when both sides agree.
                const auto lerp = [](double a, double b, double w) { return a + w * (b - a); };
                const double top = lerp(m(by.first, bx.first), m(by.first, bx.second), bx.weight);
                const double bottom = lerp(m(by.second, bx.first), m(by.second, bx.second), bx.weight);
                const double blended = lerp(top, bottom, by.weight);
                dst[y * width + x] = static_cast<T>(std::clamp(blended, 0.0, 1.0));
            }
        }
    }
    return out;
}

template <class T>
Tensor<T> make_pseudo_label(const Tensor<T>& prediction, const ClaheConfig& config)
{
    if (prediction.requires_grad()) {
        throw UsageError("make_pseudo_label: prediction is attached to a tape; pass prediction.detach()");
    }
    return clahe(prediction, config);
}

template Tensor<float> clahe<float>(const Tensor<float>&, const ClaheConfig&);
template Tensor<double> clahe<double>(const Tensor<double>&, const ClaheConfig&);
template Tensor<float> make_pseudo_label<float>(const Tensor<float>&, const ClaheConfig&);
template Tensor<double> make_pseudo_label<double>(const Tensor<double>&, const ClaheConfig&);

} // namespace dgnet
