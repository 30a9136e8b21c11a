#include "dgnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "dgnet/losses.hpp"

namespace dgnet {

namespace {

template <class T>
void require_same(const Tensor<T>& a, const Tensor<T>& b, const char* op)
{
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
    }
    if (a.numel() == 0) throw DimensionError(std::string(op) + ": empty image");
}

// Single RGB image as three planes of doubles scaled by `scale`.
struct Planes {
    int h = 0;
    int w = 0;
    std::vector<double> c[3];
};

template <class T>
Planes rgb_planes(const Tensor<T>& image, const char* op, double scale)
{
    const Shape& s = image.shape();
    if (s.n != 1 || s.c != 3 || s.h < 1 || s.w < 1) {
        throw DimensionError(std::string(op) + ": expected one RGB image (1, 3, H, W), got " + s.str());
    }
    Planes p;
    p.h = static_cast<int>(s.h);
    p.w = static_cast<int>(s.w);
    for (int ch = 0; ch < 3; ++ch) {
        const T* src = image.raw() + ch * s.plane();
        p.c[ch].resize(static_cast<std::size_t>(s.plane()));
        for (std::int64_t i = 0; i < s.plane(); ++i) p.c[ch][i] = scale * static_cast<double>(src[i]);
    }
    return p;
}

struct TrimmedStats {
    double mean = 0.0;
    double variance = 0.0;
};

TrimmedStats trimmed_stats(std::vector<double> values, double alpha)
{
    const auto k = static_cast<std::int64_t>(values.size());
    const auto lo = static_cast<std::int64_t>(std::ceil(alpha * static_cast<double>(k)));
    const auto hi = static_cast<std::int64_t>(std::floor(alpha * static_cast<double>(k)));
    TrimmedStats out;
    if (k - lo - hi > 0) {
        std::vector<double> sorted = values;
        std::sort(sorted.begin(), sorted.end());
        double sum = 0.0;
        for (std::int64_t i = lo; i < k - hi; ++i) sum += sorted[i];
        out.mean = sum / static_cast<double>(k - lo - hi);
    }
    double sq = 0.0;
    for (const double v : values) sq += (v - out.mean) * (v - out.mean);
    out.variance = sq / static_cast<double>(k);
    return out;
}

std::vector<double> sobel_magnitude(const std::vector<double>& plane, int h, int w)
{
    std::vector<double> out(plane.size());
    const auto at = [&](int y, int x) {
        y = std::clamp(y, 0, h - 1);
        x = std::clamp(x, 0, w - 1);
        return plane[static_cast<std::size_t>(y) * w + x];
    };
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double gx = (at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1)) -
                              (at(y - 1, x - 1) + 2.0 * at(y, x - 1) + at(y + 1, x - 1));
            const double gy = (at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1)) -
                              (at(y - 1, x - 1) + 2.0 * at(y - 1, x) + at(y - 1, x + 1));
            out[static_cast<std::size_t>(y) * w + x] = std::hypot(gx, gy);
        }
    }
    return out;
}

constexpr int kBlock = 8;

// Calls fn(max, min) for each full kBlock x kBlock block; returns the block count.
template <class Fn>
int for_each_block(const std::vector<double>& plane, int h, int w, Fn fn)
{
    const int k1 = h / kBlock;
    const int k2 = w / kBlock;
    for (int by = 0; by < k1; ++by) {
        for (int bx = 0; bx < k2; ++bx) {
            double hi = -std::numeric_limits<double>::infinity();
            double lo = std::numeric_limits<double>::infinity();
            for (int y = by * kBlock; y < (by + 1) * kBlock; ++y) {
                for (int x = bx * kBlock; x < (bx + 1) * kBlock; ++x) {
                    const double v = plane[static_cast<std::size_t>(y) * w + x];
                    hi = std::max(hi, v);
                    lo = std::min(lo, v);
                }
            }
            fn(hi, lo);
        }
    }
    return k1 * k2;
}

double eme(const std::vector<double>& plane, int h, int w)
{
    double sum = 0.0;
    const int blocks = for_each_block(plane, h, w, [&](double hi, double lo) {
        if (hi > 0.0 && lo > 0.0) sum += std::log(hi / lo);
    });
    return 2.0 / blocks * sum;
}

double log_amee(const std::vector<double>& plane, int h, int w)
{
    double sum = 0.0;
    const int blocks = for_each_block(plane, h, w, [&](double hi, double lo) {
        const double bottom = hi + lo;
        const double top = hi - lo;
        if (bottom > 0.0 && top > 0.0) {
            const double r = top / bottom;
            sum += r * std::log(r);
        }
    });
    return -sum / blocks;
}

double srgb_to_linear(double c)
{
    return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}

double lab_f(double t)
{
    constexpr double delta = 6.0 / 29.0;
    return t > delta * delta * delta ? std::cbrt(t) : t / (3.0 * delta * delta) + 4.0 / 29.0;
}

std::string format_value(const std::optional<double>& v)
{
    if (!v) return "";
    if (std::isinf(*v)) return *v > 0 ? "inf" : "-inf";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", *v);
    return buf;
}

} // namespace

template <class T>
double mse(const Tensor<T>& pred, const Tensor<T>& ref)
{
    require_same(pred, ref, "mse");
    double sum = 0.0;
    const T* a = pred.raw();
    const T* b = ref.raw();
    for (std::size_t i = 0; i < pred.numel(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        sum += d * d;
    }
    return sum / static_cast<double>(pred.numel());
}

template <class T>
double psnr(const Tensor<T>& pred, const Tensor<T>& ref)
{
    const double e = mse(pred, ref);
    if (e == 0.0) return kInfinitePsnr;
    return 10.0 * std::log10(1.0 / e);
}

template <class T>
double rmse(const Tensor<T>& pred, const Tensor<T>& ref)
{
    return std::sqrt(mse(pred, ref));
}

template <class T>
double ssim_metric(const Tensor<T>& pred, const Tensor<T>& ref)
{
    require_same(pred, ref, "ssim_metric");
    NoGradScope<double> off;
    const Tensor<double> a(pred.shape(), std::vector<double>(pred.data().begin(), pred.data().end()));
    const Tensor<double> b(ref.shape(), std::vector<double>(ref.data().begin(), ref.data().end()));
    return ssim(a, b).item();
}

template <class T>
UiqmTerms uiqm_terms(const Tensor<T>& image)
{
    Planes p = rgb_planes(image, "uiqm", 255.0);
    if (p.h < kBlock || p.w < kBlock) {
        throw DimensionError("uiqm: image " + image.shape().str() + " smaller than one 8x8 block");
    }
    const std::size_t n = p.c[0].size();
    std::vector<double> rg(n), yb(n), luma(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double r = p.c[0][i];
        const double g = p.c[1][i];
        const double b = p.c[2][i];
        rg[i] = r - g;
        yb[i] = 0.5 * (r + g) - b;
        luma[i] = 0.299 * r + 0.587 * g + 0.114 * b;
    }
    const TrimmedStats s_rg = trimmed_stats(std::move(rg), 0.1);
    const TrimmedStats s_yb = trimmed_stats(std::move(yb), 0.1);

    UiqmTerms t;
    t.uicm = -0.0268 * std::sqrt(s_rg.mean * s_rg.mean + s_yb.mean * s_yb.mean) +
             0.1586 * std::sqrt(s_rg.variance + s_yb.variance);

    constexpr double lambda[3] = {0.299, 0.587, 0.114};
    for (int ch = 0; ch < 3; ++ch) {
        std::vector<double> edges = sobel_magnitude(p.c[ch], p.h, p.w);
        for (std::size_t i = 0; i < n; ++i) edges[i] *= p.c[ch][i];
        t.uism += lambda[ch] * eme(edges, p.h, p.w);
    }
    t.uiconm = log_amee(luma, p.h, p.w);
    t.value = 0.0282 * t.uicm + 0.2953 * t.uism + 3.5753 * t.uiconm;
    return t;
}

template <class T>
double uiqm(const Tensor<T>& image)
{
    return uiqm_terms(image).value;
}

template <class T>
UciqeTerms uciqe_terms(const Tensor<T>& image)
{
    const Planes p = rgb_planes(image, "uciqe", 1.0);
    const std::size_t n = p.c[0].size();
    std::vector<double> lightness(n);
    std::vector<double> chroma(n);
    double saturation = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double r = srgb_to_linear(std::clamp(p.c[0][i], 0.0, 1.0));
        const double g = srgb_to_linear(std::clamp(p.c[1][i], 0.0, 1.0));
        const double b = srgb_to_linear(std::clamp(p.c[2][i], 0.0, 1.0));
        // Reference white = the matrix applied to RGB (1, 1, 1), so grays get a = b = 0.
        const double x = (0.4124564 * r + 0.3575761 * g + 0.1804375 * b) / (0.4124564 + 0.3575761 + 0.1804375);
        const double y = (0.2126729 * r + 0.7151522 * g + 0.0721750 * b) / (0.2126729 + 0.7151522 + 0.0721750);
        const double z = (0.0193339 * r + 0.1191920 * g + 0.9503041 * b) / (0.0193339 + 0.1191920 + 0.9503041);
        const double fx = lab_f(x);
        const double fy = lab_f(y);
        const double fz = lab_f(z);
        const double l = 116.0 * fy - 16.0;
        const double a = 500.0 * (fx - fy);
        const double bb = 200.0 * (fy - fz);
        lightness[i] = l;
        chroma[i] = std::sqrt(a * a + bb * bb);
        if (l > 0.0) saturation += chroma[i] / l;
    }

    UciqeTerms t;
    const double mean_c = std::accumulate(chroma.begin(), chroma.end(), 0.0) / static_cast<double>(n);
    double var_c = 0.0;
    for (const double c : chroma) var_c += (c - mean_c) * (c - mean_c);
    t.chroma_std = std::sqrt(var_c / static_cast<double>(n)) / 100.0;

    std::sort(lightness.begin(), lightness.end());
    const std::size_t tail = std::max<std::size_t>(1, n / 100);
    double low = 0.0;
    double high = 0.0;
    for (std::size_t i = 0; i < tail; ++i) {
        low += lightness[i];
        high += lightness[n - 1 - i];
    }
    t.luminance_contrast = (high - low) / static_cast<double>(tail) / 100.0;
    t.saturation_mean = saturation / static_cast<double>(n);
    t.value = 0.4680 * t.chroma_std + 0.2745 * t.luminance_contrast + 0.2576 * t.saturation_mean;
    return t;
}

template <class T>
double uciqe(const Tensor<T>& image)
{
    return uciqe_terms(image).value;
}

template <class T>
double grayworld_score(const Tensor<T>& image)
{
    const Planes p = rgb_planes(image, "grayworld_score", 1.0);
    double means[3];
    for (int ch = 0; ch < 3; ++ch) {
        means[ch] = std::accumulate(p.c[ch].begin(), p.c[ch].end(), 0.0) / static_cast<double>(p.c[ch].size());
    }
    const double overall = (means[0] + means[1] + means[2]) / 3.0;
    double sq = 0.0;
    for (const double m : means) sq += (m - overall) * (m - overall);
    return std::sqrt(sq / 3.0);
}

void MetricReport::add(MetricRecord record)
{
    const bool has_reference = record.psnr.has_value() && record.rmse.has_value() && record.ssim.has_value();
    const bool has_none = !record.psnr && !record.rmse && !record.ssim;
    if (full_reference_ ? !has_reference : !has_none) {
        throw UsageError("MetricReport: record '" + record.image + "' does not match the report columns");
    }
    records_.push_back(std::move(record));
}

MetricRecord MetricReport::mean() const
{
    MetricRecord m;
    m.image = "mean";
    const double n = static_cast<double>(records_.size());
    if (full_reference_) {
        m.psnr = 0.0;
        m.rmse = 0.0;
        m.ssim = 0.0;
    }
    if (records_.empty()) return m;
    for (const MetricRecord& r : records_) {
        if (full_reference_) {
            *m.psnr += *r.psnr;
            *m.rmse += *r.rmse;
            *m.ssim += *r.ssim;
        }
        m.uiqm += r.uiqm;
        m.uciqe += r.uciqe;
        m.grayworld += r.grayworld;
    }
    if (full_reference_) {
        *m.psnr /= n;
        *m.rmse /= n;
        *m.ssim /= n;
    }
    m.uiqm /= n;
    m.uciqe /= n;
    m.grayworld /= n;
    return m;
}

void MetricReport::write_csv(std::ostream& out) const
{
    const auto row = [&](const MetricRecord& r) {
        out << r.image;
        if (full_reference_) out << ',' << format_value(r.psnr) << ',' << format_value(r.rmse) << ',' << format_value(r.ssim);
        out << ',' << format_value(r.uiqm) << ',' << format_value(r.uciqe) << ',' << format_value(r.grayworld) << '\n';
    };
    out << (full_reference_ ? "image,psnr,rmse,ssim,uiqm,uciqe,grayworld\n" : "image,uiqm,uciqe,grayworld\n");
    std::vector<const MetricRecord*> sorted;
    for (const MetricRecord& r : records_) sorted.push_back(&r);
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const MetricRecord* a, const MetricRecord* b) { return a->image < b->image; });
    for (const MetricRecord* r : sorted) row(*r);
    row(mean());
}

template <class T>
MetricRecord evaluate_pair(const std::string& name, const Tensor<T>& pred, const Tensor<T>& ref)
{
    MetricRecord r;
    r.image = name;
    r.psnr = psnr(pred, ref);
    r.rmse = rmse(pred, ref);
    r.ssim = ssim_metric(pred, ref);
    r.uiqm = uiqm(pred);
    r.uciqe = uciqe(pred);
    r.grayworld = grayworld_score(pred);
    return r;
}

template <class T>
MetricRecord evaluate_single(const std::string& name, const Tensor<T>& image)
{
    MetricRecord r;
    r.image = name;
    r.uiqm = uiqm(image);
    r.uciqe = uciqe(image);
    r.grayworld = grayworld_score(image);
    return r;
}

#define DGNET_INSTANTIATE_METRICS(T)                                                        \
    template double mse<T>(const Tensor<T>&, const Tensor<T>&);                             \
    template double psnr<T>(const Tensor<T>&, const Tensor<T>&);                            \
    template double rmse<T>(const Tensor<T>&, const Tensor<T>&);                            \
    template double ssim_metric<T>(const Tensor<T>&, const Tensor<T>&);                     \
    template UiqmTerms uiqm_terms<T>(const Tensor<T>&);                                     \
    template double uiqm<T>(const Tensor<T>&);                                              \
    template UciqeTerms uciqe_terms<T>(const Tensor<T>&);                                   \
    template double uciqe<T>(const Tensor<T>&);                                             \
    template double grayworld_score<T>(const Tensor<T>&);                                   \
    template MetricRecord evaluate_pair<T>(const std::string&, const Tensor<T>&, const Tensor<T>&); \
    template MetricRecord evaluate_single<T>(const std::string&, const Tensor<T>&);

DGNET_INSTANTIATE_METRICS(float)
DGNET_INSTANTIATE_METRICS(double)

} // namespace dgnet
