#include "dgnet/losses.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "dgnet/ops.hpp"

namespace dgnet {

void LossWeights::validate() const
{
    const auto check = [](double w, const char* name) {
        if (!(w >= 0.0) || !std::isfinite(w)) {
            throw ConfigError(std::string("loss weight ") + name + " must be finite and >= 0, got " +
                              std::to_string(w));
        }
    };
    check(alpha, "alpha");
    check(beta, "beta");
    check(gamma, "gamma");
}

namespace {

std::vector<double> gaussian_window(int size, double sigma)
{
    std::vector<double> g(static_cast<std::size_t>(size));
    const double center = 0.5 * (size - 1);
    double total = 0.0;
    for (int i = 0; i < size; ++i) {
        const double d = i - center;
        g[i] = std::exp(-d * d / (2.0 * sigma * sigma));
        total += g[i];
    }
    for (double& v : g) v /= total;
    return g;
}

// Valid separable filtering of an h x w plane with window g.
class ValidFilter {
public:
    ValidFilter(std::vector<double> g, int h, int w)
        : g_(std::move(g)), h_(h), w_(w), oh_(h - static_cast<int>(g_.size()) + 1),
          ow_(w - static_cast<int>(g_.size()) + 1), tmp_(static_cast<std::size_t>(h) * ow_)
    {}

    int out_h() const { return oh_; }
    int out_w() const { return ow_; }

    void apply(const double* in, double* out)
    {
        const int k = static_cast<int>(g_.size());
        for (int y = 0; y < h_; ++y) {
            for (int x = 0; x < ow_; ++x) {
                double acc = 0.0;
                for (int i = 0; i < k; ++i) acc += g_[i] * in[y * w_ + x + i];
                tmp_[y * ow_ + x] = acc;
            }
        }
        for (int y = 0; y < oh_; ++y) {
            for (int x = 0; x < ow_; ++x) {
                double acc = 0.0;
                for (int i = 0; i < k; ++i) acc += g_[i] * tmp_[(y + i) * ow_ + x];
                out[y * ow_ + x] = acc;
            }
        }
    }

    // out (h x w) = transpose of apply, evaluated at in (oh x ow).
    void adjoint(const double* in, double* out)
    {
        const int k = static_cast<int>(g_.size());
        std::fill(tmp_.begin(), tmp_.end(), 0.0);
        for (int y = 0; y < oh_; ++y) {
            for (int i = 0; i < k; ++i) {
                for (int x = 0; x < ow_; ++x) tmp_[(y + i) * ow_ + x] += g_[i] * in[y * ow_ + x];
            }
        }
        std::fill(out, out + static_cast<std::ptrdiff_t>(h_) * w_, 0.0);
        for (int y = 0; y < h_; ++y) {
            for (int x = 0; x < ow_; ++x) {
                const double v = tmp_[y * ow_ + x];
                for (int i = 0; i < k; ++i) out[y * w_ + x + i] += g_[i] * v;
            }
        }
    }

private:
    std::vector<double> g_;
    int h_;
    int w_;
    int oh_;
    int ow_;
    std::vector<double> tmp_;
};

enum Stat { MuA, MuB, Eaa, Ebb, Eab, StatCount };

} // namespace

template <class T>
Tensor<T> ssim(const Tensor<T>& a, const Tensor<T>& b, const SsimOptions& options)
{
    if (a.shape() != b.shape()) {
        throw DimensionError("ssim: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
    }
    if (options.window < 1 || options.window % 2 == 0 || !(options.sigma > 0.0)) {
        throw ConfigError("ssim: window must be odd and sigma positive");
    }
    const Shape& s = a.shape();
    if (s.h < options.window || s.w < options.window) {
        throw ConfigError("ssim: image " + s.str() + " smaller than the " + std::to_string(options.window) +
                          "x" + std::to_string(options.window) + " window");
    }
    const int h = static_cast<int>(s.h);
    const int w = static_cast<int>(s.w);
    const std::vector<double> g = gaussian_window(options.window, options.sigma);
    const int oh = h - options.window + 1;
    const int ow = w - options.window + 1;
    const std::int64_t planes = s.n * s.c;
    const std::size_t map = static_cast<std::size_t>(oh) * ow;
    const double c1 = std::pow(options.k1 * options.data_range, 2);
    const double c2 = std::pow(options.k2 * options.data_range, 2);

    // Filtered moments per plane, kept for the backward pass.
    auto stats = std::make_shared<std::vector<double>>(static_cast<std::size_t>(planes) * StatCount * map);
    std::vector<double> plane_sums(static_cast<std::size_t>(planes), 0.0);

#pragma omp parallel for schedule(static)
    for (std::int64_t p = 0; p < planes; ++p) {
        ValidFilter filter(g, h, w);
        const std::size_t n = static_cast<std::size_t>(h) * w;
        std::vector<double> pa(n), pb(n), prod(n);
        const T* ra = a.raw() + p * s.plane();
        const T* rb = b.raw() + p * s.plane();
        for (std::size_t i = 0; i < n; ++i) {
            pa[i] = static_cast<double>(ra[i]);
            pb[i] = static_cast<double>(rb[i]);
        }
        double* st = stats->data() + static_cast<std::size_t>(p) * StatCount * map;
        filter.apply(pa.data(), st + MuA * map);
        filter.apply(pb.data(), st + MuB * map);
        for (std::size_t i = 0; i < n; ++i) prod[i] = pa[i] * pa[i];
        filter.apply(prod.data(), st + Eaa * map);
        for (std::size_t i = 0; i < n; ++i) prod[i] = pb[i] * pb[i];
        filter.apply(prod.data(), st + Ebb * map);
        for (std::size_t i = 0; i < n; ++i) prod[i] = pa[i] * pb[i];
        filter.apply(prod.data(), st + Eab * map);

        double acc = 0.0;
        for (std::size_t i = 0; i < map; ++i) {
            const double ma = st[MuA * map + i];
            const double mb = st[MuB * map + i];
            const double a1 = 2.0 * ma * mb + c1;
            const double a2 = 2.0 * (st[Eab * map + i] - ma * mb) + c2;
            const double b1 = ma * ma + mb * mb + c1;
            const double b2 = (st[Eaa * map + i] - ma * ma) + (st[Ebb * map + i] - mb * mb) + c2;
            acc += (a1 * a2) / (b1 * b2);
        }
        plane_sums[p] = acc;
    }
    double total = 0.0;
    for (const double v : plane_sums) total += v;
    const double count = static_cast<double>(planes) * static_cast<double>(map);
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(total / count));

    Tape<T>* tape = active_tape<T>();
    if (tape != nullptr && (a.requires_grad() || b.requires_grad())) {
        out.set_requires_grad(true);
        tape->record([a, b, out, stats, g, h, w, oh, ow, planes, map, c1, c2, count]() {
            if (!out.has_grad()) return;
            const double scale = static_cast<double>(out.grad()[0]) / count;
            const bool grad_a = a.requires_grad();
            const bool grad_b = b.requires_grad();
            T* ga = grad_a ? a.grad_mut().data() : nullptr;
            T* gb = grad_b ? b.grad_mut().data() : nullptr;
            const std::size_t n = static_cast<std::size_t>(h) * w;

#pragma omp parallel for schedule(static)
            for (std::int64_t p = 0; p < planes; ++p) {
                ValidFilter filter(g, h, w);
                const double* st = stats->data() + static_cast<std::size_t>(p) * StatCount * map;
                // d(ssim)/d(each filtered moment) at every window position.
                std::vector<double> d_mu_a(map), d_mu_b(map), d_eaa(map), d_ebb(map), d_eab(map);
                for (std::size_t i = 0; i < map; ++i) {
                    const double ma = st[MuA * map + i];
                    const double mb = st[MuB * map + i];
                    const double a1 = 2.0 * ma * mb + c1;
                    const double a2 = 2.0 * (st[Eab * map + i] - ma * mb) + c2;
                    const double b1 = ma * ma + mb * mb + c1;
                    const double b2 = (st[Eaa * map + i] - ma * ma) + (st[Ebb * map + i] - mb * mb) + c2;
                    const double den = b1 * b2;
                    const double v = a1 * a2 / den;
                    d_mu_a[i] = scale * ((2.0 * mb * a2 - 2.0 * mb * a1) / den - v * (2.0 * ma / b1 - 2.0 * ma / b2));
                    d_mu_b[i] = scale * ((2.0 * ma * a2 - 2.0 * ma * a1) / den - v * (2.0 * mb / b1 - 2.0 * mb / b2));
                    d_eaa[i] = scale * (-v / b2);
                    d_ebb[i] = d_eaa[i];
                    d_eab[i] = scale * (2.0 * a1 / den);
                }
                std::vector<double> t_mu(n), t_sq(n), t_ab(n);
                const T* ra = a.raw() + p * (static_cast<std::int64_t>(h) * w);
                const T* rb = b.raw() + p * (static_cast<std::int64_t>(h) * w);
                filter.adjoint(d_eab.data(), t_ab.data());
                if (grad_a) {
                    filter.adjoint(d_mu_a.data(), t_mu.data());
                    filter.adjoint(d_eaa.data(), t_sq.data());
                    T* dst = ga + p * (static_cast<std::int64_t>(h) * w);
                    for (std::size_t i = 0; i < n; ++i) {
                        dst[i] += static_cast<T>(t_mu[i] + 2.0 * static_cast<double>(ra[i]) * t_sq[i] +
                                                 static_cast<double>(rb[i]) * t_ab[i]);
                    }
                }
                if (grad_b) {
                    filter.adjoint(d_mu_b.data(), t_mu.data());
                    filter.adjoint(d_ebb.data(), t_sq.data());
                    T* dst = gb + p * (static_cast<std::int64_t>(h) * w);
                    for (std::size_t i = 0; i < n; ++i) {
                        dst[i] += static_cast<T>(t_mu[i] + 2.0 * static_cast<double>(rb[i]) * t_sq[i] +
                                                 static_cast<double>(ra[i]) * t_ab[i]);
                    }
                }
            }
        });
    }
    return out;
}

template <class T>
Tensor<T> l1_loss(const Tensor<T>& pred, const Tensor<T>& target)
{
    if (pred.shape() != target.shape()) {
        throw DimensionError("l1_loss: shape mismatch " + pred.shape().str() + " vs " + target.shape().str());
    }
    return mean(abs(sub(pred, target)));
}

template <class T>
Tensor<T> ssim_loss(const Tensor<T>& pred, const Tensor<T>& target, const SsimOptions& options)
{
    return shift(scale(ssim(pred, target, options), T(-1)), T(1));
}

template <class T>
Tensor<T> dynamic_tuning_loss(const Tensor<T>& pred, const Tensor<T>& pseudo_label)
{
    if (pseudo_label.requires_grad()) {
        throw UsageError("dynamic_tuning_loss: pseudo-label must not require a gradient");
    }
    return l1_loss(pred, pseudo_label);
}

template <class T>
Tensor<T> dynamic_tuning_loss(const Tensor<T>& pred, const ClaheConfig& clahe_config)
{
    return dynamic_tuning_loss(pred, make_pseudo_label(pred.detach(), clahe_config));
}

template <class T>
LossTerms<T> total_loss(const Tensor<T>& pred, const Tensor<T>& target, const LossWeights& weights,
                        const ClaheConfig& clahe_config, const Tensor<T>* pseudo_label)
{
    weights.validate();
    LossTerms<T> terms;
    Tensor<T> total;
    bool any = false;
    const auto accumulate = [&](const Tensor<T>& term, double weight) {
        Tensor<T> weighted = scale(term, static_cast<T>(weight));
        total = any ? add(total, weighted) : weighted;
        any = true;
    };
    const auto report = [](const Tensor<T>& term) { return static_cast<double>(term.item()); };

    if (weights.alpha > 0.0) {
        Tensor<T> l1 = l1_loss(pred, target);
        terms.l1 = report(l1);
        accumulate(l1, weights.alpha);
    } else {
        NoGradScope<T> off;
        terms.l1 = report(l1_loss(pred, target));
    }
    if (weights.beta > 0.0) {
        Tensor<T> s = ssim_loss(pred, target);
        terms.ssim = report(s);
        accumulate(s, weights.beta);
    } else {
        NoGradScope<T> off;
        terms.ssim = report(ssim_loss(pred, target));
    }
    if (weights.gamma > 0.0) {
        terms.pseudo_label = pseudo_label != nullptr ? *pseudo_label : make_pseudo_label(pred.detach(), clahe_config);
        Tensor<T> d = dynamic_tuning_loss(pred, terms.pseudo_label);
        terms.dynamic = report(d);
        accumulate(d, weights.gamma);
    }
    terms.total = any ? total : scale(mean(pred), T(0));
    return terms;
}

#define DGNET_INSTANTIATE_LOSSES(T)                                                                     \
    template Tensor<T> ssim<T>(const Tensor<T>&, const Tensor<T>&, const SsimOptions&);               \
    template Tensor<T> l1_loss<T>(const Tensor<T>&, const Tensor<T>&);                                 \
    template Tensor<T> ssim_loss<T>(const Tensor<T>&, const Tensor<T>&, const SsimOptions&);          \
    template Tensor<T> dynamic_tuning_loss<T>(const Tensor<T>&, const Tensor<T>&);                     \
    template Tensor<T> dynamic_tuning_loss<T>(const Tensor<T>&, const ClaheConfig&);                   \
    template LossTerms<T> total_loss<T>(const Tensor<T>&, const Tensor<T>&, const LossWeights&,         \
                                        const ClaheConfig&, const Tensor<T>*);

DGNET_INSTANTIATE_LOSSES(float)
DGNET_INSTANTIATE_LOSSES(double)

} // namespace dgnet
