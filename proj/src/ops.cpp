#include <algorithm>
#include "dgnet/ops.hpp"

#include <cmath>
#include <initializer_list>
#include <string>

#include "dgnet/kernels.hpp"

namespace dgnet {

namespace {

template <class T>
Tape<T>* recording_tape(std::initializer_list<const Tensor<T>*> inputs)
{
    Tape<T>* tape = active_tape<T>();
    if (tape == nullptr) return nullptr;
    for (const Tensor<T>* t : inputs) {
        if (t != nullptr && t->requires_grad()) return tape;
    }
    return nullptr;
}

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op)
{
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
                             b.shape().str());
    }
}

template <class T>
bool has_output_grad(const Tensor<T>& out)
{
    return !out.storage()->grad.empty();
}

// Elementwise unary op with derivative computed from (input, output).
template <class T, class Forward, class Derivative>
Tensor<T> unary(const Tensor<T>& x, Forward f, Derivative df)
{
    Tensor<T> out(x.shape());
    const T* in = x.raw();
    T* o = out.raw();
    const auto count = static_cast<std::int64_t>(x.numel());
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < count; ++i) o[i] = f(in[i]);

    if (Tape<T>* tape = recording_tape<T>({&x})) {
        out.set_requires_grad(true);
        tape->record([x, out, df]() mutable {
            if (!has_output_grad(out)) return;
            const T* in = x.raw();
            const T* y = out.raw();
            const T* gy = out.grad().data();
            T* gx = x.grad_mut().data();
            const auto count = static_cast<std::int64_t>(x.numel());
#pragma omp parallel for schedule(static)
            for (std::int64_t i = 0; i < count; ++i) gx[i] += gy[i] * df(in[i], y[i]);
        });
    }
    return out;
}

template <class T>
T logistic(T x)
{
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
}

} // namespace

template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>* bias,
                 Conv2dOptions options)
{
    const Shape& is = input.shape();
    const Shape& ws = weight.shape();
    if (options.groups < 1 || options.stride < 1 || options.padding < 0) {
        throw ConfigError("conv2d: invalid stride/padding/groups");
    }
    if (is.c % options.groups != 0 || ws.n % options.groups != 0) {
        throw ConfigError("conv2d: groups=" + std::to_string(options.groups) +
                          " does not divide channels (in " + std::to_string(is.c) + ", out " +
                          std::to_string(ws.n) + ")");
    }
    if (ws.c != is.c / options.groups) {
        throw DimensionError("conv2d: weight " + ws.str() + " incompatible with input " + is.str());
    }
    if (bias != nullptr && bias->numel() != static_cast<std::size_t>(ws.n)) {
        throw DimensionError("conv2d: bias length does not match output channels");
    }

    kernels::ConvGeometry g;
    g.batch = is.n;
    g.in_channels = is.c;
    g.in_h = is.h;
    g.in_w = is.w;
    g.out_channels = ws.n;
    g.kernel_h = ws.h;
    g.kernel_w = ws.w;
    g.stride = options.stride;
    g.padding = options.padding;
    g.groups = options.groups;
    if (g.out_h() < 1 || g.out_w() < 1) {
        throw DimensionError("conv2d: kernel larger than padded input " + is.str());
    }

    Tensor<T> out(Shape{is.n, ws.n, g.out_h(), g.out_w()});
    kernels::conv2d_forward(g, input.raw(), weight.raw(), bias != nullptr ? bias->raw() : nullptr,
                            out.raw());

    if (Tape<T>* tape = recording_tape<T>({&input, &weight, bias})) {
        out.set_requires_grad(true);
        Tensor<T> b = bias != nullptr ? *bias : Tensor<T>();
        const bool has_bias = bias != nullptr;
        tape->record([input, weight, b, has_bias, out, g]() mutable {
            if (!has_output_grad(out)) return;
            const T* gy = out.grad().data();
            if (input.requires_grad()) {
                kernels::conv2d_backward_input(g, gy, weight.raw(), input.grad_mut().data());
            }
            const bool bias_grad = has_bias && b.requires_grad();
            if (weight.requires_grad() || bias_grad) {
                // The weight kernel also produces the bias gradient; route an
                // unused weight gradient into scratch.
                std::vector<T> scratch;
                T* gw = nullptr;
                if (weight.requires_grad()) {
                    gw = weight.grad_mut().data();
                } else {
                    scratch.assign(weight.numel(), T(0));
                    gw = scratch.data();
                }
                kernels::conv2d_backward_weight(g, input.raw(), gy, gw,
                                                bias_grad ? b.grad_mut().data() : nullptr);
            }
        });
    }
    return out;
}

template <class T>
Tensor<T> batchnorm2d(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                      BatchNormState<T>& state, Mode mode, BatchNormOptions options)
{
    const Shape& s = input.shape();
    const auto channels = static_cast<std::size_t>(s.c);
    if (gamma.numel() != channels || beta.numel() != channels) {
        throw DimensionError("batchnorm2d: gamma/beta length does not match " + std::to_string(s.c) +
                             " channels");
    }
    if (state.running_mean.size() != channels || state.running_var.size() != channels) {
        throw DimensionError("batchnorm2d: running statistics sized for a different channel count");
    }
    const std::int64_t plane = s.plane();
    const std::int64_t count = s.n * plane;
    if (mode == Mode::Train && count < 1) throw DimensionError("batchnorm2d: empty batch");

    Tensor<T> out(s);
    std::vector<T> normalized(input.numel());
    std::vector<T> inv_std(channels);
    const T* x = input.raw();
    T* y = out.raw();

#pragma omp parallel for schedule(static)
    for (std::int64_t c = 0; c < s.c; ++c) {
        T mu;
        T var;
        if (mode == Mode::Train) {
            double acc = 0.0;
            for (std::int64_t n = 0; n < s.n; ++n) {
                const T* p = x + (n * s.c + c) * plane;
                for (std::int64_t i = 0; i < plane; ++i) acc += static_cast<double>(p[i]);
            }
            const double m = acc / static_cast<double>(count);
            double sq = 0.0;
            for (std::int64_t n = 0; n < s.n; ++n) {
                const T* p = x + (n * s.c + c) * plane;
                for (std::int64_t i = 0; i < plane; ++i) {
                    const double d = static_cast<double>(p[i]) - m;
                    sq += d * d;
                }
            }
            const double biased = sq / static_cast<double>(count);
            const double unbiased = count > 1 ? sq / static_cast<double>(count - 1) : biased;
            mu = static_cast<T>(m);
            var = static_cast<T>(biased);
            const T momentum = static_cast<T>(options.momentum);
            state.running_mean[c] = (T(1) - momentum) * state.running_mean[c] + momentum * mu;
            state.running_var[c] =
                (T(1) - momentum) * state.running_var[c] + momentum * static_cast<T>(unbiased);
        } else {
            mu = state.running_mean[c];
            var = state.running_var[c];
        }
        const T istd = T(1) / std::sqrt(var + static_cast<T>(options.eps));
        inv_std[c] = istd;
        const T gm = gamma.raw()[c];
        const T bt = beta.raw()[c];
        for (std::int64_t n = 0; n < s.n; ++n) {
            const std::int64_t base = (n * s.c + c) * plane;
            for (std::int64_t i = 0; i < plane; ++i) {
                const T xh = (x[base + i] - mu) * istd;
                normalized[base + i] = xh;
                y[base + i] = gm * xh + bt;
            }
        }
    }

    if (Tape<T>* tape = recording_tape<T>({&input, &gamma, &beta})) {
        out.set_requires_grad(true);
        tape->record([input, gamma, beta, out, normalized = std::move(normalized),
                      inv_std = std::move(inv_std), mode]() mutable {
            if (!has_output_grad(out)) return;
            const Shape& s = input.shape();
            const std::int64_t plane = s.plane();
            const std::int64_t count = s.n * plane;
            const T* gy = out.grad().data();
            T* gx = input.requires_grad() ? input.grad_mut().data() : nullptr;
            T* gg = gamma.requires_grad() ? gamma.grad_mut().data() : nullptr;
            T* gb = beta.requires_grad() ? beta.grad_mut().data() : nullptr;
#pragma omp parallel for schedule(static)
            for (std::int64_t c = 0; c < s.c; ++c) {
                double sum_dy = 0.0;
                double sum_dy_xh = 0.0;
                for (std::int64_t n = 0; n < s.n; ++n) {
                    const std::int64_t base = (n * s.c + c) * plane;
                    for (std::int64_t i = 0; i < plane; ++i) {
                        sum_dy += static_cast<double>(gy[base + i]);
                        sum_dy_xh += static_cast<double>(gy[base + i]) * static_cast<double>(normalized[base + i]);
                    }
                }
                if (gg != nullptr) gg[c] += static_cast<T>(sum_dy_xh);
                if (gb != nullptr) gb[c] += static_cast<T>(sum_dy);
                if (gx == nullptr) continue;
                const T gm = gamma.raw()[c];
                const T istd = inv_std[c];
                if (mode == Mode::Eval) {
                    for (std::int64_t n = 0; n < s.n; ++n) {
                        const std::int64_t base = (n * s.c + c) * plane;
                        for (std::int64_t i = 0; i < plane; ++i) gx[base + i] += gy[base + i] * gm * istd;
                    }
                    continue;
                }
                // dx = gamma * istd / M * (M * dy - sum(dy) - xhat * sum(dy * xhat))
                const T mean_dy = static_cast<T>(sum_dy / static_cast<double>(count));
                const T mean_dy_xh = static_cast<T>(sum_dy_xh / static_cast<double>(count));
                const T k = gm * istd;
                for (std::int64_t n = 0; n < s.n; ++n) {
                    const std::int64_t base = (n * s.c + c) * plane;
                    for (std::int64_t i = 0; i < plane; ++i) {
                        gx[base + i] += k * (gy[base + i] - mean_dy - normalized[base + i] * mean_dy_xh);
                    }
                }
            }
        });
    }
    return out;
}

template <class T>
Tensor<T> mish(const Tensor<T>& x)
{
    // With e = exp(v) and q = e * (e + 2): tanh(softplus(v)) = q / (q + 2) and
    // d/dv mish(v) = t + 4 v e (e + 1) / (q + 2)^2. The derivative is kept from
    // the forward pass.
    const bool record = recording_tape<T>({&x}) != nullptr;
    Tensor<T> out(x.shape());
    std::vector<T> slope(record ? x.numel() : 0);
    const T* in = x.raw();
    T* o = out.raw();
    T* d = slope.data();
    const auto count = static_cast<std::int64_t>(x.numel());
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < count; ++i) {
        const T v = in[i];
        if (v > T(20)) {
            o[i] = v;
            if (record) d[i] = T(1);
            continue;
        }
        const T e = std::exp(v);
        const T q = e * (e + T(2));
        const T den = q + T(2);
        const T t = q / den;
        o[i] = v * t;
        if (record) d[i] = t + T(4) * v * e * (e + T(1)) / (den * den);
    }
    if (record) {
        out.set_requires_grad(true);
        active_tape<T>()->record([x, out, slope = std::move(slope)]() {
            if (!has_output_grad(out)) return;
            const T* gy = out.grad().data();
            T* gx = x.grad_mut().data();
            const auto count = static_cast<std::int64_t>(x.numel());
#pragma omp parallel for schedule(static)
            for (std::int64_t i = 0; i < count; ++i) gx[i] += gy[i] * slope[i];
        });
    }
    return out;
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x)
{
    return unary<T>(x, [](T v) { return logistic(v); }, [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Tensor<T> abs(const Tensor<T>& x)
{
    return unary<T>(
        x, [](T v) { return std::abs(v); },
        [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <class T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi)
{
    if (lo > hi) throw ConfigError("clamp: lower bound above upper bound");
    return unary<T>(
        x, [lo, hi](T v) { return std::min(std::max(v, lo), hi); },
        [lo, hi](T v, T) { return (v > lo && v < hi) ? T(1) : T(0); });
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T factor)
{
    return unary<T>(x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <class T>
Tensor<T> shift(const Tensor<T>& x, T offset)
{
    return unary<T>(x, [offset](T v) { return v + offset; }, [](T, T) { return T(1); });
}

template <class T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& inputs)
{
    if (inputs.empty()) throw DimensionError("concat_channels: no inputs");
    const Shape& first = inputs.front().shape();
    std::int64_t channels = 0;
    for (const auto& t : inputs) {
        const Shape& s = t.shape();
        if (s.n != first.n || s.h != first.h || s.w != first.w) {
            throw DimensionError("concat_channels: spatial/batch mismatch " + s.str() + " vs " +
                                 first.str());
        }
        channels += s.c;
    }
    Tensor<T> out(Shape{first.n, channels, first.h, first.w});
    const std::int64_t plane = first.plane();
    for (std::int64_t n = 0; n < first.n; ++n) {
        std::int64_t offset = 0;
        for (const auto& t : inputs) {
            const std::int64_t block = t.shape().c * plane;
            std::copy_n(t.raw() + n * block, block, out.raw() + (n * channels) * plane + offset);
            offset += block;
        }
    }

    Tape<T>* tape = active_tape<T>();
    bool any = false;
    for (const auto& t : inputs) any = any || t.requires_grad();
    if (tape != nullptr && any) {
        out.set_requires_grad(true);
        tape->record([inputs, out]() mutable {
            if (!has_output_grad(out)) return;
            const Shape& s = out.shape();
            const std::int64_t plane = s.plane();
            const T* gy = out.grad().data();
            std::int64_t offset = 0;
            for (auto& t : inputs) {
                const std::int64_t block = t.shape().c * plane;
                if (t.requires_grad()) {
                    T* gx = t.grad_mut().data();
                    for (std::int64_t n = 0; n < s.n; ++n) {
                        const T* src = gy + n * s.c * plane + offset;
                        T* dst = gx + n * block;
                        for (std::int64_t i = 0; i < block; ++i) dst[i] += src[i];
                    }
                }
                offset += block;
            }
        });
    }
    return out;
}

template <class T>
Tensor<T> slice_channels(const Tensor<T>& x, std::int64_t begin, std::int64_t end)
{
    const Shape& s = x.shape();
    if (begin < 0 || end > s.c || begin >= end) {
        throw DimensionError("slice_channels: range [" + std::to_string(begin) + ", " +
                             std::to_string(end) + ") outside " + s.str());
    }
    const std::int64_t plane = s.plane();
    const std::int64_t width = end - begin;
    Tensor<T> out(Shape{s.n, width, s.h, s.w});
    for (std::int64_t n = 0; n < s.n; ++n) {
        std::copy_n(x.raw() + (n * s.c + begin) * plane, width * plane, out.raw() + n * width * plane);
    }
    if (Tape<T>* tape = recording_tape<T>({&x})) {
        out.set_requires_grad(true);
        tape->record([x, out, begin, width]() mutable {
            if (!has_output_grad(out)) return;
            const Shape& s = x.shape();
            const std::int64_t plane = s.plane();
            const T* gy = out.grad().data();
            T* gx = x.grad_mut().data();
            for (std::int64_t n = 0; n < s.n; ++n) {
                const T* src = gy + n * width * plane;
                T* dst = gx + (n * s.c + begin) * plane;
                for (std::int64_t i = 0; i < width * plane; ++i) dst[i] += src[i];
            }
        });
    }
    return out;
}

template <class T>
Tensor<T> pad_replicate(const Tensor<T>& x, int pad)
{
    if (pad < 0) throw ConfigError("pad_replicate: negative padding " + std::to_string(pad));
    const Shape& s = x.shape();
    const std::int64_t oh = s.h + 2 * pad;
    const std::int64_t ow = s.w + 2 * pad;
    Tensor<T> out(Shape{s.n, s.c, oh, ow});
    // Source index of every output row / column.
    std::vector<std::int64_t> rows(static_cast<std::size_t>(oh));
    std::vector<std::int64_t> cols(static_cast<std::size_t>(ow));
    for (std::int64_t y = 0; y < oh; ++y) rows[y] = std::clamp<std::int64_t>(y - pad, 0, s.h - 1);
    for (std::int64_t c = 0; c < ow; ++c) cols[c] = std::clamp<std::int64_t>(c - pad, 0, s.w - 1);

    const std::int64_t planes = s.n * s.c;
#pragma omp parallel for schedule(static)
    for (std::int64_t p = 0; p < planes; ++p) {
        const T* src = x.raw() + p * s.plane();
        T* dst = out.raw() + p * oh * ow;
        for (std::int64_t y = 0; y < oh; ++y)
            for (std::int64_t c = 0; c < ow; ++c) dst[y * ow + c] = src[rows[y] * s.w + cols[c]];
    }
    if (Tape<T>* tape = recording_tape<T>({&x})) {
        out.set_requires_grad(true);
        tape->record([x, out, rows, cols, planes]() mutable {
            if (!has_output_grad(out)) return;
            const Shape& s = x.shape();
            const auto oh = static_cast<std::int64_t>(rows.size());
            const auto ow = static_cast<std::int64_t>(cols.size());
            const T* gy = out.grad().data();
            T* gx = x.grad_mut().data();
#pragma omp parallel for schedule(static)
            for (std::int64_t p = 0; p < planes; ++p) {
                const T* src = gy + p * oh * ow;
                T* dst = gx + p * s.plane();
                for (std::int64_t y = 0; y < oh; ++y)
                    for (std::int64_t c = 0; c < ow; ++c) dst[rows[y] * s.w + cols[c]] += src[y * ow + c];
            }
        });
    }
    return out;
}

namespace {

template <class T, class Forward>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, const char* name, Forward f, T sign_b,
                 bool product)
{
    require_same_shape(a, b, name);
    Tensor<T> out(a.shape());
    const auto count = static_cast<std::int64_t>(a.numel());
    const T* pa = a.raw();
    const T* pb = b.raw();
    T* o = out.raw();
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < count; ++i) o[i] = f(pa[i], pb[i]);

    if (Tape<T>* tape = recording_tape<T>({&a, &b})) {
        out.set_requires_grad(true);
        tape->record([a, b, out, sign_b, product]() mutable {
            if (!has_output_grad(out)) return;
            const auto count = static_cast<std::int64_t>(out.numel());
            const T* gy = out.grad().data();
            // Same handle on both sides (x * x): accumulate a then b.
            if (a.requires_grad()) {
                T* ga = a.grad_mut().data();
                const T* pb = b.raw();
                for (std::int64_t i = 0; i < count; ++i) ga[i] += product ? gy[i] * pb[i] : gy[i];
            }
            if (b.requires_grad()) {
                T* gb = b.grad_mut().data();
                const T* pa = a.raw();
                for (std::int64_t i = 0; i < count; ++i) gb[i] += product ? gy[i] * pa[i] : sign_b * gy[i];
            }
        });
    }
    return out;
}

} // namespace

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b)
{
    return binary<T>(a, b, "add", [](T x, T y) { return x + y; }, T(1), false);
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b)
{
    return binary<T>(a, b, "sub", [](T x, T y) { return x - y; }, T(-1), false);
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b)
{
    return binary<T>(a, b, "mul", [](T x, T y) { return x * y; }, T(1), true);
}

namespace {

template <class T>
Tensor<T> reduce(const Tensor<T>& x, bool average)
{
    double acc = 0.0;
    for (const T v : x.data()) acc += static_cast<double>(v);
    const double count = static_cast<double>(x.numel());
    if (average) {
        if (x.numel() == 0) throw DimensionError("mean of an empty tensor");
        acc /= count;
    }
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc));
    if (Tape<T>* tape = recording_tape<T>({&x})) {
        out.set_requires_grad(true);
        tape->record([x, out, average, count]() mutable {
            if (!has_output_grad(out)) return;
            const T g = average ? static_cast<T>(static_cast<double>(out.grad()[0]) / count) : out.grad()[0];
            for (T& v : x.grad_mut()) v += g;
        });
    }
    return out;
}

} // namespace

template <class T>
Tensor<T> mean(const Tensor<T>& x)
{
    return reduce(x, true);
}

template <class T>
Tensor<T> sum(const Tensor<T>& x)
{
    return reduce(x, false);
}

#define DGNET_INSTANTIATE_OPS(T)                                                                     \
    template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*, Conv2dOptions); \
    template Tensor<T> batchnorm2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,          \
                                      BatchNormState<T>&, Mode, BatchNormOptions);                    \
    template Tensor<T> mish<T>(const Tensor<T>&);                                                    \
    template Tensor<T> sigmoid<T>(const Tensor<T>&);                                                 \
    template Tensor<T> concat_channels<T>(const std::vector<Tensor<T>>&);                            \
    template Tensor<T> slice_channels<T>(const Tensor<T>&, std::int64_t, std::int64_t);              \
    template Tensor<T> pad_replicate<T>(const Tensor<T>&, int);                                       \
    template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                   \
    template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                                   \
    template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                                   \
    template Tensor<T> scale<T>(const Tensor<T>&, T);                                                \
    template Tensor<T> shift<T>(const Tensor<T>&, T);                                                \
    template Tensor<T> clamp<T>(const Tensor<T>&, T, T);                                             \
    template Tensor<T> abs<T>(const Tensor<T>&);                                                     \
    template Tensor<T> mean<T>(const Tensor<T>&);                                                    \
    template Tensor<T> sum<T>(const Tensor<T>&);

DGNET_INSTANTIATE_OPS(float)
DGNET_INSTANTIATE_OPS(double)

#undef DGNET_INSTANTIATE_OPS

} // namespace dgnet
