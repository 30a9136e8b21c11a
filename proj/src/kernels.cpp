#include "dgnet/kernels.hpp"

#include <algorithm>
#include <cstring>
#include <vector>

#include <Eigen/Core>

namespace dgnet::kernels {

namespace {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using ConstMap = Eigen::Map<const RowMatrix<T>>;
template <class T>
using StridedMap = Eigen::Map<RowMatrix<T>, 0, Eigen::OuterStride<>>;
template <class T>
using ConstStridedMap = Eigen::Map<const RowMatrix<T>, 0, Eigen::OuterStride<>>;

// Columns per im2col chunk. Bounded so the scratch matrix stays around 8 MB
// for float; a function of the geometry only.
std::int64_t chunk_columns(const ConvGeometry& g)
{
    constexpr std::int64_t kScratchElements = std::int64_t{1} << 21;
    const std::int64_t columns = g.out_h() * g.out_w();
    const std::int64_t wanted = std::max<std::int64_t>(256, kScratchElements / g.patch());
    return std::min(wanted, columns);
}

// Fills col (patch x count, row-major) with the receptive fields of output
// positions [begin, begin + count) for one image and one group.
template <class T>
void im2col(const ConvGeometry& g, const T* in_group, std::int64_t begin, std::int64_t count,
            T* col)
{
    const std::int64_t ow = g.out_w();
    const std::int64_t plane = g.in_h * g.in_w;
    for (std::int64_t ci = 0; ci < g.in_per_group(); ++ci) {
        const T* channel = in_group + ci * plane;
        for (std::int64_t ky = 0; ky < g.kernel_h; ++ky) {
            for (std::int64_t kx = 0; kx < g.kernel_w; ++kx) {
                T* row = col + ((ci * g.kernel_h + ky) * g.kernel_w + kx) * count;
                std::int64_t j = 0;
                std::int64_t oy = begin / ow;
                std::int64_t ox = begin % ow;
                while (j < count) {
                    const std::int64_t run = std::min(count - j, ow - ox);
                    const std::int64_t iy = oy * g.stride - g.padding + ky;
                    if (iy < 0 || iy >= g.in_h) {
                        std::fill(row + j, row + j + run, T(0));
                    } else if (g.stride == 1) {
                        // ix = ox + r - padding + kx; copy the in-bounds span.
                        const std::int64_t shift = kx - g.padding;
                        const std::int64_t lo = std::clamp<std::int64_t>(-(ox + shift), 0, run);
                        const std::int64_t hi = std::clamp<std::int64_t>(g.in_w - (ox + shift), lo, run);
                        std::fill(row + j, row + j + lo, T(0));
                        std::memcpy(row + j + lo, channel + iy * g.in_w + ox + shift + lo,
                                    static_cast<std::size_t>(hi - lo) * sizeof(T));
                        std::fill(row + j + hi, row + j + run, T(0));
                    } else {
                        const T* src = channel + iy * g.in_w;
                        for (std::int64_t r = 0; r < run; ++r) {
                            const std::int64_t ix = (ox + r) * g.stride - g.padding + kx;
                            row[j + r] = (ix >= 0 && ix < g.in_w) ? src[ix] : T(0);
                        }
                    }
                    j += run;
                    ox = 0;
                    ++oy;
                }
            }
        }
    }
}

// Inverse scatter of im2col for a full image/group (count == out_h*out_w).
template <class T>
void col2im_add(const ConvGeometry& g, const T* col, T* in_group)
{
    const std::int64_t oh = g.out_h();
    const std::int64_t ow = g.out_w();
    const std::int64_t count = oh * ow;
    const std::int64_t plane = g.in_h * g.in_w;
    for (std::int64_t ci = 0; ci < g.in_per_group(); ++ci) {
        T* channel = in_group + ci * plane;
        for (std::int64_t ky = 0; ky < g.kernel_h; ++ky) {
            for (std::int64_t kx = 0; kx < g.kernel_w; ++kx) {
                const T* row = col + ((ci * g.kernel_h + ky) * g.kernel_w + kx) * count;
                for (std::int64_t oy = 0; oy < oh; ++oy) {
                    const std::int64_t iy = oy * g.stride - g.padding + ky;
                    if (iy < 0 || iy >= g.in_h) continue;
                    for (std::int64_t ox = 0; ox < ow; ++ox) {
                        const std::int64_t ix = ox * g.stride - g.padding + kx;
                        if (ix < 0 || ix >= g.in_w) continue;
                        channel[iy * g.in_w + ix] += row[oy * ow + ox];
                    }
                }
            }
        }
    }
}

template <class T>
void forward_impl(const ConvGeometry& g, const T* input, const T* weight, const T* bias,
                  T* output, bool accumulate)
{
    const std::int64_t columns = g.out_h() * g.out_w();
    const std::int64_t chunk = chunk_columns(g);
    const std::int64_t chunks = (columns + chunk - 1) / chunk;
    const std::int64_t tasks = g.batch * g.groups * chunks;
    const std::int64_t patch = g.patch();
    const std::int64_t opg = g.out_per_group();
    const std::int64_t in_plane = g.in_h * g.in_w;

#pragma omp parallel
    {
        std::vector<T> col(static_cast<std::size_t>(patch * chunk));
#pragma omp for schedule(static)
        for (std::int64_t task = 0; task < tasks; ++task) {
            const std::int64_t n = task / (g.groups * chunks);
            const std::int64_t grp = (task / chunks) % g.groups;
            const std::int64_t begin = (task % chunks) * chunk;
            const std::int64_t count = std::min(chunk, columns - begin);

            const T* in_group = input + (n * g.in_channels + grp * g.in_per_group()) * in_plane;
            im2col(g, in_group, begin, count, col.data());

            ConstMap<T> w(weight + grp * opg * patch, opg, patch);
            ConstMap<T> c(col.data(), patch, count);
            T* out_ptr = output + (n * g.out_channels + grp * opg) * columns + begin;
            StridedMap<T> out(out_ptr, opg, count, Eigen::OuterStride<>(columns));
            if (accumulate) {
                out.noalias() += w * c;
            } else {
                out.noalias() = w * c;
            }
            if (bias != nullptr) {
                for (std::int64_t o = 0; o < opg; ++o) {
                    const T b = bias[grp * opg + o];
                    T* row = out_ptr + o * columns;
                    for (std::int64_t j = 0; j < count; ++j) row[j] += b;
                }
            }
        }
    }
}

} // namespace

template <class T>
void conv2d_forward(const ConvGeometry& g, const T* input, const T* weight, const T* bias,
                    T* output)
{
    forward_impl(g, input, weight, bias, output, false);
}

template <class T>
void conv2d_backward_input(const ConvGeometry& g, const T* grad_output, const T* weight,
                           T* grad_input)
{
    const std::int64_t ipg = g.in_per_group();
    const std::int64_t opg = g.out_per_group();
    const std::int64_t kh = g.kernel_h;
    const std::int64_t kw = g.kernel_w;

    if (g.stride == 1 && kh == kw && g.padding <= kh - 1) {
        // Stride-1 input gradient is a forward correlation of grad_output with
        // the spatially flipped, channel-transposed kernel.
        std::vector<T> flipped(static_cast<std::size_t>(g.in_channels * opg * kh * kw));
        for (std::int64_t grp = 0; grp < g.groups; ++grp) {
            for (std::int64_t ci = 0; ci < ipg; ++ci) {
                for (std::int64_t co = 0; co < opg; ++co) {
                    for (std::int64_t ky = 0; ky < kh; ++ky) {
                        for (std::int64_t kx = 0; kx < kw; ++kx) {
                            const std::int64_t src =
                                (((grp * opg + co) * ipg + ci) * kh + (kh - 1 - ky)) * kw + (kw - 1 - kx);
                            const std::int64_t dst = (((grp * ipg + ci) * opg + co) * kh + ky) * kw + kx;
                            flipped[dst] = weight[src];
                        }
                    }
                }
            }
        }
        ConvGeometry t;
        t.batch = g.batch;
        t.in_channels = g.out_channels;
        t.in_h = g.out_h();
        t.in_w = g.out_w();
        t.out_channels = g.in_channels;
        t.kernel_h = kh;
        t.kernel_w = kw;
        t.stride = 1;
        t.padding = kh - 1 - g.padding;
        t.groups = g.groups;
        forward_impl(t, grad_output, flipped.data(), static_cast<const T*>(nullptr), grad_input, true);
        return;
    }

    const std::int64_t columns = g.out_h() * g.out_w();
    const std::int64_t patch = g.patch();
    const std::int64_t in_plane = g.in_h * g.in_w;
    const std::int64_t tasks = g.batch * g.groups;
#pragma omp parallel
    {
        std::vector<T> col(static_cast<std::size_t>(patch * columns));
#pragma omp for schedule(static)
        for (std::int64_t task = 0; task < tasks; ++task) {
            const std::int64_t n = task / g.groups;
            const std::int64_t grp = task % g.groups;
            ConstMap<T> w(weight + grp * opg * patch, opg, patch);
            ConstMap<T> dy(grad_output + (n * g.out_channels + grp * opg) * columns, opg, columns);
            Eigen::Map<RowMatrix<T>> c(col.data(), patch, columns);
            c.noalias() = w.transpose() * dy;
            col2im_add(g, col.data(), grad_input + (n * g.in_channels + grp * ipg) * in_plane);
        }
    }
}

template <class T>
void conv2d_backward_weight(const ConvGeometry& g, const T* input, const T* grad_output,
                            T* grad_weight, T* grad_bias)
{
    const std::int64_t columns = g.out_h() * g.out_w();
    const std::int64_t chunk = chunk_columns(g);
    const std::int64_t chunks = (columns + chunk - 1) / chunk;
    const std::int64_t patch = g.patch();
    const std::int64_t opg = g.out_per_group();
    const std::int64_t in_plane = g.in_h * g.in_w;
    const std::int64_t per_group = g.batch * chunks;
    const std::int64_t tasks = g.groups * per_group;
    const std::int64_t block = opg * patch;

    std::vector<T> partial(static_cast<std::size_t>(tasks * block));
#pragma omp parallel
    {
        std::vector<T> col(static_cast<std::size_t>(patch * chunk));
#pragma omp for schedule(static)
        for (std::int64_t task = 0; task < tasks; ++task) {
            const std::int64_t grp = task / per_group;
            const std::int64_t n = (task / chunks) % g.batch;
            const std::int64_t begin = (task % chunks) * chunk;
            const std::int64_t count = std::min(chunk, columns - begin);

            const T* in_group = input + (n * g.in_channels + grp * g.in_per_group()) * in_plane;
            im2col(g, in_group, begin, count, col.data());
            ConstMap<T> c(col.data(), patch, count);
            ConstStridedMap<T> dy(grad_output + (n * g.out_channels + grp * opg) * columns + begin,
                                  opg, count, Eigen::OuterStride<>(columns));
            Eigen::Map<RowMatrix<T>> p(partial.data() + task * block, opg, patch);
            p.noalias() = dy * c.transpose();
        }

#pragma omp for schedule(static)
        for (std::int64_t grp = 0; grp < g.groups; ++grp) {
            T* dst = grad_weight + grp * block;
            for (std::int64_t k = 0; k < per_group; ++k) {
                const T* src = partial.data() + (grp * per_group + k) * block;
                for (std::int64_t e = 0; e < block; ++e) dst[e] += src[e];
            }
        }

        if (grad_bias != nullptr) {
#pragma omp for schedule(static)
            for (std::int64_t o = 0; o < g.out_channels; ++o) {
                double acc = 0.0;
                for (std::int64_t n = 0; n < g.batch; ++n) {
                    const T* row = grad_output + (n * g.out_channels + o) * columns;
                    for (std::int64_t j = 0; j < columns; ++j) acc += static_cast<double>(row[j]);
                }
                grad_bias[o] += static_cast<T>(acc);
            }
        }
    }
}

namespace reference {

template <class T>
void conv2d_forward(const ConvGeometry& g, const T* input, const T* weight, const T* bias,
                    T* output)
{
    const std::int64_t oh = g.out_h();
    const std::int64_t ow = g.out_w();
    const std::int64_t ipg = g.in_per_group();
    const std::int64_t opg = g.out_per_group();
    for (std::int64_t n = 0; n < g.batch; ++n) {
        for (std::int64_t o = 0; o < g.out_channels; ++o) {
            const std::int64_t grp = o / opg;
            for (std::int64_t y = 0; y < oh; ++y) {
                for (std::int64_t x = 0; x < ow; ++x) {
                    T acc = bias != nullptr ? bias[o] : T(0);
                    for (std::int64_t ci = 0; ci < ipg; ++ci) {
                        const std::int64_t c = grp * ipg + ci;
                        for (std::int64_t ky = 0; ky < g.kernel_h; ++ky) {
                            const std::int64_t iy = y * g.stride - g.padding + ky;
                            if (iy < 0 || iy >= g.in_h) continue;
                            for (std::int64_t kx = 0; kx < g.kernel_w; ++kx) {
                                const std::int64_t ix = x * g.stride - g.padding + kx;
                                if (ix < 0 || ix >= g.in_w) continue;
                                acc += weight[((o * ipg + ci) * g.kernel_h + ky) * g.kernel_w + kx] *
                                       input[((n * g.in_channels + c) * g.in_h + iy) * g.in_w + ix];
                            }
                        }
                    }
                    output[((n * g.out_channels + o) * oh + y) * ow + x] = acc;
                }
            }
        }
    }
}

template <class T>
void conv2d_backward_input(const ConvGeometry& g, const T* grad_output, const T* weight,
                           T* grad_input)
{
    const std::int64_t oh = g.out_h();
    const std::int64_t ow = g.out_w();
    const std::int64_t ipg = g.in_per_group();
    const std::int64_t opg = g.out_per_group();
    for (std::int64_t n = 0; n < g.batch; ++n) {
        for (std::int64_t o = 0; o < g.out_channels; ++o) {
            const std::int64_t grp = o / opg;
            for (std::int64_t y = 0; y < oh; ++y) {
                for (std::int64_t x = 0; x < ow; ++x) {
                    const T dy = grad_output[((n * g.out_channels + o) * oh + y) * ow + x];
                    for (std::int64_t ci = 0; ci < ipg; ++ci) {
                        const std::int64_t c = grp * ipg + ci;
                        for (std::int64_t ky = 0; ky < g.kernel_h; ++ky) {
                            const std::int64_t iy = y * g.stride - g.padding + ky;
                            if (iy < 0 || iy >= g.in_h) continue;
                            for (std::int64_t kx = 0; kx < g.kernel_w; ++kx) {
                                const std::int64_t ix = x * g.stride - g.padding + kx;
                                if (ix < 0 || ix >= g.in_w) continue;
                                grad_input[((n * g.in_channels + c) * g.in_h + iy) * g.in_w + ix] +=
                                    dy * weight[((o * ipg + ci) * g.kernel_h + ky) * g.kernel_w + kx];
                            }
                        }
                    }
                }
            }
        }
    }
}

template <class T>
void conv2d_backward_weight(const ConvGeometry& g, const T* input, const T* grad_output,
                            T* grad_weight, T* grad_bias)
{
    const std::int64_t oh = g.out_h();
    const std::int64_t ow = g.out_w();
    const std::int64_t ipg = g.in_per_group();
    const std::int64_t opg = g.out_per_group();
    for (std::int64_t n = 0; n < g.batch; ++n) {
        for (std::int64_t o = 0; o < g.out_channels; ++o) {
            const std::int64_t grp = o / opg;
            for (std::int64_t y = 0; y < oh; ++y) {
                for (std::int64_t x = 0; x < ow; ++x) {
                    const T dy = grad_output[((n * g.out_channels + o) * oh + y) * ow + x];
                    if (grad_bias != nullptr) grad_bias[o] += dy;
                    for (std::int64_t ci = 0; ci < ipg; ++ci) {
                        const std::int64_t c = grp * ipg + ci;
                        for (std::int64_t ky = 0; ky < g.kernel_h; ++ky) {
                            const std::int64_t iy = y * g.stride - g.padding + ky;
                            if (iy < 0 || iy >= g.in_h) continue;
                            for (std::int64_t kx = 0; kx < g.kernel_w; ++kx) {
                                const std::int64_t ix = x * g.stride - g.padding + kx;
                                if (ix < 0 || ix >= g.in_w) continue;
                                grad_weight[((o * ipg + ci) * g.kernel_h + ky) * g.kernel_w + kx] +=
                                    dy * input[((n * g.in_channels + c) * g.in_h + iy) * g.in_w + ix];
                            }
                        }
                    }
                }
            }
        }
    }
}

template void conv2d_forward<float>(const ConvGeometry&, const float*, const float*, const float*, float*);
template void conv2d_forward<double>(const ConvGeometry&, const double*, const double*, const double*, double*);
template void conv2d_backward_input<float>(const ConvGeometry&, const float*, const float*, float*);
template void conv2d_backward_input<double>(const ConvGeometry&, const double*, const double*, double*);
template void conv2d_backward_weight<float>(const ConvGeometry&, const float*, const float*, float*, float*);
template void conv2d_backward_weight<double>(const ConvGeometry&, const double*, const double*, double*, double*);

} // namespace reference

template void conv2d_forward<float>(const ConvGeometry&, const float*, const float*, const float*, float*);
template void conv2d_forward<double>(const ConvGeometry&, const double*, const double*, const double*, double*);
template void conv2d_backward_input<float>(const ConvGeometry&, const float*, const float*, float*);
template void conv2d_backward_input<double>(const ConvGeometry&, const double*, const double*, double*);
template void conv2d_backward_weight<float>(const ConvGeometry&, const float*, const float*, float*, float*);
template void conv2d_backward_weight<double>(const ConvGeometry&, const double*, const double*, double*, double*);

} // namespace dgnet::kernels
