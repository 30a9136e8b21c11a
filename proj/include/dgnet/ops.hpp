#pragma once

#include <cstdint>
#include <vector>

#include "dgnet/tensor.hpp"

namespace dgnet {

enum class Mode { Train, Eval };

struct Conv2dOptions {
    int stride = 1;
    int padding = 0;
    int groups = 1;
};

/// Grouped 2-D cross-correlation (no kernel flip).
/// weight: (C_out, C_in / groups, kH, kW); bias: (1, C_out, 1, 1) or null.
template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>* bias,
                 Conv2dOptions options);

/// Running statistics of one batch-norm layer. Starts at mean 0 / var 1, so
/// eval mode before any training step is a plain affine transform.
template <class T>
struct BatchNormState {
    std::vector<T> running_mean;
    std::vector<T> running_var;

    BatchNormState() = default;
    explicit BatchNormState(std::int64_t channels)
        : running_mean(static_cast<std::size_t>(channels), T(0)),
          running_var(static_cast<std::size_t>(channels), T(1))
    {}
};

struct BatchNormOptions {
    double eps = 1e-5;
    double momentum = 0.1;
};

/// Per-channel batch normalization with affine gamma/beta of shape (1, C, 1, 1).
/// Train mode normalizes with biased batch statistics over (N, H, W) and
/// updates the running mean and the unbiased running variance.
template <class T>
Tensor<T> batchnorm2d(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                      BatchNormState<T>& state, Mode mode, BatchNormOptions options = {});

/// x * tanh(softplus(x)).
template <class T>
Tensor<T> mish(const Tensor<T>& x);

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x);

template <class T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& inputs);

/// Channels [begin, end) of x.
template <class T>
Tensor<T> slice_channels(const Tensor<T>& x, std::int64_t begin, std::int64_t end);

/// Pads H and W by `pad` on every side, repeating the edge pixels.
template <class T>
Tensor<T> pad_replicate(const Tensor<T>& x, int pad);

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <class T>
Tensor<T> scale(const Tensor<T>& x, T factor);
/// x + offset
template <class T>
Tensor<T> shift(const Tensor<T>& x, T offset);

/// Gradient 1 strictly inside (lo, hi), 0 elsewhere.
template <class T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi);

/// Subgradient 0 at 0.
template <class T>
Tensor<T> abs(const Tensor<T>& x);

/// Scalar (1,1,1,1) mean over every element.
template <class T>
Tensor<T> mean(const Tensor<T>& x);

template <class T>
Tensor<T> sum(const Tensor<T>& x);

} // namespace dgnet
