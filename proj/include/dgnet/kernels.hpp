#pragma once

#include <cstdint>

namespace dgnet::kernels {

/// Geometry of a grouped 2-D cross-correlation over an NCHW batch.
struct ConvGeometry {
    std::int64_t batch = 1;
    std::int64_t in_channels = 1;
    std::int64_t in_h = 1;
    std::int64_t in_w = 1;
    std::int64_t out_channels = 1;
    std::int64_t kernel_h = 1;
    std::int64_t kernel_w = 1;
    std::int64_t stride = 1;
    std::int64_t padding = 0;
    std::int64_t groups = 1;

    std::int64_t out_h() const { return (in_h + 2 * padding - kernel_h) / stride + 1; }
    std::int64_t out_w() const { return (in_w + 2 * padding - kernel_w) / stride + 1; }
    std::int64_t in_per_group() const { return in_channels / groups; }
    std::int64_t out_per_group() const { return out_channels / groups; }
    /// Rows of the im2col matrix for one group.
    std::int64_t patch() const { return in_per_group() * kernel_h * kernel_w; }
};

// OpenMP kernels. Work is split into (image, group, column-chunk) tasks whose
// boundaries depend only on the geometry, so results are bit-identical for any
// thread count. Weight gradients are reduced over tasks in a fixed order.

template <class T>
void conv2d_forward(const ConvGeometry& g, const T* input, const T* weight, const T* bias,
                    T* output);

/// grad_input += dL/dinput
template <class T>
void conv2d_backward_input(const ConvGeometry& g, const T* grad_output, const T* weight,
                           T* grad_input);

/// grad_weight += dL/dweight, grad_bias += dL/dbias (grad_bias may be null).
template <class T>
void conv2d_backward_weight(const ConvGeometry& g, const T* input, const T* grad_output,
                            T* grad_weight, T* grad_bias);

namespace reference {

// Direct nested-loop versions. Serial, slow, kept as the oracle for the
// parallel kernels and as the baseline in bench/.

template <class T>
void conv2d_forward(const ConvGeometry& g, const T* input, const T* weight, const T* bias,
                    T* output);

template <class T>
void conv2d_backward_input(const ConvGeometry& g, const T* grad_output, const T* weight,
                           T* grad_input);

template <class T>
void conv2d_backward_weight(const ConvGeometry& g, const T* input, const T* grad_output,
                            T* grad_weight, T* grad_bias);

} // namespace reference

} // namespace dgnet::kernels
