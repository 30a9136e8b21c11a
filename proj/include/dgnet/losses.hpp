#pragma once

#include "dgnet/clahe.hpp"
#include "dgnet/tensor.hpp"

namespace dgnet {

struct LossWeights {
    double alpha = 1.0;  ///< L1
    double beta = 1.0;   ///< 1 - SSIM
    double gamma = 0.35; ///< dynamic tuning loss against the CLAHE pseudo-label

    /// Throws ConfigError on a negative or non-finite weight.
    void validate() const;
};

struct SsimOptions {
    int window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double data_range = 1.0;
};

/// Mean SSIM over every (image, channel) plane and every valid window
/// position (no padding). Differentiable with respect to both arguments.
/// Throws DimensionError on a shape mismatch and ConfigError when the image is
/// smaller than the window.
template <class T>
Tensor<T> ssim(const Tensor<T>& a, const Tensor<T>& b, const SsimOptions& options = {});

template <class T>
Tensor<T> l1_loss(const Tensor<T>& pred, const Tensor<T>& target);

/// 1 - ssim(pred, target).
template <class T>
Tensor<T> ssim_loss(const Tensor<T>& pred, const Tensor<T>& target, const SsimOptions& options = {});

/// Mean absolute error against CLAHE(pred.detach()); no gradient flows through
/// the pseudo-label.
template <class T>
Tensor<T> dynamic_tuning_loss(const Tensor<T>& pred, const ClaheConfig& clahe_config);

/// Same loss against an already computed pseudo-label.
template <class T>
Tensor<T> dynamic_tuning_loss(const Tensor<T>& pred, const Tensor<T>& pseudo_label);

template <class T>
struct LossTerms {
    Tensor<T> total; ///< differentiable scalar
    double l1 = 0.0;
    double ssim = 0.0;    ///< the SSIM loss term, 1 - SSIM
    double dynamic = 0.0; ///< exactly 0 when gamma is 0
    Tensor<T> pseudo_label; ///< empty when gamma is 0
};

/// alpha * L1 + beta * L_SSIM + gamma * L_d. A zero weight drops its term from
/// the graph entirely. Every component value is still reported except the
/// dynamic term, which is only built when gamma > 0. When pseudo_label is
/// given it replaces the per-call CLAHE target.
template <class T>
LossTerms<T> total_loss(const Tensor<T>& pred, const Tensor<T>& target, const LossWeights& weights,
                        const ClaheConfig& clahe_config, const Tensor<T>* pseudo_label = nullptr);

} // namespace dgnet
