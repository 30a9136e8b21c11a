#pragma once

#include <cstdint>
#include <vector>

#include "dgnet/dgnet.hpp"
#include "dgnet/parameter.hpp"

namespace dgnet {

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-2;

    void validate() const;
};

/// Adam with decoupled weight decay:
///   p <- p - lr * wd * p - lr * m_hat / (sqrt(v_hat) + eps)
/// with bias-corrected first and second moments. Parameters flagged
/// non-trainable are never written.
template <class T>
class AdamW {
public:
    AdamW(std::vector<Parameter<T>*> params, AdamWConfig config);

    /// Throws UsageError when a trainable parameter has no gradient.
    void step();

    const AdamWConfig& config() const { return config_; }
    void set_lr(double lr) { config_.lr = lr; }
    std::int64_t steps() const { return steps_; }
    void set_steps(std::int64_t steps) { steps_ = steps; }
    const std::vector<Parameter<T>*>& params() const { return params_; }
    std::vector<T>& first_moment(std::size_t i) { return m_[i]; }
    std::vector<T>& second_moment(std::size_t i) { return v_[i]; }

private:
    std::vector<Parameter<T>*> params_;
    AdamWConfig config_;
    std::vector<std::vector<T>> m_;
    std::vector<std::vector<T>> v_;
    std::int64_t steps_ = 0;
};

/// shadow <- decay * shadow + (1 - decay) * param for every scalar of every
/// pair. Throws ConfigError unless 0 < decay < 1 and UsageError when the two
/// lists do not line up.
template <class T>
void ema_update(const std::vector<Parameter<T>*>& params, const std::vector<Parameter<T>*>& shadow, double decay);

/// Shadow copy of a model updated by ema_update. Batch-norm running
/// statistics are copied from the live model on every update.
template <class T>
class EmaState {
public:
    EmaState(DGNet<T>& model, double decay);

    /// One update with decay `effective_decay` (defaults to decay()).
    void update(DGNet<T>& model);
    void update(DGNet<T>& model, double effective_decay);

    double decay() const { return decay_; }
    std::int64_t updates() const { return updates_; }
    void set_updates(std::int64_t updates) { updates_ = updates; }
    DGNet<T>& shadow() { return shadow_; }

private:
    double decay_;
    DGNet<T> shadow_;
    std::int64_t updates_ = 0;
};

/// Global L2 norm of the gradients of trainable parameters (absent gradients count as 0).
template <class T>
double gradient_norm(const std::vector<Parameter<T>*>& params);

/// Scales trainable gradients so their global norm is at most max_norm.
template <class T>
void clip_gradient_norm(const std::vector<Parameter<T>*>& params, double max_norm);

} // namespace dgnet
