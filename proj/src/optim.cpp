#include "dgnet/optim.hpp"

#include <cmath>
#include <string>

namespace dgnet {

void AdamWConfig::validate() const
{
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("adamw: lr must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw ConfigError("adamw: betas must lie in [0, 1)");
    }
    if (!(eps > 0.0)) throw ConfigError("adamw: eps must be > 0");
    if (!(weight_decay >= 0.0)) throw ConfigError("adamw: weight_decay must be >= 0");
}

template <class T>
AdamW<T>::AdamW(std::vector<Parameter<T>*> params, AdamWConfig config)
    : params_(std::move(params)), config_(config)
{
    config_.validate();
    for (Parameter<T>* p : params_) {
        m_.emplace_back(p->trainable ? p->tensor.numel() : 0, T(0));
        v_.emplace_back(p->trainable ? p->tensor.numel() : 0, T(0));
    }
}

template <class T>
void AdamW<T>::step()
{
    for (Parameter<T>* p : params_) {
        if (p->trainable && !p->tensor.has_grad()) {
            throw UsageError("adamw: trainable parameter '" + p->name + "' has no gradient");
        }
    }
    ++steps_;
    const double lr = config_.lr;
    const double b1 = config_.beta1;
    const double b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
    const double decay = 1.0 - lr * config_.weight_decay;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Parameter<T>& p = *params_[i];
        if (!p.trainable) continue;
        T* w = p.tensor.raw();
        const T* g = p.tensor.grad().data();
        T* m = m_[i].data();
        T* v = v_[i].data();
        const auto count = static_cast<std::int64_t>(p.tensor.numel());
#pragma omp parallel for schedule(static)
        for (std::int64_t k = 0; k < count; ++k) {
            const double gk = static_cast<double>(g[k]);
            const double mk = b1 * static_cast<double>(m[k]) + (1.0 - b1) * gk;
            const double vk = b2 * static_cast<double>(v[k]) + (1.0 - b2) * gk * gk;
            m[k] = static_cast<T>(mk);
            v[k] = static_cast<T>(vk);
            const double update = (mk / c1) / (std::sqrt(vk / c2) + config_.eps);
            w[k] = static_cast<T>(static_cast<double>(w[k]) * decay - lr * update);
        }
    }
}

template <class T>
void ema_update(const std::vector<Parameter<T>*>& params, const std::vector<Parameter<T>*>& shadow, double decay)
{
    if (!(decay > 0.0 && decay < 1.0)) {
        throw ConfigError("ema_update: decay must lie in (0, 1), got " + std::to_string(decay));
    }
    if (params.size() != shadow.size()) throw UsageError("ema_update: parameter lists differ in length");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i]->tensor.shape() != shadow[i]->tensor.shape()) {
            throw UsageError("ema_update: shape drift on '" + params[i]->name + "'");
        }
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const T* src = params[i]->tensor.raw();
        T* dst = shadow[i]->tensor.raw();
        for (std::size_t k = 0; k < params[i]->tensor.numel(); ++k) {
            dst[k] = static_cast<T>(decay * static_cast<double>(dst[k]) + (1.0 - decay) * static_cast<double>(src[k]));
        }
    }
}

template <class T>
EmaState<T>::EmaState(DGNet<T>& model, double decay) : decay_(decay), shadow_(model.config(), 0)
{
    if (!(decay > 0.0 && decay < 1.0)) {
        throw ConfigError("ema: decay must lie in (0, 1), got " + std::to_string(decay));
    }
    shadow_.copy_state_from(model);
}

template <class T>
void EmaState<T>::update(DGNet<T>& model)
{
    update(model, decay_);
}

template <class T>
void EmaState<T>::update(DGNet<T>& model, double effective_decay)
{
    ema_update(model.parameters(), shadow_.parameters(), effective_decay);
    std::vector<std::vector<T>*> live;
    model.visit_buffers([&](const std::string&, std::vector<T>& b) { live.push_back(&b); });
    std::size_t i = 0;
    shadow_.visit_buffers([&](const std::string&, std::vector<T>& b) { b = *live[i++]; });
    ++updates_;
}

template <class T>
double gradient_norm(const std::vector<Parameter<T>*>& params)
{
    double sq = 0.0;
    for (const Parameter<T>* p : params) {
        if (!p->trainable || !p->tensor.has_grad()) continue;
        for (const T g : p->tensor.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
    }
    return std::sqrt(sq);
}

template <class T>
void clip_gradient_norm(const std::vector<Parameter<T>*>& params, double max_norm)
{
    if (!(max_norm > 0.0)) throw ConfigError("clip_gradient_norm: max_norm must be > 0");
    const double norm = gradient_norm(params);
    if (norm <= max_norm) return;
    const auto factor = static_cast<T>(max_norm / norm);
    for (Parameter<T>* p : params) {
        if (!p->trainable || !p->tensor.has_grad()) continue;
        for (T& g : p->tensor.grad_mut()) g *= factor;
    }
}

template class AdamW<float>;
template class AdamW<double>;
template class EmaState<float>;
template class EmaState<double>;
template void ema_update<float>(const std::vector<Parameter<float>*>&, const std::vector<Parameter<float>*>&, double);
template void ema_update<double>(const std::vector<Parameter<double>*>&, const std::vector<Parameter<double>*>&, double);
template double gradient_norm<float>(const std::vector<Parameter<float>*>&);
template double gradient_norm<double>(const std::vector<Parameter<double>*>&);
template void clip_gradient_norm<float>(const std::vector<Parameter<float>*>&, double);
template void clip_gradient_norm<double>(const std::vector<Parameter<double>*>&, double);

} // namespace dgnet
