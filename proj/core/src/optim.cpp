#include "ffebm/optim.hpp"

#include "ffebm/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace ffebm {

void adam_step(const std::vector<std::pair<std::string, Tensor*>>& params, const TensorMap& grads,
               AdamState& state, const AdamSettings& settings) {
    for (const auto& [name, p] : params) {
        auto it = grads.find(name);
        if (it == grads.end()) throw UsageError("adam_step: no gradient for '" + name + "'");
        require_same_shape(*p, it->second, "adam_step");
    }
    ++state.step;
    const Scalar t = static_cast<Scalar>(state.step);
    const Scalar c1 = 1 - std::pow(settings.beta1, t);
    const Scalar c2 = 1 - std::pow(settings.beta2, t);
    const Scalar decay = 1 - settings.lr * settings.weight_decay;
    for (const auto& [name, p] : params) {
        const Tensor& g = grads.at(name);
        auto [mi, fresh] = state.m.try_emplace(name, Tensor(p->shape()));
        Tensor& m = mi->second;
        Tensor& v = state.v.try_emplace(name, Tensor(p->shape())).first->second;
        if (!fresh) require_same_shape(m, *p, "adam_step moments");
        Scalar* pw = p->raw();
        Scalar* mw = m.raw();
        Scalar* vw = v.raw();
        const Scalar* gw = g.raw();
        for (std::size_t i = 0, n = p->numel(); i < n; ++i) {
            pw[i] *= decay;
            mw[i] = settings.beta1 * mw[i] + (1 - settings.beta1) * gw[i];
            vw[i] = settings.beta2 * vw[i] + (1 - settings.beta2) * gw[i] * gw[i];
            pw[i] -= settings.lr * (mw[i] / c1) / (std::sqrt(vw[i] / c2) + settings.eps);
        }
    }
}

void adam_step(TensorMap& params, const TensorMap& grads, AdamState& state, const AdamSettings& settings) {
    std::vector<std::pair<std::string, Tensor*>> refs;
    for (auto& [name, t] : params) refs.emplace_back(name, &t);
    adam_step(refs, grads, state, settings);
}

Scalar cosine_lr(std::size_t t, std::size_t total, Scalar lr_max, Scalar lr_min) {
    if (total == 0) return lr_max;
    const Scalar frac = static_cast<Scalar>(std::min(t, total)) / static_cast<Scalar>(total);
    return lr_min + (lr_max - lr_min) * (1 + std::cos(std::numbers::pi * frac)) / 2;
}

}  // namespace ffebm
