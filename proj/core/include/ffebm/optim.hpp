#pragma once

#include "ffebm/tensor.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace ffebm {

struct AdamSettings {
    Scalar lr = 1e-3;
    Scalar beta1 = 0.9;
    Scalar beta2 = 0.999;
    Scalar eps = 1e-8;
    Scalar weight_decay = 0;  // decoupled: p <- p (1 - lr wd) before the moment update
};

struct AdamState {
    TensorMap m;
    TensorMap v;
    std::uint64_t step = 0;
};

/// One Adam step over named parameters. Every parameter needs a gradient of the same shape
/// (UsageError otherwise); moments are created lazily.
void adam_step(const std::vector<std::pair<std::string, Tensor*>>& params, const TensorMap& grads,
               AdamState& state, const AdamSettings& settings);
void adam_step(TensorMap& params, const TensorMap& grads, AdamState& state, const AdamSettings& settings);

/// lr_min + (lr_max - lr_min) (1 + cos(pi t / total)) / 2, with t clamped to [0, total].
Scalar cosine_lr(std::size_t t, std::size_t total, Scalar lr_max, Scalar lr_min);

}  // namespace ffebm
