#pragma once

#include "ffebm/config.hpp"
#include "ffebm/model.hpp"
#include "ffebm/tensor.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace ffebm::test {

inline Tensor random_tensor(const Shape& shape, Rng& rng, Scalar scale = 1.0) {
    std::normal_distribution<Scalar> nd(0.0, scale);
    Tensor t(shape);
    for (auto& v : t.data()) v = nd(rng);
    return t;
}

inline Tensor uniform_tensor(const Shape& shape, Rng& rng, Scalar lo, Scalar hi) {
    std::uniform_real_distribution<Scalar> ud(lo, hi);
    Tensor t(shape);
    for (auto& v : t.data()) v = ud(rng);
    return t;
}

inline Scalar rel_err(Scalar a, Scalar b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12}); }

inline Scalar rel_l2(const Tensor& a, const Tensor& b) {
    const Scalar nb = l2_norm(b);
    return l2_norm(a - b) / (nb > 0 ? nb : 1.0);
}

/// Fully connected toy whose states sit inside the linear band of the activation.
inline ModelConfig interior_toy(std::uint64_t seed, std::vector<std::size_t> widths, std::vector<std::size_t> split,
                                std::size_t input = 5, std::size_t classes = 3) {
    ModelConfig c;
    c.input_shape = {input};
    c.num_classes = classes;
    c.seed = seed;
    c.blocks = chain_blocks(widths, split);
    c.init.coupling = 0.2;
    c.init.feedforward = 0.1;
    c.init.bias = 0.5;
    return c;
}

inline Labels cyclic_labels(std::size_t batch, std::size_t classes) {
    Labels y(batch);
    for (std::size_t b = 0; b < batch; ++b) y[b] = b % classes;
    return y;
}

}  // namespace ffebm::test
