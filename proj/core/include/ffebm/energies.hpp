#pragma once

#include "ffebm/kernels.hpp"
#include "ffebm/tensor.hpp"

#include <cstddef>
#include <string>
#include <vector>

namespace ffebm {

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

/// Hard-sigmoid variants. Both map onto [0, 1].
///   ernoult:   clamp(x, 0, 1)
///   laborieux: clamp(x / 2, 0, 1)
enum class Activation { ernoult, laborieux };

Activation parse_activation(const std::string& name);
std::string to_string(Activation act);

/// Slope inside the linear region (1 or 1/2).
inline Scalar activation_slope(Activation act) { return act == Activation::ernoult ? 1.0 : 0.5; }

inline Scalar activation_apply(Activation act, Scalar x) {
    const Scalar y = activation_slope(act) * x;
    return y < 0 ? Scalar{0} : (y > 1 ? Scalar{1} : y);
}

/// Boundary points take the interior slope.
inline Scalar activation_derivative(Activation act, Scalar x) {
    const Scalar y = activation_slope(act) * x;
    return (y >= 0 && y <= 1) ? activation_slope(act) : Scalar{0};
}

Tensor activation_apply(Activation act, const Tensor& x);
Tensor activation_derivative(Activation act, const Tensor& x);

// ---------------------------------------------------------------------------
// Deep Hopfield block
// ---------------------------------------------------------------------------

enum class CouplingKind { dense, conv };

/// Connection from layer l to layer l+1. The implied full weight matrix of the
/// block is symmetric block-tridiagonal: layer l+1 sees L(s_l), layer l sees L^T(s_{l+1}).
///   dense: weight [numel(l+1), numel(l)], source flattened.
///   conv:  weight [C(l+1), C(l), k, k], stride 1, "same" padding, then an
///          optional 2x2 max pool.
struct Coupling {
    CouplingKind kind = CouplingKind::dense;
    bool pool = false;
    Tensor weight;
};

struct HopfieldBlockParams {
    std::vector<Shape> layers;           // per-sample layer shapes
    std::vector<Coupling> couplings;     // layers.size() - 1 entries
    std::vector<Tensor> biases;          // empty, or one per layer (per-sample shape)

    std::size_t num_layers() const noexcept { return layers.size(); }
    bool has_bias() const noexcept { return !biases.empty(); }
    /// Throws DimensionError when couplings or biases do not chain the layer shapes.
    void validate() const;
};

/// Batched states of one block: layers[l] has shape [B, layers[l]...].
struct BlockState {
    std::vector<Tensor> layers;

    std::size_t batch() const { return layers.empty() ? 0 : layers.front().rows(); }
    bool operator==(const BlockState&) const = default;
};

Shape batched(std::size_t batch, const Shape& per_sample);
BlockState zero_state(const HopfieldBlockParams& p, std::size_t batch);
void require_state_shapes(const HopfieldBlockParams& p, const BlockState& s, const char* context);

/// Pool indices recorded for each coupling (empty for unpooled couplings).
using CouplingIndices = std::vector<PoolIndices>;

// Coupling primitives. `dst_shape`/`src_shape` are batched shapes.

/// L(src). For pooled conv couplings the argmax is taken here and written to `idx`.
Tensor coupling_forward(const Coupling& c, const Tensor& src, const Shape& dst_shape, PoolIndices* idx);
/// L(src) with the pooling selection fixed to `idx` (gather instead of max).
Tensor coupling_forward_fixed(const Coupling& c, const Tensor& src, const Shape& dst_shape, const PoolIndices* idx);
/// L^T(dst) using the pooling selection `idx`.
Tensor coupling_transpose(const Coupling& c, const Tensor& dst, const Shape& src_shape, const PoolIndices* idx);
/// d/d(weight) of sum_b <dst_b, L(src)_b> with the pooling selection `idx`.
Tensor coupling_weight_grad(const Coupling& c, const Tensor& dst, const Tensor& src, const PoolIndices* idx);
/// Pool selection induced by `src` (conv + max over each window). Empty for unpooled couplings.
PoolIndices coupling_indices(const Coupling& c, const Tensor& src);

/// -grad_{s_l} U for one layer: L_{l-1}(s_{l-1}) + L_l^T(s_{l+1}) + b_l. Pool selections
/// computed along the way are stored in `idx` (sized to the coupling count) when given.
Tensor layer_drive(const HopfieldBlockParams& p, const BlockState& s, std::size_t layer,
                   CouplingIndices* idx = nullptr);

// ---------------------------------------------------------------------------
// Energy terms and gradients. Scalars are returned per batch element; parameter
// gradients are summed over the batch.
// ---------------------------------------------------------------------------

struct HopfieldGrads {
    std::vector<Tensor> couplings;
    std::vector<Tensor> biases;
};

HopfieldGrads zero_grads(const HopfieldBlockParams& p);

/// U(s) = -sum_l <s_{l+1}, L_l(s_l)> - sum_l <b_l, s_l>
std::vector<Scalar> hopfield_interaction_energy(const HopfieldBlockParams& p, const BlockState& s);

BlockState grad_U_state(const HopfieldBlockParams& p, const BlockState& s);

/// Gradient of the block energy in its parameters; does not depend on the input drive.
HopfieldGrads grad_E_params(const HopfieldBlockParams& p, const BlockState& s);

/// Gradient of the block energy in its input drive: -s restricted to the input layer.
Tensor grad_E_input(const BlockState& s);

/// Phi(s, x) = <s_0, x> - U(s)
std::vector<Scalar> primitive_phi(const HopfieldBlockParams& p, const BlockState& s, const Tensor& x);

/// E(s, x) = G(s) - <s_0, x> + U(s) with grad G = sigma^{-1}. Diagnostic only; clamped
/// entries use the continuous extension of G on [0, 1].
std::vector<Scalar> block_energy(const HopfieldBlockParams& p, const BlockState& s, const Tensor& x,
                                 Activation act);

}  // namespace ffebm
