#include "ffebm/energies.hpp"

#include "ffebm/error.hpp"

#include <algorithm>

namespace ffebm {

Activation parse_activation(const std::string& name) {
    if (name == "ernoult") return Activation::ernoult;
    if (name == "laborieux") return Activation::laborieux;
    throw ConfigError("unknown activation '" + name + "' (expected ernoult or laborieux)");
}

std::string to_string(Activation act) { return act == Activation::ernoult ? "ernoult" : "laborieux"; }

Tensor activation_apply(Activation act, const Tensor& x) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) out[i] = activation_apply(act, x[i]);
    return out;
}

Tensor activation_derivative(Activation act, const Tensor& x) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) out[i] = activation_derivative(act, x[i]);
    return out;
}

// ---------------------------------------------------------------------------

Shape batched(std::size_t batch, const Shape& per_sample) {
    Shape s;
    s.reserve(per_sample.size() + 1);
    s.push_back(batch);
    s.insert(s.end(), per_sample.begin(), per_sample.end());
    return s;
}

namespace {

Conv2dGeometry same_geometry(const Tensor& w) { return {1, w.dim(2) / 2}; }

}  // namespace

void HopfieldBlockParams::validate() const {
    if (layers.empty()) throw DimensionError("hopfield block: no layers");
    if (couplings.size() + 1 != layers.size()) {
        throw DimensionError("hopfield block: " + std::to_string(layers.size()) + " layers need " +
                             std::to_string(layers.size() - 1) + " couplings, got " +
                             std::to_string(couplings.size()));
    }
    for (std::size_t l = 0; l < couplings.size(); ++l) {
        const auto& c = couplings[l];
        const Shape& src = layers[l];
        const Shape& dst = layers[l + 1];
        const std::string where = "coupling " + std::to_string(l + 1) + " (" + shape_to_string(src) + " -> " +
                                  shape_to_string(dst) + ")";
        if (c.kind == CouplingKind::dense) {
            if (c.pool) throw DimensionError(where + ": pooling requires a conv coupling");
            const Shape expected{shape_numel(dst), shape_numel(src)};
            if (c.weight.shape() != expected) {
                throw DimensionError(where + ": weight " + shape_to_string(c.weight.shape()) + ", expected " +
                                     shape_to_string(expected));
            }
        } else {
            if (src.size() != 3 || dst.size() != 3) throw DimensionError(where + ": conv layers must be [C, H, W]");
            const auto& w = c.weight;
            if (w.rank() != 4 || w.dim(0) != dst[0] || w.dim(1) != src[0] || w.dim(2) != w.dim(3) ||
                w.dim(2) % 2 == 0) {
                throw DimensionError(where + ": bad conv kernel " + shape_to_string(w.shape()));
            }
            const std::size_t f = c.pool ? 2 : 1;
            if (src[1] % f != 0 || src[2] % f != 0 || dst[1] != src[1] / f || dst[2] != src[2] / f) {
                throw DimensionError(where + ": spatial size does not chain");
            }
        }
    }
    if (!biases.empty()) {
        if (biases.size() != layers.size()) throw DimensionError("hopfield block: one bias per layer expected");
        for (std::size_t l = 0; l < layers.size(); ++l) {
            if (biases[l].shape() != layers[l]) {
                throw DimensionError("hopfield block: bias " + std::to_string(l + 1) + " has shape " +
                                     shape_to_string(biases[l].shape()) + ", layer is " +
                                     shape_to_string(layers[l]));
            }
        }
    }
}

BlockState zero_state(const HopfieldBlockParams& p, std::size_t batch) {
    BlockState s;
    s.layers.reserve(p.num_layers());
    for (const auto& shape : p.layers) s.layers.emplace_back(batched(batch, shape));
    return s;
}

void require_state_shapes(const HopfieldBlockParams& p, const BlockState& s, const char* context) {
    if (s.layers.size() != p.num_layers()) {
        throw DimensionError(std::string(context) + ": state has " + std::to_string(s.layers.size()) +
                             " layers, block has " + std::to_string(p.num_layers()));
    }
    const std::size_t B = s.batch();
    for (std::size_t l = 0; l < p.num_layers(); ++l) {
        if (s.layers[l].shape() != batched(B, p.layers[l])) {
            throw DimensionError(std::string(context) + ": layer " + std::to_string(l + 1) + " has shape " +
                                 shape_to_string(s.layers[l].shape()) + ", expected " +
                                 shape_to_string(batched(B, p.layers[l])));
        }
    }
}

// ---------------------------------------------------------------------------

Tensor coupling_forward(const Coupling& c, const Tensor& src, const Shape& dst_shape, PoolIndices* idx) {
    const std::size_t B = src.rows();
    if (c.kind == CouplingKind::dense) {
        const std::size_t n_in = src.row_size(), n_out = c.weight.dim(0);
        if (c.weight.dim(1) != n_in) throw DimensionError("dense coupling: source size mismatch");
        Tensor out(dst_shape);
        if (out.numel() != B * n_out) throw DimensionError("dense coupling: destination size mismatch");
        const Tensor wt = transpose2d(c.weight);
        gemm_nn_acc(B, n_in, n_out, src.raw(), wt.raw(), out.raw());
        return out;
    }
    Tensor y = conv2d(src, c.weight, same_geometry(c.weight));
    if (!c.pool) return y;
    auto pooled = maxpool2d(y, 2);
    if (idx) *idx = std::move(pooled.indices);
    return pooled.values;
}

Tensor coupling_forward_fixed(const Coupling& c, const Tensor& src, const Shape& dst_shape, const PoolIndices* idx) {
    if (c.kind == CouplingKind::dense || !c.pool) return coupling_forward(c, src, dst_shape, nullptr);
    if (!idx) throw UsageError("coupling_forward_fixed: pooled coupling needs recorded indices");
    return maxpool2d_gather(conv2d(src, c.weight, same_geometry(c.weight)), *idx);
}

Tensor coupling_transpose(const Coupling& c, const Tensor& dst, const Shape& src_shape, const PoolIndices* idx) {
    const std::size_t B = dst.rows();
    if (c.kind == CouplingKind::dense) {
        const std::size_t n_out = dst.row_size(), n_in = c.weight.dim(1);
        if (c.weight.dim(0) != n_out) throw DimensionError("dense coupling: destination size mismatch");
        Tensor out(src_shape);
        if (out.numel() != B * n_in) throw DimensionError("dense coupling: source size mismatch");
        gemm_nn_acc(B, n_out, n_in, dst.raw(), c.weight.raw(), out.raw());
        return out;
    }
    const auto geom = same_geometry(c.weight);
    if (!c.pool) return conv2d_input_adjoint(dst, c.weight, geom, src_shape);
    if (!idx) throw UsageError("coupling_transpose: pooled coupling needs recorded indices");
    const Shape pre_pool = conv2d_output_shape(src_shape, c.weight.shape(), geom);
    return conv2d_input_adjoint(maxpool2d_adjoint(dst, *idx, pre_pool), c.weight, geom, src_shape);
}

Tensor coupling_weight_grad(const Coupling& c, const Tensor& dst, const Tensor& src, const PoolIndices* idx) {
    const std::size_t B = src.rows();
    if (c.kind == CouplingKind::dense) {
        Tensor out(c.weight.shape());
        gemm_tn_acc(B, dst.row_size(), src.row_size(), dst.raw(), src.raw(), out.raw());
        return out;
    }
    const auto geom = same_geometry(c.weight);
    if (!c.pool) return conv2d_weight_adjoint(dst, src, geom, c.weight.shape());
    if (!idx) throw UsageError("coupling_weight_grad: pooled coupling needs recorded indices");
    const Shape pre_pool = conv2d_output_shape(src.shape(), c.weight.shape(), geom);
    return conv2d_weight_adjoint(maxpool2d_adjoint(dst, *idx, pre_pool), src, geom, c.weight.shape());
}

PoolIndices coupling_indices(const Coupling& c, const Tensor& src) {
    if (c.kind == CouplingKind::dense || !c.pool) return {};
    return maxpool2d(conv2d(src, c.weight, same_geometry(c.weight)), 2).indices;
}

Tensor layer_drive(const HopfieldBlockParams& p, const BlockState& s, std::size_t layer, CouplingIndices* idx) {
    const std::size_t L = p.num_layers();
    const std::size_t B = s.batch();
    Tensor drive(batched(B, p.layers[layer]));
    if (layer > 0) {
        const auto& c = p.couplings[layer - 1];
        PoolIndices pi;
        drive += coupling_forward(c, s.layers[layer - 1], drive.shape(), &pi);
        if (idx) (*idx)[layer - 1] = std::move(pi);
    }
    if (layer + 1 < L) {
        const auto& c = p.couplings[layer];
        PoolIndices pi = coupling_indices(c, s.layers[layer]);
        drive += coupling_transpose(c, s.layers[layer + 1], drive.shape(), &pi);
        if (idx) (*idx)[layer] = std::move(pi);
    }
    if (p.has_bias()) {
        const auto& b = p.biases[layer];
        const std::size_t n = b.numel();
        for (std::size_t r = 0; r < B; ++r)
            for (std::size_t i = 0; i < n; ++i) drive[r * n + i] += b[i];
    }
    return drive;
}

// ---------------------------------------------------------------------------

HopfieldGrads zero_grads(const HopfieldBlockParams& p) {
    HopfieldGrads g;
    for (const auto& c : p.couplings) g.couplings.push_back(Tensor::zeros_like(c.weight));
    for (const auto& b : p.biases) g.biases.push_back(Tensor::zeros_like(b));
    return g;
}

namespace {

std::vector<Scalar> rowwise_dot(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "rowwise_dot");
    const std::size_t B = a.rows(), n = a.row_size();
    std::vector<Scalar> out(B, 0.0);
    for (std::size_t r = 0; r < B; ++r) {
        Scalar acc = 0;
        for (std::size_t i = 0; i < n; ++i) acc += a[r * n + i] * b[r * n + i];
        out[r] = acc;
    }
    return out;
}

}  // namespace

std::vector<Scalar> hopfield_interaction_energy(const HopfieldBlockParams& p, const BlockState& s) {
    require_state_shapes(p, s, "hopfield_interaction_energy");
    const std::size_t B = s.batch();
    std::vector<Scalar> u(B, 0.0);
    for (std::size_t l = 0; l + 1 < p.num_layers(); ++l) {
        const Tensor fwd = coupling_forward(p.couplings[l], s.layers[l], s.layers[l + 1].shape(), nullptr);
        const auto d = rowwise_dot(s.layers[l + 1], fwd);
        for (std::size_t r = 0; r < B; ++r) u[r] -= d[r];
    }
    if (p.has_bias()) {
        for (std::size_t l = 0; l < p.num_layers(); ++l) {
            const auto& b = p.biases[l];
            const auto& sl = s.layers[l];
            const std::size_t n = b.numel();
            for (std::size_t r = 0; r < B; ++r) {
                Scalar acc = 0;
                for (std::size_t i = 0; i < n; ++i) acc += b[i] * sl[r * n + i];
                u[r] -= acc;
            }
        }
    }
    return u;
}

BlockState grad_U_state(const HopfieldBlockParams& p, const BlockState& s) {
    require_state_shapes(p, s, "grad_U_state");
    BlockState g;
    for (std::size_t l = 0; l < p.num_layers(); ++l) g.layers.push_back(negated(layer_drive(p, s, l)));
    return g;
}

HopfieldGrads grad_E_params(const HopfieldBlockParams& p, const BlockState& s) {
    require_state_shapes(p, s, "grad_E_params");
    HopfieldGrads g;
    for (std::size_t l = 0; l + 1 < p.num_layers(); ++l) {
        const auto& c = p.couplings[l];
        const PoolIndices idx = coupling_indices(c, s.layers[l]);
        g.couplings.push_back(negated(coupling_weight_grad(c, s.layers[l + 1], s.layers[l], &idx)));
    }
    if (p.has_bias()) {
        for (std::size_t l = 0; l < p.num_layers(); ++l) {
            const auto& sl = s.layers[l];
            const std::size_t n = p.biases[l].numel();
            Tensor gb(p.biases[l].shape());
            for (std::size_t r = 0; r < sl.rows(); ++r)
                for (std::size_t i = 0; i < n; ++i) gb[i] -= sl[r * n + i];
            g.biases.push_back(std::move(gb));
        }
    }
    return g;
}

Tensor grad_E_input(const BlockState& s) {
    if (s.layers.empty()) throw DimensionError("grad_E_input: empty state");
    return negated(s.layers.front());
}

std::vector<Scalar> primitive_phi(const HopfieldBlockParams& p, const BlockState& s, const Tensor& x) {
    require_state_shapes(p, s, "primitive_phi");
    require_same_shape(s.layers.front(), x, "primitive_phi input");
    auto phi = rowwise_dot(s.layers.front(), x);
    const auto u = hopfield_interaction_energy(p, s);
    for (std::size_t r = 0; r < phi.size(); ++r) phi[r] -= u[r];
    return phi;
}

std::vector<Scalar> block_energy(const HopfieldBlockParams& p, const BlockState& s, const Tensor& x, Activation act) {
    auto e = primitive_phi(p, s, x);
    // G(s) = sum_i s_i^2 / (2 * slope), from grad G = sigma^{-1}(s) = s / slope on [0, 1].
    const Scalar k = 1 / (2 * activation_slope(act));
    for (std::size_t r = 0; r < e.size(); ++r) e[r] = -e[r];
    for (const auto& layer : s.layers) {
        const std::size_t n = layer.row_size();
        for (std::size_t r = 0; r < layer.rows(); ++r) {
            Scalar acc = 0;
            for (std::size_t i = 0; i < n; ++i) {
                const Scalar v = std::clamp(layer[r * n + i], Scalar{0}, Scalar{1});
                acc += v * v;
            }
            e[r] += k * acc;
        }
    }
    return e;
}

}  // namespace ffebm
