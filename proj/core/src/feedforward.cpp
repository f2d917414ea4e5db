#include "ffebm/feedforward.hpp"

#include "ffebm/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace ffebm {

namespace {

Shape with_batch(std::size_t batch, const Shape& per_sample) {
    Shape s{batch};
    s.insert(s.end(), per_sample.begin(), per_sample.end());
    return s;
}

Shape per_sample(const Shape& s) { return Shape(s.begin() + 1, s.end()); }

void mix(std::uint64_t& h, const Tensor& t) {
    constexpr std::uint64_t prime = 1099511628211ull;
    for (Scalar v : t.data()) {
        std::uint64_t bits = 0;
        std::memcpy(&bits, &v, sizeof bits);
        for (int i = 0; i < 8; ++i) {
            h ^= (bits >> (8 * i)) & 0xffu;
            h *= prime;
        }
    }
    h ^= t.numel();
    h *= prime;
}

void require_fresh(const FeedforwardBlockParams& p, const ForwardCache& cache, const char* op) {
    if (!cache.valid) throw UsageError(std::string(op) + ": forward cache is empty");
    if (cache.fingerprint != parameter_fingerprint(p)) {
        throw UsageError(std::string(op) + ": forward cache is stale (parameters changed since the forward pass)");
    }
}

// Adjoint of the optional batchnorm stage; returns the gradient at the pre-normalization output.
Tensor through_batchnorm(const FeedforwardBlockParams& p, const ForwardCache& cache, const Tensor& upstream,
                         FeedforwardGrads* grads) {
    if (!p.batchnorm) return upstream;
    auto g = batchnorm_adjoint(upstream, cache.bn, p.bn_scale);
    if (grads) {
        grads->bn_scale = std::move(g.scale);
        grads->bn_shift = std::move(g.shift);
    }
    return std::move(g.x);
}

Tensor through_pool(const FeedforwardBlockParams& p, const ForwardCache& cache, const Tensor& g) {
    if (!p.pool) return g;
    return maxpool2d_adjoint(g, cache.pool, cache.pre_pool_shape);
}

}  // namespace

void FeedforwardBlockParams::validate() const {
    if (kind == FeedforwardKind::linear) {
        if (pool) throw DimensionError("linear feedforward block cannot pool");
        const Shape expected{shape_numel(out_shape), shape_numel(in_shape)};
        if (weight.shape() != expected) {
            throw DimensionError("linear feedforward weight " + shape_to_string(weight.shape()) + ", expected " +
                                 shape_to_string(expected));
        }
    } else {
        if (in_shape.size() != 3 || out_shape.size() != 3) {
            throw DimensionError("conv feedforward block needs [C, H, W] shapes");
        }
        Shape conv_out = conv2d_output_shape(with_batch(1, in_shape), weight.shape(), geometry);
        if (pool) {
            if (conv_out[2] % 2 || conv_out[3] % 2) throw DimensionError("conv feedforward: odd size before pooling");
            conv_out[2] /= 2;
            conv_out[3] /= 2;
        }
        if (per_sample(conv_out) != out_shape) {
            throw DimensionError("conv feedforward produces " + shape_to_string(per_sample(conv_out)) +
                                 ", declared " + shape_to_string(out_shape));
        }
    }
    if (batchnorm) {
        const std::size_t channels = kind == FeedforwardKind::linear ? out_shape.front() : out_shape[0];
        if (bn_scale.shape() != Shape{channels} || bn_shift.shape() != Shape{channels}) {
            throw DimensionError("batchnorm parameters must have " + std::to_string(channels) + " entries");
        }
    }
}

std::uint64_t parameter_fingerprint(const FeedforwardBlockParams& p) {
    std::uint64_t h = 14695981039346656037ull;
    mix(h, p.weight);
    if (p.batchnorm) {
        mix(h, p.bn_scale);
        mix(h, p.bn_shift);
        mix(h, p.running.mean);
        mix(h, p.running.var);
    }
    return h;
}

ForwardResult ff_forward(const FeedforwardBlockParams& p, const Tensor& input, BatchNormMode mode) {
    if (input.rank() == 0 || per_sample(input.shape()) != p.in_shape) {
        throw DimensionError("ff_forward: input " + shape_to_string(input.shape()) + " does not match block input " +
                             shape_to_string(p.in_shape));
    }
    const std::size_t B = input.rows();
    ForwardResult r;
    auto& cache = r.cache;
    cache.input = input;

    Tensor y;
    if (p.kind == FeedforwardKind::linear) {
        const std::size_t n_in = p.weight.dim(1), n_out = p.weight.dim(0);
        y = Tensor(with_batch(B, p.out_shape));
        const Tensor wt = transpose2d(p.weight);
        gemm_nn_acc(B, n_in, n_out, input.raw(), wt.raw(), y.raw());
    } else {
        y = conv2d(input, p.weight, p.geometry);
        cache.pre_pool_shape = y.shape();
        if (p.pool) {
            auto pooled = maxpool2d(y, 2);
            cache.pool = std::move(pooled.indices);
            y = std::move(pooled.values);
        }
    }
    if (p.batchnorm) {
        auto bn = batchnorm_forward(y, p.bn_scale, p.bn_shift, mode, p.running);
        cache.bn = std::move(bn.cache);
        y = std::move(bn.y);
    }
    if (!all_finite(y)) throw DivergenceError("ff_forward: non-finite output");
    cache.fingerprint = parameter_fingerprint(p);
    cache.valid = true;
    r.output = std::move(y);
    return r;
}

Tensor ff_input_vjp(const FeedforwardBlockParams& p, const ForwardCache& cache, const Tensor& upstream) {
    require_fresh(p, cache, "ff_input_vjp");
    const std::size_t B = cache.input.rows();
    if (upstream.shape() != with_batch(B, p.out_shape)) {
        throw DimensionError("ff_input_vjp: upstream " + shape_to_string(upstream.shape()) + " does not match output " +
                             shape_to_string(with_batch(B, p.out_shape)));
    }
    Tensor g = through_batchnorm(p, cache, upstream, nullptr);
    if (p.kind == FeedforwardKind::linear) {
        Tensor out(cache.input.shape());
        gemm_nn_acc(B, p.weight.dim(0), p.weight.dim(1), g.raw(), p.weight.raw(), out.raw());
        return out;
    }
    g = through_pool(p, cache, g);
    return conv2d_input_adjoint(g, p.weight, p.geometry, cache.input.shape());
}

FeedforwardGrads ff_param_vjp(const FeedforwardBlockParams& p, const ForwardCache& cache, const Tensor& upstream) {
    require_fresh(p, cache, "ff_param_vjp");
    const std::size_t B = cache.input.rows();
    if (upstream.shape() != with_batch(B, p.out_shape)) {
        throw DimensionError("ff_param_vjp: upstream " + shape_to_string(upstream.shape()) + " does not match output " +
                             shape_to_string(with_batch(B, p.out_shape)));
    }
    FeedforwardGrads grads;
    Tensor g = through_batchnorm(p, cache, upstream, &grads);
    if (p.kind == FeedforwardKind::linear) {
        grads.weight = Tensor(p.weight.shape());
        gemm_tn_acc(B, p.weight.dim(0), p.weight.dim(1), g.raw(), cache.input.raw(), grads.weight.raw());
    } else {
        g = through_pool(p, cache, g);
        grads.weight = conv2d_weight_adjoint(g, cache.input, p.geometry, p.weight.shape());
    }
    return grads;
}

// ---------------------------------------------------------------------------

Tensor readout_logits(const ReadoutParams& r, const Tensor& s) {
    const std::size_t B = s.rows(), D = s.row_size(), C = r.weight.dim(0);
    if (r.weight.dim(1) != D) {
        throw DimensionError("readout: weight " + shape_to_string(r.weight.shape()) + " does not accept states of " +
                             std::to_string(D) + " entries");
    }
    Tensor logits({B, C});
    const Tensor wt = transpose2d(r.weight);
    gemm_nn_acc(B, D, C, s.raw(), wt.raw(), logits.raw());
    return logits;
}

ReadoutResult readout_loss(const ReadoutParams& r, const Tensor& s, const Labels& labels) {
    const std::size_t B = s.rows(), D = s.row_size(), C = r.weight.dim(0);
    if (labels.size() != B) {
        throw DimensionError("readout: " + std::to_string(labels.size()) + " labels for a batch of " +
                             std::to_string(B));
    }
    for (std::size_t y : labels) {
        if (y >= C) throw DataError("readout: label " + std::to_string(y) + " out of range for " + std::to_string(C) +
                                    " classes");
    }
    ReadoutResult out;
    out.logits = readout_logits(r, s);

    // err = (softmax - onehot) / B
    Tensor err({B, C});
    const Scalar inv_b = 1 / static_cast<Scalar>(B);
    Scalar loss = 0;
    for (std::size_t b = 0; b < B; ++b) {
        const Scalar* z = out.logits.raw() + b * C;
        const Scalar zmax = *std::max_element(z, z + C);
        Scalar denom = 0;
        for (std::size_t c = 0; c < C; ++c) denom += std::exp(z[c] - zmax);
        const Scalar log_denom = std::log(denom);
        loss += log_denom - (z[labels[b]] - zmax);
        for (std::size_t c = 0; c < C; ++c) {
            const Scalar pc = std::exp(z[c] - zmax - log_denom);
            err[b * C + c] = (pc - (c == labels[b] ? 1.0 : 0.0)) * inv_b;
        }
    }
    out.loss = loss * inv_b;

    out.grad_s = Tensor(s.shape());
    gemm_nn_acc(B, C, D, err.raw(), r.weight.raw(), out.grad_s.raw());
    out.grad_w = Tensor(r.weight.shape());
    gemm_tn_acc(B, C, D, err.raw(), s.raw(), out.grad_w.raw());
    return out;
}

}  // namespace ffebm
