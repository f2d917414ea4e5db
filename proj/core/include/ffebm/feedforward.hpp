#pragma once

#include "ffebm/kernels.hpp"
#include "ffebm/tensor.hpp"

#include <cstdint>
#include <vector>

namespace ffebm {

enum class FeedforwardKind { linear, conv_pool_bn };

/// Tie transformation between two energy blocks.
///   linear:        flatten -> W x -> reshape to out_shape -> optional batchnorm
///   conv_pool_bn:  conv2d -> optional 2x2 max pool -> optional batchnorm
struct FeedforwardBlockParams {
    FeedforwardKind kind = FeedforwardKind::linear;
    Tensor weight;  // linear: [numel(out), numel(in)]; conv: [O, C, k, k]
    Conv2dGeometry geometry{1, 1};
    bool pool = false;
    bool batchnorm = false;
    Tensor bn_scale;  // [channels]
    Tensor bn_shift;
    RunningStats running;
    Shape in_shape;   // per sample
    Shape out_shape;  // per sample

    /// Throws DimensionError if the weight, batchnorm and shapes are inconsistent.
    void validate() const;
};

struct ForwardCache {
    Tensor input;
    Shape pre_pool_shape;
    PoolIndices pool;
    BatchNormCache bn;
    std::uint64_t fingerprint = 0;
    bool valid = false;
};

struct ForwardResult {
    Tensor output;
    ForwardCache cache;
};

/// Hash of the parameter values a cache was computed with.
std::uint64_t parameter_fingerprint(const FeedforwardBlockParams& p);

ForwardResult ff_forward(const FeedforwardBlockParams& p, const Tensor& input, BatchNormMode mode);

/// Adjoint in the block input.
Tensor ff_input_vjp(const FeedforwardBlockParams& p, const ForwardCache& cache, const Tensor& upstream);

struct FeedforwardGrads {
    Tensor weight;
    Tensor bn_scale;  // empty without batchnorm
    Tensor bn_shift;
};

/// Adjoint in the block parameters.
FeedforwardGrads ff_param_vjp(const FeedforwardBlockParams& p, const ForwardCache& cache, const Tensor& upstream);

// ---------------------------------------------------------------------------
// Softmax readout
// ---------------------------------------------------------------------------

struct ReadoutParams {
    Tensor weight;  // [classes, numel(state)]
};

struct ReadoutResult {
    Scalar loss = 0;  // mean cross-entropy over the batch
    Tensor grad_s;    // shape of the state
    Tensor grad_w;
    Tensor logits;    // [B, classes]
};

using Labels = std::vector<std::size_t>;

ReadoutResult readout_loss(const ReadoutParams& r, const Tensor& s, const Labels& labels);

/// Logits only; no labels needed.
Tensor readout_logits(const ReadoutParams& r, const Tensor& s);

}  // namespace ffebm
