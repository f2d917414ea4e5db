#pragma once

#include "ffebm/tensor.hpp"

#include <cstddef>
#include <vector>

namespace ffebm {

// ---------------------------------------------------------------------------
// Dense products
// ---------------------------------------------------------------------------

/// c[m x n] += a[m x k] * b[k x n], all row-major. Zero entries of `a` are skipped.
void gemm_nn_acc(std::size_t m, std::size_t k, std::size_t n, const Scalar* a, const Scalar* b, Scalar* c);

/// c[m x n] += a[k x m]^T * b[k x n].
void gemm_tn_acc(std::size_t k, std::size_t m, std::size_t n, const Scalar* a, const Scalar* b, Scalar* c);

Tensor transpose2d(const Tensor& a);

/// a[m x k] * b[k x n]
Tensor matmul(const Tensor& a, const Tensor& b);
/// a[m x k] * b[n x k]^T
Tensor matmul_nt(const Tensor& a, const Tensor& b);
/// a[k x m]^T * b[k x n]
Tensor matmul_tn(const Tensor& a, const Tensor& b);

// ---------------------------------------------------------------------------
// Convolution (cross-correlation with zero padding), NCHW / OIHW layouts
// ---------------------------------------------------------------------------

struct Conv2dGeometry {
    std::size_t stride = 1;
    std::size_t pad = 1;
};

Shape conv2d_output_shape(const Shape& input, const Shape& kernel, Conv2dGeometry geom);

Tensor conv2d(const Tensor& x, const Tensor& w, Conv2dGeometry geom = {});

/// Adjoint of conv2d in its input: <conv2d(x, w), g> == <x, conv2d_input_adjoint(g, w)>.
Tensor conv2d_input_adjoint(const Tensor& g, const Tensor& w, Conv2dGeometry geom, const Shape& input_shape);

/// Adjoint of conv2d in its kernel; returns a tensor of shape `kernel_shape`.
Tensor conv2d_weight_adjoint(const Tensor& g, const Tensor& x, Conv2dGeometry geom, const Shape& kernel_shape);

// ---------------------------------------------------------------------------
// Max pooling
// ---------------------------------------------------------------------------

/// Flat source index (into the pre-pool tensor) of every pooled maximum.
struct PoolIndices {
    Shape shape;
    std::vector<std::size_t> indices;
};

struct PoolResult {
    Tensor values;
    PoolIndices indices;
};

/// Non-overlapping max pooling; ties resolve to the lowest flat index.
PoolResult maxpool2d(const Tensor& x, std::size_t window = 2);

/// Scatters `g` into the recorded argmax positions of a tensor of `input_shape`.
Tensor maxpool2d_adjoint(const Tensor& g, const PoolIndices& idx, const Shape& input_shape);

/// Reads `x` at the recorded positions. Adjoint of maxpool2d_adjoint for fixed indices.
Tensor maxpool2d_gather(const Tensor& x, const PoolIndices& idx);

// ---------------------------------------------------------------------------
// Batch normalization over axis 1 (per channel), statistics over every other axis
// ---------------------------------------------------------------------------

enum class BatchNormMode { train, eval };

struct RunningStats {
    Tensor mean;
    Tensor var;
};

struct BatchNormCache {
    BatchNormMode mode = BatchNormMode::train;
    Tensor x_hat;
    Tensor mean;
    Tensor var;
    Tensor inv_std;
    std::size_t count = 0;  // elements per channel
    bool valid = false;
};

struct BatchNormOutput {
    Tensor y;
    BatchNormCache cache;
};

BatchNormOutput batchnorm_forward(const Tensor& x, const Tensor& scale, const Tensor& shift, BatchNormMode mode,
                                  const RunningStats& running, Scalar eps = 1e-5);

/// Exponential moving average of the batch statistics held in a train-mode cache
/// (unbiased variance, as is customary for running estimates).
void update_running_stats(RunningStats& running, const BatchNormCache& cache, Scalar momentum = 0.1);

struct BatchNormGrads {
    Tensor x;
    Tensor scale;
    Tensor shift;
};

BatchNormGrads batchnorm_adjoint(const Tensor& g, const BatchNormCache& cache, const Tensor& scale);

}  // namespace ffebm
