#include "ffebm/kernels.hpp"

#include "ffebm/error.hpp"

#include <cmath>
#include <string>

namespace ffebm {
namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
    if (t.rank() != rank) {
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                             shape_to_string(t.shape()));
    }
}

// Kernels never hand back NaN/Inf silently.
const Tensor& checked(const Tensor& t, const char* op) {
    if (!all_finite(t)) throw DivergenceError(std::string(op) + ": non-finite output");
    return t;
}

}  // namespace

void gemm_nn_acc(std::size_t m, std::size_t k, std::size_t n, const Scalar* a, const Scalar* b, Scalar* c) {
    for (std::size_t i = 0; i < m; ++i) {
        Scalar* crow = c + i * n;
        const Scalar* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const Scalar av = arow[p];
            if (av == 0) continue;
            const Scalar* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void gemm_tn_acc(std::size_t k, std::size_t m, std::size_t n, const Scalar* a, const Scalar* b, Scalar* c) {
    for (std::size_t p = 0; p < k; ++p) {
        const Scalar* arow = a + p * m;
        const Scalar* brow = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const Scalar av = arow[i];
            if (av == 0) continue;
            Scalar* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

Tensor transpose2d(const Tensor& a) {
    require_rank(a, 2, "transpose2d");
    const std::size_t m = a.dim(0), n = a.dim(1);
    Tensor out({n, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
    return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    if (a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul: inner dimensions differ, " + shape_to_string(a.shape()) + " * " +
                             shape_to_string(b.shape()));
    }
    Tensor out({a.dim(0), b.dim(1)});
    gemm_nn_acc(a.dim(0), a.dim(1), b.dim(1), a.raw(), b.raw(), out.raw());
    return checked(out, "matmul");
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    require_rank(b, 2, "matmul_nt");
    return matmul(a, transpose2d(b));
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul_tn");
    require_rank(b, 2, "matmul_tn");
    if (a.dim(0) != b.dim(0)) {
        throw DimensionError("matmul_tn: leading dimensions differ, " + shape_to_string(a.shape()) + " vs " +
                             shape_to_string(b.shape()));
    }
    Tensor out({a.dim(1), b.dim(1)});
    gemm_tn_acc(a.dim(0), a.dim(1), b.dim(1), a.raw(), b.raw(), out.raw());
    return checked(out, "matmul_tn");
}

// ---------------------------------------------------------------------------

Shape conv2d_output_shape(const Shape& input, const Shape& kernel, Conv2dGeometry geom) {
    if (input.size() != 4 || kernel.size() != 4) {
        throw DimensionError("conv2d: expected NCHW input and OIHW kernel, got " + shape_to_string(input) + " and " +
                             shape_to_string(kernel));
    }
    if (input[1] != kernel[1]) {
        throw DimensionError("conv2d: input has " + std::to_string(input[1]) + " channels, kernel expects " +
                             std::to_string(kernel[1]));
    }
    if (geom.stride == 0) throw DimensionError("conv2d: stride must be positive");
    const std::size_t hp = input[2] + 2 * geom.pad, wp = input[3] + 2 * geom.pad;
    if (hp < kernel[2] || wp < kernel[3]) throw DimensionError("conv2d: kernel larger than padded input");
    return {input[0], kernel[0], (hp - kernel[2]) / geom.stride + 1, (wp - kernel[3]) / geom.stride + 1};
}

namespace {

// Visits every (output column range) for one kernel tap so the three conv
// kernels share the index arithmetic. `fn(oh, ih, ow_begin, ow_end, iw_begin)`
// is called once per valid output row; columns advance by `stride` in input space.
template <typename Fn>
void for_each_tap_row(std::size_t oh_count, std::size_t ow_count, std::size_t in_h, std::size_t in_w,
                      std::size_t kh, std::size_t kw, Conv2dGeometry geom, Fn&& fn) {
    const long pad = static_cast<long>(geom.pad);
    const long stride = static_cast<long>(geom.stride);
    // Valid output columns satisfy 0 <= ow*stride - pad + kw < in_w.
    long ow_begin = 0;
    while (ow_begin < static_cast<long>(ow_count) && ow_begin * stride - pad + static_cast<long>(kw) < 0) ++ow_begin;
    long ow_end = static_cast<long>(ow_count);
    while (ow_end > ow_begin && (ow_end - 1) * stride - pad + static_cast<long>(kw) >= static_cast<long>(in_w))
        --ow_end;
    if (ow_end <= ow_begin) return;
    for (std::size_t oh = 0; oh < oh_count; ++oh) {
        const long ih = static_cast<long>(oh) * stride - pad + static_cast<long>(kh);
        if (ih < 0 || ih >= static_cast<long>(in_h)) continue;
        const long iw0 = ow_begin * stride - pad + static_cast<long>(kw);
        fn(oh, static_cast<std::size_t>(ih), static_cast<std::size_t>(ow_begin), static_cast<std::size_t>(ow_end),
           static_cast<std::size_t>(iw0));
    }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, Conv2dGeometry geom) {
    const Shape out_shape = conv2d_output_shape(x.shape(), w.shape(), geom);
    const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t O = w.dim(0), KH = w.dim(2), KW = w.dim(3);
    const std::size_t OH = out_shape[2], OW = out_shape[3];
    const std::size_t s = geom.stride;
    Tensor out(out_shape);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t o = 0; o < O; ++o) {
            Scalar* oplane = out.raw() + (b * O + o) * OH * OW;
            for (std::size_t c = 0; c < C; ++c) {
                const Scalar* iplane = x.raw() + (b * C + c) * H * W;
                for (std::size_t kh = 0; kh < KH; ++kh)
                    for (std::size_t kw = 0; kw < KW; ++kw) {
                        const Scalar wv = w[((o * C + c) * KH + kh) * KW + kw];
                        if (wv == 0) continue;
                        for_each_tap_row(OH, OW, H, W, kh, kw, geom,
                                         [&](std::size_t oh, std::size_t ih, std::size_t ow0, std::size_t ow1,
                                             std::size_t iw0) {
                                             Scalar* orow = oplane + oh * OW;
                                             const Scalar* irow = iplane + ih * W + iw0;
                                             for (std::size_t ow = ow0, q = 0; ow < ow1; ++ow, q += s)
                                                 orow[ow] += wv * irow[q];
                                         });
                    }
            }
        }
    return checked(out, "conv2d");
}

Tensor conv2d_input_adjoint(const Tensor& g, const Tensor& w, Conv2dGeometry geom, const Shape& input_shape) {
    const Shape expected = conv2d_output_shape(input_shape, w.shape(), geom);
    if (g.shape() != expected) {
        throw DimensionError("conv2d_input_adjoint: gradient " + shape_to_string(g.shape()) + " but forward output is " +
                             shape_to_string(expected));
    }
    const std::size_t B = input_shape[0], C = input_shape[1], H = input_shape[2], W = input_shape[3];
    const std::size_t O = w.dim(0), KH = w.dim(2), KW = w.dim(3);
    const std::size_t OH = expected[2], OW = expected[3];
    const std::size_t s = geom.stride;
    Tensor out(input_shape);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t o = 0; o < O; ++o) {
            const Scalar* gplane = g.raw() + (b * O + o) * OH * OW;
            for (std::size_t c = 0; c < C; ++c) {
                Scalar* iplane = out.raw() + (b * C + c) * H * W;
                for (std::size_t kh = 0; kh < KH; ++kh)
                    for (std::size_t kw = 0; kw < KW; ++kw) {
                        const Scalar wv = w[((o * C + c) * KH + kh) * KW + kw];
                        if (wv == 0) continue;
                        for_each_tap_row(OH, OW, H, W, kh, kw, geom,
                                         [&](std::size_t oh, std::size_t ih, std::size_t ow0, std::size_t ow1,
                                             std::size_t iw0) {
                                             const Scalar* grow = gplane + oh * OW;
                                             Scalar* irow = iplane + ih * W + iw0;
                                             for (std::size_t ow = ow0, q = 0; ow < ow1; ++ow, q += s)
                                                 irow[q] += wv * grow[ow];
                                         });
                    }
            }
        }
    return checked(out, "conv2d_input_adjoint");
}

Tensor conv2d_weight_adjoint(const Tensor& g, const Tensor& x, Conv2dGeometry geom, const Shape& kernel_shape) {
    const Shape expected = conv2d_output_shape(x.shape(), kernel_shape, geom);
    if (g.shape() != expected) {
        throw DimensionError("conv2d_weight_adjoint: gradient " + shape_to_string(g.shape()) +
                             " but forward output is " + shape_to_string(expected));
    }
    const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t O = kernel_shape[0], KH = kernel_shape[2], KW = kernel_shape[3];
    const std::size_t OH = expected[2], OW = expected[3];
    const std::size_t s = geom.stride;
    Tensor out(kernel_shape);
    for (std::size_t o = 0; o < O; ++o)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t kh = 0; kh < KH; ++kh)
                for (std::size_t kw = 0; kw < KW; ++kw) {
                    Scalar acc = 0;
                    for (std::size_t b = 0; b < B; ++b) {
                        const Scalar* gplane = g.raw() + (b * O + o) * OH * OW;
                        const Scalar* iplane = x.raw() + (b * C + c) * H * W;
                        for_each_tap_row(OH, OW, H, W, kh, kw, geom,
                                         [&](std::size_t oh, std::size_t ih, std::size_t ow0, std::size_t ow1,
                                             std::size_t iw0) {
                                             const Scalar* grow = gplane + oh * OW;
                                             const Scalar* irow = iplane + ih * W + iw0;
                                             for (std::size_t ow = ow0, q = 0; ow < ow1; ++ow, q += s)
                                                 acc += grow[ow] * irow[q];
                                         });
                    }
                    out[((o * C + c) * KH + kh) * KW + kw] = acc;
                }
    return checked(out, "conv2d_weight_adjoint");
}

// ---------------------------------------------------------------------------

PoolResult maxpool2d(const Tensor& x, std::size_t window) {
    require_rank(x, 4, "maxpool2d");
    const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (window == 0 || H % window != 0 || W % window != 0) {
        throw DimensionError("maxpool2d: spatial dims " + shape_to_string(x.shape()) + " not divisible by window " +
                             std::to_string(window));
    }
    const std::size_t OH = H / window, OW = W / window;
    PoolResult r;
    r.values = Tensor({B, C, OH, OW});
    r.indices.shape = r.values.shape();
    r.indices.indices.resize(r.values.numel());
    std::size_t o = 0;
    for (std::size_t bc = 0; bc < B * C; ++bc) {
        const std::size_t base = bc * H * W;
        for (std::size_t oh = 0; oh < OH; ++oh)
            for (std::size_t ow = 0; ow < OW; ++ow, ++o) {
                std::size_t best = base + oh * window * W + ow * window;
                Scalar best_v = x[best];
                for (std::size_t dh = 0; dh < window; ++dh)
                    for (std::size_t dw = 0; dw < window; ++dw) {
                        const std::size_t i = base + (oh * window + dh) * W + ow * window + dw;
                        if (x[i] > best_v) {  // strict: earlier index wins ties
                            best_v = x[i];
                            best = i;
                        }
                    }
                r.values[o] = best_v;
                r.indices.indices[o] = best;
            }
    }
    return r;
}

Tensor maxpool2d_adjoint(const Tensor& g, const PoolIndices& idx, const Shape& input_shape) {
    if (g.shape() != idx.shape || idx.indices.size() != g.numel()) {
        throw DimensionError("maxpool2d_adjoint: gradient " + shape_to_string(g.shape()) + " vs indices " +
                             shape_to_string(idx.shape));
    }
    Tensor out(input_shape);
    const std::size_t n = out.numel();
    for (std::size_t o = 0; o < g.numel(); ++o) {
        const std::size_t i = idx.indices[o];
        if (i >= n) {
            throw CorruptionError("maxpool2d_adjoint: index " + std::to_string(i) + " outside input of " +
                                  std::to_string(n) + " elements");
        }
        out[i] += g[o];
    }
    return out;
}

Tensor maxpool2d_gather(const Tensor& x, const PoolIndices& idx) {
    Tensor out(idx.shape);
    if (idx.indices.size() != out.numel()) throw DimensionError("maxpool2d_gather: malformed indices");
    for (std::size_t o = 0; o < out.numel(); ++o) {
        const std::size_t i = idx.indices[o];
        if (i >= x.numel()) throw CorruptionError("maxpool2d_gather: index " + std::to_string(i) + " out of range");
        out[o] = x[i];
    }
    return out;
}

// ---------------------------------------------------------------------------

namespace {

struct ChannelLayout {
    std::size_t batch, channels, spatial;
};

ChannelLayout channel_layout(const Tensor& x, const Tensor& scale) {
    if (x.rank() < 2) throw DimensionError("batchnorm: expected [B, C, ...], got " + shape_to_string(x.shape()));
    const std::size_t B = x.dim(0), C = x.dim(1);
    if (scale.numel() != C) {
        throw DimensionError("batchnorm: " + std::to_string(C) + " channels but " + std::to_string(scale.numel()) +
                             " affine parameters");
    }
    return {B, C, x.numel() / (B * C)};
}

}  // namespace

BatchNormOutput batchnorm_forward(const Tensor& x, const Tensor& scale, const Tensor& shift, BatchNormMode mode,
                                  const RunningStats& running, Scalar eps) {
    const auto [B, C, S] = channel_layout(x, scale);
    if (shift.numel() != C) throw DimensionError("batchnorm: shift size does not match channel count");

    BatchNormOutput out;
    auto& cache = out.cache;
    cache.mode = mode;
    cache.count = B * S;
    cache.mean = Tensor({C});
    cache.var = Tensor({C});
    cache.inv_std = Tensor({C});

    if (mode == BatchNormMode::train) {
        if (B < 2) throw StatisticsError("batchnorm: train mode needs a batch of at least 2, got " + std::to_string(B));
        for (std::size_t c = 0; c < C; ++c) {
            Scalar acc = 0;
            for (std::size_t b = 0; b < B; ++b) {
                const Scalar* p = x.raw() + (b * C + c) * S;
                for (std::size_t i = 0; i < S; ++i) acc += p[i];
            }
            const Scalar mean = acc / static_cast<Scalar>(cache.count);
            Scalar sq = 0;
            for (std::size_t b = 0; b < B; ++b) {
                const Scalar* p = x.raw() + (b * C + c) * S;
                for (std::size_t i = 0; i < S; ++i) sq += (p[i] - mean) * (p[i] - mean);
            }
            cache.mean[c] = mean;
            cache.var[c] = sq / static_cast<Scalar>(cache.count);
        }
    } else {
        if (running.mean.numel() != C || running.var.numel() != C) {
            throw UsageError("batchnorm: eval mode needs running statistics for " + std::to_string(C) + " channels");
        }
        for (std::size_t c = 0; c < C; ++c) {
            cache.mean[c] = running.mean[c];
            cache.var[c] = running.var[c];
        }
    }
    for (std::size_t c = 0; c < C; ++c) cache.inv_std[c] = 1 / std::sqrt(cache.var[c] + eps);

    cache.x_hat = Tensor(x.shape());
    out.y = Tensor(x.shape());
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c) {
            const std::size_t off = (b * C + c) * S;
            for (std::size_t i = 0; i < S; ++i) {
                const Scalar xh = (x[off + i] - cache.mean[c]) * cache.inv_std[c];
                cache.x_hat[off + i] = xh;
                out.y[off + i] = scale[c] * xh + shift[c];
            }
        }
    cache.valid = true;
    checked(out.y, "batchnorm_forward");
    return out;
}

void update_running_stats(RunningStats& running, const BatchNormCache& cache, Scalar momentum) {
    if (!cache.valid || cache.mode != BatchNormMode::train) {
        throw UsageError("update_running_stats: needs a train-mode batchnorm cache");
    }
    const std::size_t C = cache.mean.numel();
    if (running.mean.numel() != C) running.mean = Tensor({C});
    if (running.var.numel() != C) running.var = Tensor({C}, 1.0);
    const Scalar unbias =
        cache.count > 1 ? static_cast<Scalar>(cache.count) / static_cast<Scalar>(cache.count - 1) : Scalar{1};
    for (std::size_t c = 0; c < C; ++c) {
        running.mean[c] = (1 - momentum) * running.mean[c] + momentum * cache.mean[c];
        running.var[c] = (1 - momentum) * running.var[c] + momentum * cache.var[c] * unbias;
    }
}

BatchNormGrads batchnorm_adjoint(const Tensor& g, const BatchNormCache& cache, const Tensor& scale) {
    if (!cache.valid) throw UsageError("batchnorm_adjoint: missing forward cache");
    require_same_shape(g, cache.x_hat, "batchnorm_adjoint");
    const auto [B, C, S] = channel_layout(g, scale);

    BatchNormGrads out{Tensor(g.shape()), Tensor({C}), Tensor({C})};
    for (std::size_t c = 0; c < C; ++c) {
        Scalar sum_g = 0, sum_gx = 0;
        for (std::size_t b = 0; b < B; ++b) {
            const std::size_t off = (b * C + c) * S;
            for (std::size_t i = 0; i < S; ++i) {
                sum_g += g[off + i];
                sum_gx += g[off + i] * cache.x_hat[off + i];
            }
        }
        out.shift[c] = sum_g;
        out.scale[c] = sum_gx;

        const Scalar k = scale[c] * cache.inv_std[c];
        if (cache.mode == BatchNormMode::eval) {
            for (std::size_t b = 0; b < B; ++b) {
                const std::size_t off = (b * C + c) * S;
                for (std::size_t i = 0; i < S; ++i) out.x[off + i] = k * g[off + i];
            }
        } else {
            // d x = (scale / sigma) * (g - mean(g) - x_hat * mean(g * x_hat))
            const Scalar n = static_cast<Scalar>(cache.count);
            const Scalar mean_g = sum_g / n, mean_gx = sum_gx / n;
            for (std::size_t b = 0; b < B; ++b) {
                const std::size_t off = (b * C + c) * S;
                for (std::size_t i = 0; i < S; ++i)
                    out.x[off + i] = k * (g[off + i] - mean_g - cache.x_hat[off + i] * mean_gx);
            }
        }
    }
    return out;
}

}  // namespace ffebm
