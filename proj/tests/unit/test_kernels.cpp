#include "ffebm/error.hpp"
#include "ffebm/kernels.hpp"
#include "helpers.hpp"

#include <gtest/gtest.h>

using namespace ffebm;
using ffebm::test::random_tensor;
using ffebm::test::rel_err;

namespace {

Tensor naive_matmul(const Tensor& a, const Tensor& b) {
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor c({m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            Scalar acc = 0;
            for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
            c[i * n + j] = acc;
        }
    return c;
}

Tensor naive_conv(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t pad) {
    const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t O = w.dim(0), K = w.dim(2);
    const std::size_t Ho = (H + 2 * pad - K) / stride + 1, Wo = (W + 2 * pad - K) / stride + 1;
    Tensor y({B, O, Ho, Wo});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t o = 0; o < O; ++o)
            for (std::size_t i = 0; i < Ho; ++i)
                for (std::size_t j = 0; j < Wo; ++j) {
                    Scalar acc = 0;
                    for (std::size_t c = 0; c < C; ++c)
                        for (std::size_t u = 0; u < K; ++u)
                            for (std::size_t v = 0; v < K; ++v) {
                                const long h = static_cast<long>(i * stride + u) - static_cast<long>(pad);
                                const long ww = static_cast<long>(j * stride + v) - static_cast<long>(pad);
                                if (h < 0 || ww < 0 || h >= static_cast<long>(H) || ww >= static_cast<long>(W)) continue;
                                acc += w[((o * C + c) * K + u) * K + v] *
                                       x[((b * C + c) * H + static_cast<std::size_t>(h)) * W + static_cast<std::size_t>(ww)];
                            }
                    y[((b * O + o) * Ho + i) * Wo + j] = acc;
                }
    return y;
}

}  // namespace

TEST(Matmul, MatchesNaiveProducts) {
    Rng rng(1);
    const Tensor a = random_tensor({7, 5}, rng), b = random_tensor({5, 4}, rng);
    EXPECT_LT(max_abs_diff(matmul(a, b), naive_matmul(a, b)), 1e-12);
    EXPECT_LT(max_abs_diff(matmul_nt(a, transpose2d(b)), naive_matmul(a, b)), 1e-12);
    EXPECT_LT(max_abs_diff(matmul_tn(transpose2d(a), b), naive_matmul(a, b)), 1e-12);
}

TEST(Matmul, RejectsMismatchedInnerDimension) {
    Rng rng(2);
    EXPECT_THROW(matmul(random_tensor({3, 4}, rng), random_tensor({5, 2}, rng)), DimensionError);
}

TEST(Conv2d, MatchesDirectLoop) {
    Rng rng(3);
    const Tensor x = random_tensor({2, 3, 6, 5}, rng), w = random_tensor({4, 3, 3, 3}, rng);
    for (std::size_t stride : {1u, 2u}) {
        for (std::size_t pad : {0u, 1u}) {
            EXPECT_LT(max_abs_diff(conv2d(x, w, {stride, pad}), naive_conv(x, w, stride, pad)), 1e-12)
                << "stride " << stride << " pad " << pad;
        }
    }
}

TEST(Conv2d, AdjointsSatisfyInnerProductIdentity) {
    Rng rng(4);
    const Conv2dGeometry g{1, 1};
    const Shape xs{2, 3, 5, 5}, ws{4, 3, 3, 3};
    for (int dir = 0; dir < 20; ++dir) {
        const Tensor x = random_tensor(xs, rng), w = random_tensor(ws, rng);
        const Tensor y = conv2d(x, w, g);
        const Tensor r = random_tensor(y.shape(), rng);
        EXPECT_LT(rel_err(dot(y, r), dot(x, conv2d_input_adjoint(r, w, g, xs))), 1e-10);
        EXPECT_LT(rel_err(dot(y, r), dot(w, conv2d_weight_adjoint(r, x, g, ws))), 1e-10);
    }
}

TEST(Conv2d, StridedAdjointsSatisfyInnerProductIdentity) {
    Rng rng(5);
    const Conv2dGeometry g{2, 1};
    const Shape xs{1, 2, 7, 6}, ws{3, 2, 3, 3};
    for (int dir = 0; dir < 20; ++dir) {
        const Tensor x = random_tensor(xs, rng), w = random_tensor(ws, rng);
        const Tensor r = random_tensor(conv2d_output_shape(xs, ws, g), rng);
        EXPECT_LT(rel_err(dot(conv2d(x, w, g), r), dot(x, conv2d_input_adjoint(r, w, g, xs))), 1e-10);
        EXPECT_LT(rel_err(dot(conv2d(x, w, g), r), dot(w, conv2d_weight_adjoint(r, x, g, ws))), 1e-10);
    }
}

TEST(MaxPool, SelectsWindowMaximaWithLowestIndexTies) {
    const Tensor x = Tensor::from({1, 1, 2, 4}, {1, 3, 5, 5, 2, 0, 5, 1});
    const PoolResult p = maxpool2d(x, 2);
    EXPECT_EQ(p.values.shape(), (Shape{1, 1, 1, 2}));
    EXPECT_EQ(p.values[0], 3);
    EXPECT_EQ(p.values[1], 5);
    EXPECT_EQ(p.indices.indices[1], 2u);
}

TEST(MaxPool, AdjointAndGatherAreTransposes) {
    Rng rng(6);
    const Shape xs{2, 3, 4, 6};
    for (int dir = 0; dir < 20; ++dir) {
        const Tensor x = random_tensor(xs, rng);
        const PoolResult p = maxpool2d(x, 2);
        const Tensor g = random_tensor(p.values.shape(), rng);
        const Tensor z = random_tensor(xs, rng);
        EXPECT_LT(rel_err(dot(maxpool2d_adjoint(g, p.indices, xs), z), dot(g, maxpool2d_gather(z, p.indices))),
                  1e-12);
        EXPECT_EQ(maxpool2d_gather(x, p.indices), p.values);
    }
}

TEST(MaxPool, DirectionalDerivativeMatchesAdjoint) {
    Rng rng(7);
    const Shape xs{1, 2, 4, 4};
    const Tensor x = random_tensor(xs, rng);
    const PoolResult p = maxpool2d(x, 2);
    for (int dir = 0; dir < 20; ++dir) {
        const Tensor d = random_tensor(xs, rng), g = random_tensor(p.values.shape(), rng);
        const Scalar h = 1e-7;
        Tensor xp = x, xm = x;
        axpy(h, d, xp);
        axpy(-h, d, xm);
        const Scalar fd = (dot(maxpool2d(xp, 2).values, g) - dot(maxpool2d(xm, 2).values, g)) / (2 * h);
        EXPECT_LT(rel_err(fd, dot(maxpool2d_adjoint(g, p.indices, xs), d)), 1e-6);
    }
}

namespace {

struct BnFixture {
    Tensor x, scale, shift, g;
    RunningStats running;
};

BnFixture bn_fixture(Rng& rng) {
    BnFixture f;
    f.x = random_tensor({4, 3, 2, 2}, rng);
    f.scale = random_tensor({3}, rng);
    f.shift = random_tensor({3}, rng);
    f.running = {random_tensor({3}, rng), Tensor::full({3}, 1.5)};
    f.g = random_tensor({4, 3, 2, 2}, rng);
    return f;
}

}  // namespace

TEST(BatchNorm, TrainModeNormalizesPerChannel) {
    Rng rng(8);
    BnFixture f = bn_fixture(rng);
    const auto out = batchnorm_forward(f.x, Tensor::full({3}, 1), Tensor::full({3}, 0), BatchNormMode::train, f.running);
    for (std::size_t c = 0; c < 3; ++c) {
        Scalar m = 0, v = 0;
        for (std::size_t b = 0; b < 4; ++b)
            for (std::size_t i = 0; i < 4; ++i) m += out.y[(b * 3 + c) * 4 + i];
        m /= 16;
        for (std::size_t b = 0; b < 4; ++b)
            for (std::size_t i = 0; i < 4; ++i) v += std::pow(out.y[(b * 3 + c) * 4 + i] - m, 2);
        EXPECT_NEAR(m, 0, 1e-12);
        EXPECT_NEAR(v / 16, 1, 1e-3);
    }
}

TEST(BatchNorm, AdjointMatchesDirectionalDerivatives) {
    Rng rng(9);
    for (BatchNormMode mode : {BatchNormMode::train, BatchNormMode::eval}) {
        BnFixture f = bn_fixture(rng);
        const auto out = batchnorm_forward(f.x, f.scale, f.shift, mode, f.running);
        const BatchNormGrads gr = batchnorm_adjoint(f.g, out.cache, f.scale);
        auto objective = [&](const Tensor& x, const Tensor& sc, const Tensor& sh) {
            return dot(batchnorm_forward(x, sc, sh, mode, f.running).y, f.g);
        };
        const Scalar h = 1e-6;
        for (int dir = 0; dir < 20; ++dir) {
            const Tensor dx = random_tensor(f.x.shape(), rng), ds = random_tensor({3}, rng),
                         db = random_tensor({3}, rng);
            Tensor xp = f.x, xm = f.x, sp = f.scale, sm = f.scale, bp = f.shift, bm = f.shift;
            axpy(h, dx, xp);
            axpy(-h, dx, xm);
            axpy(h, ds, sp);
            axpy(-h, ds, sm);
            axpy(h, db, bp);
            axpy(-h, db, bm);
            const Scalar fd = (objective(xp, sp, bp) - objective(xm, sm, bm)) / (2 * h);
            const Scalar an = dot(gr.x, dx) + dot(gr.scale, ds) + dot(gr.shift, db);
            EXPECT_LT(rel_err(fd, an), 1e-3);
        }
    }
}

TEST(BatchNorm, RunningStatisticsFollowExponentialAverage) {
    Rng rng(10);
    BnFixture f = bn_fixture(rng);
    const RunningStats before = f.running;
    const auto out = batchnorm_forward(f.x, f.scale, f.shift, BatchNormMode::train, f.running);
    update_running_stats(f.running, out.cache, 0.1);
    for (std::size_t c = 0; c < 3; ++c) {
        const Scalar unbiased = out.cache.var[c] * 16.0 / 15.0;
        EXPECT_NEAR(f.running.mean[c], 0.9 * before.mean[c] + 0.1 * out.cache.mean[c], 1e-12);
        EXPECT_NEAR(f.running.var[c], 0.9 * before.var[c] + 0.1 * unbiased, 1e-12);
    }
}
