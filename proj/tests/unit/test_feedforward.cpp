#include "ffebm/error.hpp"
#include "ffebm/feedforward.hpp"
#include "ffebm/model.hpp"
#include "helpers.hpp"

#include <gtest/gtest.h>

using namespace ffebm;
using ffebm::test::random_tensor;
using ffebm::test::rel_err;

namespace {

FeedforwardBlockParams conv_block(Rng& rng, bool pool, bool bn) {
    FeedforwardBlockParams p;
    p.kind = FeedforwardKind::conv_pool_bn;
    p.in_shape = {2, 6, 6};
    p.weight = random_tensor({3, 2, 3, 3}, rng, 0.4);
    p.geometry = {1, 1};
    p.pool = pool;
    p.batchnorm = bn;
    p.out_shape = pool ? Shape{3, 3, 3} : Shape{3, 6, 6};
    if (bn) {
        p.bn_scale = random_tensor({3}, rng, 0.5);
        for (auto& v : p.bn_scale.data()) v += 1.0;
        p.bn_shift = random_tensor({3}, rng, 0.5);
        p.running.mean = random_tensor({3}, rng, 0.1);
        p.running.var = Tensor({3});
        for (auto& v : p.running.var.data()) v = 0.8;
    }
    p.validate();
    return p;
}

FeedforwardBlockParams linear_block(Rng& rng, bool bn) {
    FeedforwardBlockParams p;
    p.kind = FeedforwardKind::linear;
    p.in_shape = {7};
    p.out_shape = {5};
    p.weight = random_tensor({5, 7}, rng, 0.4);
    p.batchnorm = bn;
    if (bn) {
        p.bn_scale = random_tensor({5}, rng, 0.3);
        for (auto& v : p.bn_scale.data()) v += 1.0;
        p.bn_shift = random_tensor({5}, rng, 0.3);
        p.running.mean = Tensor({5});
        p.running.var = Tensor({5});
        for (auto& v : p.running.var.data()) v = 1.0;
    }
    p.validate();
    return p;
}

Shape batched_shape(std::size_t b, const Shape& s) {
    Shape out{b};
    out.insert(out.end(), s.begin(), s.end());
    return out;
}

/// <u, (f(x + eps d) - f(x - eps d)) / 2 eps> against <vjp(u), d> for input and parameter directions.
void check_block_adjoints(FeedforwardBlockParams p, BatchNormMode mode, Rng& rng) {
    constexpr Scalar eps = 1e-6;
    const std::size_t B = 4;
    for (int dir = 0; dir < 20; ++dir) {
        const Tensor x = random_tensor(batched_shape(B, p.in_shape), rng);
        const ForwardResult fwd = ff_forward(p, x, mode);
        const Tensor u = random_tensor(fwd.output.shape(), rng);

        const Tensor dx = random_tensor(x.shape(), rng);
        const Scalar fd_in = (dot(u, ff_forward(p, x + eps * dx, mode).output) -
                              dot(u, ff_forward(p, x - eps * dx, mode).output)) /
                             (2 * eps);
        EXPECT_LT(rel_err(dot(ff_input_vjp(p, fwd.cache, u), dx), fd_in), 1e-3) << "input direction " << dir;

        const FeedforwardGrads g = ff_param_vjp(p, fwd.cache, u);
        auto directional = [&](Tensor FeedforwardBlockParams::*member, const Tensor& grad) {
            const Tensor d = random_tensor((p.*member).shape(), rng);
            FeedforwardBlockParams plus = p, minus = p;
            plus.*member += eps * d;
            minus.*member -= eps * d;
            const Scalar fd = (dot(u, ff_forward(plus, x, mode).output) - dot(u, ff_forward(minus, x, mode).output)) /
                              (2 * eps);
            EXPECT_LT(rel_err(dot(grad, d), fd), 1e-3) << "parameter direction " << dir;
        };
        directional(&FeedforwardBlockParams::weight, g.weight);
        if (p.batchnorm) {
            directional(&FeedforwardBlockParams::bn_scale, g.bn_scale);
            directional(&FeedforwardBlockParams::bn_shift, g.bn_shift);
        }
    }
}

}  // namespace

TEST(FeedforwardBlock, LinearAdjointsMatchDirectionalDerivatives) {
    Rng rng(11);
    check_block_adjoints(linear_block(rng, false), BatchNormMode::eval, rng);
    check_block_adjoints(linear_block(rng, true), BatchNormMode::train, rng);
    check_block_adjoints(linear_block(rng, true), BatchNormMode::eval, rng);
}

TEST(FeedforwardBlock, ConvPoolBatchNormAdjointsMatchDirectionalDerivatives) {
    Rng rng(12);
    check_block_adjoints(conv_block(rng, true, true), BatchNormMode::train, rng);
    check_block_adjoints(conv_block(rng, true, true), BatchNormMode::eval, rng);
    check_block_adjoints(conv_block(rng, false, false), BatchNormMode::eval, rng);
}

TEST(FeedforwardBlock, InputAdjointSatisfiesInnerProductIdentityWithoutBatchNorm) {
    Rng rng(13);
    const FeedforwardBlockParams p = conv_block(rng, false, false);
    for (int dir = 0; dir < 20; ++dir) {
        const Tensor x = random_tensor({3, 2, 6, 6}, rng);
        const ForwardResult fwd = ff_forward(p, x, BatchNormMode::eval);
        const Tensor u = random_tensor(fwd.output.shape(), rng);
        // Linear in x: <u, F(x)> = <F^T u, x>.
        EXPECT_LT(rel_err(dot(u, fwd.output), dot(ff_input_vjp(p, fwd.cache, u), x)), 1e-10);
    }
}

TEST(FeedforwardBlock, StaleCacheIsRejected) {
    Rng rng(14);
    FeedforwardBlockParams p = linear_block(rng, false);
    const Tensor x = random_tensor({3, 7}, rng);
    const ForwardResult fwd = ff_forward(p, x, BatchNormMode::eval);
    const Tensor u = random_tensor(fwd.output.shape(), rng);
    EXPECT_NO_THROW(ff_input_vjp(p, fwd.cache, u));
    p.weight[0] += 0.25;
    EXPECT_THROW(ff_input_vjp(p, fwd.cache, u), UsageError);
    EXPECT_THROW(ff_param_vjp(p, fwd.cache, u), UsageError);
    EXPECT_THROW(ff_input_vjp(p, ForwardCache{}, u), UsageError);
}

TEST(FeedforwardBlock, ShapeMismatchesAreDimensionErrors) {
    Rng rng(15);
    FeedforwardBlockParams p = linear_block(rng, false);
    EXPECT_THROW(ff_forward(p, random_tensor({3, 6}, rng), BatchNormMode::eval), DimensionError);
    p.weight = random_tensor({5, 6}, rng);
    EXPECT_THROW(p.validate(), DimensionError);
}

TEST(Readout, LossAndGradientsMatchFiniteDifferences) {
    Rng rng(16);
    ReadoutParams r{random_tensor({4, 6}, rng)};
    const Tensor s = random_tensor({5, 6}, rng);
    const Labels y{0, 3, 1, 2, 3};
    const ReadoutResult res = readout_loss(r, s, y);

    // Independent cross-entropy: mean_b (logsumexp(z_b) - z_b[y_b]).
    Scalar expected = 0;
    for (std::size_t b = 0; b < 5; ++b) {
        Scalar m = -1e300;
        std::vector<Scalar> z(4);
        for (std::size_t c = 0; c < 4; ++c) {
            for (std::size_t j = 0; j < 6; ++j) z[c] += r.weight[c * 6 + j] * s[b * 6 + j];
            m = std::max(m, z[c]);
        }
        Scalar se = 0;
        for (Scalar v : z) se += std::exp(v - m);
        expected += (m + std::log(se) - z[y[b]]) / 5.0;
    }
    EXPECT_NEAR(res.loss, expected, 1e-12);

    constexpr Scalar eps = 1e-6;
    for (std::size_t i = 0; i < s.numel(); ++i) {
        Tensor sp = s, sm = s;
        sp[i] += eps;
        sm[i] -= eps;
        const Scalar fd = (readout_loss(r, sp, y).loss - readout_loss(r, sm, y).loss) / (2 * eps);
        EXPECT_NEAR(res.grad_s[i], fd, 1e-8);
    }
    for (std::size_t i = 0; i < r.weight.numel(); ++i) {
        ReadoutParams rp = r, rm = r;
        rp.weight[i] += eps;
        rm.weight[i] -= eps;
        const Scalar fd = (readout_loss(rp, s, y).loss - readout_loss(rm, s, y).loss) / (2 * eps);
        EXPECT_NEAR(res.grad_w[i], fd, 1e-8);
    }
    EXPECT_LT(max_abs_diff(readout_logits(r, s), res.logits), 1e-14);
}

TEST(Readout, LabelsOutsideTheClassRangeAreDataErrors) {
    Rng rng(17);
    ReadoutParams r{random_tensor({3, 4}, rng)};
    EXPECT_THROW(readout_loss(r, random_tensor({2, 4}, rng), Labels{0, 3}), DataError);
    EXPECT_THROW(readout_loss(r, random_tensor({2, 4}, rng), Labels{0}), DimensionError);
}
