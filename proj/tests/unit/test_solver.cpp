#include "ffebm/error.hpp"
#include "ffebm/solver.hpp"
#include "helpers.hpp"

#include <gtest/gtest.h>

using namespace ffebm;
using ffebm::test::random_tensor;
using ffebm::test::rel_err;

namespace {

HopfieldBlockParams small_block(Rng& rng, Scalar scale = 0.15, Scalar bias = 0.5) {
    HopfieldBlockParams p;
    p.layers = {{4}, {5}, {3}};
    p.couplings = {Coupling{CouplingKind::dense, false, random_tensor({5, 4}, rng, scale)},
                   Coupling{CouplingKind::dense, false, random_tensor({3, 5}, rng, scale)}};
    for (const auto& s : p.layers) {
        Tensor b(s);
        for (auto& v : b.data()) v = bias;
        p.biases.push_back(b);
    }
    p.validate();
    return p;
}

Scalar state_dot(const BlockState& a, const BlockState& b) {
    Scalar acc = 0;
    for (std::size_t l = 0; l < a.layers.size(); ++l) acc += dot(a.layers[l], b.layers[l]);
    return acc;
}

Scalar state_diff(const BlockState& a, const BlockState& b) {
    Scalar m = 0;
    for (std::size_t l = 0; l < a.layers.size(); ++l) m = std::max(m, max_abs_diff(a.layers[l], b.layers[l]));
    return m;
}

BlockState random_state(const HopfieldBlockParams& p, std::size_t batch, Rng& rng) {
    BlockState s = zero_state(p, batch);
    for (auto& t : s.layers) t = random_tensor(t.shape(), rng);
    return s;
}

}  // namespace

TEST(Relaxation, ConvergesToAFixedPoint) {
    Rng rng(21);
    const HopfieldBlockParams p = small_block(rng);
    const Tensor x = random_tensor({3, 4}, rng, 0.1);
    for (Schedule sched : {Schedule::synchronous, Schedule::asynchronous}) {
        RelaxationSettings rs;
        rs.steps = 200;
        rs.schedule = sched;
        const BlockState s = relax(p, x, Activation::ernoult, rs);
        EXPECT_LT(residual(p, s, x, Activation::ernoult), 1e-12) << to_string(sched);
    }
}

TEST(Relaxation, SynchronousAndAsynchronousShareTheFixedPoint) {
    Rng rng(22);
    const HopfieldBlockParams p = small_block(rng);
    const Tensor x = random_tensor({2, 4}, rng, 0.1);
    RelaxationSettings rs;
    rs.steps = 200;
    rs.schedule = Schedule::synchronous;
    const BlockState a = relax(p, x, Activation::ernoult, rs);
    rs.schedule = Schedule::asynchronous;
    const BlockState b = relax(p, x, Activation::ernoult, rs);
    EXPECT_LT(state_diff(a, b), 1e-10);
}

TEST(Relaxation, FixedPointSatisfiesClampedDriveEquation) {
    Rng rng(23);
    const HopfieldBlockParams p = small_block(rng);
    const Tensor x = random_tensor({2, 4}, rng, 0.1);
    RelaxationSettings rs;
    rs.steps = 300;
    const BlockState s = relax(p, x, Activation::laborieux, rs);
    // s_l = clamp((x 1[l = 0] + b_l + W_{l-1} s_{l-1} + W_l^T s_{l+1}) / 2, 0, 1), written out by hand.
    const auto& W0 = p.couplings[0].weight;
    const auto& W1 = p.couplings[1].weight;
    for (std::size_t b = 0; b < 2; ++b) {
        for (std::size_t i = 0; i < 5; ++i) {
            Scalar pre = p.biases[1][i];
            for (std::size_t j = 0; j < 4; ++j) pre += W0[i * 4 + j] * s.layers[0][b * 4 + j];
            for (std::size_t j = 0; j < 3; ++j) pre += W1[j * 5 + i] * s.layers[2][b * 3 + j];
            EXPECT_NEAR(s.layers[1][b * 5 + i], std::clamp(pre / 2, 0.0, 1.0), 1e-12);
        }
        for (std::size_t i = 0; i < 4; ++i) {
            Scalar pre = p.biases[0][i] + x[b * 4 + i];
            for (std::size_t j = 0; j < 5; ++j) pre += W0[j * 4 + i] * s.layers[1][b * 5 + j];
            EXPECT_NEAR(s.layers[0][b * 4 + i], std::clamp(pre / 2, 0.0, 1.0), 1e-12);
        }
    }
}

TEST(Relaxation, NudgeShiftsTheEquilibriumAgainstTheSignal) {
    Rng rng(24);
    const HopfieldBlockParams p = small_block(rng);
    const Tensor x = random_tensor({2, 4}, rng, 0.1);
    RelaxationSettings rs;
    rs.steps = 200;
    const BlockState free = relax(p, x, Activation::ernoult, rs);
    Tensor delta({2, 3});
    for (auto& v : delta.data()) v = 1.0;
    const NudgeSignal nudge = last_layer_nudge(p, delta);
    rs.beta = 0.1;
    const BlockState pushed = relax(p, x, Activation::ernoult, rs, &nudge);
    EXPECT_LT(residual(p, pushed, x, Activation::ernoult, &nudge, 0.1), 1e-12);
    for (std::size_t i = 0; i < 6; ++i) EXPECT_LT(pushed.layers[2][i], free.layers[2][i]);
}

TEST(Relaxation, UsageAndConfigurationErrors) {
    Rng rng(25);
    const HopfieldBlockParams p = small_block(rng);
    const Tensor x = random_tensor({2, 4}, rng);
    RelaxationSettings rs;
    rs.beta = 0.1;
    EXPECT_THROW(relax(p, x, Activation::ernoult, rs), UsageError);
    rs.beta = 0;
    rs.init = StateInit::warm_start;
    EXPECT_THROW(relax(p, x, Activation::ernoult, rs), UsageError);
    rs.init = StateInit::zeros;
    rs.steps = 0;
    EXPECT_THROW(relax(p, x, Activation::ernoult, rs), ConfigError);
    rs.steps = 5;
    EXPECT_THROW(relax(p, random_tensor({2, 3}, rng), Activation::ernoult, rs), DimensionError);
    EXPECT_THROW(parse_schedule("sideways"), ConfigError);
}

TEST(Relaxation, ExplodingDriveRaisesDivergence) {
    Rng rng(26);
    const HopfieldBlockParams p = small_block(rng, 1e8);
    const Tensor x = random_tensor({2, 4}, rng);
    RelaxationSettings rs;
    rs.steps = 5;
    try {
        relax(p, x, Activation::ernoult, rs);
        FAIL() << "expected divergence";
    } catch (const DivergenceError& e) {
        EXPECT_GE(e.step(), 1);
    }
}

TEST(Relaxation, ObserverSeesEveryStep) {
    Rng rng(27);
    const HopfieldBlockParams p = small_block(rng);
    const Tensor x = random_tensor({2, 4}, rng);
    RelaxationSettings rs;
    rs.steps = 7;
    std::vector<std::size_t> seen;
    BlockState last;
    const BlockState out = relax(p, x, Activation::ernoult, rs, nullptr, nullptr, [&](std::size_t t, const BlockState& s) {
        seen.push_back(t);
        last = s;
    });
    EXPECT_EQ(seen, (std::vector<std::size_t>{1, 2, 3, 4, 5, 6, 7}));
    EXPECT_EQ(last, out);
}

TEST(Relaxation, RecordedRunMatchesPlainRun) {
    Rng rng(28);
    const HopfieldBlockParams p = small_block(rng);
    const Tensor x = random_tensor({2, 4}, rng, 0.1);
    const BlockState start = random_state(p, 2, rng);
    for (Schedule sched : {Schedule::synchronous, Schedule::asynchronous}) {
        RelaxationSettings rs;
        rs.steps = 9;
        rs.schedule = sched;
        rs.init = StateInit::warm_start;
        RelaxTape tape;
        EXPECT_EQ(relax_recorded(p, x, Activation::ernoult, 9, sched, start, tape),
                  relax(p, x, Activation::ernoult, rs, nullptr, &start));
        EXPECT_EQ(tape.steps, 9u);
        EXPECT_EQ(tape.phases.size(), sched == Schedule::synchronous ? 9u : 18u);
    }
}

TEST(Relaxation, TapeAdjointMatchesDirectionalDerivatives) {
    Rng rng(29);
    const HopfieldBlockParams p = small_block(rng);
    const Tensor x = random_tensor({3, 4}, rng, 0.1);
    BlockState start = zero_state(p, 3);
    for (auto& t : start.layers) t = ffebm::test::uniform_tensor(t.shape(), rng, 0.3, 0.7);
    constexpr Scalar eps = 1e-6;
    for (Schedule sched : {Schedule::synchronous, Schedule::asynchronous}) {
        const BlockState u = random_state(p, 3, rng);
        auto objective = [&](const HopfieldBlockParams& q, const Tensor& xi) {
            RelaxTape scratch;
            return state_dot(u, relax_recorded(q, xi, Activation::ernoult, 6, sched, start, scratch));
        };
        RelaxTape tape;
        relax_recorded(p, x, Activation::ernoult, 6, sched, start, tape);
        const TapeAdjoint adj = backprop_tape(p, tape, Activation::ernoult, u);

        for (int dir = 0; dir < 20; ++dir) {
            const Tensor dx = random_tensor(x.shape(), rng);
            const Scalar fd_x = (objective(p, x + eps * dx) - objective(p, x - eps * dx)) / (2 * eps);
            EXPECT_LT(rel_err(dot(adj.input, dx), fd_x), 1e-3) << to_string(sched) << " input " << dir;

            HopfieldBlockParams plus = p, minus = p;
            Scalar analytic = 0;
            for (std::size_t c = 0; c < p.couplings.size(); ++c) {
                const Tensor d = random_tensor(p.couplings[c].weight.shape(), rng);
                plus.couplings[c].weight += eps * d;
                minus.couplings[c].weight -= eps * d;
                analytic += dot(adj.grads.couplings[c], d);
            }
            for (std::size_t l = 0; l < p.biases.size(); ++l) {
                const Tensor d = random_tensor(p.biases[l].shape(), rng);
                plus.biases[l] += eps * d;
                minus.biases[l] -= eps * d;
                analytic += dot(adj.grads.biases[l], d);
            }
            const Scalar fd_p = (objective(plus, x) - objective(minus, x)) / (2 * eps);
            EXPECT_LT(rel_err(analytic, fd_p), 1e-3) << to_string(sched) << " parameters " << dir;
        }
    }
}

TEST(Relaxation, AdjointObserverRunsOncePerStep) {
    Rng rng(30);
    const HopfieldBlockParams p = small_block(rng);
    const Tensor x = random_tensor({2, 4}, rng, 0.1);
    RelaxTape tape;
    const BlockState s = relax_recorded(p, x, Activation::ernoult, 4, Schedule::asynchronous, zero_state(p, 2), tape);
    std::size_t calls = 0;
    backprop_tape(p, tape, Activation::ernoult, s, [&](std::size_t j, const HopfieldGrads&, const Tensor&) {
        EXPECT_EQ(j, ++calls);
    });
    EXPECT_EQ(calls, 4u);
    tape.phases.pop_back();
    EXPECT_THROW(backprop_tape(p, tape, Activation::ernoult, s), CorruptionError);
}
