#include "ffebm/error.hpp"
#include "ffebm/gradients.hpp"
#include "helpers.hpp"

#include <gtest/gtest.h>

using namespace ffebm;
using ffebm::test::cyclic_labels;
using ffebm::test::interior_toy;
using ffebm::test::random_tensor;
using ffebm::test::rel_l2;

namespace {

EngineSettings precise(Engine e, Scalar beta = 0.01) {
    EngineSettings s;
    s.engine = e;
    s.beta = beta;
    s.t_free = 150;
    s.t_nudge = 100;
    return s;
}

struct Toy {
    Model model;
    Tensor x;
    Labels y;
};

Toy make_toy(std::uint64_t seed, std::vector<std::size_t> widths, std::vector<std::size_t> split) {
    Toy t{build_model(interior_toy(seed, std::move(widths), std::move(split))), {}, cyclic_labels(4, 3)};
    Rng rng(seed + 100);
    t.x = random_tensor({4, 5}, rng);
    return t;
}

GradientSet fd_of(const Toy& t, const EngineSettings& s) {
    return finite_difference_gradients(t.model, t.x, t.y, 1e-5, {}, s.free_phase(), Mode::eval);
}

}  // namespace

TEST(Engines, AllEnginesMatchFiniteDifferences) {
    const Toy t = make_toy(1, {6, 6, 5, 5, 4}, {2, 3});
    const GradientSet fd = fd_of(t, precise(Engine::id));
    for (Engine e : {Engine::ep_implicit, Engine::ep_explicit, Engine::id}) {
        const GradientRun run = compute_gradients(t.model, t.x, t.y, precise(e), Mode::eval);
        EXPECT_LT(max_relative_l2(run.grads, fd), 1e-2) << to_string(e);
        EXPECT_EQ(run.grads.size(), t.model.parameters().size());
    }
    const GradientRun id = compute_gradients(t.model, t.x, t.y, precise(Engine::id), Mode::eval);
    EXPECT_LT(max_relative_l2(id.grads, fd), 1e-6);
}

TEST(Engines, ExplicitAndImplicitChainingAgree) {
    const Toy t = make_toy(2, {5, 5, 5, 4, 4, 4}, {2, 2, 2});
    const GradientRun a = compute_gradients(t.model, t.x, t.y, precise(Engine::ep_implicit, 0.1), Mode::eval);
    const GradientRun b = compute_gradients(t.model, t.x, t.y, precise(Engine::ep_explicit, 0.1), Mode::eval);
    EXPECT_LT(max_relative_l2(b.grads, a.grads), 1e-9);
}

TEST(Engines, NudgeSignOnlySwapsThePhases) {
    const Toy t = make_toy(3, {6, 5, 4}, {1, 2});
    const GradientRun a = compute_gradients(t.model, t.x, t.y, precise(Engine::ep_implicit, 0.05), Mode::eval);
    const GradientRun b = compute_gradients(t.model, t.x, t.y, precise(Engine::ep_implicit, -0.05), Mode::eval);
    EXPECT_LT(max_relative_l2(b.grads, a.grads), 1e-12);
}

TEST(Engines, CenteredEstimateErrorShrinksQuadratically) {
    const Toy t = make_toy(4, {6, 6, 5, 5}, {2, 2});
    const GradientSet fd = fd_of(t, precise(Engine::id));
    auto err = [&](Scalar beta) {
        return max_relative_l2(compute_gradients(t.model, t.x, t.y, precise(Engine::ep_implicit, beta), Mode::eval).grads,
                               fd);
    };
    EXPECT_GE(err(0.02) / err(0.01), 3.0);
}

TEST(Engines, ThreadCountDoesNotChangeResults) {
    const Toy t = make_toy(5, {6, 6, 5}, {1, 2});
    EngineSettings s = precise(Engine::ep_implicit, 0.05);
    const GradientRun one = compute_gradients(t.model, t.x, t.y, s, Mode::eval);
    s.threads = 2;
    const GradientRun two = compute_gradients(t.model, t.x, t.y, s, Mode::eval);
    EXPECT_LT(max_relative_l2(two.grads, one.grads), 1e-12);
}

TEST(Engines, ImplicitDifferentiationRequiresConvergedEquilibria) {
    const Toy t = make_toy(6, {6, 6, 5}, {3});
    EngineSettings s = precise(Engine::id);
    s.t_free = 1;
    EXPECT_THROW(compute_gradients(t.model, t.x, t.y, s, Mode::eval), PreconditionError);
    s.residual_tolerance = 1e9;
    EXPECT_NO_THROW(compute_gradients(t.model, t.x, t.y, s, Mode::eval));
}

TEST(Engines, SettingsValidation) {
    EngineSettings s;
    s.beta = 0;
    EXPECT_THROW(s.validate(), ConfigError);
    s.beta = 0.1;
    s.t_nudge = 0;
    EXPECT_THROW(s.validate(), ConfigError);
    EXPECT_THROW(parse_engine("sgd"), ConfigError);
    EXPECT_EQ(parse_engine("ep"), Engine::ep_implicit);
    EXPECT_EQ(parse_engine("ep-explicit"), Engine::ep_explicit);
    EXPECT_EQ(parse_engine("id"), Engine::id);
}

TEST(Engines, FiniteDifferenceSubsetAndUnknownNames) {
    const Toy t = make_toy(7, {5, 4}, {2});
    const RelaxationSettings fp = precise(Engine::id).free_phase();
    const GradientSet sub = finite_difference_gradients(t.model, t.x, t.y, 1e-5, {kReadoutName}, fp);
    EXPECT_EQ(sub.size(), 1u);
    EXPECT_THROW(finite_difference_gradients(t.model, t.x, t.y, 1e-5, {"nope"}, fp), UsageError);
    EXPECT_THROW(finite_difference_gradients(t.model, t.x, t.y, 0.0, {}, fp), ConfigError);
}

TEST(AnalyticBackprop, MatchesFiniteDifferencesAndEpOnFeedforwardReduction) {
    ModelConfig c;
    c.input_shape = {5};
    c.num_classes = 3;
    c.bias = false;
    c.seed = 9;
    c.init.feedforward = 0.5;
    c.blocks = chain_blocks({6, 5, 4}, {1, 1, 1});
    const Model m = build_model(c);
    Rng rng(10);
    const Tensor x = random_tensor({4, 5}, rng);
    const Labels y = cyclic_labels(4, 3);
    EngineSettings s = precise(Engine::ep_implicit, 1e-3);
    s.t_free = 5;
    s.t_nudge = 5;
    const GradientSet bp = analytic_backprop(m, x, y);
    const GradientSet fd = finite_difference_gradients(m, x, y, 1e-6, {}, s.free_phase());
    EXPECT_LT(max_relative_l2(bp, fd), 1e-5);
    EXPECT_LT(max_relative_l2(compute_gradients(m, x, y, s, Mode::eval).grads, bp), 1e-3);

    c.blocks = chain_blocks({6, 5, 4}, {2, 1});
    EXPECT_THROW(analytic_backprop(build_model(c), x, y), PreconditionError);
}

TEST(Engines, MaxRelativeL2ComparesSharedKeys) {
    GradientSet a, b;
    a.emplace("w", Tensor::from({2}, {1.0, 1.0}));
    b.emplace("w", Tensor::from({2}, {1.0, 0.0}));
    EXPECT_NEAR(max_relative_l2(a, b), 1.0, 1e-15);
    EXPECT_THROW(max_relative_l2(GradientSet{}, b), UsageError);
}
