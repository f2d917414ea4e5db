#include "ffebm/solver.hpp"

#include "ffebm/error.hpp"

#include <cmath>

namespace ffebm {

namespace {

constexpr Scalar kDivergenceThreshold = 1e6;

using Groups = std::vector<std::vector<std::size_t>>;

Groups layer_groups(std::size_t layers, Schedule schedule) {
    if (schedule == Schedule::synchronous || layers == 1) {
        std::vector<std::size_t> all(layers);
        for (std::size_t l = 0; l < layers; ++l) all[l] = l;
        return {all};
    }
    Groups g(2);
    for (std::size_t l = 0; l < layers; ++l) g[l % 2].push_back(l);
    return g;
}

const Tensor* nudge_for(const NudgeSignal* nudge, std::size_t layer) {
    if (!nudge || layer >= nudge->layers.size() || nudge->layers[layer].empty()) return nullptr;
    return &nudge->layers[layer];
}

// Pre-activation of one layer: drive + input - beta * delta.
Tensor pre_activation(const HopfieldBlockParams& p, const BlockState& s, const Tensor& x, std::size_t layer,
                      const NudgeSignal* nudge, Scalar beta, CouplingIndices* idx) {
    Tensor a = layer_drive(p, s, layer, idx);
    if (layer == 0) a += x;
    if (const Tensor* d = nudge_for(nudge, layer); d && beta != 0) axpy(-beta, *d, a);
    return a;
}

void check_pre_activation(const Tensor& a, std::size_t step, Scalar beta) {
    for (Scalar v : a.data()) {
        if (!std::isfinite(v) || std::abs(v) > kDivergenceThreshold) {
            throw DivergenceError("relaxation diverged at step " + std::to_string(step) + " (pre-activation " +
                                      std::to_string(v) + ")",
                                  -1, static_cast<int>(step), beta > 0 ? 1 : (beta < 0 ? -1 : 0));
        }
    }
}

void check_nudge_shapes(const HopfieldBlockParams& p, const NudgeSignal* nudge, std::size_t batch) {
    if (!nudge) return;
    if (nudge->layers.size() != p.num_layers()) {
        throw DimensionError("nudge has " + std::to_string(nudge->layers.size()) + " layers, block has " +
                             std::to_string(p.num_layers()));
    }
    for (std::size_t l = 0; l < p.num_layers(); ++l) {
        const auto& d = nudge->layers[l];
        if (!d.empty() && d.shape() != batched(batch, p.layers[l])) {
            throw DimensionError("nudge for layer " + std::to_string(l + 1) + " has shape " +
                                 shape_to_string(d.shape()));
        }
    }
}

BlockState initial_state(const HopfieldBlockParams& p, const Tensor& x, const RelaxationSettings& settings,
                         const BlockState* start) {
    if (settings.steps == 0) throw ConfigError("relaxation needs at least one step");
    if (!std::isfinite(settings.beta)) throw ConfigError("nudging factor must be finite");
    if (x.rank() == 0 || x.shape() != batched(x.rows(), p.layers.front())) {
        throw DimensionError("block input " + shape_to_string(x.shape()) + " does not match input layer " +
                             shape_to_string(p.layers.front()));
    }
    if (settings.init == StateInit::zeros) return zero_state(p, x.rows());
    if (!start) throw UsageError("warm-start relaxation needs a starting state");
    require_state_shapes(p, *start, "relax (warm start)");
    if (start->batch() != x.rows()) throw DimensionError("warm-start state batch does not match input");
    return *start;
}

using NudgeProvider = std::function<const NudgeSignal*(const BlockState&)>;

BlockState run(const HopfieldBlockParams& p, const Tensor& x, Activation act, const RelaxationSettings& settings,
               BlockState s, const NudgeProvider& provide, const StepObserver& observe) {
    const Groups groups = layer_groups(p.num_layers(), settings.schedule);
    std::vector<Tensor> updated;
    for (std::size_t t = 1; t <= settings.steps; ++t) {
        const NudgeSignal* nudge = provide ? provide(s) : nullptr;
        for (const auto& group : groups) {
            updated.clear();
            for (std::size_t l : group) {
                Tensor a = pre_activation(p, s, x, l, nudge, settings.beta, nullptr);
                check_pre_activation(a, t, settings.beta);
                updated.push_back(activation_apply(act, a));
            }
            for (std::size_t i = 0; i < group.size(); ++i) s.layers[group[i]] = std::move(updated[i]);
        }
        if (observe) observe(t, s);
    }
    return s;
}

}  // namespace

Schedule parse_schedule(const std::string& name) {
    if (name == "synchronous" || name == "sync") return Schedule::synchronous;
    if (name == "asynchronous" || name == "async") return Schedule::asynchronous;
    throw ConfigError("unknown schedule '" + name + "' (expected synchronous or asynchronous)");
}

std::string to_string(Schedule s) { return s == Schedule::synchronous ? "synchronous" : "asynchronous"; }

NudgeSignal last_layer_nudge(const HopfieldBlockParams& p, Tensor delta) {
    NudgeSignal n;
    n.layers.resize(p.num_layers());
    n.layers.back() = std::move(delta);
    return n;
}

BlockState relax(const HopfieldBlockParams& p, const Tensor& x, Activation act, const RelaxationSettings& settings,
                 const NudgeSignal* nudge, const BlockState* start, const StepObserver& observe) {
    BlockState s = initial_state(p, x, settings, start);
    check_nudge_shapes(p, nudge, x.rows());
    if (settings.beta != 0 && !nudge) throw UsageError("relax: nonzero beta needs a nudge signal");
    return run(p, x, act, settings, std::move(s), [nudge](const BlockState&) { return nudge; }, observe);
}

BlockState relax_last_block(const HopfieldBlockParams& p, const Tensor& x, Activation act,
                            const RelaxationSettings& settings, const ReadoutParams& readout, const Labels& labels,
                            const BlockState* start, const StepObserver& observe) {
    BlockState s = initial_state(p, x, settings, start);
    if (settings.beta == 0) return run(p, x, act, settings, std::move(s), {}, observe);
    NudgeSignal nudge;
    nudge.layers.resize(p.num_layers());
    auto provide = [&](const BlockState& current) -> const NudgeSignal* {
        nudge.layers.back() = readout_loss(readout, current.layers.back(), labels).grad_s;
        return &nudge;
    };
    return run(p, x, act, settings, std::move(s), provide, observe);
}

Scalar residual(const HopfieldBlockParams& p, const BlockState& s, const Tensor& x, Activation act,
                const NudgeSignal* nudge, Scalar beta) {
    require_state_shapes(p, s, "residual");
    check_nudge_shapes(p, nudge, s.batch());
    Scalar r = 0;
    for (std::size_t l = 0; l < p.num_layers(); ++l) {
        const Tensor next = activation_apply(act, pre_activation(p, s, x, l, nudge, beta, nullptr));
        r = std::max(r, max_abs_diff(next, s.layers[l]));
    }
    return r;
}

// ---------------------------------------------------------------------------

BlockState relax_recorded(const HopfieldBlockParams& p, const Tensor& x, Activation act, std::size_t steps,
                          Schedule schedule, const BlockState& start, RelaxTape& tape) {
    RelaxationSettings settings;
    settings.steps = steps;
    settings.schedule = schedule;
    settings.init = StateInit::warm_start;
    BlockState s = initial_state(p, x, settings, &start);

    const Groups groups = layer_groups(p.num_layers(), schedule);
    tape.schedule = schedule;
    tape.steps = steps;
    tape.phases.clear();
    tape.phases.reserve(steps * groups.size());
    for (std::size_t t = 1; t <= steps; ++t) {
        for (const auto& group : groups) {
            PhaseRecord rec;
            rec.group = group;
            rec.before = s;
            rec.indices.resize(p.couplings.size());
            for (std::size_t l : group) {
                Tensor a = pre_activation(p, s, x, l, nullptr, 0, &rec.indices);
                check_pre_activation(a, t, 0);
                rec.pre_activation.push_back(std::move(a));
            }
            for (std::size_t i = 0; i < group.size(); ++i) {
                s.layers[group[i]] = activation_apply(act, rec.pre_activation[i]);
            }
            tape.phases.push_back(std::move(rec));
        }
    }
    return s;
}

TapeAdjoint backprop_tape(const HopfieldBlockParams& p, const RelaxTape& tape, Activation act,
                          const BlockState& final_adjoint, const AdjointObserver& observe) {
    require_state_shapes(p, final_adjoint, "backprop_tape");
    const std::size_t L = p.num_layers();
    const std::size_t B = final_adjoint.batch();
    TapeAdjoint out;
    out.grads = zero_grads(p);
    out.input = Tensor(batched(B, p.layers.front()));

    if (tape.steps == 0 || tape.phases.size() % tape.steps != 0) throw CorruptionError("backprop_tape: malformed tape");
    const std::size_t phases_per_step = tape.phases.size() / tape.steps;

    std::vector<Tensor> v = final_adjoint.layers;
    for (std::size_t ph = tape.phases.size(); ph-- > 0;) {
        const PhaseRecord& rec = tape.phases[ph];
        std::vector<Tensor> u;
        u.reserve(rec.group.size());
        for (std::size_t i = 0; i < rec.group.size(); ++i) {
            const std::size_t l = rec.group[i];
            u.push_back(hadamard(activation_derivative(act, rec.pre_activation[i]), v[l]));
            v[l].fill(0);
        }
        for (std::size_t i = 0; i < rec.group.size(); ++i) {
            const std::size_t l = rec.group[i];
            const Tensor& ul = u[i];
            if (l > 0) {
                const auto& c = p.couplings[l - 1];
                const PoolIndices* idx = &rec.indices[l - 1];
                v[l - 1] += coupling_transpose(c, ul, v[l - 1].shape(), idx);
                out.grads.couplings[l - 1] += coupling_weight_grad(c, ul, rec.before.layers[l - 1], idx);
            }
            if (l + 1 < L) {
                const auto& c = p.couplings[l];
                const PoolIndices* idx = &rec.indices[l];
                v[l + 1] += coupling_forward_fixed(c, ul, v[l + 1].shape(), idx);
                out.grads.couplings[l] += coupling_weight_grad(c, rec.before.layers[l + 1], ul, idx);
            }
            if (p.has_bias()) {
                Tensor& gb = out.grads.biases[l];
                const std::size_t n = gb.numel();
                for (std::size_t b = 0; b < B; ++b)
                    for (std::size_t j = 0; j < n; ++j) gb[j] += ul[b * n + j];
            }
            if (l == 0) out.input += ul;
        }
        for (const auto& t : v) {
            if (!all_finite(t)) throw DivergenceError("adjoint sweep produced non-finite values");
        }
        if (ph % phases_per_step == 0 && observe) observe(tape.steps - ph / phases_per_step, out.grads, out.input);
    }
    return out;
}

}  // namespace ffebm
