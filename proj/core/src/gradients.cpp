#include "ffebm/gradients.hpp"

#include "ffebm/error.hpp"
#include "ffebm/parallel.hpp"

#include <cmath>

namespace ffebm {

Engine parse_engine(const std::string& name) {
    if (name == "ep" || name == "ep-implicit") return Engine::ep_implicit;
    if (name == "ep-explicit") return Engine::ep_explicit;
    if (name == "id") return Engine::id;
    if (name == "fd") return Engine::fd;
    throw ConfigError("unknown engine '" + name + "' (expected ep, ep-explicit or id)");
}

std::string to_string(Engine e) {
    switch (e) {
        case Engine::ep_implicit: return "ep";
        case Engine::ep_explicit: return "ep-explicit";
        case Engine::id: return "id";
        case Engine::fd: return "fd";
    }
    return "?";
}

RelaxationSettings EngineSettings::free_phase() const {
    RelaxationSettings r;
    r.steps = t_free;
    r.schedule = schedule;
    r.init = StateInit::zeros;
    r.beta = 0;
    return r;
}

void EngineSettings::validate() const {
    if (!std::isfinite(beta) || beta == 0) throw ConfigError("beta must be finite and nonzero");
    if (t_free == 0 || t_nudge == 0) throw ConfigError("t_free and t_nudge must be at least 1");
}

namespace {

// (a - b) / (2 beta), elementwise.
Tensor centered(const Tensor& a, const Tensor& b, Scalar beta) {
    require_same_shape(a, b, "centered difference");
    Tensor out(a.shape());
    const Scalar denom = 2 * beta;
    for (std::size_t i = 0; i < a.numel(); ++i) out[i] = (a[i] - b[i]) / denom;
    return out;
}

void store_block(GradientSet& g, std::size_t k, const HopfieldGrads& h, const FeedforwardGrads& f, bool batchnorm) {
    g[ff_weight_name(k)] = f.weight;
    if (batchnorm) {
        g[ff_bn_scale_name(k)] = f.bn_scale;
        g[ff_bn_shift_name(k)] = f.bn_shift;
    }
    for (std::size_t c = 0; c < h.couplings.size(); ++c) g[coupling_name(k, c)] = h.couplings[c];
    for (std::size_t l = 0; l < h.biases.size(); ++l) g[bias_name(k, l)] = h.biases[l];
}

void require_record(const Model& model, const InferenceRecord& record) {
    if (record.equilibria.size() != model.num_blocks() || record.x.size() != model.num_blocks() ||
        record.caches.size() != model.num_blocks()) {
        throw UsageError("inference record does not belong to this model");
    }
}

DivergenceError tag_block(const DivergenceError& e, std::size_t k, int sign) {
    return DivergenceError("block " + std::to_string(k + 1) + " nudged phase (" + (sign > 0 ? "+beta" : "-beta") +
                               "): " + e.what(),
                           static_cast<int>(k), e.step(), sign);
}

EpResult ep_gradients(const Model& model, const InferenceRecord& record, const Labels& labels,
                      const EngineSettings& settings, const EpBlockHook& hook, bool explicit_chain) {
    settings.validate();
    require_record(model, record);
    const std::size_t N = model.num_blocks();
    const Scalar beta = settings.beta;

    EpResult out;
    out.deltas.resize(N);
    {
        const auto free = readout_loss(model.readout, block_output(record.equilibria.back()), labels);
        out.loss = free.loss;
        out.deltas[N - 1] = free.grad_s;
    }

    RelaxationSettings plus_settings;
    plus_settings.steps = settings.t_nudge;
    plus_settings.schedule = settings.schedule;
    plus_settings.init = settings.nudge_init;
    plus_settings.beta = beta;
    RelaxationSettings minus_settings = plus_settings;
    minus_settings.beta = -beta;

    for (std::size_t k = N; k-- > 0;) {
        const auto& eb = model.eb[k];
        const BlockState* start = &record.equilibria[k];
        std::vector<BlockState> traj_plus, traj_minus;
        StepObserver obs_plus, obs_minus;
        if (hook) {
            obs_plus = [&](std::size_t, const BlockState& s) { traj_plus.push_back(s); };
            obs_minus = [&](std::size_t, const BlockState& s) { traj_minus.push_back(s); };
        }
        BlockState s_plus, s_minus;
        NudgeSignal nudge;
        const bool last = k + 1 == N;
        if (!last) nudge = last_layer_nudge(eb, out.deltas[k]);

        auto phase = [&](const RelaxationSettings& rs, const StepObserver& obs, BlockState& dst, int sign) {
            try {
                dst = last ? relax_last_block(eb, record.x[k], model.activation, rs, model.readout, labels, start, obs)
                           : relax(eb, record.x[k], model.activation, rs, &nudge, start, obs);
            } catch (const DivergenceError& e) {
                throw tag_block(e, k, sign);
            }
        };
        run_both([&] { phase(plus_settings, obs_plus, s_plus, 1); },
                 [&] { phase(minus_settings, obs_minus, s_minus, -1); }, settings.threads > 1);

        if (hook) hook(k, traj_plus, traj_minus);

        if (last) {
            const auto rp = readout_loss(model.readout, block_output(s_plus), labels);
            const auto rm = readout_loss(model.readout, block_output(s_minus), labels);
            Tensor g = rp.grad_w;
            g += rm.grad_w;
            g *= 0.5;
            out.grads[kReadoutName] = std::move(g);
        }
        BlockEstimate est = centered_block_estimate(model, record, k, s_plus, s_minus, beta, explicit_chain);
        store_block(out.grads, k, est.hopfield, est.feedforward, model.ff[k].batchnorm);
        if (k > 0) out.deltas[k - 1] = std::move(est.delta_prev);
    }
    return out;
}

}  // namespace

BlockEstimate centered_block_estimate(const Model& model, const InferenceRecord& record, std::size_t k,
                                      const BlockState& plus, const BlockState& minus, Scalar beta,
                                      bool explicit_chain) {
    const auto& eb = model.eb[k];
    const auto& ff = model.ff[k];
    const auto& cache = record.caches[k];
    BlockEstimate est;

    const HopfieldGrads gp = grad_E_params(eb, plus);
    const HopfieldGrads gm = grad_E_params(eb, minus);
    for (std::size_t c = 0; c < gp.couplings.size(); ++c) {
        est.hopfield.couplings.push_back(centered(gp.couplings[c], gm.couplings[c], beta));
    }
    for (std::size_t l = 0; l < gp.biases.size(); ++l) {
        est.hopfield.biases.push_back(centered(gp.biases[l], gm.biases[l], beta));
    }

    const Tensor ex_plus = grad_E_input(plus);
    const Tensor ex_minus = grad_E_input(minus);
    if (explicit_chain) {
        const Tensor dx = centered(ex_plus, ex_minus, beta);
        est.feedforward = ff_param_vjp(ff, cache, dx);
        if (k > 0) est.delta_prev = ff_input_vjp(ff, cache, dx);
    } else {
        const FeedforwardGrads fp = ff_param_vjp(ff, cache, ex_plus);
        const FeedforwardGrads fm = ff_param_vjp(ff, cache, ex_minus);
        est.feedforward.weight = centered(fp.weight, fm.weight, beta);
        if (ff.batchnorm) {
            est.feedforward.bn_scale = centered(fp.bn_scale, fm.bn_scale, beta);
            est.feedforward.bn_shift = centered(fp.bn_shift, fm.bn_shift, beta);
        }
        if (k > 0) {
            est.delta_prev = centered(ff_input_vjp(ff, cache, ex_plus), ff_input_vjp(ff, cache, ex_minus), beta);
        }
    }
    return est;
}

EpResult ep_gradients_implicit(const Model& model, const InferenceRecord& record, const Labels& labels,
                               const EngineSettings& settings, const EpBlockHook& hook) {
    return ep_gradients(model, record, labels, settings, hook, false);
}

EpResult ep_gradients_explicit(const Model& model, const InferenceRecord& record, const Labels& labels,
                               const EngineSettings& settings, const EpBlockHook& hook) {
    return ep_gradients(model, record, labels, settings, hook, true);
}

IdResult id_gradients(const Model& model, const InferenceRecord& record, const Labels& labels,
                      const EngineSettings& settings, const IdStepHook& hook) {
    if (settings.t_nudge == 0) throw ConfigError("t_nudge must be at least 1");
    require_record(model, record);
    const Scalar res = record_residual(model, record);
    if (!(res <= settings.residual_tolerance)) {
        throw PreconditionError("implicit differentiation needs converged equilibria: residual " +
                                std::to_string(res) + " exceeds " + std::to_string(settings.residual_tolerance));
    }
    const std::size_t N = model.num_blocks();
    const auto bn_mode = batchnorm_mode(record.mode);

    // Re-execute from the stored equilibria, recording every step.
    std::vector<RelaxTape> tapes(N);
    std::vector<ForwardCache> caches(N);
    BlockState last;
    {
        const Tensor* in = &record.input;
        std::vector<BlockState> states(N);
        for (std::size_t k = 0; k < N; ++k) {
            auto fwd = ff_forward(model.ff[k], *in, bn_mode);
            caches[k] = std::move(fwd.cache);
            try {
                states[k] = relax_recorded(model.eb[k], fwd.output, model.activation, settings.t_nudge,
                                           settings.schedule, record.equilibria[k], tapes[k]);
            } catch (const DivergenceError& e) {
                throw DivergenceError("block " + std::to_string(k + 1) + " re-execution: " + e.what(),
                                      static_cast<int>(k), e.step(), 0);
            }
            in = &block_output(states[k]);
        }
        last = std::move(states.back());
    }

    IdResult out;
    out.deltas.resize(N);
    const auto rl = readout_loss(model.readout, block_output(last), labels);
    out.loss = rl.loss;
    out.grads[kReadoutName] = rl.grad_w;

    Tensor seed = rl.grad_s;
    for (std::size_t k = N; k-- > 0;) {
        const auto& eb = model.eb[k];
        out.deltas[k] = seed;
        BlockState adjoint = zero_state(eb, seed.rows());
        adjoint.layers.back() = seed;
        AdjointObserver obs;
        if (hook) {
            obs = [&](std::size_t step, const HopfieldGrads& g, const Tensor& gx) {
                hook(k, step, g, gx, model.ff[k], caches[k]);
            };
        }
        TapeAdjoint ta;
        try {
            ta = backprop_tape(eb, tapes[k], model.activation, adjoint, obs);
        } catch (const DivergenceError& e) {
            throw DivergenceError("block " + std::to_string(k + 1) + " adjoint: " + e.what(), static_cast<int>(k),
                                  e.step(), 0);
        }
        const FeedforwardGrads fg = ff_param_vjp(model.ff[k], caches[k], ta.input);
        store_block(out.grads, k, ta.grads, fg, model.ff[k].batchnorm);
        if (k > 0) seed = ff_input_vjp(model.ff[k], caches[k], ta.input);
    }
    return out;
}

Scalar pipeline_loss(const Model& model, const Tensor& input, const Labels& labels,
                     const RelaxationSettings& free_phase, Mode mode) {
    const auto rec = forward_inference(model, input, mode, free_phase);
    return readout_loss(model.readout, block_output(rec.equilibria.back()), labels).loss;
}

GradientSet finite_difference_gradients(const Model& model, const Tensor& input, const Labels& labels, Scalar eps,
                                        const std::vector<std::string>& subset,
                                        const RelaxationSettings& free_phase, Mode mode) {
    if (!(eps > 0)) throw ConfigError("finite differences need a positive step");
    Model work = model;
    std::vector<std::string> names = subset;
    if (names.empty()) {
        for (const auto& [name, _] : model.tensor_refs(false)) names.push_back(name);
    }
    const TensorMap trainable = model.parameters();
    GradientSet out;
    for (const auto& name : names) {
        if (!trainable.count(name)) throw UsageError("finite differences: unknown parameter '" + name + "'");
        Tensor& p = work.tensor(name);
        Tensor g(p.shape());
        for (std::size_t i = 0; i < p.numel(); ++i) {
            const Scalar orig = p[i];
            p[i] = orig + eps;
            const Scalar lp = pipeline_loss(work, input, labels, free_phase, mode);
            p[i] = orig - eps;
            const Scalar lm = pipeline_loss(work, input, labels, free_phase, mode);
            p[i] = orig;
            g[i] = (lp - lm) / (2 * eps);
        }
        out[name] = std::move(g);
    }
    return out;
}

GradientSet analytic_backprop(const Model& model, const Tensor& input, const Labels& labels, Mode mode) {
    const std::size_t N = model.num_blocks();
    for (std::size_t k = 0; k < N; ++k) {
        if (model.eb[k].num_layers() != 1 || model.eb[k].has_bias()) {
            throw PreconditionError("analytic backprop needs single-layer energy blocks without bias (block " +
                                    std::to_string(k + 1) + ")");
        }
    }
    std::vector<Tensor> x(N), s(N);
    std::vector<ForwardCache> caches(N);
    const Tensor* in = &input;
    for (std::size_t k = 0; k < N; ++k) {
        auto fwd = ff_forward(model.ff[k], *in, batchnorm_mode(mode));
        x[k] = std::move(fwd.output);
        caches[k] = std::move(fwd.cache);
        s[k] = activation_apply(model.activation, x[k]);
        in = &s[k];
    }
    const auto rl = readout_loss(model.readout, s.back(), labels);
    GradientSet out;
    out[kReadoutName] = rl.grad_w;
    Tensor delta = rl.grad_s;
    for (std::size_t k = N; k-- > 0;) {
        const Tensor dx = hadamard(activation_derivative(model.activation, x[k]), delta);
        const FeedforwardGrads fg = ff_param_vjp(model.ff[k], caches[k], dx);
        store_block(out, k, HopfieldGrads{}, fg, model.ff[k].batchnorm);
        if (k > 0) delta = ff_input_vjp(model.ff[k], caches[k], dx);
    }
    return out;
}

GradientRun compute_gradients(const Model& model, const Tensor& input, const Labels& labels,
                              const EngineSettings& settings, Mode mode) {
    GradientRun run;
    run.record = forward_inference(model, input, mode, settings.free_phase());
    switch (settings.engine) {
        case Engine::ep_implicit:
        case Engine::ep_explicit: {
            auto r = settings.engine == Engine::ep_implicit ? ep_gradients_implicit(model, run.record, labels, settings)
                                                            : ep_gradients_explicit(model, run.record, labels, settings);
            run.grads = std::move(r.grads);
            run.loss = r.loss;
            break;
        }
        case Engine::id: {
            auto r = id_gradients(model, run.record, labels, settings);
            run.grads = std::move(r.grads);
            run.loss = readout_loss(model.readout, block_output(run.record.equilibria.back()), labels).loss;
            break;
        }
        case Engine::fd:
            run.grads = finite_difference_gradients(model, input, labels, 1e-5, {}, settings.free_phase(), mode);
            run.loss = readout_loss(model.readout, block_output(run.record.equilibria.back()), labels).loss;
            break;
    }
    return run;
}

Scalar max_relative_l2(const GradientSet& a, const GradientSet& b) {
    Scalar worst = 0;
    for (const auto& [name, tb] : b) {
        auto it = a.find(name);
        if (it == a.end()) throw UsageError("gradient sets differ: missing '" + name + "'");
        const Scalar nb = l2_norm(tb);
        const Scalar diff = l2_norm(it->second - tb);
        const Scalar rel = nb > 0 ? diff / nb : diff;
        worst = std::max(worst, rel);
    }
    return worst;
}

}  // namespace ffebm
