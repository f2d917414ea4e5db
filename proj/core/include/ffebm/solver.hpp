#pragma once

#include "ffebm/energies.hpp"
#include "ffebm/feedforward.hpp"

#include <functional>
#include <string>
#include <vector>

namespace ffebm {

/// synchronous: every layer reads the previous step.
/// asynchronous: layers 1, 3, 5, ... (1-based) first, then 2, 4, ... on the half-updated state.
enum class Schedule { synchronous, asynchronous };
enum class StateInit { zeros, warm_start };

Schedule parse_schedule(const std::string& name);
std::string to_string(Schedule s);

struct RelaxationSettings {
    std::size_t steps = 20;
    Schedule schedule = Schedule::asynchronous;
    StateInit init = StateInit::zeros;
    Scalar beta = 0;  // signed; the update subtracts beta * delta
};

/// Constant error signal, one entry per layer. Empty tensors mean no force on that layer.
struct NudgeSignal {
    std::vector<Tensor> layers;
};

/// Nudge acting on the last layer of the block only.
NudgeSignal last_layer_nudge(const HopfieldBlockParams& p, Tensor delta);

/// Called after every completed step (1-based) with the current state.
using StepObserver = std::function<void(std::size_t step, const BlockState& state)>;

/// Fixed-point relaxation s <- sigma(x * 1[input layer] - grad_s U(s) - beta * delta).
/// `start` is required when settings.init is warm_start. Throws DivergenceError when a
/// pre-activation leaves [-1e6, 1e6] or is not finite.
BlockState relax(const HopfieldBlockParams& p, const Tensor& x, Activation act, const RelaxationSettings& settings,
                 const NudgeSignal* nudge = nullptr, const BlockState* start = nullptr,
                 const StepObserver& observe = {});

/// Relaxation of the block feeding the readout: the force on its last layer is the loss
/// gradient re-evaluated at the state at the start of each step.
BlockState relax_last_block(const HopfieldBlockParams& p, const Tensor& x, Activation act,
                            const RelaxationSettings& settings, const ReadoutParams& readout, const Labels& labels,
                            const BlockState* start = nullptr, const StepObserver& observe = {});

/// L-infinity distance between s and one synchronous update of s.
Scalar residual(const HopfieldBlockParams& p, const BlockState& s, const Tensor& x, Activation act,
                const NudgeSignal* nudge = nullptr, Scalar beta = 0);

// ---------------------------------------------------------------------------
// Recorded relaxation and its adjoint
// ---------------------------------------------------------------------------

/// One half-step (async) or full step (sync): the layers updated, the state they read,
/// their pre-activations and the pool selections in force.
struct PhaseRecord {
    std::vector<std::size_t> group;
    BlockState before;
    std::vector<Tensor> pre_activation;  // aligned with group
    CouplingIndices indices;
};

struct RelaxTape {
    Schedule schedule = Schedule::synchronous;
    std::size_t steps = 0;
    std::vector<PhaseRecord> phases;
};

/// Free (unnudged) relaxation from `start`, recording every phase.
BlockState relax_recorded(const HopfieldBlockParams& p, const Tensor& x, Activation act, std::size_t steps,
                          Schedule schedule, const BlockState& start, RelaxTape& tape);

struct TapeAdjoint {
    HopfieldGrads grads;  // summed over the batch
    Tensor input;         // gradient in the block input x
};

/// Called after each backward step j = 1..T with the running accumulators.
using AdjointObserver = std::function<void(std::size_t step, const HopfieldGrads& grads, const Tensor& input)>;

/// Reverse sweep through a tape given the adjoint of the final state.
TapeAdjoint backprop_tape(const HopfieldBlockParams& p, const RelaxTape& tape, Activation act,
                          const BlockState& final_adjoint, const AdjointObserver& observe = {});

}  // namespace ffebm
