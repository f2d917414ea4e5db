#pragma once

#include "ffebm/model.hpp"

#include <functional>
#include <string>
#include <vector>

namespace ffebm {

/// Gradients keyed like Model::parameters().
using GradientSet = TensorMap;

enum class Engine { ep_implicit, ep_explicit, id, fd };

/// Accepts "ep", "ep-implicit", "ep-explicit", "id" and "fd".
Engine parse_engine(const std::string& name);
std::string to_string(Engine e);

struct EngineSettings {
    Engine engine = Engine::ep_implicit;
    Scalar beta = 0.2;  // any finite nonzero value; the sign only swaps the two nudged phases
    std::size_t t_free = 30;
    std::size_t t_nudge = 10;
    Schedule schedule = Schedule::asynchronous;
    StateInit nudge_init = StateInit::warm_start;
    Scalar residual_tolerance = 1e-3;  // ID precondition on the free equilibria
    std::size_t threads = 1;           // > 1 runs the two nudged phases concurrently

    RelaxationSettings free_phase() const;
    /// Throws ConfigError for a zero or non-finite beta, or zero iteration counts.
    void validate() const;
};

/// Centered estimates for one block from its two nudged states.
struct BlockEstimate {
    HopfieldGrads hopfield;
    FeedforwardGrads feedforward;
    Tensor delta_prev;  // error for the last layer of the previous block; empty for block 0
};

/// (grad E(s_plus) - grad E(s_minus)) / (2 beta) for the block parameters and, through the
/// tie, for the feedforward parameters and the previous block. `explicit_chain` first forms
/// dx = -(s0_plus - s0_minus) / (2 beta) and applies the tie adjoints once.
BlockEstimate centered_block_estimate(const Model& model, const InferenceRecord& record, std::size_t block,
                                      const BlockState& plus, const BlockState& minus, Scalar beta,
                                      bool explicit_chain);

struct EpResult {
    GradientSet grads;
    std::vector<Tensor> deltas;  // error signal nudging each block (last: loss gradient at the free state)
    Scalar loss = 0;             // readout loss at the free equilibrium
};

/// Receives the per-step states (t = 1..T) of the +beta and -beta phases of one block.
using EpBlockHook = std::function<void(std::size_t block, const std::vector<BlockState>& plus,
                                       const std::vector<BlockState>& minus)>;

EpResult ep_gradients_implicit(const Model& model, const InferenceRecord& record, const Labels& labels,
                               const EngineSettings& settings, const EpBlockHook& hook = {});
EpResult ep_gradients_explicit(const Model& model, const InferenceRecord& record, const Labels& labels,
                               const EngineSettings& settings, const EpBlockHook& hook = {});

struct IdResult {
    GradientSet grads;
    std::vector<Tensor> deltas;  // adjoint seeding the last layer of each block
    Scalar loss = 0;             // readout loss after the re-executed forward
};

/// Receives the running accumulators after backward step j = 1..T of a block.
using IdStepHook =
    std::function<void(std::size_t block, std::size_t step, const HopfieldGrads& grads, const Tensor& input_grad,
                       const FeedforwardBlockParams& ff, const ForwardCache& cache)>;

/// Re-executes t_nudge steps per block from the stored equilibria and backpropagates through
/// them. Throws PreconditionError when the record residual exceeds settings.residual_tolerance.
IdResult id_gradients(const Model& model, const InferenceRecord& record, const Labels& labels,
                      const EngineSettings& settings, const IdStepHook& hook = {});

/// Readout loss of the full pipeline (free phase from zero states, then readout).
Scalar pipeline_loss(const Model& model, const Tensor& input, const Labels& labels,
                     const RelaxationSettings& free_phase, Mode mode);

/// Central differences of pipeline_loss. An empty subset means every trainable tensor;
/// otherwise only the listed tensors are returned.
GradientSet finite_difference_gradients(const Model& model, const Tensor& input, const Labels& labels, Scalar eps,
                                        const std::vector<std::string>& subset,
                                        const RelaxationSettings& free_phase, Mode mode = Mode::eval);

/// Backprop through the feedforward reduction s^k = sigma(F^k(s^{k-1})). Requires single-layer,
/// bias-free energy blocks (PreconditionError otherwise).
GradientSet analytic_backprop(const Model& model, const Tensor& input, const Labels& labels, Mode mode = Mode::eval);

struct GradientRun {
    InferenceRecord record;
    GradientSet grads;
    Scalar loss = 0;
};

/// Free phase followed by the engine selected in `settings` (ep, ep-explicit or id).
GradientRun compute_gradients(const Model& model, const Tensor& input, const Labels& labels,
                              const EngineSettings& settings, Mode mode);

/// Largest per-tensor relative L2 difference ||a - b|| / ||b|| over the keys of `b`.
Scalar max_relative_l2(const GradientSet& a, const GradientSet& b);

}  // namespace ffebm
