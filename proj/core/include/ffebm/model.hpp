#pragma once

#include "ffebm/config.hpp"
#include "ffebm/energies.hpp"
#include "ffebm/feedforward.hpp"
#include "ffebm/solver.hpp"

#include <random>
#include <string>
#include <utility>
#include <vector>

namespace ffebm {

enum class Mode { train, eval };

inline BatchNormMode batchnorm_mode(Mode m) { return m == Mode::train ? BatchNormMode::train : BatchNormMode::eval; }

using Rng = std::mt19937_64;

/// Gaussian draws with variance V / fan_in. Square 2-D tensors double the variance on the diagonal.
Tensor init_goe(const Shape& shape, Scalar variance, std::size_t fan_in, Rng& rng);

/// Alternating feedforward ties and energy blocks followed by a linear softmax readout.
/// Block k (0-based) is ff[k] followed by eb[k]; ff[k] reads the last layer of eb[k-1]
/// (the network input for k = 0).
struct Model {
    std::string name;
    Activation activation = Activation::ernoult;
    Shape input_shape;
    std::size_t num_classes = 0;
    std::vector<FeedforwardBlockParams> ff;
    std::vector<HopfieldBlockParams> eb;
    ReadoutParams readout;

    std::size_t num_blocks() const noexcept { return eb.size(); }

    /// Named references to every tensor, trainable parameters first if `buffers` is false.
    std::vector<std::pair<std::string, Tensor*>> tensor_refs(bool buffers);
    std::vector<std::pair<std::string, const Tensor*>> tensor_refs(bool buffers) const;

    /// Trainable parameters only.
    TensorMap parameters() const;
    /// Parameters plus batchnorm running statistics.
    TensorMap state() const;
    /// Overwrites every tensor named in `values`; the key set must equal state() or parameters().
    void load(const TensorMap& values);

    Tensor& tensor(const std::string& name);
    const Tensor& tensor(const std::string& name) const;
};

std::string ff_weight_name(std::size_t block);
std::string ff_bn_scale_name(std::size_t block);
std::string ff_bn_shift_name(std::size_t block);
std::string coupling_name(std::size_t block, std::size_t coupling);
std::string bias_name(std::size_t block, std::size_t layer);
inline constexpr const char* kReadoutName = "readout.weight";

/// Allocates and initializes a model. Couplings, feedforward and readout weights are drawn
/// with init_goe from config.seed; biases and batchnorm shifts start at zero, scales at one.
/// Throws ConfigError naming the blocks when shapes do not chain.
Model build_model(const ModelConfig& config);

struct InferenceRecord {
    Mode mode = Mode::eval;
    Tensor input;
    std::vector<Tensor> x;              // feedforward outputs, one per block
    std::vector<ForwardCache> caches;   // one per block
    std::vector<BlockState> equilibria; // one per block
    Tensor logits;
};

/// Free phase through every block: x^k = F^k(s^{k-1}), s^k = relax(x^k) from zero states.
/// Divergence errors carry the block index.
InferenceRecord forward_inference(const Model& model, const Tensor& input, Mode mode,
                                  const RelaxationSettings& free_phase);

/// Largest per-block residual of a record.
Scalar record_residual(const Model& model, const InferenceRecord& record);

/// Folds the batch statistics of a train-mode record into the running estimates.
void update_running_stats(Model& model, const InferenceRecord& record, Scalar momentum = 0.1);

/// Last layer of a block state, the tensor fed to the next tie or the readout.
inline const Tensor& block_output(const BlockState& s) { return s.layers.back(); }

}  // namespace ffebm
