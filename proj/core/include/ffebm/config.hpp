#pragma once

#include "ffebm/energies.hpp"
#include "ffebm/feedforward.hpp"
#include "ffebm/solver.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace ffebm {

struct CouplingSpec {
    CouplingKind kind = CouplingKind::dense;
    bool pool = false;
};

struct FeedforwardSpec {
    FeedforwardKind kind = FeedforwardKind::linear;
    std::size_t kernel = 3;
    std::size_t stride = 1;
    std::size_t pad = 1;
    bool pool = false;
    bool batchnorm = false;
};

struct EnergyBlockSpec {
    std::vector<Shape> layers;  // per-sample shapes; the first receives the feedforward drive
    std::vector<CouplingSpec> couplings;
};

struct BlockSpec {
    FeedforwardSpec ff;
    EnergyBlockSpec eb;
};

/// Variances V of the GOE-style initialization, per parameter role.
struct InitSpec {
    Scalar coupling = 0.5;
    Scalar feedforward = 1.0;
    Scalar readout = 1.0;
    Scalar bias = 0.0;  // initial value of every energy-block bias
};

struct DataSpec {
    std::string source = "synthetic_blobs";  // mnist_idx | cifar10_binary | synthetic_blobs
    std::string root;
    std::size_t train_limit = 0;  // 0 keeps everything
    std::size_t val_limit = 0;
    Scalar hflip_prob = 0;
    std::size_t crop_pad = 0;
    std::size_t synthetic_train = 512;
    std::size_t synthetic_val = 256;
    Scalar synthetic_separation = 4;
};

struct TrainSpec {
    std::size_t epochs = 10;
    std::size_t batch_size = 32;
    Scalar lr = 1e-3;
    Scalar lr_min = 1e-5;
    Scalar weight_decay = 3e-4;
    std::string engine = "ep";  // ep | ep-explicit | id
    std::size_t checkpoint_every = 0;
    std::size_t validate_every = 1;
};

/// Partitions, engines and seeds retrained by the splitting benchmark.
struct SplitBenchSpec {
    std::vector<std::vector<std::size_t>> splits;
    std::vector<std::string> engines{"ep"};
    std::vector<std::uint64_t> seeds{0};
};

/// Settings of the gradcheck and gdu reports.
struct DiagnosticsSpec {
    std::size_t batch = 4;               // samples drawn from the head of the training set
    std::size_t tracked_per_tensor = 5;  // GDU entries per weight tensor
    std::uint64_t tracked_seed = 0;
    Scalar fd_eps = 1e-5;
};

struct ModelConfig {
    std::string name = "model";
    Shape input_shape;
    std::size_t num_classes = 10;
    Activation activation = Activation::ernoult;
    bool bias = true;
    InitSpec init;
    std::uint64_t seed = 0;

    std::size_t t_free = 30;
    std::size_t t_nudge = 10;
    Scalar beta = 0.2;
    Scalar residual_tolerance = 1e-3;  // largest free-phase residual accepted by the id engine
    Schedule schedule = Schedule::asynchronous;

    std::vector<BlockSpec> blocks;
    DataSpec data;
    TrainSpec train;
    SplitBenchSpec split_bench;
    DiagnosticsSpec diagnostics;

    std::size_t total_layers() const;
};

/// Parses a JSON document. Blocks are given either explicitly under "blocks" or as a
/// fully connected "chain": {"widths": [...], "split": [...]}. Throws ConfigError.
ModelConfig parse_config(const std::string& json_text);
ModelConfig load_config(const std::string& path);
std::string config_to_json(const ModelConfig& config);

/// Fully connected blocks over `widths` grouped by `split`. Throws ConfigError when the
/// split does not cover every layer exactly once.
std::vector<BlockSpec> chain_blocks(const std::vector<std::size_t>& widths, const std::vector<std::size_t>& split,
                                    bool batchnorm = false);

}  // namespace ffebm
