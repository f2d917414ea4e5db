#pragma once

#include "ffebm/data.hpp"
#include "ffebm/gradients.hpp"
#include "ffebm/optim.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace ffebm {

struct Datasets {
    Dataset train;
    Dataset val;
};

/// Loads the train and validation sets named by config.data (limits applied). Synthetic blobs
/// take their dimension from the model input shape.
Datasets load_datasets(const ModelConfig& config);

struct TrainOptions {
    EngineSettings engine;
    std::size_t epochs = 10;
    std::size_t batch_size = 32;
    AdamSettings adam;  // adam.lr is the peak of the cosine schedule
    Scalar lr_min = 1e-5;
    AugmentSpec augment;
    std::uint64_t seed = 0;  // shuffling and augmentation
    std::string metrics_path;     // JSONL, one line per epoch; timings go to <path>.timing.jsonl
    std::string checkpoint_path;  // empty disables checkpoints
    std::size_t checkpoint_every = 0;  // epochs; 0 saves only at the end
    std::size_t validate_every = 1;    // epochs; 0 validates only after the last one
};

/// Engine, optimizer and schedule settings of a config.
TrainOptions train_options(const ModelConfig& config);

struct Accuracy {
    Scalar top1 = 0;  // percent
    Scalar top5 = 0;
};

struct EpochMetrics {
    std::size_t epoch = 0;  // 1-based
    Scalar lr = 0;
    Scalar train_loss = 0;
    Accuracy val;
    bool validated = false;
    Scalar seconds = 0;
};

/// Percent of rows whose label is the argmax, and of rows whose label ranks among the five
/// largest logits. Ties go to the lower class index.
Accuracy accuracy_from_logits(const Tensor& logits, const Labels& labels);

/// Eval-mode free phase over the whole set in batches.
Accuracy evaluate(const Model& model, const Dataset& data, const RelaxationSettings& free_phase,
                  std::size_t batch_size = 256);

/// Mini-batch training: free phase, gradient engine, running-statistics update, Adam. The
/// learning rate follows a per-epoch cosine schedule. A DivergenceError propagates after the
/// metrics of completed epochs are written; the last saved checkpoint is left untouched.
std::vector<EpochMetrics> train(Model& model, const Dataset& train_set, const Dataset& val_set,
                                const TrainOptions& options);

struct SplitRow {
    std::string split;  // e.g. "2-2-2"
    std::string engine;
    std::uint64_t seed = 0;
    Accuracy val;
    Scalar seconds = 0;
};

/// Retrains the fully connected chain of `base` under every partition, engine and seed.
/// Throws ConfigError when `base` is not a dense chain or a partition does not cover its layers.
std::vector<SplitRow> split_bench(const ModelConfig& base, const std::vector<std::vector<std::size_t>>& splits,
                                  const std::vector<Engine>& engines, const std::vector<std::uint64_t>& seeds,
                                  const Datasets& data, const TrainOptions& options);

/// "split,engine,seed,val_top1,val_top5,seconds" followed by one line per row.
std::string split_table_csv(const std::vector<SplitRow>& rows);
std::string split_table_json(const std::vector<SplitRow>& rows);

std::string split_label(const std::vector<std::size_t>& split);
/// Parses "2-2-2" or "2,2,2". Throws ConfigError.
std::vector<std::size_t> parse_split(const std::string& text);

}  // namespace ffebm
