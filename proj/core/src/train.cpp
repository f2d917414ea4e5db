#include "ffebm/train.hpp"

#include "ffebm/checkpoint.hpp"
#include "ffebm/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace ffebm {

namespace {

class JsonlWriter {
public:
    explicit JsonlWriter(const std::string& path) {
        if (path.empty()) return;
        file_.open(path, std::ios::binary | std::ios::trunc);
        if (!file_) throw IoError("cannot write '" + path + "'");
    }
    void write(const nlohmann::ordered_json& line) {
        if (!file_.is_open()) return;
        file_ << line.dump() << '\n';
        file_.flush();
        if (!file_) throw IoError("failed writing a metrics line");
    }

private:
    std::ofstream file_;
};

std::string fmt(Scalar v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

}  // namespace

Datasets load_datasets(const ModelConfig& config) {
    const DataSpec& d = config.data;
    Datasets out;
    if (d.source == "mnist_idx") {
        out.train = load_mnist_idx(d.root, "train");
        out.val = load_mnist_idx(d.root, "test");
    } else if (d.source == "cifar10_binary") {
        out.train = load_cifar10_binary(d.root, "train");
        out.val = load_cifar10_binary(d.root, "test");
    } else if (d.source == "synthetic_blobs") {
        const std::size_t dim = shape_numel(config.input_shape);
        // One draw of centers shared by both splits; the validation samples come after the training ones.
        Dataset all = synthetic_blobs(d.synthetic_train + d.synthetic_val, dim, config.num_classes,
                                      d.synthetic_separation, config.seed);
        all.sample_shape = config.input_shape;
        out.train = take(all, d.synthetic_train);
        out.val.sample_shape = all.sample_shape;
        out.val.num_classes = all.num_classes;
        out.val.values.assign(all.values.begin() + static_cast<std::ptrdiff_t>(d.synthetic_train * dim),
                              all.values.end());
        out.val.labels.assign(all.labels.begin() + static_cast<std::ptrdiff_t>(d.synthetic_train), all.labels.end());
    } else {
        throw ConfigError("unknown data source '" + d.source + "'");
    }
    out.train = take(out.train, d.train_limit);
    out.val = take(out.val, d.val_limit);
    if (out.train.sample_numel() != shape_numel(config.input_shape)) {
        throw ConfigError("data samples of shape " + shape_to_string(out.train.sample_shape) +
                          " do not fit the model input " + shape_to_string(config.input_shape));
    }
    if (out.train.num_classes > config.num_classes) {
        throw ConfigError("data has more classes than the readout");
    }
    return out;
}

TrainOptions train_options(const ModelConfig& config) {
    TrainOptions o;
    o.engine.engine = parse_engine(config.train.engine);
    o.engine.beta = config.beta;
    o.engine.t_free = config.t_free;
    o.engine.t_nudge = config.t_nudge;
    o.engine.schedule = config.schedule;
    o.engine.residual_tolerance = config.residual_tolerance;
    o.epochs = config.train.epochs;
    o.batch_size = config.train.batch_size;
    o.adam.lr = config.train.lr;
    o.adam.weight_decay = config.train.weight_decay;
    o.lr_min = config.train.lr_min;
    o.augment.hflip_prob = config.data.hflip_prob;
    o.augment.crop_pad = config.data.crop_pad;
    o.seed = config.seed;
    o.checkpoint_every = config.train.checkpoint_every;
    o.validate_every = config.train.validate_every;
    return o;
}

Accuracy accuracy_from_logits(const Tensor& logits, const Labels& labels) {
    if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
        throw DimensionError("accuracy_from_logits: logits " + shape_to_string(logits.shape()) + " vs " +
                             std::to_string(labels.size()) + " labels");
    }
    const std::size_t B = logits.dim(0), C = logits.dim(1);
    std::size_t top1 = 0, top5 = 0;
    for (std::size_t b = 0; b < B; ++b) {
        const Scalar* z = logits.raw() + b * C;
        const std::size_t y = labels[b];
        if (y >= C) throw DataError("label " + std::to_string(y) + " out of range");
        std::size_t rank = 0;
        for (std::size_t c = 0; c < C; ++c) {
            if (z[c] > z[y] || (z[c] == z[y] && c < y)) ++rank;
        }
        if (rank == 0) ++top1;
        if (rank < 5) ++top5;
    }
    if (B == 0) return {};
    return {100.0 * static_cast<Scalar>(top1) / static_cast<Scalar>(B),
            100.0 * static_cast<Scalar>(top5) / static_cast<Scalar>(B)};
}

Accuracy evaluate(const Model& model, const Dataset& data, const RelaxationSettings& free_phase,
                  std::size_t batch_size) {
    if (batch_size == 0) throw ConfigError("evaluate: batch size must be positive");
    std::size_t top1 = 0, top5 = 0;
    for (std::size_t start = 0; start < data.size(); start += batch_size) {
        std::vector<std::size_t> idx(std::min(batch_size, data.size() - start));
        std::iota(idx.begin(), idx.end(), start);
        const InferenceRecord r =
            forward_inference(model, data.batch(idx, model.input_shape), Mode::eval, free_phase);
        const Accuracy a = accuracy_from_logits(r.logits, data.batch_labels(idx));
        top1 += static_cast<std::size_t>(std::lround(a.top1 * static_cast<Scalar>(idx.size()) / 100.0));
        top5 += static_cast<std::size_t>(std::lround(a.top5 * static_cast<Scalar>(idx.size()) / 100.0));
    }
    if (data.size() == 0) return {};
    const Scalar n = static_cast<Scalar>(data.size());
    return {100.0 * static_cast<Scalar>(top1) / n, 100.0 * static_cast<Scalar>(top5) / n};
}

std::vector<EpochMetrics> train(Model& model, const Dataset& train_set, const Dataset& val_set,
                                const TrainOptions& options) {
    options.engine.validate();
    if (options.engine.engine == Engine::fd) throw ConfigError("training supports the ep, ep-explicit and id engines");
    if (options.batch_size == 0) throw ConfigError("batch size must be positive");
    if (train_set.size() == 0) throw DataError("empty training set");

    JsonlWriter metrics(options.metrics_path);
    JsonlWriter timing(options.metrics_path.empty() ? std::string{} : options.metrics_path + ".timing.jsonl");
    Rng rng(options.seed);
    AdamState adam;
    std::vector<EpochMetrics> history;
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        AdamSettings hp = options.adam;
        hp.lr = cosine_lr(epoch, options.epochs, options.adam.lr, options.lr_min);
        std::shuffle(order.begin(), order.end(), rng);

        Scalar loss_sum = 0;
        std::size_t seen = 0;
        for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
            const std::size_t n = std::min(options.batch_size, order.size() - start);
            // A singleton tail batch would give degenerate batch statistics.
            if (n < 2 && start > 0) break;
            const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                               order.begin() + static_cast<std::ptrdiff_t>(start + n));
            Tensor x = train_set.batch(idx, model.input_shape);
            if (options.augment.enabled()) x = augment(x, options.augment, rng);
            const Labels y = train_set.batch_labels(idx);
            GradientRun run = compute_gradients(model, x, y, options.engine, Mode::train);
            if (!std::isfinite(run.loss)) throw DivergenceError("training loss is not finite");
            update_running_stats(model, run.record);
            adam_step(model.tensor_refs(false), run.grads, adam, hp);
            loss_sum += run.loss * static_cast<Scalar>(n);
            seen += n;
        }

        EpochMetrics m;
        m.epoch = epoch + 1;
        m.lr = hp.lr;
        m.train_loss = seen ? loss_sum / static_cast<Scalar>(seen) : 0;
        const bool last = epoch + 1 == options.epochs;
        m.validated = last || (options.validate_every > 0 && (epoch + 1) % options.validate_every == 0);
        if (m.validated) m.val = evaluate(model, val_set, options.engine.free_phase());
        m.seconds = std::chrono::duration<Scalar>(std::chrono::steady_clock::now() - t0).count();
        history.push_back(m);

        nlohmann::ordered_json line;
        line["epoch"] = m.epoch;
        line["lr"] = m.lr;
        line["train_loss"] = m.train_loss;
        if (m.validated) {
            line["val_top1"] = m.val.top1;
            line["val_top5"] = m.val.top5;
        }
        metrics.write(line);
        timing.write({{"epoch", m.epoch}, {"seconds", m.seconds}});

        const bool cadence = options.checkpoint_every > 0 && (epoch + 1) % options.checkpoint_every == 0;
        if (!options.checkpoint_path.empty() && (last || cadence)) save_checkpoint(model.state(), options.checkpoint_path);
    }
    return history;
}

std::string split_label(const std::vector<std::size_t>& split) {
    std::string out;
    for (std::size_t i = 0; i < split.size(); ++i) {
        if (i) out += '-';
        out += std::to_string(split[i]);
    }
    return out;
}

std::vector<std::size_t> parse_split(const std::string& text) {
    std::vector<std::size_t> out;
    std::string cur;
    auto flush = [&] {
        if (cur.empty() || cur.find_first_not_of("0123456789") != std::string::npos) {
            throw ConfigError("malformed split '" + text + "'");
        }
        out.push_back(std::stoul(cur));
        if (out.back() == 0) throw ConfigError("split '" + text + "' has an empty block");
        cur.clear();
    };
    for (char ch : text) {
        if (ch == '-' || ch == ',') {
            flush();
        } else {
            cur += ch;
        }
    }
    flush();
    return out;
}

std::vector<SplitRow> split_bench(const ModelConfig& base, const std::vector<std::vector<std::size_t>>& splits,
                                  const std::vector<Engine>& engines, const std::vector<std::uint64_t>& seeds,
                                  const Datasets& data, const TrainOptions& options) {
    std::vector<std::size_t> widths;
    bool batchnorm = false;
    for (const auto& b : base.blocks) {
        if (b.ff.kind != FeedforwardKind::linear) throw ConfigError("split-bench needs a fully connected chain");
        batchnorm = batchnorm || b.ff.batchnorm;
        for (const auto& c : b.eb.couplings) {
            if (c.kind != CouplingKind::dense) throw ConfigError("split-bench needs dense couplings");
        }
        for (const auto& l : b.eb.layers) {
            if (l.size() != 1) throw ConfigError("split-bench needs flat layers");
            widths.push_back(l[0]);
        }
    }
    std::vector<std::vector<BlockSpec>> layouts;
    for (const auto& s : splits) layouts.push_back(chain_blocks(widths, s, batchnorm));

    std::vector<SplitRow> rows;
    for (std::size_t si = 0; si < splits.size(); ++si) {
        for (Engine e : engines) {
            for (std::uint64_t seed : seeds) {
                ModelConfig cfg = base;
                cfg.blocks = layouts[si];
                cfg.seed = seed;
                Model model = build_model(cfg);
                TrainOptions o = options;
                o.engine.engine = e;
                o.seed = seed;
                o.metrics_path.clear();
                o.checkpoint_path.clear();
                const auto t0 = std::chrono::steady_clock::now();
                const auto history = train(model, data.train, data.val, o);
                SplitRow row;
                row.split = split_label(splits[si]);
                row.engine = to_string(e);
                row.seed = seed;
                row.val = history.empty() ? evaluate(model, data.val, o.engine.free_phase()) : history.back().val;
                row.seconds = std::chrono::duration<Scalar>(std::chrono::steady_clock::now() - t0).count();
                rows.push_back(row);
            }
        }
    }
    return rows;
}

std::string split_table_csv(const std::vector<SplitRow>& rows) {
    std::ostringstream os;
    os << "split,engine,seed,val_top1,val_top5,seconds\n";
    for (const auto& r : rows) {
        os << r.split << ',' << r.engine << ',' << r.seed << ',' << fmt(r.val.top1) << ',' << fmt(r.val.top5) << ','
           << fmt(r.seconds) << '\n';
    }
    return os.str();
}

std::string split_table_json(const std::vector<SplitRow>& rows) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& r : rows) {
        arr.push_back({{"split", r.split},
                       {"engine", r.engine},
                       {"seed", r.seed},
                       {"val_top1", r.val.top1},
                       {"val_top5", r.val.top5},
                       {"seconds", r.seconds}});
    }
    return nlohmann::ordered_json{{"rows", arr}}.dump(2) + "\n";
}

}  // namespace ffebm
