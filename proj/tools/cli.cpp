#include "cli.hpp"

#include "ffebm/checkpoint.hpp"
#include "ffebm/diagnostics.hpp"
#include "ffebm/error.hpp"
#include "ffebm/parallel.hpp"
#include "ffebm/train.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <fstream>
#include <numeric>
#include <optional>
#include <ostream>

namespace ffebm::cli {

namespace {

struct Flags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> engine;
    std::optional<double> beta;
    std::optional<std::uint32_t> t_free;
    std::optional<std::uint32_t> t_nudge;
    std::optional<std::uint32_t> threads;
    std::string out;
    std::optional<std::string> format;
    std::string checkpoint;
};

ModelConfig resolved_config(const Flags& f) {
    ModelConfig c = load_config(f.config);
    if (f.seed) c.seed = *f.seed;
    if (f.engine) c.train.engine = *f.engine;
    if (f.beta) c.beta = *f.beta;
    if (f.t_free) c.t_free = *f.t_free;
    if (f.t_nudge) c.t_nudge = *f.t_nudge;
    return c;
}

TrainOptions resolved_options(const ModelConfig& c, const Flags& f) {
    TrainOptions o = train_options(c);
    o.engine.threads = f.threads ? *f.threads : threads_from_env(1);
    return o;
}

ReportFormat resolved_format(const Flags& f, ReportFormat fallback) {
    if (f.format) return parse_report_format(*f.format);
    auto ends_with = [&](const char* ext) {
        const std::string e(ext);
        return f.out.size() >= e.size() && f.out.compare(f.out.size() - e.size(), e.size(), e) == 0;
    };
    if (ends_with(".json")) return ReportFormat::json;
    if (ends_with(".csv")) return ReportFormat::csv;
    return fallback;
}

void deliver(const Flags& f, const std::string& text, std::ostream& out) {
    if (f.out.empty()) {
        out << text;
        return;
    }
    std::ofstream file(f.out, std::ios::binary | std::ios::trunc);
    if (!file) throw IoError("cannot write '" + f.out + "'");
    file << text;
    if (!file) throw IoError("failed writing '" + f.out + "'");
}

std::vector<std::size_t> head_indices(const Dataset& d, std::size_t n) {
    std::vector<std::size_t> idx(std::min(n, d.size()));
    std::iota(idx.begin(), idx.end(), 0);
    if (idx.empty()) throw DataError("the training set is empty");
    return idx;
}

int cmd_train(const Flags& f, std::ostream& out) {
    const ModelConfig c = resolved_config(f);
    TrainOptions o = resolved_options(c, f);
    o.metrics_path = f.out;
    o.checkpoint_path = f.checkpoint;
    const Datasets data = load_datasets(c);
    Model model = build_model(c);
    for (const auto& m : train(model, data.train, data.val, o)) {
        out << "epoch " << m.epoch << " lr " << m.lr << " train_loss " << m.train_loss;
        if (m.validated) out << " val_top1 " << m.val.top1 << " val_top5 " << m.val.top5;
        out << '\n';
    }
    return 0;
}

int cmd_gradcheck(const Flags& f, std::ostream& out) {
    const ModelConfig c = resolved_config(f);
    const TrainOptions o = resolved_options(c, f);
    const Datasets data = load_datasets(c);
    const Model model = build_model(c);
    const auto idx = head_indices(data.train, c.diagnostics.batch);
    const Tensor x = data.train.batch(idx, model.input_shape);
    const Labels y = data.train.batch_labels(idx);
    const GradientRun run = compute_gradients(model, x, y, o.engine, Mode::eval);
    const GradientSet fd =
        finite_difference_gradients(model, x, y, c.diagnostics.fd_eps, {}, o.engine.free_phase(), Mode::eval);
    const CosineReport report = cosine_report(run.grads, fd);
    deliver(f, resolved_format(f, ReportFormat::json) == ReportFormat::csv ? cosine_to_csv(report)
                                                                            : cosine_to_json(report),
            out);
    return 0;
}

int cmd_gdu(const Flags& f, std::ostream& out) {
    const ModelConfig c = resolved_config(f);
    const TrainOptions o = resolved_options(c, f);
    const Datasets data = load_datasets(c);
    const Model model = build_model(c);
    const auto idx = head_indices(data.train, c.diagnostics.batch);
    const GduTrace trace =
        gdu_traces(model, data.train.batch(idx, model.input_shape), data.train.batch_labels(idx), o.engine,
                   default_tracked_entries(model, c.diagnostics.tracked_per_tensor, c.diagnostics.tracked_seed));
    deliver(f, resolved_format(f, ReportFormat::csv) == ReportFormat::csv ? trace_to_csv(trace) : trace_to_json(trace),
            out);
    return 0;
}

int cmd_split_bench(const Flags& f, std::ostream& out) {
    const ModelConfig c = resolved_config(f);
    const TrainOptions o = resolved_options(c, f);
    if (c.split_bench.splits.empty()) throw ConfigError("config.split_bench.splits lists no partitions");
    std::vector<Engine> engines;
    if (f.engine) {
        engines.push_back(parse_engine(*f.engine));
    } else {
        for (const auto& e : c.split_bench.engines) engines.push_back(parse_engine(e));
    }
    const std::vector<std::uint64_t> seeds = f.seed ? std::vector<std::uint64_t>{*f.seed} : c.split_bench.seeds;
    const auto rows = split_bench(c, c.split_bench.splits, engines, seeds, load_datasets(c), o);
    deliver(f, resolved_format(f, ReportFormat::csv) == ReportFormat::csv ? split_table_csv(rows)
                                                                           : split_table_json(rows),
            out);
    return 0;
}

int cmd_eval(const Flags& f, std::ostream& out) {
    if (f.checkpoint.empty()) throw UsageError("eval needs --checkpoint");
    const ModelConfig c = resolved_config(f);
    const TrainOptions o = resolved_options(c, f);
    Model model = build_model(c);
    model.load(load_checkpoint(f.checkpoint));
    const Accuracy a = evaluate(model, load_datasets(c).val, o.engine.free_phase());
    nlohmann::ordered_json j{{"val_top1", a.top1}, {"val_top5", a.top5}};
    const bool csv = resolved_format(f, ReportFormat::json) == ReportFormat::csv;
    deliver(f, csv ? "val_top1,val_top5\n" + std::to_string(a.top1) + "," + std::to_string(a.top5) + "\n"
                   : j.dump(2) + "\n",
            out);
    return 0;
}

void report_error(std::ostream& err, const char* kind, const std::string& message) {
    err << nlohmann::json{{"error", kind}, {"message", message}}.dump() << '\n';
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Feedforward-tied energy-based models: training and gradient diagnostics", "ffebm"};
    app.fallthrough();
    app.require_subcommand(1);

    Flags f;
    app.add_option("--config", f.config, "Model/experiment config (JSON)")->required()->check(CLI::ExistingFile);
    app.add_option("--seed", f.seed, "Override the config seed");
    app.add_option("--engine", f.engine, "Gradient engine")->check(CLI::IsMember({"ep", "ep-explicit", "id"}));
    app.add_option("--beta", f.beta, "Nudging strength");
    app.add_option("--t-free", f.t_free, "Free-phase iterations per block");
    app.add_option("--t-nudge", f.t_nudge, "Nudged-phase iterations per block");
    app.add_option("--threads", f.threads, "Worker threads (default: FFEBM_THREADS or 1)")
        ->check(CLI::PositiveNumber);
    app.add_option("--out", f.out, "Output path (metrics log for train, report otherwise; default stdout)");
    app.add_option("--format", f.format, "Report format")->check(CLI::IsMember({"csv", "json"}));
    app.add_option("--checkpoint", f.checkpoint, "Checkpoint written by train, read by eval");

    auto* train_cmd = app.add_subcommand("train", "Train a model and log per-epoch metrics");
    auto* gradcheck_cmd = app.add_subcommand("gradcheck", "Compare an engine against finite differences");
    auto* gdu_cmd = app.add_subcommand("gdu", "Trace truncated EP and ID gradients through time");
    auto* split_cmd = app.add_subcommand("split-bench", "Retrain a chain under several block partitions");
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on the validation set");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        report_error(err, "usage", e.what());
        err << app.help();
        return 1;
    }

    try {
        if (*train_cmd) return cmd_train(f, out);
        if (*gradcheck_cmd) return cmd_gradcheck(f, out);
        if (*gdu_cmd) return cmd_gdu(f, out);
        if (*split_cmd) return cmd_split_bench(f, out);
        if (*eval_cmd) return cmd_eval(f, out);
    } catch (const DivergenceError& e) {
        report_error(err, "divergence", e.what());
        return 2;
    } catch (const ConfigError& e) {
        report_error(err, "config", e.what());
    } catch (const DataError& e) {
        report_error(err, "data", e.what());
    } catch (const FormatError& e) {
        report_error(err, "format", e.what());
    } catch (const UsageError& e) {
        report_error(err, "usage", e.what());
    } catch (const Error& e) {
        report_error(err, "error", e.what());
    } catch (const std::exception& e) {
        report_error(err, "internal", e.what());
    }
    return 1;
}

}  // namespace ffebm::cli
