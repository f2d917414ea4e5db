#include "cli.hpp"

#include "ffebm/diagnostics.hpp"
#include "ffebm/train.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace ffebm;

namespace {

struct Result {
    int code;
    std::string out;
    std::string err;
};

Result run_cli(std::vector<std::string> args) {
    args.insert(args.begin(), "ffebm");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

std::filesystem::path scratch() {
    auto dir = std::filesystem::temp_directory_path() / "ffebm_cli_test";
    std::filesystem::create_directories(dir);
    return dir;
}

std::string write_config(const std::string& name, const std::string& text) {
    const auto path = scratch() / name;
    std::ofstream(path) << text;
    return path.string();
}

const char* kToy = R"({
  "name": "cli_toy",
  "input_shape": [5],
  "num_classes": 3,
  "init": {"coupling": 0.2, "feedforward": 0.1, "readout": 1.0, "bias": 0.5},
  "seed": 2,
  "t_free": 120,
  "t_nudge": 60,
  "beta": 0.01,
  "chain": {"widths": [6, 6, 5], "split": [2, 1]},
  "data": {"source": "synthetic_blobs", "synthetic_train": 40, "synthetic_val": 20},
  "train": {"epochs": 2, "batch_size": 8},
  "diagnostics": {"batch": 4, "tracked_per_tensor": 2}
})";

std::string slurp(const std::string& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

}  // namespace

TEST(Cli, HelpMatchesGolden) {
    const Result r = run_cli({"--help"});
    EXPECT_EQ(r.code, 0);
    EXPECT_EQ(r.out, slurp(FFEBM_GOLDEN_DIR "/help.txt"));
}

TEST(Cli, UnknownFlagIsUsageError) {
    const Result r = run_cli({"--config", write_config("toy.json", kToy), "--colour", "red", "train"});
    EXPECT_EQ(r.code, 1);
    EXPECT_EQ(r.err.rfind("{\"error\":\"usage\"", 0), 0u) << r.err;
}

TEST(Cli, MissingSubcommandOrConfigIsUsageError) {
    EXPECT_EQ(run_cli({"--config", write_config("toy.json", kToy)}).code, 1);
    EXPECT_EQ(run_cli({"train"}).code, 1);
    EXPECT_EQ(run_cli({"--config", write_config("toy.json", kToy), "--engine", "sgd", "train"}).code, 1);
}

TEST(Cli, GradcheckEqualsDirectLibraryCall) {
    const std::string cfg = write_config("toy.json", kToy);
    const Result r = run_cli({"--config", cfg, "--engine", "id", "gradcheck"});
    ASSERT_EQ(r.code, 0) << r.err;

    const ModelConfig c = load_config(cfg);
    TrainOptions o = train_options(c);
    o.engine.engine = Engine::id;
    const Datasets data = load_datasets(c);
    const Model model = build_model(c);
    const std::vector<std::size_t> idx{0, 1, 2, 3};
    const Tensor x = data.train.batch(idx, model.input_shape);
    const Labels y = data.train.batch_labels(idx);
    const GradientRun run = compute_gradients(model, x, y, o.engine, Mode::eval);
    const GradientSet fd = finite_difference_gradients(model, x, y, 1e-5, {}, o.engine.free_phase());
    EXPECT_EQ(r.out, cosine_to_json(cosine_report(run.grads, fd)));
}

TEST(Cli, GduWritesCsvReport) {
    const std::string cfg = write_config("toy.json", kToy);
    const std::string out = (scratch() / "trace.csv").string();
    const Result r = run_cli({"--config", cfg, "--t-nudge", "8", "--out", out, "gdu"});
    ASSERT_EQ(r.code, 0) << r.err;
    const GduTrace t = trace_from_csv(slurp(out));
    EXPECT_EQ(t.total_steps, 16u);
    EXPECT_FALSE(t.series.empty());
}

TEST(Cli, TrainThenEvalCheckpoint) {
    const std::string cfg = write_config("toy.json", kToy);
    const std::string metrics = (scratch() / "m.jsonl").string(), ckpt = (scratch() / "m.ckpt").string();
    Result r = run_cli({"--config", cfg, "--t-free", "30", "--t-nudge", "10", "--beta", "0.1", "--out", metrics,
                        "--checkpoint", ckpt, "train"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("epoch 2"), std::string::npos);
    r = run_cli({"--config", cfg, "--t-free", "30", "--checkpoint", ckpt, "--format", "json", "eval"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("val_top1"), std::string::npos);
    EXPECT_EQ(run_cli({"--config", cfg, "eval"}).code, 1);
}

TEST(Cli, ConfigErrorsExitWithOne) {
    const Result r = run_cli({"--config", write_config("bad.json", R"({"input_shape": [3]})"), "gradcheck"});
    EXPECT_EQ(r.code, 1);
    EXPECT_EQ(r.err.rfind("{\"error\":\"config\"", 0), 0u) << r.err;
}

TEST(Cli, DivergenceExitsWithTwo) {
    const std::string cfg = write_config("huge.json", R"({
      "input_shape": [5], "num_classes": 3,
      "init": {"coupling": 1e20, "feedforward": 1e20, "readout": 1.0},
      "chain": {"widths": [6, 6], "split": [2]},
      "data": {"source": "synthetic_blobs", "synthetic_train": 16, "synthetic_val": 8},
      "train": {"epochs": 1, "batch_size": 8}
    })");
    const Result r = run_cli({"--config", cfg, "train"});
    EXPECT_EQ(r.code, 2);
    EXPECT_EQ(r.err.rfind("{\"error\":\"divergence\"", 0), 0u) << r.err;
}
