#pragma once

#include "ffebm/gradients.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace ffebm {

/// A scalar weight followed through time. `layer` is the 1-based coupling index inside the
/// block, or 0 for the feedforward weight tying the block to its predecessor.
struct TrackedEntry {
    std::string param;
    std::size_t block = 0;  // 1-based
    std::size_t layer = 0;
    std::size_t entry = 0;  // flat index into the tensor
};

struct GduSeries {
    TrackedEntry tracked;
    std::vector<Scalar> ep;  // truncated EP estimate, t = 0..total_steps
    std::vector<Scalar> id;  // truncated ID estimate
};

/// Backward time runs over the blocks from last to first, steps_per_block each. A series is
/// zero before its block's window and holds its final value afterwards.
struct GduTrace {
    std::size_t steps_per_block = 0;
    std::size_t total_steps = 0;
    std::vector<GduSeries> series;
};

/// `per_tensor` random entries of every coupling and feedforward weight (readout excluded).
std::vector<TrackedEntry> default_tracked_entries(const Model& model, std::size_t per_tensor, std::uint64_t seed);

/// Runs the free phase, then ep_gradients_implicit and id_gradients with settings.t_nudge
/// steps per block, sampling the tracked entries after every step. Throws PreconditionError
/// when the free phase has not converged (residual above settings.residual_tolerance).
GduTrace gdu_traces(const Model& model, const Tensor& input, const Labels& labels, const EngineSettings& settings,
                    const std::vector<TrackedEntry>& tracked, Mode mode = Mode::eval);

struct GduMatch {
    std::size_t entries = 0;
    std::size_t matched = 0;  // max_t |ep - id| <= tolerance * max_t |id|
    Scalar worst_ratio = 0;   // largest max_t |ep - id| / max_t |id|
    Scalar fraction() const { return entries ? static_cast<Scalar>(matched) / static_cast<Scalar>(entries) : 1; }
};

GduMatch gdu_match(const GduTrace& trace, Scalar tolerance = 0.05);

struct CosineEntry {
    std::string param;
    Scalar cosine = 0;
    Scalar rel_l2 = 0;  // ||a - b|| / ||b||, or ||a - b|| when b is zero
};

using CosineReport = std::vector<CosineEntry>;

/// Per-tensor cosine similarity; a pair of zero tensors scores 1, a single zero tensor 0.
/// Throws UsageError when the key sets differ.
CosineReport cosine_report(const GradientSet& a, const GradientSet& b);

enum class ReportFormat { csv, json };
ReportFormat parse_report_format(const std::string& name);

std::string trace_to_csv(const GduTrace& trace);
std::string trace_to_json(const GduTrace& trace);
std::string cosine_to_csv(const CosineReport& report);
std::string cosine_to_json(const CosineReport& report);

/// Parses trace_to_csv output back into a trace. Throws FormatError.
GduTrace trace_from_csv(const std::string& text);

/// Writes the report; throws IoError when the path cannot be written.
void emit_report(const GduTrace& trace, const std::string& path, ReportFormat format);
void emit_report(const CosineReport& report, const std::string& path, ReportFormat format);

inline constexpr const char* kTraceCsvHeader = "block,layer,param_path,entry,t,g_ep,g_id";

}  // namespace ffebm
