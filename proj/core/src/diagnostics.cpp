#include "ffebm/diagnostics.hpp"

#include "ffebm/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace ffebm {

namespace {

std::string fmt(Scalar v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write report '" + path + "'");
    f << text;
    if (!f) throw IoError("failed writing report '" + path + "'");
}

}  // namespace

std::vector<TrackedEntry> default_tracked_entries(const Model& model, std::size_t per_tensor, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<TrackedEntry> out;
    auto pick = [&](const std::string& name, std::size_t block, std::size_t layer, const Tensor& t) {
        const std::size_t n = std::min(per_tensor, t.numel());
        std::set<std::size_t> chosen;
        std::uniform_int_distribution<std::size_t> dist(0, t.numel() - 1);
        while (chosen.size() < n) chosen.insert(dist(rng));
        for (std::size_t e : chosen) out.push_back({name, block + 1, layer, e});
    };
    for (std::size_t k = 0; k < model.num_blocks(); ++k) {
        pick(ff_weight_name(k), k, 0, model.ff[k].weight);
        for (std::size_t c = 0; c < model.eb[k].couplings.size(); ++c) {
            pick(coupling_name(k, c), k, c + 1, model.eb[k].couplings[c].weight);
        }
    }
    return out;
}

GduTrace gdu_traces(const Model& model, const Tensor& input, const Labels& labels, const EngineSettings& settings,
                    const std::vector<TrackedEntry>& tracked, Mode mode) {
    settings.validate();
    const std::size_t N = model.num_blocks();
    const std::size_t T = settings.t_nudge;
    for (const auto& e : tracked) {
        if (e.block == 0 || e.block > N) throw UsageError("tracked entry '" + e.param + "' names a missing block");
        const std::size_t k = e.block - 1;
        const Tensor* t = nullptr;
        if (e.layer == 0) {
            t = &model.ff[k].weight;
            if (e.param != ff_weight_name(k)) throw UsageError("tracked entry '" + e.param + "' has layer 0");
        } else {
            if (e.layer > model.eb[k].couplings.size() || e.param != coupling_name(k, e.layer - 1)) {
                throw UsageError("tracked entry '" + e.param + "' does not match its block and layer");
            }
            t = &model.eb[k].couplings[e.layer - 1].weight;
        }
        if (e.entry >= t->numel()) throw UsageError("tracked entry index out of range for '" + e.param + "'");
    }

    const InferenceRecord record = forward_inference(model, input, mode, settings.free_phase());
    const Scalar res = record_residual(model, record);
    if (!(res <= settings.residual_tolerance)) {
        throw PreconditionError("GDU traces need a converged free phase: residual " + std::to_string(res));
    }

    GduTrace trace;
    trace.steps_per_block = T;
    trace.total_steps = N * T;
    for (const auto& e : tracked) {
        trace.series.push_back({e, std::vector<Scalar>(N * T + 1, 0.0), std::vector<Scalar>(N * T + 1, 0.0)});
    }
    auto window_start = [&](std::size_t k) { return (N - 1 - k) * T; };

    auto sample = [&](std::size_t k, std::size_t t, bool ep, const HopfieldGrads& h, const Tensor& ff_weight) {
        for (auto& s : trace.series) {
            if (s.tracked.block != k + 1) continue;
            const Tensor& src = s.tracked.layer == 0 ? ff_weight : h.couplings[s.tracked.layer - 1];
            (ep ? s.ep : s.id)[window_start(k) + t] = src[s.tracked.entry];
        }
    };

    ep_gradients_implicit(model, record, labels, settings,
                          [&](std::size_t k, const std::vector<BlockState>& plus, const std::vector<BlockState>& minus) {
                              for (std::size_t t = 1; t <= plus.size(); ++t) {
                                  const BlockEstimate est = centered_block_estimate(
                                      model, record, k, plus[t - 1], minus[t - 1], settings.beta, false);
                                  sample(k, t, true, est.hopfield, est.feedforward.weight);
                              }
                          });
    id_gradients(model, record, labels, settings,
                 [&](std::size_t k, std::size_t step, const HopfieldGrads& g, const Tensor& gx,
                     const FeedforwardBlockParams& ff, const ForwardCache& cache) {
                     sample(k, step, false, g, ff_param_vjp(ff, cache, gx).weight);
                 });

    for (auto& s : trace.series) {
        const std::size_t end = window_start(s.tracked.block - 1) + T;
        for (std::size_t t = end + 1; t <= trace.total_steps; ++t) {
            s.ep[t] = s.ep[end];
            s.id[t] = s.id[end];
        }
    }
    return trace;
}

GduMatch gdu_match(const GduTrace& trace, Scalar tolerance) {
    GduMatch m;
    for (const auto& s : trace.series) {
        Scalar scale = 0, diff = 0;
        for (std::size_t t = 0; t < s.id.size(); ++t) {
            scale = std::max(scale, std::abs(s.id[t]));
            diff = std::max(diff, std::abs(s.ep[t] - s.id[t]));
        }
        const Scalar ratio = scale > 0 ? diff / scale : (diff > 0 ? INFINITY : 0);
        ++m.entries;
        if (ratio <= tolerance) ++m.matched;
        m.worst_ratio = std::max(m.worst_ratio, ratio);
    }
    return m;
}

CosineReport cosine_report(const GradientSet& a, const GradientSet& b) {
    if (a.size() != b.size()) throw UsageError("cosine_report: gradient sets have different keys");
    CosineReport out;
    for (const auto& [name, ta] : a) {
        auto it = b.find(name);
        if (it == b.end()) throw UsageError("cosine_report: '" + name + "' missing from the second set");
        const Tensor& tb = it->second;
        require_same_shape(ta, tb, "cosine_report");
        const Scalar na = l2_norm(ta), nb = l2_norm(tb);
        CosineEntry e;
        e.param = name;
        if (na == 0 || nb == 0) {
            e.cosine = (na == 0 && nb == 0) ? 1 : 0;
        } else {
            e.cosine = dot(ta, tb) / (na * nb);
        }
        const Scalar d = l2_norm(ta - tb);
        e.rel_l2 = nb > 0 ? d / nb : d;
        out.push_back(std::move(e));
    }
    return out;
}

ReportFormat parse_report_format(const std::string& name) {
    if (name == "csv") return ReportFormat::csv;
    if (name == "json") return ReportFormat::json;
    throw ConfigError("unknown report format '" + name + "' (expected csv or json)");
}

std::string trace_to_csv(const GduTrace& trace) {
    std::ostringstream os;
    os << kTraceCsvHeader << '\n';
    for (const auto& s : trace.series) {
        for (std::size_t t = 0; t < s.ep.size(); ++t) {
            os << s.tracked.block << ',' << s.tracked.layer << ',' << s.tracked.param << ',' << s.tracked.entry << ','
               << t << ',' << fmt(s.ep[t]) << ',' << fmt(s.id[t]) << '\n';
        }
    }
    return os.str();
}

std::string trace_to_json(const GduTrace& trace) {
    nlohmann::ordered_json j;
    j["steps_per_block"] = trace.steps_per_block;
    j["total_steps"] = trace.total_steps;
    auto series = nlohmann::ordered_json::array();
    for (const auto& s : trace.series) {
        nlohmann::ordered_json e;
        e["block"] = s.tracked.block;
        e["layer"] = s.tracked.layer;
        e["param_path"] = s.tracked.param;
        e["entry"] = s.tracked.entry;
        e["g_ep"] = s.ep;
        e["g_id"] = s.id;
        series.push_back(std::move(e));
    }
    j["series"] = std::move(series);
    return j.dump(2) + "\n";
}

std::string cosine_to_csv(const CosineReport& report) {
    std::ostringstream os;
    os << "param_path,cosine,rel_l2\n";
    for (const auto& e : report) os << e.param << ',' << fmt(e.cosine) << ',' << fmt(e.rel_l2) << '\n';
    return os.str();
}

std::string cosine_to_json(const CosineReport& report) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& e : report) {
        nlohmann::ordered_json o;
        o["param_path"] = e.param;
        o["cosine"] = e.cosine;
        o["rel_l2"] = e.rel_l2;
        arr.push_back(std::move(o));
    }
    nlohmann::ordered_json j;
    j["tensors"] = std::move(arr);
    return j.dump(2) + "\n";
}

GduTrace trace_from_csv(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    if (!std::getline(is, line) || line != kTraceCsvHeader) throw FormatError("trace CSV: unexpected header");
    GduTrace trace;
    std::map<std::pair<std::string, std::size_t>, std::size_t> index;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) f.push_back(cell);
        if (f.size() != 7) throw FormatError("trace CSV line " + std::to_string(lineno) + ": expected 7 fields");
        try {
            TrackedEntry e{f[2], std::stoul(f[0]), std::stoul(f[1]), std::stoul(f[3])};
            const std::size_t t = std::stoul(f[4]);
            const auto key = std::make_pair(e.param, e.entry);
            auto it = index.find(key);
            if (it == index.end()) {
                it = index.emplace(key, trace.series.size()).first;
                trace.series.push_back({e, {}, {}});
            }
            auto& s = trace.series[it->second];
            if (t != s.ep.size()) throw FormatError("trace CSV line " + std::to_string(lineno) + ": time out of order");
            s.ep.push_back(std::strtod(f[5].c_str(), nullptr));
            s.id.push_back(std::strtod(f[6].c_str(), nullptr));
        } catch (const std::logic_error&) {
            throw FormatError("trace CSV line " + std::to_string(lineno) + ": malformed number");
        }
    }
    if (!trace.series.empty()) trace.total_steps = trace.series.front().ep.size() - 1;
    return trace;
}

void emit_report(const GduTrace& trace, const std::string& path, ReportFormat format) {
    write_text(path, format == ReportFormat::csv ? trace_to_csv(trace) : trace_to_json(trace));
}

void emit_report(const CosineReport& report, const std::string& path, ReportFormat format) {
    write_text(path, format == ReportFormat::csv ? cosine_to_csv(report) : cosine_to_json(report));
}

}  // namespace ffebm
