#include "ffebm/config.hpp"

#include "ffebm/error.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace ffebm {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    for (const auto& [key, _] : j.items()) {
        if (!allowed.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
    }
}

template <class T>
T get(const json& j, const char* key, const std::string& where) {
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(where + "." + key + ": " + e.what());
    }
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& where) {
    if (j.contains(key)) out = get<T>(j, key, where);
}

void read_count(const json& j, const char* key, std::size_t& out, const std::string& where) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    if (!v.is_number_unsigned()) throw ConfigError(where + "." + key + ": expected a non-negative integer");
    out = v.get<std::size_t>();
}

Shape read_shape(const json& j, const std::string& where) {
    if (j.is_number_unsigned()) return {j.get<std::size_t>()};
    if (!j.is_array() || j.empty()) throw ConfigError(where + ": expected a shape (integer or non-empty array)");
    Shape s;
    for (const auto& d : j) {
        if (!d.is_number_unsigned() || d.get<std::size_t>() == 0) {
            throw ConfigError(where + ": shape entries must be positive integers");
        }
        s.push_back(d.get<std::size_t>());
    }
    return s;
}

CouplingSpec read_coupling(const json& j, const std::string& where) {
    CouplingSpec c;
    std::string kind;
    if (j.is_string()) {
        kind = j.get<std::string>();
    } else if (j.is_object()) {
        reject_unknown(j, {"kind", "pool"}, where);
        kind = get<std::string>(j, "kind", where);
        read(j, "pool", c.pool, where);
    } else {
        throw ConfigError(where + ": expected a coupling name or object");
    }
    if (kind == "dense") {
        c.kind = CouplingKind::dense;
    } else if (kind == "conv") {
        c.kind = CouplingKind::conv;
    } else if (kind == "conv_pool") {
        c.kind = CouplingKind::conv;
        c.pool = true;
    } else {
        throw ConfigError(where + ": unknown coupling kind '" + kind + "'");
    }
    return c;
}

FeedforwardSpec read_ff(const json& j, const std::string& where) {
    reject_unknown(j, {"kind", "kernel", "stride", "pad", "pool", "batchnorm"}, where);
    FeedforwardSpec f;
    const std::string kind = j.contains("kind") ? get<std::string>(j, "kind", where) : "linear";
    if (kind == "linear") {
        f.kind = FeedforwardKind::linear;
    } else if (kind == "conv_pool_bn" || kind == "conv") {
        f.kind = FeedforwardKind::conv_pool_bn;
    } else {
        throw ConfigError(where + ".kind: unknown feedforward kind '" + kind + "'");
    }
    read_count(j, "kernel", f.kernel, where);
    read_count(j, "stride", f.stride, where);
    read_count(j, "pad", f.pad, where);
    read(j, "pool", f.pool, where);
    read(j, "batchnorm", f.batchnorm, where);
    if (f.kernel == 0 || f.stride == 0) throw ConfigError(where + ": kernel and stride must be positive");
    return f;
}

EnergyBlockSpec read_eb(const json& j, const std::string& where) {
    reject_unknown(j, {"layers", "couplings"}, where);
    EnergyBlockSpec e;
    if (!j.contains("layers") || !j.at("layers").is_array() || j.at("layers").empty()) {
        throw ConfigError(where + ".layers: an energy block needs at least one layer");
    }
    for (std::size_t l = 0; l < j.at("layers").size(); ++l) {
        e.layers.push_back(read_shape(j.at("layers")[l], where + ".layers[" + std::to_string(l) + "]"));
    }
    if (j.contains("couplings")) {
        const auto& cs = j.at("couplings");
        if (!cs.is_array()) throw ConfigError(where + ".couplings: expected an array");
        for (std::size_t i = 0; i < cs.size(); ++i) {
            e.couplings.push_back(read_coupling(cs[i], where + ".couplings[" + std::to_string(i) + "]"));
        }
        if (e.couplings.size() + 1 != e.layers.size()) {
            throw ConfigError(where + ": " + std::to_string(e.layers.size()) + " layers need " +
                              std::to_string(e.layers.size() - 1) + " couplings");
        }
    } else {
        for (std::size_t l = 0; l + 1 < e.layers.size(); ++l) {
            const bool spatial = e.layers[l].size() == 3 && e.layers[l + 1].size() == 3;
            e.couplings.push_back({spatial ? CouplingKind::conv : CouplingKind::dense, false});
        }
    }
    return e;
}

std::vector<std::size_t> read_counts(const json& j, const std::string& where) {
    if (!j.is_array() || j.empty()) throw ConfigError(where + ": expected a non-empty array of positive integers");
    std::vector<std::size_t> out;
    for (const auto& v : j) {
        if (!v.is_number_unsigned() || v.get<std::size_t>() == 0) {
            throw ConfigError(where + ": entries must be positive integers");
        }
        out.push_back(v.get<std::size_t>());
    }
    return out;
}

json shape_json(const Shape& s) { return json(s); }

}  // namespace

std::size_t ModelConfig::total_layers() const {
    std::size_t n = 0;
    for (const auto& b : blocks) n += b.eb.layers.size();
    return n;
}

std::vector<BlockSpec> chain_blocks(const std::vector<std::size_t>& widths, const std::vector<std::size_t>& split,
                                    bool batchnorm) {
    const std::size_t total = std::accumulate(split.begin(), split.end(), std::size_t{0});
    if (total != widths.size()) {
        throw ConfigError("split covers " + std::to_string(total) + " layers but the chain has " +
                          std::to_string(widths.size()));
    }
    std::vector<BlockSpec> blocks;
    std::size_t next = 0;
    for (std::size_t size : split) {
        if (size == 0) throw ConfigError("split entries must be positive");
        BlockSpec b;
        b.ff.kind = FeedforwardKind::linear;
        b.ff.batchnorm = batchnorm;
        for (std::size_t i = 0; i < size; ++i) b.eb.layers.push_back({widths[next + i]});
        b.eb.couplings.assign(size - 1, CouplingSpec{});
        next += size;
        blocks.push_back(std::move(b));
    }
    return blocks;
}

ModelConfig parse_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    reject_unknown(j,
                   {"name", "input_shape", "num_classes", "activation", "bias", "init", "seed", "t_free", "t_nudge",
                    "beta", "residual_tolerance", "schedule", "blocks", "chain", "data", "train", "split_bench",
                    "diagnostics", "description"},
                   "config");

    ModelConfig c;
    read(j, "name", c.name, "config");
    if (!j.contains("input_shape")) throw ConfigError("config.input_shape is required");
    c.input_shape = read_shape(j.at("input_shape"), "config.input_shape");
    read_count(j, "num_classes", c.num_classes, "config");
    if (c.num_classes < 2) throw ConfigError("config.num_classes must be at least 2");
    if (j.contains("activation")) c.activation = parse_activation(get<std::string>(j, "activation", "config"));
    read(j, "bias", c.bias, "config");
    if (j.contains("init")) {
        const auto& init = j.at("init");
        if (init.is_number()) {
            c.init.coupling = c.init.feedforward = c.init.readout = init.get<Scalar>();
        } else {
            reject_unknown(init, {"coupling", "feedforward", "readout", "bias"}, "config.init");
            read(init, "coupling", c.init.coupling, "config.init");
            read(init, "feedforward", c.init.feedforward, "config.init");
            read(init, "readout", c.init.readout, "config.init");
            read(init, "bias", c.init.bias, "config.init");
        }
        if (!(c.init.coupling > 0) || !(c.init.feedforward > 0) || !(c.init.readout > 0)) {
            throw ConfigError("config.init: variances must be positive");
        }
    }
    if (j.contains("seed")) {
        if (!j.at("seed").is_number_unsigned()) throw ConfigError("config.seed: expected a non-negative integer");
        c.seed = j.at("seed").get<std::uint64_t>();
    }
    read_count(j, "t_free", c.t_free, "config");
    read_count(j, "t_nudge", c.t_nudge, "config");
    read(j, "beta", c.beta, "config");
    read(j, "residual_tolerance", c.residual_tolerance, "config");
    if (!(c.residual_tolerance > 0)) throw ConfigError("config.residual_tolerance must be positive");
    if (j.contains("schedule")) c.schedule = parse_schedule(get<std::string>(j, "schedule", "config"));

    if (j.contains("blocks") == j.contains("chain")) {
        throw ConfigError("config: give exactly one of 'blocks' or 'chain'");
    }
    if (j.contains("blocks")) {
        const auto& bs = j.at("blocks");
        if (!bs.is_array() || bs.empty()) throw ConfigError("config.blocks: at least one block is required");
        for (std::size_t k = 0; k < bs.size(); ++k) {
            const std::string where = "config.blocks[" + std::to_string(k) + "]";
            reject_unknown(bs[k], {"ff", "eb"}, where);
            BlockSpec b;
            if (bs[k].contains("ff")) b.ff = read_ff(bs[k].at("ff"), where + ".ff");
            if (!bs[k].contains("eb")) throw ConfigError(where + ".eb is required");
            b.eb = read_eb(bs[k].at("eb"), where + ".eb");
            c.blocks.push_back(std::move(b));
        }
    } else {
        const auto& ch = j.at("chain");
        reject_unknown(ch, {"widths", "split", "batchnorm"}, "config.chain");
        if (!ch.contains("widths") || !ch.contains("split")) {
            throw ConfigError("config.chain needs 'widths' and 'split'");
        }
        bool bn = false;
        read(ch, "batchnorm", bn, "config.chain");
        c.blocks = chain_blocks(read_counts(ch.at("widths"), "config.chain.widths"),
                                read_counts(ch.at("split"), "config.chain.split"), bn);
    }

    if (j.contains("data")) {
        const auto& d = j.at("data");
        const std::string w = "config.data";
        reject_unknown(d,
                       {"source", "root", "train_limit", "val_limit", "hflip_prob", "crop_pad", "synthetic_train",
                        "synthetic_val", "synthetic_separation"},
                       w);
        read(d, "source", c.data.source, w);
        read(d, "root", c.data.root, w);
        read_count(d, "train_limit", c.data.train_limit, w);
        read_count(d, "val_limit", c.data.val_limit, w);
        read(d, "hflip_prob", c.data.hflip_prob, w);
        read_count(d, "crop_pad", c.data.crop_pad, w);
        read_count(d, "synthetic_train", c.data.synthetic_train, w);
        read_count(d, "synthetic_val", c.data.synthetic_val, w);
        read(d, "synthetic_separation", c.data.synthetic_separation, w);
        if (c.data.source != "mnist_idx" && c.data.source != "cifar10_binary" && c.data.source != "synthetic_blobs") {
            throw ConfigError(w + ".source: unknown dataset '" + c.data.source + "'");
        }
    }
    if (j.contains("train")) {
        const auto& t = j.at("train");
        const std::string w = "config.train";
        reject_unknown(t, {"epochs", "batch_size", "lr", "lr_min", "weight_decay", "engine", "checkpoint_every",
                           "validate_every"},
                      w);
        read_count(t, "epochs", c.train.epochs, w);
        read_count(t, "batch_size", c.train.batch_size, w);
        read(t, "lr", c.train.lr, w);
        read(t, "lr_min", c.train.lr_min, w);
        read(t, "weight_decay", c.train.weight_decay, w);
        read(t, "engine", c.train.engine, w);
        read_count(t, "checkpoint_every", c.train.checkpoint_every, w);
        read_count(t, "validate_every", c.train.validate_every, w);
        if (c.train.epochs == 0) throw ConfigError(w + ".epochs must be at least 1");
        if (c.train.batch_size < 2) throw ConfigError(w + ".batch_size must be at least 2");
        if (c.train.engine != "ep" && c.train.engine != "ep-explicit" && c.train.engine != "id") {
            throw ConfigError(w + ".engine: expected ep, ep-explicit or id");
        }
    }
    if (j.contains("split_bench")) {
        const auto& sb = j.at("split_bench");
        const std::string w = "config.split_bench";
        reject_unknown(sb, {"splits", "engines", "seeds"}, w);
        if (sb.contains("splits")) {
            if (!sb.at("splits").is_array()) throw ConfigError(w + ".splits: expected an array of partitions");
            for (const auto& p : sb.at("splits")) c.split_bench.splits.push_back(read_counts(p, w + ".splits"));
        }
        read(sb, "engines", c.split_bench.engines, w);
        for (const auto& e : c.split_bench.engines) {
            if (e != "ep" && e != "ep-explicit" && e != "id") {
                throw ConfigError(w + ".engines: expected ep, ep-explicit or id, got '" + e + "'");
            }
        }
        if (sb.contains("seeds")) {
            c.split_bench.seeds.clear();
            if (!sb.at("seeds").is_array()) throw ConfigError(w + ".seeds: expected an array");
            for (const auto& v : sb.at("seeds")) {
                if (!v.is_number_unsigned()) throw ConfigError(w + ".seeds: expected non-negative integers");
                c.split_bench.seeds.push_back(v.get<std::uint64_t>());
            }
        }
    }
    if (j.contains("diagnostics")) {
        const auto& d = j.at("diagnostics");
        const std::string w = "config.diagnostics";
        reject_unknown(d, {"batch", "tracked_per_tensor", "tracked_seed", "fd_eps"}, w);
        read_count(d, "batch", c.diagnostics.batch, w);
        read_count(d, "tracked_per_tensor", c.diagnostics.tracked_per_tensor, w);
        if (d.contains("tracked_seed")) {
            if (!d.at("tracked_seed").is_number_unsigned()) throw ConfigError(w + ".tracked_seed: expected an integer");
            c.diagnostics.tracked_seed = d.at("tracked_seed").get<std::uint64_t>();
        }
        read(d, "fd_eps", c.diagnostics.fd_eps, w);
        if (c.diagnostics.batch == 0) throw ConfigError(w + ".batch must be positive");
        if (!(c.diagnostics.fd_eps > 0)) throw ConfigError(w + ".fd_eps must be positive");
    }
    return c;
}

ModelConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string config_to_json(const ModelConfig& c) {
    json j;
    j["name"] = c.name;
    j["input_shape"] = shape_json(c.input_shape);
    j["num_classes"] = c.num_classes;
    j["activation"] = to_string(c.activation);
    j["bias"] = c.bias;
    j["init"] = {{"coupling", c.init.coupling},
                 {"feedforward", c.init.feedforward},
                 {"readout", c.init.readout},
                 {"bias", c.init.bias}};
    j["seed"] = c.seed;
    j["t_free"] = c.t_free;
    j["t_nudge"] = c.t_nudge;
    j["beta"] = c.beta;
    j["residual_tolerance"] = c.residual_tolerance;
    j["schedule"] = to_string(c.schedule);
    json blocks = json::array();
    for (const auto& b : c.blocks) {
        json ff = {{"kind", b.ff.kind == FeedforwardKind::linear ? "linear" : "conv_pool_bn"},
                   {"pool", b.ff.pool},
                   {"batchnorm", b.ff.batchnorm}};
        if (b.ff.kind == FeedforwardKind::conv_pool_bn) {
            ff["kernel"] = b.ff.kernel;
            ff["stride"] = b.ff.stride;
            ff["pad"] = b.ff.pad;
        }
        json layers = json::array();
        for (const auto& s : b.eb.layers) layers.push_back(shape_json(s));
        json couplings = json::array();
        for (const auto& cs : b.eb.couplings) {
            couplings.push_back({{"kind", cs.kind == CouplingKind::dense ? "dense" : "conv"}, {"pool", cs.pool}});
        }
        blocks.push_back({{"ff", ff}, {"eb", {{"layers", layers}, {"couplings", couplings}}}});
    }
    j["blocks"] = blocks;
    j["data"] = {{"source", c.data.source},
                 {"root", c.data.root},
                 {"train_limit", c.data.train_limit},
                 {"val_limit", c.data.val_limit},
                 {"hflip_prob", c.data.hflip_prob},
                 {"crop_pad", c.data.crop_pad},
                 {"synthetic_train", c.data.synthetic_train},
                 {"synthetic_val", c.data.synthetic_val},
                 {"synthetic_separation", c.data.synthetic_separation}};
    j["train"] = {{"epochs", c.train.epochs},
                  {"batch_size", c.train.batch_size},
                  {"lr", c.train.lr},
                  {"lr_min", c.train.lr_min},
                  {"weight_decay", c.train.weight_decay},
                  {"engine", c.train.engine},
                  {"checkpoint_every", c.train.checkpoint_every},
                  {"validate_every", c.train.validate_every}};
    j["split_bench"] = {{"splits", c.split_bench.splits},
                        {"engines", c.split_bench.engines},
                        {"seeds", c.split_bench.seeds}};
    j["diagnostics"] = {{"batch", c.diagnostics.batch},
                        {"tracked_per_tensor", c.diagnostics.tracked_per_tensor},
                        {"tracked_seed", c.diagnostics.tracked_seed},
                        {"fd_eps", c.diagnostics.fd_eps}};
    return j.dump(2);
}

}  // namespace ffebm
