#include "ffebm/model.hpp"

#include "ffebm/error.hpp"

#include <cmath>
#include <set>

namespace ffebm {

Tensor init_goe(const Shape& shape, Scalar variance, std::size_t fan_in, Rng& rng) {
    if (!(variance > 0)) throw ConfigError("init_goe: variance must be positive");
    if (fan_in == 0) throw ConfigError("init_goe: fan-in must be positive");
    Tensor t(shape);
    const Scalar sd = std::sqrt(variance / static_cast<Scalar>(fan_in));
    const bool square = shape.size() == 2 && shape[0] == shape[1];
    std::normal_distribution<Scalar> normal(0.0, 1.0);
    for (std::size_t i = 0; i < t.numel(); ++i) {
        const bool diagonal = square && (i / shape[1] == i % shape[1]);
        t[i] = normal(rng) * (diagonal ? sd * std::sqrt(Scalar{2}) : sd);
    }
    return t;
}

std::string ff_weight_name(std::size_t block) { return "block" + std::to_string(block + 1) + ".ff.weight"; }
std::string ff_bn_scale_name(std::size_t block) { return "block" + std::to_string(block + 1) + ".ff.bn_scale"; }
std::string ff_bn_shift_name(std::size_t block) { return "block" + std::to_string(block + 1) + ".ff.bn_shift"; }
std::string coupling_name(std::size_t block, std::size_t coupling) {
    return "block" + std::to_string(block + 1) + ".eb.coupling" + std::to_string(coupling + 1);
}
std::string bias_name(std::size_t block, std::size_t layer) {
    return "block" + std::to_string(block + 1) + ".eb.bias" + std::to_string(layer + 1);
}

namespace {

std::string running_mean_name(std::size_t block) { return "block" + std::to_string(block + 1) + ".ff.bn_running_mean"; }
std::string running_var_name(std::size_t block) { return "block" + std::to_string(block + 1) + ".ff.bn_running_var"; }

template <class ModelT, class Ptr>
std::vector<std::pair<std::string, Ptr>> collect(ModelT& m, bool buffers) {
    std::vector<std::pair<std::string, Ptr>> out;
    for (std::size_t k = 0; k < m.eb.size(); ++k) {
        auto& f = m.ff[k];
        out.emplace_back(ff_weight_name(k), &f.weight);
        if (f.batchnorm) {
            out.emplace_back(ff_bn_scale_name(k), &f.bn_scale);
            out.emplace_back(ff_bn_shift_name(k), &f.bn_shift);
            if (buffers) {
                out.emplace_back(running_mean_name(k), &f.running.mean);
                out.emplace_back(running_var_name(k), &f.running.var);
            }
        }
        auto& e = m.eb[k];
        for (std::size_t c = 0; c < e.couplings.size(); ++c) out.emplace_back(coupling_name(k, c), &e.couplings[c].weight);
        for (std::size_t l = 0; l < e.biases.size(); ++l) out.emplace_back(bias_name(k, l), &e.biases[l]);
    }
    out.emplace_back(kReadoutName, &m.readout.weight);
    return out;
}

std::string block_label(std::size_t k) { return "block " + std::to_string(k + 1); }

}  // namespace

std::vector<std::pair<std::string, Tensor*>> Model::tensor_refs(bool buffers) {
    return collect<Model, Tensor*>(*this, buffers);
}

std::vector<std::pair<std::string, const Tensor*>> Model::tensor_refs(bool buffers) const {
    return collect<const Model, const Tensor*>(*this, buffers);
}

TensorMap Model::parameters() const {
    TensorMap m;
    for (const auto& [name, t] : tensor_refs(false)) m.emplace(name, *t);
    return m;
}

TensorMap Model::state() const {
    TensorMap m;
    for (const auto& [name, t] : tensor_refs(true)) m.emplace(name, *t);
    return m;
}

void Model::load(const TensorMap& values) {
    const auto full = tensor_refs(true);
    const auto trainable = tensor_refs(false);
    const auto& refs = values.size() == full.size() ? full : trainable;
    if (values.size() != refs.size()) {
        throw UsageError("model load: " + std::to_string(values.size()) + " tensors given, model has " +
                         std::to_string(full.size()) + " (or " + std::to_string(trainable.size()) + " trainable)");
    }
    for (const auto& [name, t] : refs) {
        auto it = values.find(name);
        if (it == values.end()) throw UsageError("model load: missing tensor '" + name + "'");
        if (it->second.shape() != t->shape()) {
            throw DimensionError("model load: '" + name + "' has shape " + shape_to_string(it->second.shape()) +
                                 ", expected " + shape_to_string(t->shape()));
        }
    }
    for (auto& [name, t] : refs) *t = values.at(name);
}

Tensor& Model::tensor(const std::string& name) {
    for (auto& [n, t] : tensor_refs(true)) {
        if (n == name) return *t;
    }
    throw UsageError("unknown parameter '" + name + "'");
}

const Tensor& Model::tensor(const std::string& name) const {
    for (const auto& [n, t] : tensor_refs(true)) {
        if (n == name) return *t;
    }
    throw UsageError("unknown parameter '" + name + "'");
}

Model build_model(const ModelConfig& config) {
    if (config.blocks.empty()) throw ConfigError("model needs at least one energy block");
    if (config.input_shape.empty()) throw ConfigError("model input shape is empty");
    Model m;
    m.name = config.name;
    m.activation = config.activation;
    m.input_shape = config.input_shape;
    m.num_classes = config.num_classes;
    Rng rng(config.seed);

    Shape in_shape = config.input_shape;
    for (std::size_t k = 0; k < config.blocks.size(); ++k) {
        const auto& spec = config.blocks[k];
        const std::string from = k == 0 ? std::string("the input") : block_label(k - 1);
        if (spec.eb.layers.empty()) throw ConfigError(block_label(k) + ": energy block has no layers");
        const Shape& first = spec.eb.layers.front();

        FeedforwardBlockParams f;
        f.kind = spec.ff.kind;
        f.in_shape = in_shape;
        f.out_shape = first;
        f.pool = spec.ff.pool;
        f.batchnorm = spec.ff.batchnorm;
        if (f.kind == FeedforwardKind::linear) {
            if (f.pool) throw ConfigError(block_label(k) + ": linear feedforward blocks cannot pool");
            f.weight = init_goe({shape_numel(first), shape_numel(in_shape)}, config.init.feedforward,
                                shape_numel(in_shape), rng);
        } else {
            if (in_shape.size() != 3 || first.size() != 3) {
                throw ConfigError(block_label(k) + ": conv feedforward from " + from + " needs [C, H, W] shapes, got " +
                                  shape_to_string(in_shape) + " -> " + shape_to_string(first));
            }
            f.geometry = {spec.ff.stride, spec.ff.pad};
            const std::size_t kk = spec.ff.kernel;
            f.weight = init_goe({first[0], in_shape[0], kk, kk}, config.init.feedforward, in_shape[0] * kk * kk, rng);
        }
        if (f.batchnorm) {
            const std::size_t channels = first.front();
            f.bn_scale = Tensor::full({channels}, 1);
            f.bn_shift = Tensor({channels});
            f.running.mean = Tensor({channels});
            f.running.var = Tensor::full({channels}, 1);
        }
        try {
            f.validate();
        } catch (const DimensionError& e) {
            throw ConfigError("shape chain broken between " + from + " and " + block_label(k) + ": " + e.what());
        }

        HopfieldBlockParams h;
        h.layers = spec.eb.layers;
        if (spec.eb.couplings.size() + 1 != h.layers.size()) {
            throw ConfigError(block_label(k) + ": " + std::to_string(h.layers.size()) + " layers need " +
                              std::to_string(h.layers.size() - 1) + " couplings");
        }
        for (std::size_t l = 0; l + 1 < h.layers.size(); ++l) {
            const auto& cs = spec.eb.couplings[l];
            Coupling c;
            c.kind = cs.kind;
            c.pool = cs.pool;
            const Shape& src = h.layers[l];
            const Shape& dst = h.layers[l + 1];
            if (c.kind == CouplingKind::dense) {
                c.weight = init_goe({shape_numel(dst), shape_numel(src)}, config.init.coupling, shape_numel(src), rng);
            } else {
                if (src.size() != 3 || dst.size() != 3) {
                    throw ConfigError(block_label(k) + ": conv coupling " + std::to_string(l + 1) +
                                      " needs [C, H, W] layers");
                }
                c.weight = init_goe({dst[0], src[0], 3, 3}, config.init.coupling, src[0] * 9, rng);
            }
            h.couplings.push_back(std::move(c));
        }
        if (config.bias) {
            for (const auto& s : h.layers) h.biases.emplace_back(s, config.init.bias);
        }
        try {
            h.validate();
        } catch (const DimensionError& e) {
            throw ConfigError(block_label(k) + ": " + e.what());
        }

        in_shape = h.layers.back();
        m.ff.push_back(std::move(f));
        m.eb.push_back(std::move(h));
    }
    const std::size_t d = shape_numel(in_shape);
    m.readout.weight = init_goe({config.num_classes, d}, config.init.readout, d, rng);
    return m;
}

InferenceRecord forward_inference(const Model& model, const Tensor& input, Mode mode,
                                  const RelaxationSettings& free_phase) {
    if (input.rank() == 0 || Shape(input.shape().begin() + 1, input.shape().end()) != model.input_shape) {
        throw DimensionError("forward_inference: input " + shape_to_string(input.shape()) +
                             " does not match model input " + shape_to_string(model.input_shape));
    }
    RelaxationSettings settings = free_phase;
    settings.beta = 0;
    settings.init = StateInit::zeros;

    InferenceRecord r;
    r.mode = mode;
    r.input = input;
    const Tensor* in = &r.input;
    for (std::size_t k = 0; k < model.num_blocks(); ++k) {
        auto fwd = ff_forward(model.ff[k], *in, batchnorm_mode(mode));
        r.x.push_back(std::move(fwd.output));
        r.caches.push_back(std::move(fwd.cache));
        try {
            r.equilibria.push_back(relax(model.eb[k], r.x.back(), model.activation, settings));
        } catch (const DivergenceError& e) {
            throw DivergenceError(block_label(k) + " free phase: " + e.what(), static_cast<int>(k), e.step(), 0);
        }
        in = &block_output(r.equilibria.back());
    }
    r.logits = readout_logits(model.readout, *in);
    return r;
}

Scalar record_residual(const Model& model, const InferenceRecord& record) {
    Scalar r = 0;
    for (std::size_t k = 0; k < model.num_blocks(); ++k) {
        r = std::max(r, residual(model.eb[k], record.equilibria[k], record.x[k], model.activation));
    }
    return r;
}

void update_running_stats(Model& model, const InferenceRecord& record, Scalar momentum) {
    if (record.mode != Mode::train) return;
    for (std::size_t k = 0; k < model.num_blocks(); ++k) {
        if (model.ff[k].batchnorm) update_running_stats(model.ff[k].running, record.caches[k].bn, momentum);
    }
}

}  // namespace ffebm
