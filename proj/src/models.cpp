#include "gradfeat/models.hpp"

#include <cmath>
#include <random>

#include "gradfeat/checkpoint.hpp"
#include "gradfeat/error.hpp"
#include "gradfeat/ops.hpp"
#include "gradfeat/tape.hpp"

namespace gradfeat {

const char* to_string(ModelKind k) {
    switch (k) {
    case ModelKind::activation: return "activation";
    case ModelKind::gradient: return "gradient";
    case ModelKind::full: return "full";
    }
    return "?";
}

ModelKind model_kind_from_string(const std::string& s) {
    if (s == "activation") return ModelKind::activation;
    if (s == "gradient") return ModelKind::gradient;
    if (s == "full") return ModelKind::full;
    throw InputError("unknown model kind '" + s + "'");
}

LinearHead LinearHead::zeros(std::size_t d, std::size_t c) { return {Tensor({d, c}), Tensor({c})}; }

LinearHead LinearHead::random(std::size_t d, std::size_t c, std::uint64_t seed) {
    LinearHead h = zeros(d, c);
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> normal(0.0f, 1.0f);
    const float s = static_cast<float>(1.0 / std::sqrt(static_cast<double>(d)));
    for (auto& v : h.weight.values()) v = s * normal(rng);
    return h;
}

std::uint64_t LinearHead::checksum() const { return gradfeat::checksum(weight) * 31 + gradfeat::checksum(bias); }

Tensor activation_logits(const Tensor& weight, const Tensor& features) {
    return ops::dense(features, weight, nullptr);
}

Tensor activation_logits(const LinearHead& head, const Tensor& features) {
    return ops::dense(features, head.weight, &head.bias);
}

FullModel make_model(ModelKind kind, std::shared_ptr<const Backbone> features_net,
                     std::shared_ptr<const Backbone> gradient_net, const std::optional<LinearHead>& w1_init,
                     const Tensor& omega, std::size_t num_classes) {
    FullModel m;
    m.kind = kind;
    if (kind != ModelKind::gradient) {
        if (!features_net) throw InputError(std::string(to_string(kind)) + " model needs a feature network");
        const std::size_t d = features_net->def.feature_dim();
        m.w1 = w1_init ? *w1_init : LinearHead::zeros(d, num_classes);
        if (m.w1.weight.shape() != Shape{d, num_classes} || m.w1.bias.shape() != Shape{num_classes})
            throw DimensionError("w1 must be [" + std::to_string(d) + "," + std::to_string(num_classes) + "], got " +
                                 shape_str(m.w1.weight.shape()));
    }
    if (kind != ModelKind::activation) {
        if (!gradient_net) throw InputError(std::string(to_string(kind)) + " model needs a gradient network");
        const std::size_t d = gradient_net->def.feature_dim();
        if (omega.shape() != Shape{d, num_classes})
            throw DimensionError("omega must be [" + std::to_string(d) + "," + std::to_string(num_classes) +
                                 "], got " + shape_str(omega.shape()));
        m.omega = omega;
        m.w2 = TangentParams::zeros(gradient_net->def, gradient_net->params);
    }
    m.features_net = std::move(features_net);
    m.gradient_net = std::move(gradient_net);
    return m;
}

Tensor full_logits(const FullModel& model, const Tensor* features, const Tensor* jf) {
    if (model.kind == ModelKind::gradient) return head_jvp(model.omega, *jf);
    Tensor logits = activation_logits(model.w1, *features);
    if (model.kind == ModelKind::full) axpy(1.0f, head_jvp(model.omega, *jf), logits);
    return logits;
}

Tensor full_logits(const FullModel& model, const Tensor& x) {
    Tensor features;
    JvpResult jr;
    if (model.kind != ModelKind::activation) {
        const auto& g = *model.gradient_net;
        const Tensor z0 = compute_z0(g.def, g.params, x);
        jr = jvp_forward(g.def, g.params, model.w2, z0);
    }
    if (model.kind != ModelKind::gradient) {
        if (model.kind == ModelKind::full && model.features_net == model.gradient_net)
            features = jr.features;
        else
            features = forward_features(model.features_net->def, model.features_net->params, x).features;
    }
    return full_logits(model, &features, &jr.tangent);
}

namespace {

struct Cache {
    Tensor features; // activation features of the whole dataset
    Tensor z0;       // gradient-network boundary activations
};

Cache precompute(const FullModel& m, const Tensor& images) {
    Cache c;
    if (m.kind != ModelKind::gradient) c.features = compute_features(m.features_net->def, m.features_net->params, images);
    if (m.kind != ModelKind::activation) c.z0 = compute_z0(m.gradient_net->def, m.gradient_net->params, images);
    return c;
}

Tensor batch_logits(const FullModel& m, const Cache& c, std::span<const std::size_t> idx, Tensor* fb, Tensor* zb,
                    JvpResult* jr) {
    if (m.kind != ModelKind::gradient) *fb = c.features.gather_rows(idx);
    if (m.kind != ModelKind::activation) {
        *zb = c.z0.gather_rows(idx);
        *jr = jvp_forward(m.gradient_net->def, m.gradient_net->params, m.w2, *zb);
    }
    return full_logits(m, fb, &jr->tangent);
}

double cached_loss(const FullModel& m, const Cache& c, const Dataset& data) {
    const std::size_t n = data.size(), chunk = 256;
    double total = 0.0;
    for (std::size_t b = 0; b < n; b += chunk) {
        std::vector<std::size_t> idx;
        for (std::size_t i = b; i < std::min(n, b + chunk); ++i) idx.push_back(i);
        Tensor fb, zb;
        JvpResult jr;
        const Tensor logits = batch_logits(m, c, idx, &fb, &zb, &jr);
        std::vector<int> y;
        for (auto i : idx) y.push_back(data.labels[i]);
        total += ops::softmax_cross_entropy(logits, y).loss * static_cast<double>(idx.size());
    }
    return total / static_cast<double>(n);
}

void check_loss(double loss, std::size_t iteration) {
    if (!std::isfinite(loss))
        throw TrainingError("loss became non-finite at iteration " + std::to_string(iteration));
}

} // namespace

TrainedModel train_linear(FullModel model, const Dataset& data, const TrainConfig& cfg) {
    data.validate();
    cfg.validate();
    const bool use_act = model.kind != ModelKind::gradient;
    const bool use_grad = model.kind != ModelKind::activation;
    if (use_act && model.w1.weight.dim(1) != data.num_classes)
        throw DimensionError("model has " + std::to_string(model.w1.weight.dim(1)) + " classes, dataset has " +
                             std::to_string(data.num_classes));
    if (use_grad && model.omega.dim(1) != data.num_classes)
        throw DimensionError("omega has " + std::to_string(model.omega.dim(1)) + " classes, dataset has " +
                             std::to_string(data.num_classes));

    const Cache cache = precompute(model, data.images);
    TrainedModel out;
    out.curve.initial_loss = cached_loss(model, cache, data);

    std::map<std::string, Tensor*> params;
    if (use_act) {
        params["w1.weight"] = &model.w1.weight;
        params["w1.bias"] = &model.w1.bias;
    }
    if (use_grad)
        for (auto& [name, lp] : model.w2.layers) {
            params["w2." + name + ".weight"] = &lp.weight;
            if (lp.bias) params["w2." + name + ".bias"] = &*lp.bias;
        }

    Optimizer opt(cfg);
    BatchSampler sampler(data.size(), cfg.batch_size, cfg.seed);
    double epoch_sum = 0.0;
    std::size_t epoch_batches = 0;
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        const auto idx = sampler.next();
        std::vector<int> y;
        y.reserve(idx.size());
        for (auto i : idx) y.push_back(data.labels[i]);
        Tensor fb, zb;
        JvpResult jr;
        const Tensor logits = batch_logits(model, cache, idx, &fb, &zb, &jr);
        const auto ce = ops::softmax_cross_entropy(logits, y);
        check_loss(ce.loss, it);

        std::map<std::string, Tensor> grads;
        if (use_act) {
            grads["w1.weight"] = ops::dense_backward_weight(ce.dlogits, fb, 1.0f);
            grads["w1.bias"] = ops::dense_backward_bias(ce.dlogits);
        }
        if (use_grad) {
            // The gradient term is linear in w2, so dL/dw2 = J^T (omega dL/dlogits).
            const Tensor u = ops::dense_backward_input(ce.dlogits, model.omega, 1.0f);
            TangentParams g2 = vjp_theta2(model.gradient_net->def, model.gradient_net->params, zb, u);
            for (auto& [name, lp] : g2.layers) {
                grads["w2." + name + ".weight"] = std::move(lp.weight);
                if (lp.bias) grads["w2." + name + ".bias"] = std::move(*lp.bias);
            }
        }
        opt.step(params, grads);

        epoch_sum += ce.loss;
        ++epoch_batches;
        if (sampler.epoch_done()) {
            out.curve.epoch_loss.push_back(epoch_sum / static_cast<double>(epoch_batches));
            epoch_sum = 0.0;
            epoch_batches = 0;
        }
    }
    if (epoch_batches) out.curve.epoch_loss.push_back(epoch_sum / static_cast<double>(epoch_batches));
    out.curve.iterations = cfg.iterations;
    out.model = std::move(model);
    return out;
}

TrainedModel train_linear(ModelKind kind, std::shared_ptr<const Backbone> backbone,
                          const std::optional<LinearHead>& omega_init, const Dataset& data, const TrainConfig& cfg) {
    if (kind != ModelKind::activation && !omega_init)
        throw InputError(std::string(to_string(kind)) + " model needs omega from a fitted activation probe");
    data.validate();
    const Tensor omega = omega_init ? omega_init->weight : Tensor{};
    FullModel m = make_model(kind, backbone, backbone, omega_init, omega, data.num_classes);
    return train_linear(std::move(m), data, cfg);
}

LinearHead fit_probe(std::shared_ptr<const Backbone> backbone, const Dataset& data, const TrainConfig& cfg,
                     TrainCurve* curve) {
    auto trained = train_linear(ModelKind::activation, std::move(backbone), std::nullopt, data, cfg);
    if (curve) *curve = trained.curve;
    return trained.model.w1;
}

FineTuned finetune(const Backbone& start, const LinearHead& omega, const Dataset& data, const TrainConfig& cfg) {
    data.validate();
    cfg.validate();
    Backbone net = start;
    LinearHead head = omega;
    const std::size_t d = net.def.feature_dim();
    if (head.weight.shape() != Shape{d, data.num_classes})
        throw DimensionError("fine-tuning head must be [" + std::to_string(d) + "," +
                             std::to_string(data.num_classes) + "]");
    const auto names = net.def.theta2_names();
    const std::set<std::string> trainable(names.begin(), names.end());
    const std::size_t boundary = net.def.boundary_layer();
    const Tensor z0 = compute_z0(net.def, net.params, data.images);

    FineTuned out;
    {
        const Tensor f = compute_features(net.def, net.params, data.images);
        out.curve.initial_loss = ops::softmax_cross_entropy(activation_logits(head, f), data.labels).loss;
    }

    std::map<std::string, Tensor*> params{{"head.weight", &head.weight}, {"head.bias", &head.bias}};
    for (const auto& name : names) {
        auto& lp = net.params.at(name);
        params[name + ".weight"] = &lp.weight;
        if (lp.bias) params[name + ".bias"] = &*lp.bias;
    }

    Optimizer opt(cfg);
    BatchSampler sampler(data.size(), cfg.batch_size, cfg.seed);
    double epoch_sum = 0.0;
    std::size_t epoch_batches = 0;
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        const auto idx = sampler.next();
        std::vector<int> y;
        for (auto i : idx) y.push_back(data.labels[i]);
        Tape tape;
        Tape::Var h = record_forward(tape, net.def, net.params, tape.constant(z0.gather_rows(idx)), boundary,
                                     net.def.layers.size(), trainable);
        if (tape.value(h).rank() != 2) h = tape.reshape(h, {idx.size(), tape.value(h).numel() / idx.size()});
        const Tape::Var logits =
            tape.dense(h, tape.parameter("head.weight", head.weight), tape.parameter("head.bias", head.bias));
        const auto ce = ops::softmax_cross_entropy(tape.value(logits), y);
        check_loss(ce.loss, it);
        const auto grads = tape.backward(logits, ce.dlogits);
        opt.step(params, grads.params);

        epoch_sum += ce.loss;
        ++epoch_batches;
        if (sampler.epoch_done()) {
            out.curve.epoch_loss.push_back(epoch_sum / static_cast<double>(epoch_batches));
            epoch_sum = 0.0;
            epoch_batches = 0;
        }
    }
    if (epoch_batches) out.curve.epoch_loss.push_back(epoch_sum / static_cast<double>(epoch_batches));
    out.curve.iterations = cfg.iterations;
    out.net = std::make_shared<const Backbone>(std::move(net));
    out.head = std::move(head);
    out.optimizer = cfg.optimizer;
    return out;
}

namespace {

template <typename F>
Tensor chunked_logits(const Tensor& x, F&& f) {
    const std::size_t n = x.dim(0), chunk = 256;
    if (n <= chunk) return f(x);
    std::vector<float> data;
    std::size_t c = 0;
    for (std::size_t b = 0; b < n; b += chunk) {
        const Tensor part = f(x.slice_rows(b, std::min(n, b + chunk)));
        c = part.dim(1);
        data.insert(data.end(), part.values().begin(), part.values().end());
    }
    return Tensor({n, c}, std::move(data));
}

} // namespace

Tensor predict_logits(const FullModel& model, const Tensor& x) {
    return chunked_logits(x, [&](const Tensor& b) { return full_logits(model, b); });
}

Tensor predict_logits(const Backbone& net, const LinearHead& head, const Tensor& x) {
    return chunked_logits(x, [&](const Tensor& b) {
        return activation_logits(head, forward_features(net.def, net.params, b).features);
    });
}

Tensor predict_logits(const FineTuned& model, const Tensor& x) { return predict_logits(*model.net, model.head, x); }

double accuracy(const Tensor& logits, std::span<const int> labels) {
    if (labels.empty()) throw InputError("accuracy of an empty dataset is undefined");
    if (logits.rank() != 2 || logits.dim(0) != labels.size())
        throw DimensionError("logits " + shape_str(logits.shape()) + " do not match " + std::to_string(labels.size()) +
                             " labels");
    const std::size_t c = logits.dim(1);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < c; ++j)
            if (logits[i * c + j] > logits[i * c + best]) best = j;
        if (static_cast<int>(best) == labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double evaluate(const FullModel& model, const Dataset& data) {
    data.validate();
    return accuracy(predict_logits(model, data.images), data.labels);
}

double evaluate(const FineTuned& model, const Dataset& data) {
    data.validate();
    return accuracy(predict_logits(model, data.images), data.labels);
}

double evaluate(const Backbone& net, const LinearHead& head, const Dataset& data) {
    data.validate();
    return accuracy(predict_logits(net, head, data.images), data.labels);
}

double dataset_loss(const FullModel& model, const Dataset& data) {
    data.validate();
    return cached_loss(model, precompute(model, data.images), data);
}

void save_head(const std::filesystem::path& path, const LinearHead& head) {
    CheckpointData data;
    data.header = {{"section", "linear-head"}};
    data.tensors = {{"weight", head.weight}, {"bias", head.bias}};
    write_checkpoint(path, data);
}

LinearHead load_head(const std::filesystem::path& path) {
    const CheckpointData data = read_checkpoint(path);
    if (data.header.value("section", std::string{}) != "linear-head")
        throw FormatError("'" + path.string() + "' does not hold a linear-head section");
    return {data.tensor("weight"), data.tensor("bias")};
}

void save_model(const std::filesystem::path& path, const FullModel& model) {
    CheckpointData data;
    data.header = {{"section", "linear-model"}, {"kind", to_string(model.kind)}};
    if (model.kind != ModelKind::gradient) {
        data.tensors.push_back({"w1.weight", model.w1.weight});
        data.tensors.push_back({"w1.bias", model.w1.bias});
    }
    if (model.kind != ModelKind::activation) {
        data.tensors.push_back({"omega", model.omega});
        for (const auto& [name, lp] : model.w2.layers) {
            data.tensors.push_back({"w2." + name + ".weight", lp.weight});
            if (lp.bias) data.tensors.push_back({"w2." + name + ".bias", *lp.bias});
        }
    }
    write_checkpoint(path, data);
}

FullModel load_model(const std::filesystem::path& path, std::shared_ptr<const Backbone> features_net,
                     std::shared_ptr<const Backbone> gradient_net) {
    const CheckpointData data = read_checkpoint(path);
    if (data.header.value("section", std::string{}) != "linear-model")
        throw FormatError("'" + path.string() + "' does not hold a linear-model section");
    const ModelKind kind = model_kind_from_string(data.header.at("kind"));
    std::optional<LinearHead> w1;
    Tensor omega;
    std::size_t classes = 0;
    if (kind != ModelKind::gradient) {
        w1 = LinearHead{data.tensor("w1.weight"), data.tensor("w1.bias")};
        classes = w1->bias.dim(0);
    }
    if (kind != ModelKind::activation) {
        omega = data.tensor("omega");
        classes = omega.dim(1);
    }
    FullModel m = make_model(kind, std::move(features_net), std::move(gradient_net), w1, omega, classes);
    if (kind != ModelKind::activation) {
        for (auto& [name, lp] : m.w2.layers) {
            lp.weight = data.tensor("w2." + name + ".weight");
            if (lp.bias) lp.bias = data.tensor("w2." + name + ".bias");
        }
        check_mirror(m.gradient_net->def, m.gradient_net->params, m.w2);
    }
    return m;
}

} // namespace gradfeat
