#include "gradfeat/pretrain.hpp"

#include <cmath>
#include <set>

#include "gradfeat/error.hpp"
#include "gradfeat/ops.hpp"
#include "gradfeat/tape.hpp"

namespace gradfeat {

Dataset rotation_dataset(const Dataset& data) {
    data.validate();
    const std::size_t n = data.size(), per = data.images.numel() / n;
    Shape s = data.images.shape();
    s[0] = 4 * n;
    std::vector<float> images;
    images.reserve(4 * n * per);
    std::vector<int> labels;
    labels.reserve(4 * n);
    for (int q = 0; q < 4; ++q) {
        const Tensor r = rotate_quarter(data.images, q);
        images.insert(images.end(), r.values().begin(), r.values().end());
        labels.insert(labels.end(), n, q);
    }
    return {Tensor(s, std::move(images)), std::move(labels), data.split, 4};
}

PretrainResult train_backbone(const NetworkDef& def, const Dataset& data, const TrainConfig& cfg) {
    data.validate();
    cfg.validate();
    const std::size_t d = def.feature_dim();
    PretrainResult out{build_network(def, cfg.seed), LinearHead::random(d, data.num_classes, cfg.seed + 1), {}};
    const auto names = def.param_names();
    const std::set<std::string> trainable(names.begin(), names.end());

    std::map<std::string, Tensor*> params{{"head.weight", &out.head.weight}, {"head.bias", &out.head.bias}};
    for (const auto& name : names) {
        auto& lp = out.params.at(name);
        params[name + ".weight"] = &lp.weight;
        if (lp.bias) params[name + ".bias"] = &*lp.bias;
    }

    out.curve.initial_loss =
        ops::softmax_cross_entropy(activation_logits(out.head, compute_features(def, out.params, data.images)),
                                   data.labels)
            .loss;
    Optimizer opt(cfg);
    BatchSampler sampler(data.size(), cfg.batch_size, cfg.seed);
    double sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        const auto idx = sampler.next();
        std::vector<int> y;
        for (auto i : idx) y.push_back(data.labels[i]);
        Tape tape;
        Tape::Var h = record_forward(tape, def, out.params, tape.constant(data.images.gather_rows(idx)), 0,
                                     def.layers.size(), trainable);
        if (tape.value(h).rank() != 2) h = tape.reshape(h, {idx.size(), tape.value(h).numel() / idx.size()});
        const Tape::Var logits = tape.dense(h, tape.parameter("head.weight", out.head.weight),
                                            tape.parameter("head.bias", out.head.bias));
        const auto ce = ops::softmax_cross_entropy(tape.value(logits), y);
        if (!std::isfinite(ce.loss)) throw TrainingError("pretraining diverged at iteration " + std::to_string(it));
        opt.step(params, tape.backward(logits, ce.dlogits).params);
        sum += ce.loss;
        ++batches;
        if (sampler.epoch_done()) {
            out.curve.epoch_loss.push_back(sum / static_cast<double>(batches));
            sum = 0.0;
            batches = 0;
        }
    }
    if (batches) out.curve.epoch_loss.push_back(sum / static_cast<double>(batches));
    out.curve.iterations = cfg.iterations;
    for (auto& [name, prov] : out.params.provenance) prov = Provenance::pretrained;
    return out;
}

PretrainResult pretrain_rotation(const NetworkDef& def, const Dataset& data, const TrainConfig& cfg) {
    return train_backbone(def, rotation_dataset(data), cfg);
}

double rotation_accuracy(const NetworkDef& def, const ParamSet& params, const LinearHead& head, const Dataset& data) {
    const Dataset rot = rotation_dataset(data);
    return evaluate(Backbone{def, params}, head, rot);
}

} // namespace gradfeat
