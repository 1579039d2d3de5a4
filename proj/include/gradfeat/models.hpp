#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gradfeat/dataset.hpp"
#include "gradfeat/netdef.hpp"
#include "gradfeat/optim.hpp"
#include "gradfeat/tangent.hpp"

namespace gradfeat {

enum class ModelKind { activation, gradient, full };

const char* to_string(ModelKind k);
ModelKind model_kind_from_string(const std::string& s);

/// Linear classifier head: weight [d,c] and bias [c].
struct LinearHead {
    Tensor weight;
    Tensor bias;

    static LinearHead zeros(std::size_t d, std::size_t c);
    /// Fresh seeded draw, weight ~ N(0, 1/d), zero bias.
    static LinearHead random(std::size_t d, std::size_t c, std::uint64_t seed);
    std::uint64_t checksum() const;
};

/// A frozen network (definition + parameters).
struct Backbone {
    NetworkDef def;
    ParamSet params;
};

Tensor activation_logits(const Tensor& weight, const Tensor& features);
Tensor activation_logits(const LinearHead& head, const Tensor& features);

/// Linear model over activation and gradient features:
///   logits = w1^T f(x) + b1 + omega^T J(x) w2.
/// `features_net` supplies f, `gradient_net` supplies J (normally the same network).
/// The activation kind uses only the first term, the gradient kind only the second.
struct FullModel {
    ModelKind kind = ModelKind::full;
    std::shared_ptr<const Backbone> features_net;
    std::shared_ptr<const Backbone> gradient_net;
    Tensor omega;  // frozen head inside the gradient term, [d,c]
    LinearHead w1;
    TangentParams w2;
};

/// w1 starts from `w1_init` (zeros when absent), w2 from zero.
FullModel make_model(ModelKind kind, std::shared_ptr<const Backbone> features_net,
                     std::shared_ptr<const Backbone> gradient_net, const std::optional<LinearHead>& w1_init,
                     const Tensor& omega, std::size_t num_classes);

/// Logits from precomputed pieces: features f ([N,d], unused for the gradient kind)
/// and gradient-network tangent jf ([N,d], unused for the activation kind).
Tensor full_logits(const FullModel& model, const Tensor* features, const Tensor* jf);
Tensor full_logits(const FullModel& model, const Tensor& x);

struct TrainCurve {
    double initial_loss = 0.0;        // full training-set loss before the first step
    std::vector<double> epoch_loss;   // mean mini-batch loss per (possibly partial) epoch
    std::size_t iterations = 0;
};

struct TrainedModel {
    FullModel model;
    TrainCurve curve;
};

/// Minimizes softmax cross-entropy over (w1, w2), restricted per kind. The backbones
/// and omega are never modified.
TrainedModel train_linear(FullModel model, const Dataset& data, const TrainConfig& cfg);

/// Common case: one backbone; `omega_init` is both the w1 start and the frozen gradient
/// head. Required for the gradient and full kinds.
TrainedModel train_linear(ModelKind kind, std::shared_ptr<const Backbone> backbone,
                          const std::optional<LinearHead>& omega_init, const Dataset& data, const TrainConfig& cfg);

/// Activation probe: returns the trained head (omega-bar).
LinearHead fit_probe(std::shared_ptr<const Backbone> backbone, const Dataset& data, const TrainConfig& cfg,
                     TrainCurve* curve = nullptr);

struct FineTuned {
    std::shared_ptr<const Backbone> net;
    LinearHead head;
    TrainCurve curve;
    OptimizerKind optimizer = OptimizerKind::adam;
};

/// Jointly trains theta2 and the head with theta1 frozen.
FineTuned finetune(const Backbone& start, const LinearHead& omega, const Dataset& data, const TrainConfig& cfg);

Tensor predict_logits(const FullModel& model, const Tensor& x);
Tensor predict_logits(const FineTuned& model, const Tensor& x);
Tensor predict_logits(const Backbone& net, const LinearHead& head, const Tensor& x);

/// Argmax accuracy; ties go to the lowest class index. Throws InputError when empty.
double accuracy(const Tensor& logits, std::span<const int> labels);
double evaluate(const FullModel& model, const Dataset& data);
double evaluate(const FineTuned& model, const Dataset& data);
double evaluate(const Backbone& net, const LinearHead& head, const Dataset& data);

/// Mean cross-entropy of a model over a whole dataset.
double dataset_loss(const FullModel& model, const Dataset& data);

// Serialization through the checkpoint container ("linear-head" / "linear-model" sections).
void save_head(const std::filesystem::path& path, const LinearHead& head);
LinearHead load_head(const std::filesystem::path& path);
void save_model(const std::filesystem::path& path, const FullModel& model);
/// Restores w1, w2 and omega; the caller supplies the backbones.
FullModel load_model(const std::filesystem::path& path, std::shared_ptr<const Backbone> features_net,
                     std::shared_ptr<const Backbone> gradient_net);

} // namespace gradfeat
