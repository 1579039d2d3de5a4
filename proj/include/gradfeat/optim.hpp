#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gradfeat/tensor.hpp"

namespace gradfeat {

enum class OptimizerKind { adam, sgd };

const char* to_string(OptimizerKind k);

/// Optimizer and schedule settings. Defaults follow the reference recipe: Adam,
/// batch 64, beta1 0.5, beta2 0.999, weight decay 1e-6, lr 1e-3 halved every 20K
/// of 80K iterations.
struct TrainConfig {
    OptimizerKind optimizer = OptimizerKind::adam;
    double base_lr = 1e-3;
    std::size_t lr_period = 20000; // iterations between decays
    double lr_factor = 0.5;
    std::size_t batch_size = 64;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double momentum = 0.9;
    double weight_decay = 1e-6;
    std::size_t iterations = 80000;
    std::uint64_t seed = 0;

    /// SGD variant used for fine-tuning: momentum 0.9, weight decay 5e-5, same schedule.
    static TrainConfig sgd_finetune();

    void validate() const;
    double lr_at(std::size_t iteration) const;
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

/// Adam with L2 weight decay folded into the gradient, or SGD with heavy-ball momentum.
/// State is keyed by parameter name; updates are applied in name order.
class Optimizer {
public:
    explicit Optimizer(TrainConfig cfg);

    void step(const std::map<std::string, Tensor*>& params, const std::map<std::string, Tensor>& grads);
    std::size_t iteration() const { return iteration_; }

private:
    struct Slot {
        Tensor m, v;
    };
    TrainConfig cfg_;
    std::size_t iteration_ = 0;
    std::map<std::string, Slot> state_;
};

/// Reshuffles sample indices every epoch; deterministic given the seed.
class BatchSampler {
public:
    BatchSampler(std::size_t n, std::size_t batch_size, std::uint64_t seed);

    std::vector<std::size_t> next();
    std::size_t epoch() const { return epoch_; }
    /// True when the batch just returned finished an epoch.
    bool epoch_done() const { return cursor_ == 0; }

private:
    std::size_t batch_size_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
    std::size_t epoch_ = 0;
    std::mt19937_64 rng_;
};

} // namespace gradfeat
