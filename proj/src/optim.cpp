#include "gradfeat/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gradfeat/error.hpp"

namespace gradfeat {

const char* to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd"; }

TrainConfig TrainConfig::sgd_finetune() {
    TrainConfig c;
    c.optimizer = OptimizerKind::sgd;
    c.weight_decay = 5e-5;
    c.momentum = 0.9;
    return c;
}

void TrainConfig::validate() const {
    // A zero learning rate is allowed (frozen run); negative values are not.
    if (!(base_lr >= 0.0)) throw ConfigError("base_lr must be non-negative");
    if (lr_period == 0) throw ConfigError("lr_period must be positive");
    if (!(lr_factor > 0.0)) throw ConfigError("lr_factor must be positive");
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("betas must be in [0,1)");
    if (!(momentum >= 0.0)) throw ConfigError("momentum must be non-negative");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
    if (iterations == 0) throw ConfigError("iterations must be positive");
}

double TrainConfig::lr_at(std::size_t iteration) const {
    return base_lr * std::pow(lr_factor, static_cast<double>(iteration / lr_period));
}

nlohmann::json to_json(const TrainConfig& c) {
    return {{"optimizer", to_string(c.optimizer)},
            {"base_lr", c.base_lr},
            {"lr_period", c.lr_period},
            {"lr_factor", c.lr_factor},
            {"batch_size", c.batch_size},
            {"beta1", c.beta1},
            {"beta2", c.beta2},
            {"momentum", c.momentum},
            {"weight_decay", c.weight_decay},
            {"iterations", c.iterations},
            {"seed", c.seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c) {
    try {
        if (j.contains("optimizer")) {
            const std::string o = j.at("optimizer");
            if (o == "adam")
                c.optimizer = OptimizerKind::adam;
            else if (o == "sgd")
                c.optimizer = OptimizerKind::sgd;
            else
                throw ConfigError("unknown optimizer '" + o + "'");
        }
        c.base_lr = j.value("base_lr", c.base_lr);
        c.lr_period = j.value("lr_period", c.lr_period);
        c.lr_factor = j.value("lr_factor", c.lr_factor);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.beta1 = j.value("beta1", c.beta1);
        c.beta2 = j.value("beta2", c.beta2);
        c.momentum = j.value("momentum", c.momentum);
        c.weight_decay = j.value("weight_decay", c.weight_decay);
        c.iterations = j.value("iterations", c.iterations);
        c.seed = j.value("seed", c.seed);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad training config: ") + e.what());
    }
    c.validate();
    return c;
}

Optimizer::Optimizer(TrainConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

void Optimizer::step(const std::map<std::string, Tensor*>& params, const std::map<std::string, Tensor>& grads) {
    const double lr = cfg_.lr_at(iteration_);
    ++iteration_;
    const double t = static_cast<double>(iteration_);
    const float wd = static_cast<float>(cfg_.weight_decay);
    for (const auto& [name, p] : params) {
        auto git = grads.find(name);
        if (git == grads.end()) throw StateError("no gradient for parameter '" + name + "'");
        const Tensor& g = git->second;
        if (g.shape() != p->shape()) throw DimensionError("gradient shape mismatch for '" + name + "'");
        auto [it, fresh] = state_.try_emplace(name);
        Slot& s = it->second;
        if (fresh) {
            s.m = Tensor::zeros_like(*p);
            if (cfg_.optimizer == OptimizerKind::adam) s.v = Tensor::zeros_like(*p);
        }
        float* w = p->data();
        float* m = s.m.data();
        const float* gd = g.data();
        const std::size_t n = p->numel();
        if (cfg_.optimizer == OptimizerKind::adam) {
            float* v = s.v.data();
            const float b1 = static_cast<float>(cfg_.beta1), b2 = static_cast<float>(cfg_.beta2);
            const double bc1 = 1.0 - std::pow(cfg_.beta1, t), bc2 = 1.0 - std::pow(cfg_.beta2, t);
            const float step = static_cast<float>(lr / bc1);
            const float inv_sqrt_bc2 = static_cast<float>(1.0 / std::sqrt(bc2));
            const float eps = static_cast<float>(cfg_.adam_eps);
            for (std::size_t i = 0; i < n; ++i) {
                const float gi = gd[i] + wd * w[i];
                m[i] = b1 * m[i] + (1.0f - b1) * gi;
                v[i] = b2 * v[i] + (1.0f - b2) * gi * gi;
                w[i] -= step * m[i] / (std::sqrt(v[i]) * inv_sqrt_bc2 + eps);
            }
        } else {
            const float mu = static_cast<float>(cfg_.momentum);
            const float lrf = static_cast<float>(lr);
            for (std::size_t i = 0; i < n; ++i) {
                const float gi = gd[i] + wd * w[i];
                m[i] = mu * m[i] + gi;
                w[i] -= lrf * m[i];
            }
        }
    }
}

BatchSampler::BatchSampler(std::size_t n, std::size_t batch_size, std::uint64_t seed)
    : batch_size_(std::min(batch_size, n)), order_(n), rng_(seed) {
    if (n == 0) throw InputError("cannot sample batches from an empty dataset");
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::shuffle(order_.begin(), order_.end(), rng_);
}

std::vector<std::size_t> BatchSampler::next() {
    const std::size_t end = std::min(order_.size(), cursor_ + batch_size_);
    std::vector<std::size_t> batch(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                                   order_.begin() + static_cast<std::ptrdiff_t>(end));
    cursor_ = end;
    if (cursor_ == order_.size()) {
        cursor_ = 0;
        ++epoch_;
        std::shuffle(order_.begin(), order_.end(), rng_);
    }
    return batch;
}

} // namespace gradfeat
