#include "gradfeat/tangent.hpp"

#include <cmath>
#include <random>

#include "gradfeat/error.hpp"
#include "gradfeat/tape.hpp"

namespace gradfeat {

TangentParams TangentParams::zeros(const NetworkDef& def, const ParamSet& params) {
    TangentParams t;
    for (const auto& name : def.theta2_names()) {
        const auto& lp = params.at(name);
        LayerParams z{Tensor::zeros_like(lp.weight), std::nullopt};
        if (lp.bias) z.bias = Tensor::zeros_like(*lp.bias);
        t.layers.emplace(name, std::move(z));
    }
    return t;
}

TangentParams TangentParams::random(const NetworkDef& def, const ParamSet& params, std::uint64_t seed) {
    TangentParams t = zeros(def, params);
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> normal(0.0f, 1.0f);
    for (const auto& name : def.theta2_names()) {
        auto& lp = t.layers.at(name);
        for (auto& v : lp.weight.values()) v = normal(rng);
        if (lp.bias)
            for (auto& v : lp.bias->values()) v = normal(rng);
    }
    return t;
}

std::size_t TangentParams::numel() const {
    std::size_t n = 0;
    for (const auto& [name, lp] : layers) n += lp.weight.numel() + (lp.bias ? lp.bias->numel() : 0);
    return n;
}

double TangentParams::dot(const TangentParams& other) const {
    double s = 0.0;
    for (const auto& [name, lp] : layers) {
        const auto& o = other.layers.at(name);
        s += dot64(lp.weight, o.weight);
        if (lp.bias) s += dot64(*lp.bias, *o.bias);
    }
    return s;
}

double TangentParams::norm() const { return std::sqrt(dot(*this)); }

void TangentParams::scale(float alpha) {
    for (auto& [name, lp] : layers) {
        for (auto& v : lp.weight.values()) v *= alpha;
        if (lp.bias)
            for (auto& v : lp.bias->values()) v *= alpha;
    }
}

void TangentParams::axpy(float alpha, const TangentParams& x) {
    for (auto& [name, lp] : layers) {
        const auto& o = x.layers.at(name);
        gradfeat::axpy(alpha, o.weight, lp.weight);
        if (lp.bias) gradfeat::axpy(alpha, *o.bias, *lp.bias);
    }
}

std::vector<double> TangentParams::flatten(const NetworkDef& def) const {
    std::vector<double> flat;
    flat.reserve(numel());
    for (const auto& name : def.theta2_names()) {
        const auto& lp = layers.at(name);
        for (float v : lp.weight.values()) flat.push_back(v);
        if (lp.bias)
            for (float v : lp.bias->values()) flat.push_back(v);
    }
    return flat;
}

TangentParams TangentParams::unflatten(const NetworkDef& def, const ParamSet& params, const std::vector<double>& flat) {
    TangentParams t = zeros(def, params);
    if (flat.size() != t.numel())
        throw DimensionError("flat theta2 vector has " + std::to_string(flat.size()) + " entries, expected " +
                             std::to_string(t.numel()));
    std::size_t k = 0;
    for (const auto& name : def.theta2_names()) {
        auto& lp = t.layers.at(name);
        for (auto& v : lp.weight.values()) v = static_cast<float>(flat[k++]);
        if (lp.bias)
            for (auto& v : lp.bias->values()) v = static_cast<float>(flat[k++]);
    }
    return t;
}

TangentParams theta2_of(const NetworkDef& def, const ParamSet& params) {
    TangentParams t;
    for (const auto& name : def.theta2_names()) t.layers.emplace(name, params.at(name));
    return t;
}

ParamSet perturb_theta2(const NetworkDef& def, const ParamSet& params, const TangentParams& delta, float alpha) {
    check_mirror(def, params, delta);
    ParamSet out = params;
    for (const auto& name : def.theta2_names()) {
        auto& lp = out.at(name);
        const auto& d = delta.layers.at(name);
        axpy(alpha, d.weight, lp.weight);
        if (lp.bias) axpy(alpha, *d.bias, *lp.bias);
    }
    return out;
}

void check_mirror(const NetworkDef& def, const ParamSet& params, const TangentParams& w2) {
    const auto names = def.theta2_names();
    if (w2.layers.size() != names.size())
        throw DimensionError("tangent has " + std::to_string(w2.layers.size()) + " layers, theta2 has " +
                             std::to_string(names.size()));
    for (const auto& name : names) {
        auto it = w2.layers.find(name);
        if (it == w2.layers.end()) throw DimensionError("tangent is missing theta2 layer '" + name + "'");
        const auto& lp = params.at(name);
        if (it->second.weight.shape() != lp.weight.shape())
            throw DimensionError("tangent weight for layer '" + name + "' has shape " +
                                 shape_str(it->second.weight.shape()) + ", expected " + shape_str(lp.weight.shape()));
        if (lp.bias.has_value() != it->second.bias.has_value() ||
            (lp.bias && lp.bias->shape() != it->second.bias->shape()))
            throw DimensionError("tangent bias for layer '" + name + "' does not mirror theta2");
    }
}

JvpResult jvp_forward(const NetworkDef& def, const ParamSet& params, const TangentParams& w2, const Tensor& z0) {
    check_mirror(def, params, w2);
    const std::size_t boundary = def.boundary_layer();
    {
        const Shape expected = def.shapes()[boundary];
        Shape got(z0.shape().begin() + (z0.rank() ? 1 : 0), z0.shape().end());
        if (got != expected)
            throw DimensionError("z0 " + shape_str(z0.shape()) + " does not match the theta2 boundary " +
                                 shape_str(expected));
    }

    Tensor z = z0;
    Tensor t;                 // tangent; empty while it is identically zero (the seed)
    bool tangent_zero = true;
    for (std::size_t i = boundary; i < def.layers.size(); ++i) {
        const auto& spec = def.layers[i];
        switch (spec.kind) {
        case LayerKind::conv: {
            const auto& lp = params.at(spec.name);
            const auto& tp = w2.layers.at(spec.name);
            const ops::Conv2dOptions opt{spec.stride, spec.pad, def.weight_scale(spec.name)};
            const Shape os = ops::conv2d_output_shape(z.shape(), lp.weight.shape(), opt.stride, opt.pad);
            const Tensor cols = ops::im2col(z, spec.kernel, spec.kernel, opt.stride, opt.pad);
            Tensor t_out = ops::conv2d_lowered(cols, os, tp.weight, tp.bias ? &*tp.bias : nullptr, opt.weight_scale);
            if (!tangent_zero) axpy(1.0f, ops::conv2d(t, lp.weight, nullptr, opt), t_out);
            z = ops::conv2d_lowered(cols, os, lp.weight, lp.bias ? &*lp.bias : nullptr, opt.weight_scale);
            t = std::move(t_out);
            tangent_zero = false;
            break;
        }
        case LayerKind::dense: {
            const auto& lp = params.at(spec.name);
            const auto& tp = w2.layers.at(spec.name);
            const float scale = def.weight_scale(spec.name);
            Tensor t_out = ops::dense(z, tp.weight, tp.bias ? &*tp.bias : nullptr, scale);
            if (!tangent_zero) axpy(1.0f, ops::dense(t, lp.weight, nullptr, scale), t_out);
            z = ops::dense(z, lp.weight, lp.bias ? &*lp.bias : nullptr, scale);
            t = std::move(t_out);
            tangent_zero = false;
            break;
        }
        case LayerKind::relu: {
            auto r = ops::relu(z);
            if (!tangent_zero) t = ops::apply_mask(t, r.mask);
            z = std::move(r.output);
            break;
        }
        case LayerKind::pool: {
            const auto opt = pool_options(spec, z.shape());
            auto r = ops::pool(z, opt);
            if (!tangent_zero) t = ops::pool_linear(t, opt, r.argmax);
            z = std::move(r.output);
            break;
        }
        case LayerKind::flatten:
            z = flatten_batch(std::move(z));
            if (!tangent_zero) t = flatten_batch(std::move(t));
            break;
        }
    }
    Tensor f = flatten_batch(std::move(z));
    Tensor jf = tangent_zero ? Tensor::zeros_like(f) : flatten_batch(std::move(t));
    return {std::move(f), std::move(jf)};
}

Tensor head_jvp(const Tensor& omega, const Tensor& jf) { return ops::dense(jf, omega, nullptr); }

TangentParams vjp_theta2(const NetworkDef& def, const ParamSet& params, const Tensor& z0, const Tensor& u) {
    const auto names = def.theta2_names();
    TangentParams g = TangentParams::zeros(def, params);
    if (names.empty()) return g;
    Tape tape;
    const std::set<std::string> trainable(names.begin(), names.end());
    Tape::Var out = record_forward(tape, def, params, tape.constant(z0), def.boundary_layer(), def.layers.size(),
                                   trainable);
    if (tape.value(out).rank() != 2) {
        const auto& s = tape.value(out).shape();
        out = tape.reshape(out, {s[0], tape.value(out).numel() / s[0]});
    }
    if (u.shape() != tape.value(out).shape())
        throw DimensionError("cotangent " + shape_str(u.shape()) + " does not match features " +
                             shape_str(tape.value(out).shape()));
    const auto grads = tape.backward(out, u);
    for (const auto& name : names) {
        auto& lp = g.layers.at(name);
        lp.weight = grads.params.at(name + ".weight");
        if (lp.bias) lp.bias = grads.params.at(name + ".bias");
    }
    return g;
}

} // namespace gradfeat
