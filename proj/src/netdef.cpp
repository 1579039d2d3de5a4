#include "gradfeat/netdef.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "gradfeat/error.hpp"

namespace gradfeat {

const char* to_string(LayerKind k) {
    switch (k) {
    case LayerKind::conv: return "conv";
    case LayerKind::relu: return "relu";
    case LayerKind::pool: return "pool";
    case LayerKind::flatten: return "flatten";
    case LayerKind::dense: return "dense";
    }
    return "?";
}

const char* to_string(Provenance p) { return p == Provenance::random ? "random" : "pretrained"; }

Provenance provenance_from_string(const std::string& s) {
    if (s == "random") return Provenance::random;
    if (s == "pretrained") return Provenance::pretrained;
    throw InputError("unknown provenance '" + s + "'");
}

LayerSpec LayerSpec::conv(std::string name, std::size_t out, std::size_t kernel, std::size_t stride, std::size_t pad,
                          bool bias) {
    LayerSpec s;
    s.kind = LayerKind::conv;
    s.name = std::move(name);
    s.out = out;
    s.kernel = kernel;
    s.stride = stride;
    s.pad = pad;
    s.bias = bias;
    return s;
}

LayerSpec LayerSpec::dense(std::string name, std::size_t out, bool bias) {
    LayerSpec s;
    s.kind = LayerKind::dense;
    s.name = std::move(name);
    s.out = out;
    s.bias = bias;
    return s;
}

LayerSpec LayerSpec::relu() { return LayerSpec{}; }

LayerSpec LayerSpec::pool(ops::PoolKind kind, std::size_t window, std::size_t stride) {
    LayerSpec s;
    s.kind = LayerKind::pool;
    s.pool_kind = kind;
    s.window = window;
    s.stride = stride;
    return s;
}

LayerSpec LayerSpec::global_avg_pool() {
    LayerSpec s = pool(ops::PoolKind::avg, 0, 1);
    s.global = true;
    return s;
}

LayerSpec LayerSpec::flatten() {
    LayerSpec s;
    s.kind = LayerKind::flatten;
    return s;
}

std::vector<std::size_t> NetworkDef::param_layer_indices() const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < layers.size(); ++i)
        if (layers[i].parameterized()) idx.push_back(i);
    return idx;
}

std::size_t NetworkDef::boundary_layer() const {
    const auto idx = param_layer_indices();
    return split_index < idx.size() ? idx[split_index] : layers.size();
}

std::vector<std::string> NetworkDef::param_names() const {
    std::vector<std::string> names;
    for (auto i : param_layer_indices()) names.push_back(layers[i].name);
    return names;
}

std::vector<std::string> NetworkDef::theta2_names() const {
    const auto all = param_names();
    if (split_index >= all.size()) return {};
    return {all.begin() + static_cast<std::ptrdiff_t>(split_index), all.end()};
}

bool NetworkDef::in_theta2(const std::string& name) const {
    const auto t2 = theta2_names();
    return std::find(t2.begin(), t2.end(), name) != t2.end();
}

std::size_t NetworkDef::layer_index(const std::string& name) const {
    for (std::size_t i = 0; i < layers.size(); ++i)
        if (layers[i].parameterized() && layers[i].name == name) return i;
    throw InputError("no parameterized layer named '" + name + "'");
}

const LayerSpec& NetworkDef::layer(const std::string& name) const { return layers[layer_index(name)]; }

namespace {

std::string describe(const NetworkDef& def, std::size_t i) {
    if (i >= def.layers.size()) return "output";
    const auto& l = def.layers[i];
    std::string s = "layer " + std::to_string(i) + " (" + to_string(l.kind);
    if (!l.name.empty()) s += " '" + l.name + "'";
    return s + ")";
}

[[noreturn]] void bad_pair(const NetworkDef& def, std::size_t i, const std::string& why) {
    const std::string prev = i == 0 ? std::string("input") : describe(def, i - 1);
    throw ValidationError(prev + " -> " + describe(def, i) + ": " + why);
}

} // namespace

std::vector<Shape> NetworkDef::shapes() const {
    if (input.size() != 3 || shape_numel(input) == 0) throw ValidationError("network input must be [C,H,W]");
    std::vector<Shape> out{input};
    std::set<std::string> names;
    Shape s = input;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& l = layers[i];
        if (l.parameterized()) {
            if (l.name.empty()) bad_pair(*this, i, "parameterized layer needs a name");
            if (!names.insert(l.name).second) bad_pair(*this, i, "duplicate layer name");
            if (l.out == 0) bad_pair(*this, i, "output size must be positive");
        }
        switch (l.kind) {
        case LayerKind::conv: {
            if (s.size() != 3) bad_pair(*this, i, "conv needs a [C,H,W] input, got " + shape_str(s));
            if (l.stride == 0 || l.kernel == 0) bad_pair(*this, i, "conv kernel and stride must be positive");
            if (l.kernel > s[1] + 2 * l.pad || l.kernel > s[2] + 2 * l.pad)
                bad_pair(*this, i, "kernel larger than padded input " + shape_str(s));
            s = {l.out, (s[1] + 2 * l.pad - l.kernel) / l.stride + 1, (s[2] + 2 * l.pad - l.kernel) / l.stride + 1};
            break;
        }
        case LayerKind::dense:
            if (s.size() != 1) bad_pair(*this, i, "dense needs a flattened input, got " + shape_str(s));
            s = {l.out};
            break;
        case LayerKind::relu: break;
        case LayerKind::pool: {
            if (s.size() != 3) bad_pair(*this, i, "pool needs a [C,H,W] input, got " + shape_str(s));
            if (l.global) {
                if (s[1] != s[2]) bad_pair(*this, i, "global pooling needs a square plane, got " + shape_str(s));
                s = {s[0], 1, 1};
            } else {
                if (l.window == 0 || l.stride == 0) bad_pair(*this, i, "pool window and stride must be positive");
                if (l.window > s[1] || l.window > s[2])
                    bad_pair(*this, i, "pool window exceeds spatial size " + shape_str(s));
                s = {s[0], (s[1] - l.window) / l.stride + 1, (s[2] - l.window) / l.stride + 1};
            }
            break;
        }
        case LayerKind::flatten: s = {shape_numel(s)}; break;
        }
        out.push_back(s);
    }
    if (split_index > num_param_layers())
        throw ValidationError("split_index " + std::to_string(split_index) + " exceeds the " +
                              std::to_string(num_param_layers()) + " parameterized layers");
    return out;
}

std::size_t NetworkDef::feature_dim() const { return shape_numel(shapes().back()); }

std::size_t NetworkDef::fan_in(const std::string& name) const {
    const std::size_t i = layer_index(name);
    const Shape in = shapes()[i];
    const auto& l = layers[i];
    return l.kind == LayerKind::conv ? in[0] * l.kernel * l.kernel : in[0];
}

float NetworkDef::weight_scale(const std::string& name) const {
    const auto& l = layer(name);
    return l.ntk_scaled ? static_cast<float>(1.0 / std::sqrt(static_cast<double>(fan_in(name)))) : 1.0f;
}

Shape NetworkDef::weight_shape(const std::string& name) const {
    const std::size_t i = layer_index(name);
    const Shape in = shapes()[i];
    const auto& l = layers[i];
    if (l.kind == LayerKind::conv) return {l.out, in[0], l.kernel, l.kernel};
    return {in[0], l.out};
}

void validate(const NetworkDef& def) { (void)def.shapes(); }

NetworkDef default_network(const Shape& input) {
    NetworkDef def;
    def.input = input;
    def.layers = {
        LayerSpec::conv("conv1", 16, 3, 1, 1),
        LayerSpec::relu(),
        LayerSpec::pool(ops::PoolKind::avg, 2, 2),
        LayerSpec::conv("conv2", 32, 3, 1, 1),
        LayerSpec::relu(),
        LayerSpec::pool(ops::PoolKind::avg, 2, 2),
        LayerSpec::conv("conv3", 64, 3, 1, 1),
        LayerSpec::relu(),
        LayerSpec::global_avg_pool(),
        LayerSpec::flatten(),
    };
    def.split_index = 2;
    validate(def);
    return def;
}

NetworkDef with_theta2(NetworkDef def, const std::vector<std::string>& names) {
    const auto all = def.param_names();
    if (names.size() > all.size()) throw ConfigError("theta2 selection larger than the network");
    const std::size_t split = all.size() - names.size();
    std::set<std::string> wanted(names.begin(), names.end());
    for (std::size_t i = split; i < all.size(); ++i)
        if (!wanted.count(all[i])) {
            std::string msg = "theta2 must be the topmost parameterized layers; '" + all[i] + "' is missing from {";
            for (const auto& n : names) msg += n + (n == names.back() ? "" : ",");
            throw ConfigError(msg + "}");
        }
    if (wanted.size() != names.size()) throw ConfigError("duplicate layer in theta2 selection");
    def.split_index = split;
    return def;
}

nlohmann::json to_json(const NetworkDef& def) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : def.layers) {
        nlohmann::json j{{"kind", to_string(l.kind)}};
        switch (l.kind) {
        case LayerKind::conv:
            j.update({{"name", l.name}, {"out", l.out}, {"kernel", l.kernel}, {"stride", l.stride}, {"pad", l.pad},
                      {"bias", l.bias}, {"ntk", l.ntk_scaled}});
            break;
        case LayerKind::dense:
            j.update({{"name", l.name}, {"out", l.out}, {"bias", l.bias}, {"ntk", l.ntk_scaled}});
            break;
        case LayerKind::pool:
            j["mode"] = l.pool_kind == ops::PoolKind::avg ? "avg" : "max";
            if (l.global)
                j["global"] = true;
            else
                j.update({{"window", l.window}, {"stride", l.stride}});
            break;
        default: break;
        }
        layers.push_back(std::move(j));
    }
    return {{"input", def.input}, {"split_index", def.split_index}, {"layers", std::move(layers)}};
}

NetworkDef network_from_json(const nlohmann::json& j) {
    try {
        NetworkDef def;
        def.input = j.at("input").get<Shape>();
        def.split_index = j.at("split_index").get<std::size_t>();
        for (const auto& lj : j.at("layers")) {
            const std::string kind = lj.at("kind");
            LayerSpec l;
            if (kind == "conv") {
                l = LayerSpec::conv(lj.at("name"), lj.at("out"), lj.value("kernel", std::size_t{3}),
                                    lj.value("stride", std::size_t{1}), lj.value("pad", std::size_t{0}),
                                    lj.value("bias", true));
                l.ntk_scaled = lj.value("ntk", false);
            } else if (kind == "dense") {
                l = LayerSpec::dense(lj.at("name"), lj.at("out"), lj.value("bias", true));
                l.ntk_scaled = lj.value("ntk", false);
            } else if (kind == "relu") {
                l = LayerSpec::relu();
            } else if (kind == "pool") {
                const std::string mode = lj.value("mode", std::string("avg"));
                if (mode != "avg" && mode != "max") throw ValidationError("unknown pool mode '" + mode + "'");
                const auto pk = mode == "avg" ? ops::PoolKind::avg : ops::PoolKind::max;
                if (lj.value("global", false)) {
                    l = LayerSpec::global_avg_pool();
                    l.pool_kind = pk;
                } else {
                    l = LayerSpec::pool(pk, lj.at("window"), lj.value("stride", lj.at("window").get<std::size_t>()));
                }
            } else if (kind == "flatten") {
                l = LayerSpec::flatten();
            } else {
                throw ValidationError("unknown layer kind '" + kind + "'");
            }
            def.layers.push_back(std::move(l));
        }
        validate(def);
        return def;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("bad network definition: ") + e.what());
    }
}

const LayerParams& ParamSet::at(const std::string& name) const {
    auto it = layers.find(name);
    if (it == layers.end()) throw InputError("no parameters for layer '" + name + "'");
    return it->second;
}

LayerParams& ParamSet::at(const std::string& name) {
    auto it = layers.find(name);
    if (it == layers.end()) throw InputError("no parameters for layer '" + name + "'");
    return it->second;
}

std::uint64_t ParamSet::checksum() const {
    std::uint64_t h = 0;
    for (const auto& [name, lp] : layers) {
        h = h * 31 + gradfeat::checksum(lp.weight);
        if (lp.bias) h = h * 31 + gradfeat::checksum(*lp.bias);
    }
    return h;
}

std::size_t ParamSet::numel() const {
    std::size_t n = 0;
    for (const auto& [name, lp] : layers) n += lp.weight.numel() + (lp.bias ? lp.bias->numel() : 0);
    return n;
}

void check_params(const NetworkDef& def, const ParamSet& params) {
    const auto names = def.param_names();
    if (names.size() != params.layers.size())
        throw DimensionError("parameter set has " + std::to_string(params.layers.size()) + " layers, network has " +
                             std::to_string(names.size()));
    for (const auto& name : names) {
        const auto& lp = params.at(name);
        const Shape ws = def.weight_shape(name);
        if (lp.weight.shape() != ws)
            throw DimensionError("layer '" + name + "' weight " + shape_str(lp.weight.shape()) + " expected " +
                                 shape_str(ws));
        const bool want_bias = def.layer(name).bias;
        if (want_bias != lp.bias.has_value())
            throw DimensionError("layer '" + name + "' bias presence does not match the definition");
        if (lp.bias && lp.bias->shape() != Shape{def.layer(name).out})
            throw DimensionError("layer '" + name + "' bias shape " + shape_str(lp.bias->shape()));
    }
}

ParamSet build_network(const NetworkDef& def, std::uint64_t seed) {
    validate(def);
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> normal(0.0f, 1.0f);
    ParamSet ps;
    for (const auto& name : def.param_names()) {
        const auto& spec = def.layer(name);
        const float std_dev =
            spec.ntk_scaled ? 1.0f : static_cast<float>(std::sqrt(2.0 / static_cast<double>(def.fan_in(name))));
        LayerParams lp{Tensor(def.weight_shape(name)), std::nullopt};
        for (auto& v : lp.weight.values()) v = std_dev * normal(rng);
        if (spec.bias) lp.bias = Tensor({spec.out});
        ps.layers.emplace(name, std::move(lp));
        ps.provenance.emplace(name, Provenance::random);
    }
    return ps;
}

std::pair<NetworkDef, ParamSet> adopt_ntk(const NetworkDef& def, const ParamSet& params) {
    check_params(def, params);
    NetworkDef out_def = def;
    ParamSet out = params;
    for (const auto& name : def.theta2_names()) {
        auto& spec = out_def.layers[out_def.layer_index(name)];
        if (spec.ntk_scaled) continue;
        const float factor = static_cast<float>(std::sqrt(static_cast<double>(def.fan_in(name))));
        for (auto& v : out.at(name).weight.values()) v *= factor;
        spec.ntk_scaled = true;
    }
    return {std::move(out_def), std::move(out)};
}

namespace {

void check_bn(const BatchNormStats& bn, std::size_t channels) {
    for (const Tensor* t : {&bn.gamma, &bn.beta, &bn.mean, &bn.var})
        if (t->shape() != Shape{channels})
            throw DimensionError("batch-norm statistics " + shape_str(t->shape()) + " do not match " +
                                 std::to_string(channels) + " channels");
    for (float v : bn.var.values())
        if (v < 0.0f) throw InputError("batch-norm variance must be non-negative");
}

} // namespace

Tensor batchnorm_inference(const Tensor& x, const BatchNormStats& bn) {
    if (x.rank() < 2) throw DimensionError("batch norm needs [N,C,...]");
    const std::size_t n = x.dim(0), c = x.dim(1), inner = x.numel() / (n * c);
    check_bn(bn, c);
    Tensor out(x.shape());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const float k = bn.gamma[ch] / std::sqrt(bn.var[ch] + bn.eps);
            for (std::size_t j = 0; j < inner; ++j) {
                const std::size_t idx = (i * c + ch) * inner + j;
                out[idx] = (x[idx] - bn.mean[ch]) * k + bn.beta[ch];
            }
        }
    return out;
}

std::pair<Tensor, Tensor> fold_batchnorm(const Tensor& conv_w, const Tensor* conv_b, const BatchNormStats& bn) {
    if (conv_w.rank() != 4) throw DimensionError("fold_batchnorm expects a [K,C,kh,kw] conv weight");
    const std::size_t k = conv_w.dim(0), per = conv_w.numel() / k;
    check_bn(bn, k);
    if (conv_b && conv_b->shape() != Shape{k}) throw DimensionError("conv bias does not match output channels");
    Tensor w = conv_w;
    Tensor b({k});
    for (std::size_t ch = 0; ch < k; ++ch) {
        const float factor = bn.gamma[ch] / std::sqrt(bn.var[ch] + bn.eps);
        for (std::size_t j = 0; j < per; ++j) w[ch * per + j] *= factor;
        const float b0 = conv_b ? (*conv_b)[ch] : 0.0f;
        b[ch] = (b0 - bn.mean[ch]) * factor + bn.beta[ch];
    }
    return {std::move(w), std::move(b)};
}

ops::PoolOptions pool_options(const LayerSpec& spec, const Shape& batch_input) {
    if (spec.global) return {spec.pool_kind, batch_input.at(2), 1};
    return {spec.pool_kind, spec.window, spec.stride};
}

Tensor flatten_batch(Tensor t) {
    const std::size_t n = t.dim(0);
    const std::size_t rest = t.numel() / n;
    return std::move(t).reshaped({n, rest});
}

Tensor apply_layer(const NetworkDef& def, std::size_t index, const LayerParams* params, const Tensor& x) {
    const auto& spec = def.layers.at(index);
    switch (spec.kind) {
    case LayerKind::conv: {
        const float scale = def.weight_scale(spec.name);
        return ops::conv2d(x, params->weight, params->bias ? &*params->bias : nullptr,
                           {spec.stride, spec.pad, scale});
    }
    case LayerKind::dense:
        return ops::dense(x, params->weight, params->bias ? &*params->bias : nullptr, def.weight_scale(spec.name));
    case LayerKind::relu: return ops::relu(x).output;
    case LayerKind::pool: return ops::pool(x, pool_options(spec, x.shape())).output;
    case LayerKind::flatten: return flatten_batch(x);
    }
    return x;
}

Tensor forward_range(const NetworkDef& def, const ParamSet& params, const Tensor& x, std::size_t begin,
                     std::size_t end) {
    Tensor h = x;
    for (std::size_t i = begin; i < end; ++i) {
        const auto& spec = def.layers[i];
        h = apply_layer(def, i, spec.parameterized() ? &params.at(spec.name) : nullptr, h);
    }
    return h;
}

namespace {

void check_input(const NetworkDef& def, const Tensor& x) {
    Shape want{x.rank() ? x.dim(0) : 0};
    want.insert(want.end(), def.input.begin(), def.input.end());
    if (x.shape() != want)
        throw DimensionError("network input " + shape_str(x.shape()) + " does not match [N," +
                             shape_str(def.input).substr(1));
}

} // namespace

FeatureResult forward_features(const NetworkDef& def, const ParamSet& params, const Tensor& x) {
    check_input(def, x);
    const std::size_t boundary = def.boundary_layer();
    Tensor z0 = forward_range(def, params, x, 0, boundary);
    Tensor out = forward_range(def, params, z0, boundary, def.layers.size());
    return {flatten_batch(std::move(out)), std::move(z0)};
}

namespace {

template <typename F>
Tensor chunked(const Tensor& x, std::size_t chunk, F&& f) {
    const std::size_t n = x.dim(0);
    if (n <= chunk) return f(x);
    std::vector<Tensor> parts;
    for (std::size_t b = 0; b < n; b += chunk) parts.push_back(f(x.slice_rows(b, std::min(n, b + chunk))));
    Shape s = parts.front().shape();
    s[0] = n;
    std::vector<float> data;
    data.reserve(shape_numel(s));
    for (const auto& p : parts) data.insert(data.end(), p.values().begin(), p.values().end());
    return Tensor(std::move(s), std::move(data));
}

} // namespace

Tensor compute_z0(const NetworkDef& def, const ParamSet& params, const Tensor& x, std::size_t chunk) {
    check_input(def, x);
    return chunked(x, chunk, [&](const Tensor& b) { return forward_range(def, params, b, 0, def.boundary_layer()); });
}

Tensor compute_features(const NetworkDef& def, const ParamSet& params, const Tensor& x, std::size_t chunk) {
    check_input(def, x);
    return chunked(x, chunk, [&](const Tensor& b) { return forward_features(def, params, b).features; });
}

Tape::Var record_forward(Tape& tape, const NetworkDef& def, const ParamSet& params, Tape::Var x, std::size_t begin,
                         std::size_t end, const std::set<std::string>& trainable) {
    Tape::Var h = x;
    for (std::size_t i = begin; i < end; ++i) {
        const auto& spec = def.layers[i];
        switch (spec.kind) {
        case LayerKind::conv:
        case LayerKind::dense: {
            const auto& lp = params.at(spec.name);
            const bool train = trainable.count(spec.name) > 0;
            const Tape::Var w = train ? tape.parameter(spec.name + ".weight", lp.weight) : tape.constant(lp.weight);
            std::optional<Tape::Var> b;
            if (lp.bias) b = train ? tape.parameter(spec.name + ".bias", *lp.bias) : tape.constant(*lp.bias);
            const float scale = def.weight_scale(spec.name);
            h = spec.kind == LayerKind::conv ? tape.conv2d(h, w, b, {spec.stride, spec.pad, scale})
                                             : tape.dense(h, w, b, scale);
            break;
        }
        case LayerKind::relu: h = tape.relu(h); break;
        case LayerKind::pool: h = tape.pool(h, pool_options(spec, tape.value(h).shape())); break;
        case LayerKind::flatten: {
            const auto& s = tape.value(h).shape();
            h = tape.reshape(h, {s[0], tape.value(h).numel() / s[0]});
            break;
        }
        }
    }
    return h;
}

} // namespace gradfeat
