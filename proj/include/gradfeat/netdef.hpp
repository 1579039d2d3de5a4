#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "gradfeat/ops.hpp"
#include "gradfeat/tape.hpp"
#include "gradfeat/tensor.hpp"

namespace gradfeat {

enum class LayerKind { conv, relu, pool, flatten, dense };
enum class Provenance { random, pretrained };

const char* to_string(LayerKind k);
const char* to_string(Provenance p);
Provenance provenance_from_string(const std::string& s);

struct LayerSpec {
    LayerKind kind = LayerKind::relu;
    std::string name;      // required for conv and dense
    std::size_t out = 0;   // output channels (conv) or units (dense)
    std::size_t kernel = 3;
    std::size_t stride = 1;
    std::size_t pad = 0;
    bool bias = true;
    ops::PoolKind pool_kind = ops::PoolKind::avg;
    std::size_t window = 2;
    bool global = false;   // pooling window spans the whole (square) plane
    bool ntk_scaled = false;

    bool parameterized() const { return kind == LayerKind::conv || kind == LayerKind::dense; }

    static LayerSpec conv(std::string name, std::size_t out, std::size_t kernel, std::size_t stride = 1,
                          std::size_t pad = 0, bool bias = true);
    static LayerSpec dense(std::string name, std::size_t out, bool bias = true);
    static LayerSpec relu();
    static LayerSpec pool(ops::PoolKind kind, std::size_t window, std::size_t stride);
    static LayerSpec global_avg_pool();
    static LayerSpec flatten();
};

/// Ordered feed-forward layer list. The parameterized layers at positions
/// >= split_index (counted among parameterized layers only) form theta2; the
/// rest form theta1.
struct NetworkDef {
    Shape input;  // per-sample [C,H,W]
    std::vector<LayerSpec> layers;
    std::size_t split_index = 0;

    std::vector<std::size_t> param_layer_indices() const;
    std::size_t num_param_layers() const { return param_layer_indices().size(); }
    /// Index into `layers` where the theta2 section starts (layers.size() if theta2 is empty).
    std::size_t boundary_layer() const;
    std::vector<std::string> param_names() const;
    std::vector<std::string> theta2_names() const;
    bool in_theta2(const std::string& layer) const;
    const LayerSpec& layer(const std::string& name) const;
    std::size_t layer_index(const std::string& name) const;

    /// Per-sample shape entering each layer, plus the final output shape at the end.
    /// Throws ValidationError naming the first incompatible pair.
    std::vector<Shape> shapes() const;
    std::size_t feature_dim() const;
    std::size_t fan_in(const std::string& layer) const;
    float weight_scale(const std::string& layer) const;
    Shape weight_shape(const std::string& layer) const;
};

void validate(const NetworkDef& def);

/// conv(16)/relu/pool - conv(32)/relu/pool - conv(64)/relu/global-avg-pool, theta2 = topmost conv.
NetworkDef default_network(const Shape& input = {1, 16, 16});

/// Copy of `def` whose theta2 is exactly the named layers; they must be the topmost
/// parameterized layers.
NetworkDef with_theta2(NetworkDef def, const std::vector<std::string>& names);

nlohmann::json to_json(const NetworkDef& def);
NetworkDef network_from_json(const nlohmann::json& j);

struct LayerParams {
    Tensor weight;
    std::optional<Tensor> bias;
};

struct ParamSet {
    std::map<std::string, LayerParams> layers;
    std::map<std::string, Provenance> provenance;

    const LayerParams& at(const std::string& name) const;
    LayerParams& at(const std::string& name);
    std::uint64_t checksum() const;
    std::size_t numel() const;
};

/// Checks key set and shapes against the definition.
void check_params(const NetworkDef& def, const ParamSet& params);

/// Standard-normal weights for ntk_scaled layers, He-normal otherwise; zero biases.
ParamSet build_network(const NetworkDef& def, std::uint64_t seed);

/// Switches theta2 layers to the NTK parametrization without changing the network
/// function. Layers already ntk_scaled are left alone, so applying it twice is a no-op.
std::pair<NetworkDef, ParamSet> adopt_ntk(const NetworkDef& def, const ParamSet& params);

struct BatchNormStats {
    Tensor gamma, beta, mean, var;
    float eps = 1e-5f;
};

/// Inference-mode batch norm over the channel axis of [N,C,...].
Tensor batchnorm_inference(const Tensor& x, const BatchNormStats& bn);
std::pair<Tensor, Tensor> fold_batchnorm(const Tensor& conv_w, const Tensor* conv_b, const BatchNormStats& bn);

/// Applies one layer to a batch. `params` is required for conv/dense.
Tensor apply_layer(const NetworkDef& def, std::size_t index, const LayerParams* params, const Tensor& x);
ops::PoolOptions pool_options(const LayerSpec& spec, const Shape& batch_input);

/// Runs layers [begin, end) on a batch.
Tensor forward_range(const NetworkDef& def, const ParamSet& params, const Tensor& x, std::size_t begin,
                     std::size_t end);

struct FeatureResult {
    Tensor features; // [N,d]
    Tensor z0;       // activation entering the theta2 section
};

FeatureResult forward_features(const NetworkDef& def, const ParamSet& params, const Tensor& x);
/// Theta1 section only, in chunks of `chunk` samples.
Tensor compute_z0(const NetworkDef& def, const ParamSet& params, const Tensor& x, std::size_t chunk = 256);
/// Features only, in chunks.
Tensor compute_features(const NetworkDef& def, const ParamSet& params, const Tensor& x, std::size_t chunk = 256);
Tensor flatten_batch(Tensor t);

/// Records layers [begin, end) on a tape. Layers listed in `trainable` become named
/// parameters "<layer>.weight" / "<layer>.bias"; all others are constants.
Tape::Var record_forward(Tape& tape, const NetworkDef& def, const ParamSet& params, Tape::Var x, std::size_t begin,
                         std::size_t end, const std::set<std::string>& trainable);

} // namespace gradfeat
