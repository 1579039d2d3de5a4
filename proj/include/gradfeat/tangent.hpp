#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "gradfeat/netdef.hpp"
#include "gradfeat/tensor.hpp"

namespace gradfeat {

/// Per-layer tangent weights (w~, b~) mirroring the theta2 portion of a ParamSet.
/// Flattened in definition order (weight, then bias) this is the vector w2.
struct TangentParams {
    std::map<std::string, LayerParams> layers;

    static TangentParams zeros(const NetworkDef& def, const ParamSet& params);
    /// I.i.d. standard normal entries.
    static TangentParams random(const NetworkDef& def, const ParamSet& params, std::uint64_t seed);

    std::size_t numel() const;
    double dot(const TangentParams& other) const;
    double norm() const;
    void scale(float alpha);
    void axpy(float alpha, const TangentParams& x);

    std::vector<double> flatten(const NetworkDef& def) const;
    static TangentParams unflatten(const NetworkDef& def, const ParamSet& params, const std::vector<double>& flat);
};

/// Theta2 of `params` viewed as a TangentParams (used to perturb or measure theta2).
TangentParams theta2_of(const NetworkDef& def, const ParamSet& params);
/// params with theta2 replaced by theta2 + alpha * delta.
ParamSet perturb_theta2(const NetworkDef& def, const ParamSet& params, const TangentParams& delta, float alpha = 1.0f);

/// Throws DimensionError naming the first layer whose tangent does not mirror theta2.
void check_mirror(const NetworkDef& def, const ParamSet& params, const TangentParams& w2);

struct JvpResult {
    Tensor features; // f(x), bit-identical to forward_features
    Tensor tangent;  // J(x) w2, [N,d]
};

/// Forward-mode pass through the theta2 section starting at the cached boundary
/// activation z0 with a zero seed tangent. Linear layers propagate
///   t_out = h(z; w~, b~) + h(t_in; w, 0),
/// ReLU multiplies by the primal mask (z >= 0), pooling applies its primal routing.
JvpResult jvp_forward(const NetworkDef& def, const ParamSet& params, const TangentParams& w2, const Tensor& z0);

/// omega^T jf per sample: [N,d] x [d,c] -> [N,c].
Tensor head_jvp(const Tensor& omega, const Tensor& jf);

/// sum_n J(x_n)^T u_n as a theta2 mirror, by one reverse pass through the theta2 section.
TangentParams vjp_theta2(const NetworkDef& def, const ParamSet& params, const Tensor& z0, const Tensor& u);

} // namespace gradfeat
