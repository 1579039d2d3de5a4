#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gradfeat/netdef.hpp"
#include "gradfeat/tangent.hpp"
#include "gradfeat/tensor.hpp"

// Brute-force reference computations in 64-bit arithmetic. Nothing here calls
// into ops::, the tape or the tangent pass; the forward pass is plain loops.
namespace gradfeat::oracle {

struct Array64 {
    Shape shape;
    std::vector<double> data;

    Array64() = default;
    explicit Array64(Shape s, double fill = 0.0);
    static Array64 from(const Tensor& t);
    std::size_t numel() const { return data.size(); }
};

/// Parameters keyed "<layer>.weight" / "<layer>.bias".
using Params64 = std::map<std::string, std::vector<double>>;

Params64 to64(const ParamSet& params);
/// Params shifted along a tangent direction: theta2 + alpha * w2.
Params64 shifted(const Params64& p, const TangentParams& w2, double alpha);

struct Trace {
    Array64 output;                        // [N,d]
    std::vector<double> relu_inputs;       // theta2-section ReLU pre-activations
    std::vector<std::size_t> pool_argmax;  // theta2-section max-pool winners
    std::size_t pool_near_ties = 0;        // max-pool windows whose top two differ by < 1e-9
};

/// Layers [begin, end) with naive loops. Records kink data for layers at or past
/// `watch_from`.
Trace reference_forward(const NetworkDef& def, const Params64& p, const Array64& x, std::size_t begin,
                        std::size_t end, std::size_t watch_from);
/// Whole network on images, kink data for the theta2 section.
Trace reference_features(const NetworkDef& def, const Params64& p, const Tensor& x);

struct KinkCheck {
    bool kink = false;
    std::string reason;
};

/// Central difference (f(theta2 + eps w2) - f(theta2 - eps w2)) / (2 eps), [N,d].
Array64 finite_diff_jvp(const NetworkDef& def, const ParamSet& params, const TangentParams& w2, const Tensor& x,
                        double eps = 1e-4, KinkCheck* kink = nullptr);

inline constexpr std::size_t kJacobianLimit = 10000;

/// [N*d, |theta2|]; row n*d + i is output i of sample n, columns follow
/// TangentParams::flatten order. Refuses above kJacobianLimit parameters.
Array64 explicit_jacobian(const NetworkDef& def, const ParamSet& params, const Tensor& x, double eps = 1e-4);
std::vector<double> jacobian_times(const Array64& J, const std::vector<double>& v);
std::vector<double> jacobian_transpose_times(const Array64& J, const std::vector<double>& u);

struct TaylorResult {
    double residual_norm = 0.0; // ||F - g_hat||_2 over the batch
    double linear_norm = 0.0;   // ||omega_bar^T J Delta||_2 over the batch
    double mean_residual = 0.0; // mean per-sample residual norm
};

/// Compares the deep model F at (theta2 + Delta, omega + Omega) with the linear model
/// g_hat(w1 = omega + Omega, w2 = Delta). The deep side is evaluated in 64-bit, the
/// tangent term comes from tangent::jvp_forward.
TaylorResult taylor_residual(const NetworkDef& def, const ParamSet& params, const Tensor& omega,
                             const TangentParams& delta, const Tensor& big_omega, const Tensor& x);

/// Central-difference gradient of a scalar function.
std::vector<double> fd_gradient(const std::function<double(const std::vector<double>&)>& f,
                                std::vector<double> point, double eps);

/// Mean softmax cross-entropy of head(network(x)) in 64-bit. `head_w` is [d,c].
double reference_loss(const NetworkDef& def, const Params64& p, const std::vector<double>& head_w,
                      const std::vector<double>& head_b, const Tensor& x, std::span<const int> labels);

/// Relative error ||a - b|| / max(||b||, floor).
double relative_error(std::span<const double> a, std::span<const double> b, double floor = 1e-12);

struct OracleReport {
    std::string name;
    std::size_t trials = 0;
    std::size_t excluded = 0;
    std::vector<std::string> exclusion_reasons;
    double max_error = 0.0;
    double mean_error = 0.0;
    std::string tolerance_name;
    double tolerance = 0.0;
    bool passed = false;
    double seconds = 0.0;
    nlohmann::json detail = nlohmann::json::object();

    nlohmann::json to_json() const;
};

/// JVP against finite differences over random (x, w2) trials, one sample per trial.
OracleReport verify_jvp(const NetworkDef& def, const ParamSet& params, std::size_t trials, std::uint64_t seed,
                        double eps = 1e-4, double tol = 1e-3);
/// omega^T J w2 and J^T u against the materialized Jacobian.
OracleReport verify_jacobian(const NetworkDef& def, const ParamSet& params, std::size_t trials, std::uint64_t seed,
                             double tol = 1e-5);
/// <u, J w2> = <J^T u, w2>.
OracleReport verify_adjoint(const NetworkDef& def, const ParamSet& params, std::size_t trials, std::uint64_t seed,
                            double tol = 1e-4);
/// Residual ratios over the sweep {1e-1, 5e-2, 2.5e-2} * ||theta2||.
OracleReport verify_taylor(const NetworkDef& def, const ParamSet& params, std::size_t samples, std::uint64_t seed);

/// A tiny network whose theta2 (top conv, ReLU, dense) has fewer than 1000 parameters.
NetworkDef tiny_network();
/// Random parameters with non-zero biases, so exact ReLU kinks have measure zero.
ParamSet tiny_params(const NetworkDef& def, std::uint64_t seed);

} // namespace gradfeat::oracle
