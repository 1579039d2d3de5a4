#include "gradfeat/oracle.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>

#include "gradfeat/error.hpp"

namespace gradfeat::oracle {

Array64::Array64(Shape s, double fill) : shape(std::move(s)), data(shape_numel(shape), fill) {}

Array64 Array64::from(const Tensor& t) {
    Array64 a;
    a.shape = t.shape();
    a.data.assign(t.values().begin(), t.values().end());
    return a;
}

Params64 to64(const ParamSet& params) {
    Params64 p;
    for (const auto& [name, lp] : params.layers) {
        p[name + ".weight"].assign(lp.weight.values().begin(), lp.weight.values().end());
        if (lp.bias) p[name + ".bias"].assign(lp.bias->values().begin(), lp.bias->values().end());
    }
    return p;
}

Params64 shifted(const Params64& p, const TangentParams& w2, double alpha) {
    Params64 out = p;
    auto add = [&](const std::string& key, const Tensor& t) {
        auto& v = out.at(key);
        if (v.size() != t.numel()) throw DimensionError("tangent '" + key + "' does not match the parameter");
        for (std::size_t i = 0; i < v.size(); ++i) v[i] += alpha * static_cast<double>(t[i]);
    };
    for (const auto& [name, lp] : w2.layers) {
        add(name + ".weight", lp.weight);
        if (lp.bias) add(name + ".bias", *lp.bias);
    }
    return out;
}

namespace {

double layer_scale(const LayerSpec& spec, const Shape& in) {
    if (!spec.ntk_scaled) return 1.0;
    const double fan = spec.kind == LayerKind::conv ? static_cast<double>(in[1] * spec.kernel * spec.kernel)
                                                    : static_cast<double>(in[1]);
    return 1.0 / std::sqrt(fan);
}

Array64 ref_conv(const Array64& x, const std::vector<double>& w, const std::vector<double>* b, const LayerSpec& s,
                 double scale) {
    const std::size_t n = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3];
    const std::size_t k = s.out, kh = s.kernel, kw = s.kernel;
    const std::size_t oh = (h + 2 * s.pad - kh) / s.stride + 1, ow = (wd + 2 * s.pad - kw) / s.stride + 1;
    Array64 y({n, k, oh, ow});
    for (std::size_t in = 0; in < n; ++in)
        for (std::size_t ok = 0; ok < k; ++ok)
            for (std::size_t i = 0; i < oh; ++i)
                for (std::size_t j = 0; j < ow; ++j) {
                    double acc = 0.0;
                    for (std::size_t ic = 0; ic < c; ++ic)
                        for (std::size_t u = 0; u < kh; ++u)
                            for (std::size_t v = 0; v < kw; ++v) {
                                const long r = static_cast<long>(i * s.stride + u) - static_cast<long>(s.pad);
                                const long q = static_cast<long>(j * s.stride + v) - static_cast<long>(s.pad);
                                if (r < 0 || q < 0 || r >= static_cast<long>(h) || q >= static_cast<long>(wd)) continue;
                                acc += w[((ok * c + ic) * kh + u) * kw + v] *
                                       x.data[((in * c + ic) * h + static_cast<std::size_t>(r)) * wd +
                                              static_cast<std::size_t>(q)];
                            }
                    y.data[((in * k + ok) * oh + i) * ow + j] = scale * acc + (b ? (*b)[ok] : 0.0);
                }
    return y;
}

Array64 ref_dense(const Array64& x, const std::vector<double>& w, const std::vector<double>* b, std::size_t out,
                  double scale) {
    const std::size_t n = x.shape[0], d = x.numel() / n;
    Array64 y({n, out});
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t o = 0; o < out; ++o) {
            double acc = 0.0;
            for (std::size_t i = 0; i < d; ++i) acc += x.data[r * d + i] * w[i * out + o];
            y.data[r * out + o] = scale * acc + (b ? (*b)[o] : 0.0);
        }
    return y;
}

Array64 ref_pool(const Array64& x, const LayerSpec& s, bool watch, Trace& trace) {
    const std::size_t n = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3];
    const std::size_t win = s.global ? h : s.window, st = s.global ? 1 : s.stride;
    const std::size_t oh = (h - win) / st + 1, ow = (wd - win) / st + 1;
    Array64 y({n, c, oh, ow});
    for (std::size_t p = 0; p < n * c; ++p)
        for (std::size_t i = 0; i < oh; ++i)
            for (std::size_t j = 0; j < ow; ++j) {
                const double* plane = &x.data[p * h * wd];
                double out;
                if (s.pool_kind == ops::PoolKind::avg) {
                    double acc = 0.0;
                    for (std::size_t u = 0; u < win; ++u)
                        for (std::size_t v = 0; v < win; ++v) acc += plane[(i * st + u) * wd + j * st + v];
                    out = acc / static_cast<double>(win * win);
                } else {
                    std::size_t best = (i * st) * wd + j * st;
                    double second = -INFINITY;
                    for (std::size_t u = 0; u < win; ++u)
                        for (std::size_t v = 0; v < win; ++v) {
                            const std::size_t at = (i * st + u) * wd + j * st + v;
                            if (at == best) continue;
                            if (plane[at] > plane[best]) {
                                second = plane[best];
                                best = at;
                            } else {
                                second = std::max(second, plane[at]);
                            }
                        }
                    out = plane[best];
                    if (watch) {
                        trace.pool_argmax.push_back(best);
                        if (plane[best] - second < 1e-9) ++trace.pool_near_ties;
                    }
                }
                y.data[(p * oh + i) * ow + j] = out;
            }
    return y;
}

const std::vector<double>* find(const Params64& p, const std::string& key) {
    auto it = p.find(key);
    return it == p.end() ? nullptr : &it->second;
}

} // namespace

Trace reference_forward(const NetworkDef& def, const Params64& p, const Array64& x, std::size_t begin,
                        std::size_t end, std::size_t watch_from) {
    Trace trace;
    Array64 h = x;
    for (std::size_t li = begin; li < end; ++li) {
        const auto& s = def.layers[li];
        const bool watch = li >= watch_from;
        switch (s.kind) {
        case LayerKind::conv: {
            const auto* w = find(p, s.name + ".weight");
            if (!w) throw InputError("no parameters for layer '" + s.name + "'");
            h = ref_conv(h, *w, find(p, s.name + ".bias"), s, layer_scale(s, h.shape));
            break;
        }
        case LayerKind::dense: {
            const auto* w = find(p, s.name + ".weight");
            if (!w) throw InputError("no parameters for layer '" + s.name + "'");
            const Shape flat{h.shape[0], h.numel() / h.shape[0]};
            h.shape = flat;
            h = ref_dense(h, *w, find(p, s.name + ".bias"), s.out, layer_scale(s, flat));
            break;
        }
        case LayerKind::relu:
            for (auto& v : h.data) {
                if (watch) trace.relu_inputs.push_back(v);
                v = v > 0.0 ? v : 0.0;
            }
            break;
        case LayerKind::pool: h = ref_pool(h, s, watch, trace); break;
        case LayerKind::flatten: h.shape = {h.shape[0], h.numel() / h.shape[0]}; break;
        }
    }
    h.shape = {h.shape[0], h.numel() / h.shape[0]};
    trace.output = std::move(h);
    return trace;
}

Trace reference_features(const NetworkDef& def, const Params64& p, const Tensor& x) {
    return reference_forward(def, p, Array64::from(x), 0, def.layers.size(), def.boundary_layer());
}

Array64 finite_diff_jvp(const NetworkDef& def, const ParamSet& params, const TangentParams& w2, const Tensor& x,
                        double eps, KinkCheck* kink) {
    if (!(eps > 0.0)) throw InputError("finite-difference step must be positive");
    const Params64 p = to64(params);
    const std::size_t boundary = def.boundary_layer(), end = def.layers.size();
    const Array64 z0 = reference_forward(def, p, Array64::from(x), 0, boundary, end).output;
    Array64 z0_shaped = z0;
    {
        Shape s{x.dim(0)};
        const auto shapes = def.shapes();
        for (auto d : shapes[boundary]) s.push_back(d);
        z0_shaped.shape = s;
    }
    const Trace plus = reference_forward(def, shifted(p, w2, eps), z0_shaped, boundary, end, boundary);
    const Trace minus = reference_forward(def, shifted(p, w2, -eps), z0_shaped, boundary, end, boundary);
    Array64 out(plus.output.shape);
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = (plus.output.data[i] - minus.output.data[i]) / (2 * eps);

    if (kink) {
        *kink = {};
        const Trace center = reference_forward(def, p, z0_shaped, boundary, end, boundary);
        for (std::size_t i = 0; i < center.relu_inputs.size() && !kink->kink; ++i) {
            if (std::abs(center.relu_inputs[i]) < 1e-6)
                *kink = {true, "relu input within 1e-6 of zero"};
            else if ((plus.relu_inputs[i] >= 0.0) != (minus.relu_inputs[i] >= 0.0))
                *kink = {true, "relu mask changes inside the stencil"};
        }
        if (!kink->kink && center.pool_near_ties) *kink = {true, "max-pool near tie"};
        if (!kink->kink && plus.pool_argmax != minus.pool_argmax) *kink = {true, "max-pool winner changes"};
    }
    return out;
}

namespace {

// Theta2 coordinates in TangentParams::flatten order.
std::vector<std::pair<std::string, std::size_t>> theta2_coords(const NetworkDef& def, const Params64& p) {
    std::vector<std::pair<std::string, std::size_t>> coords;
    for (const auto& name : def.theta2_names())
        for (const char* part : {".weight", ".bias"}) {
            const auto* v = find(p, name + part);
            if (!v) continue;
            for (std::size_t i = 0; i < v->size(); ++i) coords.emplace_back(name + part, i);
        }
    return coords;
}

Array64 boundary_input(const NetworkDef& def, const Params64& p, const Tensor& x) {
    const std::size_t boundary = def.boundary_layer();
    Array64 z0 = reference_forward(def, p, Array64::from(x), 0, boundary, def.layers.size()).output;
    Shape s{x.dim(0)};
    const auto shapes = def.shapes();
    for (auto d : shapes[boundary]) s.push_back(d);
    z0.shape = s;
    return z0;
}

} // namespace

Array64 explicit_jacobian(const NetworkDef& def, const ParamSet& params, const Tensor& x, double eps) {
    Params64 p = to64(params);
    const auto coords = theta2_coords(def, p);
    if (coords.size() > kJacobianLimit)
        throw InputError("explicit Jacobian refused: theta2 has " + std::to_string(coords.size()) +
                         " parameters, limit is " + std::to_string(kJacobianLimit));
    const std::size_t boundary = def.boundary_layer(), end = def.layers.size();
    const Array64 z0 = boundary_input(def, p, x);
    const std::size_t rows = x.dim(0) * def.feature_dim();
    Array64 J({rows, coords.size()});
    for (std::size_t j = 0; j < coords.size(); ++j) {
        double& v = p.at(coords[j].first)[coords[j].second];
        const double saved = v;
        v = saved + eps;
        const Array64 fp = reference_forward(def, p, z0, boundary, end, end).output;
        v = saved - eps;
        const Array64 fm = reference_forward(def, p, z0, boundary, end, end).output;
        v = saved;
        for (std::size_t r = 0; r < rows; ++r) J.data[r * coords.size() + j] = (fp.data[r] - fm.data[r]) / (2 * eps);
    }
    return J;
}

std::vector<double> jacobian_times(const Array64& J, const std::vector<double>& v) {
    const std::size_t rows = J.shape[0], cols = J.shape[1];
    if (v.size() != cols) throw DimensionError("vector length does not match Jacobian columns");
    std::vector<double> out(rows, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out[r] += J.data[r * cols + c] * v[c];
    return out;
}

std::vector<double> jacobian_transpose_times(const Array64& J, const std::vector<double>& u) {
    const std::size_t rows = J.shape[0], cols = J.shape[1];
    if (u.size() != rows) throw DimensionError("vector length does not match Jacobian rows");
    std::vector<double> out(cols, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out[c] += J.data[r * cols + c] * u[r];
    return out;
}

TaylorResult taylor_residual(const NetworkDef& def, const ParamSet& params, const Tensor& omega,
                             const TangentParams& delta, const Tensor& big_omega, const Tensor& x) {
    const std::size_t d = def.feature_dim();
    if (omega.rank() != 2 || omega.dim(0) != d) throw DimensionError("omega must be [d,c]");
    if (big_omega.shape() != omega.shape()) throw DimensionError("Omega must have the shape of omega");
    check_mirror(def, params, delta);
    const std::size_t c = omega.dim(1), n = x.dim(0);
    const Params64 p = to64(params);
    const std::size_t boundary = def.boundary_layer(), end = def.layers.size();
    const Array64 z0 = boundary_input(def, p, x);
    const Array64 f0 = reference_forward(def, p, z0, boundary, end, end).output;
    const Array64 fd = reference_forward(def, shifted(p, delta, 1.0), z0, boundary, end, end).output;
    const Tensor jf = jvp_forward(def, params, delta, compute_z0(def, params, x)).tangent;

    TaylorResult r;
    double total_sq = 0.0, linear_sq = 0.0, per_sample = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
        double sample_sq = 0.0;
        for (std::size_t k = 0; k < c; ++k) {
            double deep = 0.0, base = 0.0, lin = 0.0;
            for (std::size_t i = 0; i < d; ++i) {
                const double w1 = static_cast<double>(omega[i * c + k]) + static_cast<double>(big_omega[i * c + k]);
                deep += w1 * fd.data[s * d + i];
                base += w1 * f0.data[s * d + i];
                lin += static_cast<double>(omega[i * c + k]) * static_cast<double>(jf[s * d + i]);
            }
            const double res = deep - (base + lin);
            sample_sq += res * res;
            linear_sq += lin * lin;
        }
        total_sq += sample_sq;
        per_sample += std::sqrt(sample_sq);
    }
    r.residual_norm = std::sqrt(total_sq);
    r.linear_norm = std::sqrt(linear_sq);
    r.mean_residual = per_sample / static_cast<double>(n);
    return r;
}

std::vector<double> fd_gradient(const std::function<double(const std::vector<double>&)>& f,
                                std::vector<double> point, double eps) {
    std::vector<double> g(point.size());
    for (std::size_t i = 0; i < point.size(); ++i) {
        const double saved = point[i];
        point[i] = saved + eps;
        const double fp = f(point);
        point[i] = saved - eps;
        const double fm = f(point);
        point[i] = saved;
        g[i] = (fp - fm) / (2 * eps);
    }
    return g;
}

double reference_loss(const NetworkDef& def, const Params64& p, const std::vector<double>& head_w,
                      const std::vector<double>& head_b, const Tensor& x, std::span<const int> labels) {
    const Array64 f = reference_forward(def, p, Array64::from(x), 0, def.layers.size(), def.layers.size()).output;
    const std::size_t n = f.shape[0], d = f.shape[1], c = head_b.size();
    if (head_w.size() != d * c) throw DimensionError("head does not match the feature dimension");
    if (labels.size() != n) throw DimensionError("label count does not match the batch");
    double loss = 0.0;
    std::vector<double> z(c);
    for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t k = 0; k < c; ++k) {
            z[k] = head_b[k];
            for (std::size_t i = 0; i < d; ++i) z[k] += f.data[s * d + i] * head_w[i * c + k];
        }
        const double m = *std::max_element(z.begin(), z.end());
        double sum = 0.0;
        for (double v : z) sum += std::exp(v - m);
        loss += m + std::log(sum) - z[static_cast<std::size_t>(labels[s])];
    }
    return loss / static_cast<double>(n);
}

double relative_error(std::span<const double> a, std::span<const double> b, double floor) {
    if (a.size() != b.size()) throw DimensionError("relative_error: length mismatch");
    double diff = 0.0, ref = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        ref += b[i] * b[i];
    }
    return std::sqrt(diff) / std::max(std::sqrt(ref), floor);
}

nlohmann::json OracleReport::to_json() const {
    return {{"name", name},
            {"trials", trials},
            {"excluded", excluded},
            {"exclusion_reasons", exclusion_reasons},
            {"max_error", max_error},
            {"mean_error", mean_error},
            {"tolerance_name", tolerance_name},
            {"tolerance", tolerance},
            {"passed", passed},
            {"seconds", seconds},
            {"detail", detail}};
}

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

Tensor random_images(const NetworkDef& def, std::size_t n, std::mt19937_64& rng) {
    Shape s{n};
    for (auto d : def.input) s.push_back(d);
    Tensor x(s);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    for (auto& v : x.values()) v = u(rng);
    return x;
}

Tensor random_normal(const Shape& s, std::mt19937_64& rng) {
    Tensor t(s);
    std::normal_distribution<float> normal(0.0f, 1.0f);
    for (auto& v : t.values()) v = normal(rng);
    return t;
}

TangentParams unit_direction(const NetworkDef& def, const ParamSet& params, std::uint64_t seed) {
    TangentParams w = TangentParams::random(def, params, seed);
    w.scale(static_cast<float>(1.0 / w.norm()));
    return w;
}

std::vector<double> as64(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

void finish(OracleReport& r, const std::vector<double>& errors) {
    r.max_error = errors.empty() ? 0.0 : *std::max_element(errors.begin(), errors.end());
    double sum = 0.0;
    for (double e : errors) sum += e;
    r.mean_error = errors.empty() ? 0.0 : sum / static_cast<double>(errors.size());
    r.passed = !errors.empty() && r.max_error < r.tolerance;
}

} // namespace

OracleReport verify_jvp(const NetworkDef& def, const ParamSet& params, std::size_t trials, std::uint64_t seed,
                        double eps, double tol) {
    const auto t0 = Clock::now();
    OracleReport r{.name = "jvp_vs_finite_difference", .trials = trials};
    r.tolerance_name = "relative";
    r.tolerance = tol;
    std::mt19937_64 rng(seed);
    std::vector<double> errors;
    for (std::size_t t = 0; t < trials; ++t) {
        const Tensor x = random_images(def, 1, rng);
        const TangentParams w2 = unit_direction(def, params, rng());
        KinkCheck kink;
        const Array64 fd = finite_diff_jvp(def, params, w2, x, eps, &kink);
        if (kink.kink) {
            ++r.excluded;
            r.exclusion_reasons.push_back("trial " + std::to_string(t) + ": " + kink.reason);
            continue;
        }
        const Tensor jf = jvp_forward(def, params, w2, compute_z0(def, params, x)).tangent;
        errors.push_back(relative_error(as64(jf), fd.data, 1e-8));
    }
    r.detail["eps"] = eps;
    r.detail["checked"] = errors.size();
    finish(r, errors);
    r.seconds = since(t0);
    return r;
}

OracleReport verify_jacobian(const NetworkDef& def, const ParamSet& params, std::size_t trials, std::uint64_t seed,
                             double tol) {
    const auto t0 = Clock::now();
    OracleReport r{.name = "explicit_jacobian", .trials = trials};
    r.tolerance_name = "absolute";
    r.tolerance = tol;
    std::mt19937_64 rng(seed);
    const std::size_t n = 3, d = def.feature_dim(), c = 4;
    const Params64 p = to64(params);
    std::vector<float> rows;
    for (std::size_t tries = 0; rows.size() < n * shape_numel(def.input) && tries < 1000; ++tries) {
        const Tensor one = random_images(def, 1, rng);
        const Trace tr = reference_features(def, p, one);
        // The Jacobian columns are central differences, so keep pre-activations well clear of
        // zero relative to the parameter step.
        const bool kink = tr.pool_near_ties || std::any_of(tr.relu_inputs.begin(), tr.relu_inputs.end(),
                                                           [](double v) { return std::abs(v) < 1e-3; });
        if (kink) {
            ++r.excluded;
            continue;
        }
        rows.insert(rows.end(), one.values().begin(), one.values().end());
    }
    if (rows.size() < n * shape_numel(def.input)) {
        r.seconds = since(t0);
        return r;
    }
    Shape xs{n};
    for (auto v : def.input) xs.push_back(v);
    const Tensor x(xs, std::move(rows));
    const Array64 J = explicit_jacobian(def, params, x);
    const Tensor z0 = compute_z0(def, params, x);
    double head_err = 0.0, vjp_err = 0.0;
    for (std::size_t t = 0; t < trials; ++t) {
        const TangentParams w2 = unit_direction(def, params, rng());
        Tensor omega = random_normal({d, c}, rng);
        omega = scaled(omega, static_cast<float>(1.0 / std::sqrt(static_cast<double>(d))));
        const Tensor head = head_jvp(omega, jvp_forward(def, params, w2, z0).tangent);
        const std::vector<double> jw = jacobian_times(J, w2.flatten(def));
        for (std::size_t s = 0; s < n; ++s)
            for (std::size_t k = 0; k < c; ++k) {
                double ref = 0.0;
                for (std::size_t i = 0; i < d; ++i) ref += static_cast<double>(omega[i * c + k]) * jw[s * d + i];
                head_err = std::max(head_err, std::abs(ref - static_cast<double>(head[s * c + k])));
            }

        Tensor u = random_normal({n, d}, rng);
        u = scaled(u, static_cast<float>(1.0 / norm64(u)));
        const std::vector<double> jtu = jacobian_transpose_times(J, as64(u));
        const std::vector<double> vjp = vjp_theta2(def, params, z0, u).flatten(def);
        for (std::size_t i = 0; i < jtu.size(); ++i) vjp_err = std::max(vjp_err, std::abs(jtu[i] - vjp[i]));
    }
    r.detail["theta2_params"] = J.shape[1];
    r.detail["head_jvp_max_abs"] = head_err;
    r.detail["vjp_max_abs"] = vjp_err;
    finish(r, {head_err, vjp_err});
    r.seconds = since(t0);
    return r;
}

OracleReport verify_adjoint(const NetworkDef& def, const ParamSet& params, std::size_t trials, std::uint64_t seed,
                            double tol) {
    const auto t0 = Clock::now();
    OracleReport r{.name = "adjoint_identity", .trials = trials};
    r.tolerance_name = "relative";
    r.tolerance = tol;
    std::mt19937_64 rng(seed);
    std::vector<double> errors;
    std::size_t passing = 0;
    for (std::size_t t = 0; t < trials; ++t) {
        const Tensor x = random_images(def, 2, rng);
        const Tensor z0 = compute_z0(def, params, x);
        const TangentParams w2 = TangentParams::random(def, params, rng());
        const Tensor jf = jvp_forward(def, params, w2, z0).tangent;
        const Tensor u = random_normal(jf.shape(), rng);
        const double lhs = dot64(u, jf);
        const double rhs = vjp_theta2(def, params, z0, u).dot(w2);
        const double err = std::abs(lhs - rhs) / std::max({std::abs(lhs), std::abs(rhs), 1e-12});
        errors.push_back(err);
        if (err < tol) ++passing;
    }
    r.detail["passing_trials"] = passing;
    finish(r, errors);
    r.seconds = since(t0);
    return r;
}

OracleReport verify_taylor(const NetworkDef& def, const ParamSet& params, std::size_t samples, std::uint64_t seed) {
    const auto t0 = Clock::now();
    OracleReport r{.name = "taylor_scaling"};
    r.tolerance_name = "halving ratio in [3,5]";
    r.tolerance = 5.0;
    std::mt19937_64 rng(seed);
    const std::size_t d = def.feature_dim(), c = 10;

    // Keep inputs whose theta2 pre-activations stay clear of the ReLU kink.
    const Params64 p = to64(params);
    std::vector<std::size_t> keep;
    const Tensor pool = random_images(def, samples, rng);
    for (std::size_t s = 0; s < samples; ++s) {
        const Trace tr = reference_features(def, p, pool.slice_rows(s, s + 1));
        const bool kink = std::any_of(tr.relu_inputs.begin(), tr.relu_inputs.end(),
                                      [](double v) { return std::abs(v) < 1e-6; });
        if (kink || tr.pool_near_ties) {
            ++r.excluded;
            r.exclusion_reasons.push_back("sample " + std::to_string(s) + ": kink at the expansion point");
        } else {
            keep.push_back(s);
        }
    }
    r.trials = samples;
    if (keep.empty()) {
        r.seconds = since(t0);
        return r;
    }
    const Tensor x = pool.gather_rows(keep);

    Tensor omega = random_normal({d, c}, rng);
    omega = scaled(omega, static_cast<float>(1.0 / std::sqrt(static_cast<double>(d))));
    const TangentParams dir = unit_direction(def, params, rng());
    Tensor om_dir = random_normal({d, c}, rng);
    om_dir = scaled(om_dir, static_cast<float>(1.0 / norm64(om_dir)));
    const double theta_norm = theta2_of(def, params).norm();
    const double omega_norm = norm64(omega);

    const TaylorResult at_zero = taylor_residual(def, params, omega, TangentParams::zeros(def, params),
                                                 scaled(om_dir, static_cast<float>(omega_norm)), x);

    std::vector<double> residuals;
    for (double t : {1e-1, 5e-2, 2.5e-2}) {
        TangentParams delta = dir;
        delta.scale(static_cast<float>(t * theta_norm));
        const Tensor big = scaled(om_dir, static_cast<float>(t * omega_norm));
        residuals.push_back(taylor_residual(def, params, omega, delta, big, x).mean_residual);
    }
    std::vector<double> ratios{residuals[0] / residuals[1], residuals[1] / residuals[2]};
    r.detail["residuals"] = residuals;
    r.detail["ratios"] = ratios;
    r.detail["residual_at_zero"] = at_zero.residual_norm;
    r.detail["samples_used"] = keep.size();
    r.max_error = *std::max_element(ratios.begin(), ratios.end());
    r.mean_error = *std::min_element(ratios.begin(), ratios.end());
    r.passed = at_zero.residual_norm == 0.0 && r.mean_error >= 3.0 && r.max_error <= 5.0;
    r.seconds = since(t0);
    return r;
}

ParamSet tiny_params(const NetworkDef& def, std::uint64_t seed) {
    ParamSet ps = build_network(def, seed);
    std::mt19937_64 rng(seed ^ 0x5bd1e995ULL);
    std::normal_distribution<float> normal(0.0f, 0.5f);
    for (auto& [name, lp] : ps.layers)
        if (lp.bias)
            for (auto& v : lp.bias->values()) v = normal(rng);
    return ps;
}

NetworkDef tiny_network() {
    NetworkDef def;
    def.input = {1, 6, 6};
    def.layers = {LayerSpec::conv("conv1", 2, 3), LayerSpec::relu(), LayerSpec::conv("conv2", 3, 3),
                  LayerSpec::relu(), LayerSpec::flatten(), LayerSpec::dense("fc", 4)};
    def.split_index = 1;
    validate(def);
    return def;
}

} // namespace gradfeat::oracle
