#include "gradfeat/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "gradfeat/error.hpp"

namespace gradfeat::ops {

namespace {

// C[m,n] += A(i,p) * B[p,n], four rows of C at a time so each B row is loaded once
// per four output rows. Every C element accumulates over p in the same order
// regardless of which path computes it.
template <typename AAt>
void gemm_rows(std::size_t m, std::size_t n, std::size_t k, AAt a_at, const float* __restrict b, float* c) {
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
        float* __restrict c0 = c + i * n;
        float* __restrict c1 = c0 + n;
        float* __restrict c2 = c1 + n;
        float* __restrict c3 = c2 + n;
        for (std::size_t p = 0; p < k; ++p) {
            const float a0 = a_at(i, p), a1 = a_at(i + 1, p), a2 = a_at(i + 2, p), a3 = a_at(i + 3, p);
            const float* __restrict bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                const float bv = bp[j];
                c0[j] += a0 * bv;
                c1[j] += a1 * bv;
                c2[j] += a2 * bv;
                c3[j] += a3 * bv;
            }
        }
    }
    for (; i < m; ++i) {
        float* __restrict c0 = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const float a0 = a_at(i, p);
            const float* __restrict bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) c0[j] += a0 * bp[j];
        }
    }
}

void require(bool ok, const std::string& msg) {
    if (!ok) throw DimensionError(msg);
}

} // namespace

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c) {
    gemm_rows(m, n, k, [a, k](std::size_t i, std::size_t p) { return a[i * k + p]; }, b, c);
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const float* a_t, const float* b, float* c) {
    gemm_rows(m, n, k, [a_t, m](std::size_t i, std::size_t p) { return a_t[p * m + i]; }, b, c);
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b_t, float* c) {
    for (std::size_t i = 0; i < m; ++i) {
        const float* ai = a + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const float* bj = b_t + j * k;
            float s = 0.0f;
            for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
            c[i * n + j] += s;
        }
    }
}

Shape conv2d_output_shape(const Shape& input, const Shape& weight, std::size_t stride, std::size_t pad) {
    require(input.size() == 4, "conv2d input must be [N,C,H,W], got " + shape_str(input));
    require(weight.size() == 4, "conv2d weight must be [K,C,kh,kw], got " + shape_str(weight));
    require(input[1] == weight[1], "conv2d channel mismatch: input " + shape_str(input) + " weight " +
                                       shape_str(weight));
    require(stride >= 1, "conv2d stride must be >= 1");
    const std::size_t hp = input[2] + 2 * pad, wp = input[3] + 2 * pad;
    require(weight[2] <= hp && weight[3] <= wp,
            "conv2d kernel " + shape_str(weight) + " exceeds padded input " + shape_str(input));
    return {input[0], weight[0], (hp - weight[2]) / stride + 1, (wp - weight[3]) / stride + 1};
}

Tensor im2col(const Tensor& input, std::size_t kh, std::size_t kw, std::size_t stride, std::size_t pad) {
    require(input.rank() == 4, "im2col input must be rank 4");
    const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    const std::size_t oh = (h + 2 * pad - kh) / stride + 1, ow = (w + 2 * pad - kw) / stride + 1;
    const std::size_t p = oh * ow;
    Tensor cols({c * kh * kw, n * p});
    const float* in = input.data();
    float* out = cols.data();
    for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t ky = 0; ky < kh; ++ky)
            for (std::size_t kx = 0; kx < kw; ++kx) {
                float* row = out + ((ci * kh + ky) * kw + kx) * n * p;
                for (std::size_t ni = 0; ni < n; ++ni) {
                    const float* plane = in + (ni * c + ci) * h * w;
                    for (std::size_t oy = 0; oy < oh; ++oy) {
                        const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
                        float* dst = row + ni * p + oy * ow;
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) {
                            std::fill(dst, dst + ow, 0.0f);
                            continue;
                        }
                        for (std::size_t ox = 0; ox < ow; ++ox) {
                            const auto ix =
                                static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
                            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) ? 0.0f
                                                                                       : plane[iy * w + ix];
                        }
                    }
                }
            }
    return cols;
}

Tensor col2im(const Tensor& cols, const Shape& input_shape, std::size_t kh, std::size_t kw, std::size_t stride,
              std::size_t pad) {
    const std::size_t n = input_shape[0], c = input_shape[1], h = input_shape[2], w = input_shape[3];
    const std::size_t oh = (h + 2 * pad - kh) / stride + 1, ow = (w + 2 * pad - kw) / stride + 1;
    const std::size_t p = oh * ow;
    require(cols.rank() == 2 && cols.dim(0) == c * kh * kw && cols.dim(1) == n * p,
            "col2im: column matrix " + shape_str(cols.shape()) + " does not match input " + shape_str(input_shape));
    Tensor out(input_shape);
    const float* src = cols.data();
    float* dst = out.data();
    for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t ky = 0; ky < kh; ++ky)
            for (std::size_t kx = 0; kx < kw; ++kx) {
                const float* row = src + ((ci * kh + ky) * kw + kx) * n * p;
                for (std::size_t ni = 0; ni < n; ++ni) {
                    float* plane = dst + (ni * c + ci) * h * w;
                    for (std::size_t oy = 0; oy < oh; ++oy) {
                        const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                        for (std::size_t ox = 0; ox < ow; ++ox) {
                            const auto ix =
                                static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                            plane[iy * w + ix] += row[ni * p + oy * ow + ox];
                        }
                    }
                }
            }
    return out;
}

Tensor conv2d_lowered(const Tensor& cols, const Shape& output_shape, const Tensor& weight, const Tensor* bias,
                      float weight_scale) {
    const std::size_t n = output_shape[0], k = output_shape[1], p = output_shape[2] * output_shape[3];
    const std::size_t ckk = weight.numel() / weight.dim(0);
    require(weight.dim(0) == k && cols.dim(0) == ckk && cols.dim(1) == n * p,
            "conv2d: lowered input " + shape_str(cols.shape()) + " incompatible with weight " +
                shape_str(weight.shape()));
    if (bias) require(bias->rank() == 1 && bias->dim(0) == k, "conv2d bias must be [K]");
    std::vector<float> mat(k * n * p, 0.0f);
    gemm_nn(k, n * p, ckk, weight.data(), cols.data(), mat.data());
    Tensor out(output_shape);
    float* o = out.data();
    for (std::size_t ni = 0; ni < n; ++ni)
        for (std::size_t ki = 0; ki < k; ++ki) {
            const float b = bias ? (*bias)[ki] : 0.0f;
            const float* src = mat.data() + ki * n * p + ni * p;
            float* dst = o + (ni * k + ki) * p;
            for (std::size_t j = 0; j < p; ++j) dst[j] = weight_scale * src[j] + b;
        }
    return out;
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor* bias, const Conv2dOptions& opt) {
    const Shape out_shape = conv2d_output_shape(input.shape(), weight.shape(), opt.stride, opt.pad);
    const Tensor cols = im2col(input, weight.dim(2), weight.dim(3), opt.stride, opt.pad);
    return conv2d_lowered(cols, out_shape, weight, bias, opt.weight_scale);
}

namespace {

// [N,K,P] -> [K, N*P]
std::vector<float> channel_major(const Tensor& t) {
    const std::size_t n = t.dim(0), k = t.dim(1), p = t.numel() / (n * k);
    std::vector<float> mat(t.numel());
    for (std::size_t ni = 0; ni < n; ++ni)
        for (std::size_t ki = 0; ki < k; ++ki)
            std::copy_n(t.data() + (ni * k + ki) * p, p, mat.data() + ki * n * p + ni * p);
    return mat;
}

} // namespace

Tensor conv2d_backward_input(const Tensor& dout, const Tensor& weight, const Shape& input_shape,
                             const Conv2dOptions& opt) {
    const Shape out_shape = conv2d_output_shape(input_shape, weight.shape(), opt.stride, opt.pad);
    require(dout.shape() == out_shape, "conv2d backward: cotangent " + shape_str(dout.shape()) + " expected " +
                                           shape_str(out_shape));
    const std::size_t k = weight.dim(0), ckk = weight.numel() / k;
    const std::size_t np = dout.numel() / k;
    const std::vector<float> dmat = channel_major(dout);
    Tensor dcols({ckk, np});
    gemm_tn(ckk, np, k, weight.data(), dmat.data(), dcols.data());
    if (opt.weight_scale != 1.0f)
        for (auto& v : dcols.values()) v *= opt.weight_scale;
    return col2im(dcols, input_shape, weight.dim(2), weight.dim(3), opt.stride, opt.pad);
}

Tensor conv2d_backward_weight(const Tensor& dout, const Tensor& cols, const Shape& weight_shape,
                              float weight_scale) {
    const std::size_t k = weight_shape[0], ckk = shape_numel(weight_shape) / k;
    const std::size_t np = dout.numel() / k;
    require(dout.dim(1) == k && cols.dim(0) == ckk && cols.dim(1) == np, "conv2d backward: weight shape mismatch");
    const std::vector<float> dmat = channel_major(dout);
    std::vector<float> cols_t(np * ckk);
    for (std::size_t r = 0; r < ckk; ++r)
        for (std::size_t j = 0; j < np; ++j) cols_t[j * ckk + r] = cols[r * np + j];
    Tensor dw(weight_shape);
    gemm_nn(k, ckk, np, dmat.data(), cols_t.data(), dw.data());
    if (weight_scale != 1.0f)
        for (auto& v : dw.values()) v *= weight_scale;
    return dw;
}

Tensor conv2d_backward_bias(const Tensor& dout) {
    const std::size_t n = dout.dim(0), k = dout.dim(1), p = dout.numel() / (n * k);
    Tensor db({k});
    for (std::size_t ni = 0; ni < n; ++ni)
        for (std::size_t ki = 0; ki < k; ++ki) {
            const float* src = dout.data() + (ni * k + ki) * p;
            float s = 0.0f;
            for (std::size_t j = 0; j < p; ++j) s += src[j];
            db[ki] += s;
        }
    return db;
}

Tensor dense(const Tensor& input, const Tensor& weight, const Tensor* bias, float weight_scale) {
    require(input.rank() == 2, "dense input must be [N,d], got " + shape_str(input.shape()));
    require(weight.rank() == 2 && weight.dim(0) == input.dim(1),
            "dense: input " + shape_str(input.shape()) + " incompatible with weight " + shape_str(weight.shape()));
    const std::size_t n = input.dim(0), d = input.dim(1), c = weight.dim(1);
    if (bias) require(bias->rank() == 1 && bias->dim(0) == c, "dense bias must be [c]");
    Tensor out({n, c});
    gemm_nn(n, c, d, input.data(), weight.data(), out.data());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) {
            float& o = out[i * c + j];
            o = weight_scale * o + (bias ? (*bias)[j] : 0.0f);
        }
    return out;
}

Tensor dense_backward_input(const Tensor& dout, const Tensor& weight, float weight_scale) {
    const std::size_t n = dout.dim(0), d = weight.dim(0), c = weight.dim(1);
    require(dout.dim(1) == c, "dense backward: cotangent width mismatch");
    Tensor din({n, d});
    gemm_nt(n, d, c, dout.data(), weight.data(), din.data());
    if (weight_scale != 1.0f)
        for (auto& v : din.values()) v *= weight_scale;
    return din;
}

Tensor dense_backward_weight(const Tensor& dout, const Tensor& input, float weight_scale) {
    const std::size_t n = input.dim(0), d = input.dim(1), c = dout.dim(1);
    require(dout.dim(0) == n, "dense backward: batch mismatch");
    Tensor dw({d, c});
    gemm_tn(d, c, n, input.data(), dout.data(), dw.data());
    if (weight_scale != 1.0f)
        for (auto& v : dw.values()) v *= weight_scale;
    return dw;
}

Tensor dense_backward_bias(const Tensor& dout) {
    const std::size_t n = dout.dim(0), c = dout.dim(1);
    Tensor db({c});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) db[j] += dout[i * c + j];
    return db;
}

ReluResult relu(const Tensor& input) {
    ReluResult r{Tensor(input.shape()), std::vector<std::uint8_t>(input.numel())};
    for (std::size_t i = 0; i < input.numel(); ++i) {
        const float v = input[i];
        const bool on = v >= 0.0f;
        r.mask[i] = on ? 1 : 0;
        r.output[i] = on ? v : 0.0f;
    }
    return r;
}

Tensor apply_mask(const Tensor& t, std::span<const std::uint8_t> mask) {
    require(mask.size() == t.numel(), "relu mask size mismatch");
    Tensor out(t.shape());
    for (std::size_t i = 0; i < t.numel(); ++i) out[i] = mask[i] ? t[i] : 0.0f;
    return out;
}

Shape pool_output_shape(const Shape& input, const PoolOptions& opt) {
    require(input.size() == 4, "pool input must be [N,C,H,W], got " + shape_str(input));
    require(opt.window >= 1 && opt.stride >= 1, "pool window and stride must be >= 1");
    require(opt.window <= input[2] && opt.window <= input[3],
            "pool window " + std::to_string(opt.window) + " exceeds spatial size of " + shape_str(input));
    return {input[0], input[1], (input[2] - opt.window) / opt.stride + 1, (input[3] - opt.window) / opt.stride + 1};
}

PoolResult pool(const Tensor& input, const PoolOptions& opt) {
    const Shape os = pool_output_shape(input.shape(), opt);
    const std::size_t planes = os[0] * os[1], h = input.dim(2), w = input.dim(3), oh = os[2], ow = os[3];
    PoolResult r{Tensor(os), {}};
    if (opt.kind == PoolKind::max) r.argmax.resize(r.output.numel());
    const float inv_area = 1.0f / static_cast<float>(opt.window * opt.window);
    for (std::size_t pl = 0; pl < planes; ++pl) {
        const std::size_t base = pl * h * w;
        for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
                const std::size_t o = (pl * oh + oy) * ow + ox;
                if (opt.kind == PoolKind::avg) {
                    float s = 0.0f;
                    for (std::size_t ky = 0; ky < opt.window; ++ky)
                        for (std::size_t kx = 0; kx < opt.window; ++kx)
                            s += input[base + (oy * opt.stride + ky) * w + ox * opt.stride + kx];
                    r.output[o] = s * inv_area;
                } else {
                    std::size_t best = base + oy * opt.stride * w + ox * opt.stride;
                    for (std::size_t ky = 0; ky < opt.window; ++ky)
                        for (std::size_t kx = 0; kx < opt.window; ++kx) {
                            const std::size_t idx = base + (oy * opt.stride + ky) * w + ox * opt.stride + kx;
                            if (input[idx] > input[best]) best = idx; // ties keep the first index
                        }
                    r.argmax[o] = best;
                    r.output[o] = input[best];
                }
            }
    }
    return r;
}

Tensor pool_linear(const Tensor& t, const PoolOptions& opt, std::span<const std::size_t> argmax) {
    if (opt.kind == PoolKind::avg) return pool(t, opt).output;
    const Shape os = pool_output_shape(t.shape(), opt);
    require(argmax.size() == shape_numel(os), "max-pool routing size mismatch");
    Tensor out(os);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = t[argmax[i]];
    return out;
}

Tensor pool_backward(const Tensor& dout, const Shape& input_shape, const PoolOptions& opt,
                     std::span<const std::size_t> argmax) {
    const Shape os = pool_output_shape(input_shape, opt);
    require(dout.shape() == os, "pool backward: cotangent " + shape_str(dout.shape()) + " expected " + shape_str(os));
    Tensor din(input_shape);
    if (opt.kind == PoolKind::max) {
        for (std::size_t i = 0; i < dout.numel(); ++i) din[argmax[i]] += dout[i];
        return din;
    }
    const std::size_t planes = os[0] * os[1], h = input_shape[2], w = input_shape[3], oh = os[2], ow = os[3];
    const float inv_area = 1.0f / static_cast<float>(opt.window * opt.window);
    for (std::size_t pl = 0; pl < planes; ++pl)
        for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
                const float g = dout[(pl * oh + oy) * ow + ox] * inv_area;
                for (std::size_t ky = 0; ky < opt.window; ++ky)
                    for (std::size_t kx = 0; kx < opt.window; ++kx)
                        din[pl * h * w + (oy * opt.stride + ky) * w + ox * opt.stride + kx] += g;
            }
    return din;
}

CrossEntropyResult softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
    require(logits.rank() == 2, "cross-entropy logits must be [N,c], got " + shape_str(logits.shape()));
    const std::size_t n = logits.dim(0), c = logits.dim(1);
    if (labels.size() != n)
        throw DimensionError("cross-entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) +
                             " rows");
    CrossEntropyResult r{0.0, Tensor(logits.shape())};
    const float inv_n = 1.0f / static_cast<float>(n);
    for (std::size_t i = 0; i < n; ++i) {
        const int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= c)
            throw InputError("label " + std::to_string(y) + " at row " + std::to_string(i) + " outside [0," +
                             std::to_string(c) + ")");
        const float* row = logits.data() + i * c;
        const float mx = *std::max_element(row, row + c);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) z += std::exp(static_cast<double>(row[j] - mx));
        const double log_z = std::log(z);
        r.loss += log_z - static_cast<double>(row[y] - mx);
        for (std::size_t j = 0; j < c; ++j) {
            const double p = std::exp(static_cast<double>(row[j] - mx) - log_z);
            r.dlogits[i * c + j] = static_cast<float>(p - (static_cast<std::size_t>(y) == j ? 1.0 : 0.0)) * inv_n;
        }
    }
    r.loss /= static_cast<double>(n);
    return r;
}

} // namespace gradfeat::ops
