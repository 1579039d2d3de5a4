#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "gradfeat/tensor.hpp"

// Neural-network operator set. All ops are pure functions over Tensor values;
// optional biases are passed as nullable pointers.
namespace gradfeat::ops {

// Row-major GEMM kernels, C += A*B with the named operand transposed.
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c);
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const float* a_t, const float* b, float* c);
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b_t, float* c);

struct Conv2dOptions {
    std::size_t stride = 1;
    std::size_t pad = 0;
    // Multiplies the weight contribution only (NTK parametrization); the bias is unscaled.
    float weight_scale = 1.0f;
};

Shape conv2d_output_shape(const Shape& input, const Shape& weight, std::size_t stride, std::size_t pad);

/// Lowers a [N,C,H,W] batch into a [C*kh*kw, N*H'*W'] column matrix (zero padding).
Tensor im2col(const Tensor& input, std::size_t kh, std::size_t kw, std::size_t stride, std::size_t pad);
/// Adjoint of im2col: scatters-adds columns back into an input-shaped tensor.
Tensor col2im(const Tensor& cols, const Shape& input_shape, std::size_t kh, std::size_t kw, std::size_t stride,
              std::size_t pad);

/// Cross-correlation of a lowered input with `weight`; `output_shape` is [N,K,H',W'].
Tensor conv2d_lowered(const Tensor& cols, const Shape& output_shape, const Tensor& weight, const Tensor* bias,
                      float weight_scale);
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor* bias, const Conv2dOptions& opt = {});

Tensor conv2d_backward_input(const Tensor& dout, const Tensor& weight, const Shape& input_shape,
                             const Conv2dOptions& opt);
Tensor conv2d_backward_weight(const Tensor& dout, const Tensor& cols, const Shape& weight_shape, float weight_scale);
Tensor conv2d_backward_bias(const Tensor& dout);

/// input [N,d] times weight [d,c] (+ bias [c]).
Tensor dense(const Tensor& input, const Tensor& weight, const Tensor* bias, float weight_scale = 1.0f);
Tensor dense_backward_input(const Tensor& dout, const Tensor& weight, float weight_scale);
Tensor dense_backward_weight(const Tensor& dout, const Tensor& input, float weight_scale);
Tensor dense_backward_bias(const Tensor& dout);

struct ReluResult {
    Tensor output;
    // 1 where the input was >= 0. Zero passes gradient.
    std::vector<std::uint8_t> mask;
};

ReluResult relu(const Tensor& input);
Tensor apply_mask(const Tensor& t, std::span<const std::uint8_t> mask);

enum class PoolKind { avg, max };

struct PoolOptions {
    PoolKind kind = PoolKind::avg;
    std::size_t window = 2;
    std::size_t stride = 2;
};

struct PoolResult {
    Tensor output;
    // Flat input index selected for each output element (max pooling only).
    std::vector<std::size_t> argmax;
};

Shape pool_output_shape(const Shape& input, const PoolOptions& opt);
PoolResult pool(const Tensor& input, const PoolOptions& opt);
/// Applies the pooling's linear action (fixed argmax routing for max) to another tensor
/// of the input's shape.
Tensor pool_linear(const Tensor& t, const PoolOptions& opt, std::span<const std::size_t> argmax);
Tensor pool_backward(const Tensor& dout, const Shape& input_shape, const PoolOptions& opt,
                     std::span<const std::size_t> argmax);

struct CrossEntropyResult {
    double loss = 0.0; // mean over the batch
    Tensor dlogits;    // (softmax - onehot) / N
};

CrossEntropyResult softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

} // namespace gradfeat::ops
