#pragma once

#include <cstddef>
#include <vector>

#include "tensor.hpp"

// Differentiable primitives. Each op records itself on the active tape when
// any input requires a gradient; otherwise it is a plain forward computation.
namespace trust {

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes);
Tensor reshape(const Tensor& a, Shape shape);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scalar_mul(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
/// a[..., n] + bias[n], bias repeated over leading axes.
Tensor add_rowwise(const Tensor& a, const Tensor& bias);
/// a[C, H, W] + bias[C].
Tensor add_channel(const Tensor& a, const Tensor& bias);

Tensor relu(const Tensor& x);
/// tanh approximation.
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor absolute(const Tensor& x);

/// Max-subtracted softmax along `axis`.
Tensor softmax(const Tensor& x, std::size_t axis);
/// Normalizes over the last axis, then applies learnable scale/shift.
Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t count);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);

/// Cross-correlation of input[C_in, H, W] with kernel[C_out, C_in, kh, kw].
Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride = 1,
              std::size_t padding = 0);
Tensor upsample_nearest(const Tensor& input, std::size_t factor);
/// Half-pixel-centred bilinear resize of input[C, H, W].
Tensor resize_bilinear(const Tensor& input, std::size_t out_h, std::size_t out_w);
/// Cell (i, j) averages rows [floor(i*H/out_h), floor((i+1)*H/out_h)) and the
/// analogous columns.
Tensor adaptive_avg_pool(const Tensor& input, std::size_t out_h, std::size_t out_w);
/// Non-overlapping size x size max pooling.
Tensor max_pool2d(const Tensor& input, std::size_t size);

Tensor reduce_sum(const Tensor& x);
Tensor reduce_mean(const Tensor& x);

}  // namespace trust
