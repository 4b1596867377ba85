#pragma once

#include <span>
#include <vector>

#include "numerics/tensor.hpp"

namespace frn {

// Elementwise binary ops broadcast numpy-style.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);

Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor square(const Tensor& a);
Tensor sigmoid(const Tensor& a);
/// x * sigmoid(x)
Tensor silu(const Tensor& a);
/// log(1 + exp(x)), stable for large |x|.
Tensor softplus(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor sum_axis(const Tensor& a, std::size_t axis, bool keepdim = false);
Tensor mean_axis(const Tensor& a, std::size_t axis, bool keepdim = false);

Tensor broadcast_to(const Tensor& a, const Shape& shape);
Tensor reshape(const Tensor& a, Shape shape);
Tensor permute(const Tensor& a, const std::vector<std::size_t>& dims);
/// Swaps the last two axes.
Tensor transpose(const Tensor& a);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end);

/// [..., M, K] x [..., K, N] -> [..., M, N] with broadcast batch dims. Rank-1
/// operands are promoted to a row (left) or column (right) and squeezed back.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Normalizes over `axis` to zero mean and unit variance, then applies the
/// per-channel affine gamma/beta (each of length shape[axis]).
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                  std::size_t axis);

/// Dense 2-D convolution. x: [Ci,H,W], w: [Co,Ci,kh,kw], bias: [Co] or undefined.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride,
              std::size_t padding);
/// Depthwise 2-D convolution. x: [C,H,W], w: [C,k,k], bias: [C] or undefined.
Tensor dwconv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t padding);
/// Nearest-neighbour 2x upsampling of [C,H,W].
Tensor upsample_nearest2x(const Tensor& x);

/// Alias kept for call sites that read better with operators.
inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

}  // namespace frn
