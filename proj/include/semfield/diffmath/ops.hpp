#pragma once

#include "semfield/diffmath/tape.hpp"

#include <vector>

namespace semfield {

// Elementwise binary ops broadcast numpy-style; the broadcast itself is a
// recorded primitive so gradients reduce back to the operand shapes.
template <typename S> Var<S> add(const Var<S>& a, const Var<S>& b);
template <typename S> Var<S> sub(const Var<S>& a, const Var<S>& b);
template <typename S> Var<S> mul(const Var<S>& a, const Var<S>& b);
template <typename S> Var<S> div(const Var<S>& a, const Var<S>& b);

template <typename S> Var<S> operator+(const Var<S>& a, const Var<S>& b) { return add(a, b); }
template <typename S> Var<S> operator-(const Var<S>& a, const Var<S>& b) { return sub(a, b); }
template <typename S> Var<S> operator*(const Var<S>& a, const Var<S>& b) { return mul(a, b); }
template <typename S> Var<S> operator/(const Var<S>& a, const Var<S>& b) { return div(a, b); }

template <typename S> Var<S> neg(const Var<S>& x);
template <typename S> Var<S> scale(const Var<S>& x, S factor);
template <typename S> Var<S> add_scalar(const Var<S>& x, S offset);

template <typename S> Var<S> sine(const Var<S>& x);
template <typename S> Var<S> cosine(const Var<S>& x);
template <typename S> Var<S> exp(const Var<S>& x);
template <typename S> Var<S> log(const Var<S>& x);
template <typename S> Var<S> softplus(const Var<S>& x);
template <typename S> Var<S> sigmoid(const Var<S>& x);
template <typename S> Var<S> square(const Var<S>& x);
/// Second derivative is taken as zero everywhere.
template <typename S> Var<S> leaky_relu(const Var<S>& x, S negative_slope);

template <typename S> Var<S> detach(const Var<S>& x) { return Var<S>(x.value()); }

template <typename S> Var<S> reshape(const Var<S>& x, Shape shape);
/// Rank-2 transpose.
template <typename S> Var<S> transpose(const Var<S>& x);
template <typename S> Var<S> permute(const Var<S>& x, const std::vector<int>& order);
template <typename S> Var<S> broadcast_to(const Var<S>& x, const Shape& shape);
/// Adjoint of broadcast_to: sums away broadcast axes.
template <typename S> Var<S> sum_to(const Var<S>& x, const Shape& shape);
template <typename S> Var<S> sum(const Var<S>& x);
template <typename S> Var<S> sum(const Var<S>& x, int axis, bool keepdim = false);
template <typename S> Var<S> mean(const Var<S>& x);
template <typename S> Var<S> concat(const std::vector<Var<S>>& parts, int axis);
template <typename S> Var<S> slice(const Var<S>& x, int axis, int64_t start, int64_t length);
/// Adjoint of slice: embeds x at `start` inside zeros of extent `total` on `axis`.
template <typename S> Var<S> pad_axis(const Var<S>& x, int axis, int64_t start, int64_t total);

/// [m,k] x [k,n].
template <typename S> Var<S> matmul(const Var<S>& a, const Var<S>& b);
/// op(a) · op(b) where op transposes when its flag is set; no copy is made.
template <typename S> Var<S> matmul(const Var<S>& a, const Var<S>& b, bool transpose_a, bool transpose_b);
/// x[..., in] · Wᵀ + b with W [out, in] and optional b [out].
template <typename S> Var<S> linear(const Var<S>& x, const Var<S>& weight, const Var<S>* bias);

struct Conv2dSpec {
  int stride = 1;
  int pad = 0;
};

/// NCHW input, OIHW weight.
template <typename S> Var<S> conv2d(const Var<S>& x, const Var<S>& w, Conv2dSpec spec);
/// Adjoint of conv2d in its input argument.
template <typename S>
Var<S> conv2d_input_grad(const Var<S>& g, const Var<S>& w, const Shape& input_shape, Conv2dSpec spec);
/// Adjoint of conv2d in its weight argument.
template <typename S>
Var<S> conv2d_weight_grad(const Var<S>& x, const Var<S>& g, const Shape& weight_shape, Conv2dSpec spec);

/// Non-overlapping k×k average pooling on NCHW.
template <typename S> Var<S> avg_pool2d(const Var<S>& x, int k);
/// Adjoint of avg_pool2d.
template <typename S> Var<S> avg_unpool2d(const Var<S>& x, int k);

enum class GridInterp { trilinear, tricubic };

/// Samples grid [G, G, G, F] (indexed z, y, x) at points [P, 3] given as
/// (x, y, z) in [-1, 1]; points outside clamp to the boundary. Returns [P, F].
template <typename S>
Var<S> grid_sample_3d(const Var<S>& grid, const Var<S>& points, GridInterp mode = GridInterp::trilinear);

/// Cumulative product along the last axis. `exclusive` shifts by one so the
/// first entry is 1.
template <typename S> Var<S> cumprod(const Var<S>& x, bool exclusive);

/// Along the last axis.
template <typename S> Var<S> softmax(const Var<S>& x);
template <typename S> Var<S> log_softmax(const Var<S>& x);

/// sin(gamma ⊙ (h + bias) + beta) with h [B, P, N], bias [N], gamma and
/// beta [B, N] broadcast over P.
template <typename S>
Var<S> film_sine(const Var<S>& h, const Var<S>& bias, const Var<S>& gamma, const Var<S>& beta);

namespace kernels {

/// Reference convolution by direct loops; the default path uses im2col + GEMM.
template <typename S>
Tensor<S> conv2d_direct(const Tensor<S>& x, const Tensor<S>& w, Conv2dSpec spec);
template <typename S>
Tensor<S> conv2d_gemm(const Tensor<S>& x, const Tensor<S>& w, Conv2dSpec spec);

}  // namespace kernels

}  // namespace semfield
