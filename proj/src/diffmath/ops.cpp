#include "semfield/diffmath/ops.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

namespace semfield {
namespace {

template <typename S>
Var<S> make(const char* op, Tensor<S> value, const std::vector<Var<S>>& inputs, BackwardFn<S> fn,
            bool twice_differentiable = true) {
  Tape<S>* tape = common_tape(inputs);
  if (tape == nullptr) return Var<S>(std::move(value));
  return tape->record(op, std::move(value), inputs, std::move(fn), twice_differentiable);
}

template <typename S, typename F>
Tensor<S> map_values(const Tensor<S>& x, F&& f) {
  Tensor<S> out(x.shape());
  auto dst = out.mutable_values();
  Eigen::Map<ArrayX<S>>(dst.data(), static_cast<Eigen::Index>(dst.size())) = f(x.array());
  return out;
}

template <typename S, typename F>
Tensor<S> zip_values(const Tensor<S>& a, const Tensor<S>& b, F&& f) {
  Tensor<S> out(a.shape());
  auto dst = out.mutable_values();
  Eigen::Map<ArrayX<S>>(dst.data(), static_cast<Eigen::Index>(dst.size())) = f(a.array(), b.array());
  return out;
}

int normalize_axis(int axis, int rank, const char* op) {
  const int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) {
    throw ShapeError(op, "axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  }
  return a;
}

/// Splits `shape` around `axis` into (outer, extent, inner).
std::array<int64_t, 3> split_at(const Shape& shape, int axis) {
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= shape[static_cast<size_t>(i)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < shape.size(); ++i) inner *= shape[i];
  return {outer, shape[static_cast<size_t>(axis)], inner};
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  const size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (size_t i = 0; i < r; ++i) {
    const int64_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const int64_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) throw ShapeError(op, a, b);
    out[i] = std::max(da, db);
  }
  return out;
}

/// Strides of `small` laid against `big` (right-aligned), zero on broadcast axes.
std::vector<int64_t> broadcast_strides(const Shape& small, const Shape& big, const char* op) {
  const size_t r = big.size();
  if (small.size() > r) throw ShapeError(op, small, big);
  std::vector<int64_t> strides(r, 0);
  int64_t stride = 1;
  for (size_t k = 0; k < small.size(); ++k) {
    const size_t si = small.size() - 1 - k;
    const size_t bi = r - 1 - k;
    if (small[si] == big[bi]) {
      strides[bi] = small[si] == 1 ? 0 : stride;
    } else if (small[si] != 1) {
      throw ShapeError(op, small, big);
    }
    stride *= small[si];
  }
  return strides;
}

/// Visits every element of `big` in row-major order, calling
/// f(big_offset_of_row_start, small_offset_of_row_start, inner_len, inner_stride).
template <typename F>
void for_each_row(const Shape& big, const std::vector<int64_t>& strides, F&& f) {
  const size_t r = big.size();
  if (r == 0) {
    f(0, 0, 1, 0);
    return;
  }
  const int64_t inner = big[r - 1];
  const int64_t inner_stride = strides[r - 1];
  const int64_t rows = inner == 0 ? 0 : numel(big) / inner;
  std::vector<int64_t> idx(r, 0);
  int64_t small_off = 0;
  for (int64_t row = 0; row < rows; ++row) {
    f(row * inner, small_off, inner, inner_stride);
    for (int d = static_cast<int>(r) - 2; d >= 0; --d) {
      const auto ud = static_cast<size_t>(d);
      ++idx[ud];
      small_off += strides[ud];
      if (idx[ud] < big[ud]) break;
      small_off -= strides[ud] * big[ud];
      idx[ud] = 0;
    }
  }
}

template <typename S>
Tensor<S> broadcast_kernel(const Tensor<S>& x, const Shape& shape) {
  const auto strides = broadcast_strides(x.shape(), shape, "broadcast_to");
  Tensor<S> out(shape);
  auto dst = out.mutable_values();
  const S* src = x.data();
  for_each_row(shape, strides, [&](int64_t o, int64_t s, int64_t n, int64_t st) {
    if (st == 1) {
      std::copy(src + s, src + s + n, dst.data() + o);
    } else {
      std::fill(dst.data() + o, dst.data() + o + n, src[s]);
    }
  });
  return out;
}

template <typename S>
Tensor<S> sum_to_kernel(const Tensor<S>& x, const Shape& shape) {
  const auto strides = broadcast_strides(shape, x.shape(), "sum_to");
  Tensor<S> out(shape);
  auto dst = out.mutable_values();
  const S* src = x.data();
  for_each_row(x.shape(), strides, [&](int64_t o, int64_t s, int64_t n, int64_t st) {
    if (st == 1) {
      for (int64_t i = 0; i < n; ++i) dst[static_cast<size_t>(s + i)] += src[o + i];
    } else {
      S acc = 0;
      for (int64_t i = 0; i < n; ++i) acc += src[o + i];
      dst[static_cast<size_t>(s)] += acc;
    }
  });
  return out;
}

template <typename S>
Tensor<S> matmul_kernel(const Tensor<S>& a, const Tensor<S>& b, bool ta, bool tb) {
  if (a.rank() != 2 || b.rank() != 2) throw ShapeError("matmul", a.shape(), b.shape());
  const int64_t m = ta ? a.dim(1) : a.dim(0), k = ta ? a.dim(0) : a.dim(1);
  const int64_t kb = tb ? b.dim(1) : b.dim(0), n = tb ? b.dim(0) : b.dim(1);
  if (k != kb) throw ShapeError("matmul", a.shape(), b.shape());
  Tensor<S> out({m, n});
  auto dst = out.mutable_values();
  Eigen::Map<RowMatrix<S>> c(dst.data(), m, n);
  const auto am = a.matrix();
  const auto bm = b.matrix();
  if (!ta && !tb) c.noalias() = am * bm;
  if (!ta && tb) c.noalias() = am * bm.transpose();
  if (ta && !tb) c.noalias() = am.transpose() * bm;
  if (ta && tb) c.noalias() = am.transpose() * bm.transpose();
  return out;
}

struct ConvGeometry {
  int64_t n, c, h, w, o, kh, kw, ho, wo;
};

ConvGeometry conv_geometry(const Shape& x, const Shape& w, Conv2dSpec spec, const char* op) {
  if (x.size() != 4 || w.size() != 4 || x[1] != w[1]) throw ShapeError(op, x, w);
  if (spec.stride < 1 || spec.pad < 0) throw ShapeError(op, "invalid stride/pad");
  ConvGeometry g{x[0], x[1], x[2], x[3], w[0], w[2], w[3], 0, 0};
  g.ho = (g.h + 2 * spec.pad - g.kh) / spec.stride + 1;
  g.wo = (g.w + 2 * spec.pad - g.kw) / spec.stride + 1;
  if (g.ho <= 0 || g.wo <= 0) throw ShapeError(op, x, w);
  return g;
}

/// col [C*kh*kw, ho*wo] for one image.
template <typename S>
void im2col(const S* img, const ConvGeometry& g, Conv2dSpec spec, S* col) {
  const int64_t hw = g.ho * g.wo;
  for (int64_t c = 0; c < g.c; ++c) {
    for (int64_t ky = 0; ky < g.kh; ++ky) {
      for (int64_t kx = 0; kx < g.kw; ++kx) {
        S* row = col + ((c * g.kh + ky) * g.kw + kx) * hw;
        for (int64_t oy = 0; oy < g.ho; ++oy) {
          const int64_t iy = oy * spec.stride - spec.pad + ky;
          for (int64_t ox = 0; ox < g.wo; ++ox) {
            const int64_t ix = ox * spec.stride - spec.pad + kx;
            row[oy * g.wo + ox] =
                (iy >= 0 && iy < g.h && ix >= 0 && ix < g.w) ? img[(c * g.h + iy) * g.w + ix] : S(0);
          }
        }
      }
    }
  }
}

template <typename S>
void col2im(const S* col, const ConvGeometry& g, Conv2dSpec spec, S* img) {
  const int64_t hw = g.ho * g.wo;
  for (int64_t c = 0; c < g.c; ++c) {
    for (int64_t ky = 0; ky < g.kh; ++ky) {
      for (int64_t kx = 0; kx < g.kw; ++kx) {
        const S* row = col + ((c * g.kh + ky) * g.kw + kx) * hw;
        for (int64_t oy = 0; oy < g.ho; ++oy) {
          const int64_t iy = oy * spec.stride - spec.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          for (int64_t ox = 0; ox < g.wo; ++ox) {
            const int64_t ix = ox * spec.stride - spec.pad + kx;
            if (ix >= 0 && ix < g.w) img[(c * g.h + iy) * g.w + ix] += row[oy * g.wo + ox];
          }
        }
      }
    }
  }
}

template <typename S>
Tensor<S> conv_input_grad_kernel(const Tensor<S>& grad, const Tensor<S>& w, const Shape& in_shape,
                                 Conv2dSpec spec) {
  const ConvGeometry g = conv_geometry(in_shape, w.shape(), spec, "conv2d_input_grad");
  if (grad.shape() != Shape{g.n, g.o, g.ho, g.wo}) throw ShapeError("conv2d_input_grad", grad.shape(), w.shape());
  const int64_t ckk = g.c * g.kh * g.kw, hw = g.ho * g.wo;
  Tensor<S> out(in_shape);
  auto dst = out.mutable_values();
  Eigen::Map<const RowMatrix<S>> wm(w.data(), g.o, ckk);
  RowMatrix<S> col(ckk, hw);
  for (int64_t n = 0; n < g.n; ++n) {
    Eigen::Map<const RowMatrix<S>> gm(grad.data() + n * g.o * hw, g.o, hw);
    col.noalias() = wm.transpose() * gm;
    col2im(col.data(), g, spec, dst.data() + n * g.c * g.h * g.w);
  }
  return out;
}

template <typename S>
Tensor<S> conv_weight_grad_kernel(const Tensor<S>& x, const Tensor<S>& grad, const Shape& w_shape,
                                  Conv2dSpec spec) {
  const ConvGeometry g = conv_geometry(x.shape(), w_shape, spec, "conv2d_weight_grad");
  if (grad.shape() != Shape{g.n, g.o, g.ho, g.wo}) throw ShapeError("conv2d_weight_grad", x.shape(), grad.shape());
  const int64_t ckk = g.c * g.kh * g.kw, hw = g.ho * g.wo;
  Tensor<S> out(w_shape);
  auto dst = out.mutable_values();
  Eigen::Map<RowMatrix<S>> wm(dst.data(), g.o, ckk);
  RowMatrix<S> col(ckk, hw);
  for (int64_t n = 0; n < g.n; ++n) {
    im2col(x.data() + n * g.c * g.h * g.w, g, spec, col.data());
    Eigen::Map<const RowMatrix<S>> gm(grad.data() + n * g.o * hw, g.o, hw);
    wm.noalias() += gm * col.transpose();
  }
  return out;
}

template <typename S>
Tensor<S> pool_kernel(const Tensor<S>& x, int k) {
  if (x.rank() != 4 || k < 1 || x.dim(2) % k != 0 || x.dim(3) % k != 0) {
    throw ShapeError("avg_pool2d", "input " + shape_string(x.shape()) + " not divisible by " + std::to_string(k));
  }
  const int64_t nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3), ho = h / k, wo = w / k;
  Tensor<S> out({x.dim(0), x.dim(1), ho, wo});
  auto dst = out.mutable_values();
  const S inv = S(1) / S(k * k);
  const S* src = x.data();
  for (int64_t p = 0; p < nc; ++p) {
    for (int64_t y = 0; y < h; ++y) {
      for (int64_t xx = 0; xx < w; ++xx) {
        dst[static_cast<size_t>((p * ho + y / k) * wo + xx / k)] += src[(p * h + y) * w + xx] * inv;
      }
    }
  }
  return out;
}

template <typename S>
Tensor<S> unpool_kernel(const Tensor<S>& x, int k) {
  if (x.rank() != 4 || k < 1) throw ShapeError("avg_unpool2d", "bad input " + shape_string(x.shape()));
  const int64_t nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor<S> out({x.dim(0), x.dim(1), h * k, w * k});
  auto dst = out.mutable_values();
  const S inv = S(1) / S(k * k);
  const S* src = x.data();
  for (int64_t p = 0; p < nc; ++p) {
    for (int64_t y = 0; y < h * k; ++y) {
      for (int64_t xx = 0; xx < w * k; ++xx) {
        dst[static_cast<size_t>((p * h * k + y) * w * k + xx)] = src[(p * h + y / k) * w + xx / k] * inv;
      }
    }
  }
  return out;
}

/// Interpolation taps along one axis for continuous index u in [0, G-1].
struct Taps {
  int count = 0;
  std::array<int64_t, 4> index{};
  std::array<double, 4> weight{};
  std::array<double, 4> dweight{};  // d weight / d u
};

Taps axis_taps(double u, int64_t size, GridInterp mode, bool clamped) {
  Taps t;
  if (size == 1) {
    t.count = 1;
    t.index[0] = 0;
    t.weight[0] = 1.0;
    return t;
  }
  const double dscale = clamped ? 0.0 : 1.0;
  if (mode == GridInterp::trilinear) {
    const int64_t i0 = std::min<int64_t>(static_cast<int64_t>(std::floor(u)), size - 2);
    const double f = u - static_cast<double>(i0);
    t.count = 2;
    t.index = {i0, i0 + 1, 0, 0};
    t.weight = {1.0 - f, f, 0, 0};
    t.dweight = {-dscale, dscale, 0, 0};
    return t;
  }
  // Catmull-Rom cubic convolution (a = -0.5), indices clamped at the border.
  const int64_t i1 = std::min<int64_t>(static_cast<int64_t>(std::floor(u)), size - 2);
  const double f = u - static_cast<double>(i1);
  const double f2 = f * f, f3 = f2 * f;
  t.count = 4;
  for (int k = 0; k < 4; ++k) t.index[static_cast<size_t>(k)] = std::clamp<int64_t>(i1 - 1 + k, 0, size - 1);
  t.weight = {-0.5 * f3 + f2 - 0.5 * f, 1.5 * f3 - 2.5 * f2 + 1.0, -1.5 * f3 + 2.0 * f2 + 0.5 * f,
              0.5 * f3 - 0.5 * f2};
  t.dweight = {dscale * (-1.5 * f2 + 2.0 * f - 0.5), dscale * (4.5 * f2 - 5.0 * f),
               dscale * (-4.5 * f2 + 4.0 * f + 0.5), dscale * (1.5 * f2 - f)};
  return t;
}

struct GridDims {
  int64_t gz, gy, gx, f;
};

GridDims grid_dims(const Shape& grid, const Shape& pts) {
  if (grid.size() != 4 || pts.size() != 2 || pts[1] != 3) throw ShapeError("grid_sample_3d", grid, pts);
  return {grid[0], grid[1], grid[2], grid[3]};
}

/// Continuous index along an axis of `size` for normalized coordinate p.
double grid_coord(double p, int64_t size, bool* clamped) {
  const double u = (p + 1.0) * 0.5 * static_cast<double>(size - 1);
  const double hi = static_cast<double>(size - 1);
  *clamped = u <= 0.0 || u >= hi;
  return std::clamp(u, 0.0, hi);
}

template <typename S, typename Visit>
void grid_visit(const Tensor<S>& grid, const Tensor<S>& pts, GridInterp mode, Visit&& visit) {
  const GridDims d = grid_dims(grid.shape(), pts.shape());
  const int64_t np = pts.dim(0);
  for (int64_t p = 0; p < np; ++p) {
    bool cx, cy, cz;
    const double ux = grid_coord(static_cast<double>(pts[p * 3 + 0]), d.gx, &cx);
    const double uy = grid_coord(static_cast<double>(pts[p * 3 + 1]), d.gy, &cy);
    const double uz = grid_coord(static_cast<double>(pts[p * 3 + 2]), d.gz, &cz);
    const Taps tx = axis_taps(ux, d.gx, mode, cx);
    const Taps ty = axis_taps(uy, d.gy, mode, cy);
    const Taps tz = axis_taps(uz, d.gz, mode, cz);
    const std::array<double, 3> du_dp = {0.5 * static_cast<double>(d.gx - 1), 0.5 * static_cast<double>(d.gy - 1),
                                         0.5 * static_cast<double>(d.gz - 1)};
    for (int a = 0; a < tz.count; ++a) {
      for (int b = 0; b < ty.count; ++b) {
        for (int c = 0; c < tx.count; ++c) {
          const auto ua = static_cast<size_t>(a), ub = static_cast<size_t>(b), uc = static_cast<size_t>(c);
          const int64_t cell = ((tz.index[ua] * d.gy + ty.index[ub]) * d.gx + tx.index[uc]) * d.f;
          const double w = tz.weight[ua] * ty.weight[ub] * tx.weight[uc];
          const std::array<double, 3> dw = {tz.weight[ua] * ty.weight[ub] * tx.dweight[uc] * du_dp[0],
                                            tz.weight[ua] * ty.dweight[ub] * tx.weight[uc] * du_dp[1],
                                            tz.dweight[ua] * ty.weight[ub] * tx.weight[uc] * du_dp[2]};
          visit(p, cell, w, dw);
        }
      }
    }
  }
}

template <typename S>
Tensor<S> softmax_kernel(const Tensor<S>& x) {
  const int64_t k = x.dim(-1), rows = x.size() / k;
  Tensor<S> out(x.shape());
  auto dst = out.mutable_values();
  const S* src = x.data();
  for (int64_t r = 0; r < rows; ++r) {
    const S* in = src + r * k;
    S* o = dst.data() + r * k;
    const S m = *std::max_element(in, in + k);
    S z = 0;
    for (int64_t i = 0; i < k; ++i) z += (o[i] = std::exp(in[i] - m));
    for (int64_t i = 0; i < k; ++i) o[i] /= z;
  }
  return out;
}

template <typename S>
void require_same(const Var<S>& a, const Var<S>& b, const char* op) {
  if (a.shape() != b.shape()) throw ShapeError(op, a.shape(), b.shape());
}

template <typename S>
std::pair<Var<S>, Var<S>> broadcast_pair(const Var<S>& a, const Var<S>& b, const char* op) {
  if (a.shape() == b.shape()) return {a, b};
  const Shape s = broadcast_shape(a.shape(), b.shape(), op);
  return {a.shape() == s ? a : broadcast_to(a, s), b.shape() == s ? b : broadcast_to(b, s)};
}

}  // namespace

// ---------------------------------------------------------------- elementwise

template <typename S>
Var<S> add(const Var<S>& a0, const Var<S>& b0) {
  auto [a, b] = broadcast_pair(a0, b0, "add");
  return make<S>("add", zip_values(a.value(), b.value(), [](auto x, auto y) { return x + y; }), {a, b},
                 [](const Var<S>& g, const std::vector<bool>&) { return std::vector<Var<S>>{g, g}; });
}

template <typename S>
Var<S> sub(const Var<S>& a0, const Var<S>& b0) {
  auto [a, b] = broadcast_pair(a0, b0, "sub");
  return make<S>("sub", zip_values(a.value(), b.value(), [](auto x, auto y) { return x - y; }), {a, b},
                 [](const Var<S>& g, const std::vector<bool>& needs) {
                   return std::vector<Var<S>>{g, needs[1] ? neg(g) : Var<S>()};
                 });
}

template <typename S>
Var<S> mul(const Var<S>& a0, const Var<S>& b0) {
  auto [a, b] = broadcast_pair(a0, b0, "mul");
  return make<S>("mul", zip_values(a.value(), b.value(), [](auto x, auto y) { return x * y; }), {a, b},
                 [a, b](const Var<S>& g, const std::vector<bool>& needs) {
                   return std::vector<Var<S>>{needs[0] ? mul(g, b) : Var<S>(), needs[1] ? mul(g, a) : Var<S>()};
                 });
}

template <typename S>
Var<S> div(const Var<S>& a0, const Var<S>& b0) {
  auto [a, b] = broadcast_pair(a0, b0, "div");
  return make<S>("div", zip_values(a.value(), b.value(), [](auto x, auto y) { return x / y; }), {a, b},
                 [a, b](const Var<S>& g, const std::vector<bool>& needs) {
                   return std::vector<Var<S>>{needs[0] ? div(g, b) : Var<S>(),
                                              needs[1] ? neg(div(mul(g, a), square(b))) : Var<S>()};
                 });
}

template <typename S>
Var<S> neg(const Var<S>& x) {
  return scale(x, S(-1));
}

template <typename S>
Var<S> scale(const Var<S>& x, S factor) {
  return make<S>("scale", map_values(x.value(), [factor](auto v) { return v * factor; }), {x},
                 [factor](const Var<S>& g, const std::vector<bool>&) {
                   return std::vector<Var<S>>{scale(g, factor)};
                 });
}

template <typename S>
Var<S> add_scalar(const Var<S>& x, S offset) {
  return make<S>("add_scalar", map_values(x.value(), [offset](auto v) { return v + offset; }), {x},
                 [](const Var<S>& g, const std::vector<bool>&) { return std::vector<Var<S>>{g}; });
}

template <typename S>
Var<S> sine(const Var<S>& x) {
  return make<S>("sine", map_values(x.value(), [](auto v) { return v.sin(); }), {x},
                 [x](const Var<S>& g, const std::vector<bool>&) { return std::vector<Var<S>>{mul(g, cosine(x))}; });
}

template <typename S>
Var<S> cosine(const Var<S>& x) {
  return make<S>("cosine", map_values(x.value(), [](auto v) { return v.cos(); }), {x},
                 [x](const Var<S>& g, const std::vector<bool>&) {
                   return std::vector<Var<S>>{neg(mul(g, sine(x)))};
                 });
}

template <typename S>
Var<S> exp(const Var<S>& x) {
  return make<S>("exp", map_values(x.value(), [](auto v) { return v.exp(); }), {x},
                 [x](const Var<S>& g, const std::vector<bool>&) { return std::vector<Var<S>>{mul(g, exp(x))}; });
}

template <typename S>
Var<S> log(const Var<S>& x) {
  return make<S>("log", map_values(x.value(), [](auto v) { return v.log(); }), {x},
                 [x](const Var<S>& g, const std::vector<bool>&) { return std::vector<Var<S>>{div(g, x)}; });
}

template <typename S>
Var<S> softplus(const Var<S>& x) {
  // max(v, 0) + log1p(exp(-|v|)) stays finite for large |v|.
  return make<S>("softplus",
                 map_values(x.value(), [](auto v) { return v.max(S(0)) + (-v.abs()).exp().log1p(); }), {x},
                 [x](const Var<S>& g, const std::vector<bool>&) { return std::vector<Var<S>>{mul(g, sigmoid(x))}; });
}

template <typename S>
Var<S> sigmoid(const Var<S>& x) {
  return make<S>("sigmoid", map_values(x.value(), [](auto v) { return S(1) / (S(1) + (-v).exp()); }), {x},
                 [x](const Var<S>& g, const std::vector<bool>&) {
                   const Var<S> y = sigmoid(x);
                   return std::vector<Var<S>>{mul(g, mul(y, add_scalar(neg(y), S(1))))};
                 });
}

template <typename S>
Var<S> square(const Var<S>& x) {
  return make<S>("square", map_values(x.value(), [](auto v) { return v.square(); }), {x},
                 [x](const Var<S>& g, const std::vector<bool>&) {
                   return std::vector<Var<S>>{mul(g, scale(x, S(2)))};
                 });
}

template <typename S>
Var<S> leaky_relu(const Var<S>& x, S slope) {
  Tensor<S> mask = map_values(x.value(), [slope](auto v) { return (v > S(0)).template cast<S>() * (S(1) - slope) + slope; });
  Tensor<S> out = zip_values(x.value(), mask, [](auto v, auto m) { return v * m; });
  return make<S>("leaky_relu", std::move(out), {x}, [mask](const Var<S>& g, const std::vector<bool>&) {
    return std::vector<Var<S>>{mul(g, Var<S>(mask))};
  });
}

// ------------------------------------------------------------------ structure

template <typename S>
Var<S> reshape(const Var<S>& x, Shape shape) {
  Shape in = x.shape();
  return make<S>("reshape", x.value().reshaped(std::move(shape)), {x},
                 [in](const Var<S>& g, const std::vector<bool>&) { return std::vector<Var<S>>{reshape(g, in)}; });
}

template <typename S>
Var<S> transpose(const Var<S>& x) {
  if (x.rank() != 2) throw ShapeError("transpose", "expected rank 2, got " + shape_string(x.shape()));
  Tensor<S> out({x.dim(1), x.dim(0)});
  auto dst = out.mutable_values();
  Eigen::Map<RowMatrix<S>>(dst.data(), x.dim(1), x.dim(0)) = x.value().matrix().transpose();
  return make<S>("transpose", std::move(out), {x},
                 [](const Var<S>& g, const std::vector<bool>&) { return std::vector<Var<S>>{transpose(g)}; });
}

template <typename S>
Var<S> permute(const Var<S>& x, const std::vector<int>& order) {
  const int r = x.rank();
  if (static_cast<int>(order.size()) != r) throw ShapeError("permute", "order rank mismatch for " + shape_string(x.shape()));
  std::vector<int> inverse(static_cast<size_t>(r), -1);
  Shape out_shape(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) {
    const int src = order[static_cast<size_t>(i)];
    if (src < 0 || src >= r || inverse[static_cast<size_t>(src)] != -1) throw ShapeError("permute", "invalid order");
    inverse[static_cast<size_t>(src)] = i;
    out_shape[static_cast<size_t>(i)] = x.shape()[static_cast<size_t>(src)];
  }
  // Source strides expressed in output axis order.
  std::vector<int64_t> in_strides(static_cast<size_t>(r), 1);
  for (int i = r - 2; i >= 0; --i)
    in_strides[static_cast<size_t>(i)] = in_strides[static_cast<size_t>(i) + 1] * x.shape()[static_cast<size_t>(i) + 1];
  std::vector<int64_t> strides(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) strides[static_cast<size_t>(i)] = in_strides[static_cast<size_t>(order[static_cast<size_t>(i)])];
  Tensor<S> out(out_shape);
  auto dst = out.mutable_values();
  const S* src = x.value().data();
  for_each_row(out_shape, strides, [&](int64_t o, int64_t s, int64_t n, int64_t st) {
    for (int64_t i = 0; i < n; ++i) dst[static_cast<size_t>(o + i)] = src[s + i * st];
  });
  return make<S>("permute", std::move(out), {x}, [inverse](const Var<S>& g, const std::vector<bool>&) {
    return std::vector<Var<S>>{permute(g, inverse)};
  });
}

template <typename S>
Var<S> broadcast_to(const Var<S>& x, const Shape& shape) {
  if (x.shape() == shape) return x;
  Shape in = x.shape();
  return make<S>("broadcast_to", broadcast_kernel(x.value(), shape), {x},
                 [in](const Var<S>& g, const std::vector<bool>&) { return std::vector<Var<S>>{sum_to(g, in)}; });
}

template <typename S>
Var<S> sum_to(const Var<S>& x, const Shape& shape) {
  if (x.shape() == shape) return x;
  Shape in = x.shape();
  return make<S>("sum_to", sum_to_kernel(x.value(), shape), {x}, [in](const Var<S>& g, const std::vector<bool>&) {
    return std::vector<Var<S>>{broadcast_to(g, in)};
  });
}

template <typename S>
Var<S> sum(const Var<S>& x) {
  Shape in = x.shape();
  return make<S>("sum", Tensor<S>::scalar(x.value().array().sum()), {x},
                 [in](const Var<S>& g, const std::vector<bool>&) { return std::vector<Var<S>>{broadcast_to(g, in)}; });
}

template <typename S>
Var<S> sum(const Var<S>& x, int axis, bool keepdim) {
  const int a = normalize_axis(axis, x.rank(), "sum");
  const auto [outer, n, inner] = split_at(x.shape(), a);
  Shape kept = x.shape();
  kept[static_cast<size_t>(a)] = 1;
  Shape out_shape = kept;
  if (!keepdim) out_shape.erase(out_shape.begin() + a);
  Tensor<S> out(out_shape);
  auto dst = out.mutable_values();
  const S* src = x.value().data();
  for (int64_t o = 0; o < outer; ++o) {
    S* row = dst.data() + o * inner;
    for (int64_t k = 0; k < n; ++k) {
      const S* in = src + (o * n + k) * inner;
      for (int64_t i = 0; i < inner; ++i) row[i] += in[i];
    }
  }
  Shape in = x.shape();
  return make<S>("sum_axis", std::move(out), {x}, [in, kept](const Var<S>& g, const std::vector<bool>&) {
    return std::vector<Var<S>>{broadcast_to(reshape(g, kept), in)};
  });
}

template <typename S>
Var<S> mean(const Var<S>& x) {
  return scale(sum(x), S(1) / static_cast<S>(x.value().size()));
}

template <typename S>
Var<S> concat(const std::vector<Var<S>>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat", "no inputs");
  const int a = normalize_axis(axis, parts[0].rank(), "concat");
  Shape out_shape = parts[0].shape();
  out_shape[static_cast<size_t>(a)] = 0;
  std::vector<int64_t> extents;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (s.size() != out_shape.size()) throw ShapeError("concat", parts[0].shape(), s);
    for (size_t i = 0; i < s.size(); ++i) {
      if (static_cast<int>(i) != a && s[i] != out_shape[i]) throw ShapeError("concat", parts[0].shape(), s);
    }
    extents.push_back(s[static_cast<size_t>(a)]);
    out_shape[static_cast<size_t>(a)] += s[static_cast<size_t>(a)];
  }
  const auto [outer, total, inner] = split_at(out_shape, a);
  Tensor<S> out(out_shape);
  auto dst = out.mutable_values();
  S* d = dst.data();
  for (int64_t o = 0; o < outer; ++o) {
    for (size_t k = 0; k < parts.size(); ++k) {
      const int64_t chunk = extents[k] * inner;
      const S* src = parts[k].value().data() + o * chunk;
      d = std::copy(src, src + chunk, d);
    }
  }
  return make<S>("concat", std::move(out), parts, [a, extents](const Var<S>& g, const std::vector<bool>& needs) {
    std::vector<Var<S>> grads(extents.size());
    int64_t start = 0;
    for (size_t k = 0; k < extents.size(); ++k) {
      if (needs[k]) grads[k] = slice(g, a, start, extents[k]);
      start += extents[k];
    }
    return grads;
  });
}

template <typename S>
Var<S> slice(const Var<S>& x, int axis, int64_t start, int64_t length) {
  const int a = normalize_axis(axis, x.rank(), "slice");
  const auto [outer, n, inner] = split_at(x.shape(), a);
  if (start < 0 || length < 0 || start + length > n) {
    throw ShapeError("slice", "range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                                  ") outside " + shape_string(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape[static_cast<size_t>(a)] = length;
  Tensor<S> out(out_shape);
  auto dst = out.mutable_values();
  const S* src = x.value().data();
  for (int64_t o = 0; o < outer; ++o) {
    std::copy(src + (o * n + start) * inner, src + (o * n + start + length) * inner, dst.data() + o * length * inner);
  }
  return make<S>("slice", std::move(out), {x}, [a, start, n](const Var<S>& g, const std::vector<bool>&) {
    return std::vector<Var<S>>{pad_axis(g, a, start, n)};
  });
}

template <typename S>
Var<S> pad_axis(const Var<S>& x, int axis, int64_t start, int64_t total) {
  const int a = normalize_axis(axis, x.rank(), "pad_axis");
  const auto [outer, n, inner] = split_at(x.shape(), a);
  if (start < 0 || start + n > total) throw ShapeError("pad_axis", "slice does not fit in extent " + std::to_string(total));
  Shape out_shape = x.shape();
  out_shape[static_cast<size_t>(a)] = total;
  Tensor<S> out(out_shape);
  auto dst = out.mutable_values();
  const S* src = x.value().data();
  for (int64_t o = 0; o < outer; ++o) {
    std::copy(src + o * n * inner, src + (o + 1) * n * inner, dst.data() + (o * total + start) * inner);
  }
  return make<S>("pad_axis", std::move(out), {x}, [a, start, n](const Var<S>& g, const std::vector<bool>&) {
    return std::vector<Var<S>>{slice(g, a, start, n)};
  });
}

// ------------------------------------------------------------- linear algebra

template <typename S>
Var<S> matmul(const Var<S>& a, const Var<S>& b, bool ta, bool tb) {
  return make<S>("matmul", matmul_kernel(a.value(), b.value(), ta, tb), {a, b},
                 [a, b, ta, tb](const Var<S>& g, const std::vector<bool>& needs) {
                   Var<S> da, db;
                   if (needs[0]) da = ta ? matmul(b, g, tb, true) : matmul(g, b, false, !tb);
                   if (needs[1]) db = tb ? matmul(g, a, true, ta) : matmul(a, g, !ta, false);
                   return std::vector<Var<S>>{da, db};
                 });
}

template <typename S>
Var<S> matmul(const Var<S>& a, const Var<S>& b) {
  return matmul(a, b, false, false);
}

template <typename S>
Var<S> linear(const Var<S>& x, const Var<S>& weight, const Var<S>* bias) {
  if (weight.rank() != 2 || x.rank() < 1 || x.dim(-1) != weight.dim(1)) throw ShapeError("linear", x.shape(), weight.shape());
  Shape out_shape = x.shape();
  out_shape.back() = weight.dim(0);
  const Var<S> flat = x.rank() == 2 ? x : reshape(x, {x.value().size() / x.dim(-1), x.dim(-1)});
  Var<S> y = matmul(flat, weight, false, true);
  if (bias != nullptr) y = add(y, *bias);
  return y.shape() == out_shape ? y : reshape(y, out_shape);
}

template <typename S>
Var<S> conv2d(const Var<S>& x, const Var<S>& w, Conv2dSpec spec) {
  Shape xs = x.shape(), ws = w.shape();
  return make<S>("conv2d", kernels::conv2d_gemm(x.value(), w.value(), spec), {x, w},
                 [x, w, xs, ws, spec](const Var<S>& g, const std::vector<bool>& needs) {
                   return std::vector<Var<S>>{needs[0] ? conv2d_input_grad(g, w, xs, spec) : Var<S>(),
                                              needs[1] ? conv2d_weight_grad(x, g, ws, spec) : Var<S>()};
                 });
}

template <typename S>
Var<S> conv2d_input_grad(const Var<S>& g, const Var<S>& w, const Shape& input_shape, Conv2dSpec spec) {
  Shape ws = w.shape();
  return make<S>("conv2d_input_grad", conv_input_grad_kernel(g.value(), w.value(), input_shape, spec), {g, w},
                 [g, w, ws, spec](const Var<S>& h, const std::vector<bool>& needs) {
                   return std::vector<Var<S>>{needs[0] ? conv2d(h, w, spec) : Var<S>(),
                                              needs[1] ? conv2d_weight_grad(h, g, ws, spec) : Var<S>()};
                 });
}

template <typename S>
Var<S> conv2d_weight_grad(const Var<S>& x, const Var<S>& g, const Shape& weight_shape, Conv2dSpec spec) {
  Shape xs = x.shape();
  return make<S>("conv2d_weight_grad", conv_weight_grad_kernel(x.value(), g.value(), weight_shape, spec), {x, g},
                 [x, g, xs, spec](const Var<S>& h, const std::vector<bool>& needs) {
                   return std::vector<Var<S>>{needs[0] ? conv2d_input_grad(g, h, xs, spec) : Var<S>(),
                                              needs[1] ? conv2d(x, h, spec) : Var<S>()};
                 });
}

template <typename S>
Var<S> avg_pool2d(const Var<S>& x, int k) {
  return make<S>("avg_pool2d", pool_kernel(x.value(), k), {x},
                 [k](const Var<S>& g, const std::vector<bool>&) { return std::vector<Var<S>>{avg_unpool2d(g, k)}; });
}

template <typename S>
Var<S> avg_unpool2d(const Var<S>& x, int k) {
  return make<S>("avg_unpool2d", unpool_kernel(x.value(), k), {x},
                 [k](const Var<S>& g, const std::vector<bool>&) { return std::vector<Var<S>>{avg_pool2d(g, k)}; });
}

// --------------------------------------------------------------- field-specific

template <typename S>
Var<S> grid_sample_3d(const Var<S>& grid, const Var<S>& points, GridInterp mode) {
  const GridDims d = grid_dims(grid.shape(), points.shape());
  const int64_t np = points.dim(0);
  Tensor<S> out({np, d.f});
  {
    auto dst = out.mutable_values();
    const S* gv = grid.value().data();
    grid_visit(grid.value(), points.value(), mode,
               [&](int64_t p, int64_t cell, double w, const std::array<double, 3>&) {
                 S* o = dst.data() + p * d.f;
                 const S* src = gv + cell;
                 const S sw = static_cast<S>(w);
                 for (int64_t f = 0; f < d.f; ++f) o[f] += sw * src[f];
               });
  }
  return make<S>(
      "grid_sample_3d", std::move(out), {grid, points},
      [grid, points, mode, d](const Var<S>& g, const std::vector<bool>& needs) {
        Tensor<S> ggrid(grid.shape()), gpts(points.shape());
        auto gg = ggrid.mutable_values();
        auto gp = gpts.mutable_values();
        const S* gv = grid.value().data();
        const S* up = g.value().data();
        grid_visit(grid.value(), points.value(), mode,
                   [&](int64_t p, int64_t cell, double w, const std::array<double, 3>& dw) {
                     const S* gr = up + p * d.f;
                     if (needs[0]) {
                       const S sw = static_cast<S>(w);
                       for (int64_t f = 0; f < d.f; ++f) gg[static_cast<size_t>(cell + f)] += sw * gr[f];
                     }
                     if (needs[1]) {
                       double dot = 0;
                       for (int64_t f = 0; f < d.f; ++f) dot += static_cast<double>(gr[f]) * static_cast<double>(gv[cell + f]);
                       for (size_t k = 0; k < 3; ++k) gp[static_cast<size_t>(p * 3) + k] += static_cast<S>(dot * dw[k]);
                     }
                   });
        return std::vector<Var<S>>{Var<S>(std::move(ggrid)), Var<S>(std::move(gpts))};
      },
      false);
}

template <typename S>
Var<S> cumprod(const Var<S>& x, bool exclusive) {
  const int64_t n = x.dim(-1), rows = x.value().size() / std::max<int64_t>(n, 1);
  Tensor<S> out(x.shape());
  {
    auto dst = out.mutable_values();
    const S* src = x.value().data();
    for (int64_t r = 0; r < rows; ++r) {
      S acc = 1;
      for (int64_t i = 0; i < n; ++i) {
        const int64_t k = r * n + i;
        if (exclusive) {
          dst[static_cast<size_t>(k)] = acc;
          acc *= src[k];
        } else {
          acc *= src[k];
          dst[static_cast<size_t>(k)] = acc;
        }
      }
    }
  }
  return make<S>(
      "cumprod", std::move(out), {x},
      [x, n, rows, exclusive](const Var<S>& g, const std::vector<bool>&) {
        // dx_i = (prod_{j<i} x_j) * tail_i with the tail recurrence below;
        // no division, so zeros in x are handled.
        Tensor<S> gx(x.shape());
        auto dst = gx.mutable_values();
        const S* xv = x.value().data();
        const S* gv = g.value().data();
        std::vector<S> tail(static_cast<size_t>(n));
        for (int64_t r = 0; r < rows; ++r) {
          const S* xs = xv + r * n;
          const S* gs = gv + r * n;
          if (exclusive) {
            tail[static_cast<size_t>(n - 1)] = 0;
            for (int64_t i = n - 2; i >= 0; --i)
              tail[static_cast<size_t>(i)] = gs[i + 1] + xs[i + 1] * tail[static_cast<size_t>(i + 1)];
          } else {
            tail[static_cast<size_t>(n - 1)] = gs[n - 1];
            for (int64_t i = n - 2; i >= 0; --i)
              tail[static_cast<size_t>(i)] = gs[i] + xs[i + 1] * tail[static_cast<size_t>(i + 1)];
          }
          S prefix = 1;
          for (int64_t i = 0; i < n; ++i) {
            dst[static_cast<size_t>(r * n + i)] = prefix * tail[static_cast<size_t>(i)];
            prefix *= xs[i];
          }
        }
        return std::vector<Var<S>>{Var<S>(std::move(gx))};
      },
      false);
}

template <typename S>
Var<S> softmax(const Var<S>& x) {
  return make<S>("softmax", softmax_kernel(x.value()), {x}, [x](const Var<S>& g, const std::vector<bool>&) {
    const Var<S> y = softmax(x);
    return std::vector<Var<S>>{mul(y, sub(g, sum(mul(g, y), -1, true)))};
  });
}

template <typename S>
Var<S> log_softmax(const Var<S>& x) {
  const Tensor<S> p = softmax_kernel(x.value());
  Tensor<S> out = zip_values(x.value(), p, [](auto, auto q) { return q.log(); });
  // Recompute via max-shift for accuracy where probabilities underflow.
  {
    const int64_t k = x.dim(-1), rows = x.value().size() / k;
    auto dst = out.mutable_values();
    const S* src = x.value().data();
    for (int64_t r = 0; r < rows; ++r) {
      const S* in = src + r * k;
      const S m = *std::max_element(in, in + k);
      S z = 0;
      for (int64_t i = 0; i < k; ++i) z += std::exp(in[i] - m);
      const S lz = m + std::log(z);
      for (int64_t i = 0; i < k; ++i) dst[static_cast<size_t>(r * k + i)] = in[i] - lz;
    }
  }
  return make<S>("log_softmax", std::move(out), {x}, [x](const Var<S>& g, const std::vector<bool>&) {
    return std::vector<Var<S>>{sub(g, mul(softmax(x), sum(g, -1, true)))};
  });
}

template <typename S>
Var<S> film_sine(const Var<S>& h, const Var<S>& bias, const Var<S>& gamma, const Var<S>& beta) {
  if (h.rank() != 3) throw ShapeError("film_sine", "expected [B, P, N], got " + shape_string(h.shape()));
  const int64_t nb = h.dim(0), np = h.dim(1), nn = h.dim(2);
  if (bias.shape() != Shape{nn}) throw ShapeError("film_sine", h.shape(), bias.shape());
  if (gamma.shape() != Shape{nb, nn}) throw ShapeError("film_sine", h.shape(), gamma.shape());
  if (beta.shape() != Shape{nb, nn}) throw ShapeError("film_sine", h.shape(), beta.shape());

  Tensor<S> out(h.shape());
  {
    auto dst = out.mutable_values();
    const S* bv = bias.value().data();
    std::vector<S> shift(static_cast<size_t>(nn));
    for (int64_t i = 0; i < nb; ++i) {
      const S* gm = gamma.value().data() + i * nn;
      const S* bt = beta.value().data() + i * nn;
      for (int64_t j = 0; j < nn; ++j) shift[static_cast<size_t>(j)] = gm[j] * bv[j] + bt[j];
      const S* hin = h.value().data() + i * np * nn;
      S* o = dst.data() + i * np * nn;
      for (int64_t p = 0; p < np; ++p)
        for (int64_t j = 0; j < nn; ++j) o[p * nn + j] = hin[p * nn + j] * gm[j] + shift[static_cast<size_t>(j)];
    }
    Eigen::Map<ArrayX<S>> all(dst.data(), static_cast<Eigen::Index>(dst.size()));
    all = all.sin();
  }
  return make<S>(
      "film_sine", std::move(out), {h, bias, gamma, beta},
      [h, bias, gamma, beta, nb, np, nn](const Var<S>& g, const std::vector<bool>& needs) {
        Tensor<S> gh(h.shape()), gb(bias.shape()), gg(gamma.shape()), gbeta(beta.shape());
        auto dh = gh.mutable_values();
        auto db = gb.mutable_values();
        auto dg = gg.mutable_values();
        auto dbeta = gbeta.mutable_values();
        const S* bv = bias.value().data();
        // Pre-activation cosine for the whole batch, vectorized in one pass.
        std::vector<S> shift(static_cast<size_t>(nn));
        Eigen::Array<S, Eigen::Dynamic, 1> cosv(nb * np * nn);
        for (int64_t i = 0; i < nb; ++i) {
          const S* gm = gamma.value().data() + i * nn;
          const S* bt = beta.value().data() + i * nn;
          for (int64_t j = 0; j < nn; ++j) shift[static_cast<size_t>(j)] = gm[j] * bv[j] + bt[j];
          const S* hin = h.value().data() + i * np * nn;
          S* c = cosv.data() + i * np * nn;
          for (int64_t p = 0; p < np; ++p)
            for (int64_t j = 0; j < nn; ++j) c[p * nn + j] = hin[p * nn + j] * gm[j] + shift[static_cast<size_t>(j)];
        }
        cosv = cosv.cos();
        std::vector<S> acc_g(static_cast<size_t>(nn)), acc_beta(static_cast<size_t>(nn));
        for (int64_t i = 0; i < nb; ++i) {
          const S* gm = gamma.value().data() + i * nn;
          const S* __restrict hin = h.value().data() + i * np * nn;
          const S* __restrict up = g.value().data() + i * np * nn;
          const S* __restrict c = cosv.data() + i * np * nn;
          S* __restrict o = dh.data() + i * np * nn;
          std::fill(acc_g.begin(), acc_g.end(), S(0));
          std::fill(acc_beta.begin(), acc_beta.end(), S(0));
          S* __restrict ag = acc_g.data();
          S* __restrict ab = acc_beta.data();
          for (int64_t p = 0; p < np; ++p) {
            for (int64_t j = 0; j < nn; ++j) {
              const int64_t k = p * nn + j;
              const S gp = c[k] * up[k];
              ab[j] += gp;
              ag[j] += gp * (hin[k] + bv[j]);
              o[k] = gp * gm[j];
            }
          }
          for (int64_t j = 0; j < nn; ++j) {
            db[static_cast<size_t>(j)] += ab[j] * gm[j];
            dg[static_cast<size_t>(i * nn + j)] = ag[j];
            dbeta[static_cast<size_t>(i * nn + j)] = ab[j];
          }
        }
        return std::vector<Var<S>>{needs[0] ? Var<S>(std::move(gh)) : Var<S>(),
                                   needs[1] ? Var<S>(std::move(gb)) : Var<S>(),
                                   needs[2] ? Var<S>(std::move(gg)) : Var<S>(),
                                   needs[3] ? Var<S>(std::move(gbeta)) : Var<S>()};
      },
      false);
}

namespace kernels {

template <typename S>
Tensor<S> conv2d_direct(const Tensor<S>& x, const Tensor<S>& w, Conv2dSpec spec) {
  const ConvGeometry g = conv_geometry(x.shape(), w.shape(), spec, "conv2d");
  Tensor<S> out({g.n, g.o, g.ho, g.wo});
  auto dst = out.mutable_values();
  for (int64_t n = 0; n < g.n; ++n)
    for (int64_t o = 0; o < g.o; ++o)
      for (int64_t oy = 0; oy < g.ho; ++oy)
        for (int64_t ox = 0; ox < g.wo; ++ox) {
          S acc = 0;
          for (int64_t c = 0; c < g.c; ++c)
            for (int64_t ky = 0; ky < g.kh; ++ky) {
              const int64_t iy = oy * spec.stride - spec.pad + ky;
              if (iy < 0 || iy >= g.h) continue;
              for (int64_t kx = 0; kx < g.kw; ++kx) {
                const int64_t ix = ox * spec.stride - spec.pad + kx;
                if (ix < 0 || ix >= g.w) continue;
                acc += x[((n * g.c + c) * g.h + iy) * g.w + ix] * w[((o * g.c + c) * g.kh + ky) * g.kw + kx];
              }
            }
          dst[static_cast<size_t>(((n * g.o + o) * g.ho + oy) * g.wo + ox)] = acc;
        }
  return out;
}

template <typename S>
Tensor<S> conv2d_gemm(const Tensor<S>& x, const Tensor<S>& w, Conv2dSpec spec) {
  const ConvGeometry g = conv_geometry(x.shape(), w.shape(), spec, "conv2d");
  const int64_t ckk = g.c * g.kh * g.kw, hw = g.ho * g.wo;
  Tensor<S> out({g.n, g.o, g.ho, g.wo});
  auto dst = out.mutable_values();
  Eigen::Map<const RowMatrix<S>> wm(w.data(), g.o, ckk);
  RowMatrix<S> col(ckk, hw);
  for (int64_t n = 0; n < g.n; ++n) {
    im2col(x.data() + n * g.c * g.h * g.w, g, spec, col.data());
    Eigen::Map<RowMatrix<S>>(dst.data() + n * g.o * hw, g.o, hw).noalias() = wm * col;
  }
  return out;
}

}  // namespace kernels

#define SEMFIELD_INSTANTIATE_OPS(S)                                                                  \
  template Var<S> add(const Var<S>&, const Var<S>&);                                                 \
  template Var<S> sub(const Var<S>&, const Var<S>&);                                                 \
  template Var<S> mul(const Var<S>&, const Var<S>&);                                                 \
  template Var<S> div(const Var<S>&, const Var<S>&);                                                 \
  template Var<S> neg(const Var<S>&);                                                                \
  template Var<S> scale(const Var<S>&, S);                                                           \
  template Var<S> add_scalar(const Var<S>&, S);                                                      \
  template Var<S> sine(const Var<S>&);                                                               \
  template Var<S> cosine(const Var<S>&);                                                             \
  template Var<S> exp(const Var<S>&);                                                                \
  template Var<S> log(const Var<S>&);                                                                \
  template Var<S> softplus(const Var<S>&);                                                           \
  template Var<S> sigmoid(const Var<S>&);                                                            \
  template Var<S> square(const Var<S>&);                                                             \
  template Var<S> leaky_relu(const Var<S>&, S);                                                      \
  template Var<S> reshape(const Var<S>&, Shape);                                                     \
  template Var<S> transpose(const Var<S>&);                                                          \
  template Var<S> permute(const Var<S>&, const std::vector<int>&);                                   \
  template Var<S> broadcast_to(const Var<S>&, const Shape&);                                         \
  template Var<S> sum_to(const Var<S>&, const Shape&);                                               \
  template Var<S> sum(const Var<S>&);                                                                \
  template Var<S> sum(const Var<S>&, int, bool);                                                     \
  template Var<S> mean(const Var<S>&);                                                               \
  template Var<S> concat(const std::vector<Var<S>>&, int);                                           \
  template Var<S> slice(const Var<S>&, int, int64_t, int64_t);                                       \
  template Var<S> pad_axis(const Var<S>&, int, int64_t, int64_t);                                    \
  template Var<S> matmul(const Var<S>&, const Var<S>&);                                              \
  template Var<S> matmul(const Var<S>&, const Var<S>&, bool, bool);                                  \
  template Var<S> linear(const Var<S>&, const Var<S>&, const Var<S>*);                               \
  template Var<S> conv2d(const Var<S>&, const Var<S>&, Conv2dSpec);                                  \
  template Var<S> conv2d_input_grad(const Var<S>&, const Var<S>&, const Shape&, Conv2dSpec);         \
  template Var<S> conv2d_weight_grad(const Var<S>&, const Var<S>&, const Shape&, Conv2dSpec);        \
  template Var<S> avg_pool2d(const Var<S>&, int);                                                    \
  template Var<S> avg_unpool2d(const Var<S>&, int);                                                  \
  template Var<S> grid_sample_3d(const Var<S>&, const Var<S>&, GridInterp);                          \
  template Var<S> cumprod(const Var<S>&, bool);                                                      \
  template Var<S> softmax(const Var<S>&);                                                            \
  template Var<S> log_softmax(const Var<S>&);                                                        \
  template Var<S> film_sine(const Var<S>&, const Var<S>&, const Var<S>&, const Var<S>&);             \
  template Tensor<S> kernels::conv2d_direct(const Tensor<S>&, const Tensor<S>&, Conv2dSpec);         \
  template Tensor<S> kernels::conv2d_gemm(const Tensor<S>&, const Tensor<S>&, Conv2dSpec);

SEMFIELD_INSTANTIATE_OPS(float)
SEMFIELD_INSTANTIATE_OPS(double)

}  // namespace semfield
