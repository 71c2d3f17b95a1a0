#pragma once

// Differentiable dense-tensor operations. Each function evaluates forward and
// records a node on the inputs' tape.
//
// Broadcasting is limited to two forms: a scalar (one element) operand, and an
// operand whose shape equals the trailing dimensions of the other (repeated
// along the leading axes). Anything else is a ShapeError.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ddsp/autodiff/tape.hpp"
#include "ddsp/core/dsp.hpp"

namespace ddsp::ad {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;

namespace detail {

/// dst[c] += sum_r m[r, c] for row-major m, summed in row order. Eigen's
/// colwise().sum() into an unaligned destination mixes scalar and packet
/// reductions by address, so its bits vary between allocations.
template <class T>
void add_column_sums(const T* m, std::size_t rows, std::size_t cols, T* dst) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) dst[c] += m[r * cols + c];
}

inline std::string shapes_msg(const char* op, const Shape& a, const Shape& b) {
  return std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b);
}

enum class Bcast { same, scalar_b, suffix_b, scalar_a, suffix_a };

inline bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() >= big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

inline Bcast broadcast_kind(const char* op, const Shape& a, const Shape& b) {
  if (a == b) return Bcast::same;
  if (numel(b) == 1) return Bcast::scalar_b;
  if (numel(a) == 1) return Bcast::scalar_a;
  if (is_suffix(b, a)) return Bcast::suffix_b;
  if (is_suffix(a, b)) return Bcast::suffix_a;
  throw ShapeError(shapes_msg(op, a, b));
}

// Index into an operand of size m under broadcasting for output index i.
inline std::size_t bidx(std::size_t i, std::size_t m) { return m == 1 ? 0 : i % m; }

template <class T>
void require_rank(const char* op, const Var<T>& v, std::size_t rank) {
  if (v.shape().size() != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     to_string(v.shape()));
}

template <class T, class Fwd, class DA, class DB>
Var<T> binary(const char* op, Var<T> a, Var<T> b, Fwd fwd, DA da, DB db) {
  const auto kind = broadcast_kind(op, a.shape(), b.shape());
  const bool a_big = kind == Bcast::same || kind == Bcast::scalar_b || kind == Bcast::suffix_b;
  const Shape out_shape = a_big ? a.shape() : b.shape();
  const std::size_t n = numel(out_shape);
  const std::size_t na = a.size(), nb = b.size();
  auto av = a.value();
  auto bv = b.value();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[bidx(i, na)], bv[bidx(i, nb)]);
  return a.tape().record(
      out_shape, std::move(out), {a, b},
      [a, b, n, na, nb, da, db](Tape<T>& t, std::size_t self) {
        auto g = t.out_grad(self);
        auto av = a.value();
        auto bv = b.value();
        auto ga = t.grad_buffer(a);
        auto gb = t.grad_buffer(b);
        for (std::size_t i = 0; i < n; ++i) {
          const T x = av[bidx(i, na)], y = bv[bidx(i, nb)];
          if (!ga.empty()) ga[bidx(i, na)] += g[i] * da(x, y);
          if (!gb.empty()) gb[bidx(i, nb)] += g[i] * db(x, y);
        }
      },
      op);
}

template <class T, class Fwd, class Deriv>
Var<T> unary(const char* op, Var<T> x, Fwd fwd, Deriv deriv) {
  auto xv = x.value();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  return x.tape().record(
      x.shape(), std::move(out), {x},
      [x, deriv](Tape<T>& t, std::size_t self) {
        auto g = t.out_grad(self);
        auto xv = x.value();
        auto y = t.value(self);
        auto gx = t.grad_buffer(x);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(xv[i], y[i]);
      },
      op);
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  return detail::binary<T>("add", a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); },
                           [](T, T) { return T(1); });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  return detail::binary<T>("sub", a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); },
                           [](T, T) { return T(-1); });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  return detail::binary<T>("mul", a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; },
                           [](T x, T) { return x; });
}

template <class T>
Var<T> scale(Var<T> x, T c) {
  return detail::unary<T>("scale", x, [c](T v) { return c * v; }, [c](T, T) { return c; });
}

template <class T>
Var<T> add_scalar(Var<T> x, T c) {
  return detail::unary<T>("add_scalar", x, [c](T v) { return v + c; }, [](T, T) { return T(1); });
}

template <class T>
Var<T> leaky_relu(Var<T> x, T slope) {
  return detail::unary<T>(
      "leaky_relu", x, [slope](T v) { return v > T(0) ? v : slope * v; },
      [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}

template <class T>
Var<T> sigmoid(Var<T> x) {
  return detail::unary<T>(
      "sigmoid", x,
      [](T v) {
        // Split by sign so exp never overflows.
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

/// 2 * sigmoid(x)^ln(10) + 1e-7.
template <class T>
Var<T> exp_sigmoid(Var<T> x) {
  const T p = static_cast<T>(std::log(10.0));
  return detail::unary<T>(
      "exp_sigmoid", x,
      [p](T v) {
        // log sigmoid(v) = -softplus(-v)
        const T ls = v >= T(0) ? -std::log1p(std::exp(-v)) : v - std::log1p(std::exp(v));
        return T(2) * std::exp(p * ls) + T(1e-7);
      },
      [p](T v, T y) {
        // d/dv 2 s^p = 2 p s^p (1 - s)
        const T s = v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
        return p * (y - T(1e-7)) * (T(1) - s);
      });
}

template <class T>
Var<T> log(Var<T> x) {
  for (T v : x.value())
    if (!(v > T(0))) throw NumericError("log: non-positive input");
  return detail::unary<T>("log", x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

/// x^p elementwise. Non-integer p requires positive inputs.
template <class T>
Var<T> pow(Var<T> x, T p) {
  return detail::unary<T>(
      "pow", x, [p](T v) { return std::pow(v, p); },
      [p](T v, T) { return p == T(0) ? T(0) : p * std::pow(v, p - T(1)); });
}

template <class T>
Var<T> square(Var<T> x) {
  return detail::unary<T>("square", x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

/// max(x, floor); gradient passes only where x > floor.
template <class T>
Var<T> clamp_min(Var<T> x, T floor) {
  return detail::unary<T>(
      "clamp_min", x, [floor](T v) { return v > floor ? v : floor; },
      [floor](T v, T) { return v > floor ? T(1) : T(0); });
}

/// Replaces entries where mask != 0 by `fill`. Masked entries get no gradient.
template <class T>
Var<T> masked_fill(Var<T> x, std::span<const unsigned char> mask, T fill) {
  if (mask.size() != x.size()) throw ShapeError("masked_fill: mask size does not match input");
  auto xv = x.value();
  std::vector<T> out(xv.begin(), xv.end());
  for (std::size_t i = 0; i < out.size(); ++i)
    if (mask[i]) out[i] = fill;
  auto keep = std::make_shared<std::vector<unsigned char>>(mask.begin(), mask.end());
  return x.tape().record(
      x.shape(), std::move(out), {x},
      [x, keep](Tape<T>& t, std::size_t self) {
        auto g = t.out_grad(self);
        auto gx = t.grad_buffer(x);
        for (std::size_t i = 0; i < g.size(); ++i)
          if (!(*keep)[i]) gx[i] += g[i];
      },
      "masked_fill");
}

/// Same values, cut off from the gradient graph.
template <class T>
Var<T> detach(Var<T> x) {
  auto v = x.value();
  return x.tape().constant(x.shape(), std::vector<T>(v.begin(), v.end()));
}

template <class T>
Var<T> reshape(Var<T> x, Shape shape) {
  if (numel(shape) != x.size())
    throw ShapeError(detail::shapes_msg("reshape", x.shape(), shape));
  auto v = x.value();
  return x.tape().record(
      std::move(shape), std::vector<T>(v.begin(), v.end()), {x},
      [x](Tape<T>& t, std::size_t self) {
        auto g = t.out_grad(self);
        auto gx = t.grad_buffer(x);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      },
      "reshape");
}

// ----------------------------------------------------------------- reductions

template <class T>
Var<T> sum(Var<T> x) {
  double s = 0.0;
  for (T v : x.value()) s += static_cast<double>(v);
  return x.tape().record(
      {1}, {static_cast<T>(s)}, {x},
      [x](Tape<T>& t, std::size_t self) {
        const T g = t.out_grad(self)[0];
        for (auto& v : t.grad_buffer(x)) v += g;
      },
      "sum");
}

template <class T>
Var<T> mean(Var<T> x) {
  const std::size_t n = x.size();
  if (n == 0) throw InvalidArgument("mean: empty input");
  double s = 0.0;
  for (T v : x.value()) s += static_cast<double>(v);
  return x.tape().record(
      {1}, {static_cast<T>(s / static_cast<double>(n))}, {x},
      [x, n](Tape<T>& t, std::size_t self) {
        const T g = t.out_grad(self)[0] / static_cast<T>(n);
        for (auto& v : t.grad_buffer(x)) v += g;
      },
      "mean");
}

/// mean |a - b| over all elements (the per-element normalized L1 distance).
template <class T>
Var<T> l1_distance(Var<T> a, Var<T> b) {
  if (a.shape() != b.shape()) throw ShapeError(detail::shapes_msg("l1_distance", a.shape(), b.shape()));
  const std::size_t n = a.size();
  if (n == 0) throw InvalidArgument("l1_distance: empty input");
  auto av = a.value();
  auto bv = b.value();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::abs(static_cast<double>(av[i]) - static_cast<double>(bv[i]));
  return a.tape().record(
      {1}, {static_cast<T>(s / static_cast<double>(n))}, {a, b},
      [a, b, n](Tape<T>& t, std::size_t self) {
        const T g = t.out_grad(self)[0] / static_cast<T>(n);
        auto av = a.value();
        auto bv = b.value();
        auto ga = t.grad_buffer(a);
        auto gb = t.grad_buffer(b);
        for (std::size_t i = 0; i < n; ++i) {
          const T d = av[i] - bv[i];
          const T s = d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0));
          if (!ga.empty()) ga[i] += g * s;
          if (!gb.empty()) gb[i] -= g * s;
        }
      },
      "l1_distance");
}

/// Softmax along the last axis.
template <class T>
Var<T> softmax(Var<T> x) {
  if (x.shape().empty()) throw ShapeError("softmax: rank-0 input");
  const std::size_t cols = x.shape().back();
  const std::size_t rows = x.size() / cols;
  auto xv = x.value();
  std::vector<T> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.data() + r * cols;
    T* o = out.data() + r * cols;
    const T m = *std::max_element(in, in + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double e = std::exp(static_cast<double>(in[c] - m));
      o[c] = static_cast<T>(e);
      z += e;
    }
    for (std::size_t c = 0; c < cols; ++c) o[c] = static_cast<T>(static_cast<double>(o[c]) / z);
  }
  return x.tape().record(
      x.shape(), std::move(out), {x},
      [x, rows, cols](Tape<T>& t, std::size_t self) {
        auto g = t.out_grad(self);
        auto y = t.value(self);
        auto gx = t.grad_buffer(x);
        for (std::size_t r = 0; r < rows; ++r) {
          double dot = 0.0;
          for (std::size_t c = 0; c < cols; ++c) dot += static_cast<double>(g[r * cols + c] * y[r * cols + c]);
          for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t i = r * cols + c;
            gx[i] += y[i] * (g[i] - static_cast<T>(dot));
          }
        }
      },
      "softmax");
}

/// Per-row layer normalization over the last axis with learned gain and bias.
template <class T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps = T(1e-5)) {
  if (x.shape().empty()) throw ShapeError("layer_norm: rank-0 input");
  const std::size_t cols = x.shape().back();
  if (gain.shape() != Shape{cols} || bias.shape() != Shape{cols})
    throw ShapeError(detail::shapes_msg("layer_norm", x.shape(), gain.shape()));
  const std::size_t rows = x.size() / cols;
  auto xv = x.value();
  auto gv = gain.value();
  auto bv = bias.value();
  auto xhat = std::make_shared<std::vector<T>>(xv.size());
  auto inv_std = std::make_shared<std::vector<T>>(rows);
  std::vector<T> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.data() + r * cols;
    double m = 0.0, v = 0.0;
    for (std::size_t c = 0; c < cols; ++c) m += static_cast<double>(in[c]);
    m /= static_cast<double>(cols);
    for (std::size_t c = 0; c < cols; ++c) v += (static_cast<double>(in[c]) - m) * (static_cast<double>(in[c]) - m);
    v /= static_cast<double>(cols);
    const double is = 1.0 / std::sqrt(v + static_cast<double>(eps));
    (*inv_std)[r] = static_cast<T>(is);
    for (std::size_t c = 0; c < cols; ++c) {
      const T h = static_cast<T>((static_cast<double>(in[c]) - m) * is);
      (*xhat)[r * cols + c] = h;
      out[r * cols + c] = h * gv[c] + bv[c];
    }
  }
  return x.tape().record(
      x.shape(), std::move(out), {x, gain, bias},
      [x, gain, bias, rows, cols, xhat, inv_std](Tape<T>& t, std::size_t self) {
        auto g = t.out_grad(self);
        auto gv = gain.value();
        auto gx = t.grad_buffer(x);
        auto gg = t.grad_buffer(gain);
        auto gb = t.grad_buffer(bias);
        for (std::size_t r = 0; r < rows; ++r) {
          double s1 = 0.0, s2 = 0.0;
          for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t i = r * cols + c;
            const double dh = static_cast<double>(g[i] * gv[c]);
            s1 += dh;
            s2 += dh * static_cast<double>((*xhat)[i]);
            if (!gg.empty()) gg[c] += g[i] * (*xhat)[i];
            if (!gb.empty()) gb[c] += g[i];
          }
          if (gx.empty()) continue;
          const double n = static_cast<double>(cols);
          for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t i = r * cols + c;
            const double dh = static_cast<double>(g[i] * gv[c]);
            gx[i] += static_cast<T>(static_cast<double>((*inv_std)[r]) *
                                    (dh - s1 / n - static_cast<double>((*xhat)[i]) * s2 / n));
          }
        }
      },
      "layer_norm");
}

// -------------------------------------------------------------- restructuring

/// [begin, end) along `axis`.
template <class T>
Var<T> slice(Var<T> x, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = x.shape();
  if (axis >= s.size() || begin >= end || end > s[axis])
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") on axis " +
                     std::to_string(axis) + " invalid for " + to_string(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = end - begin, full = s[axis];
  Shape os = s;
  os[axis] = len;
  auto xv = x.value();
  std::vector<T> out(outer * len * inner);
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(xv.data() + (o * full + begin) * inner, len * inner, out.data() + o * len * inner);
  return x.tape().record(
      std::move(os), std::move(out), {x},
      [x, outer, inner, len, full, begin](Tape<T>& t, std::size_t self) {
        auto g = t.out_grad(self);
        auto gx = t.grad_buffer(x);
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < len * inner; ++i) gx[(o * full + begin) * inner + i] += g[o * len * inner + i];
      },
      "slice");
}

template <class T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw InvalidArgument("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size()) throw ShapeError("concat: axis out of range for " + to_string(s0));
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != s0.size()) throw ShapeError(detail::shapes_msg("concat", s0, s));
    for (std::size_t i = 0; i < s.size(); ++i)
      if (i != axis && s[i] != s0[i]) throw ShapeError(detail::shapes_msg("concat", s0, s));
    total += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s0[i];
  for (std::size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];
  Shape os = s0;
  os[axis] = total;
  std::vector<T> out(outer * total * inner);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t len = p.shape()[axis];
    auto v = p.value();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(v.data() + o * len * inner, len * inner, out.data() + (o * total + off) * inner);
    offsets.push_back(off);
    off += len;
  }
  return parts[0].tape().record(
      std::move(os), std::move(out), parts,
      [parts, offsets, outer, inner, total, axis](Tape<T>& t, std::size_t self) {
        auto g = t.out_grad(self);
        for (std::size_t k = 0; k < parts.size(); ++k) {
          auto gp = t.grad_buffer(parts[k]);
          if (gp.empty()) continue;
          const std::size_t len = parts[k].shape()[axis];
          for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t i = 0; i < len * inner; ++i) gp[o * len * inner + i] += g[(o * total + offsets[k]) * inner + i];
        }
      },
      "concat");
}

template <class T>
Var<T> transpose(Var<T> x) {
  detail::require_rank<T>("transpose", x, 2);
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  std::vector<T> out(r * c);
  MapMat<T>(out.data(), c, r) = CMapMat<T>(x.value().data(), r, c).transpose();
  return x.tape().record(
      {c, r}, std::move(out), {x},
      [x, r, c](Tape<T>& t, std::size_t self) {
        auto gx = t.grad_buffer(x);
        MapMat<T>(gx.data(), r, c) += CMapMat<T>(t.out_grad(self).data(), c, r).transpose();
      },
      "transpose");
}

/// Repeats x along new leading axes until it has `shape`.
template <class T>
Var<T> broadcast(Var<T> x, Shape shape) {
  if (x.shape() != shape && !detail::is_suffix(x.shape(), shape) && x.size() != 1)
    throw ShapeError(detail::shapes_msg("broadcast", x.shape(), shape));
  const std::size_t n = numel(shape), m = x.size();
  auto xv = x.value();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = xv[detail::bidx(i, m)];
  return x.tape().record(
      std::move(shape), std::move(out), {x},
      [x, n, m](Tape<T>& t, std::size_t self) {
        auto g = t.out_grad(self);
        auto gx = t.grad_buffer(x);
        for (std::size_t i = 0; i < n; ++i) gx[detail::bidx(i, m)] += g[i];
      },
      "broadcast");
}

// --------------------------------------------------------------- linear maps

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  detail::require_rank<T>("matmul", a, 2);
  detail::require_rank<T>("matmul", b, 2);
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) throw ShapeError(detail::shapes_msg("matmul", a.shape(), b.shape()));
  std::vector<T> out(m * n);
  MapMat<T>(out.data(), m, n).noalias() = CMapMat<T>(a.value().data(), m, k) * CMapMat<T>(b.value().data(), k, n);
  return a.tape().record(
      {m, n}, std::move(out), {a, b},
      [a, b, m, k, n](Tape<T>& t, std::size_t self) {
        CMapMat<T> g(t.out_grad(self).data(), m, n);
        auto ga = t.grad_buffer(a);
        auto gb = t.grad_buffer(b);
        if (!ga.empty()) MapMat<T>(ga.data(), m, k).noalias() += g * CMapMat<T>(b.value().data(), k, n).transpose();
        if (!gb.empty()) MapMat<T>(gb.data(), k, n).noalias() += CMapMat<T>(a.value().data(), m, k).transpose() * g;
      },
      "matmul");
}

/// Fixed real linear map on the last axis: y[..., :] = A x[..., :], A is [out x in].
/// Shared ownership of A so the backward closure can apply A^T later.
template <class T>
Var<T> fft_linear(Var<T> x, std::shared_ptr<const Tensor<T>> matrix) {
  if (matrix->shape.size() != 2) throw ShapeError("fft_linear: map must be rank 2");
  const std::size_t out_dim = matrix->shape[0], in_dim = matrix->shape[1];
  if (x.shape().empty() || x.shape().back() != in_dim)
    throw ShapeError(detail::shapes_msg("fft_linear", x.shape(), matrix->shape));
  const std::size_t rows = x.size() / in_dim;
  Shape os = x.shape();
  os.back() = out_dim;
  std::vector<T> out(rows * out_dim);
  MapMat<T>(out.data(), rows, out_dim).noalias() =
      CMapMat<T>(x.value().data(), rows, in_dim) * CMapMat<T>(matrix->data.data(), out_dim, in_dim).transpose();
  return x.tape().record(
      std::move(os), std::move(out), {x},
      [x, matrix, rows, in_dim, out_dim](Tape<T>& t, std::size_t self) {
        auto gx = t.grad_buffer(x);
        MapMat<T>(gx.data(), rows, in_dim).noalias() +=
            CMapMat<T>(t.out_grad(self).data(), rows, out_dim) * CMapMat<T>(matrix->data.data(), out_dim, in_dim);
      },
      "fft_linear");
}

/// Same-padded 1-D convolution over time (cross-correlation, as in common NN
/// frameworks). x: [T x Cin], w: [k x Cin x Cout] (k odd), bias: [Cout] or invalid.
template <class T>
Var<T> conv1d(Var<T> x, Var<T> w, Var<T> bias, std::size_t dilation = 1) {
  detail::require_rank<T>("conv1d", x, 2);
  detail::require_rank<T>("conv1d", w, 3);
  const std::size_t len = x.shape()[0], cin = x.shape()[1];
  const std::size_t k = w.shape()[0], cout = w.shape()[2];
  if (w.shape()[1] != cin) throw ShapeError(detail::shapes_msg("conv1d", x.shape(), w.shape()));
  if (k % 2 == 0) throw ShapeError("conv1d: kernel size must be odd, got " + std::to_string(k));
  if (dilation == 0) throw InvalidArgument("conv1d: dilation must be >= 1");
  const bool has_bias = bias.valid();
  if (has_bias && bias.shape() != Shape{cout}) throw ShapeError(detail::shapes_msg("conv1d bias", bias.shape(), {cout}));

  // Valid output row range for each tap.
  struct TapRange {
    std::ptrdiff_t shift;
    std::size_t begin, count;
  };
  auto taps = std::make_shared<std::vector<TapRange>>();
  const auto ilen = static_cast<std::ptrdiff_t>(len);
  for (std::size_t j = 0; j < k; ++j) {
    const std::ptrdiff_t s = (static_cast<std::ptrdiff_t>(j) - static_cast<std::ptrdiff_t>(k / 2)) *
                             static_cast<std::ptrdiff_t>(dilation);
    const std::ptrdiff_t b = std::max<std::ptrdiff_t>(0, -s);
    const std::ptrdiff_t e = std::min<std::ptrdiff_t>(ilen, ilen - s);
    if (e > b) taps->push_back({s, static_cast<std::size_t>(b), static_cast<std::size_t>(e - b)});
    else taps->push_back({s, 0, 0});
  }

  std::vector<T> out(len * cout, T(0));
  MapMat<T> y(out.data(), len, cout);
  CMapMat<T> xin(x.value().data(), len, cin);
  const T* wd = w.value().data();
  for (std::size_t j = 0; j < k; ++j) {
    const auto& tr = (*taps)[j];
    if (tr.count == 0) continue;
    CMapMat<T> wj(wd + j * cin * cout, cin, cout);
    y.middleRows(tr.begin, tr.count).noalias() += xin.middleRows(tr.begin + tr.shift, tr.count) * wj;
  }
  if (has_bias) {
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bv(bias.value().data(), cout);
    y.rowwise() += bv;
  }

  std::vector<Var<T>> parents{x, w};
  if (has_bias) parents.push_back(bias);
  return x.tape().record(
      {len, cout}, std::move(out), parents,
      [x, w, bias, has_bias, taps, len, cin, cout, k](Tape<T>& t, std::size_t self) {
        CMapMat<T> g(t.out_grad(self).data(), len, cout);
        auto gx = t.grad_buffer(x);
        auto gw = t.grad_buffer(w);
        const T* wd = w.value().data();
        CMapMat<T> xin(x.value().data(), len, cin);
        for (std::size_t j = 0; j < k; ++j) {
          const auto& tr = (*taps)[j];
          if (tr.count == 0) continue;
          if (!gx.empty()) {
            MapMat<T> gxm(gx.data(), len, cin);
            gxm.middleRows(tr.begin + tr.shift, tr.count).noalias() +=
                g.middleRows(tr.begin, tr.count) * CMapMat<T>(wd + j * cin * cout, cin, cout).transpose();
          }
          if (!gw.empty()) {
            MapMat<T>(gw.data() + j * cin * cout, cin, cout).noalias() +=
                xin.middleRows(tr.begin + tr.shift, tr.count).transpose() * g.middleRows(tr.begin, tr.count);
          }
        }
        if (has_bias) {
          auto gb = t.grad_buffer(bias);
          if (!gb.empty()) detail::add_column_sums(t.out_grad(self).data(), len, cout, gb.data());
        }
      },
      "conv1d");
}

namespace detail {

struct Conv2dGeom {
  std::size_t h, w, cin, kh, kw, cout, sh, sw, ph, pw, ho, wo;
  std::size_t patch() const { return kh * kw * cin; }
};

// Rows = output pixels (row-major over [ho x wo]), cols = [kh x kw x cin].
template <class T>
void im2col(const T* x, const Conv2dGeom& g, T* col) {
  const std::size_t p = g.patch();
  for (std::size_t oy = 0; oy < g.ho; ++oy)
    for (std::size_t ox = 0; ox < g.wo; ++ox) {
      T* row = col + (oy * g.wo + ox) * p;
      for (std::size_t i = 0; i < g.kh; ++i) {
        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.sh + i) - static_cast<std::ptrdiff_t>(g.ph);
        for (std::size_t j = 0; j < g.kw; ++j) {
          T* dst = row + (i * g.kw + j) * g.cin;
          const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.sw + j) - static_cast<std::ptrdiff_t>(g.pw);
          if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(g.h) || ix >= static_cast<std::ptrdiff_t>(g.w)) {
            std::fill_n(dst, g.cin, T(0));
          } else {
            std::copy_n(x + (static_cast<std::size_t>(iy) * g.w + static_cast<std::size_t>(ix)) * g.cin, g.cin, dst);
          }
        }
      }
    }
}

template <class T>
void col2im_add(const T* col, const Conv2dGeom& g, T* x) {
  const std::size_t p = g.patch();
  for (std::size_t oy = 0; oy < g.ho; ++oy)
    for (std::size_t ox = 0; ox < g.wo; ++ox) {
      const T* row = col + (oy * g.wo + ox) * p;
      for (std::size_t i = 0; i < g.kh; ++i) {
        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.sh + i) - static_cast<std::ptrdiff_t>(g.ph);
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
        for (std::size_t j = 0; j < g.kw; ++j) {
          const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.sw + j) - static_cast<std::ptrdiff_t>(g.pw);
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
          const T* src = row + (i * g.kw + j) * g.cin;
          T* dst = x + (static_cast<std::size_t>(iy) * g.w + static_cast<std::size_t>(ix)) * g.cin;
          for (std::size_t c = 0; c < g.cin; ++c) dst[c] += src[c];
        }
      }
    }
}

}  // namespace detail

/// Strided 2-D convolution with padding (kh/2, kw/2).
/// x: [H x W x Cin], w: [kh x kw x Cin x Cout], bias: [Cout] or invalid.
template <class T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> bias, std::size_t stride_h, std::size_t stride_w) {
  detail::require_rank<T>("conv2d", x, 3);
  detail::require_rank<T>("conv2d", w, 4);
  detail::Conv2dGeom g{};
  g.h = x.shape()[0];
  g.w = x.shape()[1];
  g.cin = x.shape()[2];
  g.kh = w.shape()[0];
  g.kw = w.shape()[1];
  g.cout = w.shape()[3];
  if (w.shape()[2] != g.cin) throw ShapeError(detail::shapes_msg("conv2d", x.shape(), w.shape()));
  if (stride_h == 0 || stride_w == 0) throw InvalidArgument("conv2d: strides must be >= 1");
  g.sh = stride_h;
  g.sw = stride_w;
  g.ph = g.kh / 2;
  g.pw = g.kw / 2;
  if (g.h + 2 * g.ph < g.kh || g.w + 2 * g.pw < g.kw) throw ShapeError("conv2d: input smaller than kernel");
  g.ho = (g.h + 2 * g.ph - g.kh) / g.sh + 1;
  g.wo = (g.w + 2 * g.pw - g.kw) / g.sw + 1;
  const bool has_bias = bias.valid();
  if (has_bias && bias.shape() != Shape{g.cout}) throw ShapeError(detail::shapes_msg("conv2d bias", bias.shape(), {g.cout}));

  const std::size_t pixels = g.ho * g.wo, p = g.patch();
  std::vector<T> col(pixels * p);
  detail::im2col(x.value().data(), g, col.data());
  std::vector<T> out(pixels * g.cout);
  MapMat<T> y(out.data(), pixels, g.cout);
  y.noalias() = CMapMat<T>(col.data(), pixels, p) * CMapMat<T>(w.value().data(), p, g.cout);
  if (has_bias) y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.value().data(), g.cout);

  std::vector<Var<T>> parents{x, w};
  if (has_bias) parents.push_back(bias);
  return x.tape().record(
      {g.ho, g.wo, g.cout}, std::move(out), parents,
      [x, w, bias, has_bias, g](Tape<T>& t, std::size_t self) {
        const std::size_t pixels = g.ho * g.wo, p = g.patch();
        CMapMat<T> gy(t.out_grad(self).data(), pixels, g.cout);
        auto gx = t.grad_buffer(x);
        auto gw = t.grad_buffer(w);
        if (!gw.empty()) {
          std::vector<T> col(pixels * p);
          detail::im2col(x.value().data(), g, col.data());
          MapMat<T>(gw.data(), p, g.cout).noalias() += CMapMat<T>(col.data(), pixels, p).transpose() * gy;
        }
        if (!gx.empty()) {
          std::vector<T> gcol(pixels * p);
          MapMat<T>(gcol.data(), pixels, p).noalias() = gy * CMapMat<T>(w.value().data(), p, g.cout).transpose();
          detail::col2im_add(gcol.data(), g, gx.data());
        }
        if (has_bias) {
          auto gb = t.grad_buffer(bias);
          if (!gb.empty()) detail::add_column_sums(t.out_grad(self).data(), pixels, g.cout, gb.data());
        }
      },
      "conv2d");
}

}  // namespace ddsp::ad
