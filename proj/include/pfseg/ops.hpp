#pragma once

// Differentiable tensor operations. Every op validates shapes, computes its
// forward value into a fresh tensor (inputs are never mutated), rejects
// non-finite results, and records a backward closure when a tape is active.
//
// Broadcasting is limited to identical shapes or a single-element operand.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "pfseg/tensor.hpp"

namespace pfseg {

namespace detail {

struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

inline AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

inline void check_axis(const Tensor& t, std::size_t axis, const char* op) {
  if (axis >= t.rank()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for shape " + to_string(t.shape()));
  }
}

enum class Broadcast { Same, LeftScalar, RightScalar };

inline Broadcast binary_broadcast(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::Same;
  if (b.numel() == 1) return Broadcast::RightScalar;
  if (a.numel() == 1) return Broadcast::LeftScalar;
  throw DimensionError(std::string(op) + ": incompatible shapes " + to_string(a.shape()) + " and " +
                       to_string(b.shape()));
}

// Shared implementation of add/sub: out = a + sign * b.
inline Tensor add_signed(const Tensor& a, const Tensor& b, double sign, const char* op) {
  const Broadcast mode = binary_broadcast(a, b, op);
  const Tensor& big = (mode == Broadcast::LeftScalar) ? b : a;
  Tensor out(big.shape());
  auto o = out.mutable_data();
  const auto da = a.data();
  const auto db = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    const double av = (mode == Broadcast::LeftScalar) ? da[0] : da[i];
    const double bv = (mode == Broadcast::RightScalar) ? db[0] : db[i];
    o[i] = av + sign * bv;
  }
  ensure_finite(out, op);
  if (auto* tape = recording({&a, &b})) {
    tape->record({a, b}, out, [a, b, out, sign, mode] {
      const auto g = out_grad(out);
      if (a.requires_grad()) {
        auto ga = grad_of(a);
        if (mode == Broadcast::LeftScalar) {
          for (double v : g) ga[0] += v;
        } else {
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
      }
      if (b.requires_grad()) {
        auto gb = grad_of(b);
        if (mode == Broadcast::RightScalar) {
          for (double v : g) gb[0] += sign * v;
        } else {
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += sign * g[i];
        }
      }
    });
  }
  return out;
}

// Shared implementation of elementwise unary ops. `deriv(x, y)` returns
// dy/dx given input x and output y.
template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& a, const char* op, Fwd fwd, Deriv deriv) {
  Tensor out(a.shape());
  auto o = out.mutable_data();
  const auto da = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = fwd(da[i]);
  ensure_finite(out, op);
  if (auto* tape = recording({&a})) {
    tape->record({a}, out, [a, out, deriv] {
      const auto g = out_grad(out);
      auto ga = grad_of(a);
      const auto x = a.data();
      const auto y = out.data();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * deriv(x[i], y[i]);
    });
  }
  return out;
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) { return detail::add_signed(a, b, 1.0, "add"); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return detail::add_signed(a, b, -1.0, "sub"); }

inline Tensor mul(const Tensor& a, const Tensor& b) {
  using detail::Broadcast;
  const Broadcast mode = detail::binary_broadcast(a, b, "mul");
  const Tensor& big = (mode == Broadcast::LeftScalar) ? b : a;
  Tensor out(big.shape());
  auto o = out.mutable_data();
  const auto da = a.data();
  const auto db = b.data();
  auto av = [&](std::size_t i) { return mode == Broadcast::LeftScalar ? da[0] : da[i]; };
  auto bv = [&](std::size_t i) { return mode == Broadcast::RightScalar ? db[0] : db[i]; };
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = av(i) * bv(i);
  detail::ensure_finite(out, "mul");
  if (auto* tape = detail::recording({&a, &b})) {
    tape->record({a, b}, out, [a, b, out, mode] {
      const auto g = detail::out_grad(out);
      const auto xa = a.data();
      const auto xb = b.data();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double ai = mode == Broadcast::LeftScalar ? xa[0] : xa[i];
        const double bi = mode == Broadcast::RightScalar ? xb[0] : xb[i];
        if (a.requires_grad()) detail::grad_of(a)[mode == Broadcast::LeftScalar ? 0 : i] += g[i] * bi;
        if (b.requires_grad()) detail::grad_of(b)[mode == Broadcast::RightScalar ? 0 : i] += g[i] * ai;
      }
    });
  }
  return out;
}

/// Multiplication by a constant.
inline Tensor scale(const Tensor& a, double s) {
  return detail::unary(a, "scale", [s](double x) { return s * x; }, [s](double, double) { return s; });
}

/// relu'(0) is defined as 0.
inline Tensor relu(const Tensor& a) {
  return detail::unary(
      a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Tensor exp(const Tensor& a) {
  return detail::unary(a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Tensor log(const Tensor& a) {
  for (double v : a.data()) {
    if (!(v > 0.0)) throw DomainError("log of non-positive value " + std::to_string(v));
  }
  return detail::unary(a, "log", [](double x) { return std::log(x); },
                       [](double x, double) { return 1.0 / x; });
}

/// max(a, floor) elementwise; gradient passes only where a > floor.
inline Tensor clamp_min(const Tensor& a, double floor) {
  return detail::unary(
      a, "clamp_min", [floor](double x) { return x > floor ? x : floor; },
      [floor](double x, double) { return x > floor ? 1.0 : 0.0; });
}

/// Sum of all elements, shape [1].
inline Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  Tensor out = Tensor::scalar(acc);
  detail::ensure_finite(out, "sum");
  if (auto* tape = detail::recording({&a})) {
    tape->record({a}, out, [a, out] {
      const double g = detail::out_grad(out)[0];
      for (double& v : detail::grad_of(a)) v += g;
    });
  }
  return out;
}

/// Sum along one axis; the axis is removed (a rank-1 input yields shape [1]).
inline Tensor sum(const Tensor& a, std::size_t axis) {
  detail::check_axis(a, axis, "sum");
  const auto s = detail::split_axis(a.shape(), axis);
  Shape shape;
  for (std::size_t i = 0; i < a.rank(); ++i) {
    if (i != axis) shape.push_back(a.dim(i));
  }
  if (shape.empty()) shape.push_back(1);
  Tensor out(shape);
  auto o = out.mutable_data();
  const auto x = a.data();
  for (std::size_t p = 0; p < s.outer; ++p) {
    for (std::size_t k = 0; k < s.extent; ++k) {
      const double* row = x.data() + (p * s.extent + k) * s.inner;
      double* dst = o.data() + p * s.inner;
      for (std::size_t q = 0; q < s.inner; ++q) dst[q] += row[q];
    }
  }
  detail::ensure_finite(out, "sum");
  if (auto* tape = detail::recording({&a})) {
    tape->record({a}, out, [a, out, s] {
      const auto g = detail::out_grad(out);
      auto ga = detail::grad_of(a);
      for (std::size_t p = 0; p < s.outer; ++p) {
        for (std::size_t k = 0; k < s.extent; ++k) {
          for (std::size_t q = 0; q < s.inner; ++q) ga[(p * s.extent + k) * s.inner + q] += g[p * s.inner + q];
        }
      }
    });
  }
  return out;
}

inline Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
  }
  Tensor out(std::move(shape), std::vector<double>(a.data().begin(), a.data().end()));
  if (auto* tape = detail::recording({&a})) {
    tape->record({a}, out, [a, out] {
      const auto g = detail::out_grad(out);
      auto ga = detail::grad_of(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
  }
  return out;
}

/// Matrix transpose (rank 2).
inline Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw DimensionError("transpose expects a matrix, got " + to_string(a.shape()));
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor out(Shape{n, m});
  auto o = out.mutable_data();
  const auto x = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) o[j * m + i] = x[i * n + j];
  if (auto* tape = detail::recording({&a})) {
    tape->record({a}, out, [a, out, m, n] {
      const auto g = detail::out_grad(out);
      auto ga = detail::grad_of(a);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
    });
  }
  return out;
}

inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  const Tensor& first = parts.front();
  detail::check_axis(first, axis, "concat");
  Shape shape = first.shape();
  shape[axis] = 0;
  for (const auto& p : parts) {
    bool ok = p.rank() == first.rank();
    for (std::size_t i = 0; ok && i < p.rank(); ++i) ok = (i == axis) || p.dim(i) == first.dim(i);
    if (!ok) {
      throw DimensionError("concat: shape " + to_string(p.shape()) + " incompatible with " +
                           to_string(first.shape()) + " along axis " + std::to_string(axis));
    }
    shape[axis] += p.dim(axis);
  }
  const auto s = detail::split_axis(shape, axis);
  Tensor out(shape);
  auto o = out.mutable_data();
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t chunk = p.dim(axis) * s.inner;
    const auto x = p.data();
    for (std::size_t q = 0; q < s.outer; ++q)
      std::copy_n(x.data() + q * chunk, chunk, o.data() + q * s.extent * s.inner + offset);
    offset += chunk;
  }
  GradientTape* tape = active_tape();
  const bool any = std::any_of(parts.begin(), parts.end(), [](const Tensor& p) { return p.requires_grad(); });
  if (tape && any) {
    tape->record(parts, out, [parts, out, s, axis] {
      const auto g = detail::out_grad(out);
      std::size_t offset = 0;
      for (const auto& p : parts) {
        const std::size_t chunk = p.dim(axis) * s.inner;
        if (p.requires_grad()) {
          auto gp = detail::grad_of(p);
          for (std::size_t q = 0; q < s.outer; ++q)
            for (std::size_t i = 0; i < chunk; ++i) gp[q * chunk + i] += g[q * s.extent * s.inner + offset + i];
        }
        offset += chunk;
      }
    });
  }
  return out;
}

/// (m x k) . (k x n)
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: shape mismatch " + to_string(a.shape()) + " . " + to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out(Shape{m, n});
  auto o = out.mutable_data();
  const double* A = a.raw();
  const double* B = b.raw();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = o.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      const double* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  detail::ensure_finite(out, "matmul");
  if (auto* tape = detail::recording({&a, &b})) {
    tape->record({a, b}, out, [a, b, out, m, k, n] {
      const auto g = detail::out_grad(out);
      if (a.requires_grad()) {  // g . b^T
        auto ga = detail::grad_of(a);
        const double* B = b.raw();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * B[p * n + j];
            ga[i * k + p] += acc;
          }
      }
      if (b.requires_grad()) {  // a^T . g
        auto gb = detail::grad_of(b);
        const double* A = a.raw();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const double av = A[i * k + p];
            for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * g[i * n + j];
          }
      }
    });
  }
  return out;
}

/// Cross-correlation of a C x H x W map with an O x C x kh x kw kernel.
/// Kernels are 1x1 or 3x3 with "same" padding (0 or 1).
inline Tensor conv2d(const Tensor& x, const Tensor& kernel, std::size_t stride = 1, std::size_t padding = 0) {
  if (x.rank() != 3 || kernel.rank() != 4) {
    throw DimensionError("conv2d: expected CxHxW input and OxCxkhxkw kernel, got " + to_string(x.shape()) +
                         " and " + to_string(kernel.shape()));
  }
  if (kernel.dim(1) != x.dim(0)) {
    throw DimensionError("conv2d: channel mismatch, input " + to_string(x.shape()) + " kernel " +
                         to_string(kernel.shape()));
  }
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const std::size_t O = kernel.dim(0), KH = kernel.dim(2), KW = kernel.dim(3);
  if ((KH != 1 && KH != 3) || (KW != 1 && KW != 3)) {
    throw ConfigError("conv2d: kernel extents must be 1 or 3, got " + to_string(kernel.shape()));
  }
  if (padding != KH / 2 || padding != KW / 2) {
    throw ConfigError("conv2d: padding " + std::to_string(padding) + " does not preserve spatial size");
  }
  if (stride == 0) throw ConfigError("conv2d: stride must be positive");
  const std::size_t OH = (H + 2 * padding - KH) / stride + 1;
  const std::size_t OW = (W + 2 * padding - KW) / stride + 1;

  // Patch table: row p = output pixel, column k = (c, ky, kx) tap; zero padding.
  const std::size_t P = OH * OW, CK = C * KH * KW;
  auto patch_index = [=](std::size_t p, std::size_t k) -> long {
    const std::size_t c = k / (KH * KW), ky = (k / KW) % KH, kx = k % KW;
    const long iy = static_cast<long>((p / OW) * stride + ky) - static_cast<long>(padding);
    const long ix = static_cast<long>((p % OW) * stride + kx) - static_cast<long>(padding);
    if (iy < 0 || ix < 0 || iy >= static_cast<long>(H) || ix >= static_cast<long>(W)) return -1;
    return static_cast<long>((c * H + static_cast<std::size_t>(iy)) * W + static_cast<std::size_t>(ix));
  };
  auto patches = std::make_shared<std::vector<long>>(P * CK);
  std::vector<double> cols(P * CK, 0.0);
  const double* X = x.raw();
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t k = 0; k < CK; ++k) {
      const long idx = patch_index(p, k);
      (*patches)[p * CK + k] = idx;
      if (idx >= 0) cols[p * CK + k] = X[idx];
    }

  Tensor out(Shape{O, OH, OW});
  double* Y = out.mutable_data().data();
  const double* K = kernel.raw();
  for (std::size_t o = 0; o < O; ++o) {
    const double* krow = K + o * CK;
    for (std::size_t p = 0; p < P; ++p) {
      const double* crow = cols.data() + p * CK;
      double acc = 0.0;
      for (std::size_t k = 0; k < CK; ++k) acc += krow[k] * crow[k];
      Y[o * P + p] = acc;
    }
  }
  detail::ensure_finite(out, "conv2d");
  if (auto* tape = detail::recording({&x, &kernel})) {
    tape->record({x, kernel}, out, [=] {
      const double* G = detail::out_grad(out).data();
      const double* X = x.raw();
      const double* K = kernel.raw();
      double* GX = x.requires_grad() ? detail::grad_of(x).data() : nullptr;
      double* GK = kernel.requires_grad() ? detail::grad_of(kernel).data() : nullptr;
      const std::vector<long>& idx = *patches;
      std::vector<double> row(CK);
      for (std::size_t p = 0; p < P; ++p) {
        const long* prow = idx.data() + p * CK;
        if (GK) {
          for (std::size_t k = 0; k < CK; ++k) row[k] = prow[k] >= 0 ? X[prow[k]] : 0.0;
          for (std::size_t o = 0; o < O; ++o) {
            const double g = G[o * P + p];
            double* gkrow = GK + o * CK;
            for (std::size_t k = 0; k < CK; ++k) gkrow[k] += g * row[k];
          }
        }
        if (GX) {
          std::fill(row.begin(), row.end(), 0.0);
          for (std::size_t o = 0; o < O; ++o) {
            const double g = G[o * P + p];
            const double* krow = K + o * CK;
            for (std::size_t k = 0; k < CK; ++k) row[k] += g * krow[k];
          }
          for (std::size_t k = 0; k < CK; ++k)
            if (prow[k] >= 0) GX[prow[k]] += row[k];
        }
      }
    });
  }
  return out;
}

/// Adds bias[c] to every pixel of channel c of a C x H x W map.
inline Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  if (x.rank() != 3 || bias.numel() != x.dim(0)) {
    throw DimensionError("add_channel_bias: map " + to_string(x.shape()) + " vs bias " + to_string(bias.shape()));
  }
  const std::size_t C = x.dim(0), HW = x.dim(1) * x.dim(2);
  Tensor out(x.shape());
  auto o = out.mutable_data();
  const auto xd = x.data();
  const auto b = bias.data();
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < HW; ++i) o[c * HW + i] = xd[c * HW + i] + b[c];
  detail::ensure_finite(out, "add_channel_bias");
  if (auto* tape = detail::recording({&x, &bias})) {
    tape->record({x, bias}, out, [x, bias, out, C, HW] {
      const auto g = detail::out_grad(out);
      if (x.requires_grad()) {
        auto gx = detail::grad_of(x);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (bias.requires_grad()) {
        auto gb = detail::grad_of(bias);
        for (std::size_t c = 0; c < C; ++c) {
          double acc = 0.0;
          for (std::size_t i = 0; i < HW; ++i) acc += g[c * HW + i];
          gb[c] += acc;
        }
      }
    });
  }
  return out;
}

/// Numerically stable softmax along `axis` (max subtraction).
inline Tensor softmax(const Tensor& x, std::size_t axis) {
  detail::check_axis(x, axis, "softmax");
  const auto s = detail::split_axis(x.shape(), axis);
  Tensor out(x.shape());
  auto o = out.mutable_data();
  const auto xd = x.data();
  for (std::size_t p = 0; p < s.outer; ++p) {
    for (std::size_t q = 0; q < s.inner; ++q) {
      const std::size_t base = p * s.extent * s.inner + q;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < s.extent; ++k) mx = std::max(mx, xd[base + k * s.inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < s.extent; ++k) {
        const double e = std::exp(xd[base + k * s.inner] - mx);
        o[base + k * s.inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < s.extent; ++k) o[base + k * s.inner] /= z;
    }
  }
  detail::ensure_finite(out, "softmax");
  if (auto* tape = detail::recording({&x})) {
    tape->record({x}, out, [x, out, s] {
      const auto g = detail::out_grad(out);
      const auto y = out.data();
      auto gx = detail::grad_of(x);
      for (std::size_t p = 0; p < s.outer; ++p) {
        for (std::size_t q = 0; q < s.inner; ++q) {
          const std::size_t base = p * s.extent * s.inner + q;
          double dot = 0.0;
          for (std::size_t k = 0; k < s.extent; ++k) dot += g[base + k * s.inner] * y[base + k * s.inner];
          for (std::size_t k = 0; k < s.extent; ++k) {
            const std::size_t i = base + k * s.inner;
            gx[i] += y[i] * (g[i] - dot);
          }
        }
      }
    });
  }
  return out;
}

namespace detail {

// Source taps of half-pixel-centred bilinear resampling along one axis.
struct Taps {
  std::vector<std::size_t> lo, hi;
  std::vector<double> w_hi;
};

inline Taps bilinear_taps(std::size_t in, std::size_t out_extent, std::size_t factor) {
  Taps t;
  t.lo.resize(out_extent);
  t.hi.resize(out_extent);
  t.w_hi.resize(out_extent);
  for (std::size_t i = 0; i < out_extent; ++i) {
    double src = (static_cast<double>(i) + 0.5) / static_cast<double>(factor) - 0.5;
    if (src < 0.0) src = 0.0;
    std::size_t lo = static_cast<std::size_t>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    const std::size_t hi = std::min(lo + 1, in - 1);
    t.lo[i] = lo;
    t.hi[i] = hi;
    t.w_hi[i] = hi == lo ? 0.0 : src - static_cast<double>(lo);
  }
  return t;
}

}  // namespace detail

/// Bilinear upsampling of a C x H x W map by an integer factor
/// (half-pixel centres, edge clamped).
inline Tensor upsample_bilinear(const Tensor& x, std::size_t factor) {
  if (x.rank() != 3) throw DimensionError("upsample_bilinear expects CxHxW, got " + to_string(x.shape()));
  if (factor == 0) throw ConfigError("upsample_bilinear: factor must be positive");
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const std::size_t OH = H * factor, OW = W * factor;
  const auto ty = detail::bilinear_taps(H, OH, factor);
  const auto tx = detail::bilinear_taps(W, OW, factor);
  Tensor out(Shape{C, OH, OW});
  auto o = out.mutable_data();
  const auto xd = x.data();
  for (std::size_t c = 0; c < C; ++c) {
    const double* src = xd.data() + c * H * W;
    for (std::size_t i = 0; i < OH; ++i) {
      const double wy = ty.w_hi[i];
      const double* r0 = src + ty.lo[i] * W;
      const double* r1 = src + ty.hi[i] * W;
      for (std::size_t j = 0; j < OW; ++j) {
        const double wx = tx.w_hi[j];
        const double top = (1.0 - wx) * r0[tx.lo[j]] + wx * r0[tx.hi[j]];
        const double bot = (1.0 - wx) * r1[tx.lo[j]] + wx * r1[tx.hi[j]];
        o[(c * OH + i) * OW + j] = (1.0 - wy) * top + wy * bot;
      }
    }
  }
  detail::ensure_finite(out, "upsample_bilinear");
  if (auto* tape = detail::recording({&x})) {
    tape->record({x}, out, [x, out, ty, tx, C, H, W, OH, OW] {
      const auto g = detail::out_grad(out);
      auto gx = detail::grad_of(x);
      for (std::size_t c = 0; c < C; ++c) {
        double* dst = gx.data() + c * H * W;
        for (std::size_t i = 0; i < OH; ++i) {
          const double wy = ty.w_hi[i];
          for (std::size_t j = 0; j < OW; ++j) {
            const double wx = tx.w_hi[j];
            const double gv = g[(c * OH + i) * OW + j];
            dst[ty.lo[i] * W + tx.lo[j]] += gv * (1.0 - wy) * (1.0 - wx);
            dst[ty.lo[i] * W + tx.hi[j]] += gv * (1.0 - wy) * wx;
            dst[ty.hi[i] * W + tx.lo[j]] += gv * wy * (1.0 - wx);
            dst[ty.hi[i] * W + tx.hi[j]] += gv * wy * wx;
          }
        }
      }
    });
  }
  return out;
}

}  // namespace pfseg
