#pragma once

// Pixel-to-node projection and latent graph construction.
//
// Shape conventions: P is N x (H*W); node features V = P . Z_flat^T with
// Z_flat of shape D x (H*W), giving N x D.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "pfseg/geometry.hpp"
#include "pfseg/ops.hpp"
#include "pfseg/tensor.hpp"

namespace pfseg {

enum class AssignmentMode { soft, hard };
enum class EdgeSource { node_features, projection_matrix, centroids };
enum class FusionMode { sum, concat };

inline constexpr double kDefaultZMax = 10.0;
inline constexpr double kDegenerateMass = 1e-8;

struct GraphBuildConfig {
  std::size_t nodes = 8;
  std::size_t dim = 16;
  AssignmentMode assignment = AssignmentMode::soft;
  EdgeSource edges = EdgeSource::centroids;
  FusionMode fusion = FusionMode::sum;
  double epsilon = 1e-6;
  double z_max = kDefaultZMax;

  void validate(std::size_t channels_2d, std::size_t channels_3d) const {
    if (nodes < 2) throw ConfigError("graph: node count must be >= 2");
    if (dim == 0 || dim > channels_2d || dim > channels_3d) {
      throw ConfigError("graph: node dimension " + std::to_string(dim) + " must lie in [1, min(C2d, C3d)] = [1, " +
                        std::to_string(std::min(channels_2d, channels_3d)) + "]");
    }
    if (!(epsilon > 0.0)) throw ConfigError("graph: epsilon must be > 0");
    if (!(z_max > 0.0)) throw ConfigError("graph: z_max must be > 0");
  }
};

/// Assignment of H*W pixels to N nodes. In hard mode `scores` holds the
/// one-hot forward values and `soft` the scores they were derived from.
struct ProjectionMatrix {
  Tensor scores;
  Tensor soft;
  AssignmentMode mode = AssignmentMode::soft;
  std::size_t height = 0, width = 0;

  std::size_t nodes() const { return scores.dim(0); }
  std::size_t pixels() const { return scores.dim(1); }
};

struct LatentGraph {
  Tensor nodes;      // N x D
  Tensor adjacency;  // N x N, normalized
  std::optional<Tensor> centroids;
  EdgeSource edge_source = EdgeSource::centroids;
};

namespace detail {

inline Tensor flatten_map(const Tensor& x, const char* op) {
  if (x.rank() != 3) throw DimensionError(std::string(op) + ": expected C x H x W map, got " + to_string(x.shape()));
  return reshape(x, {x.dim(0), x.dim(1) * x.dim(2)});
}

}  // namespace detail

/// Softmax over nodes of a bias-free 1x1 convolution; weights are N x C.
inline ProjectionMatrix generate_projection(const Tensor& x, const Tensor& weights) {
  if (weights.rank() != 2) throw DimensionError("generate_projection: weights must be N x C, got " + to_string(weights.shape()));
  if (weights.dim(0) < 2) throw ConfigError("generate_projection: node count must be >= 2");
  if (x.rank() != 3 || weights.dim(1) != x.dim(0)) {
    throw DimensionError("generate_projection: weights " + to_string(weights.shape()) + " do not match map " +
                         to_string(x.shape()));
  }
  Tensor p = softmax(matmul(weights, detail::flatten_map(x, "generate_projection")), 0);
  return {p, p, AssignmentMode::soft, x.dim(1), x.dim(2)};
}

/// One-hot per column (ties to the lowest node index). The backward pass
/// is the identity onto the soft scores.
inline ProjectionMatrix harden(const ProjectionMatrix& p) {
  const Tensor& s = p.scores;
  const std::size_t N = s.dim(0), M = s.dim(1);
  Tensor out(s.shape());
  auto o = out.mutable_data();
  const auto in = s.data();
  for (std::size_t j = 0; j < M; ++j) {
    std::size_t best = 0;
    for (std::size_t n = 1; n < N; ++n) {
      if (in[n * M + j] > in[best * M + j]) best = n;
    }
    o[best * M + j] = 1.0;
  }
  if (auto* tape = detail::recording({&s})) {
    tape->record({s}, out, [s, out] {
      const auto g = detail::out_grad(out);
      auto gs = detail::grad_of(s);
      for (std::size_t i = 0; i < g.size(); ++i) gs[i] += g[i];
    });
  }
  return {out, s, AssignmentMode::hard, p.height, p.width};
}

inline ProjectionMatrix assign(const ProjectionMatrix& p, AssignmentMode mode) {
  return mode == AssignmentMode::hard ? harden(p) : p;
}

/// Per-pixel linear map with D x C weights; D <= C.
inline Tensor transform_features(const Tensor& x, const Tensor& weights) {
  if (weights.rank() != 2 || x.rank() != 3 || weights.dim(1) != x.dim(0)) {
    throw DimensionError("transform_features: weights " + to_string(weights.shape()) + " do not match map " +
                         to_string(x.shape()));
  }
  if (weights.dim(0) > weights.dim(1)) throw ConfigError("transform_features: D must not exceed C");
  return reshape(matmul(weights, detail::flatten_map(x, "transform_features")), {weights.dim(0), x.dim(1), x.dim(2)});
}

/// V = P . Z_flat^T, unnormalized weighted pooling (N x D).
inline Tensor project_nodes(const Tensor& z, const ProjectionMatrix& p) {
  if (z.rank() != 3 || z.dim(1) != p.height || z.dim(2) != p.width || z.dim(1) * z.dim(2) != p.pixels()) {
    throw DimensionError("project_nodes: map " + to_string(z.shape()) + " does not match projection over " +
                         std::to_string(p.height) + "x" + std::to_string(p.width) + " pixels");
  }
  return matmul(p.scores, transpose(detail::flatten_map(z, "project_nodes")));
}

/// Sum, or concatenation followed by `reduction` (D x 2D): out = [v2d | v3d] . R^T.
inline Tensor fuse(const Tensor& v2d, const Tensor& v3d, FusionMode mode, const Tensor* reduction = nullptr) {
  if (v2d.rank() != 2 || v3d.rank() != 2 || v2d.dim(0) != v3d.dim(0)) {
    throw DimensionError("fusion: node matrices " + to_string(v2d.shape()) + " and " + to_string(v3d.shape()) +
                         " differ in node count");
  }
  if (mode == FusionMode::sum) {
    if (v2d.dim(1) != v3d.dim(1)) throw DimensionError("fusion: sum requires equal feature dimensions");
    return add(v2d, v3d);
  }
  if (!reduction) throw ConfigError("fusion: concat mode requires a reduction map");
  return matmul(concat({v2d, v3d}, 1), transpose(*reduction));
}

/// Both modalities pooled with the single shared projection.
inline Tensor project_and_fuse(const Tensor& z2d, const Tensor& z3d, const ProjectionMatrix& p, FusionMode mode,
                               const Tensor* reduction = nullptr) {
  return fuse(project_nodes(z2d, p), project_nodes(z3d, p), mode, reduction);
}

/// Clamp negatives, zero the diagonal, then D^-1/2 W D^-1/2 with D the row
/// sums. All-zero rows stay zero.
inline Tensor normalize_adjacency(const Tensor& raw) {
  if (raw.rank() != 2 || raw.dim(0) != raw.dim(1)) {
    throw DimensionError("normalize_adjacency: expected square matrix, got " + to_string(raw.shape()));
  }
  const std::size_t N = raw.dim(0);
  const auto r = raw.data();
  std::vector<double> w(N * N, 0.0), s(N, 0.0), d(N, 0.0);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < N; ++j) {
      if (i != j && r[i * N + j] > 0.0) w[i * N + j] = r[i * N + j];
      d[i] += w[i * N + j];
    }
  for (std::size_t i = 0; i < N; ++i) s[i] = d[i] > 0.0 ? 1.0 / std::sqrt(d[i]) : 0.0;
  Tensor out(Shape{N, N});
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < N; ++j) o[i * N + j] = w[i * N + j] * (s[i] * s[j]);  // exact symmetry for symmetric input
  detail::ensure_finite(out, "normalize_adjacency");
  if (auto* tape = detail::recording({&raw})) {
    tape->record({raw}, out, [raw, out, N, w = std::move(w), s = std::move(s), d = std::move(d)] {
      const auto g = detail::out_grad(out);
      auto gr = detail::grad_of(raw);
      const auto r = raw.data();
      std::vector<double> dd(N, 0.0);  // dL/dd_i
      for (std::size_t i = 0; i < N; ++i) {
        if (d[i] <= 0.0) continue;
        double t = 0.0;
        for (std::size_t l = 0; l < N; ++l) t += g[i * N + l] * w[i * N + l] * s[l] + g[l * N + i] * w[l * N + i] * s[l];
        dd[i] = -0.5 * t / (d[i] * std::sqrt(d[i]));
      }
      for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < N; ++j) {
          if (i == j || !(r[i * N + j] > 0.0)) continue;
          gr[i * N + j] += g[i * N + j] * s[i] * s[j] + dd[i];
        }
    });
  }
  return out;
}

/// Raw semantic similarity V . V^T.
inline Tensor semantic_similarity(const Tensor& v) { return matmul(v, transpose(v)); }

/// Raw assignment overlap P . P^T.
inline Tensor projection_overlap(const ProjectionMatrix& p) { return matmul(p.scores, transpose(p.scores)); }

/// w_ij = 1 / (|m_i - m_j| + epsilon) off the diagonal, 0 on it.
inline Tensor inverse_distance_weights(const Tensor& m, double epsilon) {
  if (m.rank() != 2 || m.dim(1) != 3) throw DimensionError("inverse_distance_weights: expected N x 3, got " + to_string(m.shape()));
  if (!(epsilon > 0.0)) throw ConfigError("inverse_distance_weights: epsilon must be > 0");
  const std::size_t N = m.dim(0);
  const auto c = m.data();
  std::vector<double> dist(N * N, 0.0);
  Tensor out(Shape{N, N});
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < N; ++j) {
      if (i == j) continue;
      double d2 = 0.0;
      for (std::size_t a = 0; a < 3; ++a) d2 += (c[i * 3 + a] - c[j * 3 + a]) * (c[i * 3 + a] - c[j * 3 + a]);
      dist[i * N + j] = std::sqrt(d2);
      o[i * N + j] = 1.0 / (dist[i * N + j] + epsilon);
    }
  detail::ensure_finite(out, "inverse_distance_weights");
  if (auto* tape = detail::recording({&m})) {
    tape->record({m}, out, [m, out, N, epsilon, dist = std::move(dist)] {
      const auto g = detail::out_grad(out);
      auto gm = detail::grad_of(m);
      const auto c = m.data();
      for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < N; ++j) {
          const double d = dist[i * N + j];
          if (i == j || d == 0.0) continue;
          const double k = -g[i * N + j] / ((d + epsilon) * (d + epsilon) * d);
          for (std::size_t a = 0; a < 3; ++a) {
            const double diff = c[i * 3 + a] - c[j * 3 + a];
            gm[i * 3 + a] += k * diff;
            gm[j * 3 + a] -= k * diff;
          }
        }
    });
  }
  return out;
}

inline Tensor adjacency_semantic(const Tensor& v) { return normalize_adjacency(semantic_similarity(v)); }
inline Tensor adjacency_from_projection(const ProjectionMatrix& p) { return normalize_adjacency(projection_overlap(p)); }
inline Tensor adjacency_locality(const Tensor& m, double epsilon) {
  return normalize_adjacency(inverse_distance_weights(m, epsilon));
}

/// Bilinear resampling (half-pixel centres) of valid depth to a W x H grid.
/// Output pixels whose taps are all invalid get depth 0.
inline std::vector<double> resample_depth(const DepthMap& depth, std::size_t width, std::size_t height) {
  if (depth.width() == width && depth.height() == height) return depth.values();
  auto taps = [](std::size_t out_i, std::size_t out_n, std::size_t in_n) {
    const double src = (static_cast<double>(out_i) + 0.5) * static_cast<double>(in_n) / static_cast<double>(out_n) - 0.5;
    const double c = std::clamp(src, 0.0, static_cast<double>(in_n - 1));
    const auto lo = static_cast<std::size_t>(std::floor(c));
    const std::size_t hi = std::min(lo + 1, in_n - 1);
    return std::tuple{lo, hi, c - static_cast<double>(lo)};
  };
  std::vector<double> out(width * height, 0.0);
  for (std::size_t y = 0; y < height; ++y) {
    const auto [y0, y1, fy] = taps(y, height, depth.height());
    for (std::size_t x = 0; x < width; ++x) {
      const auto [x0, x1, fx] = taps(x, width, depth.width());
      const std::size_t idx[4] = {y0 * depth.width() + x0, y0 * depth.width() + x1, y1 * depth.width() + x0,
                                  y1 * depth.width() + x1};
      const double wt[4] = {(1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx};
      double acc = 0.0, mass = 0.0;
      for (int t = 0; t < 4; ++t) {
        if (!depth.valid(idx[t]) || wt[t] == 0.0) continue;
        acc += wt[t] * depth.z(idx[t]);
        mass += wt[t];
      }
      out[y * width + x] = mass > 0.0 ? acc / mass : 0.0;
    }
  }
  return out;
}

/// HW x 3 table of normalized pixel coordinates ((col+0.5)/W, (row+0.5)/H, z/z_max).
inline Tensor coordinate_table(const std::vector<double>& depth, std::size_t width, std::size_t height, double z_max) {
  if (depth.size() != width * height) throw DimensionError("coordinate_table: depth size does not match grid");
  Tensor t(Shape{width * height, 3});
  auto o = t.mutable_data();
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      const std::size_t i = y * width + x;
      o[i * 3 + 0] = (static_cast<double>(x) + 0.5) / static_cast<double>(width);
      o[i * 3 + 1] = (static_cast<double>(y) + 0.5) / static_cast<double>(height);
      o[i * 3 + 2] = depth[i] / z_max;
    }
  return t;
}

struct CentroidTarget {
  Tensor centroids;                  // N x 3, constant
  std::vector<std::uint8_t> degenerate;

  std::size_t degenerate_count() const {
    return static_cast<std::size_t>(std::count(degenerate.begin(), degenerate.end(), std::uint8_t{1}));
  }
};

/// Mass-weighted mean of normalized pixel coordinates per node. Not
/// differentiated. Nodes with mass < 1e-8 get (0.5, 0.5, 0.5) and a flag.
inline CentroidTarget compute_centroids_oracle(const ProjectionMatrix& p, const DepthMap& depth,
                                               double z_max = kDefaultZMax) {
  const std::size_t N = p.nodes(), M = p.pixels();
  const Tensor table = coordinate_table(resample_depth(depth, p.width, p.height), p.width, p.height, z_max);
  const auto P = p.scores.data();
  const auto T = table.data();
  CentroidTarget out{Tensor(Shape{N, 3}), std::vector<std::uint8_t>(N, 0)};
  auto o = out.centroids.mutable_data();
  for (std::size_t n = 0; n < N; ++n) {
    double mass = 0.0, acc[3] = {0.0, 0.0, 0.0};
    for (std::size_t j = 0; j < M; ++j) {
      const double w = P[n * M + j];
      mass += w;
      for (std::size_t a = 0; a < 3; ++a) acc[a] += w * T[j * 3 + a];
    }
    if (mass < kDegenerateMass) {
      out.degenerate[n] = 1;
      for (std::size_t a = 0; a < 3; ++a) o[n * 3 + a] = 0.5;
    } else {
      for (std::size_t a = 0; a < 3; ++a) o[n * 3 + a] = acc[a] / mass;
    }
  }
  return out;
}

/// M_c = P . weights with weights (H*W) x 3.
inline Tensor predict_centroids(const ProjectionMatrix& p, const Tensor& weights) {
  if (weights.rank() != 2 || weights.dim(0) != p.pixels() || weights.dim(1) != 3) {
    throw DimensionError("predict_centroids: weights must be " + std::to_string(p.pixels()) + "x3, got " +
                         to_string(weights.shape()));
  }
  return matmul(p.scores, weights);
}

inline const char* to_string(AssignmentMode m) { return m == AssignmentMode::hard ? "hard" : "soft"; }
inline const char* to_string(FusionMode m) { return m == FusionMode::concat ? "cat" : "sum"; }
inline const char* to_string(EdgeSource e) {
  switch (e) {
    case EdgeSource::node_features: return "v";
    case EdgeSource::projection_matrix: return "p";
    case EdgeSource::centroids: return "centroid";
  }
  return "?";
}

}  // namespace pfseg
