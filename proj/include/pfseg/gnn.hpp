#pragma once

// Graph convolution over the latent graph with separate self and neighbour
// transforms, plus the (I - A) V W reasoning update.
//
// Node features are rows: m_self = H . W_S^T, neighbour messages use
// T = H . W_N^T aggregated with weights A_vu.

#include <string>
#include <vector>

#include "pfseg/ops.hpp"
#include "pfseg/tensor.hpp"

namespace pfseg {

enum class Aggregation { sum, mean, max };
enum class LayerType { graph_convolution, graph_reasoning };

struct GnnLayer {
  LayerType type = LayerType::graph_convolution;
  Aggregation aggregation = Aggregation::sum;
  Tensor W_S, W_N;  // graph_convolution, D x D
  Tensor W;         // graph_reasoning, D x D
};

struct GnnStack {
  std::vector<GnnLayer> layers;
};

namespace detail {

inline void check_graph(const Tensor& h, const Tensor& a, const char* op) {
  if (h.rank() != 2 || a.rank() != 2 || a.dim(0) != a.dim(1) || a.dim(0) != h.dim(0)) {
    throw DimensionError(std::string(op) + ": nodes " + to_string(h.shape()) + " vs adjacency " + to_string(a.shape()));
  }
}

inline void check_square(const Tensor& w, std::size_t d, const char* what) {
  if (w.rank() != 2 || w.dim(0) != d || w.dim(1) != d) {
    throw DimensionError(std::string(what) + " must be " + std::to_string(d) + "x" + std::to_string(d) + ", got " +
                         to_string(w.shape()));
  }
}

}  // namespace detail

/// out_v = sum_u A_vu t_u / sum_u A_vu, with 0/0 -> 0.
inline Tensor mean_aggregate(const Tensor& a, const Tensor& t) {
  detail::check_graph(t, a, "mean_aggregate");
  const std::size_t N = t.dim(0), D = t.dim(1);
  const auto A = a.data();
  const auto T = t.data();
  std::vector<double> rowsum(N, 0.0);
  Tensor out(Shape{N, D});
  auto o = out.mutable_data();
  for (std::size_t v = 0; v < N; ++v) {
    for (std::size_t u = 0; u < N; ++u) rowsum[v] += A[v * N + u];
    if (rowsum[v] == 0.0) continue;
    for (std::size_t u = 0; u < N; ++u)
      for (std::size_t d = 0; d < D; ++d) o[v * D + d] += A[v * N + u] * T[u * D + d];
    for (std::size_t d = 0; d < D; ++d) o[v * D + d] /= rowsum[v];
  }
  detail::ensure_finite(out, "mean_aggregate");
  if (auto* tape = detail::recording({&a, &t})) {
    tape->record({a, t}, out, [a, t, out, N, D, rowsum = std::move(rowsum)] {
      const auto g = detail::out_grad(out);
      const auto A = a.data();
      const auto T = t.data();
      const auto O = out.data();
      for (std::size_t v = 0; v < N; ++v) {
        if (rowsum[v] == 0.0) continue;
        if (a.requires_grad()) {
          auto ga = detail::grad_of(a);
          for (std::size_t u = 0; u < N; ++u) {
            double acc = 0.0;
            for (std::size_t d = 0; d < D; ++d) acc += g[v * D + d] * (T[u * D + d] - O[v * D + d]);
            ga[v * N + u] += acc / rowsum[v];
          }
        }
        if (t.requires_grad()) {
          auto gt = detail::grad_of(t);
          for (std::size_t u = 0; u < N; ++u) {
            const double w = A[v * N + u] / rowsum[v];
            for (std::size_t d = 0; d < D; ++d) gt[u * D + d] += w * g[v * D + d];
          }
        }
      }
    });
  }
  return out;
}

/// out_v[d] = max over u with A_vu > 0 of A_vu t_u[d]; 0 without neighbours.
/// The subgradient goes to the first maximizer.
inline Tensor max_aggregate(const Tensor& a, const Tensor& t) {
  detail::check_graph(t, a, "max_aggregate");
  const std::size_t N = t.dim(0), D = t.dim(1);
  const auto A = a.data();
  const auto T = t.data();
  constexpr std::size_t none = static_cast<std::size_t>(-1);
  std::vector<std::size_t> argmax(N * D, none);
  Tensor out(Shape{N, D});
  auto o = out.mutable_data();
  for (std::size_t v = 0; v < N; ++v)
    for (std::size_t u = 0; u < N; ++u) {
      if (!(A[v * N + u] > 0.0)) continue;
      for (std::size_t d = 0; d < D; ++d) {
        const double m = A[v * N + u] * T[u * D + d];
        if (argmax[v * D + d] == none || m > o[v * D + d]) {
          o[v * D + d] = m;
          argmax[v * D + d] = u;
        }
      }
    }
  detail::ensure_finite(out, "max_aggregate");
  if (auto* tape = detail::recording({&a, &t})) {
    tape->record({a, t}, out, [a, t, out, N, D, argmax = std::move(argmax)] {
      const auto g = detail::out_grad(out);
      const auto A = a.data();
      const auto T = t.data();
      for (std::size_t v = 0; v < N; ++v)
        for (std::size_t d = 0; d < D; ++d) {
          const std::size_t u = argmax[v * D + d];
          if (u == none) continue;
          if (a.requires_grad()) detail::grad_of(a)[v * N + u] += g[v * D + d] * T[u * D + d];
          if (t.requires_grad()) detail::grad_of(t)[u * D + d] += g[v * D + d] * A[v * N + u];
        }
    });
  }
  return out;
}

/// relu(H W_S^T + AGG_u A_vu (H W_N^T)_u)
inline Tensor gcn_forward(const Tensor& h, const Tensor& a, const GnnLayer& layer) {
  detail::check_graph(h, a, "gcn_forward");
  detail::check_square(layer.W_S, h.dim(1), "gcn_forward: W_S");
  detail::check_square(layer.W_N, h.dim(1), "gcn_forward: W_N");
  const Tensor self = matmul(h, transpose(layer.W_S));
  const Tensor t = matmul(h, transpose(layer.W_N));
  Tensor neigh;
  switch (layer.aggregation) {
    case Aggregation::sum: neigh = matmul(a, t); break;
    case Aggregation::mean: neigh = mean_aggregate(a, t); break;
    case Aggregation::max: neigh = max_aggregate(a, t); break;
  }
  return relu(add(self, neigh));
}

/// relu(((I - A) V) W)
inline Tensor graph_reasoning_forward(const Tensor& v, const Tensor& a, const Tensor& w) {
  detail::check_graph(v, a, "graph_reasoning_forward");
  detail::check_square(w, v.dim(1), "graph_reasoning_forward: W");
  return relu(matmul(sub(v, matmul(a, v)), w));
}

inline Tensor layer_forward(const Tensor& h, const Tensor& a, const GnnLayer& layer) {
  return layer.type == LayerType::graph_reasoning ? graph_reasoning_forward(h, a, layer.W) : gcn_forward(h, a, layer);
}

inline Tensor stack_forward(const Tensor& h, const Tensor& a, const GnnStack& stack) {
  if (stack.layers.empty()) throw ConfigError("gnn: empty layer stack");
  Tensor out = h;
  for (const auto& layer : stack.layers) out = layer_forward(out, a, layer);
  return out;
}

inline const char* to_string(Aggregation a) {
  switch (a) {
    case Aggregation::sum: return "sum";
    case Aggregation::mean: return "mean";
    case Aggregation::max: return "max";
  }
  return "?";
}

inline const char* to_string(LayerType t) { return t == LayerType::graph_reasoning ? "reasoning" : "gcn"; }

}  // namespace pfseg
