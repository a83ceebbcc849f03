#pragma once

// Objective: pixel cross-entropy + alpha * KL(node usage || uniform)
// + beta * centroid MSE.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "pfseg/graph_build.hpp"
#include "pfseg/ops.hpp"

namespace pfseg {

inline constexpr std::uint8_t kIgnoreLabel = 255;
inline constexpr double kLogFloor = 1e-12;

struct LabelMap {
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> labels;

  std::uint8_t at(std::size_t x, std::size_t y) const { return labels[y * width + x]; }
};

enum class KlVariant { marginal, per_pixel };

struct LossWeights {
  double alpha = 0.1;
  double beta = 0.1;

  void validate() const {
    if (!(alpha >= 0.0) || !(beta >= 0.0)) throw ConfigError("loss weights must be >= 0");
  }
};

/// Mean over non-ignored pixels of -log softmax(logits)[label].
inline Tensor cross_entropy(const Tensor& logits, const LabelMap& labels) {
  if (logits.rank() != 3 || logits.dim(1) != labels.height || logits.dim(2) != labels.width ||
      labels.labels.size() != labels.width * labels.height) {
    throw DimensionError("cross_entropy: logits " + to_string(logits.shape()) + " vs labels " +
                         std::to_string(labels.height) + "x" + std::to_string(labels.width));
  }
  const std::size_t K = logits.dim(0), M = labels.labels.size();
  const auto L = logits.data();
  std::vector<double> prob(K * M, 0.0);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t j = 0; j < M; ++j) {
    const std::uint8_t y = labels.labels[j];
    if (y == kIgnoreLabel) continue;
    if (y >= K) throw DomainError("cross_entropy: label " + std::to_string(y) + " outside [0, " + std::to_string(K) + ")");
    double mx = L[j];
    for (std::size_t k = 1; k < K; ++k) mx = std::max(mx, L[k * M + j]);
    double z = 0.0;
    for (std::size_t k = 0; k < K; ++k) z += std::exp(L[k * M + j] - mx);
    for (std::size_t k = 0; k < K; ++k) prob[k * M + j] = std::exp(L[k * M + j] - mx) / z;
    total += -(L[y * M + j] - mx - std::log(z));
    ++count;
  }
  if (count == 0) throw DomainError("cross_entropy: every pixel is ignored, loss undefined");
  Tensor out = Tensor::scalar(total / static_cast<double>(count));
  detail::ensure_finite(out, "cross_entropy");
  if (auto* tape = detail::recording({&logits})) {
    tape->record({logits}, out, [logits, out, labels, K, M, count, prob = std::move(prob)] {
      const double g = detail::out_grad(out)[0] / static_cast<double>(count);
      auto gl = detail::grad_of(logits);
      for (std::size_t j = 0; j < M; ++j) {
        const std::uint8_t y = labels.labels[j];
        if (y == kIgnoreLabel) continue;
        for (std::size_t k = 0; k < K; ++k) gl[k * M + j] += g * (prob[k * M + j] - (k == y ? 1.0 : 0.0));
      }
    });
  }
  return out;
}

/// sum_i x_i ln(max(x_i, 1e-12) * n)
inline Tensor entropy_against_uniform(const Tensor& x, double n) {
  double total = 0.0;
  for (double v : x.data()) total += v * std::log(std::max(v, kLogFloor) * n);
  Tensor out = Tensor::scalar(total);
  detail::ensure_finite(out, "entropy_against_uniform");
  if (auto* tape = detail::recording({&x})) {
    tape->record({x}, out, [x, out, n] {
      const double g = detail::out_grad(out)[0];
      auto gx = detail::grad_of(x);
      const auto v = x.data();
      for (std::size_t i = 0; i < v.size(); ++i) {
        gx[i] += g * (std::log(std::max(v[i], kLogFloor) * n) + (v[i] > kLogFloor ? 1.0 : 0.0));
      }
    });
  }
  return out;
}

/// Node-usage marginal q_n = (1/HW) sum_pixels P[n, pixel].
inline Tensor node_usage(const Tensor& scores) {
  return scale(sum(scores, 1), 1.0 / static_cast<double>(scores.dim(1)));
}

/// KL of the soft scores against uniform: the node-usage marginal, or the
/// mean per-pixel column divergence.
inline Tensor kl_uniformity(const Tensor& soft_scores, KlVariant variant = KlVariant::marginal) {
  if (soft_scores.rank() != 2) throw DimensionError("kl_uniformity: expected N x HW scores");
  const double N = static_cast<double>(soft_scores.dim(0));
  if (variant == KlVariant::marginal) return entropy_against_uniform(node_usage(soft_scores), N);
  return scale(entropy_against_uniform(soft_scores, N), 1.0 / static_cast<double>(soft_scores.dim(1)));
}

inline Tensor kl_uniformity(const ProjectionMatrix& p, KlVariant variant = KlVariant::marginal) {
  return kl_uniformity(p.soft, variant);
}

/// Mean squared error over non-degenerate nodes and the 3 coordinates; the
/// target is constant. Zero when every node is degenerate.
inline Tensor centroid_mse(const Tensor& predicted, const CentroidTarget& target) {
  if (predicted.shape() != target.centroids.shape() || target.degenerate.size() != predicted.dim(0)) {
    throw DimensionError("centroid_mse: prediction " + to_string(predicted.shape()) + " vs target " +
                         to_string(target.centroids.shape()));
  }
  const std::size_t N = predicted.dim(0);
  const std::size_t live = N - target.degenerate_count();
  if (live == 0) return Tensor::scalar(0.0);
  Tensor mask(Shape{N, 3});
  auto m = mask.mutable_data();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t a = 0; a < 3; ++a) m[n * 3 + a] = target.degenerate[n] ? 0.0 : 1.0;
  const Tensor diff = mul(sub(predicted, target.centroids.detach()), mask);
  return scale(sum(mul(diff, diff)), 1.0 / static_cast<double>(3 * live));
}

/// ce + alpha * kl + beta * mse; absent terms are omitted.
inline Tensor total_loss(const Tensor& ce, const Tensor* kl, const Tensor* mse, const LossWeights& w) {
  Tensor total = ce;
  if (kl) total = add(total, scale(*kl, w.alpha));
  if (mse) total = add(total, scale(*mse, w.beta));
  return total;
}

}  // namespace pfseg
