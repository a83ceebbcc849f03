#pragma once

// Confusion-matrix segmentation metrics and assignment diagnostics.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "pfseg/io.hpp"
#include "pfseg/losses.hpp"

namespace pfseg {

/// counts[truth * K + predicted]; ignore-label pixels are skipped.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes) : classes_(classes), counts_(classes * classes, 0) {
    if (classes == 0) throw ConfigError("confusion matrix needs at least one class");
  }

  void add(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> truth) {
    if (predicted.size() != truth.size()) throw DimensionError("confusion matrix: prediction and truth differ in size");
    for (std::size_t i = 0; i < truth.size(); ++i) {
      if (truth[i] == kIgnoreLabel) continue;
      if (truth[i] >= classes_ || predicted[i] >= classes_) {
        throw DomainError("confusion matrix: label outside [0, " + std::to_string(classes_) + ") at pixel " +
                          std::to_string(i));
      }
      ++counts_[truth[i] * classes_ + predicted[i]];
    }
  }

  void merge(const ConfusionMatrix& other) {
    if (other.classes_ != classes_) throw DimensionError("confusion matrix: class count mismatch");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  }

  std::size_t classes() const { return classes_; }
  std::uint64_t at(std::size_t truth, std::size_t predicted) const { return counts_[truth * classes_ + predicted]; }

 private:
  std::size_t classes_;
  std::vector<std::uint64_t> counts_;
};

struct EvalReport {
  std::vector<double> iou, accuracy;
  std::vector<std::uint8_t> iou_defined, accuracy_defined;
  std::vector<std::uint64_t> pixel_counts;  // truth pixels per class
  double mean_iou = 0.0, mean_accuracy = 0.0;

  std::string str() const {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4) << "mIoU " << mean_iou << "  mAcc " << mean_accuracy << "\n";
    for (std::size_t c = 0; c < iou.size(); ++c) {
      os << "  class " << c << "  pixels " << pixel_counts[c] << "  IoU ";
      if (iou_defined[c]) os << iou[c]; else os << "n/a";
      os << "  Acc ";
      if (accuracy_defined[c]) os << accuracy[c]; else os << "n/a";
      os << "\n";
    }
    return os.str();
  }
};

/// IoU = TP/(TP+FP+FN), averaged over classes seen in truth or prediction.
/// Acc = TP/(TP+FN), averaged over classes seen in truth.
inline EvalReport evaluate_confusion(const ConfusionMatrix& cm) {
  const std::size_t K = cm.classes();
  EvalReport r;
  r.iou.assign(K, 0.0);
  r.accuracy.assign(K, 0.0);
  r.iou_defined.assign(K, 0);
  r.accuracy_defined.assign(K, 0);
  r.pixel_counts.assign(K, 0);
  double iou_sum = 0.0, acc_sum = 0.0;
  std::size_t iou_n = 0, acc_n = 0;
  for (std::size_t c = 0; c < K; ++c) {
    std::uint64_t tp = cm.at(c, c), fn = 0, fp = 0;
    for (std::size_t o = 0; o < K; ++o) {
      if (o == c) continue;
      fn += cm.at(c, o);
      fp += cm.at(o, c);
    }
    r.pixel_counts[c] = tp + fn;
    if (tp + fp + fn > 0) {
      r.iou[c] = static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
      r.iou_defined[c] = 1;
      iou_sum += r.iou[c];
      ++iou_n;
    }
    if (tp + fn > 0) {
      r.accuracy[c] = static_cast<double>(tp) / static_cast<double>(tp + fn);
      r.accuracy_defined[c] = 1;
      acc_sum += r.accuracy[c];
      ++acc_n;
    }
  }
  r.mean_iou = iou_n ? iou_sum / static_cast<double>(iou_n) : 0.0;
  r.mean_accuracy = acc_n ? acc_sum / static_cast<double>(acc_n) : 0.0;
  return r;
}

/// Per-pixel argmax over the class axis of K x H x W logits (ties to the lowest class).
inline std::vector<std::uint8_t> argmax_labels(const Tensor& logits) {
  if (logits.rank() != 3) throw DimensionError("argmax_labels: expected K x H x W logits");
  const std::size_t K = logits.dim(0), M = logits.dim(1) * logits.dim(2);
  if (K > kIgnoreLabel) throw ConfigError("argmax_labels: too many classes for 8-bit labels");
  const auto L = logits.data();
  std::vector<std::uint8_t> out(M, 0);
  for (std::size_t j = 0; j < M; ++j) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < K; ++k) {
      if (L[k * M + j] > L[best * M + j]) best = k;
    }
    out[j] = static_cast<std::uint8_t>(best);
  }
  return out;
}

/// Entropy of the node-usage marginal, ln N - KL_marginal, in [0, ln N].
inline double node_usage_entropy(const Tensor& scores) {
  NoGradScope no_grad;
  const double N = static_cast<double>(scores.dim(0));
  return std::log(N) - kl_uniformity(scores, KlVariant::marginal).item();
}

/// Per-pixel max over nodes, mapped linearly from [1/N, 1] to [0, 255].
inline Image visualize_assignment(const Tensor& scores, std::size_t width, std::size_t height) {
  if (scores.rank() != 2 || scores.dim(1) != width * height) {
    throw DimensionError("visualize_assignment: scores " + to_string(scores.shape()) + " vs " + std::to_string(width) +
                         "x" + std::to_string(height) + " grid");
  }
  const std::size_t N = scores.dim(0), M = scores.dim(1);
  const double lo = 1.0 / static_cast<double>(N);
  const auto P = scores.data();
  Image img(width, height, 1, 255);
  for (std::size_t j = 0; j < M; ++j) {
    double mx = P[j];
    for (std::size_t n = 1; n < N; ++n) mx = std::max(mx, P[n * M + j]);
    const double t = std::clamp((mx - lo) / (1.0 - lo), 0.0, 1.0);
    img.pixels[j] = static_cast<std::uint16_t>(std::lround(t * 255.0));
  }
  return img;
}

inline double mean_brightness(const Image& img) {
  double s = 0.0;
  for (auto v : img.pixels) s += v;
  return img.pixels.empty() ? 0.0 : s / static_cast<double>(img.pixels.size());
}

}  // namespace pfseg
