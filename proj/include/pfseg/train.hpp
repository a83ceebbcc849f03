#pragma once
// Adam training loop, dataset preparation and evaluation.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "pfseg/metrics.hpp"
#include "pfseg/model.hpp"
#include "pfseg/parallel.hpp"

namespace pfseg {

/// Adam with L2 weight decay folded into the gradient.
class Adam {
 public:
  struct Options {
    double lr = 0.01, beta1 = 0.9, beta2 = 0.999, eps = 1e-8, weight_decay = 2e-4;
  };

  Adam(ParameterStore& params, Options o) : params_(params), o_(o) {
    for (const auto& e : params_.entries()) {
      m_.emplace_back(e.value.numel(), 0.0);
      v_.emplace_back(e.value.numel(), 0.0);
    }
  }

  /// Applies one update from the accumulated gradients scaled by `grad_scale`.
  void step(double grad_scale = 1.0) {
    ++t_;
    const double c1 = 1.0 - std::pow(o_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(o_.beta2, static_cast<double>(t_));
    auto& entries = params_.entries();
    for (std::size_t k = 0; k < entries.size(); ++k) {
      Tensor& p = entries[k].value;
      auto w = p.mutable_data();
      const auto g = p.grad();
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = (g.empty() ? 0.0 : g[i] * grad_scale) + o_.weight_decay * w[i];
        m_[k][i] = o_.beta1 * m_[k][i] + (1.0 - o_.beta1) * gi;
        v_[k][i] = o_.beta2 * v_[k][i] + (1.0 - o_.beta2) * gi * gi;
        w[i] -= o_.lr * (m_[k][i] / c1) / (std::sqrt(v_[k][i] / c2) + o_.eps);
      }
    }
  }

  std::size_t steps() const { return t_; }

 private:
  ParameterStore& params_;
  Options o_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

struct EpochStats {
  std::size_t epoch = 0;
  double total = 0, ce = 0, kl = 0, mse = 0;
  double entropy = 0;  // mean node_usage_entropy over the probe scenes; 0 with the graph off
  double max_grad_norm = 0;  // largest batch-averaged gradient norm before clipping
};

struct TrainOptions {
  TrainConfig config;
  std::size_t entropy_probe = 32;  // scenes used for the per-epoch entropy
  std::function<void(const EpochStats&)> on_epoch;
  std::string inject_nan_term;  // test hook: poisons the named loss term
};

struct TrainResult {
  double initial_entropy = 0;
  std::vector<EpochStats> curve;
};

inline std::vector<ModelInput> prepare_inputs(const std::vector<SceneRecord>& records, const ModelConfig& cfg,
                                              std::size_t threads) {
  std::vector<ModelInput> out(records.size());
  parallel_for(records.size(), threads, [&](std::size_t i) { out[i] = prepare_input(records[i], cfg); });
  return out;
}

inline std::vector<SceneRecord> load_dataset(const std::filesystem::path& root, std::size_t threads = 1) {
  const auto dirs = list_scenes(root);
  if (dirs.empty()) throw FormatError("no scene_* directories under " + root.string());
  std::vector<SceneRecord> out(dirs.size());
  parallel_for(dirs.size(), threads, [&](std::size_t i) { out[i] = read_scene(dirs[i]); });
  return out;
}

/// Scenes generated for seeds [first, first + count), depth passed through
/// the on-disk millimeter quantization.
inline std::vector<SceneRecord> generate_records(std::uint64_t first, std::size_t count, const SceneParams& params,
                                                 std::size_t threads = 1) {
  std::vector<SceneRecord> out(count);
  parallel_for(count, threads, [&](std::size_t i) { out[i] = to_record(generate_scene(first + i, params)); });
  return out;
}

/// Leading scenes train, the trailing `holdout` fraction evaluates.
inline std::pair<std::vector<SceneRecord>, std::vector<SceneRecord>> split_holdout(std::vector<SceneRecord> all,
                                                                                   double holdout) {
  const std::size_t n_test = static_cast<std::size_t>(std::floor(holdout * static_cast<double>(all.size())));
  std::vector<SceneRecord> test(all.end() - static_cast<long>(n_test), all.end());
  all.resize(all.size() - n_test);
  return {std::move(all), std::move(test)};
}

inline double mean_node_usage_entropy(const Model& model, const std::vector<ModelInput>& data, std::size_t limit,
                                      std::size_t threads = 1) {
  if (!model.config().graph || data.empty()) return 0.0;
  const std::size_t n = std::min(limit, data.size());
  std::vector<double> h(n);
  parallel_for(n, threads, [&](std::size_t i) {
    NoGradScope no_grad;
    h[i] = node_usage_entropy(model.forward(data[i]).projection->soft);
  });
  return std::accumulate(h.begin(), h.end(), 0.0) / static_cast<double>(n);
}

namespace detail {

inline void check_term(const std::optional<Tensor>& t, const char* name, std::size_t epoch, const std::string& scene) {
  if (t && !std::isfinite(t->item())) {
    throw NumericError(std::string("training aborted: ") + name + " loss is not finite (epoch " +
                       std::to_string(epoch) + ", scene " + scene + ")");
  }
}

inline double gradient_norm(const ParameterStore& params) {
  double sq = 0.0;
  for (const auto& e : params.entries())
    if (e.value.has_grad())
      for (double g : e.value.grad()) sq += g * g;
  return std::sqrt(sq);
}

}  // namespace detail

/// Minibatch Adam. Batches are drawn from a per-epoch shuffle seeded by
/// `config.seed`; gradients within a batch accumulate in batch order and
/// are averaged. Throws NumericError naming the first non-finite loss term.
inline TrainResult train(Model& model, const std::vector<ModelInput>& data, const TrainOptions& options) {
  const TrainConfig& tc = options.config;
  tc.validate();
  if (data.empty()) throw ConfigError("train: empty dataset");
  Adam opt(model.parameters(), {tc.lr, 0.9, 0.999, 1e-8, tc.weight_decay});
  Rng rng(tc.seed ^ 0x5eedu);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  result.initial_entropy = mean_node_usage_entropy(model, data, options.entropy_probe, tc.threads);
  for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.uniform_int(0, static_cast<std::int64_t>(i - 1))]);
    EpochStats st;
    st.epoch = epoch;
    for (std::size_t start = 0; start < order.size(); start += tc.batch) {
      const std::size_t end = std::min(order.size(), start + tc.batch);
      model.parameters().zero_grad();
      for (std::size_t b = start; b < end; ++b) {
        const ModelInput& in = data[order[b]];
        GradientTape tape;
        TapeScope scope(&tape);
        LossTerms terms;
        try {
          terms = model.loss(model.forward(in), in);
        } catch (const NumericError& e) {
          throw NumericError(std::string("training aborted in forward pass (epoch ") + std::to_string(epoch) +
                             ", scene " + in.name + "): " + e.what());
        }
        if (!options.inject_nan_term.empty()) {
          const double nan = std::nan("");
          if (options.inject_nan_term == "ce") terms.ce = Tensor::scalar(nan);
          if (options.inject_nan_term == "kl" && terms.kl) terms.kl = Tensor::scalar(nan);
          if (options.inject_nan_term == "mse" && terms.mse) terms.mse = Tensor::scalar(nan);
        }
        detail::check_term(terms.ce, "ce", epoch, in.name);
        detail::check_term(terms.kl, "kl", epoch, in.name);
        detail::check_term(terms.mse, "mse", epoch, in.name);
        detail::check_term(terms.total, "total", epoch, in.name);
        tape.backward(terms.total);
        st.total += terms.total.item();
        st.ce += terms.ce.item();
        st.kl += terms.kl ? terms.kl->item() : 0.0;
        st.mse += terms.mse ? terms.mse->item() : 0.0;
      }
      double scale = 1.0 / static_cast<double>(end - start);
      const double norm = scale * detail::gradient_norm(model.parameters());
      st.max_grad_norm = std::max(st.max_grad_norm, norm);
      if (tc.clip_norm > 0.0 && norm > tc.clip_norm) scale *= tc.clip_norm / norm;
      opt.step(scale);
    }
    const double n = static_cast<double>(data.size());
    st.total /= n;
    st.ce /= n;
    st.kl /= n;
    st.mse /= n;
    st.entropy = mean_node_usage_entropy(model, data, options.entropy_probe, tc.threads);
    result.curve.push_back(st);
    if (options.on_epoch) options.on_epoch(st);
  }
  return result;
}

/// Confusion-matrix evaluation; per-scene matrices merge in dataset order.
inline EvalReport evaluate(const Model& model, const std::vector<ModelInput>& data, std::size_t threads = 1) {
  const std::size_t K = model.config().num_classes;
  std::vector<ConfusionMatrix> parts(data.size(), ConfusionMatrix(K));
  parallel_for(data.size(), threads, [&](std::size_t i) {
    NoGradScope no_grad;
    parts[i].add(argmax_labels(model.forward(data[i]).logits), data[i].labels.labels);
  });
  ConfusionMatrix all(K);
  for (const auto& p : parts) all.merge(p);
  return evaluate_confusion(all);
}

inline std::string loss_csv(const std::vector<EpochStats>& curve) {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,total,ce,kl,mse\n";
  for (const auto& s : curve) os << s.epoch << ',' << s.total << ',' << s.ce << ',' << s.kl << ',' << s.mse << '\n';
  return os.str();
}

}  // namespace pfseg
