#pragma once
// Two-branch segmentation model: toy convolutional encoders, the
// project-and-fuse graph unit, and a 1x1 classifier upsampled to input size.

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pfseg/checkpoint.hpp"
#include "pfseg/config.hpp"
#include "pfseg/geometry.hpp"
#include "pfseg/gnn.hpp"
#include "pfseg/gradcheck.hpp"
#include "pfseg/graph_build.hpp"
#include "pfseg/losses.hpp"
#include "pfseg/random.hpp"
#include "pfseg/reprojection.hpp"
#include "pfseg/scene.hpp"

namespace pfseg {

/// Network-ready tensors for one scene.
struct ModelInput {
  std::string name;
  Tensor rgb;      // 3 x H x W in [0, 1]
  Tensor input3d;  // 3 x H x W normals or 1 x H x W depth / z_max
  DepthMap depth;
  LabelMap labels;
};

inline Tensor rgb_tensor(const Image& img) {
  if (img.channels != 3) throw DimensionError("rgb input must have 3 channels");
  const std::size_t M = img.width * img.height;
  Tensor t(Shape{3, img.height, img.width});
  auto d = t.mutable_data();
  const double scale = 1.0 / static_cast<double>(img.maxval);
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t c = 0; c < 3; ++c) d[c * M + i] = img.pixels[i * 3 + c] * scale;
  return t;
}

inline Tensor depth_tensor(const DepthMap& depth, double z_max) {
  Tensor t(Shape{1, depth.height(), depth.width()});
  auto d = t.mutable_data();
  for (std::size_t i = 0; i < depth.size(); ++i) d[i] = depth.valid(i) ? depth.z(i) / z_max : 0.0;
  return t;
}

inline ModelInput prepare_input(const SceneRecord& r, const ModelConfig& cfg) {
  if (r.rgb.width != cfg.width || r.rgb.height != cfg.height) {
    throw DimensionError("scene " + r.name + " is " + std::to_string(r.rgb.width) + "x" + std::to_string(r.rgb.height) +
                         ", model expects " + std::to_string(cfg.width) + "x" + std::to_string(cfg.height));
  }
  ModelInput in{r.name, rgb_tensor(r.rgb), Tensor(), r.depth, r.labels};
  if (cfg.input3d == Input3d::depth) {
    in.input3d = depth_tensor(r.depth, cfg.graph_build.z_max);
  } else {
    in.input3d = fill_invalid_normals(encode_normals(r.depth, r.intrinsics, cfg.normals)).to_tensor();
  }
  return in;
}

struct ForwardResult {
  Tensor logits;    // K x H x W
  Tensor features;  // C2 x H/4 x W/4 map fed to the classifier
  std::optional<ProjectionMatrix> projection;
  std::optional<Tensor> nodes;              // fused node features before the GNN
  std::optional<Tensor> adjacency;          // normalized
  std::optional<Tensor> centroids;          // predicted M_c
};

struct LossTerms {
  Tensor total, ce;
  std::optional<Tensor> kl, mse;
  std::optional<CentroidTarget> target;
};

/// Test hook: when set, the backward pass through the logits is scaled by
/// 1.5 so gradient checks must fail. Never set in normal operation.
inline bool& corrupt_backward_hook() {
  static bool on = false;
  return on;
}

namespace detail {

inline Tensor corrupt_gradient(const Tensor& x) {
  Tensor out(x.shape(), std::vector<double>(x.data().begin(), x.data().end()));
  if (auto* tape = recording({&x})) {
    tape->record({x}, out, [x, out] {
      const auto g = out_grad(out);
      auto gx = grad_of(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += 1.5 * g[i];
    });
  }
  return out;
}

/// Rethrows DimensionError with the pipeline stage prepended.
template <typename Fn>
auto stage(const char* name, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const DimensionError& e) {
    throw DimensionError(std::string("stage ") + name + ": " + e.what());
  }
}

inline Tensor conv_block(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride) {
  return relu(add_channel_bias(conv2d(x, w, stride, 1), b));
}

}  // namespace detail

class Model {
 public:
  explicit Model(ModelConfig cfg, std::uint64_t seed = 0) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(seed);
    auto uniform = [&](const std::string& name, Shape shape, std::size_t fan_in, double gain = 1.0) {
      const double bound = gain / std::sqrt(static_cast<double>(fan_in));
      params_.add(name, random_uniform(std::move(shape), rng, -bound, bound));
    };
    auto encoder = [&](const std::string& prefix, std::size_t in, const std::vector<std::size_t>& widths) {
      for (std::size_t i = 0; i < widths.size(); ++i) {
        uniform(prefix + ".conv" + std::to_string(i) + ".weight", {widths[i], in, 3, 3}, in * 9);
        uniform(prefix + ".conv" + std::to_string(i) + ".bias", {widths[i]}, in * 9);
        in = widths[i];
      }
    };
    encoder("enc2d", 3, cfg_.enc2d);
    if (cfg_.graph) encoder("enc3d", cfg_.input3d_channels(), cfg_.enc3d);
    const std::size_t C2 = cfg_.enc2d.back(), C3 = cfg_.enc3d.back();
    const std::size_t N = cfg_.graph_build.nodes, D = cfg_.graph_build.dim;
    if (cfg_.graph) {
      uniform("graph.projection", {N, C2}, C2);
      uniform("graph.transform2d", {D, C2}, C2);
      uniform("graph.transform3d", {D, C3}, C3);
      if (cfg_.graph_build.fusion == FusionMode::concat) uniform("graph.fusion", {D, 2 * D}, 2 * D);
      if (cfg_.graph_build.edges == EdgeSource::centroids) {
        const std::size_t HW = cfg_.feature_width() * cfg_.feature_height();
        uniform("graph.centroid", {HW, 3}, HW);
      }
      for (std::size_t l = 0; l < cfg_.gnn_layers; ++l) {
        const std::string p = "gnn.layer" + std::to_string(l) + ".";
        if (cfg_.gnn == LayerType::graph_convolution) {
          uniform(p + "W_S", {D, D}, D);
          uniform(p + "W_N", {D, D}, D);
        } else {
          uniform(p + "W", {D, D}, D);
        }
      }
      // Pooling is mass-unnormalized, so a reprojected pixel carries about HW/N
      // times its own feature; the gain offsets that at initialization.
      const double mass = static_cast<double>(cfg_.feature_width() * cfg_.feature_height()) / static_cast<double>(N);
      if (!cfg_.reprojection.tied) uniform("reproject.T_prime", {C2, D}, D, 1.0 / mass);
    }
    uniform("head.weight", {cfg_.num_classes, C2, 1, 1}, C2);
    uniform("head.bias", {cfg_.num_classes}, C2);
  }

  const ModelConfig& config() const { return cfg_; }
  ParameterStore& parameters() { return params_; }
  const ParameterStore& parameters() const { return params_; }

  /// Groups for per-module reporting: enc2d, enc3d, graph.<part>, gnn, reproject, head.
  static std::string group_of(const std::string& name) {
    const auto dot = name.find('.');
    const std::string head = name.substr(0, dot);
    if (head == "graph") return name;
    return head;
  }

  ForwardResult forward(const ModelInput& in) const {
    const ModelConfig& c = cfg_;
    if (in.rgb.rank() != 3 || in.rgb.dim(1) != c.height || in.rgb.dim(2) != c.width) {
      throw DimensionError("stage input: rgb " + to_string(in.rgb.shape()) + " does not match configured " +
                           std::to_string(c.height) + "x" + std::to_string(c.width));
    }
    ForwardResult out;
    const Tensor x2 = detail::stage("enc2d", [&] { return encode("enc2d", in.rgb); });
    out.features = x2;
    if (c.graph) {
      const Tensor x3 = detail::stage("enc3d", [&] { return encode("enc3d", in.input3d); });
      if (x3.dim(1) != x2.dim(1) || x3.dim(2) != x2.dim(2)) {
        throw DimensionError("stage fusion: 2D features " + to_string(x2.shape()) + " and 3D features " +
                             to_string(x3.shape()) + " differ in spatial extent");
      }
      // One projection matrix per sample, generated from the 2D branch.
      const ProjectionMatrix p = detail::stage("projection", [&] {
        return assign(generate_projection(x2, params_.get("graph.projection")), c.graph_build.assignment);
      });
      const Tensor v = detail::stage("fusion", [&] {
        const Tensor z2 = transform_features(x2, params_.get("graph.transform2d"));
        const Tensor z3 = transform_features(x3, params_.get("graph.transform3d"));
        const Tensor* reduction = c.graph_build.fusion == FusionMode::concat ? &params_.get("graph.fusion") : nullptr;
        return project_and_fuse(z2, z3, p, c.graph_build.fusion, reduction);
      });
      const Tensor a = detail::stage("adjacency", [&] {
        switch (c.graph_build.edges) {
          case EdgeSource::node_features: return adjacency_semantic(v);
          case EdgeSource::projection_matrix: return adjacency_from_projection(p);
          case EdgeSource::centroids: break;
        }
        out.centroids = predict_centroids(p, params_.get("graph.centroid"));
        return adjacency_locality(*out.centroids, c.graph_build.epsilon);
      });
      const Tensor h = detail::stage("gnn", [&] { return stack_forward(v, a, gnn_stack()); });
      out.features = detail::stage("reproject", [&] {
        const Tensor t_prime = c.reprojection.tied ? transpose(params_.get("graph.transform2d"))
                                                   : params_.get("reproject.T_prime");
        return reproject(h, p, x2, t_prime, c.reprojection.residual);
      });
      out.projection = p;
      out.nodes = v;
      out.adjacency = a;
    }
    out.logits = detail::stage("head", [&] {
      const Tensor scores = add_channel_bias(conv2d(out.features, params_.get("head.weight"), 1, 0), params_.get("head.bias"));
      const Tensor up = upsample_bilinear(scores, 4);
      return corrupt_backward_hook() ? detail::corrupt_gradient(up) : up;
    });
    if (out.logits.dim(1) != c.height || out.logits.dim(2) != c.width) {
      throw DimensionError("stage upsample: logits " + to_string(out.logits.shape()) + " do not match input " +
                           std::to_string(c.height) + "x" + std::to_string(c.width));
    }
    return out;
  }

  /// Supervision target M_g for `fr`; computed from the current assignment
  /// and never differentiated.
  CentroidTarget centroid_target(const ForwardResult& fr, const ModelInput& in) const {
    NoGradScope no_grad;
    const ProjectionMatrix& p = *fr.projection;
    ProjectionMatrix frozen{p.scores.detach(), p.soft.detach(), p.mode, p.height, p.width};
    return compute_centroids_oracle(frozen, in.depth, cfg_.graph_build.z_max);
  }

  /// Total loss; `target` overrides the centroid target (frozen targets make
  /// the loss a fixed function of the parameters for gradient checks).
  LossTerms loss(const ForwardResult& fr, const ModelInput& in, const CentroidTarget* target = nullptr) const {
    LossTerms t{Tensor(), cross_entropy(fr.logits, in.labels), std::nullopt, std::nullopt, std::nullopt};
    if (cfg_.graph && cfg_.kl) t.kl = kl_uniformity(*fr.projection, cfg_.kl_variant);
    if (cfg_.graph && fr.centroids) {
      t.target = target ? *target : centroid_target(fr, in);
      t.mse = centroid_mse(*fr.centroids, *t.target);
    }
    t.total = total_loss(t.ce, t.kl ? &*t.kl : nullptr, t.mse ? &*t.mse : nullptr, cfg_.loss);
    return t;
  }

 private:
  Tensor encode(const std::string& prefix, const Tensor& x) const {
    Tensor h = x;
    for (std::size_t i = 0; i < 3; ++i) {
      const std::string p = prefix + ".conv" + std::to_string(i);
      h = detail::conv_block(h, params_.get(p + ".weight"), params_.get(p + ".bias"), i == 0 ? 1 : 2);
    }
    return h;
  }

  GnnStack gnn_stack() const {
    GnnStack s;
    for (std::size_t l = 0; l < cfg_.gnn_layers; ++l) {
      const std::string p = "gnn.layer" + std::to_string(l) + ".";
      GnnLayer layer;
      layer.type = cfg_.gnn;
      layer.aggregation = cfg_.aggregation;
      if (cfg_.gnn == LayerType::graph_convolution) {
        layer.W_S = params_.get(p + "W_S");
        layer.W_N = params_.get(p + "W_N");
      } else {
        layer.W = params_.get(p + "W");
      }
      s.layers.push_back(layer);
    }
    return s;
  }

  ModelConfig cfg_;
  ParameterStore params_;
};

struct GroupError {
  std::string group;
  double max_rel_error = 0;
};

/// Central-difference check of the total loss over every parameter of a
/// freshly initialized model on one generated size x size scene. The
/// centroid target is frozen at the initial parameters.
inline std::vector<GroupError> pipeline_grad_check(const ModelConfig& base, std::size_t size, std::uint64_t seed,
                                                   double eps = 1e-6) {
  ModelConfig cfg = base;
  cfg.width = cfg.height = size;
  Model model(cfg, seed);
  SceneParams sp;
  sp.width = sp.height = size;
  const ModelInput in = prepare_input(to_record(generate_scene(seed, sp)), cfg);
  std::optional<CentroidTarget> target;
  if (cfg.graph) {
    NoGradScope no_grad;
    const ForwardResult fr = model.forward(in);
    if (fr.centroids) target = model.centroid_target(fr, in);
  }
  const auto f = [&] { return model.loss(model.forward(in), in, target ? &*target : nullptr).total; };
  const auto& entries = model.parameters().entries();
  const GradCheckReport report = finite_difference_report(f, model.parameters().tensors(), eps);
  std::vector<GroupError> out;
  for (const auto& e : report.per_param) {
    const std::string g = Model::group_of(entries[e.param].name);
    auto it = std::find_if(out.begin(), out.end(), [&](const GroupError& x) { return x.group == g; });
    if (it == out.end()) {
      out.push_back({g, e.max_rel_error});
    } else {
      it->max_rel_error = std::max(it->max_rel_error, e.max_rel_error);
    }
  }
  return out;
}

}  // namespace pfseg
