#pragma once
// Model and training configuration, stored as a `key value` text file.

#include <cstdint>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "pfseg/geometry.hpp"
#include "pfseg/gnn.hpp"
#include "pfseg/graph_build.hpp"
#include "pfseg/io.hpp"
#include "pfseg/losses.hpp"
#include "pfseg/reprojection.hpp"

namespace pfseg {

enum class Input3d { depth, normal };

inline const char* to_string(Input3d m) { return m == Input3d::depth ? "depth" : "normal"; }
inline const char* to_string(KlVariant v) { return v == KlVariant::per_pixel ? "per_pixel" : "marginal"; }

struct ModelConfig {
  std::size_t width = 64, height = 64;
  std::size_t num_classes = 6;
  std::vector<std::size_t> enc2d = {16, 32, 64};
  std::vector<std::size_t> enc3d = {8, 16, 32};
  Input3d input3d = Input3d::normal;
  bool graph = true;
  GraphBuildConfig graph_build;
  LayerType gnn = LayerType::graph_convolution;
  Aggregation aggregation = Aggregation::sum;
  std::size_t gnn_layers = 2;
  ReprojectionConfig reprojection;
  bool kl = true;
  KlVariant kl_variant = KlVariant::marginal;
  LossWeights loss;
  NeighborhoodParams normals;

  std::size_t feature_width() const { return width / 4; }
  std::size_t feature_height() const { return height / 4; }
  std::size_t input3d_channels() const { return input3d == Input3d::depth ? 1 : 3; }

  /// Throws ConfigError on inconsistent dimensions.
  void validate() const {
    if (width == 0 || height == 0 || width % 4 != 0 || height % 4 != 0) {
      throw ConfigError("config: width and height must be positive multiples of 4 (output stride 4)");
    }
    if (num_classes < 2 || num_classes > 255) throw ConfigError("config: classes must lie in [2, 255]");
    if (enc2d.size() != 3 || enc3d.size() != 3) throw ConfigError("config: encoders have exactly 3 stages");
    for (auto c : enc2d)
      if (c == 0) throw ConfigError("config: encoder widths must be positive");
    for (auto c : enc3d)
      if (c == 0) throw ConfigError("config: encoder widths must be positive");
    loss.validate();
    normals.validate();
    if (graph) {
      graph_build.validate(enc2d.back(), enc3d.back());
      if (gnn_layers == 0) throw ConfigError("config: gnn_layers must be >= 1");
    }
  }

  /// Non-fatal inconsistencies, one line each.
  std::vector<std::string> warnings() const {
    std::vector<std::string> out;
    if (graph && graph_build.edges == EdgeSource::centroids && loss.beta == 0.0) {
      out.push_back("edges=centroid with beta=0: centroid regressor receives no supervision");
    }
    if (graph && !kl && loss.alpha != 0.0) out.push_back("kl=off: alpha is ignored");
    if (!graph) out.push_back("graph=off: graph, gnn and auxiliary-loss settings are ignored");
    return out;
  }
};

struct TrainConfig {
  double lr = 0.01;
  double weight_decay = 2e-4;
  std::size_t batch = 4;
  std::size_t epochs = 30;
  std::uint64_t seed = 0;
  double holdout = 0.2;  // fraction of scenes (taken from the end) held out for evaluation
  std::size_t threads = 1;
  double clip_norm = 5.0;  // global gradient-norm clip; 0 disables

  void validate() const {
    if (!(lr >= 0.0)) throw ConfigError("config: lr must be >= 0");
    if (!(weight_decay >= 0.0)) throw ConfigError("config: weight_decay must be >= 0");
    if (batch == 0) throw ConfigError("config: batch must be >= 1");
    if (!(holdout >= 0.0 && holdout < 1.0)) throw ConfigError("config: holdout must lie in [0, 1)");
    if (threads == 0) throw ConfigError("config: threads must be >= 1");
    if (!(clip_norm >= 0.0)) throw ConfigError("config: clip_norm must be >= 0");
  }
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
};

namespace detail {

inline std::string join_widths(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

inline std::vector<std::size_t> parse_widths(const std::string& key, const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) {
    try {
      std::size_t used = 0;
      const long long v = std::stoll(part, &used);
      if (used != part.size() || v <= 0) throw std::invalid_argument(part);
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw FormatError("key " + key + ": expected comma-separated positive integers, got '" + s + "'");
    }
  }
  return out;
}

inline std::size_t parse_count(const std::string& key, const std::string& s) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(s, &used);
    if (used != s.size() || v < 0) throw std::invalid_argument(s);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw FormatError("key " + key + ": expected a non-negative integer, got '" + s + "'");
  }
}

inline double parse_real(const std::string& key, const std::string& s) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw FormatError("key " + key + ": not a number: '" + s + "'");
  }
}

inline bool parse_switch(const std::string& key, const std::string& s) {
  if (s == "on" || s == "true" || s == "1") return true;
  if (s == "off" || s == "false" || s == "0") return false;
  throw FormatError("key " + key + ": expected on/off, got '" + s + "'");
}

template <typename E>
void parse_choice(E& out, const std::string& key, const std::string& s,
                  std::initializer_list<std::pair<const char*, std::type_identity_t<E>>> options) {
  std::string names;
  for (const auto& [name, value] : options) {
    if (s == name) {
      out = value;
      return;
    }
    names += std::string(names.empty() ? "" : "|") + name;
  }
  throw FormatError("key " + key + ": expected " + names + ", got '" + s + "'");
}

inline std::string real_str(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace detail

/// Applies one `key value` setting. Unknown keys are a FormatError.
inline void apply_setting(RunConfig& rc, const std::string& key, const std::string& value) {
  using namespace detail;
  ModelConfig& m = rc.model;
  TrainConfig& t = rc.train;
  if (key == "width") m.width = parse_count(key, value);
  else if (key == "height") m.height = parse_count(key, value);
  else if (key == "classes") m.num_classes = parse_count(key, value);
  else if (key == "enc2d") m.enc2d = parse_widths(key, value);
  else if (key == "enc3d") m.enc3d = parse_widths(key, value);
  else if (key == "input3d") parse_choice(m.input3d, key, value, {{"depth", Input3d::depth}, {"normal", Input3d::normal}});
  else if (key == "graph") m.graph = parse_switch(key, value);
  else if (key == "nodes") m.graph_build.nodes = parse_count(key, value);
  else if (key == "dim") m.graph_build.dim = parse_count(key, value);
  else if (key == "assignment") parse_choice(m.graph_build.assignment, key, value, {{"soft", AssignmentMode::soft}, {"hard", AssignmentMode::hard}});
  else if (key == "edges") {
    parse_choice(m.graph_build.edges, key, value, {{"v", EdgeSource::node_features}, {"p", EdgeSource::projection_matrix},
                                                    {"centroid", EdgeSource::centroids}});
  } else if (key == "fusion") parse_choice(m.graph_build.fusion, key, value, {{"sum", FusionMode::sum}, {"cat", FusionMode::concat}});
  else if (key == "epsilon") m.graph_build.epsilon = parse_real(key, value);
  else if (key == "z_max") m.graph_build.z_max = parse_real(key, value);
  else if (key == "gnn") parse_choice(m.gnn, key, value, {{"gcn", LayerType::graph_convolution}, {"reasoning", LayerType::graph_reasoning}});
  else if (key == "aggregation") {
    parse_choice(m.aggregation, key, value, {{"sum", Aggregation::sum}, {"mean", Aggregation::mean}, {"max", Aggregation::max}});
  } else if (key == "gnn_layers") m.gnn_layers = parse_count(key, value);
  else if (key == "residual") m.reprojection.residual = parse_switch(key, value);
  else if (key == "tied") m.reprojection.tied = parse_switch(key, value);
  else if (key == "kl") m.kl = parse_switch(key, value);
  else if (key == "kl_variant") parse_choice(m.kl_variant, key, value, {{"marginal", KlVariant::marginal}, {"per_pixel", KlVariant::per_pixel}});
  else if (key == "alpha") m.loss.alpha = parse_real(key, value);
  else if (key == "beta") m.loss.beta = parse_real(key, value);
  else if (key == "normal_k") m.normals.k = parse_count(key, value);
  else if (key == "normal_gamma") m.normals.gamma = parse_real(key, value);
  else if (key == "lr") t.lr = parse_real(key, value);
  else if (key == "weight_decay") t.weight_decay = parse_real(key, value);
  else if (key == "batch") t.batch = parse_count(key, value);
  else if (key == "epochs") t.epochs = parse_count(key, value);
  else if (key == "seed") t.seed = parse_count(key, value);
  else if (key == "holdout") t.holdout = parse_real(key, value);
  else if (key == "threads") t.threads = parse_count(key, value);
  else if (key == "clip_norm") t.clip_norm = parse_real(key, value);
  else throw FormatError("config: unknown key '" + key + "'");
}

/// Every field, in a stable order.
inline KeyValueFile to_key_values(const RunConfig& rc) {
  using detail::real_str;
  const ModelConfig& m = rc.model;
  const TrainConfig& t = rc.train;
  auto sw = [](bool b) { return std::string(b ? "on" : "off"); };
  KeyValueFile kv;
  kv.set("width", std::to_string(m.width));
  kv.set("height", std::to_string(m.height));
  kv.set("classes", std::to_string(m.num_classes));
  kv.set("enc2d", detail::join_widths(m.enc2d));
  kv.set("enc3d", detail::join_widths(m.enc3d));
  kv.set("input3d", to_string(m.input3d));
  kv.set("graph", sw(m.graph));
  kv.set("nodes", std::to_string(m.graph_build.nodes));
  kv.set("dim", std::to_string(m.graph_build.dim));
  kv.set("assignment", to_string(m.graph_build.assignment));
  kv.set("edges", to_string(m.graph_build.edges));
  kv.set("fusion", to_string(m.graph_build.fusion));
  kv.set("epsilon", real_str(m.graph_build.epsilon));
  kv.set("z_max", real_str(m.graph_build.z_max));
  kv.set("gnn", to_string(m.gnn));
  kv.set("aggregation", to_string(m.aggregation));
  kv.set("gnn_layers", std::to_string(m.gnn_layers));
  kv.set("residual", sw(m.reprojection.residual));
  kv.set("tied", sw(m.reprojection.tied));
  kv.set("kl", sw(m.kl));
  kv.set("kl_variant", to_string(m.kl_variant));
  kv.set("alpha", real_str(m.loss.alpha));
  kv.set("beta", real_str(m.loss.beta));
  kv.set("normal_k", std::to_string(m.normals.k));
  kv.set("normal_gamma", real_str(m.normals.gamma));
  kv.set("lr", real_str(t.lr));
  kv.set("weight_decay", real_str(t.weight_decay));
  kv.set("batch", std::to_string(t.batch));
  kv.set("epochs", std::to_string(t.epochs));
  kv.set("seed", std::to_string(t.seed));
  kv.set("holdout", real_str(t.holdout));
  kv.set("threads", std::to_string(t.threads));
  kv.set("clip_norm", real_str(t.clip_norm));
  return kv;
}

/// Defaults overridden by every key present in `kv`.
inline RunConfig from_key_values(const KeyValueFile& kv) {
  RunConfig rc;
  for (const auto& key : kv.keys()) apply_setting(rc, key, kv.get(key));
  rc.model.validate();
  rc.train.validate();
  return rc;
}

inline RunConfig load_config(const std::string& path) {
  try {
    return from_key_values(KeyValueFile::load(path));
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

inline void save_config(const std::string& path, const RunConfig& rc) { write_text_file(path, to_key_values(rc).str()); }

/// Ablation arms: "baseline" (graph off), "full" (configuration as given),
/// or comma-separated switches among assignment, kl, edges, gnn, fusion,
/// input3d, e.g. "kl=off,edges=p".
inline void apply_ablation(RunConfig& rc, const std::string& arm) {
  if (arm.empty() || arm == "full") return;
  if (arm == "baseline") {
    rc.model.graph = false;
    return;
  }
  static const std::vector<std::string> allowed = {"assignment", "kl", "edges", "gnn", "fusion", "input3d", "graph"};
  std::stringstream ss(arm);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("ablation: expected key=value, got '" + item + "'");
    const std::string key = item.substr(0, eq);
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError("ablation: '" + key + "' is not an ablation switch");
    }
    try {
      apply_setting(rc, key, item.substr(eq + 1));
    } catch (const FormatError& e) {
      throw ConfigError(std::string("ablation: ") + e.what());
    }
  }
  rc.model.validate();
}

}  // namespace pfseg
