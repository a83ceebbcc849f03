// pfseg command-line interface.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 format error,
// 3 numeric failure (non-finite loss, failed gradient check).

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>

#include "pfseg/pfseg.hpp"

namespace fs = std::filesystem;
using namespace pfseg;

namespace {

constexpr int kExitUsage = 1, kExitFormat = 2, kExitNumeric = 3;
constexpr double kGradTolerance = 1e-4;

struct Options {
  std::size_t threads = 1;
  std::string inject_fault;

  std::string depth, intrinsics, out, config, data, checkpoint, scene, ablation;
  std::size_t k = 9, count = 0, size = 0;
  double gamma = 0.05;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::size_t epochs = 0;
};

std::string config_sidecar(const std::string& checkpoint) { return checkpoint + ".config"; }

RunConfig checkpoint_config(const Options& o) {
  const std::string path = o.config.empty() ? config_sidecar(o.checkpoint) : o.config;
  return load_config(path);
}

Model load_model(const Options& o, const RunConfig& rc) {
  Model model(rc.model);
  load_checkpoint(o.checkpoint, model.parameters());
  return model;
}

int cmd_encode_normals(const Options& o) {
  const DepthMap depth = DepthMap::from_millimeters(read_netpbm(o.depth));
  const CameraIntrinsics intr = CameraIntrinsics::from_key_values(KeyValueFile::load(o.intrinsics));
  NeighborhoodParams params;
  params.k = o.k;
  params.gamma = o.gamma;
  const NormalMap n = encode_normals(depth, intr, params, o.threads);
  write_netpbm(o.out, n.to_ppm());
  write_f64_sidecar(o.out + ".f64", n.to_sidecar());
  std::printf("valid normals: %zu / %zu (%.4f)\n", n.valid_count(), depth.size(),
              static_cast<double>(n.valid_count()) / static_cast<double>(depth.size()));
  return 0;
}

int cmd_gen_dataset(const Options& o) {
  SceneParams sp;
  if (o.size) sp.width = sp.height = o.size;
  const auto records = generate_records(o.seed, o.count, sp, o.threads);
  for (const auto& r : records) write_scene(fs::path(o.out) / r.name, r);
  std::printf("wrote %zu scenes to %s\n", records.size(), o.out.c_str());
  return 0;
}

int cmd_train(const Options& o) {
  RunConfig rc = load_config(o.config);
  if (o.seed_set) rc.train.seed = o.seed;
  if (o.epochs) rc.train.epochs = o.epochs;
  rc.train.threads = o.threads;
  apply_ablation(rc, o.ablation);
  for (const auto& w : rc.model.warnings()) std::fprintf(stderr, "warning: %s\n", w.c_str());

  auto [train_records, test_records] = split_holdout(load_dataset(o.data, o.threads), rc.train.holdout);
  if (train_records.empty()) throw ConfigError("train: holdout leaves no training scenes");
  const auto train_set = prepare_inputs(train_records, rc.model, o.threads);
  const auto test_set = prepare_inputs(test_records, rc.model, o.threads);

  Model model(rc.model, rc.train.seed);
  TrainOptions opts;
  opts.config = rc.train;
  if (o.inject_fault.rfind("nan-", 0) == 0) opts.inject_nan_term = o.inject_fault.substr(4);
  opts.on_epoch = [](const EpochStats& s) {
    std::printf("epoch %zu total %.6f ce %.6f kl %.6f mse %.6f entropy %.4f\n", s.epoch, s.total, s.ce, s.kl, s.mse,
                s.entropy);
    std::fflush(stdout);
  };
  const TrainResult result = train(model, train_set, opts);

  save_checkpoint(o.out, model.parameters());
  save_config(config_sidecar(o.out), rc);
  write_text_file(o.out + ".loss.csv", loss_csv(result.curve));
  std::printf("initial entropy %.4f\n", result.initial_entropy);
  if (test_set.empty()) {
    std::printf("no held-out scenes\n");
  } else {
    std::printf("held-out scenes: %zu\n%s", test_set.size(), evaluate(model, test_set, o.threads).str().c_str());
  }
  return 0;
}

int cmd_eval(const Options& o) {
  const RunConfig rc = checkpoint_config(o);
  const Model model = load_model(o, rc);
  const auto data = prepare_inputs(load_dataset(o.data, o.threads), rc.model, o.threads);
  std::printf("scenes: %zu\n%s", data.size(), evaluate(model, data, o.threads).str().c_str());
  if (rc.model.graph) std::printf("node usage entropy %.4f\n", mean_node_usage_entropy(model, data, data.size(), o.threads));
  return 0;
}

int cmd_infer(const Options& o) {
  const RunConfig rc = checkpoint_config(o);
  const Model model = load_model(o, rc);
  const ModelInput in = prepare_input(read_scene(o.scene), rc.model);
  NoGradScope no_grad;
  const auto labels = argmax_labels(model.forward(in).logits);
  write_netpbm(o.out, labels_to_image(LabelMap{rc.model.width, rc.model.height, labels}));
  return 0;
}

int cmd_viz_assignment(const Options& o) {
  const RunConfig rc = checkpoint_config(o);
  if (!rc.model.graph) throw ConfigError("viz-assignment: the model has no graph module");
  const Model model = load_model(o, rc);
  const ModelInput in = prepare_input(read_scene(o.scene), rc.model);
  NoGradScope no_grad;
  const ForwardResult fr = model.forward(in);
  const Image img = visualize_assignment(fr.projection->scores, rc.model.feature_width(), rc.model.feature_height());
  write_netpbm(o.out, img);
  std::printf("mean brightness %.4f  node usage entropy %.4f\n", mean_brightness(img),
              node_usage_entropy(fr.projection->soft));
  return 0;
}

int cmd_grad_check(const Options& o) {
  RunConfig rc = o.config.empty() ? RunConfig{} : load_config(o.config);
  corrupt_backward_hook() = o.inject_fault == "backward";
  const auto groups = pipeline_grad_check(rc.model, o.size ? o.size : 8, o.seed);
  double worst = 0;
  for (const auto& g : groups) {
    std::printf("%-20s %.3e\n", g.group.c_str(), g.max_rel_error);
    worst = std::max(worst, g.max_rel_error);
  }
  const bool ok = worst < kGradTolerance;
  std::printf("max relative error %.3e: %s\n", worst, ok ? "ok" : "FAILED");
  return ok ? 0 : kExitNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Project-and-fuse RGB-D segmentation toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Options o;
  app.add_option("--threads", o.threads, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--inject-fault", o.inject_fault)->group("");

  auto* enc = app.add_subcommand("encode-normals", "Depth PGM to normal PPM plus f64 sidecar");
  enc->add_option("--depth", o.depth, "16-bit millimeter depth PGM")->required();
  enc->add_option("--intrinsics", o.intrinsics, "key value file with fx fy cx cy")->required();
  enc->add_option("--out", o.out, "output PPM; the sidecar is written to <out>.f64")->required();
  enc->add_option("--k", o.k, "neighbors per plane fit");
  enc->add_option("--gamma", o.gamma, "relative depth gap threshold");

  auto* gen = app.add_subcommand("gen-dataset", "Write synthetic room scenes");
  gen->add_option("--out", o.out)->required();
  gen->add_option("--count", o.count)->required()->check(CLI::PositiveNumber);
  gen->add_option("--seed", o.seed, "first scene seed");
  gen->add_option("--size", o.size, "image side in pixels");

  auto* tr = app.add_subcommand("train", "Train and report on the held-out split");
  tr->add_option("--config", o.config)->required();
  tr->add_option("--data", o.data)->required();
  tr->add_option("--out", o.out, "checkpoint; <out>.config and <out>.loss.csv are written alongside")->required();
  tr->add_option("--seed", o.seed)->each([&](const std::string&) { o.seed_set = true; });
  tr->add_option("--epochs", o.epochs, "override the configured epoch count");
  tr->add_option("--ablation", o.ablation, "baseline, full, or key=value list over assignment, kl, edges, gnn, fusion, input3d");

  auto* ev = app.add_subcommand("eval", "mIoU and mAcc of a checkpoint over a dataset");
  ev->add_option("--checkpoint", o.checkpoint)->required();
  ev->add_option("--config", o.config, "defaults to <checkpoint>.config");
  ev->add_option("--data", o.data)->required();

  auto* inf = app.add_subcommand("infer", "Predicted label PGM for one scene");
  inf->add_option("--checkpoint", o.checkpoint)->required();
  inf->add_option("--config", o.config, "defaults to <checkpoint>.config");
  inf->add_option("--scene", o.scene)->required();
  inf->add_option("--out", o.out)->required();

  auto* viz = app.add_subcommand("viz-assignment", "Per-pixel max assignment as a grayscale PGM");
  viz->add_option("--checkpoint", o.checkpoint)->required();
  viz->add_option("--config", o.config, "defaults to <checkpoint>.config");
  viz->add_option("--scene", o.scene)->required();
  viz->add_option("--out", o.out)->required();

  auto* gc = app.add_subcommand("grad-check", "Finite-difference check of every parameter group");
  gc->add_option("--config", o.config, "defaults to the built-in configuration");
  gc->add_option("--size", o.size, "scene side in pixels, a multiple of 4");
  gc->add_option("--seed", o.seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*enc) return cmd_encode_normals(o);
    if (*gen) return cmd_gen_dataset(o);
    if (*tr) return cmd_train(o);
    if (*ev) return cmd_eval(o);
    if (*inf) return cmd_infer(o);
    if (*viz) return cmd_viz_assignment(o);
    if (*gc) return cmd_grad_check(o);
  } catch (const FormatError& e) {
    std::fprintf(stderr, "pfseg: format error: %s\n", e.what());
    return kExitFormat;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "pfseg: numeric error: %s\n", e.what());
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "pfseg: error: %s\n", e.what());
    return kExitUsage;
  }
  return kExitUsage;
}
