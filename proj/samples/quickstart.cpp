// Generates a handful of scenes, trains a small model for a few epochs and
// prints the held-out report alongside the node usage entropy.

#include <cstdio>

#include "pfseg/pfseg.hpp"

int main() {
  using namespace pfseg;
  RunConfig rc;
  rc.model.width = rc.model.height = 32;
  rc.model.enc2d = {8, 16, 16};
  rc.model.enc3d = {4, 8, 16};
  rc.model.graph_build.nodes = 4;
  rc.model.graph_build.dim = 8;
  rc.train.epochs = 5;

  SceneParams scenes;
  scenes.width = scenes.height = 32;
  auto [train_records, test_records] = split_holdout(generate_records(0, 20, scenes), rc.train.holdout);
  const auto train_set = prepare_inputs(train_records, rc.model, 1);
  const auto test_set = prepare_inputs(test_records, rc.model, 1);

  Model model(rc.model, rc.train.seed);
  TrainOptions opts;
  opts.config = rc.train;
  opts.on_epoch = [](const EpochStats& s) { std::printf("epoch %zu  loss %.4f  entropy %.3f\n", s.epoch, s.total, s.entropy); };
  const TrainResult result = train(model, train_set, opts);
  std::printf("entropy at initialization %.3f\n%s", result.initial_entropy, evaluate(model, test_set).str().c_str());
}
