#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "oracles.hpp"
#include "pfseg/gradcheck.hpp"
#include "pfseg/graph_build.hpp"
#include "test_util.hpp"

namespace pfseg {
namespace {

using testing::probe;

ProjectionMatrix wrap(const Tensor& scores, std::size_t h, std::size_t w,
                      AssignmentMode mode = AssignmentMode::soft) {
  return {scores, scores, mode, h, w};
}

/// Hard assignment from a label per pixel.
Tensor one_hot(const std::vector<std::size_t>& region, std::size_t n) {
  Tensor p(Shape{n, region.size()});
  for (std::size_t j = 0; j < region.size(); ++j) p.mutable_data()[region[j] * region.size() + j] = 1.0;
  return p;
}

Tensor flat(const Tensor& map) { return Tensor({map.dim(0), map.dim(1) * map.dim(2)}, std::vector<double>(map.data().begin(), map.data().end())); }

TEST(GenerateProjection, ZeroWeightsGiveUniformColumns) {
  Rng rng(1);
  const ProjectionMatrix p = generate_projection(random_uniform({3, 4, 5}, rng), Tensor(Shape{4, 3}));
  for (double v : p.scores.data()) EXPECT_DOUBLE_EQ(v, 0.25);
  EXPECT_EQ(p.height, 4u);
  EXPECT_EQ(p.width, 5u);
}

TEST(GenerateProjection, PermutationWeightsOnOneHotChannels) {
  // pixel j carries channel j % 3; node perm[c] receives that channel
  const std::size_t perm[3] = {2, 0, 1};
  Tensor x(Shape{3, 2, 3});
  for (std::size_t j = 0; j < 6; ++j) x.mutable_data()[(j % 3) * 6 + j] = 1.0;
  Tensor w(Shape{3, 3});
  for (std::size_t c = 0; c < 3; ++c) w.mutable_data()[perm[c] * 3 + c] = 1.0;
  const ProjectionMatrix p = generate_projection(x, w);
  const double hit = std::exp(1.0) / (std::exp(1.0) + 2.0);
  for (std::size_t j = 0; j < 6; ++j)
    for (std::size_t n = 0; n < 3; ++n)
      EXPECT_NEAR(p.scores[n * 6 + j], n == perm[j % 3] ? hit : (1.0 - hit) / 2.0, 1e-15);
}

TEST(GenerateProjection, MatchesPerPixelSoftmaxOracle) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const Tensor x = random_uniform({8, 6, 6}, rng);
    const Tensor w = random_uniform({4, 8}, rng);
    const ProjectionMatrix p = generate_projection(x, w);
    EXPECT_LT(oracle::max_abs_diff(p.scores, oracle::projection(oracle::to_mat(w), oracle::to_mat(flat(x)))), 1e-12);
    for (std::size_t j = 0; j < 36; ++j) {
      double s = 0.0;
      for (std::size_t n = 0; n < 4; ++n) s += p.scores[n * 36 + j];
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(GenerateProjection, RejectsSingleNodeAndChannelMismatch) {
  EXPECT_THROW(generate_projection(Tensor(Shape{3, 2, 2}), Tensor(Shape{1, 3})), ConfigError);
  EXPECT_THROW(generate_projection(Tensor(Shape{3, 2, 2}), Tensor(Shape{4, 2})), DimensionError);
}

TEST(GenerateProjection, GradientFlowsToWeightsAndInput) {
  Rng rng(2);
  Tensor x = random_uniform({3, 4, 4}, rng);
  Tensor w = random_uniform({4, 3}, rng);
  EXPECT_LT(finite_difference_check([&] { return probe(generate_projection(x, w).scores, 3); }, {x, w}), 1e-6);
}

TEST(Harden, ArgmaxAndTieBreak) {
  const ProjectionMatrix a = harden(wrap(Tensor({3, 1}, {0.2, 0.5, 0.3}), 1, 1));
  EXPECT_EQ(std::vector<double>(a.scores.data().begin(), a.scores.data().end()), (std::vector<double>{0, 1, 0}));
  const double t = 1.0 / 3.0;
  const ProjectionMatrix b = harden(wrap(Tensor({3, 1}, {t, t, t}), 1, 1));
  EXPECT_EQ(std::vector<double>(b.scores.data().begin(), b.scores.data().end()), (std::vector<double>{1, 0, 0}));
  EXPECT_EQ(b.mode, AssignmentMode::hard);
}

TEST(Harden, OneHotColumnsAgreeWithArgmaxOracle) {
  Rng rng(4);
  const Tensor soft = oracle::random_stochastic(5, 30, rng);
  const ProjectionMatrix h = harden(wrap(soft, 5, 6));
  for (std::size_t j = 0; j < 30; ++j) {
    std::size_t best = 0;
    double ones = 0.0;
    for (std::size_t n = 0; n < 5; ++n) {
      if (soft[n * 30 + j] > soft[best * 30 + j]) best = n;
      ones += h.scores[n * 30 + j];
    }
    EXPECT_EQ(ones, 1.0);
    EXPECT_EQ(h.scores[best * 30 + j], 1.0);
  }
  EXPECT_TRUE(h.soft.same_node(soft));
}

TEST(Harden, StraightThroughGradientIsIdentity) {
  Rng rng(5);
  Tensor soft = oracle::random_stochastic(3, 4, rng);
  soft.set_requires_grad(true);
  GradientTape tape;
  {
    TapeScope scope(&tape);
    const Tensor loss = probe(harden(wrap(soft, 2, 2)).scores, 6);
    tape.backward(loss);
  }
  Rng weights(6);
  const Tensor expected = random_uniform({3, 4}, weights);
  for (std::size_t i = 0; i < 12; ++i) EXPECT_DOUBLE_EQ(soft.grad()[i], expected[i]);
}

TEST(TransformFeatures, IdentityAndSelection) {
  Rng rng(7);
  const Tensor x = random_uniform({3, 2, 2}, rng);
  const Tensor same = transform_features(x, Tensor::eye(3));
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(same[i], x[i]);
  const Tensor first = transform_features(x, Tensor({1, 3}, {1, 0, 0}));
  EXPECT_EQ(first.shape(), (Shape{1, 2, 2}));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(first[i], x[i]);
  EXPECT_THROW(transform_features(x, Tensor(Shape{4, 3})), ConfigError);
}

TEST(TransformFeatures, Gradient) {
  Rng rng(8);
  Tensor x = random_uniform({4, 3, 3}, rng);
  Tensor w = random_uniform({2, 4}, rng);
  EXPECT_LT(finite_difference_check([&] { return probe(transform_features(x, w), 9); }, {x, w}), 1e-6);
}

TEST(ProjectNodes, HardRegionsOfConstantFeatures) {
  // left column region 0 with feature a, right column region 1 with feature b
  const std::vector<std::size_t> region = {0, 1, 0, 1, 0, 1};
  Tensor z(Shape{2, 3, 2});
  const double a[2] = {1.5, -2.0}, b[2] = {0.25, 4.0};
  for (std::size_t d = 0; d < 2; ++d)
    for (std::size_t j = 0; j < 6; ++j) z.mutable_data()[d * 6 + j] = region[j] == 0 ? a[d] : b[d];
  const Tensor v = project_nodes(z, wrap(one_hot(region, 2), 3, 2, AssignmentMode::hard));
  EXPECT_EQ(v.shape(), (Shape{2, 2}));
  EXPECT_DOUBLE_EQ(v[0], 3 * a[0]);
  EXPECT_DOUBLE_EQ(v[1], 3 * a[1]);
  EXPECT_DOUBLE_EQ(v[2], 3 * b[0]);
  EXPECT_DOUBLE_EQ(v[3], 3 * b[1]);
}

TEST(ProjectNodes, UniformAssignmentAveragesByNodeCount) {
  Rng rng(10);
  const Tensor z = random_uniform({3, 2, 4}, rng);
  const Tensor v = project_nodes(z, wrap(Tensor(Shape{4, 8}, 0.25), 2, 4));
  for (std::size_t d = 0; d < 3; ++d) {
    double total = 0.0;
    for (std::size_t j = 0; j < 8; ++j) total += z[d * 8 + j];
    for (std::size_t n = 0; n < 4; ++n) EXPECT_NEAR(v[n * 3 + d], total / 4.0, 1e-15);
  }
}

TEST(ProjectNodes, MatchesTripleLoopAndChecksExtents) {
  Rng rng(11);
  const Tensor z = random_uniform({5, 3, 4}, rng);
  const Tensor p = oracle::random_stochastic(4, 12, rng);
  EXPECT_LT(oracle::max_abs_diff(project_nodes(z, wrap(p, 3, 4)),
                                 oracle::project_nodes(oracle::to_mat(flat(z)), oracle::to_mat(p))),
            1e-12);
  EXPECT_THROW(project_nodes(z, wrap(p, 4, 3)), DimensionError);
}

TEST(Fuse, IdentitiesAndConcatSelector) {
  Rng rng(12);
  const Tensor v = random_uniform({4, 3}, rng);
  const Tensor zero(Shape{4, 3});
  const Tensor s = fuse(v, zero, FusionMode::sum);
  for (std::size_t i = 0; i < v.numel(); ++i) EXPECT_EQ(s[i], v[i]);
  const Tensor twice = fuse(v, v, FusionMode::sum);
  for (std::size_t i = 0; i < v.numel(); ++i) EXPECT_EQ(twice[i], 2 * v[i]);
  Tensor selector(Shape{3, 6});
  for (std::size_t d = 0; d < 3; ++d) selector.mutable_data()[d * 6 + d] = 1.0;
  const Tensor c = fuse(v, random_uniform({4, 3}, rng), FusionMode::concat, &selector);
  for (std::size_t i = 0; i < v.numel(); ++i) EXPECT_EQ(c[i], v[i]);
  EXPECT_THROW(fuse(v, Tensor(Shape{5, 3}), FusionMode::sum), DimensionError);
  EXPECT_THROW(fuse(v, v, FusionMode::concat), ConfigError);
}

TEST(Fuse, ConcatGradient) {
  Rng rng(13);
  Tensor a = random_uniform({3, 2}, rng), b = random_uniform({3, 2}, rng), r = random_uniform({2, 4}, rng);
  EXPECT_LT(finite_difference_check([&] { return probe(fuse(a, b, FusionMode::concat, &r), 14); }, {a, b, r}), 1e-6);
}

TEST(Adjacency, SemanticRawWeights) {
  const Tensor ortho({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  const Tensor raw = semantic_similarity(ortho);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      if (i != j) {
        EXPECT_EQ(raw[i * 3 + j], 0.0);
      }
  const Tensor dup({3, 2}, {1, 2, 3, 4, 1, 2});
  EXPECT_EQ(semantic_similarity(dup)[0 * 3 + 2], 5.0);
  Rng rng(15);
  const Tensor v = random_uniform({5, 4}, rng);
  EXPECT_LT(oracle::max_abs_diff(semantic_similarity(v), oracle::gram(oracle::to_mat(v))), 1e-12);
}

TEST(Adjacency, ProjectionOverlap) {
  const Tensor hard = one_hot({0, 1, 1, 2, 2, 2}, 3);
  const Tensor raw = projection_overlap(wrap(hard, 2, 3, AssignmentMode::hard));
  const double expected[9] = {1, 0, 0, 0, 2, 0, 0, 0, 3};
  for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(raw[i], expected[i]);
  const Tensor uni = projection_overlap(wrap(Tensor(Shape{4, 12}, 0.25), 3, 4));
  for (double v : uni.data()) EXPECT_NEAR(v, 12.0 / 16.0, 1e-15);
  Rng rng(16);
  const Tensor p = oracle::random_stochastic(5, 20, rng);
  EXPECT_LT(oracle::max_abs_diff(projection_overlap(wrap(p, 4, 5)), oracle::gram(oracle::to_mat(p))), 1e-12);
}

TEST(Adjacency, LocalityRawWeights) {
  const Tensor two({2, 3}, {0.1, 0.2, 0.3, 0.1, 0.7, 0.3});
  const Tensor w = inverse_distance_weights(two, 1e-6);
  EXPECT_NEAR(w[1], 1.0 / (0.5 + 1e-6), 1e-12);
  EXPECT_EQ(w[0], 0.0);
  const Tensor same({2, 3}, {0.4, 0.4, 0.4, 0.4, 0.4, 0.4});
  EXPECT_DOUBLE_EQ(inverse_distance_weights(same, 1e-6)[1], 1e6);
  Rng rng(17);
  const Tensor m = random_uniform({6, 3}, rng, 0.0, 1.0);
  const Tensor r = inverse_distance_weights(m, 1e-6);
  EXPECT_LT(oracle::max_abs_diff(r, oracle::inverse_distance(oracle::to_mat(m), 1e-6)), 1e-12);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j) EXPECT_EQ(r[i * 6 + j], r[j * 6 + i]);
}

TEST(Adjacency, LocalityGradient) {
  Rng rng(18);
  Tensor m = random_uniform({5, 3}, rng, 0.0, 1.0);
  EXPECT_LT(finite_difference_check([&] { return probe(inverse_distance_weights(m, 1e-6), 19); }, {m}), 1e-6);
}

TEST(NormalizeAdjacency, ClosedFormsAndClamp) {
  const Tensor two({2, 2}, {0, 1, 1, 0});
  const Tensor n = normalize_adjacency(two);
  EXPECT_DOUBLE_EQ(n[1], 1.0);
  EXPECT_DOUBLE_EQ(n[2], 1.0);
  const Tensor neg({3, 3}, {5, -3, 1, -3, 5, 2, 1, 2, 5});
  const Tensor clamped({3, 3}, {0, 0, 1, 0, 0, 2, 1, 2, 0});
  const Tensor a = normalize_adjacency(neg), b = normalize_adjacency(clamped);
  for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(a[i], b[i]);
  EXPECT_EQ(a[1], 0.0);
  const Tensor isolated({3, 3}, {0, 1, 0, 1, 0, 0, 0, 0, 0});
  const Tensor iso = normalize_adjacency(isolated);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(iso[2 * 3 + j], 0.0);
}

TEST(NormalizeAdjacency, SpectralRadiusAndOracle) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const std::size_t N = 2 + seed % 5;
    Tensor raw(Shape{N, N});
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t j = 0; j <= i; ++j) raw.mutable_data()[i * N + j] = raw.mutable_data()[j * N + i] = rng.uniform(-0.5, 2.0);
    const Tensor a = normalize_adjacency(raw);
    EXPECT_LT(oracle::max_abs_diff(a, oracle::normalize(oracle::to_mat(raw))), 1e-12);
    EXPECT_LE(oracle::spectral_radius(oracle::to_mat(a)), 1.0 + 1e-9);
  }
}

TEST(NormalizeAdjacency, Gradient) {
  Rng rng(20);
  Tensor raw(Shape{5, 5});
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j <= i; ++j) raw.mutable_data()[i * 5 + j] = raw.mutable_data()[j * 5 + i] = rng.uniform(-0.3, 1.0);
  // keep entries away from the clamp kink
  for (auto& v : raw.mutable_data()) {
    if (std::abs(v) < 0.05) v = 0.2;
  }
  EXPECT_LT(finite_difference_check([&] { return probe(normalize_adjacency(raw), 21); }, {raw}), 1e-6);
  // composed with a symmetric source the gradient is still exact
  Tensor v = random_uniform({4, 3}, rng);
  EXPECT_LT(finite_difference_check([&] { return probe(adjacency_semantic(v), 22); }, {v}), 1e-6);
}

TEST(Centroids, HardLeftHalfAndSingleNode) {
  const std::size_t W = 8, H = 4;
  std::vector<std::size_t> region(W * H);
  for (std::size_t j = 0; j < W * H; ++j) region[j] = (j % W) < W / 2 ? 0 : 1;
  const DepthMap depth = DepthMap::from_meters(W, H, std::vector<double>(W * H, 2.0));
  const CentroidTarget t = compute_centroids_oracle(wrap(one_hot(region, 2), H, W, AssignmentMode::hard), depth);
  EXPECT_DOUBLE_EQ(t.centroids[0], 0.25);
  EXPECT_DOUBLE_EQ(t.centroids[1], 0.5);
  EXPECT_DOUBLE_EQ(t.centroids[2], 0.2);
  EXPECT_DOUBLE_EQ(t.centroids[3], 0.75);
  EXPECT_EQ(t.degenerate_count(), 0u);

  const CentroidTarget single = compute_centroids_oracle(wrap(Tensor(Shape{1, W * H}, 1.0), H, W), depth);
  EXPECT_NEAR(single.centroids[0], 0.5, 1e-15);
  EXPECT_NEAR(single.centroids[1], 0.5, 1e-15);
  EXPECT_NEAR(single.centroids[2], 0.2, 1e-15);
}

TEST(Centroids, DegenerateNodeIsFlagged) {
  const DepthMap depth = DepthMap::from_meters(2, 2, {1, 1, 1, 1});
  const CentroidTarget t = compute_centroids_oracle(wrap(one_hot({0, 0, 2, 2}, 3), 2, 2, AssignmentMode::hard), depth);
  EXPECT_EQ(t.degenerate, (std::vector<std::uint8_t>{0, 1, 0}));
  for (std::size_t a = 0; a < 3; ++a) EXPECT_EQ(t.centroids[3 + a], 0.5);
}

TEST(Centroids, MatchesWeightedMeanOracleAndHardMean) {
  Rng rng(23);
  std::vector<double> z(6 * 5);
  for (auto& v : z) v = rng.uniform(0.5, 8.0);
  const DepthMap depth = DepthMap::from_meters(6, 5, z);
  const Tensor p = oracle::random_stochastic(4, 30, rng);
  const CentroidTarget t = compute_centroids_oracle(wrap(p, 5, 6), depth);
  EXPECT_LT(oracle::max_abs_diff(t.centroids, oracle::centroids(oracle::to_mat(p), z, 6, 5, 10.0)), 1e-12);

  std::vector<std::size_t> region(30);
  for (auto& r : region) r = rng.uniform_int(0, 3);
  region[0] = 0, region[1] = 1, region[2] = 2, region[3] = 3;
  const CentroidTarget h = compute_centroids_oracle(wrap(one_hot(region, 4), 5, 6, AssignmentMode::hard), depth);
  for (std::size_t n = 0; n < 4; ++n) {
    double su = 0, sv = 0, sz = 0, count = 0;
    for (std::size_t j = 0; j < 30; ++j) {
      if (region[j] != n) continue;
      su += (double(j % 6) + 0.5) / 6.0;
      sv += (double(j / 6) + 0.5) / 5.0;
      sz += z[j] / 10.0;
      ++count;
    }
    EXPECT_NEAR(h.centroids[n * 3 + 0], su / count, 1e-12);
    EXPECT_NEAR(h.centroids[n * 3 + 1], sv / count, 1e-12);
    EXPECT_NEAR(h.centroids[n * 3 + 2], sz / count, 1e-12);
  }
}

TEST(Centroids, DepthResampledToFeatureGrid) {
  // 8x8 depth, constant per 2x2 block, sampled to a 4x4 grid at block centres
  std::vector<double> z(64);
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 8; ++x) z[y * 8 + x] = 1.0 + double((y / 2) * 4 + x / 2) * 0.1;
  const std::vector<double> r = resample_depth(DepthMap::from_meters(8, 8, z), 4, 4);
  for (std::size_t i = 0; i < 16; ++i) EXPECT_NEAR(r[i], 1.0 + double(i) * 0.1, 1e-12);
}

TEST(PredictCentroids, SingletonRegionsReproduceOracle) {
  // With one pixel per node, P . table equals the weighted mean exactly.
  Rng rng(24);
  std::vector<double> z(6);
  for (auto& v : z) v = rng.uniform(1.0, 5.0);
  std::vector<std::size_t> region = {3, 0, 5, 1, 4, 2};
  const ProjectionMatrix p = wrap(one_hot(region, 6), 2, 3, AssignmentMode::hard);
  const Tensor mc = predict_centroids(p, coordinate_table(z, 3, 2, 10.0));
  const CentroidTarget mg = compute_centroids_oracle(p, DepthMap::from_meters(3, 2, z));
  for (std::size_t i = 0; i < 18; ++i) EXPECT_DOUBLE_EQ(mc[i], mg.centroids[i]);
  const Tensor zero = predict_centroids(p, Tensor(Shape{6, 3}));
  for (double v : zero.data()) EXPECT_EQ(v, 0.0);
}

TEST(PredictCentroids, Gradient) {
  Rng rng(25);
  const Tensor p = oracle::random_stochastic(3, 12, rng);
  Tensor w = random_uniform({12, 3}, rng);
  EXPECT_LT(finite_difference_check([&] { return probe(predict_centroids(wrap(p, 3, 4), w), 26); }, {w}), 1e-6);
}

TEST(GraphProperties, AllSourcesSymmetricZeroDiagonalBoundedSpectrum) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(100 + seed);
    const std::size_t N = 2 + seed % 5;
    const Tensor v = random_uniform({N, 4}, rng);
    const Tensor p = oracle::random_stochastic(N, 16, rng);
    const Tensor m = random_uniform({N, 3}, rng, 0.0, 1.0);
    for (const Tensor& a : {adjacency_semantic(v), adjacency_from_projection(wrap(p, 4, 4)), adjacency_locality(m, 1e-6)}) {
      for (std::size_t i = 0; i < N; ++i) {
        EXPECT_EQ(a[i * N + i], 0.0);
        for (std::size_t j = 0; j < N; ++j) {
          EXPECT_LT(std::abs(a[i * N + j] - a[j * N + i]), 1e-9);
          EXPECT_GE(a[i * N + j], 0.0);
        }
      }
      EXPECT_LE(oracle::spectral_radius(oracle::to_mat(a)), 1.0 + 1e-9);
    }
  }
}

TEST(GraphProperties, ColumnStochasticityAfterOperations) {
  Rng rng(27);
  Tensor x = random_uniform({5, 4, 4}, rng, -3.0, 3.0);
  Tensor w = random_uniform({6, 5}, rng, -3.0, 3.0);
  const ProjectionMatrix soft = generate_projection(x, w);
  const ProjectionMatrix hard = harden(soft);
  for (const auto* p : {&soft, &hard}) {
    for (std::size_t j = 0; j < 16; ++j) {
      double s = 0.0;
      for (std::size_t n = 0; n < 6; ++n) s += p->scores[n * 16 + j];
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
  }
}

TEST(GraphProperties, NodePermutationEquivariance) {
  Rng rng(28);
  const std::size_t N = 5, H = 3, W = 4;
  const Tensor z = random_uniform({3, H, W}, rng);
  const Tensor p = oracle::random_stochastic(N, H * W, rng);
  std::vector<double> depth(H * W);
  for (auto& d : depth) d = rng.uniform(1.0, 4.0);
  const DepthMap dm = DepthMap::from_meters(W, H, depth);
  const std::size_t perm[N] = {3, 0, 4, 1, 2};  // new row i = old row perm[i]
  Tensor pp(Shape{N, H * W});
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < H * W; ++j) pp.mutable_data()[i * H * W + j] = p[perm[i] * H * W + j];

  const Tensor v = project_nodes(z, wrap(p, H, W)), vp = project_nodes(z, wrap(pp, H, W));
  const Tensor c = compute_centroids_oracle(wrap(p, H, W), dm).centroids;
  const Tensor cp = compute_centroids_oracle(wrap(pp, H, W), dm).centroids;
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t d = 0; d < 3; ++d) {
      EXPECT_NEAR(vp[i * 3 + d], v[perm[i] * 3 + d], 1e-12);
      EXPECT_NEAR(cp[i * 3 + d], c[perm[i] * 3 + d], 1e-12);
    }
  }
  const Tensor as[3] = {adjacency_semantic(v), adjacency_from_projection(wrap(p, H, W)), adjacency_locality(c, 1e-6)};
  const Tensor ap[3] = {adjacency_semantic(vp), adjacency_from_projection(wrap(pp, H, W)), adjacency_locality(cp, 1e-6)};
  for (int s = 0; s < 3; ++s)
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t j = 0; j < N; ++j) EXPECT_NEAR(ap[s][i * N + j], as[s][perm[i] * N + perm[j]], 1e-12);
}

TEST(GraphProperties, SharedProjectionForBothModalities) {
  Rng rng(29);
  const Tensor z2 = random_uniform({3, 2, 2}, rng), z3 = random_uniform({3, 2, 2}, rng);
  const ProjectionMatrix p = wrap(oracle::random_stochastic(2, 4, rng), 2, 2);
  const Tensor fused = project_and_fuse(z2, z3, p, FusionMode::sum);
  const Tensor manual = add(project_nodes(z2, p), project_nodes(z3, p));
  for (std::size_t i = 0; i < fused.numel(); ++i) EXPECT_EQ(fused[i], manual[i]);
}

}  // namespace
}  // namespace pfseg
