#include <gtest/gtest.h>

#include <cmath>

#include "relex/builders.hpp"
#include "relex/explain.hpp"
#include "support/oracles.hpp"

using namespace relex;

namespace {

Model softmax_model(std::size_t n) { return Model({n}, {Softmax{}}); }

NoisyBatch batch_of(std::vector<Tensor> xs) {
  NoisyBatch b;
  b.center = xs.front();
  b.samples = std::move(xs);
  return b;
}

/// Logits [w.x, 0]: a two-class logistic model.
Model logistic(const std::vector<double>& w) {
  Tensor wt({2, w.size()});
  for (std::size_t i = 0; i < w.size(); ++i) wt[i] = w[i];
  return Model({w.size()}, {Dense{std::move(wt), Tensor({2})}, Softmax{}});
}

Model constant_model(std::size_t d) {
  Tensor b = Tensor::vector({0.4, -0.1, 0.2});
  return Model({d}, {Dense{Tensor({3, d}), std::move(b)}, Softmax{}});
}

struct LinearScore {
  Tensor w;
  double value(const Tensor& z) const { return dot(w, z); }
  Tensor gradient(const Tensor&) const { return w; }
};

RelExConfig quick_relex(std::uint64_t seed) {
  RelExConfig cfg;
  cfg.batch_size = 20;
  cfg.epochs = 20;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST(NoisyBatchTest, ZeroSigmaCopiesCenter) {
  const Tensor x = Tensor::vector({0.1, 0.5, 0.9});
  const auto b = make_noisy_batch(x, 7, 0.0, 3);
  ASSERT_EQ(b.size(), 7u);
  for (const auto& s : b.samples) EXPECT_EQ(s, x);
}

TEST(NoisyBatchTest, ConstantImageGivesZeroSigma) {
  const auto b = make_noisy_batch(Tensor({4}, 0.3), 5, 0.1, 1);
  EXPECT_EQ(b.sigma, 0.0);
  for (const auto& s : b.samples) EXPECT_EQ(s, Tensor({4}, 0.3));
}

TEST(NoisyBatchTest, DefaultSizeAndShape) {
  const Tensor x = Tensor::vector({0.0, 1.0, 0.5, 0.2});
  const auto b = make_noisy_batch(x, RelExConfig{}.batch_size, 0.1, 0);
  EXPECT_EQ(b.size(), 100u);
  for (const auto& s : b.samples) EXPECT_EQ(s.shape(), x.shape());
}

TEST(NoisyBatchTest, EmpiricalSigmaMatches) {
  Tensor x({16});
  x[0] = 0.0;
  x[1] = 1.0;
  const auto b = make_noisy_batch(x, 10000, 0.1, 9);
  EXPECT_DOUBLE_EQ(b.sigma, 0.1);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    double s = 0.0, s2 = 0.0;
    for (const auto& v : b.samples) {
      s += v[i] - x[i];
      s2 += (v[i] - x[i]) * (v[i] - x[i]);
    }
    const double n = 10000.0, mean = s / n;
    EXPECT_NEAR(std::sqrt(s2 / n - mean * mean), 0.1, 0.003) << "pixel " << i;
  }
}

TEST(NoisyBatchTest, ReproducibleUnderSeed) {
  const Tensor x = Tensor::vector({0.0, 1.0, 0.5});
  const auto a = make_noisy_batch(x, 10, 0.1, 42), b = make_noisy_batch(x, 10, 0.1, 42);
  EXPECT_EQ(a.samples, b.samples);
  EXPECT_NE(a.samples, make_noisy_batch(x, 10, 0.1, 43).samples);
}

TEST(NoisyBatchTest, RejectsBadArguments) {
  EXPECT_THROW(make_noisy_batch(Tensor({2}), 0, 0.1, 0), std::invalid_argument);
  EXPECT_THROW(make_noisy_batch(Tensor({2}), 1, -0.1, 0), std::invalid_argument);
}

TEST(ObjectiveTest, JValues) {
  const Model m = softmax_model(4);
  const SaliencyMap ones = SaliencyMap::ones({4});
  const Tensor sure = Tensor::vector({800, 0, 0, 0});
  const Tensor half = Tensor::vector({0, 0, -800, -800});
  const Tensor quarter = Tensor::vector({0, 0, 0, 0});
  EXPECT_EQ(objective_J(m, batch_of({sure, sure}), ones, ClassId{0}), 0.0);
  EXPECT_NEAR(objective_J(m, batch_of({half}), ones, ClassId{0}), std::log(2.0), 1e-15);
  EXPECT_NEAR(objective_J(m, batch_of({sure, half, quarter}), ones, ClassId{0}), std::log(2.0), 1e-15);
  EXPECT_NEAR(objective_J(m, batch_of({sure, half, quarter}), ones, ClassId{0}), 0.693147, 1e-6);
}

TEST(ObjectiveTest, BValues) {
  const Model m = softmax_model(4);
  const SaliencyMap zeros = SaliencyMap::zeros({4});
  // (1 - 0) x = x: background probability 0 gives B = 0.
  EXPECT_NEAR(objective_B(m, batch_of({Tensor::vector({-800, 0, 0, 0})}), zeros, ClassId{0}), 0.0, 1e-15);
  EXPECT_NEAR(objective_B(m, batch_of({Tensor::vector({0, 0, -800, -800})}), zeros, ClassId{0}), std::log(2.0),
              1e-15);
}

TEST(ObjectiveTest, BWithFullMaskMatchesDirectForward) {
  const Model m = oracle::random_net(1);
  Rng rng(2);
  const Tensor x = random_uniform(m.input_shape(), 0, 1, rng);
  const auto batch = make_noisy_batch(x, 5, 0.1, 3);
  const double p0 = forward(m, Tensor(m.input_shape()))[0];
  EXPECT_NEAR(objective_B(m, batch, SaliencyMap::ones(m.input_shape()), ClassId{0}), -std::log(1.0 - p0), 1e-12);
}

TEST(ObjectiveTest, BIsFloored) {
  const Model m = softmax_model(2);
  const double b = objective_B(m, batch_of({Tensor::vector({800, 0})}), SaliencyMap::zeros({2}), ClassId{0});
  EXPECT_NEAR(b, -std::log(kProbabilityFloor), 1e-9);
}

TEST(RelExTest, GradientMatchesFiniteDifferences) {
  for (std::uint64_t k = 1; k < 6; k += 2) {
    const Model m = oracle::random_net(k);
    Rng rng(k);
    const Tensor x = random_uniform(m.input_shape(), 0, 1, rng);
    const auto batch = make_noisy_batch(x, 4, 0.1, k);
    const SaliencyMap mask(random_uniform(m.input_shape(), 0.2, 0.8, rng));
    RelExConfig cfg;
    cfg.lambda1 = 0.01;
    std::vector<std::size_t> all = {0, 1, 2, 3};
    const Tensor g = relex_gradient(m, batch.samples, all, mask, ClassId{0}, cfg);
    const Tensor fd = oracle::fd_gradient(
        [&](const Tensor& v) { return relex_objective(m, batch, SaliencyMap(v), ClassId{0}, cfg); }, mask.values(),
        1e-6);
    EXPECT_EQ(oracle::gradient_mismatches(g, fd, 1e-4, 1e-8), 0u) << "net " << k;
  }
}

TEST(RelExTest, DefaultsMatchPublishedValues) {
  const RelExConfig cfg;
  EXPECT_EQ(cfg.batch_size, 100u);
  EXPECT_EQ(cfg.sigma_fraction, 0.1);
  EXPECT_EQ(cfg.lambda1, 1e-4);
  EXPECT_EQ(cfg.lambda2, 1.0);
  EXPECT_EQ(cfg.epochs, 50u);
  EXPECT_EQ(cfg.learning_rate, 0.001);
  EXPECT_EQ(cfg.init_low, 0.0);
  EXPECT_EQ(cfg.init_high, 0.01);
  EXPECT_TRUE(cfg.normalize_gradient);
}

TEST(RelExTest, HugeSparsityWeightZeroesTheMask) {
  const Model m = oracle::random_net(3);
  Rng rng(1);
  RelExConfig cfg = quick_relex(1);
  cfg.lambda1 = 1e6;
  cfg.lambda2 = 0.0;
  const SaliencyMap map = relex::relex(m, random_uniform(m.input_shape(), 0, 1, rng), ClassId{0}, cfg);
  EXPECT_LT(map.l1(), 1e-3);
}

TEST(RelExTest, PlantedSubsetMatchesExhaustiveOptimum) {
  int good = 0;
  for (std::uint64_t k = 0; k < 5; ++k) {
    const auto planted = oracle::planted_subset_model(9, 3, 3, k);
    Rng rng(derive_seed(k, 5));
    const Tensor x = random_uniform({9}, 0.2, 1.0, rng);
    const ClassId c = predict(planted.model, x);
    RelExConfig cfg;
    cfg.seed = k;
    const SaliencyMap map = relex::relex(planted.model, x, c, cfg);
    const double best = oracle::exhaustive_mask_optimum(planted.model, x, c);
    if (oracle::thresholded_probability(planted.model, x, map, c) >= best - 0.05) ++good;
  }
  EXPECT_GE(good, 4);
}

TEST(RelExTest, OutputInUnitIntervalAndDeterministic) {
  for (std::uint64_t k = 0; k < 6; ++k) {
    const Model m = oracle::random_net(k);
    Rng rng(k);
    const Tensor x = random_normal(m.input_shape(), 2.0, rng);
    RelExConfig cfg = quick_relex(k);
    cfg.learning_rate = 0.5;  // large steps hit the clamp
    const auto a = relex_detailed(m, x, ClassId{0}, cfg);
    for (double v : a.map.values()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    const auto b = relex_detailed(m, x, ClassId{0}, cfg);
    EXPECT_EQ(a.map, b.map);
    EXPECT_EQ(a.trace, b.trace);
    ASSERT_EQ(a.trace.size(), cfg.epochs);
    EXPECT_EQ(a.final_objective, a.trace.back());
  }
}

TEST(RelExTest, ObjectiveDescendsOnMostInstances) {
  int descended = 0;
  for (std::uint64_t k = 0; k < 50; ++k) {
    const Model m = make_mlp({6}, {8}, 3, k, k % 2 ? Activation::relu : Activation::softplus);
    Rng rng(derive_seed(k, 7));
    const Tensor x = random_uniform({6}, 0, 1, rng);
    RelExConfig cfg = quick_relex(k);
    const auto r = relex_detailed(m, x, ClassId{k % 3}, cfg);
    if (r.final_objective <= r.initial_objective) ++descended;
  }
  EXPECT_GE(descended, 48);
}

TEST(RelExTest, SparsityWeightShrinksMask) {
  int monotone = 0;
  const double grid[] = {1e-5, 1e-4, 1e-3, 1e-2};
  for (std::uint64_t k = 0; k < 20; ++k) {
    const Model m = make_mlp({6}, {8}, 3, k);
    Rng rng(derive_seed(k, 8));
    const Tensor x = random_uniform({6}, 0, 1, rng);
    double prev = INFINITY;
    bool ok = true;
    for (double l1 : grid) {
      RelExConfig cfg = quick_relex(k);
      cfg.lambda1 = l1;
      const double n = relex::relex(m, x, ClassId{0}, cfg).l1();
      ok = ok && n <= prev + 1e-12;
      prev = n;
    }
    monotone += ok;
  }
  EXPECT_GE(monotone, 18);
}

TEST(RelExTest, SpatialLayoutSharesChannels) {
  const Model m = make_small_cnn({3, 6, 6}, 4, 3, 2, 1);
  Rng rng(4);
  RelExConfig cfg = quick_relex(2);
  cfg.layout = MaskLayout::spatial;
  const SaliencyMap map = relex::relex(m, random_uniform({3, 6, 6}, 0, 1, rng), ClassId{1}, cfg);
  EXPECT_EQ(map.shape(), (Shape{1, 6, 6}));
}

TEST(RelExTest, RejectsInvalidConfig) {
  const Model m = make_mlp({3}, {4}, 2, 0);
  RelExConfig cfg;
  cfg.lambda1 = -1.0;
  cfg.epochs = 0;
  try {
    relex::relex(m, Tensor({3}), ClassId{0}, cfg);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.problems().size(), 2u);
  }
  EXPECT_THROW(relex::relex(m, Tensor({3}), ClassId{5}), std::out_of_range);
}

TEST(PostprocessTest, AbsPercentileFixtures) {
  EXPECT_EQ(postprocess_abs_percentile(Tensor({5})).values(), Tensor({5}));
  Tensor raw({100});
  for (std::size_t i = 0; i < 100; ++i) raw[i] = static_cast<double>(i + 1);
  const SaliencyMap m = postprocess_abs_percentile(raw);
  EXPECT_DOUBLE_EQ(m[98], 1.0);
  EXPECT_DOUBLE_EQ(m[99], 1.0);
  EXPECT_DOUBLE_EQ(m[0], 1.0 / 99.0);
  EXPECT_EQ(postprocess_abs_percentile(raw * -1.0), m);
}

TEST(PostprocessTest, AbsPercentileAveragesChannels) {
  Tensor raw({2, 1, 2});
  raw[0] = 1.0;
  raw[1] = -2.0;
  raw[2] = -3.0;
  raw[3] = 0.0;
  const SaliencyMap m = postprocess_abs_percentile(raw);
  EXPECT_EQ(m.shape(), (Shape{1, 1, 2}));
  EXPECT_DOUBLE_EQ(m[0], 1.0);
  EXPECT_DOUBLE_EQ(m[1], 0.5);
}

TEST(PostprocessTest, MinMaxFixtures) {
  const SaliencyMap m = postprocess_minmax(Tensor::vector({0, 5, 10}));
  EXPECT_EQ(m.values(), Tensor::vector({0, 0.5, 1}));
  EXPECT_EQ(postprocess_minmax(Tensor({3}, 7.0)).values(), Tensor({3}));
  const Tensor unit = Tensor::vector({0.0, 0.25, 1.0, 0.6});
  EXPECT_EQ(postprocess_minmax(unit).values(), unit);
}

TEST(SimGradTest, ConstantModelGivesZeroMap) {
  const SaliencyMap m = simgrad(constant_model(4), Tensor::vector({0.1, 0.2, 0.3, 0.4}), ClassId{0});
  EXPECT_EQ(m.values(), Tensor({4}));
}

TEST(SimGradTest, LogisticModelProportionalToAbsWeights) {
  const std::vector<double> w = {0.5, -2.0, 1.0, 0.0};
  const SaliencyMap m = simgrad(logistic(w), Tensor::vector({0.3, 0.1, 0.9, 0.5}), ClassId{1});
  for (std::size_t i = 0; i < w.size(); ++i) EXPECT_NEAR(m[i], std::abs(w[i]) / 2.0, 1e-14);
}

TEST(SimGradTest, AlwaysInUnitInterval) {
  for (std::uint64_t k = 0; k < 10; ++k) {
    const Model m = oracle::random_net(k);
    Rng rng(k);
    const SaliencyMap map = simgrad(m, random_normal(m.input_shape(), 1.0, rng), ClassId{0});
    for (double v : map.values()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(SmoothGradTest, ZeroSigmaEqualsSimGrad) {
  const Model m = oracle::random_net(5);
  Rng rng(1);
  const Tensor x = random_uniform(m.input_shape(), 0, 1, rng);
  EXPECT_EQ(smoothgrad(m, x, ClassId{1}, 10, 0.0, 4), simgrad(m, x, ClassId{1}));
}

TEST(SmoothGradTest, SingleSampleIsSimGradAtThatPoint) {
  const Model m = oracle::random_net(5);
  Rng rng(2);
  const Tensor x = random_uniform(m.input_shape(), 0, 1, rng);
  const auto batch = make_noisy_batch(x, 1, 0.1, 8);
  EXPECT_EQ(smoothgrad(m, x, ClassId{0}, 1, 0.1, 8), simgrad(m, batch.samples[0], ClassId{0}));
}

TEST(SmoothGradTest, LinearScoreIgnoresNoise) {
  // A single softmax over two logits [z, 0] has log-score gradient (1 - p);
  // with a pure linear logit the map is still |w| / max|w| at any noise level.
  const std::vector<double> w = {1.0, -0.5, 0.25};
  const Model m = logistic(w);
  const Tensor x = Tensor::vector({0.2, 0.6, 0.4});
  const SaliencyMap a = smoothgrad(m, x, ClassId{0}, 30, 0.3, 1);
  const SaliencyMap b = simgrad(m, x, ClassId{0});
  for (std::size_t i = 0; i < w.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(IntGradTest, BaselineEqualToInputGivesZero) {
  const Model m = oracle::random_net(7);
  Rng rng(3);
  const Tensor x = random_uniform(m.input_shape(), 0, 1, rng);
  EXPECT_EQ(intgrad_raw(m, x, ClassId{0}, 16, x), Tensor(x.shape()));
  EXPECT_EQ(intgrad(m, x, ClassId{0}, 16, x).values(), Tensor(x.shape()));
}

TEST(IntGradTest, ExactCompletenessOnLinearScore) {
  Rng rng(4);
  const LinearScore s{random_normal({7}, 1.0, rng)};
  const Tensor x = random_normal({7}, 1.0, rng), base = random_normal({7}, 1.0, rng);
  for (std::size_t steps : {1u, 3u, 32u}) {
    const Tensor raw = intgrad_raw(s, x, base, steps);
    const Tensor expected = (x - base) * s.w;
    for (std::size_t i = 0; i < 7; ++i) EXPECT_NEAR(raw[i], expected[i], 1e-15 * (1.0 + std::abs(expected[i])));
    EXPECT_NEAR(sum(raw), s.value(x) - s.value(base), 1e-12);
  }
}

TEST(IntGradTest, CompletenessOnSoftplusNets) {
  for (std::uint64_t k = 0; k < 5; ++k) {
    const Model m = make_mlp({10}, {16, 8}, 3, k, Activation::softplus);
    Rng rng(k);
    const Tensor x = random_uniform({10}, 0, 1, rng);
    const LogProbScore s(m, ClassId{1});
    const double gap = s.value(x) - s.value(Tensor({10}));
    const Tensor raw = intgrad_raw(m, x, ClassId{1}, 256, Tensor({10}));
    EXPECT_NEAR(sum(raw), gap, 0.01 * std::abs(gap)) << "net " << k;
  }
}

TEST(IntGradTest, RejectsBadArguments) {
  const Model m = make_mlp({3}, {4}, 2, 0);
  EXPECT_THROW(intgrad(m, Tensor({3}), ClassId{0}, 0), std::invalid_argument);
  EXPECT_THROW(intgrad(m, Tensor({3}), ClassId{0}, 4, Tensor({4})), ShapeError);
}

TEST(ExplainTest, DispatchMatchesDirectCalls) {
  const Model m = oracle::random_net(1);
  Rng rng(5);
  const Tensor x = random_uniform(m.input_shape(), 0, 1, rng);
  ExplainerConfig cfg;
  cfg.relex = quick_relex(3);
  EXPECT_EQ(explain(m, x, ClassId{0}, cfg), relex::relex(m, x, ClassId{0}, cfg.relex));
  cfg.method = Method::simgrad;
  EXPECT_EQ(explain(m, x, ClassId{0}, cfg), simgrad(m, x, ClassId{0}));
  cfg.method = Method::smoothgrad;
  cfg.smoothgrad.seed = 2;
  EXPECT_EQ(explain(m, x, ClassId{0}, cfg), smoothgrad(m, x, ClassId{0}, 50, 0.1, 2));
  cfg.method = Method::intgrad;
  EXPECT_EQ(explain(m, x, ClassId{0}, cfg), intgrad(m, x, ClassId{0}, 32));
  for (Method me : {Method::relex, Method::simgrad, Method::smoothgrad, Method::intgrad})
    EXPECT_EQ(parse_method(to_string(me)), me);
  EXPECT_FALSE(parse_method("gradcam"));
}
