#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "relex/builders.hpp"
#include "relex/theory.hpp"
#include "support/oracles.hpp"

using namespace relex;

namespace {

QuadraticLoss diag_fixture() {
  Tensor a({2, 2});
  a[0] = 2.0;
  a[3] = 4.0;
  return QuadraticLoss{a, Tensor::vector({1.0, -1.0}), 0.0};
}

QuadraticLoss random_quadratic(std::size_t d, Rng& rng) {
  return QuadraticLoss{random_normal({d, d}, 1.0, rng), random_normal({d}, 1.0, rng), 0.0};
}

/// Logits [w x + b, 0] on a scalar input.
Model logistic_1d(double w, double b) {
  Tensor wt({2, 1});
  wt[0] = w;
  return Model({1}, {Dense{std::move(wt), Tensor::vector({b, 0.0})}, Softmax{}});
}

}  // namespace

TEST(TauTest, DefaultIsLogClassCount) {
  EXPECT_DOUBLE_EQ(default_tau(2), std::log(2.0));
  EXPECT_DOUBLE_EQ(default_tau(10), std::log(10.0));
}

TEST(ResidualTest, ZeroStepHasZeroResidual) {
  const Model m = make_mlp({5}, {8}, 3, 1, Activation::softplus);
  Rng rng(1);
  const Tensor x = random_uniform({5}, 0, 1, rng);
  const auto r = quadratic_residual(m, ClassId{0}, x, SaliencyMap::ones({5}), Tensor({5}));
  EXPECT_EQ(r.absolute, 0.0);
  EXPECT_EQ(r.relative, 0.0);
}

TEST(ResidualTest, ExactOnQuadraticSurrogate) {
  Rng rng(2);
  for (int t = 0; t < 50; ++t) {
    const auto q = random_quadratic(6, rng);
    const Tensor x = random_normal({6}, 1.0, rng);
    const SaliencyMap m(random_uniform({6}, 0, 1, rng));
    const Tensor gamma = random_normal({6}, std::pow(10.0, t % 4 - 2), rng);
    EXPECT_LT(quadratic_residual(q, x, m, gamma).absolute, 1e-6);
  }
}

TEST(ResidualTest, SmallStepOnSoftplusNet) {
  for (std::uint64_t k = 0; k < 5; ++k) {
    const Model m = make_mlp({8}, {16}, 3, k, Activation::softplus, 4.0);
    Rng rng(k);
    const Tensor x = random_uniform({8}, 0, 1, rng);
    const Tensor gamma = random_unit({8}, rng) * 1e-3;
    const SaliencyMap mask(random_uniform({8}, 0, 1, rng));
    EXPECT_LT(quadratic_residual(m, ClassId{1}, x, mask, gamma).relative, 1e-2);
  }
}

TEST(ResidualTest, ConvergesFasterThanSecondOrder) {
  const Model m = make_mlp({9}, {16, 8}, 3, 3, Activation::softplus, 2.0);
  Rng rng(4);
  const Tensor x = random_uniform({9}, 0, 1, rng);
  const Tensor v = random_unit({9}, rng);
  const SaliencyMap mask = SaliencyMap::ones({9});
  std::vector<double> alphas, res;
  for (int i = 0; i <= 9; ++i) {
    const double a = 0.1 * std::pow(10.0, -i / 3.0);
    alphas.push_back(a);
    res.push_back(quadratic_residual(m, ClassId{0}, x, mask, v * a).absolute);
  }
  EXPECT_GE(loglog_slope(alphas, res), 2.5);
}

TEST(SlopeTest, RecoversPowerLaw) {
  const std::vector<double> x = {1, 2, 4, 8}, y = {3, 24, 192, 1536};
  EXPECT_NEAR(loglog_slope(x, y), 3.0, 1e-12);
  EXPECT_THROW(loglog_slope(std::vector<double>{1}, std::vector<double>{1}), std::invalid_argument);
  EXPECT_THROW(loglog_slope(std::vector<double>{1, 1}, std::vector<double>{1, 2}), std::invalid_argument);
  EXPECT_THROW(loglog_slope(std::vector<double>{1, 2}, std::vector<double>{0, 2}), std::invalid_argument);
}

TEST(RadiusTest, HugeTauIsUnbounded) {
  const Model m = make_mlp({4}, {4}, 2, 0, Activation::softplus);
  const std::vector<double> grid = {0.1, 0.5, 0.2};
  const auto r = robustness_radius_bruteforce(m, ClassId{0}, Tensor({4}, 0.5), SaliencyMap::ones({4}), 1e9, 16, grid, 0);
  EXPECT_TRUE(r.unbounded);
  EXPECT_EQ(r.radius, 0.5);
}

TEST(RadiusTest, LogisticBoundaryDistance) {
  // p0 = sigmoid(x + 0.7) drops to 1/2 at x = -0.7; tau = log 2.
  const Model m = logistic_1d(1.0, 0.7);
  std::vector<double> grid;
  const double step = 0.05;
  for (int i = 1; i <= 40; ++i) grid.push_back(step * i);
  const auto r = robustness_radius_bruteforce(m, ClassId{0}, Tensor({1}), SaliencyMap::ones({1}), std::log(2.0), 8,
                                              grid, 3);
  EXPECT_FALSE(r.unbounded);
  EXPECT_NEAR(r.radius, 0.7, step + 1e-12);
}

TEST(RadiusTest, NonIncreasingAsTauDecreases) {
  for (std::uint64_t k = 0; k < 5; ++k) {
    const Model m = make_mlp({4}, {8}, 2, k, Activation::softplus);
    Rng rng(k);
    const Tensor x = random_uniform({4}, 0, 1, rng);
    const SaliencyMap mask = SaliencyMap::ones({4});
    const double l0 = class_log_loss(m, x, ClassId{0});
    std::vector<double> grid;
    for (int i = 1; i <= 40; ++i) grid.push_back(0.1 * i);
    double prev = INFINITY;
    for (double extra : {2.0, 1.0, 0.5, 0.1, 0.0}) {
      const auto r = robustness_radius_bruteforce(m, ClassId{0}, x, mask, l0 + extra, 32, grid, 1);
      EXPECT_LE(r.radius, prev);
      prev = r.radius;
    }
  }
}

TEST(RadiusTest, RejectsBadArguments) {
  const Model m = make_mlp({2}, {2}, 2, 0);
  const SaliencyMap mask = SaliencyMap::ones({2});
  EXPECT_THROW(robustness_radius_bruteforce(m, ClassId{0}, Tensor({2}), mask, -1.0, 4, {0.1}, 0), std::invalid_argument);
  EXPECT_THROW(robustness_radius_bruteforce(m, ClassId{0}, Tensor({2}), mask, 10.0, 4, {}, 0), std::invalid_argument);
  EXPECT_THROW(robustness_radius_bruteforce(m, ClassId{0}, Tensor({2}), mask, 10.0, 0, {0.1}, 0), std::invalid_argument);
}

TEST(Theorem1Test, HandComputedFixture) {
  // L = x^T diag(1, 2) x + (1, -1) x at x0 = 0, gamma = (0.5, 0):
  // g0 = (-1, 1), g1 = (-2, 1), increment = 0.5 + 0.25, bound = 0.5 * 2 * (0.5 + sqrt 2).
  const auto q = diag_fixture();
  const Tensor x0({2});
  const Tensor v = Tensor::vector({1.0, 0.0});
  const auto r = theorem1_check(q, x0, SaliencyMap::ones({2}), 0.5, v, 1.0);
  ASSERT_FALSE(r.filtered());
  ASSERT_EQ(r.checks.size(), 2u);
  EXPECT_NEAR(r.checks[0].lhs, 0.75, 1e-15);
  EXPECT_NEAR(r.checks[0].rhs, 0.5 + std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(r.checks[0].slack(), std::sqrt(2.0) - 0.25, 1e-15);
  EXPECT_TRUE(r.checks[0].holds);
  EXPECT_NEAR(r.quadratic_model_value, 0.75, 1e-15);
  EXPECT_NEAR(r.quadratic_model_error, 0.0, 1e-15);
  EXPECT_NEAR(r.c, 1.0, 1e-15);
  EXPECT_FALSE(r.checks[1].applicable);  // increment 0.75 < c = 1

  const auto tight = theorem1_check(q, x0, SaliencyMap::ones({2}), 0.5, v, 0.5);
  ASSERT_TRUE(tight.checks[1].applicable);
  EXPECT_NEAR(tight.checks[1].lhs, 1.0 / (2.0 * (1.0 + 2.0 * std::sqrt(2.0))), 1e-15);
  EXPECT_TRUE(tight.checks[1].holds);
  EXPECT_EQ(tight.violations(), 0u);
}

TEST(Theorem1Test, ZeroMaskIsDegenerate) {
  const auto q = diag_fixture();
  const auto r = theorem1_check(q, Tensor::vector({0.3, 0.1}), SaliencyMap::zeros({2}), 0.1, Tensor::vector({0, 1}), 5.0);
  EXPECT_TRUE(r.degenerate);
  EXPECT_TRUE(r.filtered());
  EXPECT_TRUE(r.checks.empty());
}

TEST(Theorem1Test, NegativeMarginIsFiltered) {
  const auto q = diag_fixture();
  const auto r = theorem1_check(q, Tensor::vector({1.0, 1.0}), SaliencyMap::ones({2}), 0.1, Tensor::vector({0, 1}), 0.0);
  EXPECT_TRUE(r.c_negative);
  EXPECT_TRUE(r.filtered());
}

TEST(Theorem1Test, NoViolationsOnQuadraticSurrogates) {
  Rng rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<BoundReport> reports;
  for (int t = 0; t < 1000; ++t) {
    const auto q = random_quadratic(9, rng);
    const Tensor x0 = random_normal({9}, 1.0, rng);
    const SaliencyMap m(random_uniform({9}, 0, 1, rng));
    const double tau = masked_value(q, x0, m) + u(rng);
    reports.push_back(theorem1_check(q, x0, m, 0.01 + u(rng), random_unit({9}, rng), tau));
  }
  const auto s = summarize(reports);
  EXPECT_EQ(s.instances, 1000u);
  EXPECT_EQ(s.evaluated, 1000u);
  EXPECT_EQ(s.violations, 0u);
}

TEST(Theorem1Test, NoIncrementViolationsOnSmallNets) {
  std::size_t violations = 0, evaluated = 0;
  for (std::uint64_t k = 0; k < 1000; ++k) {
    const Model m = make_mlp({6}, {8}, 3, k, Activation::softplus, 10.0);
    Rng rng(derive_seed(k, 3));
    const Tensor x0 = random_uniform({6}, 0, 1, rng);
    const SaliencyMap mask(random_uniform({6}, 0, 1, rng));
    const ClassId c = predict(m, apply_mask(mask, x0));
    const auto r = theorem1_check(m, c, x0, mask, 1e-3, random_unit({6}, rng), default_tau(3) + 1.0);
    if (r.filtered()) continue;
    ++evaluated;
    violations += !r.checks[0].holds;
  }
  EXPECT_EQ(evaluated, 1000u);
  EXPECT_EQ(violations, 0u);
}

TEST(Theorem2Test, TrivialCases) {
  const Model m = make_mlp({4}, {6}, 2, 2, Activation::softplus);
  const Tensor x0 = Tensor::vector({0.1, 0.5, 0.3, 0.9});
  const Tensor xi = Tensor::vector({0.2, 0.4, 0.3, 1.0});
  const auto zero = theorem2_check(m, ClassId{0}, x0, xi, SaliencyMap::zeros({4}));
  EXPECT_EQ(zero.checks[0].lhs, 0.0);
  EXPECT_EQ(zero.checks[0].rhs, 0.0);
  EXPECT_TRUE(zero.checks[0].holds);
  const auto same = theorem2_check(m, ClassId{0}, x0, x0, SaliencyMap::ones({4}));
  EXPECT_EQ(same.checks[0].lhs, 0.0);
  EXPECT_EQ(same.checks[0].rhs, 0.0);
  EXPECT_EQ(same.violations(), 0u);
}

TEST(Theorem2Test, RegimeFlag) {
  const Model m = make_mlp({4}, {6}, 2, 2, Activation::softplus);
  const Tensor x0({4}, 0.5), xi({4}, 0.6);
  EXPECT_TRUE(theorem2_check(m, ClassId{0}, x0, xi, SaliencyMap::ones({4}), 0.1).out_of_regime);
  EXPECT_FALSE(theorem2_check(m, ClassId{0}, x0, xi, SaliencyMap::ones({4}), 1.0).out_of_regime);
}

TEST(Theorem2Test, SaliencyBoundOnNets) {
  for (std::uint64_t k = 0; k < 100; ++k) {
    const Model m = make_mlp({6}, {8}, 3, k, Activation::softplus, 5.0);
    Rng rng(k);
    const Tensor x0 = random_uniform({6}, 0, 1, rng);
    const Tensor xi = x0 + random_unit({6}, rng) * 1e-2;
    const auto r = theorem2_check(m, ClassId{k % 3}, x0, xi, SaliencyMap(random_uniform({6}, 0, 1, rng)), 1e-2);
    EXPECT_EQ(r.violations(), 0u) << "net " << k;
  }
}

TEST(HadamardTest, UnconditionalOnRandomPairs) {
  Rng rng(13);
  std::size_t violations = 0;
  for (int t = 0; t < 10000; ++t) {
    const std::size_t d = 1 + t % 40;
    const Tensor a = random_normal({d}, std::pow(10.0, t % 7 - 3), rng);
    Tensor mv = random_uniform({d}, 0, 1, rng);
    if (t % 5 == 0) mv = map(mv, [](double v) { return v < 0.8 ? 0.0 : v; });
    violations += !hadamard_norm_bound(a, SaliencyMap(mv)).holds;
  }
  EXPECT_EQ(violations, 0u);
}

TEST(BoundCsvTest, RowsAndSummary) {
  const auto q = diag_fixture();
  std::vector<BoundReport> reports;
  reports.push_back(theorem1_check(q, Tensor({2}), SaliencyMap::ones({2}), 0.5, Tensor::vector({1, 0}), 1.0));
  reports.back().id = "a";
  reports.push_back(theorem1_check(q, Tensor({2}), SaliencyMap::zeros({2}), 0.5, Tensor::vector({1, 0}), 1.0));
  reports.back().id = "b";
  std::ostringstream os;
  write_bound_csv(os, reports, "dig");
  std::istringstream is(os.str());
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(is, line)) lines.push_back(line);
  ASSERT_EQ(lines.size(), 5u);
  EXPECT_EQ(lines[0], "# config_digest=dig");
  EXPECT_EQ(lines[1], kBoundCsvHeader);
  EXPECT_EQ(lines[2].rfind("a,increment_bound,", 0), 0u);
  EXPECT_EQ(lines[3].rfind("a,alpha_bound,", 0), 0u);
  EXPECT_EQ(lines[4].rfind("summary,all,2,1,0,1,0,", 0), 0u);
}
