#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "relex/loss.hpp"
#include "relex/metrics.hpp"
#include "relex/random.hpp"

namespace relex {

/// -log(1/|C|): the loss at which a multi-class prediction is no better than uniform.
inline double default_tau(std::size_t classes) { return std::log(static_cast<double>(classes)); }

struct QuadraticResidual {
  double absolute = 0.0;
  double relative = 0.0;  ///< absolute / |L(x0 + gamma, m)|, or absolute when that is 0
  double model_value = 0.0;
  double true_value = 0.0;
};

/// Gap between L(x0 + gamma, m) and its second-order model around x0. The
/// Hessian product is the gradient difference over the whole step gamma.
template <InputLoss F>
QuadraticResidual quadratic_residual(const F& loss, const Tensor& x0, const SaliencyMap& m, const Tensor& gamma) {
  if (gamma.numel() != x0.numel()) throw ShapeError("quadratic_residual: gamma shape mismatch");
  const double l0 = masked_value(loss, x0, m);
  const double alpha = norm2(gamma);
  QuadraticResidual r;
  if (alpha == 0.0) {
    r.model_value = r.true_value = l0;
    return r;
  }
  const Tensor g = gamma.reshaped(x0.shape());
  const Tensor v = g * (1.0 / alpha);
  const Tensor hg = hessian_vector_fd(loss, x0, m, v * (1.0 / norm2(v)), alpha);
  r.model_value = l0 + dot(masked_gradient(loss, x0, m), g) + 0.5 * dot(g, hg);
  r.true_value = masked_value(loss, x0 + g, m);
  r.absolute = std::abs(r.true_value - r.model_value);
  r.relative = r.true_value != 0.0 ? r.absolute / std::abs(r.true_value) : r.absolute;
  return r;
}

inline QuadraticResidual quadratic_residual(const Model& model, ClassId target, const Tensor& x0, const SaliencyMap& m,
                                            const Tensor& gamma) {
  return quadratic_residual(ClassLoss(model, target), x0, m, gamma);
}

struct RadiusResult {
  double radius = 0.0;
  bool unbounded = false;  ///< no violation anywhere in the grid; radius is the grid maximum
  std::size_t direction = 0;
};

/// Smallest grid radius alpha where some sampled unit direction v reaches
/// L(x0 + alpha v, m) >= tau.
template <InputLoss F>
RadiusResult robustness_radius_bruteforce(const F& loss, const Tensor& x0, const SaliencyMap& m, double tau,
                                          std::size_t directions, std::vector<double> radius_grid,
                                          std::uint64_t seed) {
  if (radius_grid.empty()) throw std::invalid_argument("robustness_radius: empty radius grid");
  if (directions == 0) throw std::invalid_argument("robustness_radius: need at least one direction");
  if (masked_value(loss, x0, m) > tau) throw std::invalid_argument("robustness_radius: L(x0, m) exceeds tau");
  std::sort(radius_grid.begin(), radius_grid.end());
  Rng rng(seed);
  std::vector<Tensor> dirs;
  dirs.reserve(directions);
  for (std::size_t k = 0; k < directions; ++k) dirs.push_back(random_unit(x0.shape(), rng));
  for (double a : radius_grid) {
    for (std::size_t k = 0; k < dirs.size(); ++k) {
      if (masked_value(loss, x0 + dirs[k] * a, m) >= tau) return {a, false, k};
    }
  }
  return {radius_grid.back(), true, 0};
}

inline RadiusResult robustness_radius_bruteforce(const Model& model, ClassId target, const Tensor& x0,
                                                 const SaliencyMap& m, double tau, std::size_t directions,
                                                 std::vector<double> radius_grid, std::uint64_t seed) {
  return robustness_radius_bruteforce(ClassLoss(model, target), x0, m, tau, directions, std::move(radius_grid), seed);
}

// ---------------------------------------------------------------------------
// Bound checks

struct InequalityCheck {
  std::string name;
  double lhs = 0.0;
  double rhs = 0.0;
  bool applicable = true;
  bool holds = true;
  double slack() const { return rhs - lhs; }
};

struct BoundReport {
  std::string id;
  double alpha = 0.0;
  Tensor v;
  double tau = 0.0;
  double c = 0.0;
  double base_loss = 0.0;
  /// L(x0, m) + grad^T gamma + 1/2 gamma^T H gamma, reported only.
  double quadratic_model_value = 0.0;
  double quadratic_model_error = 0.0;
  bool c_negative = false;  ///< filtered: tau < L(x0, m)
  bool degenerate = false;  ///< filtered: ||m||_1 = 0 or the alpha bound has a zero denominator
  bool out_of_regime = false;
  std::vector<InequalityCheck> checks;

  bool filtered() const { return c_negative || degenerate; }
  std::size_t violations() const {
    std::size_t n = 0;
    for (const auto& ch : checks) n += ch.applicable && !ch.holds;
    return n;
  }
};

/// ||a (.) m||_2 <= ||a||_2 ||m||_1 for any a and m in [0,1]^d.
inline InequalityCheck hadamard_norm_bound(const Tensor& a, const SaliencyMap& m, double tol = 1e-12) {
  InequalityCheck ch{"hadamard_l1", norm2(apply_mask(m, a)), norm2(a) * m.l1()};
  ch.holds = ch.lhs <= ch.rhs + tol;
  return ch;
}

/// Label-consistency checks at gamma = alpha v. `increment_bound` tests
/// grad^T gamma + 1/2 gamma^T H gamma against alpha ||m||_1 (||g0 - g1|| / 2 + ||g0||);
/// `alpha_bound` tests the radius lower bound wherever the quadratic model
/// reaches c (it is vacuous elsewhere).
template <InputLoss F>
BoundReport theorem1_check(const F& loss, const Tensor& x0, const SaliencyMap& m, double alpha, const Tensor& v,
                           double tau, double tol = 1e-9) {
  if (v.numel() != x0.numel()) throw ShapeError("theorem1_check: direction shape mismatch");
  if (!(alpha > 0.0)) throw std::invalid_argument("theorem1_check: alpha must be positive");
  BoundReport r;
  r.alpha = alpha;
  r.v = v.reshaped(x0.shape());
  r.tau = tau;
  r.base_loss = masked_value(loss, x0, m);
  r.c = tau - r.base_loss;
  if (r.c < 0.0) {
    r.c_negative = true;
    return r;
  }
  const double m1 = m.l1();
  const Tensor gamma = r.v * alpha;
  const Tensor g0 = -masked_point_gradient(loss, x0, m);
  const Tensor g1 = -masked_point_gradient(loss, x0 + gamma, m);
  const double dg = norm2(g0 - g1), ng0 = norm2(g0);

  const Tensor hg = hessian_vector_fd(loss, x0, m, r.v, alpha);
  const double increment = dot(masked_gradient(loss, x0, m), gamma) + 0.5 * dot(gamma, hg);
  r.quadratic_model_value = r.base_loss + increment;
  r.quadratic_model_error = std::abs(masked_value(loss, x0 + gamma, m) - r.quadratic_model_value);

  InequalityCheck inc{"increment_bound", increment, alpha * m1 * (0.5 * dg + ng0)};
  inc.holds = inc.lhs <= inc.rhs + tol;
  r.checks.push_back(inc);

  const double denom = m1 * (dg + 2.0 * ng0);
  if (m1 == 0.0 || denom == 0.0) {
    r.degenerate = true;
    r.checks.clear();
    return r;
  }
  InequalityCheck ab{"alpha_bound", 2.0 * r.c / denom, alpha};
  ab.applicable = increment >= r.c;
  ab.holds = !ab.applicable || ab.lhs <= ab.rhs + tol;
  r.checks.push_back(ab);
  return r;
}

inline BoundReport theorem1_check(const Model& model, ClassId target, const Tensor& x0, const SaliencyMap& m,
                                  double alpha, const Tensor& v, double tau, double tol = 1e-9) {
  return theorem1_check(ClassLoss(model, target), x0, m, alpha, v, tau, tol);
}

/// Saliency-consistency check between x0 and x_i: ||grad L(x_i) - grad L(x0)||
/// against ||m||_1 ||g(x_i) - g(x0)||, plus the unconditional Hadamard step.
/// Pairs farther apart than `regime` are marked out of regime but still evaluated.
template <InputLoss F>
BoundReport theorem2_check(const F& loss, const Tensor& x0, const Tensor& xi, const SaliencyMap& m,
                           double regime = std::numeric_limits<double>::infinity(), double tol = 1e-12) {
  if (xi.numel() != x0.numel()) throw ShapeError("theorem2_check: x_i shape mismatch");
  BoundReport r;
  const Tensor diff = xi.reshaped(x0.shape()) - x0;
  r.alpha = norm2(diff);
  r.v = r.alpha > 0.0 ? diff * (1.0 / r.alpha) : zeros_like(diff);
  r.out_of_regime = r.alpha > regime;
  r.base_loss = masked_value(loss, x0, m);
  const Tensor g0 = -masked_point_gradient(loss, x0, m);
  const Tensor g1 = -masked_point_gradient(loss, xi.reshaped(x0.shape()), m);
  const Tensor a = g0 - g1;

  InequalityCheck sal{"saliency_bound",
                      norm2(masked_gradient(loss, xi.reshaped(x0.shape()), m) - masked_gradient(loss, x0, m)),
                      m.l1() * norm2(a)};
  sal.holds = sal.lhs <= sal.rhs * (1.0 + tol) + tol;
  r.checks.push_back(sal);
  r.checks.push_back(hadamard_norm_bound(a, m, tol));
  return r;
}

inline BoundReport theorem2_check(const Model& model, ClassId target, const Tensor& x0, const Tensor& xi,
                                  const SaliencyMap& m, double regime = std::numeric_limits<double>::infinity(),
                                  double tol = 1e-12) {
  return theorem2_check(ClassLoss(model, target), x0, xi, m, regime, tol);
}

// ---------------------------------------------------------------------------
// Summaries

/// Least-squares slope of log(y) against log(x). Needs two distinct positive x values.
inline double loglog_slope(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("loglog_slope: need >= 2 paired points");
  double mx = 0.0, my = 0.0;
  const double n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0 && y[i] > 0.0)) throw std::invalid_argument("loglog_slope: values must be positive");
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (std::log(x[i]) - mx) * (std::log(y[i]) - my);
    sxx += (std::log(x[i]) - mx) * (std::log(x[i]) - mx);
  }
  if (sxx == 0.0) throw std::invalid_argument("loglog_slope: x values are all equal");
  return sxy / sxx;
}

struct BoundSummary {
  std::size_t instances = 0;
  std::size_t evaluated = 0;
  std::size_t filtered_c_negative = 0;
  std::size_t filtered_degenerate = 0;
  std::size_t violations = 0;
  double min_slack = std::numeric_limits<double>::infinity();
};

inline BoundSummary summarize(const std::vector<BoundReport>& reports) {
  BoundSummary s;
  s.instances = reports.size();
  for (const auto& r : reports) {
    if (r.c_negative) ++s.filtered_c_negative;
    else if (r.degenerate) ++s.filtered_degenerate;
    else {
      ++s.evaluated;
      s.violations += r.violations();
      for (const auto& ch : r.checks)
        if (ch.applicable) s.min_slack = std::min(s.min_slack, ch.slack());
    }
  }
  return s;
}

inline constexpr const char* kBoundCsvHeader =
    "instance_id,check,alpha,tau,c,lhs,rhs,slack,applicable,holds,quadratic_model_error";

/// One row per check of every unfiltered report, then a `summary` row whose
/// numeric columns hold instances, evaluated, filtered (c < 0), filtered
/// (degenerate), violations and the minimum applicable slack.
inline void write_bound_csv(std::ostream& os, const std::vector<BoundReport>& reports, const std::string& digest) {
  using detail::fmt_double;
  os << "# config_digest=" << digest << '\n' << kBoundCsvHeader << '\n';
  for (const auto& r : reports) {
    if (r.filtered()) continue;
    for (const auto& ch : r.checks) {
      os << r.id << ',' << ch.name << ',' << fmt_double(r.alpha) << ',' << fmt_double(r.tau) << ',' << fmt_double(r.c)
         << ',' << fmt_double(ch.lhs) << ',' << fmt_double(ch.rhs) << ',' << fmt_double(ch.slack()) << ','
         << (ch.applicable ? 1 : 0) << ',' << (ch.holds ? 1 : 0) << ',' << fmt_double(r.quadratic_model_error) << '\n';
    }
  }
  const auto s = summarize(reports);
  os << "summary,all," << s.instances << ',' << s.evaluated << ',' << s.filtered_c_negative << ','
     << s.filtered_degenerate << ',' << s.violations << ',' << fmt_double(s.evaluated ? s.min_slack : 0.0) << ",,,\n";
}

}  // namespace relex
