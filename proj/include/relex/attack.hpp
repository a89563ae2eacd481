#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "relex/explain.hpp"
#include "relex/model.hpp"
#include "relex/random.hpp"

namespace relex {

struct PGDConfig {
  double epsilon = 0.0;  ///< L-infinity radius in data units
  double step_size = 0.01;
  std::size_t iterations = 40;
  bool random_start = true;
  std::uint64_t seed = 0;
  double clamp_lo = 0.0;
  double clamp_hi = 1.0;

  std::vector<std::string> problems() const {
    std::vector<std::string> out;
    if (!(epsilon >= 0.0)) out.push_back("pgd.epsilon must be >= 0");
    if (!(step_size > 0.0)) out.push_back("pgd.step_size must be > 0");
    if (iterations == 0) out.push_back("pgd.iterations must be >= 1");
    if (!(clamp_lo < clamp_hi)) out.push_back("pgd clamp range must satisfy lo < hi");
    return out;
  }
};

namespace detail {

inline double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

/// Clip into the L-inf ball around x0 intersected with the data range.
inline void project(Tensor& x, const Tensor& x0, double eps, double lo, double hi) {
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double a = std::max(x0[i] - eps, lo), b = std::min(x0[i] + eps, hi);
    x[i] = std::clamp(x[i], a, b);
  }
}

}  // namespace detail

/// Untargeted L-inf PGD: sign-gradient ascent on -log f_target with
/// projection after every step. Optionally starts from a uniform point in the ball.
inline Tensor pgd_untargeted(const Model& model, const Tensor& x0, ClassId target, const PGDConfig& cfg) {
  if (auto p = cfg.problems(); !p.empty()) throw ConfigError(std::move(p));
  model.check_input(x0);
  check_class(model, target);
  if (cfg.epsilon == 0.0) return x0;
  Tensor x = x0;
  if (cfg.random_start) {
    Rng rng(cfg.seed);
    x += random_uniform(x0.shape(), -cfg.epsilon, cfg.epsilon, rng);
  }
  detail::project(x, x0, cfg.epsilon, cfg.clamp_lo, cfg.clamp_hi);
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    const Tensor g = input_gradient(model, x, target);
    for (std::size_t i = 0; i < x.numel(); ++i) x[i] += cfg.step_size * detail::sign(g[i]);
    detail::project(x, x0, cfg.epsilon, cfg.clamp_lo, cfg.clamp_hi);
  }
  return x;
}

// ---------------------------------------------------------------------------

struct TopKFoolConfig {
  std::size_t k = 1000;
  std::size_t iterations = 300;
  double epsilon = 0.0;
  double step_size = 0.001;
  double fd_step = 1e-4;
  /// Coordinates perturbed together per finite-difference probe.
  std::size_t block_size = 1;
  /// Sharpness of the softplus that replaces ReLU while estimating gradients.
  double softplus_beta = 10.0;
  std::uint64_t seed = 0;
  double clamp_lo = 0.0;
  double clamp_hi = 1.0;
};

struct TopKFoolResult {
  Tensor x_adv;
  bool success = false;  ///< class kept and top-k mass reduced
  bool noop = false;     ///< nothing to attack (zero clean saliency or epsilon = 0)
  double clean_mass = 0.0;
  double final_mass = 0.0;
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  std::string report;
};

/// Indices of the k largest entries; ties go to the lower index.
inline std::vector<std::size_t> top_k_indices(const Tensor& values, std::size_t k) {
  std::vector<std::size_t> idx(values.numel());
  std::iota(idx.begin(), idx.end(), 0);
  k = std::min(k, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      return values[a] > values[b] || (values[a] == values[b] && a < b);
                    });
  idx.resize(k);
  return idx;
}

/// Top-k fooling: walk x inside the eps-ball to drain saliency from the clean
/// map's top-k entries while the predicted class stays fixed. The attack
/// gradient is a central difference of the explainer on a softplus copy of the
/// model; a step that would flip the class is reverted and the step halved.
inline TopKFoolResult topk_fooling(const Model& model, const ExplainerConfig& explainer, const Tensor& x0,
                                   const TopKFoolConfig& cfg) {
  model.check_input(x0);
  if (cfg.iterations == 0) throw std::invalid_argument("topk_fooling: iterations must be >= 1");
  const ClassId label = predict(model, x0);
  TopKFoolResult res;
  res.x_adv = x0;

  const SaliencyMap clean = explain(model, x0, label, explainer);
  if (cfg.k == 0 || cfg.k > clean.size()) throw std::invalid_argument("topk_fooling: k must be in [1, d]");
  const auto top = top_k_indices(clean.values(), cfg.k);
  auto mass = [&](const SaliencyMap& m) {
    double s = 0.0;
    for (auto i : top) s += m[i];
    return s;
  };
  res.clean_mass = res.final_mass = mass(clean);
  if (cfg.epsilon == 0.0 || res.clean_mass == 0.0) {
    res.noop = true;
    res.report = res.clean_mass == 0.0 ? "no-op: clean saliency is zero" : "no-op: epsilon is zero";
    return res;
  }

  const Model smooth = model.with_softplus(cfg.softplus_beta);
  auto surrogate_mass = [&](const Tensor& x) { return mass(explain(smooth, x, label, explainer)); };

  Tensor x = x0;
  double step = cfg.step_size;
  const std::size_t d = x.numel(), block = std::max<std::size_t>(1, cfg.block_size);
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    Tensor grad(x.shape());
    for (std::size_t start = 0; start < d; start += block) {
      const std::size_t stop = std::min(d, start + block);
      Tensor up = x, down = x;
      for (std::size_t i = start; i < stop; ++i) {
        up[i] += cfg.fd_step;
        down[i] -= cfg.fd_step;
      }
      const double g = (surrogate_mass(up) - surrogate_mass(down)) / (2.0 * cfg.fd_step);
      for (std::size_t i = start; i < stop; ++i) grad[i] = g;
    }
    if (norm_inf(grad) == 0.0) break;
    Tensor cand = x;
    for (std::size_t i = 0; i < d; ++i) cand[i] -= step * detail::sign(grad[i]);
    detail::project(cand, x0, cfg.epsilon, cfg.clamp_lo, cfg.clamp_hi);
    if (predict(model, cand) != label) {
      ++res.rejected;
      step *= 0.5;
      continue;
    }
    ++res.accepted;
    x = std::move(cand);
    const double m = mass(explain(model, x, label, explainer));
    if (m < res.final_mass) {
      res.final_mass = m;
      res.x_adv = x;
    }
  }
  res.success = res.final_mass < res.clean_mass;
  res.report = res.accepted == 0 ? "failure: no class-preserving step within budget"
                                 : (res.success ? "ok" : "failure: top-k mass not reduced");
  return res;
}

}  // namespace relex
