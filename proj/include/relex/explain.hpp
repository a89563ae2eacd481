#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "relex/errors.hpp"
#include "relex/loss.hpp"
#include "relex/model.hpp"
#include "relex/random.hpp"
#include "relex/saliency.hpp"

namespace relex {

// ---------------------------------------------------------------------------
// Neighborhood sampling

/// Perturbed copies x_i = x0 + eta, eta ~ N(0, sigma) per element.
struct NoisyBatch {
  Tensor center;
  std::vector<Tensor> samples;
  double sigma = 0.0;
  std::uint64_t seed = 0;

  std::size_t size() const noexcept { return samples.size(); }
};

/// sigma = sigma_fraction * (max(x0) - min(x0)). A constant image gives sigma = 0.
inline NoisyBatch make_noisy_batch(const Tensor& x0, std::size_t n, double sigma_fraction,
                                   std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("make_noisy_batch: n must be >= 1");
  if (!(sigma_fraction >= 0.0)) throw std::invalid_argument("make_noisy_batch: sigma_fraction < 0");
  require_finite(x0, "make_noisy_batch center");
  NoisyBatch batch;
  batch.center = x0;
  batch.seed = seed;
  batch.sigma = sigma_fraction * (max_value(x0) - min_value(x0));
  batch.samples.reserve(n);
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) batch.samples.push_back(x0 + random_normal(x0.shape(), batch.sigma, rng));
  return batch;
}

// ---------------------------------------------------------------------------
// Objective terms

/// J = -(1/|D|) sum_i log f(m (.) x_i).
inline double objective_J(const Model& model, const NoisyBatch& batch, const SaliencyMap& m,
                          ClassId target) {
  double total = 0.0;
  for (const auto& x : batch.samples) total += class_log_loss(model, apply_mask(m, x), target);
  return total / static_cast<double>(batch.size());
}

namespace detail {

/// 1 - f_target, summed from the other classes to keep precision near f = 1.
inline double complement_probability(const Tensor& p, ClassId target) {
  double s = 0.0;
  for (std::size_t k = 0; k < p.numel(); ++k)
    if (k != target.index) s += p[k];
  return s;
}

}  // namespace detail

/// B = -(1/|D|) sum_i log(1 - f((1 - m) (.) x_i)), with 1 - f floored at 1e-12.
inline double objective_B(const Model& model, const NoisyBatch& batch, const SaliencyMap& m,
                          ClassId target) {
  check_class(model, target);
  double total = 0.0;
  for (const auto& x : batch.samples) {
    const Tensor p = forward(model, apply_complement(m, x));
    total += -std::log(std::max(detail::complement_probability(p, target), kProbabilityFloor));
  }
  return total / static_cast<double>(batch.size());
}

// ---------------------------------------------------------------------------
// RelEx

enum class MaskLayout {
  full,     ///< one mask entry per input element
  spatial,  ///< one entry per pixel, shared by all channels of a {C,H,W} input
};

struct RelExConfig {
  std::size_t batch_size = 100;
  double sigma_fraction = 0.1;
  double lambda1 = 1e-4;
  double lambda2 = 1.0;
  std::size_t epochs = 50;
  double learning_rate = 0.001;
  double init_low = 0.0;
  double init_high = 0.01;
  bool normalize_gradient = true;
  /// Samples per update within an epoch; 0 means one full-batch update per epoch.
  std::size_t minibatch_size = 1;
  bool redraw_per_epoch = false;
  MaskLayout layout = MaskLayout::full;
  std::uint64_t seed = 0;

  std::vector<std::string> problems() const {
    std::vector<std::string> out;
    if (batch_size == 0) out.push_back("relex.batch_size must be >= 1");
    if (!(sigma_fraction >= 0.0)) out.push_back("relex.sigma_fraction must be >= 0");
    if (!(lambda1 >= 0.0)) out.push_back("relex.lambda1 must be >= 0");
    if (!(lambda2 >= 0.0)) out.push_back("relex.lambda2 must be >= 0");
    if (epochs == 0) out.push_back("relex.epochs must be >= 1");
    if (!(learning_rate > 0.0)) out.push_back("relex.learning_rate must be > 0");
    if (!(init_low >= 0.0 && init_high <= 1.0 && init_low <= init_high)) {
      out.push_back("relex.init range must satisfy 0 <= low <= high <= 1");
    }
    return out;
  }
};

struct RelExResult {
  SaliencyMap map;
  double initial_objective = 0.0;
  double final_objective = 0.0;
  /// Full objective after each epoch.
  std::vector<double> trace;
};

struct ObjectiveTerms {
  double j = 0.0;
  double b = 0.0;
  double l1 = 0.0;
  double total(const RelExConfig& cfg) const { return j + cfg.lambda1 * l1 + cfg.lambda2 * b; }
};

inline ObjectiveTerms relex_objective_terms(const Model& model, const NoisyBatch& batch,
                                            const SaliencyMap& m, ClassId target) {
  return {objective_J(model, batch, m, target), objective_B(model, batch, m, target), m.l1()};
}

/// J + lambda1 ||m||_1 + lambda2 B.
inline double relex_objective(const Model& model, const NoisyBatch& batch, const SaliencyMap& m,
                              ClassId target, const RelExConfig& cfg) {
  return relex_objective_terms(model, batch, m, target).total(cfg);
}

/// Exact gradient of the full objective w.r.t. the mask, averaged over the
/// listed sample indices. The L1 term contributes lambda1 everywhere (m >= 0).
inline Tensor relex_gradient(const Model& model, const std::vector<Tensor>& samples,
                             std::span<const std::size_t> indices, const SaliencyMap& m,
                             ClassId target, const RelExConfig& cfg) {
  Tensor grad(m.shape());
  for (std::size_t idx : indices) {
    const Tensor& x = samples[idx];
    const auto fg = evaluate_log_loss(model, apply_mask(m, x), target);
    grad += reduce_to_mask(fg.gradient * x, m.shape());
    if (cfg.lambda2 != 0.0) {
      const auto bg = evaluate_log_loss(model, apply_complement(m, x), target);
      const double rest = std::max(detail::complement_probability(bg.probabilities, target), kProbabilityFloor);
      grad += reduce_to_mask(bg.gradient * x, m.shape()) * (cfg.lambda2 * bg.probability / rest);
    }
  }
  grad *= 1.0 / static_cast<double>(indices.size());
  grad += cfg.lambda1;
  return grad;
}

inline Shape relex_mask_shape(const Shape& input, MaskLayout layout) {
  if (layout == MaskLayout::spatial && input.size() == 3) return {1, input[1], input[2]};
  return input;
}

/// Projected (normalized) gradient descent on the full objective over a noisy
/// batch around x0. The mask starts Uniform[init_low, init_high] and is
/// clamped to [0,1] after every update.
inline RelExResult relex_detailed(const Model& model, const Tensor& x0, ClassId target,
                                  const RelExConfig& cfg) {
  if (auto p = cfg.problems(); !p.empty()) throw ConfigError(std::move(p));
  check_class(model, target);
  model.check_input(x0);

  Rng rng(derive_seed(cfg.seed, 0));
  SaliencyMap m(random_uniform(relex_mask_shape(x0.shape(), cfg.layout), cfg.init_low, cfg.init_high, rng));
  NoisyBatch batch = make_noisy_batch(x0, cfg.batch_size, cfg.sigma_fraction, derive_seed(cfg.seed, 1));

  RelExResult result;
  result.initial_objective = relex_objective(model, batch, m, target, cfg);
  result.trace.reserve(cfg.epochs);

  std::vector<std::size_t> order(batch.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t mb = cfg.minibatch_size == 0 ? batch.size() : std::min(cfg.minibatch_size, batch.size());
  Rng shuffle_rng(derive_seed(cfg.seed, 2));

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.redraw_per_epoch && epoch > 0) {
      batch = make_noisy_batch(x0, cfg.batch_size, cfg.sigma_fraction, derive_seed(cfg.seed, 3 + epoch));
    }
    if (mb < batch.size()) std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (std::size_t start = 0; start < order.size(); start += mb) {
      const std::size_t len = std::min(mb, order.size() - start);
      Tensor g = relex_gradient(model, batch.samples, std::span(order).subspan(start, len), m, target, cfg);
      if (!g.all_finite()) throw DivergenceError("relex: non-finite gradient", epoch);
      if (cfg.normalize_gradient) {
        const double n = norm2(g);
        if (n > 0.0) g *= 1.0 / n;
      }
      Tensor next = m.values();
      for (std::size_t i = 0; i < next.numel(); ++i) next[i] = std::clamp(next[i] - cfg.learning_rate * g[i], 0.0, 1.0);
      m = SaliencyMap(std::move(next));
    }
    const double obj = relex_objective(model, batch, m, target, cfg);
    if (!std::isfinite(obj)) throw DivergenceError("relex: non-finite objective", epoch);
    result.trace.push_back(obj);
  }
  result.final_objective = result.trace.back();
  result.map = std::move(m);
  return result;
}

inline SaliencyMap relex(const Model& model, const Tensor& x0, ClassId target, const RelExConfig& cfg = {}) {
  return relex_detailed(model, x0, target, cfg).map;
}

// ---------------------------------------------------------------------------
// Post-processing

/// Nearest-rank percentile: the ceil(q/100 * n)-th smallest value.
inline double nearest_rank_percentile(std::vector<double> values, double q) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const double rank = std::ceil(q / 100.0 * static_cast<double>(values.size()));
  const std::size_t idx = static_cast<std::size_t>(std::clamp(rank, 1.0, static_cast<double>(values.size()))) - 1;
  return values[idx];
}

/// Channel-mean of |raw| per pixel, scaled so the 99th percentile maps to 1,
/// then clamped. A {C,H,W} input yields a {1,H,W} map. If the percentile is
/// zero the maximum is used instead; an all-zero input yields all zeros.
inline SaliencyMap postprocess_abs_percentile(const Tensor& raw) {
  require_finite(raw, "postprocess input");
  Tensor pix;
  if (raw.rank() == 3 && raw.shape()[0] > 1) {
    const std::size_t c = raw.shape()[0], hw = raw.numel() / c;
    pix = Tensor({1, raw.shape()[1], raw.shape()[2]});
    for (std::size_t k = 0; k < c; ++k)
      for (std::size_t i = 0; i < hw; ++i) pix[i] += std::abs(raw[k * hw + i]) / static_cast<double>(c);
  } else {
    pix = map(raw, [](double v) { return std::abs(v); });
  }
  double scale = nearest_rank_percentile(pix.values(), 99.0);
  if (scale <= 0.0) scale = max_value(pix);
  if (scale <= 0.0) return SaliencyMap(Tensor(pix.shape()));
  pix *= 1.0 / scale;
  return SaliencyMap::clamped(std::move(pix));
}

/// (g - min g) / (max g - min g); a constant input maps to all zeros.
inline SaliencyMap postprocess_minmax(const Tensor& raw) {
  require_finite(raw, "postprocess input");
  const double lo = min_value(raw), hi = max_value(raw);
  if (!(hi > lo)) return SaliencyMap(Tensor(raw.shape()));
  Tensor out = raw;
  for (auto& v : out) v = (v - lo) / (hi - lo);
  return SaliencyMap::clamped(std::move(out));
}

// ---------------------------------------------------------------------------
// Gradient baselines

/// log f_target(z), the score the gradient baselines attribute.
struct LogProbScore {
  const Model* model;
  ClassId target;
  LogProbScore(const Model& m, ClassId c) : model(&m), target(c) { check_class(m, c); }
  double value(const Tensor& z) const { return -class_log_loss(*model, z, target); }
  Tensor gradient(const Tensor& z) const { return -input_gradient(*model, z, target); }
};

inline Tensor simgrad_raw(const Model& model, const Tensor& x0, ClassId target) {
  return LogProbScore(model, target).gradient(x0);
}

inline SaliencyMap simgrad(const Model& model, const Tensor& x0, ClassId target) {
  return postprocess_abs_percentile(simgrad_raw(model, x0, target));
}

struct SmoothGradConfig {
  std::size_t samples = 50;
  double sigma_fraction = 0.1;
  std::uint64_t seed = 0;
};

/// Mean log-score gradient over noisy copies drawn with make_noisy_batch.
inline Tensor smoothgrad_raw(const Model& model, const Tensor& x0, ClassId target, std::size_t n,
                             double sigma_fraction, std::uint64_t seed) {
  const NoisyBatch batch = make_noisy_batch(x0, n, sigma_fraction, seed);
  const LogProbScore score(model, target);
  if (batch.sigma == 0.0) return score.gradient(x0);  // every copy equals x0
  Tensor acc(x0.shape());
  for (const auto& x : batch.samples) acc += score.gradient(x);
  return acc * (1.0 / static_cast<double>(n));
}

inline SaliencyMap smoothgrad(const Model& model, const Tensor& x0, ClassId target, std::size_t n,
                              double sigma_fraction, std::uint64_t seed) {
  return postprocess_abs_percentile(smoothgrad_raw(model, x0, target, n, sigma_fraction, seed));
}

/// (x0 - baseline) (.) mean of grad s at the `steps` midpoints of the straight path.
template <InputLoss Score>
Tensor intgrad_raw(const Score& score, const Tensor& x0, const Tensor& baseline, std::size_t steps) {
  if (steps == 0) throw std::invalid_argument("intgrad: steps must be >= 1");
  if (baseline.shape() != x0.shape()) throw ShapeError("intgrad: baseline shape differs from input");
  const Tensor delta = x0 - baseline;
  Tensor acc(x0.shape());
  for (std::size_t j = 0; j < steps; ++j) {
    const double t = (static_cast<double>(j) + 0.5) / static_cast<double>(steps);
    acc += score.gradient(baseline + delta * t);
  }
  acc *= 1.0 / static_cast<double>(steps);
  return delta * acc;
}

inline Tensor intgrad_raw(const Model& model, const Tensor& x0, ClassId target, std::size_t steps,
                          const Tensor& baseline) {
  return intgrad_raw(LogProbScore(model, target), x0, baseline, steps);
}

inline SaliencyMap intgrad(const Model& model, const Tensor& x0, ClassId target, std::size_t steps,
                           const Tensor& baseline) {
  return postprocess_abs_percentile(intgrad_raw(model, x0, target, steps, baseline));
}

inline SaliencyMap intgrad(const Model& model, const Tensor& x0, ClassId target, std::size_t steps = 32) {
  return intgrad(model, x0, target, steps, zeros_like(x0));
}

// ---------------------------------------------------------------------------
// Method dispatch

enum class Method { relex, simgrad, smoothgrad, intgrad };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::relex: return "relex";
    case Method::simgrad: return "simgrad";
    case Method::smoothgrad: return "smoothgrad";
    case Method::intgrad: return "intgrad";
  }
  return "?";
}

inline std::optional<Method> parse_method(const std::string& s) {
  for (Method m : {Method::relex, Method::simgrad, Method::smoothgrad, Method::intgrad})
    if (s == to_string(m)) return m;
  return std::nullopt;
}

struct ExplainerConfig {
  Method method = Method::relex;
  RelExConfig relex;
  SmoothGradConfig smoothgrad;
  std::size_t intgrad_steps = 32;
};

/// Saliency map of `x` for `target` under the configured method. Gradient
/// baselines use an all-zeros integration baseline.
inline SaliencyMap explain(const Model& model, const Tensor& x, ClassId target, const ExplainerConfig& cfg) {
  switch (cfg.method) {
    case Method::relex: return relex(model, x, target, cfg.relex);
    case Method::simgrad: return simgrad(model, x, target);
    case Method::smoothgrad:
      return smoothgrad(model, x, target, cfg.smoothgrad.samples, cfg.smoothgrad.sigma_fraction,
                        cfg.smoothgrad.seed);
    case Method::intgrad: return intgrad(model, x, target, cfg.intgrad_steps);
  }
  throw std::logic_error("unknown method");
}

}  // namespace relex
