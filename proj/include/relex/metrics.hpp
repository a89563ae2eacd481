#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iterator>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "relex/model.hpp"
#include "relex/saliency.hpp"

namespace relex {

/// argmax_c f_c(m (.) x) == target, ties to the lowest class index.
inline bool retrieval_hit(const Model& model, const Tensor& x_eval, const SaliencyMap& m, ClassId target) {
  check_class(model, target);
  return predict(model, apply_mask(m, x_eval)) == target;
}

// ---------------------------------------------------------------------------
// Pixel flipping

enum class FlipOrder { descending, ascending };

struct FlipConfig {
  double flip_value = 0.0;
  /// Curve segments; 0 samples after every single pixel.
  std::size_t segments = 0;
};

/// Mask indices sorted by saliency, ties by ascending index in both orders.
inline std::vector<std::size_t> saliency_order(const SaliencyMap& m, FlipOrder order) {
  std::vector<std::size_t> idx(m.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return order == FlipOrder::descending ? m[a] > m[b] : m[a] < m[b];
  });
  return idx;
}

/// Target-probability curve while pixels of `x` are replaced by the flip value
/// in saliency order; point j is the score after flips[j] pixels.
inline std::vector<double> flip_curve(const Model& model, const Tensor& x, const SaliencyMap& m, ClassId target,
                                      FlipOrder order, const FlipConfig& cfg, std::vector<std::size_t>* flips_out = nullptr) {
  check_class(model, target);
  const std::size_t fan = mask_fanout(m.shape(), x.shape());
  const std::size_t n = m.size();
  const auto idx = saliency_order(m, order);
  std::vector<std::size_t> flips;
  if (cfg.segments == 0 || cfg.segments >= n) {
    flips.resize(n + 1);
    std::iota(flips.begin(), flips.end(), 0);
  } else {
    for (std::size_t j = 0; j <= cfg.segments; ++j) flips.push_back(j * n / cfg.segments);
  }
  Tensor cur = x;
  std::size_t done = 0;
  std::vector<double> curve;
  curve.reserve(flips.size());
  for (std::size_t target_flips : flips) {
    for (; done < target_flips; ++done) {
      const std::size_t p = idx[done];
      if (fan == 1) {
        cur[p] = cfg.flip_value;
      } else {
        for (std::size_t c = 0; c < fan; ++c) cur[c * n + p] = cfg.flip_value;
      }
    }
    curve.push_back(forward(model, cur)[target.index]);
  }
  if (flips_out) *flips_out = std::move(flips);
  return curve;
}

/// Trapezoid area under a curve sampled at the given flip counts out of n.
inline double trapezoid_auc(const std::vector<double>& curve, const std::vector<std::size_t>& flips, std::size_t n) {
  double area = 0.0;
  for (std::size_t j = 1; j < curve.size(); ++j) {
    const double w = static_cast<double>(flips[j] - flips[j - 1]) / static_cast<double>(n);
    area += 0.5 * (curve[j] + curve[j - 1]) * w;
  }
  return area;
}

/// Deletion score: flip most-salient pixels first; lower is better.
inline double deletion_auc(const Model& model, const Tensor& x, const SaliencyMap& m, ClassId target,
                           const FlipConfig& cfg = {}) {
  std::vector<std::size_t> flips;
  const auto curve = flip_curve(model, x, m, target, FlipOrder::descending, cfg, &flips);
  return trapezoid_auc(curve, flips, m.size());
}

/// Preservation score: flip least-salient pixels first; higher is better.
inline double preservation_auc(const Model& model, const Tensor& x, const SaliencyMap& m, ClassId target,
                               const FlipConfig& cfg = {}) {
  std::vector<std::size_t> flips;
  const auto curve = flip_curve(model, x, m, target, FlipOrder::ascending, cfg, &flips);
  return trapezoid_auc(curve, flips, m.size());
}

/// Harmonic mean of P and 1 - D; zero when either is zero.
inline double relevance_R(double preservation, double deletion) {
  const double keep = 1.0 - deletion;
  if (preservation <= 0.0 || keep <= 0.0) return 0.0;
  return 2.0 * preservation * keep / (preservation + keep);
}

// ---------------------------------------------------------------------------
// Similarity

/// Ranks starting at 1; tied values share their average rank.
inline std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

struct RankCorrelation {
  double rho = 0.0;
  /// Set when either input is constant; rho is then reported as 0.
  bool undefined = false;
};

/// Spearman correlation: Pearson correlation of average ranks.
inline RankCorrelation spearman_rank(const SaliencyMap& a, const SaliencyMap& b) {
  if (a.size() != b.size()) throw ShapeError("spearman_rank: maps differ in size");
  const auto ra = average_ranks(a.values().data());
  const auto rb = average_ranks(b.values().data());
  const double n = static_cast<double>(ra.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return {0.0, true};
  return {std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0), false};
}

/// |top_k(a) and top_k(b)| / k with ascending-index tie-breaking.
inline double topk_intersection(const SaliencyMap& a, const SaliencyMap& b, std::size_t k) {
  if (a.size() != b.size()) throw ShapeError("topk_intersection: maps differ in size");
  if (k == 0 || k > a.size()) throw std::invalid_argument("topk_intersection: k must be in [1, d]");
  auto top = [k](const SaliencyMap& m) {
    auto idx = saliency_order(m, FlipOrder::descending);
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
  };
  const auto ta = top(a), tb = top(b);
  std::vector<std::size_t> common;
  std::set_intersection(ta.begin(), ta.end(), tb.begin(), tb.end(), std::back_inserter(common));
  return static_cast<double>(common.size()) / static_cast<double>(k);
}

// ---------------------------------------------------------------------------
// Reports

struct MetricRecord {
  std::string sample_id;
  bool retrieval_hit = false;
  double deletion = 0.0;
  double preservation = 0.0;
  double relevance = 0.0;
  double spearman = 0.0;
  double topk_intersection = 0.0;
  double saliency_l1 = 0.0;
};

struct MetricAggregate {
  double retrieval_rate = 0.0;
  double deletion = 0.0;
  double preservation = 0.0;
  double relevance = 0.0;
  double spearman = 0.0;
  double topk_intersection = 0.0;
  double saliency_l1 = 0.0;
};

struct MetricReport {
  std::vector<MetricRecord> per_sample;
  std::string config_digest;

  MetricAggregate aggregate() const {
    MetricAggregate a;
    if (per_sample.empty()) return a;
    for (const auto& r : per_sample) {
      a.retrieval_rate += r.retrieval_hit ? 1.0 : 0.0;
      a.deletion += r.deletion;
      a.preservation += r.preservation;
      a.relevance += r.relevance;
      a.spearman += r.spearman;
      a.topk_intersection += r.topk_intersection;
      a.saliency_l1 += r.saliency_l1;
    }
    const double n = static_cast<double>(per_sample.size());
    for (double* v : {&a.retrieval_rate, &a.deletion, &a.preservation, &a.relevance, &a.spearman,
                      &a.topk_intersection, &a.saliency_l1})
      *v /= n;
    return a;
  }
};

inline constexpr const char* kMetricCsvHeader =
    "sample_id,retrieval_hit,deletion,preservation,R,spearman,topk_intersection,saliency_l1";

namespace detail {
inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
}  // namespace detail

/// `# config_digest=<hex>` line, the column header, one row per sample, and a
/// final `mean` row (omitted for an empty report).
inline void write_metric_csv(std::ostream& os, const MetricReport& report) {
  os << "# config_digest=" << report.config_digest << '\n' << kMetricCsvHeader << '\n';
  using detail::fmt_double;
  for (const auto& r : report.per_sample) {
    os << r.sample_id << ',' << (r.retrieval_hit ? 1 : 0) << ',' << fmt_double(r.deletion) << ','
       << fmt_double(r.preservation) << ',' << fmt_double(r.relevance) << ',' << fmt_double(r.spearman) << ','
       << fmt_double(r.topk_intersection) << ',' << fmt_double(r.saliency_l1) << '\n';
  }
  if (report.per_sample.empty()) return;
  const auto a = report.aggregate();
  os << "mean," << fmt_double(a.retrieval_rate) << ',' << fmt_double(a.deletion) << ',' << fmt_double(a.preservation)
     << ',' << fmt_double(a.relevance) << ',' << fmt_double(a.spearman) << ',' << fmt_double(a.topk_intersection)
     << ',' << fmt_double(a.saliency_l1) << '\n';
}

}  // namespace relex
