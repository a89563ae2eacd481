#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "relex/attack.hpp"
#include "relex/builders.hpp"
#include "relex/dataset.hpp"
#include "relex/explain.hpp"
#include "relex/metrics.hpp"
#include "relex/theory.hpp"
#include "relex/harness/pool.hpp"

namespace relex::harness {

struct ItemError {
  std::string stage;
  std::string item;
  std::string message;
};

/// Dataset indices whose clean prediction matches the label.
inline std::vector<std::size_t> correctly_classified(const Model& model, const LabeledDataset& ds) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (predict(model, ds.images[i]) == ds.labels[i]) out.push_back(i);
  return out;
}

/// Per-item seed for one (purpose, item, epsilon index) triple.
inline std::uint64_t item_seed(std::uint64_t seed, std::uint64_t purpose, std::size_t item, std::size_t eps_index = 0) {
  return derive_seed(derive_seed(derive_seed(seed, purpose), item), eps_index);
}

inline ExplainerConfig seeded(ExplainerConfig cfg, Method m, std::uint64_t seed) {
  cfg.method = m;
  cfg.relex.seed = seed;
  cfg.smoothgrad.seed = seed;
  return cfg;
}

// ---------------------------------------------------------------------------
// Retrieval / fidelity / similarity over an epsilon grid

struct EvalSettings {
  std::vector<Method> methods;
  std::vector<double> epsilon_grid;
  ExplainerConfig explainer;
  PGDConfig pgd;
  FlipConfig flip;
  std::size_t topk = 8;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
};

struct SampleOutcome {
  bool attack_flipped = false;
  bool hit_adv = false;       ///< argmax f(m_adv (.) x_adv) == c_x0
  bool hit_clean_map = false; ///< argmax f(m_0 (.) x_adv) == c_x0
  double l1 = 0.0;
  double normalized_l1 = std::numeric_limits<double>::quiet_NaN();
  double deletion = 0.0, preservation = 0.0, relevance = 0.0;
  double spearman = 0.0, topk = 0.0;
};

struct CellSummary {
  Method method{};
  double epsilon = 0.0;
  std::size_t n = 0;
  double attack_success = 0.0;
  double retrieval_adv = 0.0;
  double retrieval_clean_map = 0.0;
  double mean_l1 = 0.0;
  double mean_normalized_l1 = 0.0;
  double deletion = 0.0, preservation = 0.0, relevance = 0.0;
  double spearman = 0.0, topk = 0.0;
};

struct EvalResult {
  std::vector<std::size_t> items;  ///< dataset indices that were evaluated
  /// outcome[method][eps][k] for the k-th successful item
  std::vector<std::vector<std::vector<SampleOutcome>>> outcome;
  std::vector<std::string> sample_ids;
  std::vector<std::vector<CellSummary>> summary;  ///< [method][eps]
  std::vector<ItemError> errors;
};

namespace detail {

struct ItemEval {
  std::vector<std::vector<SampleOutcome>> cells;  // [method][eps]
};

inline ItemEval evaluate_item(const Model& model, const Tensor& x0, ClassId label, std::size_t item,
                              const EvalSettings& s) {
  ItemEval out;
  out.cells.assign(s.methods.size(), std::vector<SampleOutcome>(s.epsilon_grid.size()));
  std::vector<Tensor> adv;
  for (std::size_t e = 0; e < s.epsilon_grid.size(); ++e) {
    PGDConfig pc = s.pgd;
    pc.epsilon = s.epsilon_grid[e];
    pc.seed = item_seed(s.seed, 11, item, e);
    adv.push_back(pgd_untargeted(model, x0, label, pc));
  }
  for (std::size_t mi = 0; mi < s.methods.size(); ++mi) {
    const Method method = s.methods[mi];
    const SaliencyMap m0 = explain(model, x0, label, seeded(s.explainer, method, item_seed(s.seed, 12, item)));
    for (std::size_t e = 0; e < s.epsilon_grid.size(); ++e) {
      const Tensor& xa = adv[e];
      SaliencyMap ma = s.epsilon_grid[e] == 0.0
                           ? m0
                           : explain(model, xa, label, seeded(s.explainer, method, item_seed(s.seed, 13, item, e)));
      SampleOutcome& o = out.cells[mi][e];
      o.attack_flipped = predict(model, xa) != label;
      o.hit_adv = retrieval_hit(model, xa, ma, label);
      o.hit_clean_map = retrieval_hit(model, xa, m0, label);
      o.l1 = ma.l1();
      if (m0.l1() > 0.0) o.normalized_l1 = o.l1 / m0.l1();
      o.deletion = deletion_auc(model, xa, ma, label, s.flip);
      o.preservation = preservation_auc(model, xa, ma, label, s.flip);
      o.relevance = relevance_R(o.preservation, o.deletion);
      o.spearman = spearman_rank(m0, ma).rho;
      o.topk = topk_intersection(m0, ma, std::min(s.topk, ma.size()));
    }
  }
  return out;
}

}  // namespace detail

inline EvalResult evaluate(const Model& model, const LabeledDataset& ds, const std::vector<std::size_t>& items,
                           const EvalSettings& s) {
  EvalResult res;
  auto results = parallel_map<detail::ItemEval>(items.size(), s.workers, [&](std::size_t k) {
    const std::size_t i = items[k];
    return detail::evaluate_item(model, ds.images[i], ds.labels[i], i, s);
  });
  res.outcome.assign(s.methods.size(), std::vector<std::vector<SampleOutcome>>(s.epsilon_grid.size()));
  for (std::size_t k = 0; k < results.size(); ++k) {
    if (!results[k].value) {
      res.errors.push_back({"evaluate", std::to_string(items[k]), results[k].error});
      continue;
    }
    res.items.push_back(items[k]);
    res.sample_ids.push_back(std::to_string(items[k]));
    for (std::size_t mi = 0; mi < s.methods.size(); ++mi)
      for (std::size_t e = 0; e < s.epsilon_grid.size(); ++e) res.outcome[mi][e].push_back(results[k].value->cells[mi][e]);
  }
  res.summary.assign(s.methods.size(), std::vector<CellSummary>(s.epsilon_grid.size()));
  for (std::size_t mi = 0; mi < s.methods.size(); ++mi) {
    for (std::size_t e = 0; e < s.epsilon_grid.size(); ++e) {
      CellSummary& c = res.summary[mi][e];
      c.method = s.methods[mi];
      c.epsilon = s.epsilon_grid[e];
      const auto& v = res.outcome[mi][e];
      c.n = v.size();
      if (v.empty()) continue;
      std::size_t nl = 0;
      for (const auto& o : v) {
        c.attack_success += o.attack_flipped;
        c.retrieval_adv += o.hit_adv;
        c.retrieval_clean_map += o.hit_clean_map;
        c.mean_l1 += o.l1;
        if (!std::isnan(o.normalized_l1)) {
          c.mean_normalized_l1 += o.normalized_l1;
          ++nl;
        }
        c.deletion += o.deletion;
        c.preservation += o.preservation;
        c.relevance += o.relevance;
        c.spearman += o.spearman;
        c.topk += o.topk;
      }
      const double n = static_cast<double>(v.size());
      for (double* x : {&c.attack_success, &c.retrieval_adv, &c.retrieval_clean_map, &c.mean_l1, &c.deletion,
                        &c.preservation, &c.relevance, &c.spearman, &c.topk})
        *x /= n;
      c.mean_normalized_l1 = nl ? c.mean_normalized_l1 / static_cast<double>(nl) : 0.0;
    }
  }
  return res;
}

/// Per-sample MetricReport for one (method, epsilon) cell.
inline MetricReport cell_report(const EvalResult& r, std::size_t method, std::size_t eps, const std::string& digest) {
  MetricReport rep;
  rep.config_digest = digest;
  for (std::size_t k = 0; k < r.outcome[method][eps].size(); ++k) {
    const auto& o = r.outcome[method][eps][k];
    rep.per_sample.push_back({r.sample_ids[k], o.hit_adv, o.deletion, o.preservation, o.relevance, o.spearman, o.topk, o.l1});
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Class sweep

/// Greedy forward selection of pixels maximizing f_c(m (.) x) under a binary
/// mask, stopping once class c is the strict argmax or the budget is spent.
/// Returns whether class-c evidence was found.
inline bool class_evidence(const Model& model, const Tensor& x, ClassId c, double budget_fraction,
                           MaskLayout layout = MaskLayout::full) {
  const Shape ms = relex_mask_shape(x.shape(), layout);
  Tensor mask(ms);
  const std::size_t d = mask.numel();
  const std::size_t budget = std::max<std::size_t>(1, static_cast<std::size_t>(budget_fraction * static_cast<double>(d)));
  auto strict_top = [&](const Tensor& p) {
    for (std::size_t j = 0; j < p.numel(); ++j)
      if (j != c.index && p[j] >= p[c.index]) return false;
    return true;
  };
  std::vector<bool> used(d, false);
  for (std::size_t step = 0; step < budget; ++step) {
    double best = -1.0;
    std::size_t best_j = d;
    for (std::size_t j = 0; j < d; ++j) {
      if (used[j]) continue;
      mask[j] = 1.0;
      const Tensor p = forward(model, apply_mask(mask, x));
      mask[j] = 0.0;
      if (p[c.index] > best) {
        best = p[c.index];
        best_j = j;
      }
    }
    if (best_j == d) break;
    used[best_j] = true;
    mask[best_j] = 1.0;
    if (strict_top(forward(model, apply_mask(mask, x)))) return true;
  }
  return false;
}

struct SweepSettings {
  std::vector<std::size_t> classes;
  std::vector<Method> methods;
  ExplainerConfig explainer;
  PGDConfig pgd;  ///< epsilon > 0 adds the adversarial pass
  double oracle_budget = 0.5;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
};

struct SweepCell {
  std::size_t evidence = 0;  ///< inputs where the oracle found class-c evidence
  std::size_t success = 0;   ///< of those, relex explanation has class c as strict argmax
  double mean_score = 0.0;   ///< mean f_c(m (.) x) over all inputs, per method below
  std::vector<double> method_scores;
  double rate() const { return evidence ? static_cast<double>(success) / static_cast<double>(evidence) : 1.0; }
};

struct SweepResult {
  /// cells[input kind][class]; kind 0 = clean, 1 = adversarial
  std::vector<std::vector<SweepCell>> cells;
  std::size_t inputs = 0;
  std::vector<ItemError> errors;
};

inline SweepResult class_sweep(const Model& model, const LabeledDataset& ds, const std::vector<std::size_t>& items,
                               const SweepSettings& s) {
  const std::size_t kinds = s.pgd.epsilon > 0.0 ? 2 : 1;
  struct PerItem {
    // [kind][class] -> evidence, relex success, score per method
    std::vector<std::vector<std::tuple<bool, bool, std::vector<double>>>> v;
  };
  auto relex_index = std::find(s.methods.begin(), s.methods.end(), Method::relex) - s.methods.begin();
  auto results = parallel_map<PerItem>(items.size(), s.workers, [&](std::size_t k) {
    const std::size_t i = items[k];
    PerItem out;
    Tensor x = ds.images[i];
    for (std::size_t kind = 0; kind < kinds; ++kind) {
      if (kind == 1) {
        PGDConfig pc = s.pgd;
        pc.seed = item_seed(s.seed, 21, i);
        x = pgd_untargeted(model, ds.images[i], ds.labels[i], pc);
      }
      out.v.emplace_back();
      for (std::size_t c : s.classes) {
        const ClassId cls{c};
        const bool ev = class_evidence(model, x, cls, s.oracle_budget, s.explainer.relex.layout);
        bool ok = false;
        std::vector<double> scores;
        for (std::size_t mi = 0; mi < s.methods.size(); ++mi) {
          const SaliencyMap m =
              explain(model, x, cls, seeded(s.explainer, s.methods[mi], item_seed(s.seed, 22 + kind, i, c)));
          const Tensor p = forward(model, apply_mask(m, x));
          scores.push_back(p[c]);
          if (static_cast<std::ptrdiff_t>(mi) == relex_index) {
            ok = true;
            for (std::size_t j = 0; j < p.numel(); ++j)
              if (j != c && p[j] >= p[c]) ok = false;
          }
        }
        out.v.back().emplace_back(ev, ok, std::move(scores));
      }
    }
    return out;
  });
  SweepResult res;
  res.cells.assign(kinds, std::vector<SweepCell>(s.classes.size()));
  for (auto& row : res.cells)
    for (auto& cell : row) cell.method_scores.assign(s.methods.size(), 0.0);
  for (std::size_t k = 0; k < results.size(); ++k) {
    if (!results[k].value) {
      res.errors.push_back({"class-sweep", std::to_string(items[k]), results[k].error});
      continue;
    }
    ++res.inputs;
    for (std::size_t kind = 0; kind < kinds; ++kind)
      for (std::size_t ci = 0; ci < s.classes.size(); ++ci) {
        const auto& [ev, ok, scores] = results[k].value->v[kind][ci];
        auto& cell = res.cells[kind][ci];
        cell.evidence += ev;
        cell.success += ev && ok;
        for (std::size_t mi = 0; mi < scores.size(); ++mi) cell.method_scores[mi] += scores[mi];
      }
  }
  for (auto& row : res.cells)
    for (auto& cell : row)
      for (auto& v : cell.method_scores) v = res.inputs ? v / static_cast<double>(res.inputs) : 0.0;
  for (auto& row : res.cells)
    for (auto& cell : row) cell.mean_score = relex_index < static_cast<std::ptrdiff_t>(s.methods.size()) ? cell.method_scores[relex_index] : 0.0;
  return res;
}

// ---------------------------------------------------------------------------
// Theory suite

struct TheorySettings {
  std::size_t instances = 1000;
  std::size_t dim = 9;
  double alpha = 1e-3;
  std::optional<double> tau;
  std::size_t directions = 256;
  std::size_t radius_steps = 40;
  double radius_max = 2.0;
  std::size_t residual_points = 13;
  std::size_t radius_instances = 8;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
};

struct ResidualPoint {
  double gamma_norm = 0.0;
  double absolute = 0.0;
  double relative = 0.0;
};

struct TheoryResult {
  std::vector<BoundReport> quadratic_t1, quadratic_t2;
  std::vector<BoundReport> net_t1, net_t2;
  std::size_t hadamard_pairs = 0, hadamard_violations = 0;
  std::vector<ResidualPoint> residual;
  double residual_slope = 0.0;
  std::vector<RadiusResult> radius;
};

/// Random quadratic surrogate: symmetric (possibly indefinite) A, b, c.
inline QuadraticLoss random_quadratic(std::size_t d, Rng& rng) {
  Tensor a = random_normal({d, d}, 1.0 / std::sqrt(static_cast<double>(d)), rng);
  Tensor sym({d, d});
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) sym[i * d + j] = 0.5 * (a[i * d + j] + a[j * d + i]);
  return {std::move(sym), random_normal({d}, 1.0, rng), std::normal_distribution<double>(0.0, 1.0)(rng)};
}

/// Bound checks on quadratic surrogates (exact regime) and on `net` (a smooth
/// classifier; reported only), the residual sweep and brute-force radii.
inline TheoryResult theory_suite(const Model& net, const TheorySettings& s) {
  TheoryResult out;
  // Exact regime.
  auto quad = parallel_map<std::pair<BoundReport, BoundReport>>(s.instances, s.workers, [&](std::size_t i) {
    Rng rng(item_seed(s.seed, 31, i));
    const QuadraticLoss q = random_quadratic(s.dim, rng);
    const Tensor x0 = random_uniform({s.dim}, 0.0, 1.0, rng);
    const SaliencyMap m(random_uniform({s.dim}, 0.0, 1.0, rng));
    const Tensor v = random_unit({s.dim}, rng);
    const double alpha = std::uniform_real_distribution<double>(0.01, 1.0)(rng);
    const double l0 = masked_value(q, x0, m);
    const double tau = l0 + std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    BoundReport t1 = theorem1_check(q, x0, m, alpha, v, tau);
    BoundReport t2 = theorem2_check(q, x0, x0 + v * alpha, m);
    t1.id = t2.id = "q" + std::to_string(i);
    return std::pair{std::move(t1), std::move(t2)};
  });
  for (auto& r : quad) {
    if (!r.value) continue;
    out.quadratic_t1.push_back(std::move(r.value->first));
    out.quadratic_t2.push_back(std::move(r.value->second));
  }
  {
    Rng rng(derive_seed(s.seed, 32));
    for (std::size_t i = 0; i < 10 * s.instances; ++i) {
      const std::size_t d = 1 + i % 32;
      const Tensor a = random_normal({d}, 1.0, rng);
      const SaliencyMap m(random_uniform({d}, 0.0, 1.0, rng));
      ++out.hadamard_pairs;
      out.hadamard_violations += !hadamard_norm_bound(a, m).holds;
    }
  }

  // Real net, small alpha.
  const double tau = s.tau.value_or(default_tau(net.class_count()));
  auto nets = parallel_map<std::pair<BoundReport, BoundReport>>(s.instances, s.workers, [&](std::size_t i) {
    Rng rng(item_seed(s.seed, 33, i));
    const Tensor x0 = random_uniform(net.input_shape(), 0.0, 1.0, rng);
    const SaliencyMap m(random_uniform(net.input_shape(), 0.0, 1.0, rng));
    const Tensor v = random_unit(net.input_shape(), rng);
    const ClassId target = predict(net, apply_mask(m, x0));
    BoundReport t1 = theorem1_check(net, target, x0, m, s.alpha, v, tau);
    BoundReport t2 = theorem2_check(net, target, x0, x0 + v * s.alpha, m, s.alpha);
    t1.id = t2.id = "n" + std::to_string(i);
    return std::pair{std::move(t1), std::move(t2)};
  });
  for (auto& r : nets) {
    if (!r.value) continue;
    out.net_t1.push_back(std::move(r.value->first));
    out.net_t2.push_back(std::move(r.value->second));
  }

  // Residual sweep: three decades of |gamma|, averaged over a few directions.
  {
    Rng rng(derive_seed(s.seed, 34));
    const Tensor x0 = random_uniform(net.input_shape(), 0.0, 1.0, rng);
    const SaliencyMap m(random_uniform(net.input_shape(), 0.0, 1.0, rng));
    const ClassId target = predict(net, apply_mask(m, x0));
    std::vector<Tensor> dirs;
    for (int k = 0; k < 4; ++k) dirs.push_back(random_unit(net.input_shape(), rng));
    std::vector<double> xs, ys;
    for (std::size_t p = 0; p < s.residual_points; ++p) {
      const double t = static_cast<double>(p) / static_cast<double>(s.residual_points - 1);
      const double g = 1e-1 * std::pow(10.0, -3.0 * t);
      ResidualPoint rp{g, 0.0, 0.0};
      for (const auto& v : dirs) {
        const auto r = quadratic_residual(net, target, x0, m, v * g);
        rp.absolute += r.absolute / static_cast<double>(dirs.size());
        rp.relative += r.relative / static_cast<double>(dirs.size());
      }
      out.residual.push_back(rp);
      if (rp.absolute > 0.0) {
        xs.push_back(g);
        ys.push_back(rp.absolute);
      }
    }
    out.residual_slope = xs.size() >= 2 ? loglog_slope(xs, ys) : 0.0;
  }

  // Brute-force radii on a handful of net instances.
  {
    std::vector<double> grid;
    for (std::size_t k = 1; k <= s.radius_steps; ++k)
      grid.push_back(s.radius_max * static_cast<double>(k) / static_cast<double>(s.radius_steps));
    auto radii = parallel_map<RadiusResult>(s.radius_instances, s.workers, [&](std::size_t i) {
      Rng rng(item_seed(s.seed, 35, i));
      const Tensor x0 = random_uniform(net.input_shape(), 0.0, 1.0, rng);
      const SaliencyMap m(random_uniform(net.input_shape(), 0.0, 1.0, rng));
      const ClassId target = predict(net, apply_mask(m, x0));
      const double t = std::max(tau, class_log_loss(net, apply_mask(m, x0), target));
      return robustness_radius_bruteforce(net, target, x0, m, t, s.directions, grid, item_seed(s.seed, 36, i));
    });
    for (auto& r : radii)
      if (r.value) out.radius.push_back(*r.value);
  }
  return out;
}

}  // namespace relex::harness
