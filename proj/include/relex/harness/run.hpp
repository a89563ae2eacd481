#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "relex/builders.hpp"
#include "relex/persist.hpp"
#include "relex/train.hpp"
#include "relex/harness/config.hpp"
#include "relex/harness/evaluation.hpp"

namespace relex::harness {

struct RunOutcome {
  int exit_code = 0;
  std::vector<std::string> artifacts;  ///< paths relative to the output directory, in write order
  std::vector<ItemError> errors;
};

namespace detail {

using relex::detail::fmt_double;

class Outputs {
public:
  Outputs(const ExperimentConfig& cfg, RunOutcome& out) : dir_(cfg.output_dir), digest_(cfg.digest()), out_(out) {
    std::filesystem::create_directories(dir_);
  }

  std::filesystem::path path(const std::string& rel) const { return dir_ / rel; }
  const std::string& digest() const { return digest_; }

  void write(const std::string& rel, const std::string& bytes) {
    const auto p = dir_ / rel;
    std::filesystem::create_directories(p.parent_path());
    std::ofstream f(p, std::ios::binary);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw FormatError(FormatErrc::io, "cannot write " + p.string());
    out_.artifacts.push_back(rel);
  }

  /// CSV with the digest comment line first.
  void csv(const std::string& rel, const std::string& header, const std::vector<std::string>& rows) {
    std::string s = "# config_digest=" + digest_ + "\n" + header + "\n";
    for (const auto& r : rows) s += r + "\n";
    write(rel, s);
  }

private:
  std::filesystem::path dir_;
  std::string digest_;
  RunOutcome& out_;
};

template <class... T>
std::string row(const T&... cols) {
  std::ostringstream os;
  bool first = true;
  auto put = [&](const auto& v) {
    if (!first) os << ',';
    first = false;
    if constexpr (std::is_floating_point_v<std::decay_t<decltype(v)>>) os << fmt_double(v);
    else os << v;
  };
  (put(cols), ...);
  return os.str();
}

inline std::string errors_json(const std::vector<ItemError>& errors, const std::string& digest) {
  nlohmann::ordered_json j;
  j["config_digest"] = digest;
  j["errors"] = nlohmann::ordered_json::array();
  for (const auto& e : errors) j["errors"].push_back({{"stage", e.stage}, {"item", e.item}, {"message", e.message}});
  return j.dump(2) + "\n";
}

}  // namespace detail

/// Dataset selected by the config, sliced by data.offset / data.count.
inline LabeledDataset load_dataset(const DataSpec& d) {
  LabeledDataset ds = d.source == "idx" ? load_idx(d.images, d.labels) : generate_synthetic(d.synthetic);
  if (d.offset > 0 || d.count > 0) ds = ds.slice(d.offset, d.count ? d.count : ds.size());
  return ds;
}

inline Model build_architecture(const ModelSpec& m, const Shape& input, std::size_t classes) {
  if (m.arch == "cnn") return make_small_cnn(input, m.filters, m.kernel, classes, m.seed, m.activation);
  return make_mlp(input, m.hidden, classes, m.seed, m.activation);
}

inline EvalSettings eval_settings(const ExperimentConfig& cfg) {
  EvalSettings s;
  s.methods = cfg.methods;
  s.epsilon_grid = cfg.epsilon_grid;
  s.explainer = cfg.explainer;
  s.pgd = cfg.pgd;
  s.topk = cfg.topk.k;
  s.seed = cfg.seed;
  s.workers = cfg.workers;
  return s;
}

namespace detail {

inline void run_train(const ExperimentConfig& cfg, Outputs& out, RunOutcome& res) {
  const LabeledDataset ds = load_dataset(cfg.data);
  ds.validate();
  if (ds.empty()) throw std::invalid_argument("train: empty dataset");
  const Model arch = build_architecture(cfg.model, ds.images.front().shape(), ds.class_count);
  const TrainResult tr = train_classifier(ds, arch, cfg.train);
  save_model(tr.model, cfg.model.path);
  res.artifacts.push_back(cfg.model.path);
  std::vector<std::string> rows;
  for (std::size_t e = 0; e < tr.epoch_loss.size(); ++e) rows.push_back(row(e, tr.epoch_loss[e]));
  out.csv("train_log.csv", "epoch,mean_loss", rows);
  out.csv("train_summary.csv", "items,classes,train_accuracy,dataset_sha256",
          {row(ds.size(), ds.class_count, tr.train_accuracy, ds.digest())});
}

inline void run_explain(const ExperimentConfig& cfg, const Model& model, Outputs& out, RunOutcome& res) {
  const LabeledDataset ds = load_dataset(cfg.data);
  const auto maps = parallel_map<SaliencyMap>(ds.size(), cfg.workers, [&](std::size_t i) {
    return explain(model, ds.images[i], ds.labels[i],
                   seeded(cfg.explainer, cfg.explainer.method, item_seed(cfg.seed, 12, i)));
  });
  std::vector<std::string> rows;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (!maps[i].value) {
      res.errors.push_back({"explain", std::to_string(i), maps[i].error});
      continue;
    }
    const SaliencyMap& m = *maps[i].value;
    const std::string stem = "saliency/" + std::string(to_string(cfg.explainer.method)) + "_" + std::to_string(i);
    out.write(stem + ".rsal", encode_saliency(m, to_string(cfg.explainer.method), out.digest()));
    out.write(stem + ".pgm", encode_pgm(m));
    const Tensor expl = apply_mask(m, ds.images[i]);
    rows.push_back(row(i, ds.labels[i].index, predict(model, ds.images[i]).index, predict(model, expl).index,
                       forward(model, expl)[ds.labels[i].index], m.l1()));
  }
  out.csv("explain.csv", "sample_id,label,prediction,explanation_prediction,explanation_score,saliency_l1", rows);
}

inline void run_attack(const ExperimentConfig& cfg, const Model& model, Outputs& out, RunOutcome& res) {
  const LabeledDataset ds = load_dataset(cfg.data);
  struct Adv {
    Tensor x;
    std::string note;
  };
  const auto advs = parallel_map<Adv>(ds.size(), cfg.workers, [&](std::size_t i) {
    if (cfg.attack_kind == "topk") {
      TopKFoolConfig tc = cfg.topk;
      tc.seed = item_seed(cfg.seed, 14, i);
      auto r = topk_fooling(model, seeded(cfg.explainer, cfg.explainer.method, item_seed(cfg.seed, 12, i)),
                            ds.images[i], tc);
      return Adv{std::move(r.x_adv), r.report};
    }
    PGDConfig pc = cfg.pgd;
    pc.seed = item_seed(cfg.seed, 11, i);
    return Adv{pgd_untargeted(model, ds.images[i], ds.labels[i], pc), ""};
  });
  AdversarialSet set;
  set.source = ds.digest();
  set.attack = cfg.attack_kind;
  std::ostringstream ac;
  ac << "epsilon=" << fmt_double(cfg.attack_epsilon) << " step_size=" << fmt_double(cfg.pgd.step_size)
     << " iterations=" << cfg.pgd.iterations << " random_start=" << cfg.pgd.random_start;
  set.attack_config = ac.str();
  set.seed = cfg.seed;
  std::vector<std::string> rows;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (!advs[i].value) {
      res.errors.push_back({"attack", std::to_string(i), advs[i].error});
      continue;
    }
    const Tensor& xa = advs[i].value->x;
    set.ids.push_back(i);
    set.labels.push_back(ds.labels[i]);
    set.samples.push_back(xa);
    rows.push_back(row(i, ds.labels[i].index, predict(model, ds.images[i]).index, predict(model, xa).index,
                       norm_inf(xa - ds.images[i])));
  }
  out.write("adversarial.rlxa", encode_adv_set(set));
  out.csv("attack.csv", "sample_id,label,clean_prediction,adversarial_prediction,linf_distance", rows);
}

inline void run_eval(const ExperimentConfig& cfg, const Model& model, Outputs& out, RunOutcome& res) {
  const LabeledDataset ds = load_dataset(cfg.data);
  const auto items = correctly_classified(model, ds);
  const EvalSettings s = eval_settings(cfg);
  const EvalResult r = evaluate(model, ds, items, s);
  res.errors.insert(res.errors.end(), r.errors.begin(), r.errors.end());

  for (std::size_t mi = 0; mi < s.methods.size(); ++mi) {
    const std::string name = to_string(s.methods[mi]);
    std::vector<std::string> rows;
    for (std::size_t e = 0; e < s.epsilon_grid.size(); ++e) {
      const auto& c = r.summary[mi][e];
      std::ostringstream per;
      write_metric_csv(per, cell_report(r, mi, e, out.digest()));
      out.write("samples/" + name + "_eps" + std::to_string(e) + ".csv", per.str());
      if (c.n == 0) continue;
      rows.push_back(row(c.epsilon, c.n, c.attack_success, c.retrieval_adv, c.retrieval_clean_map, c.mean_l1,
                         c.mean_normalized_l1, c.deletion, c.preservation, c.relevance, c.spearman, c.topk));
    }
    out.csv("eval_" + name + ".csv",
            "epsilon,n,attack_success,retrieval_adv,retrieval_clean_map,mean_l1,mean_normalized_l1,deletion,"
            "preservation,R,spearman,topk_intersection",
            rows);
  }

  std::vector<std::string> plot_a, plot_b;
  for (std::size_t mi = 0; mi < s.methods.size(); ++mi)
    for (std::size_t e = 0; e < s.epsilon_grid.size(); ++e) {
      const auto& c = r.summary[mi][e];
      if (c.n == 0) continue;
      const char* m = to_string(c.method);
      switch (cfg.kind) {
        case ExperimentKind::eval_retrieval:
          plot_a.push_back(row(m, c.epsilon, "m_adv*x_adv", c.retrieval_adv, c.n));
          plot_a.push_back(row(m, c.epsilon, "m_0*x_adv", c.retrieval_clean_map, c.n));
          plot_b.push_back(row(m, c.epsilon, c.mean_l1, c.mean_normalized_l1, c.n));
          break;
        case ExperimentKind::eval_fidelity:
          plot_a.push_back(row(m, c.epsilon, c.deletion, c.preservation, c.relevance, c.n));
          break;
        default:
          plot_a.push_back(row(m, c.epsilon, c.spearman, c.topk, c.n));
          break;
      }
    }
  switch (cfg.kind) {
    case ExperimentKind::eval_retrieval:
      out.csv("plot_retrieval_vs_eps.csv", "method,epsilon,mode,rate,n", plot_a);
      out.csv("plot_l1_vs_eps.csv", "method,epsilon,mean_l1,mean_normalized_l1,n", plot_b);
      break;
    case ExperimentKind::eval_fidelity:
      out.csv("plot_fidelity_vs_eps.csv", "method,epsilon,deletion,preservation,R,n", plot_a);
      break;
    default:
      out.csv("plot_similarity_vs_eps.csv", "method,epsilon,spearman,topk_intersection,n", plot_a);
      break;
  }
}

inline void run_theory(const ExperimentConfig& cfg, Outputs& out, RunOutcome& res) {
  TheorySettings s;
  s.instances = cfg.theory.instances;
  s.dim = cfg.theory.dim;
  s.alpha = cfg.theory.alpha;
  s.tau = cfg.theory.tau;
  s.directions = cfg.theory.directions;
  s.radius_steps = cfg.theory.radius_steps;
  s.radius_max = cfg.theory.radius_max;
  s.residual_points = cfg.theory.residual_points;
  s.seed = cfg.seed;
  s.workers = cfg.workers;
  const Shape input{1, cfg.data.synthetic.side, cfg.data.synthetic.side};
  const Model net = std::filesystem::exists(cfg.model.path)
                        ? load_model(cfg.model.path).with_softplus(10.0)
                        : make_mlp(input, cfg.model.hidden, cfg.data.synthetic.classes, cfg.model.seed,
                                   Activation::softplus);
  const TheoryResult t = theory_suite(net, s);

  auto emit = [&](const std::string& name, std::vector<BoundReport> a, const std::vector<BoundReport>& b) {
    a.insert(a.end(), b.begin(), b.end());
    std::ostringstream os;
    write_bound_csv(os, a, out.digest());
    out.write(name, os.str());
    return summarize(a);
  };
  const auto qs = emit("bounds_quadratic.csv", t.quadratic_t1, t.quadratic_t2);
  const auto ns = emit("bounds_net.csv", t.net_t1, t.net_t2);
  std::vector<std::string> rows;
  for (const auto& p : t.residual) rows.push_back(row(p.gamma_norm, p.absolute, p.relative));
  rows.push_back(row("slope", fmt_double(t.residual_slope), ""));
  out.csv("residual.csv", "gamma_norm,absolute,relative", rows);
  rows.clear();
  for (std::size_t i = 0; i < t.radius.size(); ++i)
    rows.push_back(row(i, t.radius[i].radius, t.radius[i].unbounded ? 1 : 0, t.radius[i].direction));
  out.csv("radius.csv", "instance,radius,unbounded_within_grid,direction", rows);
  out.csv("theory_summary.csv", "check,instances,evaluated,violations",
          {row("quadratic_bounds", qs.instances, qs.evaluated, qs.violations),
           row("net_bounds_reported", ns.instances, ns.evaluated, ns.violations),
           row("hadamard_pairs", t.hadamard_pairs, t.hadamard_pairs, t.hadamard_violations)});
  if (qs.violations > 0) res.errors.push_back({"theory", "quadratic", std::to_string(qs.violations) + " bound violations"});
  if (t.hadamard_violations > 0) {
    res.errors.push_back({"theory", "hadamard", std::to_string(t.hadamard_violations) + " violations"});
  }
}

inline void run_sweep(const ExperimentConfig& cfg, const Model& model, Outputs& out, RunOutcome& res) {
  const LabeledDataset ds = load_dataset(cfg.data);
  std::vector<std::size_t> items(ds.size());
  std::iota(items.begin(), items.end(), 0);
  SweepSettings s;
  if (cfg.sweep_classes) {
    s.classes = *cfg.sweep_classes;
    for (std::size_t c : s.classes)
      if (c >= model.class_count()) throw std::out_of_range("sweep.classes: class " + std::to_string(c) + " out of range");
  } else {
    for (std::size_t c = 0; c < model.class_count(); ++c) s.classes.push_back(c);
  }
  s.methods = cfg.methods;
  if (std::find(s.methods.begin(), s.methods.end(), Method::relex) == s.methods.end()) s.methods.insert(s.methods.begin(), Method::relex);
  s.explainer = cfg.explainer;
  s.pgd = cfg.pgd;
  s.pgd.epsilon = cfg.epsilon_grid.empty() ? 0.0 : *std::max_element(cfg.epsilon_grid.begin(), cfg.epsilon_grid.end());
  s.oracle_budget = cfg.sweep_oracle_budget;
  s.seed = cfg.seed;
  s.workers = cfg.workers;
  const SweepResult r = class_sweep(model, ds, items, s);
  res.errors.insert(res.errors.end(), r.errors.begin(), r.errors.end());
  std::vector<std::string> summary, bars;
  for (std::size_t kind = 0; kind < r.cells.size(); ++kind) {
    const char* k = kind == 0 ? "clean" : "adversarial";
    for (std::size_t ci = 0; ci < s.classes.size(); ++ci) {
      const auto& cell = r.cells[kind][ci];
      if (r.inputs == 0) continue;
      summary.push_back(row(k, s.classes[ci], r.inputs, cell.evidence, cell.success, cell.rate()));
      for (std::size_t mi = 0; mi < s.methods.size(); ++mi)
        bars.push_back(row(k, s.classes[ci], to_string(s.methods[mi]), cell.method_scores[mi]));
    }
  }
  out.csv("sweep_summary.csv", "input,class,inputs,evidence,relex_success,relex_rate", summary);
  out.csv("plot_class_scores.csv", "input,class,method,mean_score", bars);
}

}  // namespace detail

/// Runs one experiment. Writes resolved.cfg and errors.json beside the
/// artifacts; the exit code is nonzero when any item or stage failed.
inline RunOutcome run(const ExperimentConfig& cfg) {
  RunOutcome res;
  detail::Outputs out(cfg, res);
  out.write("resolved.cfg", cfg.resolved_text);
  try {
    switch (cfg.kind) {
      case ExperimentKind::train: detail::run_train(cfg, out, res); break;
      case ExperimentKind::theory_check: detail::run_theory(cfg, out, res); break;
      default: {
        const Model model = load_model(cfg.model.path);
        if (cfg.kind == ExperimentKind::explain) detail::run_explain(cfg, model, out, res);
        else if (cfg.kind == ExperimentKind::attack) detail::run_attack(cfg, model, out, res);
        else if (cfg.kind == ExperimentKind::class_sweep) detail::run_sweep(cfg, model, out, res);
        else detail::run_eval(cfg, model, out, res);
      }
    }
  } catch (const std::exception& e) {
    res.errors.push_back({to_string(cfg.kind), "", e.what()});
  }
  out.write("errors.json", detail::errors_json(res.errors, out.digest()));
  res.exit_code = res.errors.empty() ? 0 : 1;
  return res;
}

}  // namespace relex::harness
