#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "relex/attack.hpp"
#include "relex/builders.hpp"
#include "relex/dataset.hpp"
#include "relex/digest.hpp"
#include "relex/errors.hpp"
#include "relex/explain.hpp"
#include "relex/train.hpp"

namespace relex::harness {

enum class ExperimentKind {
  train,
  explain,
  attack,
  eval_retrieval,
  eval_fidelity,
  eval_similarity,
  theory_check,
  class_sweep,
};

inline const char* to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::train: return "train";
    case ExperimentKind::explain: return "explain";
    case ExperimentKind::attack: return "attack";
    case ExperimentKind::eval_retrieval: return "eval-retrieval";
    case ExperimentKind::eval_fidelity: return "eval-fidelity";
    case ExperimentKind::eval_similarity: return "eval-similarity";
    case ExperimentKind::theory_check: return "theory-check";
    case ExperimentKind::class_sweep: return "class-sweep";
  }
  return "?";
}

inline std::optional<ExperimentKind> parse_kind(const std::string& s) {
  for (int i = 0; i <= static_cast<int>(ExperimentKind::class_sweep); ++i) {
    const auto k = static_cast<ExperimentKind>(i);
    if (s == to_string(k)) return k;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Schema

struct KeySpec {
  const char* key;
  const char* fallback;
  const char* help;
};

/// Every accepted key with its default. Presets and explicit values override
/// these; unknown keys are rejected.
inline const std::vector<KeySpec>& config_schema() {
  static const std::vector<KeySpec> schema = {
      {"experiment", "", "train | explain | attack | eval-retrieval | eval-fidelity | eval-similarity | theory-check | class-sweep"},
      {"output.dir", "out", "directory receiving every artifact"},
      {"seed", "0", "master seed; per-item seeds are derived from it"},
      {"workers", "1", "work-pool threads; results are assembled in index order"},

      {"data.source", "synthetic", "synthetic | idx"},
      {"data.images", "", "IDX image file (data.source = idx)"},
      {"data.labels", "", "IDX label file (data.source = idx)"},
      {"data.synthetic.classes", "4", "synthetic class count"},
      {"data.synthetic.per_class", "100", "synthetic items per class"},
      {"data.synthetic.side", "8", "synthetic image side length"},
      {"data.synthetic.margin", "0.7", "synthetic blob peak intensity"},
      {"data.synthetic.distractor", "0", "relative strength of a second, off-class blob"},
      {"data.synthetic.seed", "0", "synthetic generator seed"},
      {"data.offset", "0", "first item used"},
      {"data.count", "0", "items used after the offset; 0 means all"},

      {"model.path", "model.rlxm", "model file (written by train, read by every other experiment)"},
      {"model.arch", "mlp", "mlp | cnn"},
      {"model.hidden", "32", "comma-separated hidden widths (mlp)"},
      {"model.filters", "8", "convolution filters (cnn)"},
      {"model.kernel", "3", "convolution kernel side (cnn)"},
      {"model.activation", "relu", "relu | softplus"},
      {"model.seed", "0", "initialization seed"},

      {"train.epochs", "30", "training epochs"},
      {"train.batch_size", "32", "minibatch size"},
      {"train.learning_rate", "0.01", "Adam step size"},
      {"train.adversarial", "false", "train on PGD adversaries"},
      {"train.pgd.epsilon", "0.063", "PGD radius for adversarial training"},

      {"method", "relex", "relex | simgrad | smoothgrad | intgrad (explain)"},
      {"methods", "relex,simgrad,smoothgrad,intgrad", "comma-separated methods (eval, sweep uses relex)"},
      {"preset", "none", "none | relex-nobatch | relex-50 | relex-100"},
      {"relex.batch_size", "100", "noisy samples around the input"},
      {"relex.sigma_fraction", "0.1", "noise sd as a fraction of the input range"},
      {"relex.lambda1", "0.0001", "L1 weight"},
      {"relex.lambda2", "1", "background-term weight"},
      {"relex.epochs", "50", "passes over the noisy batch"},
      {"relex.learning_rate", "0.001", "step length of the normalized update"},
      {"relex.init_low", "0", "mask initialization lower bound"},
      {"relex.init_high", "0.01", "mask initialization upper bound"},
      {"relex.normalize_gradient", "true", "L2-normalize each update"},
      {"relex.minibatch_size", "1", "samples per update; 0 means full batch"},
      {"relex.layout", "full", "full | spatial"},
      {"smoothgrad.samples", "50", "noisy gradients averaged"},
      {"smoothgrad.sigma_fraction", "0.1", "noise sd as a fraction of the input range"},
      {"intgrad.steps", "32", "midpoint-rule steps from the zero baseline"},

      {"attack.kind", "pgd", "pgd | topk"},
      {"attack.epsilon", "0.063", "L-infinity radius (attack experiment)"},
      {"attack.epsilon_grid", "0.0147,0.021,0.063,0.21,0.42", "comma-separated radii (eval, sweep uses the largest)"},
      {"pgd.step_size", "0.0021", "signed step per iteration"},
      {"pgd.iterations", "40", "PGD iterations"},
      {"pgd.random_start", "true", "start uniformly inside the ball"},
      {"clamp.lo", "0", "valid data range lower end"},
      {"clamp.hi", "1", "valid data range upper end"},
      {"topk.k", "8", "pixels in the protected top-k set"},
      {"topk.iterations", "30", "top-k fooling iterations"},
      {"topk.step_size", "0.01", "top-k fooling step"},
      {"topk.fd_step", "0.0001", "finite-difference step of the explainer gradient"},
      {"topk.block_size", "1", "coordinates per finite-difference block"},

      {"theory.instances", "1000", "random instances per bound check"},
      {"theory.dim", "9", "dimension of the quadratic surrogate"},
      {"theory.alpha", "0.001", "perturbation magnitude on real nets"},
      {"theory.tau", "auto", "classification threshold; auto means log(class count)"},
      {"theory.directions", "256", "sampled directions for the brute-force radius"},
      {"theory.radius_steps", "40", "radius grid points"},
      {"theory.radius_max", "2", "radius grid maximum"},
      {"theory.residual_points", "13", "gamma magnitudes in the residual sweep"},

      {"sweep.classes", "all", "comma-separated class ids or all"},
      {"sweep.oracle_budget", "0.5", "max fraction of pixels kept by the evidence oracle"},
  };
  return schema;
}

inline const KeySpec* find_key(const std::string& key) {
  for (const auto& k : config_schema())
    if (key == k.key) return &k;
  return nullptr;
}

/// Values applied by a preset, below explicit keys.
inline std::vector<std::pair<std::string, std::string>> preset_values(const std::string& preset) {
  if (preset == "relex-nobatch") return {{"relex.sigma_fraction", "0"}};
  if (preset == "relex-50") return {{"relex.epochs", "50"}};
  if (preset == "relex-100") return {{"relex.epochs", "100"}};
  return {};
}

// ---------------------------------------------------------------------------
// Layered key/value store

struct Entry {
  std::string value;
  std::string source;  ///< e.g. "run.cfg:12", "--epochs", "default"
};

class ConfigLayers {
public:
  /// Adds a value from one source layer. Setting the same key twice in the
  /// same layer with a different value is a conflict naming both sources.
  void set(int layer, const std::string& key, const std::string& value, const std::string& source) {
    auto& slot = layers_[layer];
    if (auto it = slot.find(key); it != slot.end()) {
      if (it->second.value != value) {
        problems_.push_back(key + ": conflicting values '" + it->second.value + "' (" + it->second.source + ") and '" +
                            value + "' (" + source + ")");
      }
      return;
    }
    if (!find_key(key)) problems_.push_back(key + ": unknown key (" + source + ")");
    slot[key] = {value, source};
  }

  std::optional<Entry> get(const std::string& key) const {
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it)
      if (auto e = it->second.find(key); e != it->second.end()) return e->second;
    return std::nullopt;
  }

  const std::vector<std::string>& problems() const { return problems_; }
  void add_problem(std::string p) { problems_.push_back(std::move(p)); }

private:
  std::map<int, std::map<std::string, Entry>> layers_;
  std::vector<std::string> problems_;
};

enum Layer : int { kFileLayer = 1, kFlagLayer = 2 };

/// Parses `key = value` lines; `#` starts a comment, blank lines are ignored.
inline void parse_config_text(const std::string& text, const std::string& name, ConfigLayers& out) {
  std::istringstream in(text);
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string{};
      return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = name + ":" + std::to_string(lineno);
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      out.add_problem(where + ": expected 'key = value'");
      continue;
    }
    out.set(kFileLayer, trim(line.substr(0, eq)), trim(line.substr(eq + 1)), where);
  }
}

inline void load_config_file(const std::string& path, ConfigLayers& out) {
  std::ifstream in(path);
  if (!in) {
    out.add_problem("config file '" + path + "' cannot be read");
    return;
  }
  std::stringstream ss;
  ss << in.rdbuf();
  parse_config_text(ss.str(), path, out);
}

// ---------------------------------------------------------------------------
// Typed, fully resolved configuration

struct DataSpec {
  std::string source = "synthetic";
  std::string images, labels;
  SyntheticSpec synthetic;
  std::size_t offset = 0;
  std::size_t count = 0;
};

struct ModelSpec {
  std::string path;
  std::string arch = "mlp";
  std::vector<std::size_t> hidden{32};
  std::size_t filters = 8, kernel = 3;
  Activation activation = Activation::relu;
  std::uint64_t seed = 0;
};

struct TheorySpec {
  std::size_t instances = 1000;
  std::size_t dim = 9;
  double alpha = 1e-3;
  std::optional<double> tau;
  std::size_t directions = 256;
  std::size_t radius_steps = 40;
  double radius_max = 2.0;
  std::size_t residual_points = 13;
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::train;
  std::string output_dir;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  DataSpec data;
  ModelSpec model;
  TrainConfig train;
  ExplainerConfig explainer;
  std::vector<Method> methods;
  std::string preset;
  std::string attack_kind = "pgd";
  double attack_epsilon = 0.0;
  std::vector<double> epsilon_grid;
  PGDConfig pgd;
  TopKFoolConfig topk;
  TheorySpec theory;
  std::optional<std::vector<std::size_t>> sweep_classes;
  double sweep_oracle_budget = 0.5;

  /// Every key with its effective value, sorted, one `key = value` per line.
  std::string resolved_text;
  std::string digest() const { return sha256_hex(resolved_text); }
};

namespace detail {

class Reader {
public:
  explicit Reader(const ConfigLayers& c) : c_(c) {}

  std::string str(const std::string& key) {
    auto e = c_.get(key);
    std::string v = e ? e->value : find_key(key)->fallback;
    resolved_[key] = v;
    return v;
  }

  template <class T>
  T number(const std::string& key) {
    const std::string s = str(key);
    T out{};
    if constexpr (std::is_floating_point_v<T>) {
      try {
        std::size_t pos = 0;
        out = static_cast<T>(std::stod(s, &pos));
        if (pos != s.size()) throw std::invalid_argument(s);
      } catch (const std::exception&) {
        fail(key, "expected a number, got '" + s + "'");
      }
    } else {
      auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
      if (ec != std::errc{} || p != s.data() + s.size()) fail(key, "expected a non-negative integer, got '" + s + "'");
    }
    return out;
  }

  bool boolean(const std::string& key) {
    const std::string s = str(key);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    fail(key, "expected true or false, got '" + s + "'");
    return false;
  }

  template <class T>
  std::vector<T> list(const std::string& key) {
    std::vector<T> out;
    std::stringstream ss(str(key));
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (item.empty()) continue;
      try {
        std::size_t pos = 0;
        if constexpr (std::is_floating_point_v<T>) {
          out.push_back(static_cast<T>(std::stod(item, &pos)));
        } else {
          if (item.front() == '-') throw std::invalid_argument(item);
          out.push_back(static_cast<T>(std::stoull(item, &pos)));
        }
        if (pos != item.size()) throw std::invalid_argument(item);
      } catch (const std::exception&) {
        fail(key, "bad list element '" + item + "'");
      }
    }
    return out;
  }

  /// One problem per key; later checks on an unparsable value would only repeat it.
  void fail(const std::string& key, const std::string& what) {
    if (!failed_.insert(key).second) return;
    auto e = c_.get(key);
    problems.push_back(key + ": " + what + (e ? " (" + e->source + ")" : ""));
  }

  std::string resolved() const {
    std::string out;
    for (const auto& [k, v] : resolved_) out += k + " = " + v + "\n";
    return out;
  }

  std::vector<std::string> problems;

private:
  const ConfigLayers& c_;
  std::map<std::string, std::string> resolved_;
  std::set<std::string> failed_;
};

inline void append(std::vector<std::string>& out, const std::vector<std::string>& more, const std::string& prefix = "") {
  for (const auto& p : more) out.push_back(prefix + p);
}

}  // namespace detail

/// Resolves all layers into a typed config. Collects every problem and
/// throws ConfigError once with the full list.
inline ExperimentConfig resolve(ConfigLayers layers) {
  // A preset fills relex.* keys that were not given explicitly.
  {
    const auto preset = layers.get("preset");
    if (preset) {
      for (const auto& [k, v] : preset_values(preset->value))
        if (!layers.get(k)) layers.set(0, k, v, "preset " + preset->value);
    }
  }
  detail::Reader r(layers);
  ExperimentConfig cfg;
  std::vector<std::string> problems = layers.problems();

  const std::string kind = r.str("experiment");
  if (auto k = parse_kind(kind)) cfg.kind = *k;
  else r.fail("experiment", kind.empty() ? "missing experiment kind" : "unknown experiment kind '" + kind + "'");

  cfg.output_dir = r.str("output.dir");
  cfg.seed = r.number<std::uint64_t>("seed");
  cfg.workers = r.number<std::size_t>("workers");
  if (cfg.workers == 0) r.fail("workers", "must be >= 1");

  auto& d = cfg.data;
  d.source = r.str("data.source");
  d.images = r.str("data.images");
  d.labels = r.str("data.labels");
  d.synthetic.classes = r.number<std::size_t>("data.synthetic.classes");
  d.synthetic.per_class = r.number<std::size_t>("data.synthetic.per_class");
  d.synthetic.side = r.number<std::size_t>("data.synthetic.side");
  d.synthetic.margin = r.number<double>("data.synthetic.margin");
  d.synthetic.distractor = r.number<double>("data.synthetic.distractor");
  d.synthetic.seed = r.number<std::uint64_t>("data.synthetic.seed");
  d.offset = r.number<std::size_t>("data.offset");
  d.count = r.number<std::size_t>("data.count");
  if (d.source == "idx") {
    for (const char* key : {"data.images", "data.labels"}) {
      const std::string p = r.str(key);
      if (p.empty()) r.fail(key, "required when data.source = idx");
      else if (!std::filesystem::exists(p)) r.fail(key, "file '" + p + "' does not exist");
    }
  } else if (d.source != "synthetic") {
    r.fail("data.source", "expected synthetic or idx, got '" + d.source + "'");
  }

  auto& m = cfg.model;
  m.path = r.str("model.path");
  m.arch = r.str("model.arch");
  m.hidden = r.list<std::size_t>("model.hidden");
  m.filters = r.number<std::size_t>("model.filters");
  m.kernel = r.number<std::size_t>("model.kernel");
  const std::string act = r.str("model.activation");
  if (act == "relu") m.activation = Activation::relu;
  else if (act == "softplus") m.activation = Activation::softplus;
  else r.fail("model.activation", "expected relu or softplus, got '" + act + "'");
  m.seed = r.number<std::uint64_t>("model.seed");
  if (m.arch != "mlp" && m.arch != "cnn") r.fail("model.arch", "expected mlp or cnn, got '" + m.arch + "'");
  if (cfg.kind != ExperimentKind::train && cfg.kind != ExperimentKind::theory_check && !std::filesystem::exists(m.path)) {
    r.fail("model.path", "file '" + m.path + "' does not exist");
  }

  auto& t = cfg.train;
  t.epochs = r.number<std::size_t>("train.epochs");
  t.batch_size = r.number<std::size_t>("train.batch_size");
  t.learning_rate = r.number<double>("train.learning_rate");
  t.adversarial = r.boolean("train.adversarial");
  t.pgd.epsilon = r.number<double>("train.pgd.epsilon");
  t.seed = cfg.seed;
  if (t.epochs == 0) r.fail("train.epochs", "must be >= 1");
  if (t.batch_size == 0) r.fail("train.batch_size", "must be >= 1");

  auto& e = cfg.explainer;
  const std::string method = r.str("method");
  if (auto mm = parse_method(method)) e.method = *mm;
  else r.fail("method", "unknown method '" + method + "'");
  std::stringstream ms(r.str("methods"));
  for (std::string item; std::getline(ms, item, ',');) {
    if (auto mm = parse_method(item)) cfg.methods.push_back(*mm);
    else r.fail("methods", "unknown method '" + item + "'");
  }
  cfg.preset = r.str("preset");
  if (cfg.preset != "none" && preset_values(cfg.preset).empty()) r.fail("preset", "unknown preset '" + cfg.preset + "'");

  auto& rc = e.relex;
  rc.batch_size = r.number<std::size_t>("relex.batch_size");
  rc.sigma_fraction = r.number<double>("relex.sigma_fraction");
  rc.lambda1 = r.number<double>("relex.lambda1");
  rc.lambda2 = r.number<double>("relex.lambda2");
  rc.epochs = r.number<std::size_t>("relex.epochs");
  rc.learning_rate = r.number<double>("relex.learning_rate");
  rc.init_low = r.number<double>("relex.init_low");
  rc.init_high = r.number<double>("relex.init_high");
  rc.normalize_gradient = r.boolean("relex.normalize_gradient");
  rc.minibatch_size = r.number<std::size_t>("relex.minibatch_size");
  const std::string layout = r.str("relex.layout");
  if (layout == "full") rc.layout = MaskLayout::full;
  else if (layout == "spatial") rc.layout = MaskLayout::spatial;
  else r.fail("relex.layout", "expected full or spatial, got '" + layout + "'");
  detail::append(problems, rc.problems());
  e.smoothgrad.samples = r.number<std::size_t>("smoothgrad.samples");
  e.smoothgrad.sigma_fraction = r.number<double>("smoothgrad.sigma_fraction");
  e.intgrad_steps = r.number<std::size_t>("intgrad.steps");
  if (e.smoothgrad.samples == 0) r.fail("smoothgrad.samples", "must be >= 1");
  if (e.intgrad_steps == 0) r.fail("intgrad.steps", "must be >= 1");

  cfg.attack_kind = r.str("attack.kind");
  if (cfg.attack_kind != "pgd" && cfg.attack_kind != "topk") {
    r.fail("attack.kind", "expected pgd or topk, got '" + cfg.attack_kind + "'");
  }
  cfg.attack_epsilon = r.number<double>("attack.epsilon");
  cfg.epsilon_grid = r.list<double>("attack.epsilon_grid");
  for (double eps : cfg.epsilon_grid)
    if (!(eps >= 0.0)) r.fail("attack.epsilon_grid", "radii must be >= 0");
  auto& p = cfg.pgd;
  p.step_size = r.number<double>("pgd.step_size");
  p.iterations = r.number<std::size_t>("pgd.iterations");
  p.random_start = r.boolean("pgd.random_start");
  p.clamp_lo = r.number<double>("clamp.lo");
  p.clamp_hi = r.number<double>("clamp.hi");
  p.epsilon = cfg.attack_epsilon;
  detail::append(problems, p.problems());
  t.pgd.step_size = p.step_size;
  t.pgd.iterations = p.iterations;
  t.pgd.random_start = p.random_start;
  t.pgd.clamp_lo = p.clamp_lo;
  t.pgd.clamp_hi = p.clamp_hi;

  auto& k = cfg.topk;
  k.k = r.number<std::size_t>("topk.k");
  k.iterations = r.number<std::size_t>("topk.iterations");
  k.step_size = r.number<double>("topk.step_size");
  k.fd_step = r.number<double>("topk.fd_step");
  k.block_size = r.number<std::size_t>("topk.block_size");
  k.epsilon = cfg.attack_epsilon;
  k.clamp_lo = p.clamp_lo;
  k.clamp_hi = p.clamp_hi;

  auto& th = cfg.theory;
  th.instances = r.number<std::size_t>("theory.instances");
  th.dim = r.number<std::size_t>("theory.dim");
  th.alpha = r.number<double>("theory.alpha");
  if (const std::string tau = r.str("theory.tau"); tau != "auto") th.tau = r.number<double>("theory.tau");
  th.directions = r.number<std::size_t>("theory.directions");
  th.radius_steps = r.number<std::size_t>("theory.radius_steps");
  th.radius_max = r.number<double>("theory.radius_max");
  th.residual_points = r.number<std::size_t>("theory.residual_points");
  if (th.dim == 0) r.fail("theory.dim", "must be >= 1");
  if (!(th.alpha > 0.0)) r.fail("theory.alpha", "must be > 0");
  if (th.radius_steps == 0) r.fail("theory.radius_steps", "must be >= 1");
  if (th.residual_points < 2) r.fail("theory.residual_points", "must be >= 2");

  if (const std::string cls = r.str("sweep.classes"); cls != "all") cfg.sweep_classes = r.list<std::size_t>("sweep.classes");
  cfg.sweep_oracle_budget = r.number<double>("sweep.oracle_budget");
  if (!(cfg.sweep_oracle_budget > 0.0 && cfg.sweep_oracle_budget <= 1.0)) {
    r.fail("sweep.oracle_budget", "must lie in (0, 1]");
  }

  for (const auto& spec : config_schema()) r.str(spec.key);
  detail::append(problems, r.problems);
  if (!problems.empty()) throw ConfigError(std::move(problems));
  cfg.resolved_text = r.resolved();
  return cfg;
}

}  // namespace relex::harness
