// relex_cli: train | explain | attack | eval | theory | sweep
//
// Every subcommand accepts --config FILE and any number of --set key=value;
// dedicated flags are shorthands for dotted keys. Command-line values override
// the config file.

#include <cstdio>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "relex/harness/config.hpp"
#include "relex/harness/run.hpp"

namespace {

using relex::harness::ConfigLayers;

struct Shorthand {
  const char* flag;
  const char* key;
  const char* help;
};

// Flags shared by all subcommands.
const std::vector<Shorthand> kCommon = {
    {"--output", "output.dir", "output directory"},
    {"--seed", "seed", "master seed"},
    {"--workers", "workers", "work-pool threads"},
    {"--model", "model.path", "model file"},
    {"--data", "data.source", "synthetic | idx"},
    {"--images", "data.images", "IDX image file"},
    {"--labels", "data.labels", "IDX label file"},
    {"--count", "data.count", "number of items (0 = all)"},
    {"--offset", "data.offset", "first item"},
};

const std::map<std::string, std::vector<Shorthand>> kPerCommand = {
    {"train",
     {{"--epochs", "train.epochs", "training epochs"},
      {"--arch", "model.arch", "mlp | cnn"},
      {"--adversarial", "train.adversarial", "PGD adversarial training (true/false)"}}},
    {"explain",
     {{"--method", "method", "relex | simgrad | smoothgrad | intgrad"},
      {"--preset", "preset", "relex-nobatch | relex-50 | relex-100"},
      {"--epochs", "relex.epochs", "relex epochs"},
      {"--lr", "relex.learning_rate", "relex learning rate"},
      {"--lambda1", "relex.lambda1", "L1 weight"},
      {"--lambda2", "relex.lambda2", "background weight"}}},
    {"attack",
     {{"--attack", "attack.kind", "pgd | topk"},
      {"--epsilon", "attack.epsilon", "L-infinity radius"},
      {"--method", "method", "explainer attacked by topk"}}},
    {"eval",
     {{"--methods", "methods", "comma-separated methods"},
      {"--eps-grid", "attack.epsilon_grid", "comma-separated radii"},
      {"--preset", "preset", "relex-nobatch | relex-50 | relex-100"},
      {"--epochs", "relex.epochs", "relex epochs"}}},
    {"theory", {{"--instances", "theory.instances", "random instances per check"}}},
    {"sweep",
     {{"--classes", "sweep.classes", "comma-separated classes or all"},
      {"--eps-grid", "attack.epsilon_grid", "radii; the largest is used"}}},
};

const std::map<std::string, std::string> kKindOf = {
    {"train", "train"}, {"explain", "explain"}, {"attack", "attack"},
    {"theory", "theory-check"}, {"sweep", "class-sweep"},
};

struct Command {
  CLI::App* app = nullptr;
  std::string config_file;
  std::vector<std::string> sets;
  std::string eval_kind;
  std::map<std::string, std::string> values;  // flag -> value
};

void print_problems(const std::vector<std::string>& problems) {
  std::cerr << "configuration invalid (" << problems.size() << " problem" << (problems.size() == 1 ? "" : "s")
            << "):\n";
  for (const auto& p : problems) std::cerr << "  " << p << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"RelEx saliency toolkit: training, explanation, attacks, evaluation and bound checks"};
  app.require_subcommand(1);
  std::map<std::string, Command> commands;
  for (const auto& name : {"train", "explain", "attack", "eval", "theory", "sweep"}) {
    Command& c = commands[name];
    c.app = app.add_subcommand(name, std::string("run the ") + name + " experiment");
    c.app->add_option("--config", c.config_file, "flat key = value config file")->check(CLI::ExistingFile);
    c.app->add_option("--set", c.sets, "override any config key: key=value (repeatable)");
    if (std::string(name) == "eval") {
      c.app->add_option("--kind", c.eval_kind, "retrieval | fidelity | similarity")
          ->check(CLI::IsMember({"retrieval", "fidelity", "similarity"}));
    }
    auto add = [&](const Shorthand& s) {
      c.app->add_option(s.flag, c.values[s.flag], std::string(s.help) + " (" + s.key + ")");
    };
    for (const auto& s : kCommon) add(s);
    for (const auto& s : kPerCommand.at(name)) add(s);
  }
  CLI11_PARSE(app, argc, argv);

  for (auto& [name, c] : commands) {
    if (!c.app->parsed()) continue;
    ConfigLayers layers;
    if (!c.config_file.empty()) relex::harness::load_config_file(c.config_file, layers);

    // The subcommand fixes the experiment kind; a config naming another kind is a conflict.
    std::string kind;
    if (name == "eval") {
      const auto file_kind = layers.get("experiment");
      if (!c.eval_kind.empty()) kind = "eval-" + c.eval_kind;
      else if (file_kind && file_kind->value.rfind("eval-", 0) == 0) kind = file_kind->value;
      else kind = "eval-retrieval";
    } else {
      kind = kKindOf.at(name);
    }
    if (const auto file_kind = layers.get("experiment"); file_kind && file_kind->value != kind) {
      layers.add_problem("experiment: subcommand '" + name + "' (command line) selects '" + kind +
                         "' but the config sets '" + file_kind->value + "' (" + file_kind->source + ")");
    }
    layers.set(relex::harness::kFlagLayer, "experiment", kind, "subcommand " + name);

    for (const auto& s : kCommon)
      if (c.app->count(s.flag)) layers.set(relex::harness::kFlagLayer, s.key, c.values[s.flag], s.flag);
    for (const auto& s : kPerCommand.at(name))
      if (c.app->count(s.flag)) layers.set(relex::harness::kFlagLayer, s.key, c.values[s.flag], s.flag);
    for (const auto& kv : c.sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) {
        layers.add_problem("--set '" + kv + "': expected key=value");
        continue;
      }
      layers.set(relex::harness::kFlagLayer, kv.substr(0, eq), kv.substr(eq + 1), "--set " + kv);
    }

    relex::harness::ExperimentConfig cfg;
    try {
      cfg = relex::harness::resolve(layers);
    } catch (const relex::ConfigError& e) {
      print_problems(e.problems());
      return 2;
    }
    const auto outcome = relex::harness::run(cfg);
    for (const auto& e : outcome.errors)
      std::cerr << "error [" << e.stage << (e.item.empty() ? "" : " item " + e.item) << "]: " << e.message << "\n";
    std::cout << cfg.output_dir << ": " << outcome.artifacts.size() << " artifacts, " << outcome.errors.size()
              << " errors, config_digest=" << cfg.digest() << "\n";
    return outcome.exit_code;
  }
  return 0;
}
