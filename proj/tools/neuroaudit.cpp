#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "neuroaudit/report.hpp"

int main(int argc, char** argv) {
  using neuroaudit::Verb;
  CLI::App app{"Audit natural-language explanations of transformer neurons"};
  app.require_subcommand(1);

  const std::map<std::string, std::pair<Verb, std::string>> verbs = {
      {"observe", {Verb::Observe, "Score explanations against their test sets"}},
      {"intervene", {Verb::Intervene, "IIA@K curves for each registered task"}},
      {"probe-train", {Verb::ProbeTrain, "Probe audits over explanation-similar neuron groups"}},
      {"scan", {Verb::Scan, "Mine a corpus for firing sentences and label them"}},
      {"demo-score", {Verb::DemoScore, "Simulation-score insensitivity demonstration"}},
      {"report", {Verb::Report, "Merge existing summaries into one report"}},
  };

  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
  std::optional<std::string> out;
  std::map<CLI::App*, Verb> by_command;
  for (const auto& [name, entry] : verbs) {
    CLI::App* sub = app.add_subcommand(name, entry.second);
    sub->add_option("--config", config, "Audit config (JSON)")->required();
    sub->add_option("--seed", seed, "Use this single seed");
    sub->add_option("--threads", threads, "Worker threads");
    sub->add_option("--out", out, "Output directory");
    by_command[sub] = entry.first;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  neuroaudit::CliOverrides overrides;
  overrides.seed = seed;
  overrides.threads = threads;
  if (out) overrides.out = *out;
  for (const auto& [sub, verb] : by_command)
    if (sub->parsed()) return neuroaudit::run_verb(verb, config, overrides);
  return 1;
}
