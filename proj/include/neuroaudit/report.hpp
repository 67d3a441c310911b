#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "neuroaudit/denotation.hpp"
#include "neuroaudit/intervention.hpp"
#include "neuroaudit/observational.hpp"

namespace neuroaudit {

struct ModelPaths {
  std::filesystem::path archive;
  std::filesystem::path vocab;
  std::filesystem::path merges;
  std::filesystem::path config;
};

struct ScanConfig {
  NeuronRef neuron;
  std::filesystem::path corpus;
  float threshold = 0.0f;
  std::size_t window = 3;
  std::string explanation;
  std::optional<DenotationSpec> denotation;
};

struct DemoConfig {
  double frequency = 0.01;
  std::size_t trials = 1000;
  std::uint64_t seed = 0;
};

struct AnnotatorConfig {
  enum class Mode { Replay, Live } mode = Mode::Replay;
  std::filesystem::path fixture;  // read in replay mode, written in live mode
};

// One JSON document. Relative paths resolve against the file's directory.
struct AuditConfig {
  std::optional<ModelPaths> model;
  std::filesystem::path explanations;
  std::filesystem::path ranking_explanations;  // defaults to `explanations`
  std::filesystem::path testsets;              // directory of <explanation id>.json
  std::filesystem::path tasks;
  double threshold = 0.0;
  std::vector<std::uint64_t> seeds = {0};
  std::vector<double> ks = {1, 6, 12, 25, 50, 75, 100};
  std::size_t n_pairs = 256;
  std::vector<std::size_t> neuron_counts = {1};
  ProbeOptions probe;
  std::optional<ScanConfig> scan;
  DemoConfig demo;
  std::optional<AnnotatorConfig> annotator;
  std::filesystem::path out = "out";
  unsigned threads = 1;

  // Throws ConfigError for malformed fields, empty seeds or K list, and any
  // referenced path that does not exist.
  static AuditConfig load(const std::filesystem::path& path);
  static AuditConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
};

enum class Verb { Observe, Intervene, ProbeTrain, Scan, DemoScore, Report };
std::string to_string(Verb verb);

// Throws ConfigError when a field the verb needs is missing.
void require_fields(const AuditConfig& config, Verb verb);

struct SkippedItem {
  std::string id;
  std::string reason;
};

// Means over the defined values of each metric, with the undefined counts.
struct MetricMeans {
  std::size_t n = 0;
  std::optional<double> precision;
  std::optional<double> recall;
  std::optional<double> f1;
  std::size_t undefined_precision = 0;
  std::size_t undefined_recall = 0;
  std::size_t undefined_f1 = 0;

  nlohmann::json to_json() const;
};

MetricMeans mean_metrics(const std::vector<Metrics>& metrics);

struct ExplanationSummary {
  std::string id;
  std::string explanation;
  double score = 0.0;
  Metrics metrics;
  std::optional<Metrics> random_baseline;
};

struct AggregateSummary {
  std::vector<ExplanationSummary> explanations;
  MetricMeans means;
  MetricMeans random_means;
  // Pearson of F1 against explanation score over explanations with a
  // defined F1; empty when fewer than two or either side is constant.
  std::optional<double> f1_score_correlation;
  std::size_t correlation_n = 0;
  std::vector<SkippedItem> skipped;

  nlohmann::json to_json() const;
  std::string to_markdown() const;
};

AggregateSummary summarize(std::vector<ExplanationSummary> explanations, std::vector<SkippedItem> skipped);

// Writes to a temporary sibling and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

// Verb drivers. Each writes under config.out and returns 0; configuration
// problems throw ConfigError and runtime failures throw other exceptions.
int cmd_observe(const AuditConfig& config);
int cmd_probe_train(const AuditConfig& config);
int cmd_scan(const AuditConfig& config);
int cmd_intervene(const AuditConfig& config);
int cmd_demo_score(const AuditConfig& config);
int cmd_report(const AuditConfig& config);

struct CliOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
  std::optional<std::filesystem::path> out;
};

// Loads the config, applies overrides and runs the verb. Returns 0 when the
// audit ran, 1 on configuration errors and 2 on failures mid-run; the
// message goes to stderr.
int run_verb(Verb verb, const std::filesystem::path& config_path, const CliOverrides& overrides);

}  // namespace neuroaudit
