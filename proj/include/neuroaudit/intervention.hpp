#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "neuroaudit/denotation.hpp"
#include "neuroaudit/model.hpp"

namespace neuroaudit {

enum class SitePolicy {
  ByLayer,        // concept tokens below the middle layer, last token from it on
  ConceptTokens,  // the tokens covering the slot string
  LastToken,      // the final prompt position
};

struct LayerBand {
  int first = 0;
  int last = 0;  // inclusive
};

// A prompt template with one "{Y}" slot, the fills it is instantiated with,
// and the token each filled prompt should be continued with.
struct TaskTemplate {
  static constexpr std::string_view kSlot = "{Y}";
  static constexpr std::size_t kMinFills = 30;

  std::string name;
  std::string template_text;
  std::vector<std::string> fills;
  std::map<std::string, std::string> expected;
  SitePolicy site_policy = SitePolicy::ByLayer;
  LayerBand layer_band;
  // Case-insensitive substring picking this task's explanations for the
  // confidence ranking; the task name when empty.
  std::string concept_name;
  // Keep only the first token of an expected output that encodes to several.
  bool truncate_expected = false;

  // One slot, at least kMinFills distinct non-empty fills, an expectation for
  // every fill, a well-formed layer band.
  void validate() const;
  std::string prompt(const std::string& fill) const;
  ByteRange slot_range(const std::string& fill) const;  // bytes of the fill inside prompt(fill)
  std::string concept_key() const { return concept_name.empty() ? name : concept_name; }
};

// Accepts a JSON array of tasks or {"tasks": [...]}.
std::vector<TaskTemplate> parse_task_registry(const nlohmann::json& j);
std::vector<TaskTemplate> load_task_registry(const std::filesystem::path& path);
nlohmann::json to_json(const TaskTemplate& task);

// Token id of each fill's expected output. Throws InvalidArgument when an
// output is not a single token, unless the task truncates.
std::map<std::string, TokenId> resolve_expected(const TaskTemplate& task, const Tokenizer& tokenizer);

// ByLayer resolves against the model depth: bands starting below
// floor(n_layers / 2) use concept tokens.
SitePolicy resolve_site_policy(const TaskTemplate& task, int n_layers);

struct FillOutcome {
  std::string fill;
  TokenId expected = 0;
  TokenId predicted = 0;
};

struct PerfectionResult {
  std::vector<std::string> retained;
  std::vector<FillOutcome> failures;
  double perfection_rate = 0.0;
};

// Keeps the fills whose greedy next token is the expected token. Throws
// TaskUnusable when fewer than two remain.
PerfectionResult filter_perfect(const Model& model, const TaskTemplate& task, unsigned threads = 1);

struct InterventionSites {
  std::vector<std::size_t> base;    // positions patched in the base run
  std::vector<std::size_t> source;  // positions read in the source run, same order
};

// Throws InvalidArgument when the slot token counts differ under the
// concept-token policy. `policy` must already be resolved.
InterventionSites intervention_positions(const TaskTemplate& task, SitePolicy policy, const Tokenizer& tokenizer,
                                         const std::string& base_fill, const std::string& source_fill);

struct InputPair {
  std::string base_fill;
  std::string source_fill;
  std::vector<TokenId> base_tokens;
  std::vector<TokenId> source_tokens;
  InterventionSites sites;
  TokenId base_expected = 0;
  TokenId source_expected = 0;
  // Distinct fills with the same expected output: a match is then also
  // what the unpatched base would do.
  bool collision = false;
};

// Draws n_pairs distinct ordered (base, source) pairs uniformly from the
// position-compatible ones. Throws InvalidArgument if there are fewer.
std::vector<InputPair> build_pairs(const Model& model, const TaskTemplate& task, const std::vector<std::string>& fills,
                                   std::size_t n_pairs, std::uint64_t seed, SitePolicy policy);

struct InterchangeResult {
  bool match = false;          // patched output == source's expected token
  TokenId predicted = 0;
  bool base_retained = false;  // patched output == base's expected token
};

// Runs the source, records the neurons at the source sites, and reruns the
// base with those values written at the base sites. Neurons in several
// layers are patched together in one pass.
InterchangeResult interchange(const Model& model, const InputPair& pair, const std::vector<NeuronRef>& neurons);

enum class RankingMethod { Random, Correlation, Confidence };
std::string to_string(RankingMethod method);
RankingMethod ranking_method_from_string(const std::string& name);

// Every MLP neuron of the band's layers, in (layer, index) order.
std::vector<NeuronRef> layer_pool(const Model& model, const LayerBand& band);

std::vector<NeuronRef> rank_random(const std::vector<NeuronRef>& pool, std::uint64_t seed);

// One tokenized input and which of its tokens belong to a concept instance.
struct InstanceInput {
  std::vector<TokenId> tokens;
  std::vector<bool> is_instance;
};

// Filled prompts with the slot tokens marked.
std::vector<InstanceInput> instance_inputs(const TaskTemplate& task, const Tokenizer& tokenizer,
                                           const std::vector<std::string>& fills);

// Point-biserial correlation of each pool neuron's per-token activation with
// the instance indicator, over all tokens of all inputs.
std::vector<std::optional<double>> correlation_scores(const Model& model, const std::vector<NeuronRef>& pool,
                                                      const std::vector<InstanceInput>& inputs, unsigned threads = 1);

// Descending score, undefined scores last, ties by (layer, index).
std::vector<NeuronRef> rank_by_scores(const std::vector<NeuronRef>& pool,
                                      const std::vector<std::optional<double>>& scores);

std::vector<NeuronRef> rank_correlation(const Model& model, const std::vector<NeuronRef>& pool,
                                        const std::vector<InstanceInput>& inputs, unsigned threads = 1);

// Pool neurons whose explanation mentions `concept_key` by descending score,
// then the rest; ties by (layer, index).
std::vector<NeuronRef> rank_confidence(const std::vector<NeuronRef>& pool, const std::vector<Explanation>& explanations,
                                       const std::string& concept_key);

struct IiaCurve {
  std::string task;
  RankingMethod method = RankingMethod::Random;
  std::uint64_t seed = 0;
  std::vector<double> ks;         // percentages, ascending
  std::vector<std::size_t> sizes; // neurons patched at each K
  std::vector<std::size_t> matches;
  std::vector<std::size_t> retained;  // base-retention diagnostic per K
  std::size_t n_pairs = 0;
  std::size_t collisions = 0;
  std::vector<NeuronRef> pool;

  double iia(std::size_t k_index) const {
    return static_cast<double>(matches[k_index]) / static_cast<double>(n_pairs);
  }
};

// ceil(K% of the pool), at least one neuron.
std::size_t neurons_at(double k_percent, std::size_t pool_size);

// IIA at each K using the ranking's top neurons. Source values are recorded
// once per pair for the whole ranking; pairs run in parallel and reduce in
// pair order.
IiaCurve iia_curve(const Model& model, const std::vector<NeuronRef>& ranking, const std::vector<InputPair>& pairs,
                   std::vector<double> ks, unsigned threads = 1);

// CSV with columns method,K,iia,n_pairs,seed.
std::string curves_to_csv(const std::vector<IiaCurve>& curves);

}  // namespace neuroaudit
