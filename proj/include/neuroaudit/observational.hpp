#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "neuroaudit/denotation.hpp"
#include "neuroaudit/model.hpp"

namespace neuroaudit {

// Affine read-out f(x) = w.x + b over a set of neurons.
struct ProbeModel {
  std::vector<NeuronRef> neurons;
  std::vector<double> weights;
  double bias = 0.0;

  static ProbeModel identity(const NeuronRef& neuron) { return {{neuron}, {1.0}, 0.0}; }
  double apply(std::span<const double> activations) const;
  void validate() const;

  nlohmann::json to_json() const;
  static ProbeModel from_json(const nlohmann::json& j);
};

struct PooledActivation {
  std::size_t sentence_id = 0;
  double value = 0.0;
  bool fired = false;
};

// Max over the span's tokens of a neuron's activation, or of the probe applied
// to the neuron vector at each token. `span` is a token range.
PooledActivation pooled_activation(const ForwardTrace& trace, const NeuronRef& neuron, const SpanAlignment& span,
                                   double threshold);
PooledActivation pooled_activation(const ForwardTrace& trace, const ProbeModel& probe, const SpanAlignment& span,
                                   double threshold);

// One evaluated (or excluded) test sentence.
struct Observation {
  std::size_t sentence_id = 0;
  double value = 0.0;
  bool fired = false;
  bool claimed_member = false;
  bool excluded = false;
};

struct Metrics {
  // Precision = |T_Q| / |claimed members|, recall = |T_Q| / |fired|.
  // Both follow the source definitions literally, which swaps the usual
  // names. Zero denominators leave a metric empty rather than 0.
  std::optional<double> precision;
  std::optional<double> recall;
  std::optional<double> f1;
  std::size_t evaluated = 0;
  std::size_t excluded = 0;
  std::size_t claimed_members = 0;
  std::size_t fired = 0;
  std::size_t true_positives = 0;
};

Metrics compute_metrics(const std::vector<Observation>& observations);

struct TokenValue {
  std::string token;
  double value = 0.0;
};

struct ErrorCase {
  std::size_t sentence_id = 0;
  std::string text;
  ByteRange span;
  double pooled = 0.0;
  std::vector<TokenValue> tokens;
};

struct ObservationReport {
  std::string explanation_id;
  std::string explanation;
  std::vector<NeuronRef> targets;
  std::optional<ProbeModel> probe;
  double threshold = 0.0;
  Metrics metrics;
  std::vector<std::size_t> true_positives;
  std::vector<ErrorCase> type1_errors;  // claimed members that did not fire
  std::vector<ErrorCase> type2_errors;  // fired non-members
  std::size_t expanded_spans = 0;       // spans widened to whole tokens
  std::vector<Observation> observations;

  nlohmann::json to_json() const;
  std::string to_markdown() const;
};

// Runs the evaluate split through the model. A probe is required when more
// than one neuron is targeted and optional for one. Throws InvalidArgument
// for a degenerate test set (no claimed member or no non-member).
ObservationReport evaluate_explanation(const Model& model, const std::vector<NeuronRef>& targets,
                                       const ProbeModel* probe, const TestSet& testset, double threshold = 0.0,
                                       unsigned threads = 1);

enum class ProbeThreshold {
  LogitZero,  // keep the logistic decision boundary
  MaxF1,      // re-fit the bias to maximize F1 on the training split
};

struct ProbeOptions {
  double l2 = 1e-3;
  int max_newton_steps = 100;
  bool identity = false;  // single neuron only: f(x) = x
  ProbeThreshold threshold_policy = ProbeThreshold::MaxF1;
  double threshold = 0.0;
};

// Balanced-class L2 logistic regression fitted by damped Newton steps.
// features[i] is one example's neuron vector.
ProbeModel fit_probe(const std::vector<NeuronRef>& neurons, const std::vector<std::vector<double>>& features,
                     const std::vector<bool>& labels, const ProbeOptions& options = {});

// Fits on the probe-train split's max-pooled neuron vectors vs claimed
// membership. Throws InvalidArgument if that split has only one class.
ProbeModel train_probe(const Model& model, const std::vector<NeuronRef>& targets, const TestSet& testset,
                       const ProbeOptions& options = {}, unsigned threads = 1);

using SimilarityScorer = std::function<double(const std::string&, const std::string&)>;

// Cosine similarity of lowercased alphanumeric word counts.
double tf_cosine(const std::string& a, const std::string& b);

// The target's own neuron first, then the most similar explanations in the
// same layer; ties go to the lower neuron index.
std::vector<NeuronRef> select_similar_neurons(const Explanation& target, const std::vector<Explanation>& corpus,
                                              std::size_t n, const SimilarityScorer& scorer = tf_cosine);

struct RandomPairingOptions {
  std::size_t n = 1;
  std::uint64_t seed = 0;
  bool use_probe = false;  // always on when n > 1
  double threshold = 0.0;
  ProbeOptions probe;
};

// Evaluates the target's test set against n neurons drawn uniformly without
// replacement from `layer`.
ObservationReport random_pairing_baseline(const Model& model, const Explanation& target, int layer,
                                          const TestSet& testset, const RandomPairingOptions& options,
                                          unsigned threads = 1);

// Pearson correlation over every token of every example, pooled. Empty when
// either side is constant.
std::optional<double> simulation_score(const std::vector<std::vector<double>>& simulated,
                                       const std::vector<std::vector<double>>& actual);

struct InsensitivityConfig {
  double frequency = 0.01;  // share of corpus examples containing the unseen member
  std::size_t trials = 1000;
  std::uint64_t seed = 0;
  std::size_t top_examples = 5;
  std::size_t random_examples = 5;
};

struct InsensitivityResult {
  InsensitivityConfig config;
  std::size_t perfect_trials = 0;
  double perfect_fraction = 0.0;
  double analytic = 0.0;  // (1 - frequency)^random_examples
  Metrics metrics;        // the same neuron under a balanced member test set

  nlohmann::json to_json() const;
  std::string to_markdown() const;
};

// A neuron that fires only on "2000" explained as "2000 and 2001": scores it
// the way a top-k plus random-sample simulation would, against a test set that
// samples both members equally.
InsensitivityResult demo_score_insensitivity(const InsensitivityConfig& config);

}  // namespace neuroaudit
