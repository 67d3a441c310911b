#include "neuroaudit/observational.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "neuroaudit/error.hpp"
#include "neuroaudit/parallel.hpp"
#include "neuroaudit/random.hpp"
#include "neuroaudit/stats.hpp"

namespace neuroaudit {

using nlohmann::json;

double ProbeModel::apply(std::span<const double> activations) const {
  double v = bias;
  for (std::size_t i = 0; i < weights.size(); ++i) v += weights[i] * activations[i];
  return v;
}

void ProbeModel::validate() const {
  if (neurons.empty()) throw InvalidArgument("probe has no neurons");
  if (weights.size() != neurons.size()) throw InvalidArgument("probe weight count differs from its neuron count");
  for (double w : weights)
    if (!std::isfinite(w)) throw InvalidArgument("probe weights must be finite");
  if (!std::isfinite(bias)) throw InvalidArgument("probe bias must be finite");
}

json ProbeModel::to_json() const {
  json j;
  j["neurons"] = json::array();
  for (const auto& n : neurons) j["neurons"].push_back({{"layer", n.layer}, {"neuron", n.index}});
  j["weights"] = weights;
  j["bias"] = bias;
  return j;
}

ProbeModel ProbeModel::from_json(const json& j) {
  ProbeModel p;
  for (const auto& n : j.at("neurons")) p.neurons.push_back({n.at("layer").get<int>(), n.at("neuron").get<int>()});
  p.weights = j.at("weights").get<std::vector<double>>();
  p.bias = j.at("bias").get<double>();
  p.validate();
  return p;
}

namespace {

void check_span(const ForwardTrace& trace, const SpanAlignment& span) {
  if (span.begin >= span.end) throw InvalidArgument("cannot pool over an empty span");
  if (span.end > trace.seq_len()) throw InvalidArgument("span extends past the traced input");
}

std::vector<double> probe_values(const ForwardTrace& trace, const ProbeModel& probe) {
  std::vector<double> out(trace.seq_len());
  std::vector<double> x(probe.neurons.size());
  for (std::size_t t = 0; t < trace.seq_len(); ++t) {
    for (std::size_t k = 0; k < x.size(); ++k) x[k] = trace.activation(probe.neurons[k], t);
    out[t] = probe.apply(x);
  }
  return out;
}

std::optional<double> f1_of(std::optional<double> p, std::optional<double> r) {
  if (!p || !r) return std::nullopt;
  if (*p == 0.0 || *r == 0.0) return 0.0;
  return 2.0 * *p * *r / (*p + *r);
}

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json refs_json(const std::vector<NeuronRef>& refs) {
  json a = json::array();
  for (const auto& r : refs) a.push_back({{"layer", r.layer}, {"neuron", r.index}});
  return a;
}

std::string fmt(double v, int precision = 3) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(precision) << v;
  return ss.str();
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string("undefined"); }

std::string md_escape(std::string s) {
  std::string out;
  for (char c : s) {
    if (c == '|') out += "\\|";
    else if (c == '\n') out += ' ';
    else out += c;
  }
  return out;
}

}  // namespace

PooledActivation pooled_activation(const ForwardTrace& trace, const NeuronRef& neuron, const SpanAlignment& span,
                                   double threshold) {
  check_span(trace, span);
  const auto acts = trace.activations(neuron);
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t t = span.begin; t < span.end; ++t) best = std::max(best, static_cast<double>(acts[t]));
  return {0, best, best > threshold};
}

PooledActivation pooled_activation(const ForwardTrace& trace, const ProbeModel& probe, const SpanAlignment& span,
                                   double threshold) {
  check_span(trace, span);
  probe.validate();
  std::vector<double> x(probe.neurons.size());
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t t = span.begin; t < span.end; ++t) {
    for (std::size_t k = 0; k < x.size(); ++k) x[k] = trace.activation(probe.neurons[k], t);
    best = std::max(best, probe.apply(x));
  }
  return {0, best, best > threshold};
}

Metrics compute_metrics(const std::vector<Observation>& observations) {
  Metrics m;
  for (const auto& o : observations) {
    if (o.excluded) {
      ++m.excluded;
      continue;
    }
    ++m.evaluated;
    m.claimed_members += o.claimed_member;
    m.fired += o.fired;
    m.true_positives += o.claimed_member && o.fired;
  }
  if (m.claimed_members > 0)
    m.precision = static_cast<double>(m.true_positives) / static_cast<double>(m.claimed_members);
  if (m.fired > 0) m.recall = static_cast<double>(m.true_positives) / static_cast<double>(m.fired);
  m.f1 = f1_of(m.precision, m.recall);
  return m;
}

ObservationReport evaluate_explanation(const Model& model, const std::vector<NeuronRef>& targets,
                                       const ProbeModel* probe, const TestSet& testset, double threshold,
                                       unsigned threads) {
  if (targets.empty()) throw InvalidArgument("evaluate_explanation needs at least one neuron");
  for (const auto& t : targets) model.check_neuron(t);
  if (probe) {
    probe->validate();
    if (probe->neurons != targets) throw InvalidArgument("probe neurons differ from the evaluated neurons");
  } else if (targets.size() > 1) {
    throw InvalidArgument("evaluating several neurons requires a probe");
  }
  testset.validate();
  testset.validate_for_evaluation();
  std::size_t members = 0, non_members = 0;
  for (const auto& s : testset.sentences) {
    if (s.split != Split::Evaluate || s.excluded) continue;
    (s.claimed_member ? members : non_members) += 1;
  }
  if (members == 0 || non_members == 0)
    throw InvalidArgument("test set " + testset.explanation_id + " is degenerate: it needs claimed members and non-members");

  const auto ids = testset.indices(Split::Evaluate);
  struct Row {
    Observation obs;
    SpanAlignment span;
    std::vector<TokenValue> tokens;
  };
  std::vector<Row> rows(ids.size());
  parallel_for(ids.size(), threads, [&](std::size_t k) {
    const TestSentence& s = testset.sentences[ids[k]];
    Row& row = rows[k];
    row.obs.sentence_id = ids[k];
    row.obs.claimed_member = s.claimed_member;
    row.obs.excluded = s.excluded;
    if (s.excluded) return;
    const auto enc = model.tokenizer().encode(s.text);
    row.span = align_span(enc, s.text, s.span);
    const auto trace = model.forward(enc.ids, {.record = targets, .last_logits_only = true});
    const PooledActivation pooled =
        probe ? pooled_activation(trace, *probe, row.span, threshold) : pooled_activation(trace, targets[0], row.span, threshold);
    row.obs.value = pooled.value;
    row.obs.fired = pooled.fired;
    std::vector<double> per_token;
    if (probe) {
      per_token = probe_values(trace, *probe);
    } else {
      const auto acts = trace.activations(targets[0]);
      per_token.assign(acts.begin(), acts.end());
    }
    for (std::size_t t = 0; t < enc.ids.size(); ++t)
      row.tokens.push_back({model.tokenizer().token_bytes(enc.ids[t]), per_token[t]});
  });

  ObservationReport report;
  report.explanation_id = testset.explanation_id;
  report.explanation = testset.explanation;
  report.targets = targets;
  if (probe) report.probe = *probe;
  report.threshold = threshold;
  for (auto& row : rows) {
    report.observations.push_back(row.obs);
    if (row.obs.excluded) continue;
    report.expanded_spans += row.span.expanded_bytes > 0;
    const TestSentence& s = testset.sentences[row.obs.sentence_id];
    ErrorCase ec{row.obs.sentence_id, s.text, s.span, row.obs.value, std::move(row.tokens)};
    if (row.obs.claimed_member && row.obs.fired) report.true_positives.push_back(row.obs.sentence_id);
    else if (row.obs.claimed_member) report.type1_errors.push_back(std::move(ec));
    else if (row.obs.fired) report.type2_errors.push_back(std::move(ec));
  }
  report.metrics = compute_metrics(report.observations);
  return report;
}

json ObservationReport::to_json() const {
  auto cases = [](const std::vector<ErrorCase>& v) {
    json a = json::array();
    for (const auto& e : v) {
      json tokens = json::array();
      for (const auto& t : e.tokens) tokens.push_back({t.token, t.value});
      a.push_back({{"sentence_id", e.sentence_id},
                   {"text", e.text},
                   {"span", {e.span.begin, e.span.end}},
                   {"pooled", e.pooled},
                   {"tokens", tokens}});
    }
    return a;
  };
  json obs = json::array();
  for (const auto& o : observations)
    obs.push_back({{"sentence_id", o.sentence_id},
                   {"value", o.value},
                   {"fired", o.fired},
                   {"claimed_member", o.claimed_member},
                   {"excluded", o.excluded}});
  return {{"explanation_id", explanation_id},
          {"explanation", explanation},
          {"targets", refs_json(targets)},
          {"probe", probe ? probe->to_json() : json(nullptr)},
          {"threshold", threshold},
          {"precision", optional_number(metrics.precision)},
          {"recall", optional_number(metrics.recall)},
          {"f1", optional_number(metrics.f1)},
          {"counts",
           {{"evaluated", metrics.evaluated},
            {"excluded", metrics.excluded},
            {"claimed_members", metrics.claimed_members},
            {"fired", metrics.fired},
            {"true_positives", metrics.true_positives}}},
          {"true_positives", true_positives},
          {"type1_errors", cases(type1_errors)},
          {"type2_errors", cases(type2_errors)},
          {"expanded_spans", expanded_spans},
          {"observations", obs}};
}

std::string ObservationReport::to_markdown() const {
  std::ostringstream md;
  md << "## " << explanation_id << ": " << md_escape(explanation) << "\n\n";
  md << "Neurons:";
  for (const auto& t : targets) md << " " << to_string(t);
  md << (probe ? " (learned probe)" : "") << ", threshold " << fmt(threshold) << "\n\n";
  md << "| precision | recall | F1 | evaluated | claimed members | fired | true positives | excluded |\n";
  md << "|---|---|---|---|---|---|---|---|\n";
  md << "| " << fmt(metrics.precision) << " | " << fmt(metrics.recall) << " | " << fmt(metrics.f1) << " | "
     << metrics.evaluated << " | " << metrics.claimed_members << " | " << metrics.fired << " | "
     << metrics.true_positives << " | " << metrics.excluded << " |\n\n";
  auto table = [&](const char* title, const std::vector<ErrorCase>& cases) {
    md << "### " << title << " (" << cases.size() << ")\n\n";
    if (cases.empty()) {
      md << "none\n\n";
      return;
    }
    md << "| id | probe string | pooled | tokens (activation) |\n|---|---|---|---|\n";
    for (const auto& c : cases) {
      md << "| " << c.sentence_id << " | " << md_escape(c.text.substr(c.span.begin, c.span.size())) << " | "
         << fmt(c.pooled) << " | ";
      for (std::size_t i = 0; i < c.tokens.size(); ++i)
        md << (i ? " " : "") << "`" << md_escape(c.tokens[i].token) << "` (" << fmt(c.tokens[i].value, 2) << ")";
      md << " |\n";
    }
    md << "\n";
  };
  table("Type I errors: claimed members that did not fire", type1_errors);
  table("Type II errors: non-members that fired", type2_errors);
  return md.str();
}

namespace {

// Bias that maximizes F1 of (score + bias > threshold), keeping the weights.
// Ties go to the cut nearest the current decision boundary.
double calibrate_bias(const std::vector<double>& scores, const std::vector<bool>& labels, double current_bias,
                      double threshold) {
  std::vector<double> sorted = scores;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  std::vector<double> cuts = {sorted.front() - 1.0};
  for (std::size_t i = 0; i + 1 < sorted.size(); ++i) cuts.push_back(0.5 * (sorted[i] + sorted[i + 1]));
  const double current_cut = threshold - current_bias;
  double best_f1 = -1.0, best_cut = current_cut, best_dist = std::numeric_limits<double>::infinity();
  for (double cut : cuts) {
    std::vector<Observation> obs(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
      obs[i].fired = scores[i] > cut;
      obs[i].claimed_member = labels[i];
    }
    const double f1 = compute_metrics(obs).f1.value_or(-1.0);
    const double dist = std::abs(cut - current_cut);
    if (f1 > best_f1 || (f1 == best_f1 && dist < best_dist)) {
      best_f1 = f1;
      best_cut = cut;
      best_dist = dist;
    }
  }
  return threshold - best_cut;
}

void check_both_classes(const std::vector<bool>& labels) {
  const auto pos = std::count(labels.begin(), labels.end(), true);
  if (pos == 0 || pos == static_cast<std::ptrdiff_t>(labels.size()))
    throw InvalidArgument("probe training split has a single class");
}

ProbeModel fit_logistic(const std::vector<NeuronRef>& neurons, const std::vector<std::vector<double>>& features,
                        const std::vector<bool>& labels, const ProbeOptions& options) {
  const std::size_t n = features.size(), d = neurons.size();
  Eigen::MatrixXd X(n, d + 1);
  Eigen::VectorXd y(n), c(n);
  const double n_pos = static_cast<double>(std::count(labels.begin(), labels.end(), true));
  const double n_neg = static_cast<double>(n) - n_pos;
  for (std::size_t i = 0; i < n; ++i) {
    if (features[i].size() != d) throw InvalidArgument("probe feature width differs from the neuron count");
    for (std::size_t k = 0; k < d; ++k) X(i, k) = features[i][k];
    X(i, d) = 1.0;
    y(i) = labels[i] ? 1.0 : 0.0;
    c(i) = static_cast<double>(n) / (2.0 * (labels[i] ? n_pos : n_neg));
  }
  Eigen::VectorXd reg = Eigen::VectorXd::Constant(d + 1, options.l2);
  reg(d) = 0.0;

  auto objective = [&](const Eigen::VectorXd& theta) {
    const Eigen::VectorXd z = X * theta;
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double zi = z(i);
      const double softplus = zi > 0 ? zi + std::log1p(std::exp(-zi)) : std::log1p(std::exp(zi));
      loss += c(i) * (softplus - y(i) * zi);
    }
    return loss / static_cast<double>(n) + 0.5 * theta.cwiseProduct(reg).dot(theta);
  };

  Eigen::VectorXd theta = Eigen::VectorXd::Zero(d + 1);
  double current = objective(theta);
  for (int step = 0; step < options.max_newton_steps; ++step) {
    const Eigen::VectorXd z = X * theta;
    Eigen::VectorXd p(n), w(n);
    for (std::size_t i = 0; i < n; ++i) {
      p(i) = 1.0 / (1.0 + std::exp(-z(i)));
      w(i) = c(i) * p(i) * (1.0 - p(i));
    }
    const Eigen::VectorXd grad =
        X.transpose() * (c.cwiseProduct(p - y)) / static_cast<double>(n) + reg.cwiseProduct(theta);
    if (grad.lpNorm<Eigen::Infinity>() < 1e-10) break;
    Eigen::MatrixXd H = X.transpose() * w.asDiagonal() * X / static_cast<double>(n);
    H.diagonal() += reg + Eigen::VectorXd::Constant(d + 1, 1e-9);
    const Eigen::VectorXd delta = H.ldlt().solve(-grad);
    double t = 1.0;
    bool improved = false;
    for (int halvings = 0; halvings < 40; ++halvings, t *= 0.5) {
      const Eigen::VectorXd candidate = theta + t * delta;
      const double value = objective(candidate);
      if (value <= current + 1e-4 * t * grad.dot(delta)) {
        theta = candidate;
        current = value;
        improved = true;
        break;
      }
    }
    if (!improved) break;
  }

  ProbeModel probe;
  probe.neurons = neurons;
  probe.weights.assign(theta.data(), theta.data() + d);
  probe.bias = theta(d);
  return probe;
}

}  // namespace

ProbeModel fit_probe(const std::vector<NeuronRef>& neurons, const std::vector<std::vector<double>>& features,
                     const std::vector<bool>& labels, const ProbeOptions& options) {
  if (neurons.empty()) throw InvalidArgument("probe needs at least one neuron");
  if (features.size() != labels.size()) throw InvalidArgument("probe features and labels differ in length");
  if (options.identity) {
    if (neurons.size() != 1) throw InvalidArgument("the identity probe applies to a single neuron");
    return ProbeModel::identity(neurons[0]);
  }
  check_both_classes(labels);
  ProbeModel probe = fit_logistic(neurons, features, labels, options);
  if (options.threshold_policy == ProbeThreshold::MaxF1) {
    std::vector<double> scores;
    for (const auto& f : features) scores.push_back(probe.apply(f) - probe.bias);
    probe.bias = calibrate_bias(scores, labels, probe.bias, options.threshold);
  }
  probe.validate();
  return probe;
}

ProbeModel train_probe(const Model& model, const std::vector<NeuronRef>& targets, const TestSet& testset,
                       const ProbeOptions& options, unsigned threads) {
  if (targets.empty()) throw InvalidArgument("probe needs at least one neuron");
  for (const auto& t : targets) model.check_neuron(t);
  if (options.identity) return fit_probe(targets, {}, {}, options);
  std::vector<std::size_t> ids;
  for (std::size_t i : testset.indices(Split::ProbeTrain))
    if (!testset.sentences[i].excluded) ids.push_back(i);
  std::vector<std::vector<double>> pooled(ids.size());
  std::vector<std::vector<std::vector<double>>> per_token(ids.size());
  std::vector<bool> labels(ids.size());
  for (std::size_t k = 0; k < ids.size(); ++k) labels[k] = testset.sentences[ids[k]].claimed_member;
  check_both_classes(labels);

  parallel_for(ids.size(), threads, [&](std::size_t k) {
    const TestSentence& s = testset.sentences[ids[k]];
    const auto enc = model.tokenizer().encode(s.text);
    const auto span = align_span(enc, s.text, s.span);
    const auto trace = model.forward(enc.ids, {.record = targets, .last_logits_only = true});
    pooled[k].assign(targets.size(), -std::numeric_limits<double>::infinity());
    for (std::size_t t = span.begin; t < span.end; ++t) {
      std::vector<double> x(targets.size());
      for (std::size_t n = 0; n < targets.size(); ++n) {
        x[n] = trace.activation(targets[n], t);
        pooled[k][n] = std::max(pooled[k][n], x[n]);
      }
      per_token[k].push_back(std::move(x));
    }
  });

  ProbeOptions logistic = options;
  logistic.threshold_policy = ProbeThreshold::LogitZero;
  ProbeModel probe = fit_probe(targets, pooled, labels, logistic);
  if (options.threshold_policy == ProbeThreshold::MaxF1) {
    // calibrate on the same per-token-then-max scores evaluation uses
    std::vector<double> scores(ids.size());
    for (std::size_t k = 0; k < ids.size(); ++k) {
      double best = -std::numeric_limits<double>::infinity();
      for (const auto& x : per_token[k]) best = std::max(best, probe.apply(x) - probe.bias);
      scores[k] = best;
    }
    probe.bias = calibrate_bias(scores, labels, probe.bias, options.threshold);
  }
  probe.validate();
  return probe;
}

double tf_cosine(const std::string& a, const std::string& b) {
  auto counts = [](const std::string& s) {
    std::map<std::string, double> c;
    std::string word;
    for (char ch : s + ' ') {
      if (std::isalnum(static_cast<unsigned char>(ch))) {
        word += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
      } else if (!word.empty()) {
        c[word] += 1.0;
        word.clear();
      }
    }
    return c;
  };
  const auto ca = counts(a), cb = counts(b);
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (const auto& [w, v] : ca) {
    na += v * v;
    const auto it = cb.find(w);
    if (it != cb.end()) dot += v * it->second;
  }
  for (const auto& [w, v] : cb) nb += v * v;
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / std::sqrt(na * nb);
}

std::vector<NeuronRef> select_similar_neurons(const Explanation& target, const std::vector<Explanation>& corpus,
                                              std::size_t n, const SimilarityScorer& scorer) {
  if (n == 0) throw InvalidArgument("select at least one neuron");
  struct Scored {
    double score;
    int neuron;
  };
  std::vector<Scored> others;
  bool layer_covered = false;
  for (const auto& e : corpus) {
    if (e.layer != target.layer) continue;
    layer_covered = true;
    if (e.neuron == target.neuron) continue;
    others.push_back({scorer(target.text, e.text), e.neuron});
  }
  if (!layer_covered) throw InvalidArgument("explanation corpus does not cover layer " + std::to_string(target.layer));
  if (n > others.size() + 1)
    throw InvalidArgument("asked for " + std::to_string(n) + " neurons but layer " + std::to_string(target.layer) +
                          " has " + std::to_string(others.size() + 1) + " explained neurons");
  std::sort(others.begin(), others.end(), [](const Scored& a, const Scored& b) {
    return a.score > b.score || (a.score == b.score && a.neuron < b.neuron);
  });
  std::vector<NeuronRef> out = {target.ref()};
  for (std::size_t i = 0; i + 1 < n; ++i) out.push_back({target.layer, others[i].neuron});
  return out;
}

ObservationReport random_pairing_baseline(const Model& model, const Explanation& target, int layer,
                                          const TestSet& testset, const RandomPairingOptions& options,
                                          unsigned threads) {
  if (layer < 0 || layer >= model.config().n_layers) throw InvalidArgument("layer out of range");
  if (options.n == 0 || options.n > static_cast<std::size_t>(model.config().d_mlp))
    throw InvalidArgument("layer " + std::to_string(layer) + " has fewer than " + std::to_string(options.n) +
                          " neurons");
  std::vector<int> indices(model.config().d_mlp);
  std::iota(indices.begin(), indices.end(), 0);
  Rng rng(options.seed);
  rng.shuffle(indices);
  std::vector<NeuronRef> neurons;
  for (std::size_t i = 0; i < options.n; ++i) neurons.push_back({layer, indices[i]});

  ObservationReport report;
  if (options.n > 1 || options.use_probe) {
    const ProbeModel probe = train_probe(model, neurons, testset, options.probe, threads);
    report = evaluate_explanation(model, neurons, &probe, testset, options.threshold, threads);
  } else {
    report = evaluate_explanation(model, neurons, nullptr, testset, options.threshold, threads);
  }
  report.explanation_id = target.id() + "/random";
  return report;
}

std::optional<double> simulation_score(const std::vector<std::vector<double>>& simulated,
                                       const std::vector<std::vector<double>>& actual) {
  if (simulated.size() != actual.size()) throw InvalidArgument("simulated and actual example counts differ");
  std::vector<double> s, a;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    if (simulated[i].size() != actual[i].size())
      throw InvalidArgument("example " + std::to_string(i) + " has mismatched token counts");
    s.insert(s.end(), simulated[i].begin(), simulated[i].end());
    a.insert(a.end(), actual[i].begin(), actual[i].end());
  }
  if (a.size() < 2) throw InvalidArgument("simulation score needs at least two tokens");
  return stats::pearson(s, a);
}

namespace {

const std::vector<std::string> kFiller = {"the", "city", "was", "quiet", "in", "that", "we", "moved", "a",
                                          "new", "house", "and", "people", "said", "it", "rained"};

// One sampled example: filler tokens with an optional planted year token.
std::vector<std::string> sample_example(Rng& rng, const char* planted) {
  std::vector<std::string> tokens(8);
  for (auto& t : tokens) t = kFiller[rng.below(kFiller.size())];
  if (planted) tokens[rng.below(tokens.size())] = planted;
  return tokens;
}

}  // namespace

InsensitivityResult demo_score_insensitivity(const InsensitivityConfig& config) {
  if (!(config.frequency >= 0.0 && config.frequency <= 1.0)) throw InvalidArgument("frequency must lie in [0, 1]");
  if (config.trials == 0 || config.top_examples == 0) throw InvalidArgument("need trials and top examples");
  const auto actual_of = [](const std::string& t) { return t == "2000" ? 1.0 : 0.0; };
  const auto simulated_of = [](const std::string& t) { return (t == "2000" || t == "2001") ? 1.0 : 0.0; };

  InsensitivityResult result;
  result.config = config;
  Rng rng(config.seed);
  for (std::size_t trial = 0; trial < config.trials; ++trial) {
    std::vector<std::vector<double>> simulated, actual;
    auto add = [&](const std::vector<std::string>& example) {
      simulated.emplace_back();
      actual.emplace_back();
      for (const auto& t : example) {
        simulated.back().push_back(simulated_of(t));
        actual.back().push_back(actual_of(t));
      }
    };
    for (std::size_t i = 0; i < config.top_examples; ++i) add(sample_example(rng, "2000"));
    for (std::size_t i = 0; i < config.random_examples; ++i)
      add(sample_example(rng, rng.bernoulli(config.frequency) ? "2001" : nullptr));
    const auto score = simulation_score(simulated, actual);
    if (score && *score >= 1.0 - 1e-9) ++result.perfect_trials;
  }
  result.perfect_fraction = static_cast<double>(result.perfect_trials) / static_cast<double>(config.trials);
  result.analytic = std::pow(1.0 - config.frequency, static_cast<double>(config.random_examples));

  // Test set drawn from the denotation: both members equally, plus non-members.
  std::vector<Observation> obs;
  const std::vector<std::pair<std::string, bool>> probes = {{"2000", true}, {"2001", true}, {"city", false}};
  std::size_t id = 0;
  for (const auto& [q, member] : probes)
    for (int k = 0; k < 10; ++k) {
      Observation o;
      o.sentence_id = id++;
      o.value = actual_of(q);
      o.fired = o.value > 0.0;
      o.claimed_member = member;
      obs.push_back(o);
    }
  result.metrics = compute_metrics(obs);
  return result;
}

json InsensitivityResult::to_json() const {
  return {{"frequency", config.frequency},
          {"trials", config.trials},
          {"seed", config.seed},
          {"top_examples", config.top_examples},
          {"random_examples", config.random_examples},
          {"perfect_trials", perfect_trials},
          {"perfect_fraction", perfect_fraction},
          {"analytic_perfect_probability", analytic},
          {"precision", optional_number(metrics.precision)},
          {"recall", optional_number(metrics.recall)},
          {"f1", optional_number(metrics.f1)}};
}

std::string InsensitivityResult::to_markdown() const {
  std::ostringstream md;
  md << "## Simulation-score insensitivity\n\n"
     << "Neuron fires only on \"2000\"; explanation claims {2000, 2001}. Each trial scores "
     << config.top_examples << " top-activating and " << config.random_examples
     << " random examples; \"2001\" occurs in " << fmt(100.0 * config.frequency, 2) << "% of corpus examples.\n\n"
     << "| trials | perfect-score fraction | analytic (1-n)^" << config.random_examples
     << " | precision | recall |\n|---|---|---|---|---|\n"
     << "| " << config.trials << " | " << fmt(perfect_fraction) << " | " << fmt(analytic) << " | "
     << fmt(metrics.precision) << " | " << fmt(metrics.recall) << " |\n";
  return md.str();
}

}  // namespace neuroaudit
