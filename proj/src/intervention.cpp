#include "neuroaudit/intervention.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "neuroaudit/error.hpp"
#include "neuroaudit/parallel.hpp"
#include "neuroaudit/random.hpp"
#include "neuroaudit/stats.hpp"

namespace neuroaudit {

using nlohmann::json;

namespace {

std::string policy_name(SitePolicy p) {
  switch (p) {
    case SitePolicy::ByLayer: return "by_layer";
    case SitePolicy::ConceptTokens: return "concept_tokens";
    case SitePolicy::LastToken: return "last_token";
  }
  return "by_layer";
}

SitePolicy policy_from_name(const std::string& s) {
  if (s == "by_layer") return SitePolicy::ByLayer;
  if (s == "concept_tokens" || s == "concept-tokens") return SitePolicy::ConceptTokens;
  if (s == "last_token" || s == "last-token") return SitePolicy::LastToken;
  throw FormatError("unknown site_policy \"" + s + "\"");
}

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

bool ref_less(const NeuronRef& a, const NeuronRef& b) { return a < b; }

}  // namespace

void TaskTemplate::validate() const {
  const std::string where = "task \"" + name + "\": ";
  if (name.empty()) throw InvalidArgument("task without a name");
  const auto slot = template_text.find(kSlot);
  if (slot == std::string::npos || template_text.find(kSlot, slot + 1) != std::string::npos)
    throw InvalidArgument(where + "template must contain exactly one {Y} slot");
  if (fills.size() < kMinFills)
    throw InvalidArgument(where + "needs at least " + std::to_string(kMinFills) + " fills, has " +
                          std::to_string(fills.size()));
  std::set<std::string> seen;
  for (const auto& f : fills) {
    if (f.empty()) throw InvalidArgument(where + "empty fill");
    if (!seen.insert(f).second) throw InvalidArgument(where + "duplicate fill \"" + f + "\"");
    const auto it = expected.find(f);
    if (it == expected.end() || it->second.empty())
      throw InvalidArgument(where + "no expected output for fill \"" + f + "\"");
  }
  if (layer_band.first < 0 || layer_band.last < layer_band.first)
    throw InvalidArgument(where + "layer band must satisfy 0 <= first <= last");
}

std::string TaskTemplate::prompt(const std::string& fill) const {
  std::string out = template_text;
  const auto slot = out.find(kSlot);
  if (slot == std::string::npos) throw InvalidArgument("task \"" + name + "\" has no {Y} slot");
  out.replace(slot, kSlot.size(), fill);
  return out;
}

ByteRange TaskTemplate::slot_range(const std::string& fill) const {
  const auto slot = template_text.find(kSlot);
  if (slot == std::string::npos) throw InvalidArgument("task \"" + name + "\" has no {Y} slot");
  return {slot, slot + fill.size()};
}

std::vector<TaskTemplate> parse_task_registry(const json& j) {
  const json& list = j.is_object() && j.contains("tasks") ? j.at("tasks") : j;
  if (!list.is_array()) throw FormatError("task registry must be an array of tasks or {\"tasks\": [...]}");
  std::vector<TaskTemplate> tasks;
  std::set<std::string> names;
  for (std::size_t i = 0; i < list.size(); ++i) {
    const json& t = list[i];
    TaskTemplate task;
    try {
      task.name = t.at("name").get<std::string>();
      task.template_text = t.at("template").get<std::string>();
      task.fills = t.at("fills").get<std::vector<std::string>>();
      task.expected = t.at("expected").get<std::map<std::string, std::string>>();
      task.site_policy = policy_from_name(t.value("site_policy", std::string("by_layer")));
      const auto band = t.at("layer_band").get<std::vector<int>>();
      if (band.size() != 2) throw FormatError("layer_band must be [first, last]");
      task.layer_band = {band[0], band[1]};
      task.concept_name = t.value("concept", std::string());
      task.truncate_expected = t.value("truncate_expected", false);
      task.validate();
    } catch (const InvalidArgument& e) {
      throw FormatError("task registry entry " + std::to_string(i) + ": " + e.what());
    } catch (const json::exception& e) {
      throw FormatError("task registry entry " + std::to_string(i) + ": " + e.what());
    } catch (const FormatError& e) {
      throw FormatError("task registry entry " + std::to_string(i) + ": " + e.what());
    }
    if (!names.insert(task.name).second) throw FormatError("duplicate task name \"" + task.name + "\"");
    tasks.push_back(std::move(task));
  }
  return tasks;
}

std::vector<TaskTemplate> load_task_registry(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open task registry " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return parse_task_registry(j);
}

json to_json(const TaskTemplate& task) {
  json j = {{"name", task.name},
            {"template", task.template_text},
            {"fills", task.fills},
            {"expected", task.expected},
            {"site_policy", policy_name(task.site_policy)},
            {"layer_band", {task.layer_band.first, task.layer_band.last}}};
  if (!task.concept_name.empty()) j["concept"] = task.concept_name;
  if (task.truncate_expected) j["truncate_expected"] = true;
  return j;
}

std::map<std::string, TokenId> resolve_expected(const TaskTemplate& task, const Tokenizer& tokenizer) {
  std::map<std::string, TokenId> out;
  for (const auto& fill : task.fills) {
    const std::string& text = task.expected.at(fill);
    const auto ids = tokenizer.encode(text).ids;
    if (ids.empty()) throw InvalidArgument("task \"" + task.name + "\": expected output for \"" + fill + "\" is empty");
    if (ids.size() > 1 && !task.truncate_expected)
      throw InvalidArgument("task \"" + task.name + "\": expected output \"" + text + "\" for fill \"" + fill +
                            "\" encodes to " + std::to_string(ids.size()) + " tokens");
    out[fill] = ids.front();
  }
  return out;
}

namespace {

SitePolicy resolve_policy(SitePolicy policy, const LayerBand& band, int n_layers) {
  if (policy != SitePolicy::ByLayer) return policy;
  return band.first < n_layers / 2 ? SitePolicy::ConceptTokens : SitePolicy::LastToken;
}

}  // namespace

SitePolicy resolve_site_policy(const TaskTemplate& task, int n_layers) {
  return resolve_policy(task.site_policy, task.layer_band, n_layers);
}

PerfectionResult filter_perfect(const Model& model, const TaskTemplate& task, unsigned threads) {
  task.validate();
  const auto expected = resolve_expected(task, model.tokenizer());
  std::vector<TokenId> predicted(task.fills.size());
  parallel_for(task.fills.size(), threads, [&](std::size_t i) {
    const auto ids = model.tokenizer().encode(task.prompt(task.fills[i])).ids;
    predicted[i] = greedy_next(model.forward(ids, {.last_logits_only = true}));
  });
  PerfectionResult result;
  for (std::size_t i = 0; i < task.fills.size(); ++i) {
    const TokenId want = expected.at(task.fills[i]);
    if (predicted[i] == want) result.retained.push_back(task.fills[i]);
    else result.failures.push_back({task.fills[i], want, predicted[i]});
  }
  result.perfection_rate = static_cast<double>(result.retained.size()) / static_cast<double>(task.fills.size());
  if (result.retained.size() < 2)
    throw TaskUnusable("task \"" + task.name + "\" is unusable: the model solves " +
                       std::to_string(result.retained.size()) + " of " + std::to_string(task.fills.size()) + " fills");
  return result;
}

namespace {

std::vector<std::size_t> slot_positions(const TaskTemplate& task, const Tokenizer& tokenizer, const std::string& fill) {
  const std::string text = task.prompt(fill);
  const auto enc = tokenizer.encode(text);
  const auto span = align_span(enc, text, task.slot_range(fill));
  std::vector<std::size_t> out(span.size());
  std::iota(out.begin(), out.end(), span.begin);
  return out;
}

}  // namespace

InterventionSites intervention_positions(const TaskTemplate& task, SitePolicy policy, const Tokenizer& tokenizer,
                                         const std::string& base_fill, const std::string& source_fill) {
  if (policy == SitePolicy::ByLayer) throw InvalidArgument("site policy must be resolved before locating positions");
  if (policy == SitePolicy::LastToken) {
    const auto nb = tokenizer.encode(task.prompt(base_fill)).ids.size();
    const auto ns = tokenizer.encode(task.prompt(source_fill)).ids.size();
    return {{nb - 1}, {ns - 1}};
  }
  InterventionSites sites{slot_positions(task, tokenizer, base_fill), slot_positions(task, tokenizer, source_fill)};
  if (sites.base.size() != sites.source.size())
    throw InvalidArgument("slot \"" + base_fill + "\" spans " + std::to_string(sites.base.size()) + " tokens but \"" +
                          source_fill + "\" spans " + std::to_string(sites.source.size()));
  return sites;
}

std::vector<InputPair> build_pairs(const Model& model, const TaskTemplate& task, const std::vector<std::string>& fills,
                                   std::size_t n_pairs, std::uint64_t seed, SitePolicy policy) {
  if (fills.size() < 2) throw InvalidArgument("pairs need at least two fills");
  if (n_pairs == 0) throw InvalidArgument("n_pairs must be positive");
  policy = resolve_policy(policy, task.layer_band, model.config().n_layers);
  const auto expected = resolve_expected(task, model.tokenizer());
  const Tokenizer& tok = model.tokenizer();

  std::vector<std::vector<TokenId>> tokens(fills.size());
  std::vector<std::size_t> slot_len(fills.size());
  for (std::size_t i = 0; i < fills.size(); ++i) {
    tokens[i] = tok.encode(task.prompt(fills[i])).ids;
    slot_len[i] = slot_positions(task, tok, fills[i]).size();
  }
  std::vector<std::pair<std::size_t, std::size_t>> candidates;
  for (std::size_t b = 0; b < fills.size(); ++b)
    for (std::size_t s = 0; s < fills.size(); ++s) {
      if (b == s || fills[b] == fills[s]) continue;
      if (policy == SitePolicy::ConceptTokens && slot_len[b] != slot_len[s]) continue;
      candidates.emplace_back(b, s);
    }
  if (candidates.size() < n_pairs)
    throw InvalidArgument("task \"" + task.name + "\": only " + std::to_string(candidates.size()) +
                          " compatible ordered pairs, " + std::to_string(n_pairs) + " requested");
  Rng rng(seed);
  // partial Fisher-Yates: the first n_pairs entries are a uniform sample
  for (std::size_t i = 0; i < n_pairs; ++i)
    std::swap(candidates[i], candidates[i + rng.below(candidates.size() - i)]);

  std::vector<InputPair> pairs;
  pairs.reserve(n_pairs);
  for (std::size_t i = 0; i < n_pairs; ++i) {
    const auto [b, s] = candidates[i];
    InputPair p;
    p.base_fill = fills[b];
    p.source_fill = fills[s];
    p.base_tokens = tokens[b];
    p.source_tokens = tokens[s];
    p.sites = intervention_positions(task, policy, tok, fills[b], fills[s]);
    p.base_expected = expected.at(fills[b]);
    p.source_expected = expected.at(fills[s]);
    p.collision = p.base_expected == p.source_expected;
    pairs.push_back(std::move(p));
  }
  return pairs;
}

namespace {

std::vector<Patch> source_patches(const ForwardTrace& source, const InputPair& pair,
                                  std::span<const NeuronRef> neurons) {
  std::vector<Patch> patches;
  patches.reserve(neurons.size() * pair.sites.base.size());
  for (const auto& n : neurons)
    for (std::size_t k = 0; k < pair.sites.base.size(); ++k)
      patches.push_back({n, pair.sites.base[k], source.activation(n, pair.sites.source[k])});
  return patches;
}

InterchangeResult patched_run(const Model& model, const InputPair& pair, const std::vector<Patch>& patches) {
  const auto trace = model.forward_with_patches(pair.base_tokens, patches, {.last_logits_only = true});
  InterchangeResult r;
  r.predicted = greedy_next(trace);
  r.match = r.predicted == pair.source_expected;
  r.base_retained = r.predicted == pair.base_expected;
  return r;
}

void check_pair(const InputPair& pair) {
  if (pair.sites.base.empty() || pair.sites.base.size() != pair.sites.source.size())
    throw InvalidArgument("pair " + pair.base_fill + "/" + pair.source_fill + " has misaligned intervention sites");
}

}  // namespace

InterchangeResult interchange(const Model& model, const InputPair& pair, const std::vector<NeuronRef>& neurons) {
  if (neurons.empty()) throw InvalidArgument("interchange needs at least one neuron");
  check_pair(pair);
  const auto source = model.forward(pair.source_tokens, {.record = neurons, .last_logits_only = true});
  return patched_run(model, pair, source_patches(source, pair, neurons));
}

std::string to_string(RankingMethod method) {
  switch (method) {
    case RankingMethod::Random: return "random";
    case RankingMethod::Correlation: return "correlation";
    case RankingMethod::Confidence: return "confidence";
  }
  return "random";
}

RankingMethod ranking_method_from_string(const std::string& name) {
  if (name == "random") return RankingMethod::Random;
  if (name == "correlation") return RankingMethod::Correlation;
  if (name == "confidence") return RankingMethod::Confidence;
  throw InvalidArgument("unknown ranking method \"" + name + "\"");
}

std::vector<NeuronRef> layer_pool(const Model& model, const LayerBand& band) {
  if (band.first < 0 || band.last < band.first || band.last >= model.config().n_layers)
    throw InvalidArgument("layer band [" + std::to_string(band.first) + ", " + std::to_string(band.last) +
                          "] outside the model's " + std::to_string(model.config().n_layers) + " layers");
  std::vector<NeuronRef> pool;
  for (int l = band.first; l <= band.last; ++l)
    for (int i = 0; i < model.config().d_mlp; ++i) pool.push_back({l, i});
  return pool;
}

std::vector<NeuronRef> rank_random(const std::vector<NeuronRef>& pool, std::uint64_t seed) {
  if (pool.empty()) throw InvalidArgument("empty neuron pool");
  std::vector<NeuronRef> out = pool;
  std::sort(out.begin(), out.end(), ref_less);
  Rng rng(seed);
  rng.shuffle(out);
  return out;
}

std::vector<InstanceInput> instance_inputs(const TaskTemplate& task, const Tokenizer& tokenizer,
                                           const std::vector<std::string>& fills) {
  std::vector<InstanceInput> out;
  for (const auto& fill : fills) {
    const std::string text = task.prompt(fill);
    const auto enc = tokenizer.encode(text);
    const auto span = align_span(enc, text, task.slot_range(fill));
    InstanceInput in{enc.ids, std::vector<bool>(enc.ids.size(), false)};
    for (std::size_t t = span.begin; t < span.end; ++t) in.is_instance[t] = true;
    out.push_back(std::move(in));
  }
  return out;
}

std::vector<std::optional<double>> correlation_scores(const Model& model, const std::vector<NeuronRef>& pool,
                                                      const std::vector<InstanceInput>& inputs, unsigned threads) {
  if (pool.empty()) throw InvalidArgument("empty neuron pool");
  std::vector<double> indicator;
  for (const auto& in : inputs) {
    if (in.tokens.size() != in.is_instance.size()) throw InvalidArgument("instance mask length differs from tokens");
    for (bool b : in.is_instance) indicator.push_back(b ? 1.0 : 0.0);
  }
  const auto positives = std::count(indicator.begin(), indicator.end(), 1.0);
  if (positives == 0 || positives == static_cast<std::ptrdiff_t>(indicator.size()))
    throw InvalidArgument("correlation ranking needs both instance and non-instance tokens");

  std::vector<ForwardTrace> traces(inputs.size());
  parallel_for(inputs.size(), threads, [&](std::size_t i) {
    traces[i] = model.forward(inputs[i].tokens, {.record = pool, .last_logits_only = true});
  });
  std::vector<std::optional<double>> scores(pool.size());
  std::vector<double> acts;
  for (std::size_t n = 0; n < pool.size(); ++n) {
    acts.clear();
    for (const auto& tr : traces) {
      const auto a = tr.activations(pool[n]);
      acts.insert(acts.end(), a.begin(), a.end());
    }
    scores[n] = stats::pearson(acts, indicator);
  }
  return scores;
}

std::vector<NeuronRef> rank_by_scores(const std::vector<NeuronRef>& pool,
                                      const std::vector<std::optional<double>>& scores) {
  if (pool.empty()) throw InvalidArgument("empty neuron pool");
  if (pool.size() != scores.size()) throw InvalidArgument("one score per pool neuron required");
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& sa = scores[a];
    const auto& sb = scores[b];
    if (sa.has_value() != sb.has_value()) return sa.has_value();
    if (sa && *sa != *sb) return *sa > *sb;
    return pool[a] < pool[b];
  });
  std::vector<NeuronRef> out;
  for (std::size_t i : order) out.push_back(pool[i]);
  return out;
}

std::vector<NeuronRef> rank_correlation(const Model& model, const std::vector<NeuronRef>& pool,
                                        const std::vector<InstanceInput>& inputs, unsigned threads) {
  return rank_by_scores(pool, correlation_scores(model, pool, inputs, threads));
}

std::vector<NeuronRef> rank_confidence(const std::vector<NeuronRef>& pool, const std::vector<Explanation>& explanations,
                                       const std::string& concept_key) {
  if (pool.empty()) throw InvalidArgument("empty neuron pool");
  const std::string key = lower(concept_key);
  std::map<NeuronRef, double> matched;
  for (const auto& e : explanations)
    if (!key.empty() && lower(e.text).find(key) != std::string::npos) matched[e.ref()] = e.score;
  std::vector<std::optional<double>> scores;
  for (const auto& n : pool) {
    const auto it = matched.find(n);
    scores.push_back(it == matched.end() ? std::nullopt : std::optional<double>(it->second));
  }
  return rank_by_scores(pool, scores);
}

std::size_t neurons_at(double k_percent, std::size_t pool_size) {
  if (!(k_percent > 0.0 && k_percent <= 100.0)) throw InvalidArgument("K must lie in (0, 100]");
  // round away float noise before the ceiling so 25% of 128 is exactly 32
  const double exact = std::round(k_percent * static_cast<double>(pool_size) * 1e6) / 1e8;
  return std::clamp<std::size_t>(static_cast<std::size_t>(std::ceil(exact)), 1, pool_size);
}

IiaCurve iia_curve(const Model& model, const std::vector<NeuronRef>& ranking, const std::vector<InputPair>& pairs,
                   std::vector<double> ks, unsigned threads) {
  if (ranking.empty()) throw InvalidArgument("empty ranking");
  if (pairs.empty()) throw InvalidArgument("IIA needs at least one pair");
  if (ks.empty()) throw InvalidArgument("no K values");
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
  for (const auto& n : ranking) model.check_neuron(n);
  for (const auto& p : pairs) check_pair(p);

  IiaCurve curve;
  curve.ks = ks;
  curve.n_pairs = pairs.size();
  curve.pool = ranking;
  std::sort(curve.pool.begin(), curve.pool.end(), ref_less);
  for (double k : ks) curve.sizes.push_back(neurons_at(k, ranking.size()));
  for (const auto& p : pairs) curve.collisions += p.collision;

  std::vector<std::vector<InterchangeResult>> results(pairs.size());
  parallel_for(pairs.size(), threads, [&](std::size_t i) {
    const InputPair& pair = pairs[i];
    const auto source = model.forward(pair.source_tokens, {.record = ranking, .last_logits_only = true});
    for (std::size_t size : curve.sizes) {
      const auto patches = source_patches(source, pair, std::span(ranking).first(size));
      results[i].push_back(patched_run(model, pair, patches));
    }
  });
  curve.matches.assign(ks.size(), 0);
  curve.retained.assign(ks.size(), 0);
  for (const auto& row : results)
    for (std::size_t k = 0; k < ks.size(); ++k) {
      curve.matches[k] += row[k].match;
      curve.retained[k] += row[k].base_retained;
    }
  return curve;
}

std::string curves_to_csv(const std::vector<IiaCurve>& curves) {
  std::ostringstream out;
  out << "method,K,iia,n_pairs,seed\n";
  out.precision(17);
  for (const auto& c : curves)
    for (std::size_t k = 0; k < c.ks.size(); ++k)
      out << to_string(c.method) << ',' << c.ks[k] << ',' << c.iia(k) << ',' << c.n_pairs << ',' << c.seed << '\n';
  return out.str();
}

}  // namespace neuroaudit
