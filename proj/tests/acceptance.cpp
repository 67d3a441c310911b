// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "neuroaudit/denotation.hpp"
#include "neuroaudit/intervention.hpp"
#include "neuroaudit/model.hpp"
#include "neuroaudit/observational.hpp"
#include "neuroaudit/report.hpp"

using namespace neuroaudit;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Tolerances and budgets.
constexpr int kOracleSets = 1000;
constexpr std::size_t kOracleMaxSentences = 20;
constexpr double kOracleBudget = 30.0;

constexpr double kDemoFrequency = 0.01;
constexpr std::size_t kDemoTrials = 1000;
constexpr std::uint64_t kDemoSeed = 7;
constexpr double kDemoLow = 0.921, kDemoHigh = 0.981;
constexpr double kDemoBudget = 60.0;

constexpr int kIdentityTrials = 100;
constexpr float kIdentityDrift = 1e-6f;
constexpr float kAttentionSum = 1e-5f;
constexpr double kEngineBudget = 60.0;

constexpr std::size_t kPairs = 256;
constexpr double kMinIia = 0.9;
constexpr double kWorkedBudget = 300.0;

constexpr int kOrderingSeeds = 20;
constexpr int kOrderingNeeded = 18;  // 90% of seeds
const std::vector<double> kOrderingKs = {1, 6, 12, 25};

unsigned threads() { return std::max(1u, std::thread::hardware_concurrency()); }

const fs::path kToy = fs::path(NEUROAUDIT_FIXTURES) / "toy";

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void criterion(const std::string& name, double budget_seconds, const std::function<Outcome()>& body) {
  const auto start = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (budget_seconds > 0 && secs > budget_seconds) {
    o.pass = false;
    o.detail += "; over time budget";
  }
  if (!o.pass) ++failures;
  char timing[64];
  std::snprintf(timing, sizeof timing, "%.1fs", secs);
  std::cout << (o.pass ? "PASS" : "FAIL") << "  " << name << "  (" << o.detail << ", " << timing << ")" << std::endl;
}

const Model& toy() {
  static const Model model = load_model(kToy / "model.bin", ModelConfig::load(kToy / "config.json"),
                                        kToy / "vocab.json", kToy / "merges.txt");
  return model;
}

int planted(const char* name) {
  std::ifstream in(kToy / "mediators.json");
  return json::parse(in).at(name).get<int>();
}

std::string fmt(double v) {
  std::ostringstream s;
  s << v;
  return s.str();
}

// Brute-force counterpart of evaluate_explanation: overlap tokens by hand,
// max, compare, then count with sets.
Outcome metric_oracle() {
  const Model& m = toy();
  const std::vector<std::string> words = {"Monday", "Thursday", "Saturday", "red", "blue", "orange", "2000",
                                          "2001",   "2017",     "park",     "city", "doorknob", "music"};
  const std::vector<std::string> frames = {"It was {} again", "{} is here", "I like the {} one", "We saw {}"};
  std::vector<int> neurons = {planted("days"), planted("colors"), planted("days_or_colors"), planted("year_2000"),
                              planted("thursday"), planted("weekend")};
  std::mt19937_64 rng(2024);
  for (int i = 0; i < 10; ++i) neurons.push_back(static_cast<int>(rng() % m.config().d_mlp));

  int mismatches = 0;
  for (int trial = 0; trial < kOracleSets; ++trial) {
    const NeuronRef target{0, neurons[rng() % neurons.size()]};
    TestSet ts;
    ts.explanation_id = "L0N" + std::to_string(target.index);
    const std::size_t n = 2 + rng() % (kOracleMaxSentences - 1);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& w = words[rng() % words.size()];
      std::string text = frames[rng() % frames.size()];
      const std::size_t at = text.find("{}");
      text.replace(at, 2, w);
      TestSentence s;
      s.text = text + (i ? " " + std::to_string(i) : "");  // keep texts distinct
      s.span = {at, at + w.size()};
      s.claimed_member = rng() % 2;
      s.split = rng() % 6 == 0 ? Split::ProbeTrain : Split::Evaluate;
      s.excluded = rng() % 8 == 0;
      ts.sentences.push_back(s);
    }
    // guarantee one usable member and one usable non-member
    ts.sentences[0].claimed_member = true;
    ts.sentences[1].claimed_member = false;
    for (std::size_t i : {0, 1}) ts.sentences[i].split = Split::Evaluate, ts.sentences[i].excluded = false;
    for (auto& s : ts.sentences) s.origin = s.claimed_member ? ProbeOrigin::Type1 : ProbeOrigin::Type2;

    const auto report = evaluate_explanation(m, {target}, nullptr, ts, 0.0, 1 + trial % 3);

    std::set<std::size_t> claimed, fired;
    const std::vector<NeuronRef> rec = {target};
    for (std::size_t i = 0; i < ts.sentences.size(); ++i) {
      const auto& s = ts.sentences[i];
      if (s.split != Split::Evaluate || s.excluded) continue;
      const auto enc = m.tokenizer().encode(s.text);
      const auto trace = m.forward(enc.ids, {.record = rec});
      float best = -INFINITY;
      for (std::size_t t = 0; t < enc.ids.size(); ++t)
        if (enc.offsets[t].begin < s.span.end && enc.offsets[t].end > s.span.begin)
          best = std::max(best, trace.activation(target, t));
      if (s.claimed_member) claimed.insert(i);
      if (best > 0.0f) fired.insert(i);
    }
    std::vector<std::size_t> tp;
    std::set_intersection(claimed.begin(), claimed.end(), fired.begin(), fired.end(), std::back_inserter(tp));
    const double p = double(tp.size()) / double(claimed.size());
    const std::optional<double> r =
        fired.empty() ? std::nullopt : std::optional<double>(double(tp.size()) / double(fired.size()));
    std::optional<double> f1;
    if (r) f1 = (p == 0.0 || *r == 0.0) ? 0.0 : 2 * p * *r / (p + *r);
    const auto& got = report.metrics;
    const bool same = got.precision == std::optional<double>(p) && got.recall == r && got.f1 == f1 &&
                      got.true_positives == tp.size() && got.claimed_members == claimed.size() &&
                      got.fired == fired.size();
    mismatches += !same;
  }
  return {mismatches == 0, std::to_string(kOracleSets - mismatches) + "/" + std::to_string(kOracleSets) +
                               " test sets match exactly"};
}

Outcome insensitivity() {
  const auto r = demo_score_insensitivity({.frequency = kDemoFrequency, .trials = kDemoTrials, .seed = kDemoSeed});
  const bool in_band = r.perfect_fraction >= kDemoLow && r.perfect_fraction <= kDemoHigh;
  const bool precision_half = r.metrics.precision && *r.metrics.precision == 0.5;
  return {in_band && precision_half, "perfect fraction " + fmt(r.perfect_fraction) + " (analytic " + fmt(r.analytic) +
                                         "), precision " + (r.metrics.precision ? fmt(*r.metrics.precision) : "undefined")};
}

Outcome engine_invariants() {
  const Model& m = toy();
  const std::vector<std::string> prompts = {"The year after 2023 is", "It was Monday again", "The sky is blue",
                                            "We saw red and blue on Thursday", "The year after 2000 is"};
  std::mt19937_64 rng(11);
  float worst_drift = 0.0f;
  for (int trial = 0; trial < kIdentityTrials; ++trial) {
    const auto ids = m.tokenizer().encode(prompts[rng() % prompts.size()]).ids;
    const NeuronRef n{static_cast<int>(rng() % m.config().n_layers), static_cast<int>(rng() % m.config().d_mlp)};
    const std::size_t pos = rng() % ids.size();
    const std::vector<NeuronRef> rec = {n};
    const auto clean = m.forward(ids, {.record = rec});
    const std::vector<Patch> patch = {{n, pos, clean.activation(n, pos)}};
    const auto patched = m.forward_with_patches(ids, patch);
    for (std::size_t t = 0; t < ids.size(); ++t) {
      const auto a = clean.logits_at(t), b = patched.logits_at(t);
      for (std::size_t v = 0; v < a.size(); ++v) worst_drift = std::max(worst_drift, std::abs(a[v] - b[v]));
    }
  }

  float worst_sum = 0.0f, leak = 0.0f;
  bool deterministic = true;
  float prefix_change = 0.0f;
  for (const auto& prompt : prompts) {
    const auto ids = m.tokenizer().encode(prompt).ids;
    const auto trace = m.forward(ids, {.record_attention = true});
    const std::size_t T = ids.size();
    for (int l = 0; l < m.config().n_layers; ++l)
      for (int h = 0; h < m.config().n_heads; ++h) {
        const auto a = trace.attention(l, h);
        for (std::size_t i = 0; i < T; ++i) {
          float sum = 0.0f;
          for (std::size_t j = 0; j < T; ++j) {
            sum += a[i * T + j];
            if (j > i) leak = std::max(leak, std::abs(a[i * T + j]));
          }
          worst_sum = std::max(worst_sum, std::abs(sum - 1.0f));
        }
      }
    // changing the last token must leave every earlier position untouched
    auto changed = ids;
    changed.back() = (changed.back() + 1) % m.config().vocab_size;
    const auto other = m.forward(changed);
    for (std::size_t t = 0; t + 1 < T; ++t) {
      const auto a = trace.logits_at(t), b = other.logits_at(t);
      for (std::size_t v = 0; v < a.size(); ++v) prefix_change = std::max(prefix_change, std::abs(a[v] - b[v]));
    }
    const auto again = m.forward(ids, {.record_attention = true});
    for (std::size_t t = 0; t < T; ++t) {
      const auto a = trace.logits_at(t), b = again.logits_at(t);
      deterministic = deterministic && std::equal(a.begin(), a.end(), b.begin());
    }
  }
  const bool ok = worst_drift < kIdentityDrift && worst_sum < kAttentionSum && leak == 0.0f &&
                  prefix_change == 0.0f && deterministic;
  return {ok, "identity drift " + fmt(worst_drift) + ", attention row error " + fmt(worst_sum) + ", future weight " +
                  fmt(leak) + ", prefix change " + fmt(prefix_change) + ", bitwise repeat " +
                  (deterministic ? "yes" : "no")};
}

const TaskTemplate& successor() {
  static const auto tasks = load_task_registry(kToy / "tasks.json");
  return tasks.at(0);
}

Outcome worked_example() {
  const Model& m = toy();
  const auto& task = successor();
  const auto policy = resolve_site_policy(task, m.config().n_layers);
  const auto pool = layer_pool(m, task.layer_band);
  const auto two = build_pairs(m, task, {"2023", "2000"}, 2, 0, policy);
  const auto& pair = two[0].base_fill == "2023" ? two[0] : two[1];
  const auto single = interchange(m, pair, pool);
  const std::string answer = m.tokenizer().decode({single.predicted});

  const auto fills = filter_perfect(m, task).retained;
  const auto pairs = build_pairs(m, task, fills, kPairs, 0, policy);
  const auto curve = iia_curve(m, pool, pairs, {100}, threads());
  const double iia = curve.iia(0);
  return {answer == " 2001" && iia >= kMinIia,
          "base 2023 patched from 2000 outputs \"" + answer + "\", IIA " + fmt(iia) + " over " +
              std::to_string(pairs.size()) + " pairs"};
}

struct Rankings {
  std::vector<InputPair> pairs;
  std::vector<NeuronRef> random, correlation, confidence;
};

Rankings rankings_for_seed(std::uint64_t seed) {
  const Model& m = toy();
  const auto& task = successor();
  static const auto fills = filter_perfect(m, task).retained;
  static const auto pool = layer_pool(m, task.layer_band);
  static const auto correlation = rank_correlation(m, pool, instance_inputs(task, m.tokenizer(), fills), threads());
  static const auto confidence =
      rank_confidence(pool, load_explanations(kToy / "layer0_explanations.jsonl"), task.concept_key());
  Rankings r;
  r.pairs = build_pairs(m, task, fills, kPairs, seed, resolve_site_policy(task, m.config().n_layers));
  r.random = rank_random(pool, seed);
  r.correlation = correlation;
  r.confidence = confidence;
  return r;
}

Outcome baseline_ordering() {
  int good = 0;
  for (int seed = 0; seed < kOrderingSeeds; ++seed) {
    const auto r = rankings_for_seed(seed);
    const auto rnd = iia_curve(toy(), r.random, r.pairs, kOrderingKs, threads());
    const auto cor = iia_curve(toy(), r.correlation, r.pairs, kOrderingKs, threads());
    bool all = true;
    for (std::size_t k = 0; k < kOrderingKs.size(); ++k) all = all && cor.matches[k] >= rnd.matches[k];
    good += all;
  }
  return {good >= kOrderingNeeded, "correlation >= random at K in {1,6,12,25} in " + std::to_string(good) + "/" +
                                       std::to_string(kOrderingSeeds) + " seeds"};
}

Outcome full_pool_equality() {
  std::size_t checked = 0;
  bool equal = true;
  for (std::uint64_t seed : {0, 1, 2}) {
    const auto r = rankings_for_seed(seed);
    const auto a = iia_curve(toy(), r.random, r.pairs, {100}, threads());
    const auto b = iia_curve(toy(), r.correlation, r.pairs, {100}, threads());
    const auto c = iia_curve(toy(), r.confidence, r.pairs, {100}, threads());
    equal = equal && a.matches == b.matches && b.matches == c.matches;
    checked += 1;
  }
  return {equal, std::string(equal ? "identical" : "different") + " IIA@100 for random, correlation and confidence over " +
                     std::to_string(checked) + " seeds"};
}

Outcome observe_path() {
  const fs::path out = fs::temp_directory_path() / ("neuroaudit-acceptance-" + std::to_string(std::random_device{}()));
  const int rc = run_verb(Verb::Observe, kToy / "audit.json", {.out = out});
  Outcome o;
  if (rc != 0) {
    o = {false, "observe exited " + std::to_string(rc)};
  } else {
    std::ifstream in(out / "observe" / "summary.json");
    const json summary = json::parse(in);
    std::size_t complete = 0;
    for (const auto& e : summary.at("explanations")) {
      std::ifstream per_in(out / "observe" / (e.at("id").get<std::string>() + ".json"));
      const json per = json::parse(per_in);
      complete += per.contains("precision") && per.contains("recall") && per.contains("f1");
    }
    const bool has_corr = summary.contains("f1_score_correlation");
    o = {complete == summary.at("explanations").size() && complete > 0 && has_corr,
         std::to_string(complete) + " explanation reports, F1-vs-score correlation " +
             (has_corr ? summary["f1_score_correlation"].dump() : "missing")};
  }
  std::error_code ec;
  fs::remove_all(out, ec);
  return o;
}

}  // namespace

int main() {
  criterion("metric oracle equivalence", kOracleBudget, metric_oracle);
  criterion("insensitivity demonstration", kDemoBudget, insensitivity);
  criterion("engine invariants", kEngineBudget, engine_invariants);
  criterion("worked interchange example", kWorkedBudget, worked_example);
  criterion("baseline ordering", 0, baseline_ordering);
  criterion("ranking independence at K=100", 0, full_pool_equality);
  criterion("observational reference path", 0, observe_path);
  return failures == 0 ? 0 : 1;
}
