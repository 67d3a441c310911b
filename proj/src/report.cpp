#include "neuroaudit/report.hpp"

#include <unistd.h>

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>

#include "neuroaudit/annotator.hpp"
#include "neuroaudit/error.hpp"
#include "neuroaudit/stats.hpp"

namespace neuroaudit {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::string fmt(const std::optional<double>& v, int precision = 3) {
  if (!v) return "undefined";
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(precision) << *v;
  return ss.str();
}

std::string fmt(double v, int precision = 3) { return fmt(std::optional<double>(v), precision); }

std::string md_cell(const std::string& s) {
  std::string out;
  for (char c : s) out += c == '|' ? std::string("\\|") : std::string(1, c);
  return out;
}

json metrics_json(const Metrics& m) {
  return {{"precision", opt(m.precision)},
          {"recall", opt(m.recall)},
          {"f1", opt(m.f1)},
          {"evaluated", m.evaluated},
          {"claimed_members", m.claimed_members},
          {"fired", m.fired},
          {"true_positives", m.true_positives}};
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

fs::path existing(const fs::path& base, const json& j, const char* key) {
  const fs::path p = resolve(base, j.at(key).get<std::string>());
  if (!fs::exists(p)) throw ConfigError(std::string(key) + ": " + p.string() + " does not exist");
  return p;
}

Model open_model(const AuditConfig& c) {
  const ModelPaths& m = *c.model;
  return load_model(m.archive, ModelConfig::load(m.config), m.vocab, m.merges);
}

std::vector<Explanation> ranking_corpus(const AuditConfig& c) {
  if (!c.ranking_explanations.empty()) return load_explanations(c.ranking_explanations);
  if (!c.explanations.empty()) return load_explanations(c.explanations);
  return {};
}

struct TestSetLookup {
  std::optional<TestSet> set;
  std::string missing_reason;
};

TestSetLookup find_testset(const AuditConfig& c, const Explanation& e) {
  const fs::path p = c.testsets / (e.id() + ".json");
  if (!fs::exists(p)) return {std::nullopt, "no test set"};
  TestSet t = load_testset(p);
  if (t.explanation_id != e.id())
    throw FormatError(p.string() + " is for " + t.explanation_id + ", not " + e.id());
  return {std::move(t), ""};
}

std::string skipped_markdown(const std::vector<SkippedItem>& skipped) {
  std::ostringstream md;
  md << "### Skipped (" << skipped.size() << ")\n\n";
  if (skipped.empty()) md << "none\n";
  for (const auto& s : skipped) md << "- " << s.id << ": " << s.reason << "\n";
  return md.str();
}

json skipped_json(const std::vector<SkippedItem>& skipped) {
  json a = json::array();
  for (const auto& s : skipped) a.push_back({{"id", s.id}, {"reason", s.reason}});
  return a;
}

}  // namespace

AuditConfig AuditConfig::from_json(const json& j, const fs::path& base) {
  AuditConfig c;
  try {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    if (j.contains("model")) {
      const json& m = j["model"];
      c.model = ModelPaths{existing(base, m, "archive"), existing(base, m, "vocab"), existing(base, m, "merges"),
                           existing(base, m, "config")};
    }
    if (j.contains("explanations")) c.explanations = existing(base, j, "explanations");
    if (j.contains("ranking_explanations")) c.ranking_explanations = existing(base, j, "ranking_explanations");
    if (j.contains("testsets")) c.testsets = existing(base, j, "testsets");
    if (j.contains("tasks")) c.tasks = existing(base, j, "tasks");
    c.threshold = j.value("threshold", 0.0);
    if (j.contains("seeds")) c.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
    if (j.contains("ks")) c.ks = j["ks"].get<std::vector<double>>();
    c.n_pairs = j.value("n_pairs", c.n_pairs);
    if (j.contains("neuron_counts")) c.neuron_counts = j["neuron_counts"].get<std::vector<std::size_t>>();
    if (j.contains("probe")) {
      const json& p = j["probe"];
      c.probe.l2 = p.value("l2", c.probe.l2);
      c.probe.max_newton_steps = p.value("max_newton_steps", c.probe.max_newton_steps);
      c.probe.identity = p.value("identity", false);
      const auto policy = p.value("threshold_policy", std::string("max_f1"));
      if (policy == "max_f1") c.probe.threshold_policy = ProbeThreshold::MaxF1;
      else if (policy == "logit_zero") c.probe.threshold_policy = ProbeThreshold::LogitZero;
      else throw ConfigError("probe.threshold_policy must be max_f1 or logit_zero");
    }
    c.probe.threshold = c.threshold;
    if (j.contains("scan")) {
      const json& s = j["scan"];
      ScanConfig sc;
      sc.neuron = {s.at("layer").get<int>(), s.at("neuron").get<int>()};
      sc.corpus = existing(base, s, "corpus");
      sc.threshold = s.value("threshold", 0.0f);
      sc.window = s.value("window", sc.window);
      sc.explanation = s.at("explanation").get<std::string>();
      if (s.contains("denotation")) sc.denotation = DenotationSpec::from_json(s["denotation"]);
      c.scan = std::move(sc);
    }
    if (j.contains("demo")) {
      const json& d = j["demo"];
      c.demo.frequency = d.value("frequency", c.demo.frequency);
      c.demo.trials = d.value("trials", c.demo.trials);
      c.demo.seed = d.value("seed", c.demo.seed);
    }
    if (j.contains("annotator")) {
      const json& a = j["annotator"];
      AnnotatorConfig ac;
      const auto mode = a.value("mode", std::string("replay"));
      if (mode == "replay") {
        ac.mode = AnnotatorConfig::Mode::Replay;
        ac.fixture = existing(base, a, "fixture");
      } else if (mode == "live") {
        ac.mode = AnnotatorConfig::Mode::Live;
        if (a.contains("fixture")) ac.fixture = resolve(base, a["fixture"].get<std::string>());
      } else {
        throw ConfigError("annotator.mode must be replay or live");
      }
      c.annotator = std::move(ac);
    }
    if (j.contains("out")) c.out = resolve(base, j["out"].get<std::string>());
    else c.out = base / "out";
    c.threads = j.value("threads", 1u);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const FormatError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (c.seeds.empty()) throw ConfigError("seeds must not be empty");
  if (c.ks.empty()) throw ConfigError("ks must not be empty");
  for (double k : c.ks)
    if (!(k > 0.0 && k <= 100.0)) throw ConfigError("every K must lie in (0, 100]");
  if (c.n_pairs == 0) throw ConfigError("n_pairs must be positive");
  if (c.neuron_counts.empty()) throw ConfigError("neuron_counts must not be empty");
  for (auto n : c.neuron_counts)
    if (n == 0) throw ConfigError("neuron_counts entries must be positive");
  if (!(c.demo.frequency >= 0.0 && c.demo.frequency <= 1.0)) throw ConfigError("demo.frequency must lie in [0, 1]");
  if (c.demo.trials == 0) throw ConfigError("demo.trials must be positive");
  return c;
}

AuditConfig AuditConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  const json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError(path.string() + " is not valid JSON");
  return from_json(j, path.parent_path().empty() ? fs::path(".") : path.parent_path());
}

std::string to_string(Verb verb) {
  switch (verb) {
    case Verb::Observe: return "observe";
    case Verb::Intervene: return "intervene";
    case Verb::ProbeTrain: return "probe-train";
    case Verb::Scan: return "scan";
    case Verb::DemoScore: return "demo-score";
    case Verb::Report: return "report";
  }
  return "report";
}

void require_fields(const AuditConfig& c, Verb verb) {
  auto need = [&](bool present, const char* field) {
    if (!present) throw ConfigError(to_string(verb) + " needs \"" + field + "\" in the config");
  };
  switch (verb) {
    case Verb::Observe:
    case Verb::ProbeTrain:
      need(c.model.has_value(), "model");
      need(!c.explanations.empty(), "explanations");
      need(!c.testsets.empty(), "testsets");
      break;
    case Verb::Intervene:
      need(c.model.has_value(), "model");
      need(!c.tasks.empty(), "tasks");
      break;
    case Verb::Scan:
      need(c.model.has_value(), "model");
      need(c.scan.has_value(), "scan");
      need(c.scan->denotation.has_value(), "scan.denotation");
      break;
    case Verb::DemoScore:
    case Verb::Report:
      break;
  }
}

json MetricMeans::to_json() const {
  return {{"n", n},
          {"precision", opt(precision)},
          {"recall", opt(recall)},
          {"f1", opt(f1)},
          {"undefined", {{"precision", undefined_precision}, {"recall", undefined_recall}, {"f1", undefined_f1}}}};
}

MetricMeans mean_metrics(const std::vector<Metrics>& metrics) {
  MetricMeans out;
  out.n = metrics.size();
  auto average = [&](auto field, std::size_t& undefined) -> std::optional<double> {
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& m : metrics) {
      const std::optional<double>& v = m.*field;
      if (v) {
        sum += *v;
        ++count;
      } else {
        ++undefined;
      }
    }
    if (count == 0) return std::nullopt;
    return sum / static_cast<double>(count);
  };
  out.precision = average(&Metrics::precision, out.undefined_precision);
  out.recall = average(&Metrics::recall, out.undefined_recall);
  out.f1 = average(&Metrics::f1, out.undefined_f1);
  return out;
}

AggregateSummary summarize(std::vector<ExplanationSummary> explanations, std::vector<SkippedItem> skipped) {
  AggregateSummary s;
  s.explanations = std::move(explanations);
  s.skipped = std::move(skipped);
  std::vector<Metrics> own, random;
  std::vector<double> f1, score;
  for (const auto& e : s.explanations) {
    own.push_back(e.metrics);
    if (e.random_baseline) random.push_back(*e.random_baseline);
    if (e.metrics.f1) {
      f1.push_back(*e.metrics.f1);
      score.push_back(e.score);
    }
  }
  s.means = mean_metrics(own);
  s.random_means = mean_metrics(random);
  s.correlation_n = f1.size();
  s.f1_score_correlation = stats::pearson(f1, score);
  return s;
}

json AggregateSummary::to_json() const {
  json rows = json::array();
  for (const auto& e : explanations) {
    json r = {{"id", e.id}, {"explanation", e.explanation}, {"score", e.score}};
    r.update(metrics_json(e.metrics));
    r["random_baseline"] = e.random_baseline ? metrics_json(*e.random_baseline) : json(nullptr);
    rows.push_back(r);
  }
  return {{"explanations", rows},
          {"means", means.to_json()},
          {"random_baseline_means", random_means.to_json()},
          {"f1_score_correlation", opt(f1_score_correlation)},
          {"correlation_n", correlation_n},
          {"skipped", skipped_json(skipped)}};
}

std::string AggregateSummary::to_markdown() const {
  std::ostringstream md;
  md << "## Observational audit\n\n"
     << "| explanation | text | score | precision | recall | F1 | random-pairing F1 |\n"
     << "|---|---|---|---|---|---|---|\n";
  for (const auto& e : explanations)
    md << "| " << e.id << " | " << md_cell(e.explanation) << " | " << fmt(e.score) << " | "
       << fmt(e.metrics.precision) << " | " << fmt(e.metrics.recall) << " | " << fmt(e.metrics.f1) << " | "
       << (e.random_baseline ? fmt(e.random_baseline->f1) : std::string("-")) << " |\n";
  md << "\n| | precision | recall | F1 | undefined F1 |\n|---|---|---|---|---|\n"
     << "| explanations (mean) | " << fmt(means.precision) << " | " << fmt(means.recall) << " | " << fmt(means.f1)
     << " | " << means.undefined_f1 << " |\n"
     << "| random pairing (mean) | " << fmt(random_means.precision) << " | " << fmt(random_means.recall) << " | "
     << fmt(random_means.f1) << " | " << random_means.undefined_f1 << " |\n\n"
     << "Pearson correlation of F1 with explanation score over " << correlation_n
     << " explanations: " << fmt(f1_score_correlation) << "\n\n"
     << skipped_markdown(skipped);
  return md.str();
}

void write_file_atomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw Error("failed writing " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw Error("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
  }
}

int cmd_observe(const AuditConfig& c) {
  require_fields(c, Verb::Observe);
  const Model model = open_model(c);
  const auto explanations = load_explanations(c.explanations);
  const fs::path dir = c.out / "observe";
  std::vector<ExplanationSummary> rows;
  std::vector<SkippedItem> skipped;
  for (std::size_t i = 0; i < explanations.size(); ++i) {
    const Explanation& e = explanations[i];
    model.check_neuron(e.ref());
    auto found = find_testset(c, e);
    if (!found.set) {
      skipped.push_back({e.id(), found.missing_reason});
      continue;
    }
    ObservationReport report;
    ObservationReport random;
    try {
      report = evaluate_explanation(model, {e.ref()}, nullptr, *found.set, c.threshold, c.threads);
      RandomPairingOptions ro;
      ro.seed = c.seeds.front() + i;
      ro.threshold = c.threshold;
      random = random_pairing_baseline(model, e, e.layer, *found.set, ro, c.threads);
    } catch (const InvalidArgument& err) {
      skipped.push_back({e.id(), err.what()});
      continue;
    }
    json j = report.to_json();
    j["score"] = e.score;
    j["random_baseline"] = metrics_json(random.metrics);
    j["random_baseline"]["targets"] = json::array();
    for (const auto& t : random.targets) j["random_baseline"]["targets"].push_back(to_string(t));
    write_file_atomic(dir / (e.id() + ".json"), dump(j));
    write_file_atomic(dir / (e.id() + ".md"), report.to_markdown());
    rows.push_back({e.id(), e.text, e.score, report.metrics, random.metrics});
  }
  const AggregateSummary summary = summarize(std::move(rows), std::move(skipped));
  write_file_atomic(dir / "summary.json", dump(summary.to_json()));
  write_file_atomic(dir / "summary.md", summary.to_markdown());
  return 0;
}

int cmd_probe_train(const AuditConfig& c) {
  require_fields(c, Verb::ProbeTrain);
  const Model model = open_model(c);
  const auto explanations = load_explanations(c.explanations);
  const auto corpus = ranking_corpus(c);
  const fs::path dir = c.out / "probe";
  std::map<std::size_t, std::vector<Metrics>> similar, random;
  std::vector<SkippedItem> skipped;
  for (std::size_t i = 0; i < explanations.size(); ++i) {
    const Explanation& e = explanations[i];
    model.check_neuron(e.ref());
    auto found = find_testset(c, e);
    if (!found.set) {
      skipped.push_back({e.id(), found.missing_reason});
      continue;
    }
    json results = json::array();
    for (std::size_t n : c.neuron_counts) {
      try {
        const auto targets = select_similar_neurons(e, corpus, n);
        const ProbeModel probe = train_probe(model, targets, *found.set, c.probe, c.threads);
        const auto report = evaluate_explanation(model, targets, &probe, *found.set, c.threshold, c.threads);
        RandomPairingOptions ro;
        ro.n = n;
        ro.seed = c.seeds.front() + i;
        ro.use_probe = true;
        ro.threshold = c.threshold;
        ro.probe = c.probe;
        const auto baseline = random_pairing_baseline(model, e, e.layer, *found.set, ro, c.threads);
        json r = {{"n", n}, {"probe", probe.to_json()}};
        r.update(metrics_json(report.metrics));
        r["random_baseline"] = metrics_json(baseline.metrics);
        r["random_baseline"]["probe"] = baseline.probe ? baseline.probe->to_json() : json(nullptr);
        results.push_back(r);
        similar[n].push_back(report.metrics);
        random[n].push_back(baseline.metrics);
      } catch (const InvalidArgument& err) {
        skipped.push_back({e.id() + " n=" + std::to_string(n), err.what()});
      }
    }
    write_file_atomic(dir / (e.id() + ".json"),
                      dump({{"id", e.id()}, {"explanation", e.text}, {"score", e.score}, {"results", results}}));
  }
  json rows = json::array();
  std::ostringstream md;
  md << "## Probe audit: explanation-similar neurons vs random neurons\n\n"
     << "| neurons | explanations | precision | recall | F1 | random precision | random recall | random F1 |\n"
     << "|---|---|---|---|---|---|---|---|\n";
  for (std::size_t n : c.neuron_counts) {
    const auto s = mean_metrics(similar[n]);
    const auto r = mean_metrics(random[n]);
    rows.push_back({{"n", n}, {"similar", s.to_json()}, {"random", r.to_json()}});
    md << "| " << n << " | " << s.n << " | " << fmt(s.precision) << " | " << fmt(s.recall) << " | " << fmt(s.f1)
       << " | " << fmt(r.precision) << " | " << fmt(r.recall) << " | " << fmt(r.f1) << " |\n";
  }
  md << "\n" << skipped_markdown(skipped);
  write_file_atomic(dir / "summary.json", dump({{"by_neuron_count", rows}, {"skipped", skipped_json(skipped)}}));
  write_file_atomic(dir / "summary.md", md.str());
  return 0;
}

int cmd_scan(const AuditConfig& c) {
  require_fields(c, Verb::Scan);
  const ScanConfig& sc = *c.scan;
  const Model model = open_model(c);
  std::ifstream corpus(sc.corpus);
  if (!corpus) throw Error("cannot open corpus " + sc.corpus.string());
  const ScanResult scan = scan_corpus(model, sc.neuron, corpus, sc.threshold, sc.window, c.threads);

  std::unique_ptr<Annotator> annotator;
  HttpAnnotator* live = nullptr;
  if (c.annotator) {
    if (c.annotator->mode == AnnotatorConfig::Mode::Replay) {
      annotator = std::make_unique<ReplayAnnotator>(ReplayAnnotator::load(c.annotator->fixture));
    } else {
      const char* url = std::getenv("ANNOTATOR_URL");
      if (!url || !*url) throw ConfigError("live annotator mode needs ANNOTATOR_URL");
      auto http = std::make_unique<HttpAnnotator>(url);
      live = http.get();
      annotator = std::move(http);
    }
  }
  std::vector<TestSentence> sentences;
  for (const auto& cand : scan.candidates) sentences.push_back(cand.sentence);
  const auto labelled = annotate(sentences, *sc.denotation, sc.explanation, annotator.get());

  const std::string id = "L" + std::to_string(sc.neuron.layer) + "N" + std::to_string(sc.neuron.index);
  json candidates = json::array();
  TestSet draft;
  draft.explanation_id = id;
  draft.explanation = sc.explanation;
  draft.denotation = sc.denotation;
  std::size_t members = 0, non_members = 0, excluded = 0;
  for (std::size_t i = 0; i < labelled.size(); ++i) {
    const auto& a = labelled[i];
    const char* label = a.label == Label::Member ? "member" : a.label == Label::NonMember ? "non-member" : "excluded";
    members += a.label == Label::Member;
    non_members += a.label == Label::NonMember;
    excluded += a.label == Label::Excluded;
    candidates.push_back({{"line", scan.candidates[i].line},
                          {"peak", scan.candidates[i].peak},
                          {"context", scan.candidates[i].context},
                          {"label", label},
                          {"source", a.source},
                          {"sentence", to_json(a.sentence)}});
    TestSentence s = a.sentence;
    s.claimed_member = a.label == Label::Member;
    s.excluded = a.label == Label::Excluded;
    draft.sentences.push_back(std::move(s));
  }
  const fs::path dir = c.out / "scan";
  write_file_atomic(dir / "candidates.json", dump({{"neuron", to_string(sc.neuron)},
                                                   {"explanation", sc.explanation},
                                                   {"threshold", sc.threshold},
                                                   {"lines_read", scan.lines_read},
                                                   {"lines_skipped", scan.lines_skipped},
                                                   {"candidates", candidates}}));
  write_file_atomic(dir / (id + ".type2.json"), dump(to_json(draft)));
  std::ostringstream md;
  md << "## Corpus scan for " << to_string(sc.neuron) << "\n\n"
     << "Explanation: " << sc.explanation << "\n\n"
     << "| lines read | lines skipped | candidates | members | non-members | excluded |\n|---|---|---|---|---|---|\n"
     << "| " << scan.lines_read << " | " << scan.lines_skipped << " | " << labelled.size() << " | " << members
     << " | " << non_members << " | " << excluded << " |\n";
  write_file_atomic(dir / "summary.md", md.str());
  write_file_atomic(dir / "summary.json", dump({{"neuron", to_string(sc.neuron)},
                                                {"lines_read", scan.lines_read},
                                                {"lines_skipped", scan.lines_skipped},
                                                {"candidates", labelled.size()},
                                                {"members", members},
                                                {"non_members", non_members},
                                                {"excluded", excluded}}));
  if (live) live->save_fixture(c.annotator->fixture.empty() ? dir / "annotator_fixture.json" : c.annotator->fixture);
  return 0;
}

namespace {

struct MethodStats {
  std::vector<std::vector<double>> per_seed;  // [seed][k]
};

std::string task_markdown(const std::string& name, const std::vector<double>& ks,
                          const std::map<RankingMethod, MethodStats>& stats, std::size_t pool,
                          const PerfectionResult& perfection, std::size_t n_pairs, std::size_t n_seeds) {
  std::ostringstream md;
  md << "### Task " << name << "\n\n"
     << "Perfection filter kept " << perfection.retained.size() << " fills (rate " << fmt(perfection.perfection_rate)
     << "). Pool of " << pool << " neurons, " << n_pairs << " pairs per seed, " << n_seeds << " seed(s).\n\n"
     << "| method |";
  for (double k : ks) md << " K=" << k << " |";
  md << "\n|---|";
  for (std::size_t i = 0; i < ks.size(); ++i) md << "---|";
  md << "\n";
  for (const auto& [method, st] : stats) {
    md << "| " << to_string(method) << " |";
    for (std::size_t k = 0; k < ks.size(); ++k) {
      std::vector<double> v;
      for (const auto& row : st.per_seed) v.push_back(row[k]);
      md << " " << fmt(stats::mean(v)) << (v.size() > 1 ? " ± " + fmt(stats::stddev(v)) : std::string()) << " |";
    }
    md << "\n";
  }
  return md.str() + "\n";
}

}  // namespace

int cmd_intervene(const AuditConfig& c) {
  require_fields(c, Verb::Intervene);
  const Model model = open_model(c);
  const auto tasks = load_task_registry(c.tasks);
  const auto corpus = ranking_corpus(c);
  const fs::path dir = c.out / "intervene";
  std::vector<SkippedItem> skipped;
  json task_rows = json::array();
  std::string markdown = "## Interventional audit\n\n";
  const std::vector<RankingMethod> methods = {RankingMethod::Random, RankingMethod::Correlation,
                                              RankingMethod::Confidence};
  std::vector<double> ks = c.ks;
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());

  for (const auto& task : tasks) {
    PerfectionResult perfection;
    std::vector<NeuronRef> pool;
    SitePolicy policy;
    try {
      task.validate();
      pool = layer_pool(model, task.layer_band);
      perfection = filter_perfect(model, task, c.threads);
      policy = resolve_site_policy(task, model.config().n_layers);
    } catch (const TaskUnusable& err) {
      skipped.push_back({task.name, err.what()});
      continue;
    } catch (const InvalidArgument& err) {
      skipped.push_back({task.name, err.what()});
      continue;
    }
    const auto correlation =
        rank_correlation(model, pool, instance_inputs(task, model.tokenizer(), perfection.retained), c.threads);
    const auto confidence = rank_confidence(pool, corpus, task.concept_key());

    const fs::path task_dir = dir / task.name;
    std::map<RankingMethod, MethodStats> stats;
    json curves = json::array();
    bool ok = true;
    for (std::uint64_t seed : c.seeds) {
      std::vector<InputPair> pairs;
      try {
        pairs = build_pairs(model, task, perfection.retained, c.n_pairs, seed, policy);
      } catch (const InvalidArgument& err) {
        skipped.push_back({task.name, err.what()});
        ok = false;
        break;
      }
      std::vector<IiaCurve> seed_curves;
      for (RankingMethod method : methods) {
        const auto ranking = method == RankingMethod::Random        ? rank_random(pool, seed)
                             : method == RankingMethod::Correlation ? correlation
                                                                    : confidence;
        IiaCurve curve = iia_curve(model, ranking, pairs, ks, c.threads);
        curve.task = task.name;
        curve.method = method;
        curve.seed = seed;
        std::vector<double> iia;
        for (std::size_t k = 0; k < ks.size(); ++k) iia.push_back(curve.iia(k));
        stats[method].per_seed.push_back(iia);
        json top = json::array();
        for (std::size_t r = 0; r < std::min<std::size_t>(ranking.size(), 10); ++r) top.push_back(to_string(ranking[r]));
        curves.push_back({{"method", to_string(method)},
                          {"seed", seed},
                          {"ks", ks},
                          {"neurons", curve.sizes},
                          {"matches", curve.matches},
                          {"iia", iia},
                          {"base_retained", curve.retained},
                          {"collisions", curve.collisions},
                          {"ranking_head", top}});
        seed_curves.push_back(std::move(curve));
      }
      write_file_atomic(task_dir / ("seed_" + std::to_string(seed) + ".csv"), curves_to_csv(seed_curves));
    }
    if (!ok) continue;

    std::ostringstream csv;
    csv.precision(17);
    csv << "method,K,mean_iia,stddev_iia,n_seeds\n";
    json means = json::array();
    for (const auto& [method, st] : stats)
      for (std::size_t k = 0; k < ks.size(); ++k) {
        std::vector<double> v;
        for (const auto& row : st.per_seed) v.push_back(row[k]);
        const double m = stats::mean(v), sd = stats::stddev(v);
        csv << to_string(method) << ',' << ks[k] << ',' << m << ',' << sd << ',' << v.size() << '\n';
        means.push_back({{"method", to_string(method)}, {"K", ks[k]}, {"mean_iia", m}, {"stddev_iia", sd}});
      }
    write_file_atomic(task_dir / "summary.csv", csv.str());
    json failures = json::array();
    for (const auto& f : perfection.failures)
      failures.push_back({{"fill", f.fill}, {"expected", f.expected}, {"predicted", f.predicted}});
    const json row = {{"task", task.name},
                      {"site_policy", policy == SitePolicy::ConceptTokens ? "concept_tokens" : "last_token"},
                      {"layer_band", {task.layer_band.first, task.layer_band.last}},
                      {"pool_size", pool.size()},
                      {"perfection_rate", perfection.perfection_rate},
                      {"retained_fills", perfection.retained.size()},
                      {"failures", failures},
                      {"n_pairs", c.n_pairs},
                      {"seeds", c.seeds},
                      {"curves", curves},
                      {"means", means}};
    write_file_atomic(task_dir / "summary.json", dump(row));
    const std::string md = task_markdown(task.name, ks, stats, pool.size(), perfection, c.n_pairs, c.seeds.size());
    write_file_atomic(task_dir / "report.md", md);
    markdown += md;
    task_rows.push_back({{"task", task.name}, {"perfection_rate", perfection.perfection_rate}, {"means", means}});
  }
  markdown += skipped_markdown(skipped);
  write_file_atomic(dir / "summary.json", dump({{"tasks", task_rows}, {"skipped", skipped_json(skipped)}}));
  write_file_atomic(dir / "summary.md", markdown);
  return 0;
}

int cmd_demo_score(const AuditConfig& c) {
  InsensitivityConfig ic;
  ic.frequency = c.demo.frequency;
  ic.trials = c.demo.trials;
  ic.seed = c.demo.seed;
  const auto result = demo_score_insensitivity(ic);
  write_file_atomic(c.out / "demo" / "insensitivity.json", dump(result.to_json()));
  write_file_atomic(c.out / "demo" / "insensitivity.md", result.to_markdown());
  return 0;
}

int cmd_report(const AuditConfig& c) {
  const std::vector<std::pair<std::string, fs::path>> parts = {
      {"observe", c.out / "observe" / "summary"},   {"probe-train", c.out / "probe" / "summary"},
      {"intervene", c.out / "intervene" / "summary"}, {"scan", c.out / "scan" / "summary"},
      {"demo-score", c.out / "demo" / "insensitivity"}};
  std::string md = "# Neuron explanation audit\n\n";
  json combined = json::object();
  std::size_t found = 0;
  for (const auto& [name, stem] : parts) {
    fs::path md_path = stem;
    md_path += ".md";
    if (!fs::exists(md_path)) continue;
    ++found;
    std::ifstream in(md_path);
    md += std::string(std::istreambuf_iterator<char>(in), {}) + "\n";
    fs::path json_path = stem;
    json_path += ".json";
    if (fs::exists(json_path)) {
      std::ifstream jin(json_path);
      combined[name] = json::parse(jin, nullptr, false);
    }
  }
  if (found == 0) throw ConfigError("nothing to report under " + c.out.string() + "; run an audit verb first");
  write_file_atomic(c.out / "report.md", md);
  write_file_atomic(c.out / "report.json", dump(combined));
  return 0;
}

int run_verb(Verb verb, const fs::path& config_path, const CliOverrides& overrides) {
  AuditConfig config;
  try {
    config = AuditConfig::load(config_path);
    if (overrides.seed) {
      config.seeds = {*overrides.seed};
      config.demo.seed = *overrides.seed;
    }
    if (overrides.threads) config.threads = std::max(1u, *overrides.threads);
    if (overrides.out) config.out = *overrides.out;
    require_fields(config, verb);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 1;
  }
  try {
    switch (verb) {
      case Verb::Observe: return cmd_observe(config);
      case Verb::Intervene: return cmd_intervene(config);
      case Verb::ProbeTrain: return cmd_probe_train(config);
      case Verb::Scan: return cmd_scan(config);
      case Verb::DemoScore: return cmd_demo_score(config);
      case Verb::Report: return cmd_report(config);
    }
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << to_string(verb) << " failed: " << e.what() << "\n";
    return 2;
  }
  return 2;
}

}  // namespace neuroaudit
