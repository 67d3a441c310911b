#include "neuroaudit/denotation.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "neuroaudit/annotator.hpp"
#include "neuroaudit/error.hpp"
#include "neuroaudit/parallel.hpp"

namespace neuroaudit {

using nlohmann::json;

std::string Explanation::id() const { return "L" + std::to_string(layer) + "N" + std::to_string(neuron); }

std::vector<Explanation> parse_explanations(std::istream& in) {
  std::vector<Explanation> out;
  std::vector<std::string> problems;
  std::set<std::pair<int, int>> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) continue;
    const std::string where = "line " + std::to_string(line_no) + ": ";
    const json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      problems.push_back(where + "not a JSON object");
      continue;
    }
    Explanation e;
    if (!j.contains("layer") || !j["layer"].is_number_integer() || !j.contains("neuron") ||
        !j["neuron"].is_number_integer()) {
      problems.push_back(where + "missing integer layer/neuron");
      continue;
    }
    e.layer = j["layer"].get<int>();
    e.neuron = j["neuron"].get<int>();
    if (e.layer < 0 || e.neuron < 0) {
      problems.push_back(where + "negative layer/neuron");
      continue;
    }
    if (!j.contains("explanation") || !j["explanation"].is_string()) {
      problems.push_back(where + "missing explanation text");
      continue;
    }
    e.text = j["explanation"].get<std::string>();
    if (!j.contains("score") || !j["score"].is_number()) {
      problems.push_back(where + "missing numeric score");
      continue;
    }
    e.score = j["score"].get<double>();
    if (!std::isfinite(e.score) || e.score < -1.0 || e.score > 1.0) {
      problems.push_back(where + "score " + j["score"].dump() + " outside [-1, 1]");
      continue;
    }
    if (!seen.emplace(e.layer, e.neuron).second) {
      problems.push_back(where + "duplicate explanation for " + e.id());
      continue;
    }
    out.push_back(std::move(e));
  }
  if (in.bad()) throw Error("failed reading explanation corpus");
  if (!problems.empty()) {
    std::string msg = "explanation corpus has " + std::to_string(problems.size()) + " bad record(s):";
    for (const auto& p : problems) msg += "\n  " + p;
    throw FormatError(msg);
  }
  return out;
}

std::vector<Explanation> load_explanations(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open explanation corpus " + path.string());
  return parse_explanations(in);
}

std::string normalize_whitespace(std::string_view s) {
  std::string out;
  bool pending_space = false;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out += ' ';
    pending_space = false;
    out += c;
  }
  return out;
}

DenotationSpec DenotationSpec::enumerated(std::vector<std::string> positives, std::vector<std::string> exclusions) {
  DenotationSpec spec;
  spec.mode_ = DenotationMode::Enumerated;
  for (auto& p : positives) spec.positives_.push_back(normalize_whitespace(p));
  for (auto& x : exclusions) spec.exclusions_.push_back(normalize_whitespace(x));
  spec.check();
  return spec;
}

DenotationSpec DenotationSpec::pattern(std::string pattern, std::vector<std::string> exclusions) {
  DenotationSpec spec;
  spec.mode_ = DenotationMode::Pattern;
  try {
    spec.regex_ = std::make_shared<const std::regex>(pattern, std::regex::ECMAScript);
  } catch (const std::regex_error& e) {
    throw InvalidArgument("denotation pattern '" + pattern + "' does not compile: " + e.what());
  }
  spec.pattern_ = std::move(pattern);
  for (auto& x : exclusions) spec.exclusions_.push_back(normalize_whitespace(x));
  spec.check();
  return spec;
}

void DenotationSpec::check() const {
  if (mode_ == DenotationMode::Enumerated && positives_.empty())
    throw InvalidArgument("enumerated denotation needs at least one positive");
  for (const auto& x : exclusions_)
    if (std::find(positives_.begin(), positives_.end(), x) != positives_.end())
      throw InvalidArgument("'" + x + "' is both a positive and an exclusion");
}

DenotationSpec DenotationSpec::from_json(const json& j) {
  if (!j.is_object() || !j.contains("mode")) throw FormatError("denotation must be an object with a mode");
  std::vector<std::string> exclusions = j.value("exclusions", std::vector<std::string>{});
  const auto mode = j["mode"].get<std::string>();
  if (mode == "enumerated") return enumerated(j.value("positives", std::vector<std::string>{}), exclusions);
  if (mode == "pattern") return pattern(j.value("pattern", std::string{}), exclusions);
  throw FormatError("unknown denotation mode '" + mode + "'");
}

json DenotationSpec::to_json() const {
  json j;
  j["mode"] = mode_ == DenotationMode::Enumerated ? "enumerated" : "pattern";
  if (mode_ == DenotationMode::Enumerated) j["positives"] = positives_;
  if (mode_ == DenotationMode::Pattern) j["pattern"] = pattern_;
  j["exclusions"] = exclusions_;
  return j;
}

bool DenotationSpec::is_excluded(std::string_view q) const {
  const auto n = normalize_whitespace(q);
  return std::find(exclusions_.begin(), exclusions_.end(), n) != exclusions_.end();
}

bool DenotationSpec::contains(std::string_view q) const {
  if (is_excluded(q)) return false;
  const auto n = normalize_whitespace(q);
  if (mode_ == DenotationMode::Enumerated) return std::find(positives_.begin(), positives_.end(), n) != positives_.end();
  return std::regex_match(n, *regex_);
}

bool membership(std::string_view q, const DenotationSpec& spec) { return spec.contains(q); }

namespace {

const char* origin_name(ProbeOrigin o) { return o == ProbeOrigin::Type1 ? "type1-probe" : "type2-probe"; }
const char* split_name(Split s) { return s == Split::Evaluate ? "evaluate" : "probe-train"; }

}  // namespace

void TestSet::validate() const {
  std::set<std::pair<std::string, std::pair<std::size_t, std::size_t>>> eval_keys;
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    const auto& s = sentences[i];
    if (s.span.end > s.text.size() || s.span.begin >= s.span.end)
      throw FormatError("test set " + explanation_id + ", sentence " + std::to_string(i) +
                        ": span must be a non-empty range inside the text");
    if (s.split == Split::Evaluate) eval_keys.insert({s.text, {s.span.begin, s.span.end}});
  }
  for (const auto& s : sentences)
    if (s.split == Split::ProbeTrain && eval_keys.count({s.text, {s.span.begin, s.span.end}}))
      throw FormatError("test set " + explanation_id + ": sentence '" + s.text + "' is in both splits");
}

void TestSet::validate_for_evaluation() const {
  bool type1 = false, type2 = false;
  for (const auto& s : sentences) {
    if (s.split != Split::Evaluate || s.excluded) continue;
    type1 |= s.origin == ProbeOrigin::Type1;
    type2 |= s.origin == ProbeOrigin::Type2;
  }
  if (!type1 || !type2)
    throw InvalidArgument("test set " + explanation_id + " needs type-1 and type-2 probes in its evaluate split");
}

std::vector<std::size_t> TestSet::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < sentences.size(); ++i)
    if (sentences[i].split == split) out.push_back(i);
  return out;
}

TestSet parse_testset(const json& j) {
  if (!j.is_object()) throw FormatError("test set must be a JSON object");
  TestSet t;
  try {
    t.explanation_id = j.at("explanation_id").get<std::string>();
    t.explanation = j.value("explanation", std::string{});
    if (j.contains("denotation")) t.denotation = DenotationSpec::from_json(j["denotation"]);
    for (const auto& sj : j.at("sentences")) {
      TestSentence s;
      s.text = sj.at("text").get<std::string>();
      const auto& span = sj.at("span");
      if (!span.is_array() || span.size() != 2) throw FormatError("span must be [start, end)");
      s.span = {span[0].get<std::size_t>(), span[1].get<std::size_t>()};
      s.claimed_member = sj.at("claimed_member").get<bool>();
      const auto origin = sj.value("origin", std::string("type1-probe"));
      if (origin == "type1-probe") s.origin = ProbeOrigin::Type1;
      else if (origin == "type2-probe") s.origin = ProbeOrigin::Type2;
      else throw FormatError("unknown origin '" + origin + "'");
      const auto split = sj.value("split", std::string("evaluate"));
      if (split == "evaluate") s.split = Split::Evaluate;
      else if (split == "probe-train") s.split = Split::ProbeTrain;
      else throw FormatError("unknown split '" + split + "'");
      s.excluded = sj.value("excluded", false);
      t.sentences.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed test set: ") + e.what());
  }
  t.validate();
  return t;
}

TestSet load_testset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open test set " + path.string());
  const json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw FormatError("test set " + path.string() + " is not valid JSON");
  return parse_testset(j);
}

json to_json(const TestSentence& s) {
  json j = {{"text", s.text},
            {"span", {s.span.begin, s.span.end}},
            {"claimed_member", s.claimed_member},
            {"origin", origin_name(s.origin)},
            {"split", split_name(s.split)}};
  if (s.excluded) j["excluded"] = true;
  return j;
}

json to_json(const TestSet& t) {
  json j = {{"explanation_id", t.explanation_id}, {"explanation", t.explanation}};
  if (t.denotation) j["denotation"] = t.denotation->to_json();
  j["sentences"] = json::array();
  for (const auto& s : t.sentences) j["sentences"].push_back(to_json(s));
  return j;
}

SpanAlignment align_span(const Encoding& encoding, std::string_view text, ByteRange span) {
  if (span.begin >= span.end || span.end > text.size()) throw InvalidArgument("span is empty or outside the text");
  SpanAlignment a;
  std::size_t i = 0;
  while (i < encoding.offsets.size() && encoding.offsets[i].end <= span.begin) ++i;
  a.begin = i;
  while (i < encoding.offsets.size() && encoding.offsets[i].begin < span.end) ++i;
  a.end = i;
  if (a.begin >= a.end) throw InvalidArgument("span is not covered by any token");
  const ByteRange covered{encoding.offsets[a.begin].begin, encoding.offsets[a.end - 1].end};
  auto non_space = [&](std::size_t from, std::size_t to) {
    std::size_t n = 0;
    for (std::size_t k = from; k < to; ++k) n += !std::isspace(static_cast<unsigned char>(text[k]));
    return n;
  };
  a.expanded_bytes = non_space(covered.begin, span.begin) + non_space(span.end, covered.end);
  return a;
}

SpanAlignment align_span(const TestSentence& sentence, const Tokenizer& tokenizer) {
  return align_span(tokenizer.encode(sentence.text), sentence.text, sentence.span);
}

namespace {

// Shrinks a byte range to exclude surrounding whitespace, unless nothing
// would remain.
ByteRange trim_range(std::string_view text, ByteRange r) {
  ByteRange t = r;
  while (t.begin < t.end && std::isspace(static_cast<unsigned char>(text[t.begin]))) ++t.begin;
  while (t.end > t.begin && std::isspace(static_cast<unsigned char>(text[t.end - 1]))) --t.end;
  return t.begin < t.end ? t : r;
}

std::vector<ScanCandidate> scan_line(const Model& model, const NeuronRef& neuron, const std::string& line,
                                     std::size_t line_no, float threshold, std::size_t window) {
  std::vector<ScanCandidate> out;
  const auto enc = model.tokenizer().encode(line);
  if (enc.ids.empty()) return out;
  const NeuronRef record[] = {neuron};
  const auto trace = model.forward(enc.ids, {.record = record});
  const auto acts = trace.activations(neuron);
  std::size_t t = 0;
  while (t < acts.size()) {
    if (!(acts[t] > threshold)) {
      ++t;
      continue;
    }
    std::size_t end = t;
    float peak = acts[t];
    while (end < acts.size() && acts[end] > threshold) peak = std::max(peak, acts[end++]);
    ScanCandidate c;
    c.sentence.text = line;
    c.sentence.span = trim_range(line, {enc.offsets[t].begin, enc.offsets[end - 1].end});
    c.sentence.claimed_member = false;
    c.sentence.origin = ProbeOrigin::Type2;
    const std::size_t ctx_begin = t >= window ? t - window : 0;
    const std::size_t ctx_end = std::min(acts.size(), end + window);
    c.context = line.substr(enc.offsets[ctx_begin].begin, enc.offsets[ctx_end - 1].end - enc.offsets[ctx_begin].begin);
    c.peak = peak;
    c.line = line_no;
    out.push_back(std::move(c));
    t = end;
  }
  return out;
}

}  // namespace

ScanResult scan_corpus(const Model& model, const NeuronRef& neuron, std::istream& corpus, float threshold,
                       std::size_t window, unsigned threads) {
  model.check_neuron(neuron);
  if (std::isnan(threshold)) throw InvalidArgument("scan threshold must not be NaN");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(corpus, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  if (corpus.bad()) throw Error("corpus read failure");

  ScanResult result;
  result.lines_read = lines.size();
  std::vector<std::vector<ScanCandidate>> per_line(lines.size());
  std::vector<char> skipped(lines.size(), 0);
  parallel_for(lines.size(), threads, [&](std::size_t i) {
    if (lines[i].empty()) return;
    if (model.tokenizer().encode(lines[i]).ids.size() > static_cast<std::size_t>(model.config().max_positions)) {
      skipped[i] = 1;
      return;
    }
    per_line[i] = scan_line(model, neuron, lines[i], i + 1, threshold, window);
  });
  for (std::size_t i = 0; i < lines.size(); ++i) {
    result.lines_skipped += skipped[i];
    for (auto& c : per_line[i]) result.candidates.push_back(std::move(c));
  }
  return result;
}

std::vector<AnnotatedSentence> annotate(const std::vector<TestSentence>& candidates, const DenotationSpec& spec,
                                        const std::string& explanation, Annotator* annotator) {
  std::vector<AnnotatedSentence> out;
  out.reserve(candidates.size());
  for (const auto& candidate : candidates) {
    AnnotatedSentence a;
    a.sentence = candidate;
    const std::string q = candidate.span_text();
    if (spec.is_excluded(q)) {
      a.label = Label::Excluded;
      a.source = "exclusion";
    } else if (spec.mode() == DenotationMode::Pattern) {
      a.label = spec.contains(q) ? Label::Member : Label::NonMember;
      a.source = "pattern";
    } else if (spec.contains(q)) {
      a.label = Label::Member;
      a.source = "enumerated";
    } else if (annotator) {
      const auto reply = annotator->judge({explanation, q});
      if (reply.member) {
        a.label = *reply.member ? Label::Member : Label::NonMember;
        a.source = "annotator";
      } else {
        a.label = Label::Excluded;
        a.source = "malformed-response";
        std::clog << "annotator: malformed response for '" << q << "': " << reply.raw.dump() << "\n";
      }
    } else {
      a.label = Label::NonMember;
      a.source = "enumerated";
    }
    a.sentence.claimed_member = a.label == Label::Member;
    a.sentence.excluded = a.label == Label::Excluded;
    out.push_back(std::move(a));
  }
  return out;
}

}  // namespace neuroaudit
