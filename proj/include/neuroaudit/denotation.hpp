#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include "json.hpp"
#include "neuroaudit/model.hpp"

namespace neuroaudit {

class Annotator;

// One natural-language neuron explanation with its simulation-correlation
// confidence score.
struct Explanation {
  int layer = 0;
  int neuron = 0;
  std::string text;
  double score = 0.0;

  NeuronRef ref() const { return {layer, neuron}; }
  // "L<layer>N<neuron>", the key test sets refer to.
  std::string id() const;
};

// Parses line-delimited {layer, neuron, explanation, score} records. Every
// bad line is collected; if any exist a FormatError lists them all with line
// numbers. Duplicate (layer, neuron) pairs are errors too.
std::vector<Explanation> load_explanations(const std::filesystem::path& path);
std::vector<Explanation> parse_explanations(std::istream& in);

enum class DenotationMode { Enumerated, Pattern };

// Finite stand-in for the set of strings an explanation picks out.
class DenotationSpec {
 public:
  static DenotationSpec enumerated(std::vector<std::string> positives, std::vector<std::string> exclusions = {});
  // `pattern` is an ECMAScript regex that must match the whole (trimmed) string.
  static DenotationSpec pattern(std::string pattern, std::vector<std::string> exclusions = {});
  static DenotationSpec from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;

  DenotationMode mode() const { return mode_; }
  const std::vector<std::string>& positives() const { return positives_; }
  const std::string& pattern_text() const { return pattern_; }
  const std::vector<std::string>& exclusions() const { return exclusions_; }

  bool is_excluded(std::string_view q) const;
  bool contains(std::string_view q) const;

 private:
  DenotationSpec() = default;
  void check() const;

  DenotationMode mode_ = DenotationMode::Enumerated;
  std::vector<std::string> positives_;
  std::string pattern_;
  std::shared_ptr<const std::regex> regex_;
  std::vector<std::string> exclusions_;
};

// Trim outer whitespace and collapse inner whitespace runs to one space.
std::string normalize_whitespace(std::string_view s);

// Exclusions always lose; otherwise exact (case-sensitive) match against the
// positives after whitespace normalization, or a full regex match.
bool membership(std::string_view q, const DenotationSpec& spec);

enum class ProbeOrigin { Type1, Type2 };
enum class Split { Evaluate, ProbeTrain };

struct TestSentence {
  std::string text;
  ByteRange span;  // byte offsets of the probe string inside `text`
  bool claimed_member = false;
  ProbeOrigin origin = ProbeOrigin::Type1;
  Split split = Split::Evaluate;
  bool excluded = false;

  std::string span_text() const { return text.substr(span.begin, span.size()); }
};

struct TestSet {
  std::string explanation_id;
  std::string explanation;
  std::optional<DenotationSpec> denotation;
  std::vector<TestSentence> sentences;

  // Spans inside their text and non-empty; no sentence in both splits.
  void validate() const;
  // At least one type-1 and one type-2 probe in the evaluate split.
  void validate_for_evaluation() const;
  std::vector<std::size_t> indices(Split split) const;
};

TestSet parse_testset(const nlohmann::json& j);
TestSet load_testset(const std::filesystem::path& path);
nlohmann::json to_json(const TestSentence& s);
nlohmann::json to_json(const TestSet& t);

struct SpanAlignment {
  std::size_t begin = 0;  // token index range [begin, end)
  std::size_t end = 0;
  // Non-whitespace bytes the covering tokens add around the span; a leading
  // space absorbed by a " word" token does not count.
  std::size_t expanded_bytes = 0;

  std::size_t size() const { return end - begin; }
};

SpanAlignment align_span(const Encoding& encoding, std::string_view text, ByteRange span);
SpanAlignment align_span(const TestSentence& sentence, const Tokenizer& tokenizer);

struct ScanCandidate {
  TestSentence sentence;  // full corpus line, span = the above-threshold run
  std::string context;    // run plus `window` tokens either side, for display
  float peak = 0.0f;      // max activation over the run
  std::size_t line = 0;   // 1-based corpus line
};

struct ScanResult {
  std::vector<ScanCandidate> candidates;
  std::size_t lines_read = 0;
  std::size_t lines_skipped = 0;  // longer than the model's context
};

// One sentence per line. Each maximal run of tokens with activation above
// `threshold` becomes one candidate; results come back in corpus order
// regardless of `threads`.
ScanResult scan_corpus(const Model& model, const NeuronRef& neuron, std::istream& corpus, float threshold,
                       std::size_t window, unsigned threads = 1);

enum class Label { Member, NonMember, Excluded };

struct AnnotatedSentence {
  TestSentence sentence;
  Label label = Label::NonMember;
  std::string source;  // "exclusion", "pattern", "enumerated", "annotator", "malformed-response"
};

// Labels candidates against `spec`. Pattern specs and enumerated positives
// never reach the annotator; other enumerated candidates are judged by it
// when present and are non-members otherwise. Text and spans are never
// modified.
std::vector<AnnotatedSentence> annotate(const std::vector<TestSentence>& candidates, const DenotationSpec& spec,
                                        const std::string& explanation, Annotator* annotator = nullptr);

}  // namespace neuroaudit
