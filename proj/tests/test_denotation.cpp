#include <limits>
#include <sstream>

#include "neuroaudit/annotator.hpp"
#include "neuroaudit/denotation.hpp"
#include "neuroaudit/error.hpp"
#include "neuroaudit/observational.hpp"
#include "support.hpp"

using namespace neuroaudit;
using testing_support::toy_model;

namespace {

std::vector<Explanation> parse(const std::string& text) {
  std::istringstream in(text);
  return parse_explanations(in);
}

std::string parse_error(const std::string& text) {
  try {
    parse(text);
  } catch (const FormatError& e) {
    return e.what();
  }
  return "";
}

int planted(const char* name) { return testing_support::planted()[name].get<int>(); }

ScanResult scan(const NeuronRef& n, const std::string& corpus, float threshold, unsigned threads = 1) {
  std::istringstream in(corpus);
  return scan_corpus(toy_model(), n, in, threshold, 2, threads);
}

// Records every request and answers from a fixed table.
class TableAnnotator : public Annotator {
 public:
  std::map<std::string, nlohmann::json> answers;
  std::vector<std::string> asked;
  AnnotatorReply judge(const AnnotatorRequest& r) override {
    asked.push_back(r.candidate);
    return parse_reply(answers.at(r.candidate));
  }
};

TestSentence sentence(const std::string& text, const std::string& word) {
  TestSentence s;
  s.text = text;
  s.span = {text.find(word), text.find(word) + word.size()};
  return s;
}

}  // namespace

TEST(Explanations, ParsesRecords) {
  const auto e = parse(R"({"layer": 5, "neuron": 131, "explanation": "days of the week", "score": 0.83})"
                       "\n\n");
  ASSERT_EQ(e.size(), 1u);
  EXPECT_EQ(e[0].layer, 5);
  EXPECT_EQ(e[0].neuron, 131);
  EXPECT_EQ(e[0].text, "days of the week");
  EXPECT_DOUBLE_EQ(e[0].score, 0.83);
  EXPECT_EQ(e[0].id(), "L5N131");
}

TEST(Explanations, EmptyCorpusIsEmpty) { EXPECT_TRUE(parse("").empty()); }

TEST(Explanations, CollectsEveryBadLineWithItsNumber) {
  const auto msg = parse_error(
      R"({"layer": 0, "neuron": 1, "explanation": "a", "score": 1.7})"
      "\n"
      R"({"layer": 0, "neuron": 2, "explanation": "b", "score": 0.1})"
      "\nnot json\n"
      R"({"layer": 0, "neuron": 2, "explanation": "c", "score": 0.2})"
      "\n");
  EXPECT_NE(msg.find("line 1"), std::string::npos) << msg;
  EXPECT_NE(msg.find("line 3"), std::string::npos) << msg;
  EXPECT_NE(msg.find("line 4"), std::string::npos) << msg;
  EXPECT_EQ(msg.find("line 2"), std::string::npos) << msg;
}

TEST(Denotation, EnumeratedMembershipIsExactAfterTrimming) {
  const auto years = DenotationSpec::enumerated({"2000", "2001", "2002", "2003"});
  EXPECT_TRUE(membership("2001", years));
  EXPECT_TRUE(membership("  2001 ", years));
  EXPECT_FALSE(membership("pizza", years));
  EXPECT_FALSE(membership("2004", years));
  const auto days = DenotationSpec::enumerated({"Monday morning"});
  EXPECT_TRUE(membership(" Monday \t morning", days));
  EXPECT_FALSE(membership("monday morning", days));
}

TEST(Denotation, PatternModeMatchesWholeString) {
  const auto an = DenotationSpec::pattern("an[a-z]*");
  EXPECT_TRUE(membership("answer", an));
  EXPECT_TRUE(membership("antique", an));
  EXPECT_FALSE(membership("banana", an));
  EXPECT_THROW(DenotationSpec::pattern("an[("), InvalidArgument);
}

TEST(Denotation, ExclusionsAlwaysLose) {
  const auto spec = DenotationSpec::pattern("[a-z]+", {"orange"});
  EXPECT_FALSE(membership("orange", spec));
  EXPECT_TRUE(spec.is_excluded(" orange "));
  EXPECT_THROW(DenotationSpec::enumerated({"red"}, {"red"}), InvalidArgument);
  EXPECT_THROW(DenotationSpec::enumerated({}), InvalidArgument);
}

TEST(Denotation, JsonRoundTrip) {
  const auto spec = DenotationSpec::pattern("an.*", {"and"});
  const auto back = DenotationSpec::from_json(spec.to_json());
  EXPECT_EQ(back.to_json(), spec.to_json());
  EXPECT_TRUE(membership("answer", back));
  EXPECT_FALSE(membership("and", back));
}

TEST(TestSets, FixtureSetsValidate) {
  for (const auto& entry : std::filesystem::directory_iterator(testing_support::toy_dir() / "testsets")) {
    const auto t = load_testset(entry.path());
    EXPECT_NO_THROW(t.validate());
    EXPECT_NO_THROW(t.validate_for_evaluation());
    EXPECT_EQ(to_json(parse_testset(to_json(t))), to_json(t));
  }
}

TEST(TestSets, InvalidSpansAndSplitsAreRejected) {
  TestSet t;
  t.explanation_id = "L0N1";
  t.sentences.push_back(sentence("The sky is blue", "blue"));
  t.sentences[0].span = {10, 30};
  EXPECT_THROW(t.validate(), Error);
  t.sentences[0] = sentence("The sky is blue", "blue");
  EXPECT_NO_THROW(t.validate());
  EXPECT_THROW(t.validate_for_evaluation(), Error);  // no type-2 probe
  auto dup = t.sentences[0];
  dup.split = Split::ProbeTrain;
  t.sentences.push_back(dup);
  EXPECT_THROW(t.validate(), Error);
}

TEST(AlignSpan, SingleTokenYear) {
  const auto s = sentence("The college opened in 2000", "2000");
  const auto a = align_span(s, toy_model().tokenizer());
  EXPECT_EQ(a.size(), 1u);
  EXPECT_EQ(a.expanded_bytes, 0u);  // the absorbed leading space is not counted
}

TEST(AlignSpan, MultiTokenWordCoversAllPieces) {
  const auto s = sentence("The doorknob is old", "doorknob");
  const auto enc = toy_model().tokenizer().encode(s.text);
  const auto a = align_span(enc, s.text, s.span);
  EXPECT_GT(a.size(), 1u);
  EXPECT_EQ(enc.offsets[a.begin].begin, 3u);
  EXPECT_EQ(enc.offsets[a.end - 1].end, 12u);
}

TEST(AlignSpan, MidTokenSpanExpandsAndCountsIt) {
  const auto s = sentence("I have music class", "usi");
  const auto a = align_span(s, toy_model().tokenizer());
  EXPECT_EQ(a.size(), 1u);
  EXPECT_EQ(a.expanded_bytes, 2u);  // "m" and "c"
}

TEST(AlignSpan, RangesAreMinimal) {
  std::mt19937_64 rng(5);
  const auto& tok = toy_model().tokenizer();
  const std::string text = "We usually go grocery shopping on Saturday, then eat pizza!";
  const auto enc = tok.encode(text);
  for (int i = 0; i < 500; ++i) {
    const std::size_t b = rng() % text.size();
    const std::size_t e = b + 1 + rng() % (text.size() - b);
    const auto a = align_span(enc, text, {b, e});
    EXPECT_LE(enc.offsets[a.begin].begin, b);
    EXPECT_GE(enc.offsets[a.end - 1].end, e);
    // dropping either end token would leave part of the span uncovered
    EXPECT_GT(enc.offsets[a.begin].end, b);
    EXPECT_LT(enc.offsets[a.end - 1].begin, e);
  }
}

TEST(Scan, FindsExactlyTheThursdaySentences) {
  const NeuronRef thursday{0, planted("thursday")};
  const std::string corpus =
      "My dog was born on Thursday\n"
      "The party was on Friday\n"
      "The sky is blue\n"
      "Thursday is the day\n"
      "\n"
      "We went to the park\n"
      "I see you on Thursday and on Thursday\n";
  const auto r = scan(thursday, corpus, 0.0f);
  ASSERT_EQ(r.candidates.size(), 4u);
  std::vector<std::size_t> lines;
  for (const auto& c : r.candidates) {
    lines.push_back(c.line);
    EXPECT_EQ(c.sentence.span_text(), "Thursday");
    EXPECT_EQ(c.sentence.origin, ProbeOrigin::Type2);
  }
  EXPECT_EQ(lines, (std::vector<std::size_t>{1, 4, 7, 7}));
  EXPECT_EQ(r.lines_read, 7u);
}

TEST(Scan, CandidatesRecheckAboveThresholdAndOrderIsThreadIndependent) {
  const std::string corpus = testing_support::read_file(testing_support::toy_dir() / "corpus.txt");
  for (const char* name : {"days", "colors", "days_or_colors", "year_2000"}) {
    const NeuronRef n{0, planted(name)};
    const auto one = scan(n, corpus, 0.0f, 1);
    const auto many = scan(n, corpus, 0.0f, 4);
    ASSERT_EQ(one.candidates.size(), many.candidates.size());
    for (std::size_t i = 0; i < one.candidates.size(); ++i) {
      const auto& c = one.candidates[i];
      EXPECT_EQ(c.sentence.text, many.candidates[i].sentence.text);
      EXPECT_EQ(c.sentence.span, many.candidates[i].sentence.span);
      const auto enc = toy_model().tokenizer().encode(c.sentence.text);
      const std::vector<NeuronRef> rec = {n};
      const auto trace = toy_model().forward(enc.ids, {.record = rec});
      const auto pooled = pooled_activation(trace, n, align_span(enc, c.sentence.text, c.sentence.span), 0.0);
      EXPECT_TRUE(pooled.fired) << name << ": " << c.sentence.text;
      EXPECT_FLOAT_EQ(static_cast<float>(pooled.value), c.peak);
    }
  }
}

TEST(Scan, EmptyResultsAndSkippedLines) {
  const std::string corpus = testing_support::read_file(testing_support::toy_dir() / "corpus.txt");
  const auto none = scan({0, planted("days")}, corpus, std::numeric_limits<float>::infinity());
  EXPECT_TRUE(none.candidates.empty());
  EXPECT_EQ(none.lines_skipped, 1u);
  const auto quiet = scan({0, planted("thursday")}, "The sky is blue\nWe ate lunch\n", 0.0f);
  EXPECT_TRUE(quiet.candidates.empty());
}

TEST(Annotate, ResolvesLocallyBeforeAskingTheAnnotator) {
  TableAnnotator ann;
  ann.answers["Monday"] = {{"member", false}};
  ann.answers["Friday"] = "related";
  ann.answers["Sunday"] = {{"verdict", "?"}};
  const auto spec = DenotationSpec::enumerated({"red", "blue"}, {"orange"});
  const std::vector<TestSentence> in = {sentence("The sky is blue", "blue"), sentence("The door is orange", "orange"),
                                        sentence("It is Monday", "Monday"), sentence("It is Friday", "Friday"),
                                        sentence("It is Sunday", "Sunday")};
  const auto out = annotate(in, spec, "colors", &ann);
  ASSERT_EQ(out.size(), 5u);
  EXPECT_EQ(out[0].label, Label::Member);
  EXPECT_EQ(out[0].source, "enumerated");
  EXPECT_EQ(out[1].label, Label::Excluded);
  EXPECT_EQ(out[1].source, "exclusion");
  EXPECT_EQ(out[2].label, Label::NonMember);
  EXPECT_EQ(out[3].label, Label::Member);
  EXPECT_EQ(out[3].source, "annotator");
  EXPECT_EQ(out[4].label, Label::Excluded);
  EXPECT_EQ(out[4].source, "malformed-response");
  EXPECT_EQ(ann.asked, (std::vector<std::string>{"Monday", "Friday", "Sunday"}));
  for (std::size_t i = 0; i < in.size(); ++i) {
    EXPECT_EQ(out[i].sentence.text, in[i].text);
    EXPECT_EQ(out[i].sentence.span, in[i].span);
  }
}

TEST(Annotate, PatternModeNeverCallsTheAnnotator) {
  TableAnnotator ann;
  const auto spec = DenotationSpec::pattern("an[a-z]*");
  const auto out = annotate({sentence("an antique clock", "antique"), sentence("a clock", "clock")}, spec, "an-words", &ann);
  EXPECT_EQ(out[0].label, Label::Member);
  EXPECT_EQ(out[1].label, Label::NonMember);
  EXPECT_TRUE(ann.asked.empty());
}

TEST(Annotate, WithoutAnnotatorUnknownsAreNonMembers) {
  const auto spec = DenotationSpec::enumerated({"red"});
  const auto out = annotate({sentence("It is Monday", "Monday")}, spec, "colors");
  EXPECT_EQ(out[0].label, Label::NonMember);
}
