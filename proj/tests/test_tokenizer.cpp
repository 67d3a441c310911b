#include "neuroaudit/error.hpp"
#include "neuroaudit/tokenizer.hpp"
#include "support.hpp"

using namespace neuroaudit;
using nlohmann::json;

namespace {

const Tokenizer& toy_tokenizer() { return testing_support::toy_model().tokenizer(); }

std::string minimal_vocab(const std::vector<std::pair<std::string, int>>& extra = {}) {
  const auto table = byte_to_unicode_table();
  json v = json::object();
  for (int b = 0; b < 256; ++b) v[table[b]] = b;
  for (const auto& [s, id] : extra) v[s] = id;
  return v.dump();
}

}  // namespace

TEST(Tokenizer, MatchesHuggingFaceGpt2Tokenizer) {
  const json cases = testing_support::read_json(testing_support::reference_dir() / "tokenizer_cases.json");
  ASSERT_GT(cases.size(), 400u);
  std::size_t checked = 0;
  for (const auto& c : cases) {
    const std::string text = c["text"];
    const auto ids = toy_tokenizer().encode(text).ids;
    EXPECT_EQ(ids, c["ids"].get<std::vector<TokenId>>()) << "text: \"" << text << "\"";
    ++checked;
  }
  EXPECT_EQ(checked, cases.size());
}

TEST(Tokenizer, RoundTripsRandomByteStrings) {
  std::mt19937_64 rng(42);
  const Tokenizer& tok = toy_tokenizer();
  for (int i = 0; i < 10000; ++i) {
    std::string s(rng() % 40, '\0');
    for (auto& c : s) {
      // bias toward ASCII and spaces so merges fire, but cover every byte
      const auto r = rng() % 4;
      c = static_cast<char>(r == 0 ? rng() % 256 : r == 1 ? ' ' : 'a' + rng() % 26);
    }
    const auto enc = tok.encode(s);
    ASSERT_EQ(tok.decode(enc.ids), s);
    ASSERT_EQ(enc.ids.size(), enc.offsets.size());
    std::size_t cursor = 0;
    for (std::size_t t = 0; t < enc.ids.size(); ++t) {
      ASSERT_EQ(enc.offsets[t].begin, cursor);
      ASSERT_GT(enc.offsets[t].size(), 0u);
      ASSERT_EQ(tok.token_bytes(enc.ids[t]), s.substr(enc.offsets[t].begin, enc.offsets[t].size()));
      ASSERT_LT(enc.ids[t], static_cast<TokenId>(tok.vocab_size()));
      cursor = enc.offsets[t].end;
    }
    ASSERT_EQ(cursor, s.size());
  }
}

TEST(Tokenizer, EmptyInputGivesNothing) {
  const auto enc = toy_tokenizer().encode("");
  EXPECT_TRUE(enc.ids.empty());
  EXPECT_TRUE(enc.offsets.empty());
}

TEST(Tokenizer, LeadingSpaceWordIsOneToken) {
  const auto enc = toy_tokenizer().encode(" Wednesday");
  ASSERT_EQ(enc.ids.size(), 1u);
  EXPECT_EQ(enc.offsets[0], (ByteRange{0, 10}));
  EXPECT_EQ(toy_tokenizer().token_symbol(enc.ids[0]), "\xC4\xA0Wednesday");
}

TEST(Tokenizer, YearRoundTrips) {
  const auto enc = toy_tokenizer().encode("2000");
  EXPECT_EQ(toy_tokenizer().decode(enc.ids), "2000");
}

TEST(Tokenizer, PretokenizerFollowsGpt2Rules) {
  const std::string text = "It's 12 cats  here!\n";
  std::vector<std::string> pieces;
  for (const auto& r : Tokenizer::pretokenize(text)) pieces.push_back(text.substr(r.begin, r.size()));
  EXPECT_EQ(pieces, (std::vector<std::string>{"It", "'s", " 12", " cats", " ", " here", "!", "\n"}));
}

TEST(Tokenizer, RejectsVocabularyWithoutEveryByte) {
  const auto table = byte_to_unicode_table();
  json v = json::object();
  for (int b = 0; b < 255; ++b) v[table[b]] = b;
  EXPECT_THROW(Tokenizer::from_strings(v.dump(), ""), FormatError);
}

TEST(Tokenizer, ReportsMalformedMergeLineNumber) {
  try {
    Tokenizer::from_strings(minimal_vocab(), "#version: 0.2\na b\nbroken\n");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
}

TEST(Tokenizer, RejectsDuplicateIds) {
  EXPECT_THROW(Tokenizer::from_strings(minimal_vocab({{"ab", 5}}), ""), FormatError);
}

TEST(Tokenizer, AppliesMergesByRank) {
  const auto tok = Tokenizer::from_strings(minimal_vocab({{"ab", 256}, {"abc", 257}, {"bc", 258}}), "a b\nab c\nb c\n");
  EXPECT_EQ(tok.encode("abc").ids, (std::vector<TokenId>{257}));
  EXPECT_EQ(tok.encode("bc").ids, (std::vector<TokenId>{258}));
}
