#include "neuroaudit/toy_bundle.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"
#include "neuroaudit/annotator.hpp"
#include "neuroaudit/denotation.hpp"
#include "neuroaudit/error.hpp"
#include "neuroaudit/random.hpp"

namespace neuroaudit::toy {
namespace {

using nlohmann::json;

constexpr int kLayers = 2;
constexpr int kDim = 128;
constexpr int kHeads = 4;
constexpr int kMlp = 128;
constexpr int kPositions = 64;
constexpr float kEps = 1e-5f;

// residual-stream layout
constexpr int kIdentityDims = 16;  // [0, 16) random token identity
constexpr int kYearFlag = 16;
constexpr int kDayFlag = 17;
constexpr int kColorFlag = 18;
constexpr int kYearId = 24;   // [24, 64) one-hot fill-year identity
constexpr int kCode = 64;     // [64, 104) year code written by the mediators
constexpr int kDayId = 104;   // [104, 111)
constexpr int kColorId = 111; // [111, 117)
constexpr int kZeroRef = 126; // never written; read weights subtract it so they sum to zero

constexpr float kFlag = 4.0f;
constexpr float kId = 4.0f;

const std::vector<std::string> kDays = {"Monday", "Tuesday", "Wednesday", "Thursday", "Friday", "Saturday", "Sunday"};
const std::vector<std::string> kColors = {"red", "blue", "green", "yellow", "purple", "orange"};
const std::vector<std::string> kWords = {
    "year", "after", "before", "is", "was", "the", "a", "I", "have", "music", "class", "every", "evening",
    "on", "we", "went", "to", "park", "meeting", "party", "my", "dog", "cat", "pizza", "and", "it", "in",
    "of", "at", "sky", "sun", "car", "book", "wrote", "born", "next", "city", "likes", "see", "you", "door",
    "apple", "river", "bright", "dress", "paint", "wall", "morning", "lunch", "store", "will", "be", "open",
    "closed", "came", "he", "she", "they", "weekend", "house", "from", "game", "played", "train", "usually",
    "for", "grocery", "shopping", "painted", "wore", "her", "his", "old", "new", "started", "ended", "moved",
    "ate", "big", "small", "last", "first", "college", "team", "won", "school", "opened", "bought", "lost"};
const std::vector<std::string> kInitialWords = {"The", "I", "We", "My", "He", "She", "It", "They", "Our"};

std::string year_word(int year) { return std::to_string(year); }

struct Vocab {
  std::map<std::string, TokenId> ids;
  std::vector<std::string> merges;
};

// Left-to-right merge chains. Chains for space-prefixed words rank before all
// others so a leading "Ġ" always absorbs the next character first.
Vocab build_vocab(std::vector<std::string> spaced, const std::vector<std::string>& initial) {
  const auto table = byte_to_unicode_table();
  Vocab v;
  TokenId next = 0;
  for (int b = 0; b < 256; ++b) v.ids.emplace(table[b], next++);
  std::set<std::string> seen_merges;
  auto add_chain = [&](const std::string& word) {
    std::string prefix = table[static_cast<unsigned char>(word[0])];
    for (std::size_t i = 1; i < word.size(); ++i) {
      const std::string ch = table[static_cast<unsigned char>(word[i])];
      const std::string rule = prefix + " " + ch;
      prefix += ch;
      if (seen_merges.insert(rule).second) v.merges.push_back(rule);
      if (!v.ids.count(prefix)) v.ids.emplace(prefix, next++);
    }
  };
  for (const auto& w : spaced) add_chain(" " + w);
  for (const auto& w : initial) add_chain(w);
  return v;
}

std::vector<float> zero_sum_random(Rng& rng, float norm) {
  std::vector<float> r(kIdentityDims);
  for (auto& x : r) x = static_cast<float>(rng.normal());
  const float mean = std::accumulate(r.begin(), r.end(), 0.0f) / kIdentityDims;
  float sq = 0.0f;
  for (auto& x : r) {
    x -= mean;
    sq += x * x;
  }
  const float s = norm / std::sqrt(sq);
  for (auto& x : r) x *= s;
  return r;
}

// Standard deviation the engine's layer norm divides by.
float ln_scale(const std::vector<float>& x) {
  std::vector<float> row = x;
  float mean = 0.0f;
  for (float v : row) mean += v;
  mean /= static_cast<float>(row.size());
  float var = 0.0f;
  for (float v : row) var += (v - mean) * (v - mean);
  var /= static_cast<float>(row.size());
  return std::sqrt(var + kEps);
}

Tensor tensor(std::vector<std::int64_t> shape, float fill = 0.0f) {
  Tensor t;
  t.shape = std::move(shape);
  t.data.assign(t.numel(), fill);
  return t;
}

// Sets w[dim][col] and balances it against the zero-reference row.
void read_dim(Tensor& w, int cols, int dim, int col, float value) {
  w.data[static_cast<std::size_t>(dim) * cols + col] += value;
  w.data[static_cast<std::size_t>(kZeroRef) * cols + col] -= value;
}

}  // namespace

Bundle build() {
  Rng rng(20231016);
  std::vector<std::string> spaced = kWords;
  for (int y = 0; y <= kFillYears; ++y) spaced.push_back(year_word(kFirstYear + y));
  for (const auto& d : kDays) spaced.push_back(d);
  for (const auto& c : kColors) spaced.push_back(c);
  std::vector<std::string> initial = kInitialWords;
  for (const auto& d : kDays) initial.push_back(d);
  const Vocab vocab = build_vocab(spaced, initial);
  const int vocab_size = static_cast<int>(vocab.ids.size());

  Bundle bundle;
  bundle.config = {kLayers, kDim, kHeads, kMlp, vocab_size, kPositions, kEps};
  json vj = json::object();
  for (const auto& [sym, id] : vocab.ids) vj[sym] = id;
  bundle.vocab_json = vj.dump() + "\n";
  bundle.merges_txt = "#version: 0.2\n";
  for (const auto& m : vocab.merges) bundle.merges_txt += m + "\n";
  const Tokenizer tokenizer = Tokenizer::from_strings(bundle.vocab_json, bundle.merges_txt);
  auto single_token = [&](const std::string& text) {
    const auto enc = tokenizer.encode(text);
    if (enc.ids.size() != 1) throw Error("toy vocabulary does not encode '" + text + "' as one token");
    return enc.ids[0];
  };

  // token embeddings
  Tensor wte = tensor({vocab_size, kDim});
  auto row = [&](TokenId id) { return wte.data.begin() + static_cast<std::ptrdiff_t>(id) * kDim; };
  for (TokenId id = 0; id < vocab_size; ++id) {
    const auto r = zero_sum_random(rng, 8.0f);
    std::copy(r.begin(), r.end(), row(id));
  }
  auto set_kind = [&](TokenId id, int flag_dim, int id_dim) {
    const auto r = zero_sum_random(rng, 4.0f);
    std::fill(row(id), row(id) + kDim, 0.0f);
    std::copy(r.begin(), r.end(), row(id));
    row(id)[flag_dim] = kFlag;
    if (id_dim >= 0) row(id)[id_dim] = kId;
  };
  std::vector<TokenId> year_tokens;
  for (int y = 0; y <= kFillYears; ++y) {
    const TokenId id = single_token(" " + year_word(kFirstYear + y));
    year_tokens.push_back(id);
    set_kind(id, kYearFlag, y < kFillYears ? kYearId + y : -1);
  }
  for (std::size_t d = 0; d < kDays.size(); ++d) {
    set_kind(single_token(" " + kDays[d]), kDayFlag, kDayId + static_cast<int>(d));
    set_kind(single_token(kDays[d]), kDayFlag, kDayId + static_cast<int>(d));
  }
  for (std::size_t c = 0; c < kColors.size(); ++c)
    set_kind(single_token(" " + kColors[c]), kColorFlag, kColorId + static_cast<int>(c));
  for (const auto& w : kWords) single_token(" " + w);
  for (const auto& w : kInitialWords) single_token(w);

  auto embedding = [&](TokenId id) { return std::vector<float>(row(id), row(id) + kDim); };
  const float year_scale = ln_scale(embedding(year_tokens[0]));
  const float kind_scale = ln_scale(embedding(single_token(" Monday")));

  // neuron assignment
  std::vector<int> perm(kMlp);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);
  PlantedNeurons& planted = bundle.planted;
  planted.mediators.assign(perm.begin(), perm.begin() + kFillYears);
  planted.days = perm[kFillYears];
  planted.weekend = perm[kFillYears + 1];
  planted.thursday = perm[kFillYears + 2];
  planted.colors = perm[kFillYears + 3];
  planted.days_or_colors = perm[kFillYears + 4];
  planted.year_2000 = perm[kFillYears + 5];
  const std::set<int> planted_set(perm.begin(), perm.begin() + kFillYears + 6);

  TensorArchive& ar = bundle.archive;
  ar.add("wte.weight", wte);
  ar.add("wpe.weight", tensor({kPositions, kDim}));

  // Layer 0: silent attention, planted MLP.
  Tensor fc0 = tensor({kDim, kMlp});
  Tensor fc0_b = tensor({kMlp});
  Tensor fc0_proj = tensor({kMlp, kDim});
  constexpr float kMediatorOff = -8.0f, kMediatorOther = 0.5f, kMediatorOwn = 3.0f;
  for (int j = 0; j < kFillYears; ++j) {
    const int n = planted.mediators[j];
    read_dim(fc0, kMlp, kYearFlag, n, (kMediatorOther - kMediatorOff) * year_scale / kFlag);
    read_dim(fc0, kMlp, kYearId + j, n, (kMediatorOwn - kMediatorOther) * year_scale / kId);
    fc0_b.data[n] = kMediatorOff;
    fc0_proj.data[static_cast<std::size_t>(n) * kDim + kCode + j] = 1.0f;
  }
  // planted observational neurons: +2 on a hit, -2 otherwise
  auto plant = [&](int n, std::vector<int> dims, float scale) {
    for (int d : dims) read_dim(fc0, kMlp, d, n, 4.0f * scale / kFlag);
    fc0_b.data[n] = -2.0f;
  };
  plant(planted.days, {kDayFlag}, kind_scale);
  plant(planted.weekend, {kDayId + 5, kDayId + 6}, kind_scale);
  plant(planted.thursday, {kDayId + 3}, kind_scale);
  plant(planted.colors, {kColorFlag}, kind_scale);
  plant(planted.days_or_colors, {kDayFlag, kColorFlag}, kind_scale);
  plant(planted.year_2000, {kYearId}, year_scale);
  for (int n = 0; n < kMlp; ++n) {
    if (planted_set.count(n)) continue;
    for (int d = 0; d < kIdentityDims; ++d) read_dim(fc0, kMlp, d, n, static_cast<float>(0.35 * rng.normal()));
    fc0_b.data[n] = static_cast<float>(-0.3 + 0.4 * rng.normal());
  }

  // Residual at the year position entering layer 1, for calibrating the copy.
  std::vector<float> year_resid = embedding(year_tokens[0]);
  for (int j = 0; j < kFillYears; ++j) year_resid[kCode + j] = detail::gelu(j == 0 ? kMediatorOwn : kMediatorOther);
  const float resid_scale = ln_scale(year_resid);

  // Layer 1: every head attends to the year position and copies the code.
  Tensor attn1 = tensor({kDim, 3 * kDim});
  Tensor attn1_b = tensor({3 * kDim});
  Tensor proj1 = tensor({kDim, kDim});
  const int head_dim = kDim / kHeads;
  constexpr float kTargetScore = 30.0f;
  const float query = kTargetScore * std::sqrt(static_cast<float>(head_dim)) * resid_scale / kFlag;
  const int code_per_head = (kFillYears + kHeads - 1) / kHeads;
  for (int h = 0; h < kHeads; ++h) {
    attn1_b.data[h * head_dim] = query;
    read_dim(attn1, 3 * kDim, kYearFlag, kDim + h * head_dim, 1.0f);
    for (int i = 0; i < code_per_head; ++i) {
      const int code = h * code_per_head + i;
      if (code >= kFillYears) break;
      read_dim(attn1, 3 * kDim, kCode + code, 2 * kDim + h * head_dim + i, 1.0f);
      proj1.data[static_cast<std::size_t>(h * head_dim + i) * kDim + kCode + code] = 1.0f;
    }
  }
  Tensor fc1 = tensor({kDim, kMlp});
  Tensor fc1_b = tensor({kMlp});
  for (int n = 0; n < kMlp; ++n) {
    for (int d = 0; d < kIdentityDims; ++d) read_dim(fc1, kMlp, d, n, static_cast<float>(0.25 * rng.normal()));
    fc1_b.data[n] = static_cast<float>(0.3 * rng.normal());
  }

  // Unembedding: code j -> token for year 2001 + j, with a small per-row
  // jitter so exact ties between equal codes resolve pseudo-randomly.
  std::vector<float> last_resid = embedding(single_token(" is"));
  for (int j = 0; j < kFillYears; ++j) last_resid[kCode + j] = year_resid[kCode + j] / resid_scale;
  const float last_scale = ln_scale(last_resid);
  Tensor lm = tensor({vocab_size, kDim});
  constexpr float kTargetLogit = 12.0f;
  for (int j = 0; j < kFillYears; ++j) {
    const float jitter = 1.0f + 0.02f * static_cast<float>(2.0 * rng.uniform() - 1.0);
    const float gain = jitter * kTargetLogit * resid_scale * last_scale / detail::gelu(kMediatorOwn);
    const TokenId answer = year_tokens[j + 1];
    lm.data[static_cast<std::size_t>(answer) * kDim + kCode + j] = gain;
    lm.data[static_cast<std::size_t>(answer) * kDim + kZeroRef] = -gain;
  }

  for (int l = 0; l < kLayers; ++l) {
    const std::string h = "h." + std::to_string(l) + ".";
    ar.add(h + "ln_1.weight", tensor({kDim}, 1.0f));
    ar.add(h + "ln_1.bias", tensor({kDim}));
    ar.add(h + "ln_2.weight", tensor({kDim}, 1.0f));
    ar.add(h + "ln_2.bias", tensor({kDim}));
    ar.add(h + "attn.c_proj.bias", tensor({kDim}));
    ar.add(h + "mlp.c_proj.bias", tensor({kDim}));
  }
  ar.add("h.0.attn.c_attn.weight", tensor({kDim, 3 * kDim}));
  ar.add("h.0.attn.c_attn.bias", tensor({3 * kDim}));
  ar.add("h.0.attn.c_proj.weight", tensor({kDim, kDim}));
  ar.add("h.0.mlp.c_fc.weight", fc0);
  ar.add("h.0.mlp.c_fc.bias", fc0_b);
  ar.add("h.0.mlp.c_proj.weight", fc0_proj);
  ar.add("h.1.attn.c_attn.weight", attn1);
  ar.add("h.1.attn.c_attn.bias", attn1_b);
  ar.add("h.1.attn.c_proj.weight", proj1);
  ar.add("h.1.mlp.c_fc.weight", fc1);
  ar.add("h.1.mlp.c_fc.bias", fc1_b);
  ar.add("h.1.mlp.c_proj.weight", tensor({kMlp, kDim}));
  ar.add("ln_f.weight", tensor({kDim}, 1.0f));
  ar.add("ln_f.bias", tensor({kDim}));
  ar.add("lm_head.weight", lm);
  return bundle;
}

Model make_model(const Bundle& bundle) {
  return Model(bundle.archive, bundle.config, Tokenizer::from_strings(bundle.vocab_json, bundle.merges_txt));
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

std::string explanation_line(int layer, int neuron, const std::string& text, double score) {
  return json{{"layer", layer}, {"neuron", neuron}, {"explanation", text}, {"score", score}}.dump() + "\n";
}

struct SetBuilder {
  TestSet set;

  void add(const std::string& text, const std::string& word, bool member, ProbeOrigin origin, Split split) {
    const auto at = text.find(word);
    if (at == std::string::npos) throw Error("fixture sentence '" + text + "' lacks '" + word + "'");
    TestSentence s;
    s.text = text;
    s.span = {at, at + word.size()};
    s.claimed_member = member;
    s.origin = origin;
    s.split = split;
    set.sentences.push_back(std::move(s));
  }
  void member(const std::string& text, const std::string& word, Split split = Split::Evaluate) {
    add(text, word, true, ProbeOrigin::Type1, split);
  }
  void other(const std::string& text, const std::string& word, Split split = Split::Evaluate) {
    add(text, word, false, ProbeOrigin::Type2, split);
  }
};

std::string id_of(int neuron) { return "L0N" + std::to_string(neuron); }

}  // namespace

void write_bundle(const std::filesystem::path& dir) {
  const Bundle bundle = build();
  const PlantedNeurons& p = bundle.planted;
  std::filesystem::create_directories(dir);
  bundle.archive.write(dir / "model.bin");
  write_text(dir / "vocab.json", bundle.vocab_json);
  write_text(dir / "merges.txt", bundle.merges_txt);
  write_text(dir / "config.json", bundle.config.to_json_text());

  // task registry: one task the model solves, one it never does
  json successor = {{"name", "year_successor"},
                    {"template", "The year after {Y} is"},
                    {"site_policy", "by_layer"},
                    {"layer_band", {0, 0}},
                    {"concept", "year"}};
  json before = {{"name", "year_predecessor"},
                 {"template", "The year before {Y} is"},
                 {"site_policy", "by_layer"},
                 {"layer_band", {0, 0}},
                 {"concept", "year"}};
  for (int y = kFirstYear; y < kFirstYear + kFillYears; ++y) {
    successor["fills"].push_back(year_word(y));
    successor["expected"][year_word(y)] = " " + year_word(y + 1);
    if (y == kFirstYear) continue;
    before["fills"].push_back(year_word(y));
    before["expected"][year_word(y)] = " " + year_word(y - 1);
  }
  write_text(dir / "tasks.json", json{{"tasks", {successor, before}}}.dump(2) + "\n");

  json planted = {{"layer", 0},
                  {"mediators", p.mediators},
                  {"days", p.days},
                  {"weekend", p.weekend},
                  {"thursday", p.thursday},
                  {"colors", p.colors},
                  {"days_or_colors", p.days_or_colors},
                  {"year_2000", p.year_2000}};
  write_text(dir / "mediators.json", planted.dump(2) + "\n");

  // audited explanations
  const std::string days_text = "days of the week";
  const std::string year_text = "years between 2000 and 2003";
  const std::string colors_text = "colors";
  write_text(dir / "explanations.jsonl", explanation_line(0, p.days, days_text, 0.83) +
                                             explanation_line(0, p.year_2000, year_text, 0.61) +
                                             explanation_line(0, p.days_or_colors, colors_text, 0.72));

  // an explanation for every layer-0 neuron, for ranking and similarity
  Rng rng(7);
  const std::vector<std::string> generic = {
      "words at the start of a sentence", "common function words", "nouns for animals",
      "verbs in the past tense",          "food and meals",        "places in a city",
      "the word is",                      "punctuation-like short tokens", "names of vehicles",
      "years and dates in news text"};
  std::map<int, std::pair<std::string, double>> corpus;
  for (int j = 0; j < kFillYears; ++j)
    corpus[p.mediators[j]] = {"the year " + year_word(kFirstYear + j) + " in dates", 0.3 + 0.5 * rng.uniform()};
  corpus[p.days] = {days_text, 0.83};
  corpus[p.weekend] = {"weekend days such as Saturday and Sunday", 0.77};
  corpus[p.thursday] = {"Thursday, a day of the week", 0.74};
  corpus[p.colors] = {"color words such as red and blue", 0.8};
  corpus[p.days_or_colors] = {colors_text, 0.72};
  corpus[p.year_2000] = {year_text, 0.61};
  for (int n = 0; n < bundle.config.d_mlp; ++n) {
    if (corpus.count(n)) continue;
    const auto& text = generic[rng.below(generic.size())];
    // the misleading "years" explanations get high confidence on purpose
    const double score = text.find("year") != std::string::npos ? 0.85 + 0.1 * rng.uniform() : 0.5 * rng.uniform();
    corpus[n] = {text, score};
  }
  std::string lines;
  for (const auto& [n, entry] : corpus) lines += explanation_line(0, n, entry.first, std::round(entry.second * 1000) / 1000);
  write_text(dir / "layer0_explanations.jsonl", lines);

  // test sets
  SetBuilder days;
  days.set.explanation_id = id_of(p.days);
  days.set.explanation = days_text;
  days.set.denotation = DenotationSpec::enumerated(
      {"Monday", "Tuesday", "Wednesday", "Thursday", "Friday", "Saturday", "Sunday"});
  days.member("I have music class every Monday", "Monday");
  days.member("The party was on Tuesday", "Tuesday");
  days.member("We went to the park on Wednesday", "Wednesday");
  days.member("My dog was born on Thursday", "Thursday");
  days.member("The store will be closed on Friday", "Friday");
  days.member("We usually go grocery shopping on Saturday", "Saturday");
  days.member("The game is on Sunday", "Sunday");
  days.other("The sky is blue", "blue");
  days.other("I wore her red dress", "red");
  days.other("The weekend was long", "weekend");
  days.other("We went to the park", "park");
  days.other("She likes pizza", "pizza");
  days.member("He came on Monday", "Monday", Split::ProbeTrain);
  days.member("The meeting is on Friday", "Friday", Split::ProbeTrain);
  days.member("The party is on Saturday", "Saturday", Split::ProbeTrain);
  days.member("I see you on Sunday", "Sunday", Split::ProbeTrain);
  days.other("The car is green", "green", Split::ProbeTrain);
  days.other("The cat ate lunch", "lunch", Split::ProbeTrain);
  days.other("The book was new", "new", Split::ProbeTrain);
  days.other("The river is big", "big", Split::ProbeTrain);

  SetBuilder years;
  years.set.explanation_id = id_of(p.year_2000);
  years.set.explanation = year_text;
  years.set.denotation = DenotationSpec::enumerated({"2000", "2001", "2002", "2003"});
  years.member("The college opened in 2000", "2000");
  years.member("The team won in 2001", "2001");
  years.member("She was born in 2002", "2002");
  years.member("We moved in 2003", "2003");
  years.member("The house was new in 2000", "2000");
  years.member("He wrote a book in 2002", "2002");
  years.other("The store opened in 2010", "2010");
  years.other("The dog was born in 2025", "2025");
  years.other("I went to the park", "park");
  years.other("The sky was bright", "bright");
  years.member("The game was in 2000", "2000", Split::ProbeTrain);
  years.member("It ended in 2001", "2001", Split::ProbeTrain);
  years.member("The car was new in 2003", "2003", Split::ProbeTrain);
  years.other("It started in 2020", "2020", Split::ProbeTrain);
  years.other("The city was old", "old", Split::ProbeTrain);
  years.other("They won in 2035", "2035", Split::ProbeTrain);

  SetBuilder colors;
  colors.set.explanation_id = id_of(p.days_or_colors);
  colors.set.explanation = colors_text;
  colors.set.denotation = DenotationSpec::enumerated({"red", "blue", "green", "yellow", "purple", "orange"});
  colors.member("The sky is blue", "blue");
  colors.member("I wore her red dress", "red");
  colors.member("The car is green", "green");
  colors.member("The sun is yellow", "yellow");
  colors.member("She painted the wall purple", "purple");
  colors.member("The door is orange", "orange");
  colors.other("Our meeting is on Monday", "Monday");
  colors.other("The party was on Friday", "Friday");
  colors.other("I have music class every Thursday", "Thursday");
  colors.other("We went to the park", "park");
  colors.other("The cat ate pizza", "pizza");
  colors.member("The apple is red", "red", Split::ProbeTrain);
  colors.member("The dress was blue", "blue", Split::ProbeTrain);
  colors.member("His book is green", "green", Split::ProbeTrain);
  colors.other("The game is on Sunday", "Sunday", Split::ProbeTrain);
  colors.other("The river is big", "big", Split::ProbeTrain);
  colors.other("We ate lunch", "lunch", Split::ProbeTrain);

  for (const SetBuilder* b : {&days, &years, &colors}) {
    b->set.validate();
    write_text(dir / "testsets" / (b->set.explanation_id + ".json"), to_json(b->set).dump(2) + "\n");
  }

  // scan corpus for the days-or-colors neuron, with one over-long line
  std::string corpus_text =
      "The sky is blue\n"
      "We went to the park on Monday\n"
      "The cat ate lunch\n"
      "She wore her purple dress and he wore red\n"
      "The store will be closed on Friday\n"
      "The river is big\n"
      "The door is orange\n"
      "My dog was born in 2000\n"
      "The game is on Sunday\n";
  std::string long_line = "The";
  for (int i = 0; i < 70; ++i) long_line += " city";
  corpus_text += long_line + "\n";
  corpus_text += "The car is green\n";
  write_text(dir / "corpus.txt", corpus_text);

  // replay fixture: the annotator's answers for every scanned candidate it
  // will be asked about, one of them deliberately malformed
  const std::string scan_text = "colors";
  const DenotationSpec scan_spec =
      DenotationSpec::enumerated({"red", "blue", "green", "yellow", "purple"}, {"orange"});
  const Model model = make_model(bundle);
  std::istringstream corpus_in(corpus_text);
  const ScanResult scan = scan_corpus(model, {0, p.days_or_colors}, corpus_in, 0.0f, 3);
  json fixture = json::object();
  for (const auto& c : scan.candidates) {
    const std::string q = c.sentence.span_text();
    if (scan_spec.is_excluded(q) || scan_spec.contains(q)) continue;
    const std::string hash = request_hash({scan_text, q});
    fixture[hash] = q == "Friday" ? json{{"verdict", "perhaps"}} : json{{"member", false}};
  }
  write_text(dir / "annotator_fixture.json", fixture.dump(2) + "\n");

  json audit = {
      {"model", {{"archive", "model.bin"}, {"vocab", "vocab.json"}, {"merges", "merges.txt"}, {"config", "config.json"}}},
      {"explanations", "explanations.jsonl"},
      {"ranking_explanations", "layer0_explanations.jsonl"},
      {"testsets", "testsets"},
      {"tasks", "tasks.json"},
      {"threshold", 0.0},
      {"seeds", {0, 1}},
      {"ks", {1, 6, 12, 25, 50, 75, 100}},
      {"n_pairs", 256},
      {"neuron_counts", {1, 2, 4}},
      {"probe", {{"l2", 1e-3}, {"threshold_policy", "max_f1"}}},
      {"scan",
       {{"layer", 0},
        {"neuron", p.days_or_colors},
        {"corpus", "corpus.txt"},
        {"threshold", 0.0},
        {"window", 3},
        {"explanation", scan_text},
        {"denotation", scan_spec.to_json()}}},
      {"demo", {{"frequency", 0.01}, {"trials", 1000}, {"seed", 7}}},
      {"annotator", {{"mode", "replay"}, {"fixture", "annotator_fixture.json"}}},
      {"out", "out"}};
  write_text(dir / "audit.json", audit.dump(2) + "\n");
}

}  // namespace neuroaudit::toy
