#include <cmath>
#include <cstdlib>

#include "neuroaudit/tensor_archive.hpp"
#include "support.hpp"

using namespace neuroaudit;
namespace fs = std::filesystem;

TEST(Fixtures, ToyBundleRegeneratesByteForByte) {
  testing_support::TempDir dir("regen");
  toy::write_bundle(dir.path());
  std::size_t compared = 0;
  for (const auto& e : fs::recursive_directory_iterator(testing_support::toy_dir())) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), testing_support::toy_dir());
    ASSERT_TRUE(fs::exists(dir.path() / rel)) << rel;
    EXPECT_EQ(testing_support::read_file(e.path()), testing_support::read_file(dir.path() / rel)) << rel;
    ++compared;
  }
  std::size_t generated = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir.path())) generated += e.is_regular_file();
  EXPECT_EQ(compared, generated);
}

TEST(Fixtures, PlantedMetadataMatchesTheBuiltModel) {
  const auto bundle = toy::build();
  const auto planted = testing_support::planted();
  EXPECT_EQ(planted["mediators"].get<std::vector<int>>(), bundle.planted.mediators);
  EXPECT_EQ(planted["days"].get<int>(), bundle.planted.days);
  EXPECT_EQ(planted["thursday"].get<int>(), bundle.planted.thursday);
  EXPECT_EQ(planted["year_2000"].get<int>(), bundle.planted.year_2000);
}

// Full-size checkpoint converted by the asset scripts. Point NEUROAUDIT_GPT2_DIR
// at a directory with model.bin, config.json, vocab.json, merges.txt,
// golden.bin and prompts.json.
TEST(Fixtures, Gpt2SmallMatchesGoldenLogits) {
  const char* env = std::getenv("NEUROAUDIT_GPT2_DIR");
  const fs::path dir = env ? fs::path(env) : testing_support::fixtures() / "gpt2";
  if (!fs::exists(dir / "golden.bin")) GTEST_SKIP() << "no GPT-2 fixtures at " << dir;
  const auto model = testing_support::load_dir(dir);
  const auto golden = TensorArchive::read(dir / "golden.bin");
  const auto prompts = testing_support::read_json(dir / "prompts.json");
  const std::size_t V = model.config().vocab_size;
  for (std::size_t p = 0; p < prompts.size(); ++p) {
    const auto key = "prompt." + std::to_string(p) + ".";
    const auto ids = model.tokenizer().encode(prompts[p].get<std::string>()).ids;
    const auto trace = model.forward(ids);
    const auto& logits = golden.at(key + "logits").data;
    ASSERT_EQ(logits.size(), ids.size() * V) << p;
    float worst = 0.0f;
    for (std::size_t t = 0; t < ids.size(); ++t) {
      const auto row = trace.logits_at(t);
      for (std::size_t v = 0; v < V; ++v) worst = std::max(worst, std::abs(row[v] - logits[t * V + v]));
    }
    EXPECT_LT(worst, 1e-3f) << "prompt " << p;
  }
}
