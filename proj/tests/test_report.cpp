#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <sstream>

#include "neuroaudit/error.hpp"
#include "neuroaudit/report.hpp"
#include "support.hpp"

using namespace neuroaudit;
using nlohmann::json;
namespace fs = std::filesystem;
using testing_support::read_file;
using testing_support::read_json;
using testing_support::TempDir;

namespace {

int cli(const std::string& args) {
  const std::string cmd = std::string(NEUROAUDIT_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// A private copy of the toy bundle whose audit config can be edited.
class Bundle {
 public:
  Bundle() : dir_("bundle") {
    fs::copy(testing_support::toy_dir(), dir_.path(), fs::copy_options::recursive);
  }
  fs::path path() const { return dir_.path(); }
  fs::path config() const { return dir_.path() / "audit.json"; }
  fs::path out() const { return dir_.path() / "out"; }
  void edit(const std::function<void(json&)>& f) const {
    json j = read_json(config());
    f(j);
    std::ofstream(config()) << j.dump(2);
  }
  int run(const std::string& verb, const std::string& extra = "") const {
    return cli(verb + " --config " + config().string() + " " + extra);
  }

 private:
  TempDir dir_;
};

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = read_file(e.path());
  return files;
}

struct CsvRow {
  std::string method;
  double k = 0, value = 0;
};

std::vector<CsvRow> read_csv(const fs::path& p, std::size_t value_column) {
  std::istringstream in(read_file(p));
  std::string line;
  std::getline(in, line);
  std::vector<CsvRow> rows;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    rows.push_back({cells.at(0), std::stod(cells.at(1)), std::stod(cells.at(value_column))});
  }
  return rows;
}

void small_intervention(const Bundle& b, std::vector<double> ks = {1, 25, 100}) {
  b.edit([&](json& j) {
    j["ks"] = ks;
    j["n_pairs"] = 64;
  });
}

}  // namespace

TEST(Cli, ObserveOutputsAreConsistentAndThreadIndependent) {
  Bundle b;
  ASSERT_EQ(b.run("observe", "--threads 1 --out " + (b.path() / "one").string()), 0);
  ASSERT_EQ(b.run("observe", "--threads 4 --out " + (b.path() / "four").string()), 0);
  ASSERT_EQ(b.run("observe", "--threads 1 --out " + (b.path() / "again").string()), 0);
  const auto one = tree(b.path() / "one");
  EXPECT_EQ(one, tree(b.path() / "four"));
  EXPECT_EQ(one, tree(b.path() / "again"));

  const auto summary = read_json(b.path() / "one" / "observe" / "summary.json");
  double f1 = 0, precision = 0;
  std::size_t n = 0;
  for (const auto& e : summary["explanations"]) {
    const auto per = read_json(b.path() / "one" / "observe" / (e["id"].get<std::string>() + ".json"));
    EXPECT_EQ(per["f1"], e["f1"]);
    f1 += per["f1"].get<double>();
    precision += per["precision"].get<double>();
    ++n;
  }
  ASSERT_EQ(n, 3u);
  EXPECT_NEAR(summary["means"]["f1"].get<double>(), f1 / n, 1e-12);
  EXPECT_NEAR(summary["means"]["precision"].get<double>(), precision / n, 1e-12);
}

TEST(Cli, MissingTestSetIsSkipped) {
  Bundle b;
  fs::remove(b.path() / "testsets" / "L0N23.json");
  ASSERT_EQ(b.run("observe"), 0);
  const auto summary = read_json(b.out() / "observe" / "summary.json");
  EXPECT_EQ(summary["explanations"].size(), 2u);
  EXPECT_NE(summary.dump().find("L0N23"), std::string::npos);  // listed as skipped
  EXPECT_FALSE(fs::exists(b.out() / "observe" / "L0N23.json"));
}

TEST(Cli, ExitCodes) {
  Bundle b;
  EXPECT_EQ(cli("observe"), 1);  // --config is required
  EXPECT_EQ(cli("observe --config " + (b.path() / "nope.json").string()), 1);
  EXPECT_EQ(cli("frobnicate --config " + b.config().string()), 1);
  b.edit([](json& j) { j.erase("explanations"); });
  EXPECT_EQ(b.run("observe"), 1);
  EXPECT_EQ(b.run("report"), 1);  // nothing to report yet
  Bundle c;
  std::ofstream(c.path() / "model.bin", std::ios::trunc) << "garbage";
  EXPECT_EQ(c.run("observe"), 2);
}

TEST(Cli, InterveneSummaryAgreesWithPerSeedCsv) {
  Bundle b;
  small_intervention(b);
  ASSERT_EQ(b.run("intervene", "--threads 4"), 0);
  const fs::path task = b.out() / "intervene" / "year_successor";
  const auto s0 = read_csv(task / "seed_0.csv", 2);
  const auto s1 = read_csv(task / "seed_1.csv", 2);
  const auto summary = read_csv(task / "summary.csv", 2);
  ASSERT_EQ(s0.size(), 9u);
  ASSERT_EQ(summary.size(), s0.size());
  for (std::size_t i = 0; i < summary.size(); ++i) {
    EXPECT_EQ(summary[i].method, s0[i].method);
    EXPECT_NEAR(summary[i].value, 0.5 * (s0[i].value + s1[i].value), 1e-12);
    if (summary[i].k == 100) {
      EXPECT_EQ(summary[i].value, 1.0);
    }
  }
  const auto overall = read_json(b.out() / "intervene" / "summary.json");
  EXPECT_NE(overall.dump().find("year_predecessor"), std::string::npos);  // skipped as unusable
}

TEST(Cli, InterveneIsByteIdenticalAcrossThreadCounts) {
  Bundle b;
  small_intervention(b, {6, 50});
  ASSERT_EQ(b.run("intervene", "--seed 3 --threads 1 --out " + (b.path() / "a").string()), 0);
  ASSERT_EQ(b.run("intervene", "--seed 3 --threads 6 --out " + (b.path() / "b").string()), 0);
  EXPECT_EQ(tree(b.path() / "a"), tree(b.path() / "b"));
}

TEST(Cli, FullPoolGivesTheSameIiaForEveryRanking) {
  Bundle b;
  small_intervention(b, {100});
  ASSERT_EQ(b.run("intervene", "--seed 5"), 0);
  const auto rows = read_csv(b.out() / "intervene" / "year_successor" / "seed_5.csv", 2);
  ASSERT_EQ(rows.size(), 3u);
  for (const auto& r : rows) EXPECT_EQ(r.value, rows[0].value);
}

TEST(Cli, UnusableTaskCountsAreReportedNotFatal) {
  Bundle b;
  small_intervention(b, {100});
  b.edit([](json& j) { j["tasks"] = "only_bad.json"; });
  json tasks = read_json(b.path() / "tasks.json");
  tasks["tasks"].erase(0);
  std::ofstream(b.path() / "only_bad.json") << tasks.dump();
  EXPECT_EQ(b.run("intervene"), 0);
  EXPECT_TRUE(fs::exists(b.out() / "intervene" / "summary.md"));
}

TEST(Cli, ScanAndProbeAndDemo) {
  Bundle b;
  ASSERT_EQ(b.run("scan"), 0);
  const auto candidates = read_json(b.out() / "scan" / "candidates.json");
  EXPECT_FALSE(candidates["candidates"].empty());
  ASSERT_EQ(b.run("probe-train"), 0);
  EXPECT_TRUE(fs::exists(b.out() / "probe" / "summary.json"));
  ASSERT_EQ(b.run("demo-score"), 0);
  const auto demo = read_json(b.out() / "demo" / "insensitivity.json");
  EXPECT_EQ(demo["precision"], 0.5);
  b.edit([](json& j) { j["demo"]["frequency"] = 0.0; });
  ASSERT_EQ(b.run("demo-score"), 0);
  EXPECT_EQ(read_json(b.out() / "demo" / "insensitivity.json")["perfect_fraction"], 1.0);
  ASSERT_EQ(b.run("report"), 0);
  const auto report = read_json(b.out() / "report.json");
  for (const char* part : {"scan", "probe-train", "demo-score"}) EXPECT_TRUE(report.contains(part)) << part;
}

TEST(Cli, LiveAnnotatorWithoutEndpointIsAConfigError) {
  Bundle b;
  b.edit([](json& j) { j["annotator"]["mode"] = "live"; });
  const std::string cmd = "env -u ANNOTATOR_URL " + std::string(NEUROAUDIT_CLI) + " scan --config " +
                          b.config().string() + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  EXPECT_EQ(WEXITSTATUS(status), 1);
}

TEST(Config, RelativePathsResolveAgainstTheConfigFile) {
  const auto c = AuditConfig::load(testing_support::toy_dir() / "audit.json");
  ASSERT_TRUE(c.model.has_value());
  EXPECT_EQ(c.model->archive, testing_support::toy_dir() / "model.bin");
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{0, 1}));
  EXPECT_EQ(c.n_pairs, 256u);
  json bad = read_json(testing_support::toy_dir() / "audit.json");
  bad["n_pairs"] = "many";
  EXPECT_THROW(AuditConfig::from_json(bad, testing_support::toy_dir()), ConfigError);
}

TEST(Summary, MeansSkipUndefinedMetrics) {
  ObservationReport a, b;
  a.metrics.precision = 1.0;
  a.metrics.recall = 0.5;
  a.metrics.f1 = 2.0 / 3.0;
  b.metrics.precision = 0.0;
  const auto m = mean_metrics({a.metrics, b.metrics});
  EXPECT_DOUBLE_EQ(*m.precision, 0.5);
  EXPECT_DOUBLE_EQ(*m.recall, 0.5);
  EXPECT_EQ(m.undefined_recall, 1u);
}

TEST(Files, AtomicWriteReplacesContent) {
  TempDir d("atomic");
  write_file_atomic(d.path() / "x.txt", "one");
  write_file_atomic(d.path() / "x.txt", "two");
  EXPECT_EQ(read_file(d.path() / "x.txt"), "two");
  EXPECT_EQ(std::distance(fs::directory_iterator(d.path()), fs::directory_iterator{}), 1);
}
