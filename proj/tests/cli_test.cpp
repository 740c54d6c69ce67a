#include <gtest/gtest.h>

#include <sstream>

#include "histgdp/cli.hpp"
#include "json.hpp"
#include "support/synthetic_world.hpp"
#include "support/temp_dir.hpp"

namespace histgdp::cli {
namespace {

using testing::read_file;
using testing::TempDir;

struct Outcome {
  int code = 0;
  std::string out, err;
};

Outcome invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "histgdp");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Outcome o;
  o.code = run(static_cast<int>(argv.size()), argv.data(), out, err);
  o.out = out.str();
  o.err = err.str();
  return o;
}

nlohmann::json report(const std::filesystem::path& dir) {
  return nlohmann::json::parse(read_file(dir / "run_report.json"));
}

// Reports echo the output directory; everything else must match.
std::string report_without_dir(const std::filesystem::path& dir) {
  auto j = report(dir);
  j["config"].erase("output_dir");
  return j.dump();
}

class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir;
    testing::WorldOptions o;
    o.countries = 10;
    o.regions_per_country = 2;
    o.people = 4000;
    o.label_fraction = 0.6;
    o.seed = 17;
    files_ = new testing::WorldFiles(testing::write_world(testing::make_world(o), dir_->path()));
    config_ = dir_->write("fast.json", R"({"alpha_grid": [0, 0.5, 1], "n_lambda": 20, "k_folds": 5, "B": 50})");
  }
  static void TearDownTestSuite() {
    delete files_;
    delete dir_;
  }

  std::vector<std::string> inputs(const std::filesystem::path& out) const {
    return {"--biographies", files_->biographies.string(), "--locations", files_->locations.string(),
            "--gdp", files_->gdp.string(), "--output-dir", out.string(), "--config", config_.string()};
  }

  static TempDir* dir_;
  static testing::WorldFiles* files_;
  static std::filesystem::path config_;
};

TempDir* CliTest::dir_ = nullptr;
testing::WorldFiles* CliTest::files_ = nullptr;
std::filesystem::path CliTest::config_;

TEST(Cli, VersionAndHelp) {
  auto o = invoke({"--version"});
  EXPECT_EQ(o.code, 0);
  EXPECT_FALSE(o.out.empty());
  o = invoke({"--help"});
  EXPECT_EQ(o.code, 0);
  EXPECT_NE(o.out.find("estimate"), std::string::npos);
  EXPECT_EQ(invoke({"estimate", "--help"}).code, 0);
}

TEST(Cli, UsageErrors) {
  EXPECT_EQ(invoke({}).code, 1);
  EXPECT_EQ(invoke({"estimate", "--no-such-flag"}).code, 1);
  EXPECT_EQ(invoke({"frobnicate"}).code, 1);
  TempDir dir;
  const auto o = invoke({"estimate", "--output-dir", dir.path().string()});
  EXPECT_EQ(o.code, 1);
  EXPECT_NE(o.err.find("--biographies"), std::string::npos);
}

TEST_F(CliTest, MissingInputIsIoError) {
  TempDir out;
  auto args = inputs(out.path());
  args[1] = (dir_->path() / "absent.csv").string();
  args.insert(args.begin(), "validate");
  const auto o = invoke(args);
  EXPECT_EQ(o.code, 3);
  EXPECT_NE(o.err.find("absent.csv"), std::string::npos);
}

TEST_F(CliTest, ConfigErrors) {
  TempDir out;
  auto args = inputs(out.path());
  args.back() = dir_->write("bad.json", R"({"no_such_key": 1})").string();
  args.insert(args.begin(), "validate");
  EXPECT_EQ(invoke(args).code, 1);
  args.back() = dir_->write("typed.json", R"({"seed": "seven"})").string();
  EXPECT_EQ(invoke(args).code, 1);
  args.back() = dir_->write("broken.json", "{").string();
  EXPECT_EQ(invoke(args).code, 1);
  args.back() = (dir_->path() / "none.json").string();
  EXPECT_EQ(invoke(args).code, 3);
  args.back() = config_.string();
  args.insert(args.end(), {"--scale", "cubic"});
  EXPECT_EQ(invoke(args).code, 1);
}

TEST_F(CliTest, FlagBeatsConfigBeatsDefault) {
  TempDir out;
  auto args = inputs(out.path());
  args.back() = dir_->write("c.json", R"({"seed": 5, "window_years": 100, "ci_level": 0.8})").string();
  args.insert(args.begin(), "validate");
  args.insert(args.end(), {"--seed", "7"});
  const auto o = invoke(args);
  ASSERT_EQ(o.code, 0) << o.err;
  const auto cfg = report(out.path())["config"];
  EXPECT_EQ(cfg["seed"], 7);
  EXPECT_EQ(cfg["window_years"], 100);
  EXPECT_EQ(cfg["ci_level"], 0.8);
  EXPECT_EQ(cfg["k_folds"], 10);
  EXPECT_EQ(cfg["B"], 200);
  EXPECT_FALSE(cfg.contains("threads"));
  EXPECT_TRUE(std::filesystem::exists(out.path() / "rejects.csv"));
  EXPECT_NE(o.out.find("eligible_records"), std::string::npos);
}

TEST_F(CliTest, RejectCeiling) {
  TempDir out;
  auto args = inputs(out.path());
  args.insert(args.begin(), "validate");
  const auto bad = dir_->write("gdp_bad.csv", "location_id,year,gdp_pc_2011usd,source\nC00,1300,-5,x\nC01,1300,900,x\n");
  args[6] = bad.string();
  const auto o = invoke(args);
  EXPECT_EQ(o.code, 1);
  EXPECT_NE(read_file(out.path() / "rejects.csv").find("gdp_bad.csv"), std::string::npos);
}

TEST_F(CliTest, EstimateIsDeterministicAcrossThreads) {
  TempDir a, b;
  auto args = inputs(a.path());
  args.insert(args.begin(), "estimate");
  args.insert(args.end(), {"--seed", "7", "--threads", "1", "--emit-features"});
  auto o = invoke(args);
  ASSERT_EQ(o.code, 0) << o.err;
  args = inputs(b.path());
  args.insert(args.begin(), "estimate");
  args.insert(args.end(), {"--seed", "7", "--threads", "3", "--emit-features"});
  o = invoke(args);
  ASSERT_EQ(o.code, 0) << o.err;
  for (const char* f : {"estimates.csv", "estimates_exact.csv", "rejects.csv", "feature_matrix_1300.csv",
                        "feature_matrix_1850.csv"})
    EXPECT_EQ(read_file(a.path() / f), read_file(b.path() / f)) << f;
  EXPECT_EQ(report_without_dir(a.path()), report_without_dir(b.path()));
  const auto r = report(a.path());
  EXPECT_EQ(r["config"]["seed"], 7);
  EXPECT_GT(r["counts"]["estimate"].get<int>(), 0);
  EXPECT_GT(r["rescaling_audit"]["country_years"].get<int>(), 0);
  EXPECT_EQ(read_file(a.path() / "estimates.csv").substr(0, 22), "location_id,year,gdp_p");
  EXPECT_NE(read_file(a.path() / "feature_matrix_1550.csv").find("init_gdp"), std::string::npos);

  // correlate against a proxy built from the estimates themselves
  std::string proxy = "location_id,year,value\n";
  std::istringstream lines(read_file(a.path() / "estimates_exact.csv"));
  std::string line;
  std::getline(lines, line);
  while (std::getline(lines, line)) {
    const auto c1 = line.find(',');
    const auto c2 = line.find(',', c1 + 1);
    const auto c3 = line.find(',', c2 + 1);
    proxy += line.substr(0, c3) + "\n";
  }
  const auto px = a.write("proxy.csv", proxy);
  o = invoke({"correlate", "--proxies", px.string(), "--output-dir", a.path().string(), "--estimates",
              (a.path() / "estimates_exact.csv").string()});
  ASSERT_EQ(o.code, 0) << o.err;
  EXPECT_NEAR(nlohmann::json::parse(o.out)["r"].get<double>(), 1.0, 1e-12);
}

TEST_F(CliTest, EvaluateWritesOneRowPerSplit) {
  TempDir a, b;
  for (const auto* d : {&a, &b}) {
    auto args = inputs(d->path());
    args.insert(args.begin(), "evaluate");
    args.insert(args.end(), {"--n-splits", "3", "--seed", "2", "--threads", d == &a ? "1" : "2"});
    const auto o = invoke(args);
    ASSERT_EQ(o.code, 0) << o.err;
  }
  const auto csv = read_file(a.path() / "evaluation.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
  EXPECT_EQ(csv, read_file(b.path() / "evaluation.csv"));
  EXPECT_EQ(read_file(a.path() / "evaluation_summary.json"), read_file(b.path() / "evaluation_summary.json"));
  EXPECT_EQ(report_without_dir(a.path()), report_without_dir(b.path()));
}

TEST_F(CliTest, ExplainWritesPerPeriodFiles) {
  TempDir a, b;
  for (const auto* d : {&a, &b}) {
    auto args = inputs(d->path());
    args.insert(args.begin(), "explain");
    args.insert(args.end(), {"--method", "permutation", "--n-permutations", "50", "--period", "early_modern",
                             "--threads", d == &a ? "1" : "3"});
    const auto o = invoke(args);
    ASSERT_EQ(o.code, 0) << o.err;
  }
  for (const char* f : {"shapley_early_modern.csv", "feature_importance_early_modern.csv"})
    EXPECT_EQ(read_file(a.path() / f), read_file(b.path() / f)) << f;
  EXPECT_EQ(report_without_dir(a.path()), report_without_dir(b.path()));
  EXPECT_FALSE(std::filesystem::exists(a.path() / "shapley_late_middle_ages.csv"));
  auto args = inputs(a.path());
  args.insert(args.begin(), "explain");
  args.insert(args.end(), {"--period", "bronze_age"});
  EXPECT_EQ(invoke(args).code, 1);
}

}  // namespace
}  // namespace histgdp::cli
