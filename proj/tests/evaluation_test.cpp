#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "histgdp/errors.hpp"
#include "histgdp/evaluation.hpp"
#include "histgdp/numerics.hpp"
#include "histgdp/rng.hpp"
#include "support/synthetic_world.hpp"
#include "support/temp_dir.hpp"

namespace histgdp::evaluation {
namespace {

using testing::fast_config;
using testing::make_world;
using testing::SyntheticWorld;
using testing::WorldOptions;

LocationTable countries(std::size_t n, std::size_t regions) {
  std::vector<Location> e;
  for (std::size_t c = 0; c < n; ++c) {
    const std::string id = "C" + std::to_string(c);
    e.push_back({id, id, LocationLevel::country, "", "S0"});
    for (std::size_t r = 0; r < regions; ++r) {
      const std::string rid = id + "-R" + std::to_string(r);
      e.push_back({rid, rid, LocationLevel::region, id, "S0"});
    }
  }
  return LocationTable(e);
}

TEST(Split, DrawsCeilingFractionWithRegions) {
  const auto locs = countries(11, 2);
  const auto s = split_countries(locs, 0.2, 7);
  ASSERT_EQ(s.test_countries.size(), 3u);
  EXPECT_TRUE(std::is_sorted(s.test_countries.begin(), s.test_countries.end()));
  EXPECT_EQ(s.test_locations.size(), 9u);
  for (const auto& c : s.test_countries) {
    EXPECT_TRUE(s.is_test(c));
    EXPECT_TRUE(s.is_test(c + "-R0"));
    EXPECT_TRUE(s.is_test(c + "-R1"));
  }
  EXPECT_EQ(split_countries(countries(10, 0), 0.2, 1).test_countries.size(), 2u);
  EXPECT_EQ(split_countries(countries(5, 0), 0.2, 1).test_countries.size(), 1u);
}

TEST(Split, DeterministicAndVaried) {
  const auto locs = countries(30, 0);
  EXPECT_EQ(split_countries(locs, 0.2, 3).test_countries, split_countries(locs, 0.2, 3).test_countries);
  std::set<std::vector<std::string>> seen;
  for (std::size_t i = 0; i < 20; ++i) seen.insert(split_countries(locs, 0.2, split_seed(9, i)).test_countries);
  EXPECT_GT(seen.size(), 15u);
}

TEST(Split, Errors) {
  EXPECT_THROW(split_countries(countries(4, 3), 0.2, 1), ValidationError);
  EXPECT_THROW(split_countries(countries(10, 0), 0.0, 1), ValidationError);
  EXPECT_THROW(split_countries(countries(10, 0), 1.0, 1), ValidationError);
}

class EvalTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    WorldOptions o;
    o.countries = 15;
    o.people = 4000;
    o.seed = 33;
    world_ = new SyntheticWorld(make_world(o));
  }
  static void TearDownTestSuite() {
    delete world_;
    world_ = nullptr;
  }
  static SyntheticWorld* world_;
};

SyntheticWorld* EvalTest::world_ = nullptr;

TEST_F(EvalTest, SplitHoldsOutTestLabels) {
  const auto cfg = fast_config(1);
  const auto spec = split_countries(world_->data.locations, 0.2, 11);
  EvaluationOptions opt;
  const auto r = run_split(world_->data, world_->store, cfg, spec, opt);
  ASSERT_TRUE(r.completed) << r.failure;
  std::size_t expected = 0;
  for (const auto& g : world_->data.gdp) expected += spec.is_test(g.location_id);
  EXPECT_EQ(r.test_rows, expected);
  EXPECT_EQ(r.scored_rows + r.gated_rows, r.test_rows);
  EXPECT_GT(r.scored_rows, 0u);
  EXPECT_LE(r.r2_full, 1.0);
  EXPECT_GE(r.mae_full, 0.0);
  // the features carry signal the baseline cannot see
  EXPECT_GT(r.r2_full, r.r2_baseline);
}

TEST_F(EvalTest, IdenticalArmsGiveUnitPValue) {
  EvaluationOptions opt;
  opt.n_splits = 6;
  opt.master_seed = 4;
  opt.full_arm = pipeline::ModelKind::baseline;
  const auto d = evaluate_models(world_->data, world_->store, fast_config(1), opt);
  ASSERT_EQ(d.completed, 6u);
  EXPECT_DOUBLE_EQ(d.kw_r2.p, 1.0);
  EXPECT_DOUBLE_EQ(d.kw_mae.p, 1.0);
  EXPECT_DOUBLE_EQ(d.r2_baseline.median, d.r2_full.median);
}

TEST_F(EvalTest, ThreadCountDoesNotChangeResults) {
  EvaluationOptions opt;
  opt.n_splits = 6;
  opt.master_seed = 8;
  opt.full_arm = pipeline::ModelKind::baseline;
  const auto a = evaluate_models(world_->data, world_->store, fast_config(2), opt);
  opt.threads = 3;
  const auto b = evaluate_models(world_->data, world_->store, fast_config(2), opt);
  EXPECT_EQ(evaluation_csv(a), evaluation_csv(b));
}

TEST_F(EvalTest, SwappingArmsSwapsDistributions) {
  EvaluationOptions opt;
  opt.n_splits = 2;
  opt.master_seed = 5;
  const auto a = evaluate_models(world_->data, world_->store, fast_config(3), opt);
  std::swap(opt.baseline_arm, opt.full_arm);
  const auto b = evaluate_models(world_->data, world_->store, fast_config(3), opt);
  ASSERT_EQ(a.completed, 2u);
  ASSERT_EQ(b.completed, 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_DOUBLE_EQ(a.splits[i].r2_full, b.splits[i].r2_baseline);
    EXPECT_DOUBLE_EQ(a.splits[i].mae_baseline, b.splits[i].mae_full);
  }
  EXPECT_DOUBLE_EQ(a.kw_r2.p, b.kw_r2.p);
  EXPECT_DOUBLE_EQ(a.r2_full.median, b.r2_baseline.median);

  // a single split matches a direct run
  opt.n_splits = 1;
  const auto one = evaluate_models(world_->data, world_->store, fast_config(3), opt);
  const auto spec = split_countries(world_->data.locations, opt.fraction, split_seed(opt.master_seed, 0));
  const auto direct = run_split(world_->data, world_->store, fast_config(3), spec, opt);
  EXPECT_DOUBLE_EQ(one.splits[0].r2_full, direct.r2_full);
  EXPECT_DOUBLE_EQ(one.r2_baseline.median, direct.r2_baseline);
  EXPECT_DOUBLE_EQ(one.mae_full.q25, direct.mae_full);
}

TEST_F(EvalTest, TooFewScorableRowsFails) {
  EvaluationOptions opt;
  opt.full_arm = pipeline::ModelKind::baseline;
  opt.min_test_rows = 100000;
  const auto spec = split_countries(world_->data.locations, 0.2, 1);
  const auto r = run_split(world_->data, world_->store, fast_config(1), spec, opt);
  EXPECT_FALSE(r.completed);
  EXPECT_NE(r.failure.find("scorable"), std::string::npos);
}

TEST_F(EvalTest, OutputsListEverySplit) {
  EvaluationOptions opt;
  opt.n_splits = 3;
  opt.full_arm = pipeline::ModelKind::baseline;
  const auto d = evaluate_models(world_->data, world_->store, fast_config(1), opt);
  const auto csv = evaluation_csv(d);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
  const auto json = evaluation_summary_json(d, opt);
  EXPECT_NE(json.find("\"kruskal_wallis_r2\""), std::string::npos);
  EXPECT_NE(json.find("\"completed\": 3"), std::string::npos);
}

std::vector<pipeline::EstimateRecord> estimates(const std::vector<double>& values) {
  std::vector<pipeline::EstimateRecord> out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    pipeline::EstimateRecord r;
    r.location_id = "L" + std::to_string(i);
    r.year = 1700;
    r.gdp_pc = values[i];
    r.source = i % 2 == 0;
    out.push_back(r);
  }
  return out;
}

std::vector<ProxyObservation> proxies(const std::vector<double>& values) {
  std::vector<ProxyObservation> out;
  for (std::size_t i = 0; i < values.size(); ++i) out.push_back({"L" + std::to_string(i), 1700, values[i]});
  return out;
}

TEST(Proxy, PerfectPositiveAndNegative) {
  const std::vector<double> x = {1, 2, 3, 4, 5, 6, 7};
  std::vector<double> up, down;
  for (double v : x) {
    up.push_back(3.0 * v + 1.0);
    down.push_back(-2.0 * v);
  }
  auto c = proxy_correlation(estimates(x), proxies(up));
  EXPECT_NEAR(c.r, 1.0, 1e-12);
  EXPECT_EQ(c.n, 7u);
  EXPECT_EQ(c.n_source, 4u);
  EXPECT_EQ(c.n_estimate, 3u);
  ASSERT_TRUE(c.r_source.has_value());
  EXPECT_NEAR(*c.r_source, 1.0, 1e-12);
  c = proxy_correlation(estimates(x), proxies(down));
  EXPECT_NEAR(c.r, -1.0, 1e-12);
}

TEST(Proxy, LogTransform) {
  std::vector<double> levels, logs;
  for (int i = 0; i < 6; ++i) {
    levels.push_back(std::pow(10.0, 2.0 + 0.3 * i));
    logs.push_back(2.0 + 0.3 * i);
  }
  const auto c = proxy_correlation(estimates(levels), proxies(logs), Transform::log10);
  EXPECT_NEAR(c.r, 1.0, 1e-12);
  EXPECT_EQ(parse_transform("log10"), Transform::log10);
  EXPECT_FALSE(parse_transform("ln").has_value());
}

TEST(Proxy, IndependentNoiseIsWeak) {
  Rng rng(12);
  std::vector<double> a(200), b(200);
  for (std::size_t i = 0; i < 200; ++i) {
    a[i] = rng.normal();
    b[i] = rng.normal();
  }
  EXPECT_LT(std::abs(proxy_correlation(estimates(a), proxies(b)).r), 0.3);
}

TEST(Proxy, UnmatchedRowsAndErrors) {
  auto p = proxies({1.0, 2.0});
  p.push_back({"elsewhere", 1700, 9.0});
  EXPECT_THROW(proxy_correlation(estimates({1.0, 2.0, 3.0}), p), ValidationError);
  const auto c = proxy_correlation(estimates({1.0, 2.0, 3.0}), proxies({1.0, 2.0, 4.0}));
  EXPECT_EQ(c.n, 3u);
  EXPECT_FALSE(c.r_source.has_value());
}

TEST(Proxy, FilesRoundTrip) {
  testing::TempDir dir;
  const auto est = dir.write("e.csv",
                             "location_id,year,gdp_pc_2011usd,ci_low,ci_high,kind,gated,rescaled,init_gdp_provenance\n"
                             "A,1700,100,90,110,source,false,false,\n"
                             "B,1700,200,150,250,estimate,false,true,estimate\n"
                             "C,1700,400,300,500,estimate,false,false,source\n");
  const auto px = dir.write("p.csv", "location_id,year,value\nA,1700,1\nB,1700,2\nC,1700,3\nD,1700,4\n");
  const auto e = load_estimates(est);
  ASSERT_EQ(e.size(), 3u);
  EXPECT_TRUE(e[0].source);
  EXPECT_EQ(e[1].rescaled, "true");
  const auto c = proxy_correlation(e, load_proxies(px), Transform::log10);
  EXPECT_NEAR(c.r, 1.0, 1e-12);
  EXPECT_NE(proxy_correlation_json(c).find("\"r_source\": null"), std::string::npos);

  const auto bad = dir.write("bad.csv", "location_id,year,value\nA,17x0,1\n");
  EXPECT_THROW(load_proxies(bad), ValidationError);
  const auto missing = dir.write("m.csv", "location_id,value\nA,1\n");
  EXPECT_THROW(load_proxies(missing), ValidationError);
}

}  // namespace
}  // namespace histgdp::evaluation
