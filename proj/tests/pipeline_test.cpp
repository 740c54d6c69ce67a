#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "histgdp/errors.hpp"
#include "histgdp/numerics.hpp"
#include "histgdp/pipeline.hpp"
#include "histgdp/rng.hpp"
#include "support/synthetic_world.hpp"
#include "support/temp_dir.hpp"

namespace histgdp::pipeline {
namespace {

using testing::fast_config;
using testing::make_world;
using testing::SyntheticWorld;
using testing::WorldOptions;

TEST(Gating, ThresholdExamples) {
  const GatingPolicy g;
  EXPECT_FALSE(g.passes(1500, {2, 5}));
  EXPECT_TRUE(g.passes(1700, {5, 5}));
  EXPECT_FALSE(g.passes(2000, {9, 20}));
  EXPECT_TRUE(g.passes(2000, {10, 10}));
  EXPECT_EQ(g.threshold(1600), 3);
  EXPECT_EQ(g.threshold(1650), 5);
  EXPECT_EQ(g.threshold(1950), 5);
  EXPECT_EQ(g.threshold(2000), 10);
}

TEST(Gating, AlternativeRules) {
  GatingPolicy g;
  g.rule = GatingRule::any;
  EXPECT_TRUE(g.passes(1500, {2, 5}));
  EXPECT_FALSE(g.passes(1500, {2, 2}));
  g.rule = GatingRule::sum;
  EXPECT_TRUE(g.passes(1500, {2, 1}));
  EXPECT_FALSE(g.passes(1500, {1, 1}));
  g.early = 6;
  EXPECT_THROW(g.validate(), ValidationError);
  EXPECT_EQ(parse_gating_rule("sum"), GatingRule::sum);
  EXPECT_FALSE(parse_gating_rule("most").has_value());
}

TEST(Rescale, Examples) {
  const std::vector<double> regions = {100.0, 300.0};
  auto r = rescale_regions(regions, 150.0, std::vector<double>{1.0, 1.0});
  EXPECT_DOUBLE_EQ(r.factor, 0.75);
  EXPECT_DOUBLE_EQ(r.values[0], 75.0);
  EXPECT_DOUBLE_EQ(r.values[1], 225.0);

  r = rescale_regions(std::vector<double>{123.0}, 456.0, std::vector<double>{7.0});
  EXPECT_NEAR(r.values[0], 456.0, 1e-12 * 456.0);

  r = rescale_regions(regions, 150.0, std::vector<double>{3.0, 1.0});
  EXPECT_DOUBLE_EQ(r.factor, 1.0);
  EXPECT_DOUBLE_EQ(r.values[0], 100.0);
}

TEST(Rescale, IdempotentAndConstraint) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.uniform_index(6);
    std::vector<double> v(n), w(n);
    for (std::size_t i = 0; i < n; ++i) {
      v[i] = std::exp(5.0 + rng.normal());
      w[i] = 1.0 + static_cast<double>(rng.uniform_index(50));
    }
    const double country = std::exp(5.0 + rng.normal());
    const auto once = rescale_regions(v, country, w);
    double wv = 0.0, ws = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      wv += w[i] * once.values[i];
      ws += w[i];
    }
    EXPECT_NEAR(wv / ws, country, 1e-9 * country);
    const auto twice = rescale_regions(once.values, country, w);
    EXPECT_NEAR(twice.factor, 1.0, 1e-12);
  }
}

TEST(Rescale, Errors) {
  EXPECT_TRUE(rescale_regions(std::vector<double>{}, 10.0, std::vector<double>{}).values.empty());
  EXPECT_THROW(rescale_regions(std::vector<double>{1.0, 2.0}, 10.0, std::vector<double>{0.0, 0.0}), ValidationError);
}

LocationTable two_region_table() {
  std::vector<Location> e;
  for (int i = 0; i < 8; ++i) {
    const std::string id = "C" + std::to_string(i);
    e.push_back({id, id, LocationLevel::country, "", i < 4 ? "East" : "West"});
  }
  return LocationTable(e);
}

TEST(Baseline, RegionConstantRecoversCellMeans) {
  const auto locs = two_region_table();
  FeatureMatrix fm;
  fm.columns = {"x"};
  std::vector<double> y;
  Rng rng(3);
  for (int year : {1300, 1400})
    for (const auto& id : locs.ids()) {
      fm.rows.push_back({id, year});
      y.push_back((locs.supranational_of(id) == "East" ? 3.0 : 3.5) + 0.1 * rng.normal());
    }
  fm.values = Matrix(fm.rows.size(), 1);
  const auto model = fit_baseline(fm, y, locs);
  EXPECT_FALSE(model.has_lag);
  EXPECT_EQ(model.cells.size(), 4u);
  const auto fitted = model.predict(fm, locs);
  std::map<std::string, std::pair<double, int>> sums;
  for (std::size_t r = 0; r < y.size(); ++r) {
    auto& s = sums[locs.supranational_of(fm.rows[r].location_id) + std::to_string(fm.rows[r].year)];
    s.first += y[r];
    ++s.second;
  }
  for (std::size_t r = 0; r < y.size(); ++r) {
    const auto& s = sums[locs.supranational_of(fm.rows[r].location_id) + std::to_string(fm.rows[r].year)];
    EXPECT_NEAR(fitted[r], s.first / s.second, 1e-10);
  }
}

TEST(Baseline, ExactPersistence) {
  const auto locs = two_region_table();
  FeatureMatrix fm;
  fm.columns = {"x", "init_gdp"};
  std::vector<double> y;
  Rng rng(4);
  for (int year : {1550, 1600})
    for (const auto& id : locs.ids()) {
      fm.rows.push_back({id, year});
      y.push_back(2.5 + rng.uniform());
    }
  fm.values = Matrix(fm.rows.size(), 2);
  for (std::size_t r = 0; r < y.size(); ++r) fm.values(r, 1) = y[r];
  const auto model = fit_baseline(fm, y, locs);
  ASSERT_TRUE(model.has_lag);
  EXPECT_NEAR(model.lag_coefficient, 1.0, 1e-8);
  EXPECT_NEAR(model.intercept, 0.0, 1e-8);
  for (double e : model.cell_effects) EXPECT_NEAR(e, 0.0, 1e-8);
}

TEST(Baseline, EmptyPeriodRejected) {
  const auto locs = two_region_table();
  FeatureMatrix fm;
  EXPECT_THROW(fit_baseline(fm, std::vector<double>{}, locs), ValidationError);
}

TEST(Baseline, UnseenCellUsesMeanEffect) {
  const auto locs = two_region_table();
  FeatureMatrix fm;
  fm.columns = {"x"};
  std::vector<double> y;
  for (const auto& id : locs.ids()) {
    fm.rows.push_back({id, 1300});
    y.push_back(locs.supranational_of(id) == "East" ? 1.0 : 3.0);
  }
  fm.values = Matrix(fm.rows.size(), 1);
  const auto model = fit_baseline(fm, y, locs);
  FeatureMatrix other = fm.select_rows(std::vector<std::size_t>{0});
  other.rows[0].year = 1350;
  EXPECT_NEAR(model.predict(other, locs)[0], 2.0, 1e-10);
}

TEST(Bootstrap, IdenticalRowsGiveZeroWidth) {
  Matrix x(20, 3, 1.0);
  const std::vector<double> y(20, 2.0);
  const std::vector<std::string> names = {"a", "b", "c"};
  BootstrapOptions o;
  o.reps = 50;
  const auto ci = bootstrap_ci(x, names, y, Matrix(1, 3, 1.0), 0.5, 0.1, o);
  EXPECT_DOUBLE_EQ(ci.low[0], 100.0);
  EXPECT_DOUBLE_EQ(ci.high[0], 100.0);
}

TEST(Bootstrap, OrderedDeterministicAndRetried) {
  Rng rng(8);
  const std::size_t n = 60;
  Matrix x(n, 4);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < 4; ++j) x(i, j) = rng.normal();
    y[i] = 3.0 + 0.2 * x(i, 0) - 0.1 * x(i, 2) + 0.05 * rng.normal();
  }
  Matrix targets(10, 4);
  for (std::size_t i = 0; i < 10; ++i)
    for (std::size_t j = 0; j < 4; ++j) targets(i, j) = rng.normal();
  const std::vector<std::string> names = {"a", "b", "c", "d"};
  BootstrapOptions o;
  o.reps = 80;
  o.seed = 99;
  const auto one = bootstrap_ci(x, names, y, targets, 0.5, 1.0, o);
  o.threads = 3;
  const auto three = bootstrap_ci(x, names, y, targets, 0.5, 1.0, o);
  for (std::size_t t = 0; t < 10; ++t) {
    EXPECT_LE(one.low[t], one.high[t]);
    EXPECT_EQ(one.low[t], three.low[t]);
    EXPECT_EQ(one.high[t], three.high[t]);
  }

  // two rows: half of all resamples repeat one row
  const Matrix x2 = Matrix::from_rows({{0.0}, {1.0}});
  const auto tiny = bootstrap_ci(x2, std::vector<std::string>{"a"}, std::vector<double>{1.0, 2.0}, x2, 0.5, 0.0, o);
  EXPECT_GT(tiny.retries, 10u);

  o.clusters = std::vector<std::string>(n, "same");
  EXPECT_THROW(bootstrap_ci(x, names, y, targets, 0.5, 1.0, o), ValidationError);
  o.reps = 10;
  o.clusters.clear();
  EXPECT_THROW(bootstrap_ci(x, names, y, targets, 0.5, 1.0, o), ValidationError);
}

class ChainTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    WorldOptions o;
    o.countries = 16;
    o.regions_per_country = 2;
    o.people = 6000;
    o.label_fraction = 0.6;
    o.seed = 21;
    world_ = new SyntheticWorld(make_world(o));
  }
  static void TearDownTestSuite() {
    delete world_;
    world_ = nullptr;
  }
  static SyntheticWorld* world_;
};

SyntheticWorld* ChainTest::world_ = nullptr;

TEST_F(ChainTest, OutOfOrderPeriodRejected) {
  EstimationChain chain(world_->store, world_->data.locations, gdp_table(world_->data.gdp), fast_config(1),
                        ModelKind::elastic_net);
  EXPECT_THROW(chain.run_period(Period::early_modern), ValidationError);
  chain.run_period(Period::late_middle_ages);
  EXPECT_THROW(chain.run_period(Period::late_middle_ages), ValidationError);
}

TEST_F(ChainTest, TooFewLabelsForFolds) {
  auto cfg = fast_config(1);
  cfg.k_folds = 200;
  EstimationChain chain(world_->store, world_->data.locations, gdp_table(world_->data.gdp), cfg,
                        ModelKind::elastic_net);
  EXPECT_THROW(chain.run_period(Period::late_middle_ages), ValidationError);
}

TEST_F(ChainTest, FullRunCoversEveryCandidateOnce) {
  const auto cfg = fast_config(3);
  const auto run = run_full(world_->data, world_->store, cfg);
  const auto labels = gdp_table(world_->data.gdp);
  std::size_t estimates = 0;
  for (const auto& o : run.outcomes) {
    if (!o.model) continue;
    EXPECT_LE(o.model->en.selected_features().size(), o.model->feature_names.size());
    for (const auto& key : o.model->training_rows)
      EXPECT_EQ(period_of(key.year), o.period);
    EstimationChain probe(world_->store, world_->data.locations, labels, cfg, ModelKind::elastic_net);
    std::set<RowKey> seen;
    for (const auto& e : o.estimates) {
      EXPECT_TRUE(seen.insert({e.location_id, e.year}).second);
      EXPECT_EQ(labels.count({e.location_id, e.year}), 0u);
      const auto& pc = world_->store.years.at(e.year).people.at(e.location_id);
      EXPECT_TRUE(cfg.gating.passes(e.year, pc));
      EXPECT_LE(e.ci_low, e.ci_high);
      EXPECT_GT(e.gdp_pc, 0.0);
    }
    for (const auto& k : o.gated) EXPECT_TRUE(seen.insert(k).second);
    for (const auto& k : o.model->training_rows) EXPECT_TRUE(seen.insert(k).second);
    std::size_t candidates = 0;
    for (int year : o.years) candidates += world_->store.years.at(year).matrix.rows.size();
    EXPECT_EQ(seen.size(), candidates);
    estimates += o.estimates.size();
  }
  EXPECT_GT(estimates, 0u);
  std::size_t sources = 0;
  for (const auto& r : run.records) {
    if (!r.source) continue;
    ++sources;
    EXPECT_EQ(r.ci_low, r.gdp_pc);
    EXPECT_EQ(r.ci_high, r.gdp_pc);
  }
  EXPECT_EQ(sources, world_->data.gdp.size());
  EXPECT_EQ(run.records.size(), sources + estimates);
  EXPECT_TRUE(std::is_sorted(run.records.begin(), run.records.end(), [](const auto& a, const auto& b) {
    return std::tie(a.location_id, a.year) < std::tie(b.location_id, b.year);
  }));
}

TEST_F(ChainTest, RescaledOutputPassesAudit) {
  const auto run = run_full(world_->data, world_->store, fast_config(4));
  testing::TempDir dir;
  const auto exact = dir.write("estimates_exact.csv", estimates_csv(run.records, true));
  std::size_t rescaled = 0;
  for (const auto& r : run.records) rescaled += r.rescaled == "true";
  ASSERT_GT(rescaled, 0u);
  EXPECT_GT(audit_rescaling(exact, world_->store, world_->data.locations, 1e-9), 0u);

  auto broken = run.records;
  for (auto& r : broken)
    if (r.rescaled == "true") {
      r.gdp_pc *= 1.01;
      break;
    }
  const auto bad = dir.write("broken.csv", estimates_csv(broken, true));
  EXPECT_THROW(audit_rescaling(bad, world_->store, world_->data.locations, 1e-9), ValidationError);
}

TEST_F(ChainTest, DeterministicAcrossThreads) {
  auto cfg = fast_config(5);
  const auto a = run_full(world_->data, world_->store, cfg);
  cfg.threads = 4;
  const auto b = run_full(world_->data, world_->store, cfg);
  EXPECT_EQ(estimates_csv(a.records, true), estimates_csv(b.records, true));
  EXPECT_EQ(a.report_json, b.report_json);
}

TEST_F(ChainTest, LaterPeriodsDoNotChangeEarlierOnes) {
  const auto cfg = fast_config(6);
  const auto labels = gdp_table(world_->data.gdp);
  EstimationChain one(world_->store, world_->data.locations, labels, cfg, ModelKind::elastic_net);
  one.run_period(Period::late_middle_ages);
  EstimationChain all(world_->store, world_->data.locations, labels, cfg, ModelKind::elastic_net);
  all.run_all();
  const auto& a = one.outcomes()[0].estimates;
  const auto& b = all.outcomes()[0].estimates;
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].gdp_pc, b[i].gdp_pc);
}

TEST_F(ChainTest, BaselineChainHasNoLagInEarliestPeriod) {
  EstimationChain chain(world_->store, world_->data.locations, gdp_table(world_->data.gdp), fast_config(7),
                        ModelKind::baseline, {false, false});
  chain.run_all();
  ASSERT_TRUE(chain.outcomes()[0].model.has_value());
  EXPECT_FALSE(chain.outcomes()[0].model->baseline.has_lag);
  ASSERT_TRUE(chain.outcomes()[1].model.has_value());
  EXPECT_TRUE(chain.outcomes()[1].model->baseline.has_lag);
}

TEST(Csv, SixSignificantDigitsAndExact) {
  EstimateRecord r{"A", 1500, 1234.56789, 1000.0, 1500.0, false, false, "true", "source"};
  const auto text = estimates_csv({r});
  EXPECT_NE(text.find("A,1500,1234.57,1000,1500,estimate,false,true,source"), std::string::npos);
  EXPECT_NE(estimates_csv({r}, true).find("1234.56789"), std::string::npos);
}

}  // namespace
}  // namespace histgdp::pipeline
