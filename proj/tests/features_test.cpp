#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "histgdp/errors.hpp"
#include "histgdp/features.hpp"
#include "histgdp/numerics.hpp"
#include "histgdp/rng.hpp"

namespace histgdp {
namespace {

BiographyRecord person(std::string id, int born, std::optional<int> died, std::optional<std::string> bloc,
                       std::optional<std::string> dloc, std::string occ) {
  BiographyRecord r;
  r.person_id = std::move(id);
  r.birth_year = born;
  r.death_year = died;
  r.birth_location = std::move(bloc);
  r.death_location = std::move(dloc);
  r.occupation = std::move(occ);
  r.pageviews = 1000;
  r.language_editions = 3;
  return r;
}

LocationTable two_countries() {
  return LocationTable({{"A", "Alpha", LocationLevel::country, "", "West"},
                        {"B", "Beta", LocationLevel::country, "", "East"}});
}

TEST(Hpi, Examples) {
  EXPECT_NEAR(hpi(1000, 1, 256).value, 7.0, 1e-12);
  EXPECT_NEAR(hpi(10, 1, 64).value, 1.0 + 3.0 - 6.0 / 7.0, 1e-12);
  EXPECT_NEAR(hpi(100000, 7, 100).value, 10.267838, 1e-6);
}

TEST(Hpi, ContinuousAtSeventy) {
  const double at = hpi(500, 4, 70).value;
  const double below = hpi(500, 4, std::nextafter(70.0, 0.0)).value;
  EXPECT_NEAR(below, at, 1e-12);
}

TEST(Hpi, ClampsAndFlags) {
  const auto s = hpi(0, 0.5, 0);
  EXPECT_TRUE(s.clamped);
  EXPECT_DOUBLE_EQ(s.value, hpi(1, 1, 1).value);
  EXPECT_FALSE(hpi(2, 2, 80).clamped);
}

TEST(Hpi, WeightsClampedAtZero) {
  auto r = person("young", 2000, std::nullopt, "A", std::nullopt, "painter");
  r.pageviews = 10;
  r.language_editions = 2;
  EXPECT_LT(hpi(r).value, 0.0);
  EXPECT_EQ(hpi_weights({r})[0], 0.0);
}

struct Fixture {
  LocationTable locs = two_countries();
  std::vector<BiographyRecord> recs;
  std::vector<std::string> occs;
  std::vector<std::string> ids{"A", "B"};

  CountTensor tensor(std::vector<double> weights, int year = 1600) const {
    const auto flows = assign_flows(recs, locs, year, 150);
    return flow_counts(flows, recs, weights, ids, occs);
  }
};

TEST(FlowCounts, SingletonAndNegativeHpi) {
  Fixture f;
  f.recs = {person("p", 1500, 1560, "A", "A", "painter"), person("q", 1500, 1560, "A", "A", "painter")};
  f.occs = {"painter"};
  const auto t = f.tensor({7.0, 0.0});
  EXPECT_DOUBLE_EQ(t.weighted_of(Flow::births)(0, 0), 7.0);
  EXPECT_DOUBLE_EQ(t.people_of(Flow::births)(0, 0), 2.0);
  EXPECT_EQ(t.totals_of(Flow::births)[0], 2u);
  EXPECT_EQ(t.totals_of(Flow::births)[1], 0u);
}

TEST(FlowCounts, EmptyFlows) {
  Fixture f;
  f.occs = {"painter", "lawyer"};
  const auto t = f.tensor({});
  for (Flow fl : kFlows) {
    for (double v : t.weighted_of(fl).values()) EXPECT_EQ(v, 0.0);
    for (double v : t.people_of(fl).values()) EXPECT_EQ(v, 0.0);
  }
}

TEST(Diversity, CountsPresentOccupations) {
  Fixture f;
  f.recs = {person("1", 1500, 1560, "A", "A", "painter"), person("2", 1500, 1560, "A", "A", "painter"),
            person("3", 1500, 1560, "A", "A", "lawyer")};
  f.occs = {"lawyer", "painter", "priest"};
  const auto t = f.tensor({1, 1, 1});
  const auto d = diversity(t, Flow::births);
  EXPECT_EQ(d[0], 2);
  EXPECT_EQ(d[1], 0);
}

TEST(AvgUbiquity, HandCount) {
  Fixture f;
  f.recs = {person("1", 1500, 1560, "A", "A", "occ1"), person("2", 1500, 1560, "A", "A", "occ2"),
            person("3", 1500, 1560, "B", "B", "occ2")};
  f.occs = {"occ1", "occ2"};
  const auto u = avg_ubiquity(f.tensor({1, 1, 1}), Flow::births);
  EXPECT_DOUBLE_EQ(u.values[0], 1.5);
  EXPECT_DOUBLE_EQ(u.values[1], 2.0);
  EXPECT_FALSE(u.flagged[0]);

  f.recs.pop_back();
  const auto v = avg_ubiquity(f.tensor({1, 1}), Flow::births);
  EXPECT_DOUBLE_EQ(v.values[0], 1.0);
  EXPECT_DOUBLE_EQ(v.values[1], 0.0);
  EXPECT_TRUE(v.flagged[1]);
}

TEST(Rca, HandRatios) {
  const auto r = rca_matrix(Matrix::from_rows({{4, 0}, {1, 1}}));
  EXPECT_EQ(r.m(0, 0), 1.0);
  EXPECT_EQ(r.m(0, 1), 0.0);
  EXPECT_EQ(r.m(1, 0), 0.0);
  EXPECT_EQ(r.m(1, 1), 1.0);
}

TEST(Rca, UniformAndSingleRow) {
  const auto uniform = rca_matrix(Matrix(3, 4, 2.5));
  for (double v : uniform.m.values()) EXPECT_EQ(v, 1.0);
  const auto single = rca_matrix(Matrix::from_rows({{1, 5, 2}}));
  for (double v : single.m.values()) EXPECT_EQ(v, 1.0);
}

TEST(Rca, DropsZeroRowsAndColumns) {
  const auto r = rca_matrix(Matrix::from_rows({{1, 0, 2}, {0, 0, 0}, {3, 0, 1}}));
  EXPECT_EQ(r.dropped_rows, std::vector<std::size_t>{1});
  EXPECT_EQ(r.dropped_cols, std::vector<std::size_t>{1});
  EXPECT_EQ(r.m.rows(), 2u);
  EXPECT_EQ(r.m.cols(), 2u);
  EXPECT_THROW(rca_matrix(Matrix(2, 2)), ValidationError);
}

TEST(Rca, ScaleInvariant) {
  Rng rng(4);
  for (int t = 0; t < 20; ++t) {
    Matrix n(6, 5);
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t k = 0; k < 5; ++k) n(i, k) = std::floor(rng.uniform() * 4.0);
    n(0, 0) += 1.0;
    Matrix scaled = n;
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t k = 0; k < 5; ++k) scaled(i, k) *= 3.0;
    EXPECT_EQ(rca_matrix(n).m.values(), rca_matrix(scaled).m.values());
  }
}

Matrix random_binary(Rng& rng, std::size_t rows, std::size_t cols) {
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t k = 0; k < cols; ++k) m(i, k) = rng.uniform() < 0.4 ? 1.0 : 0.0;
  for (std::size_t i = 0; i < rows; ++i) m(i, rng.uniform_index(cols)) = 1.0;
  for (std::size_t k = 0; k < cols; ++k) m(rng.uniform_index(rows), k) = 1.0;
  return m;
}

TEST(Eci, SmallRanking) {
  const auto e = eci(Matrix::from_rows({{1, 1}, {0, 1}}));
  EXPECT_GT(e.eci[0], e.eci[1]);
  EXPECT_FALSE(e.degenerate);
}

TEST(Eci, AllOnesIsZero) {
  const auto e = eci(Matrix(4, 3, 1.0));
  for (double v : e.eci) EXPECT_EQ(v, 0.0);
  EXPECT_TRUE(e.degenerate);
}

TEST(Eci, SingleRowOrColumnIsDegenerate) {
  EXPECT_TRUE(eci(Matrix::from_rows({{1, 1, 1}})).degenerate);
  EXPECT_TRUE(eci(Matrix::from_rows({{1}, {1}})).degenerate);
}

TEST(Eci, MatchesSecondEigenvector) {
  Rng rng(21);
  int compared = 0;
  for (int t = 0; t < 30; ++t) {
    const std::size_t rows = 3 + rng.uniform_index(10), cols = 3 + rng.uniform_index(8);
    const Matrix m = random_binary(rng, rows, cols);
    Eigen::MatrixXd em(rows, cols);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t k = 0; k < cols; ++k) em(i, k) = m(i, k);
    const Eigen::VectorXd kc = em.rowwise().sum(), ku = em.colwise().sum();
    const Eigen::MatrixXd mt = kc.cwiseInverse().asDiagonal() * em * ku.cwiseInverse().asDiagonal() * em.transpose();
    Eigen::EigenSolver<Eigen::MatrixXd> solver(mt);
    std::vector<std::pair<double, Eigen::Index>> order;
    for (Eigen::Index i = 0; i < solver.eigenvalues().size(); ++i) order.push_back({solver.eigenvalues()(i).real(), i});
    std::sort(order.rbegin(), order.rend());
    // Only compare when the second eigenvalue is simple and well separated.
    if (order.size() < 3 || order[0].first - order[1].first < 1e-3 || order[1].first - order[2].first < 0.05) continue;
    std::vector<double> v(rows);
    for (std::size_t i = 0; i < rows; ++i) v[i] = solver.eigenvectors()(static_cast<Eigen::Index>(i), order[1].second).real();
    const double mu = numerics::mean(v), sd = numerics::population_sd(v);
    for (double& x : v) x = (x - mu) / sd;
    const auto e = eci(m);
    if (e.degenerate) continue;
    const double sign = numerics::pearson(e.eci, v) >= 0.0 ? 1.0 : -1.0;
    for (std::size_t i = 0; i < rows; ++i) EXPECT_NEAR(e.eci[i], sign * v[i], 1e-6);
    ++compared;
  }
  EXPECT_GT(compared, 5);
}

TEST(Eci, NormalizedOrientedAndRelabelInvariant) {
  Rng rng(99);
  for (int t = 0; t < 50; ++t) {
    const std::size_t rows = 2 + rng.uniform_index(19), cols = 2 + rng.uniform_index(14);
    const Matrix m = random_binary(rng, rows, cols);
    const auto e = eci(m);
    if (e.degenerate) continue;
    EXPECT_NEAR(numerics::mean(e.eci), 0.0, 1e-9);
    EXPECT_NEAR(numerics::population_sd(e.eci), 1.0, 1e-9);
    std::vector<double> div(rows, 0.0);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t k = 0; k < cols; ++k) div[i] += m(i, k);
    EXPECT_GE(numerics::spearman(e.eci, div), 0.0);

    std::vector<std::size_t> perm(rows);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(std::span<std::size_t>(perm));
    const auto ep = eci(m.select_rows(perm));
    for (std::size_t i = 0; i < rows; ++i) EXPECT_NEAR(ep.eci[i], e.eci[perm[i]], 1e-9);
  }
}

TEST(SvdFactors, DiagonalAndZeroRow) {
  Fixture f;
  f.locs = LocationTable({{"A", "A", LocationLevel::country, "", "W"},
                          {"B", "B", LocationLevel::country, "", "W"},
                          {"C", "C", LocationLevel::country, "", "W"}});
  f.ids = {"A", "B", "C"};
  f.recs = {person("1", 1500, 1560, "A", "A", "x"), person("2", 1500, 1560, "B", "B", "y")};
  f.occs = {"x", "y"};
  const auto t = f.tensor({9.0, 99.0});
  const auto s = svd_factors(t, Flow::births, 5);
  EXPECT_EQ(s.available, 2u);
  EXPECT_TRUE(s.padded);
  // log10(1 + 99) = 2 > log10(1 + 9) = 1, so factor 1 points at B.
  EXPECT_NEAR(s.factors(1, 0), 1.0, 1e-12);
  EXPECT_NEAR(s.factors(0, 1), 1.0, 1e-12);
  for (std::size_t c = 0; c < 5; ++c) EXPECT_EQ(s.factors(2, c), 0.0);
  for (std::size_t c = 2; c < 5; ++c) EXPECT_EQ(s.factors(0, c), 0.0);
}

TEST(AvgAge, LifespanMean) {
  Fixture f;
  f.recs = {person("1", 1500, 1550, "A", "A", "x"), person("2", 1500, 1570, "A", "A", "x"),
            person("3", 1500, std::nullopt, "A", std::nullopt, "x")};
  const auto flows = assign_flows(f.recs, f.locs, 1600, 150);
  const auto a = avg_age(flows, f.recs, f.ids);
  EXPECT_DOUBLE_EQ(a.values[0], 60.0);
  EXPECT_FALSE(a.flagged[0]);
  EXPECT_DOUBLE_EQ(a.values[1], 60.0);
  EXPECT_TRUE(a.flagged[1]);

  const auto s = avg_age(flows, f.recs, f.ids, AgeMode::age_at_snapshot);
  EXPECT_DOUBLE_EQ(s.values[0], (50.0 + 70.0 + 100.0) / 3.0);
}

TEST(Linearize, Examples) {
  EXPECT_EQ(linearize(0, Scale::log10p1), 0.0);
  EXPECT_EQ(linearize(0, Scale::asinh), 0.0);
  EXPECT_NEAR(linearize(99, Scale::log10p1), 2.0, 1e-15);
  EXPECT_NEAR(linearize(1, Scale::asinh), 0.881374, 1e-6);
  EXPECT_THROW(linearize(-1, Scale::asinh), ValidationError);
}

struct WorldFixture {
  LocationTable locs = two_countries();
  std::vector<BiographyRecord> recs = {
      person("1", 1450, 1520, "A", "A", "painter"), person("2", 1460, 1530, "A", "B", "lawyer"),
      person("3", 1470, 1540, "B", "B", "priest"), person("4", 1480, 1545, "B", "A", "painter"),
      person("5", 1490, 1546, "A", "A", "priest")};
};

TEST(BuildFeatureMatrix, ColumnCount) {
  WorldFixture w;
  const auto occs = occupation_list(w.recs);
  ASSERT_EQ(occs.size(), 3u);
  const auto yf = compute_year_features(1550, w.recs, hpi_weights(w.recs), w.locs, occs, {});
  EXPECT_EQ(yf.matrix.columns.size(), 51u);
  GdpTable source = {{{"A", 1500}, 1000.0}, {{"B", 1500}, 800.0}};
  const auto fm = build_feature_matrix(yf, source, {}, w.locs);
  EXPECT_EQ(fm.matrix.columns.size(), 52u);
  EXPECT_EQ(fm.matrix.columns.back(), "init_gdp");
  EXPECT_NEAR(fm.matrix.values(0, 51), 3.0, 1e-12);
  EXPECT_NO_THROW(fm.matrix.validate());
  for (const char* name : {"births.total", "emigrants.painter", "eci.deaths", "svd.immigrants.5", "dummy.East",
                           "dummy.West", "avg_age", "diversity.births", "ubiquity.emigrants"})
    EXPECT_TRUE(fm.matrix.column_index(name).has_value()) << name;
}

TEST(BuildFeatureMatrix, EarliestPeriodHasNoLag) {
  WorldFixture w;
  for (auto& r : w.recs) {
    r.birth_year -= 200;
    *r.death_year -= 200;
  }
  const auto yf = compute_year_features(1350, w.recs, hpi_weights(w.recs), w.locs, occupation_list(w.recs), {});
  const auto fm = build_feature_matrix(yf, {}, {}, w.locs);
  EXPECT_FALSE(fm.matrix.column_index("init_gdp").has_value());
}

TEST(BuildFeatureMatrix, EmptyWindowFails) {
  WorldFixture w;
  EXPECT_THROW(compute_year_features(1300, w.recs, hpi_weights(w.recs), w.locs, occupation_list(w.recs), {}),
               ValidationError);
}

TEST(BuildFeatureMatrix, IndependentOfRecordOrder) {
  WorldFixture w;
  const auto occs = occupation_list(w.recs);
  const auto a = compute_year_features(1550, w.recs, hpi_weights(w.recs), w.locs, occs, {});
  std::vector<BiographyRecord> rev(w.recs.rbegin(), w.recs.rend());
  const auto b = compute_year_features(1550, rev, hpi_weights(rev), w.locs, occs, {});
  EXPECT_EQ(a.matrix.to_csv(), b.matrix.to_csv());
}

TEST(InitialGdp, FallbackChain) {
  const LocationTable locs({{"AT", "Austria", LocationLevel::country, "", "West"},
                            {"DE", "Germany", LocationLevel::country, "", "West"},
                            {"FR", "France", LocationLevel::country, "", "West"},
                            {"AT1", "Vienna", LocationLevel::region, "AT", ""},
                            {"DE1", "Bavaria", LocationLevel::region, "DE", ""},
                            {"FR1", "Paris", LocationLevel::region, "FR", ""},
                            {"X", "Nowhere", LocationLevel::country, "", "South"}});
  const GdpTable source = {{{"DE", 1750}, 1000.0}, {{"FR", 1750}, 10000.0}, {{"FR1", 1750}, 100.0}};
  const GdpTable model = {{{"AT", 1750}, 2000.0}};

  const auto at = initial_gdp("AT", 1800, source, model, locs);
  EXPECT_EQ(at.provenance, InitProvenance::model);
  EXPECT_NEAR(at.log10_value, std::log10(2000.0), 1e-12);
  EXPECT_EQ(initial_gdp("FR1", 1800, source, model, locs).provenance, InitProvenance::source);
  EXPECT_EQ(initial_gdp("DE1", 1800, source, model, locs).provenance, InitProvenance::country_source);
  EXPECT_EQ(initial_gdp("AT1", 1800, source, model, locs).provenance, InitProvenance::country_model);

  const auto supra = initial_gdp("AT1", 1800, source, {}, locs);
  EXPECT_EQ(supra.provenance, InitProvenance::supra_mean);
  EXPECT_NEAR(supra.log10_value, std::log10(5500.0), 1e-12);
  EXPECT_THROW(initial_gdp("X", 1800, source, model, locs), ValidationError);
}

}  // namespace
}  // namespace histgdp
