#include "histgdp/explain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>

#include "histgdp/csv.hpp"
#include "histgdp/errors.hpp"
#include "histgdp/parallel.hpp"
#include "histgdp/rng.hpp"

namespace histgdp::explain {
namespace {

std::string exact(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Standardized background column means, in model order.
std::vector<double> background_means(const en::EnModel& model, const Matrix& background,
                                     std::span<const std::string> names) {
  if (background.rows() == 0) throw ValidationError("shapley: empty background");
  const Matrix z = en::standardize_with(model, background, names);
  std::vector<double> m(z.cols(), 0.0);
  for (std::size_t i = 0; i < z.rows(); ++i)
    for (std::size_t j = 0; j < z.cols(); ++j) m[j] += z(i, j);
  for (double& v : m) v /= static_cast<double>(z.rows());
  return m;
}

Attribution linear_attribution(const en::EnModel& model, std::span<const double> z, std::span<const double> mean) {
  Attribution a;
  a.features = model.feature_names;
  a.phi.resize(z.size());
  a.se.assign(z.size(), 0.0);
  a.base = model.intercept;
  a.prediction = model.intercept;
  for (std::size_t j = 0; j < z.size(); ++j) {
    const double b = model.coefficients[j];
    a.phi[j] = b == 0.0 ? 0.0 : b * (z[j] - mean[j]);
    a.base += b * mean[j];
    a.prediction += b * z[j];
  }
  return a;
}

void check_background(std::span<const double> x, const Matrix& background) {
  if (background.rows() == 0) throw ValidationError("shapley: empty background");
  if (background.cols() != x.size()) throw ValidationError("shapley: background and instance widths differ");
}

}  // namespace

Attribution shapley_linear_exact(const en::EnModel& model, std::span<const double> x,
                                 std::span<const std::string> names, const Matrix& background) {
  const auto mean = background_means(model, background, names);
  const Matrix z = en::standardize_with(model, Matrix(1, x.size(), std::vector<double>(x.begin(), x.end())), names);
  return linear_attribution(model, z.row(0), mean);
}

std::vector<Attribution> shapley_linear_exact(const en::EnModel& model, const FeatureMatrix& instances,
                                              const FeatureMatrix& background) {
  const auto mean = background_means(model, background.values, background.columns);
  const Matrix z = en::standardize_with(model, instances.values, instances.columns);
  std::vector<Attribution> out;
  out.reserve(z.rows());
  for (std::size_t i = 0; i < z.rows(); ++i) {
    out.push_back(linear_attribution(model, z.row(i), mean));
    out.back().key = instances.rows[i];
  }
  return out;
}

PredictFn linear_predictor(const en::EnModel& model) {
  return [model](std::span<const double> x) {
    if (x.size() != model.coefficients.size()) throw ValidationError("linear_predictor: wrong input width");
    double y = model.intercept;
    for (std::size_t j = 0; j < x.size(); ++j)
      if (model.sds[j] > 0.0) y += model.coefficients[j] * (x[j] - model.means[j]) / model.sds[j];
    return y;
  };
}

Attribution shapley_permutation(const PredictFn& f, std::span<const double> x, const Matrix& background,
                                std::size_t n_permutations, std::uint64_t seed) {
  if (n_permutations < 10) throw ValidationError("shapley_permutation: at least 10 permutations required");
  check_background(x, background);
  const std::size_t p = x.size();
  Rng rng(seed);
  std::vector<std::size_t> order(p);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> sum(p, 0.0), sum_sq(p, 0.0), z(p);
  double base = 0.0;
  for (std::size_t k = 0; k < n_permutations; ++k) {
    rng.shuffle(std::span<std::size_t>(order));
    const auto b = background.row(rng.uniform_index(background.rows()));
    std::copy(b.begin(), b.end(), z.begin());
    double prev = f(z);
    base += prev;
    for (std::size_t j : order) {
      z[j] = x[j];
      const double cur = f(z);
      const double d = cur - prev;
      sum[j] += d;
      sum_sq[j] += d * d;
      prev = cur;
    }
  }
  const double n = static_cast<double>(n_permutations);
  Attribution a;
  a.phi.resize(p);
  a.se.resize(p);
  for (std::size_t j = 0; j < p; ++j) {
    a.phi[j] = sum[j] / n;
    const double var = std::max(0.0, (sum_sq[j] - n * a.phi[j] * a.phi[j]) / (n - 1.0));
    a.se[j] = std::sqrt(var / n);
  }
  a.base = base / n;
  a.prediction = f(x);
  return a;
}

Attribution shapley_all_permutations(const PredictFn& f, std::span<const double> x, const Matrix& background) {
  check_background(x, background);
  const std::size_t p = x.size();
  if (p > 9) throw ValidationError("shapley_all_permutations: at most 9 features");
  std::vector<std::size_t> order(p);
  std::vector<double> sum(p, 0.0), z(p);
  double base = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 0; r < background.rows(); ++r) {
    const auto b = background.row(r);
    std::iota(order.begin(), order.end(), 0);
    do {
      std::copy(b.begin(), b.end(), z.begin());
      double prev = f(z);
      base += prev;
      for (std::size_t j : order) {
        z[j] = x[j];
        const double cur = f(z);
        sum[j] += cur - prev;
        prev = cur;
      }
      ++count;
    } while (std::next_permutation(order.begin(), order.end()));
  }
  Attribution a;
  a.phi.resize(p);
  a.se.assign(p, 0.0);
  for (std::size_t j = 0; j < p; ++j) a.phi[j] = sum[j] / static_cast<double>(count);
  a.base = base / static_cast<double>(count);
  a.prediction = f(x);
  return a;
}

std::vector<std::pair<std::string, double>> rank_features(const std::vector<Attribution>& attributions) {
  if (attributions.empty()) throw ValidationError("rank_features: no attributions");
  const auto& names = attributions.front().features;
  std::vector<double> total(names.size(), 0.0);
  for (const auto& a : attributions) {
    if (a.features != names || a.phi.size() != names.size())
      throw ValidationError("rank_features: attributions disagree on the feature list");
    for (std::size_t j = 0; j < names.size(); ++j) total[j] += std::abs(a.phi[j]);
  }
  std::vector<std::pair<std::string, double>> out;
  for (std::size_t j = 0; j < names.size(); ++j)
    out.emplace_back(names[j], total[j] / static_cast<double>(attributions.size()));
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  return out;
}

std::vector<Attribution> explain_period(const pipeline::TrainedPeriodModel& model, const ExplainOptions& options) {
  if (model.kind != pipeline::ModelKind::elastic_net)
    throw ValidationError("explain: only elastic-net models are attributed");
  const FeatureMatrix& train = model.training;
  if (train.rows.empty()) throw ValidationError("explain: model has no training rows");
  if (options.method == Method::exact) return shapley_linear_exact(model.en, train, train);

  if (train.columns != model.en.feature_names) throw ValidationError("explain: training columns differ from the model");
  const PredictFn f = linear_predictor(model.en);
  std::vector<Attribution> out(train.rows.size());
  parallel_for(out.size(), options.threads, [&](std::size_t i) {
    out[i] = shapley_permutation(f, train.values.row(i), train.values, options.n_permutations,
                                 child_seed(options.seed, "shapley", i));
    out[i].key = train.rows[i];
    out[i].features = train.columns;
  });
  return out;
}

std::string shapley_csv(const std::vector<Attribution>& attributions) {
  std::string out = "location_id,year,feature,phi,se\n";
  for (const auto& a : attributions)
    for (std::size_t j = 0; j < a.features.size(); ++j)
      out += csv::join({a.key.location_id, std::to_string(a.key.year), a.features[j], exact(a.phi[j]), exact(a.se[j])}) +
             "\n";
  return out;
}

std::string feature_importance_csv(const std::vector<std::pair<std::string, double>>& ranking) {
  std::string out = "rank,feature,mean_abs_phi\n";
  for (std::size_t i = 0; i < ranking.size(); ++i)
    out += csv::join({std::to_string(i + 1), ranking[i].first, exact(ranking[i].second)}) + "\n";
  return out;
}

}  // namespace histgdp::explain
