#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "histgdp/elasticnet.hpp"
#include "histgdp/features.hpp"
#include "histgdp/matrix.hpp"
#include "histgdp/pipeline.hpp"

namespace histgdp::explain {

/// Shapley values of one prediction, in log10 GDP units.
struct Attribution {
  RowKey key;
  std::vector<std::string> features;
  std::vector<double> phi;
  std::vector<double> se;  // zeros for exact values
  double base = 0.0;       // mean prediction over the background
  double prediction = 0.0;
};

/// phi_i = b_i (x_i - mean_i) in the model's standardized space, where the
/// mean is taken over the standardized background. `names` label the
/// columns of x and background; a missing model column throws
/// ValidationError.
Attribution shapley_linear_exact(const en::EnModel& model, std::span<const double> x,
                                 std::span<const std::string> names, const Matrix& background);

/// Exact attributions for every row of `instances`.
std::vector<Attribution> shapley_linear_exact(const en::EnModel& model, const FeatureMatrix& instances,
                                              const FeatureMatrix& background);

using PredictFn = std::function<double(std::span<const double>)>;

/// Raw-scale prediction of a linear model whose inputs follow
/// model.feature_names.
PredictFn linear_predictor(const en::EnModel& model);

/// Monte-Carlo Shapley values. Each permutation draws one background row,
/// then switches features to their values in x in permutation order; a
/// feature's estimate is its mean marginal change, with standard error
/// sd / sqrt(n_permutations). Throws ValidationError below 10 permutations.
Attribution shapley_permutation(const PredictFn& f, std::span<const double> x, const Matrix& background,
                                std::size_t n_permutations, std::uint64_t seed);

/// Averages every one of the |F|! orderings against every background row.
/// Intended for small |F| (at most 9).
Attribution shapley_all_permutations(const PredictFn& f, std::span<const double> x, const Matrix& background);

/// Features by mean |phi| over the attributions, descending, ties by name.
/// Throws ValidationError when empty or when feature lists differ.
std::vector<std::pair<std::string, double>> rank_features(const std::vector<Attribution>& attributions);

enum class Method { exact, permutation };

struct ExplainOptions {
  Method method = Method::exact;
  std::size_t n_permutations = 1000;
  std::uint64_t seed = 0;
  int threads = 1;
};

/// Attributions of a trained elastic-net period model over its labeled
/// training rows, with the training matrix as background. Instance i of the
/// permutation method uses child_seed(seed, "shapley", i).
std::vector<Attribution> explain_period(const pipeline::TrainedPeriodModel& model, const ExplainOptions& options);

/// location_id,year,feature,phi,se
std::string shapley_csv(const std::vector<Attribution>& attributions);
/// rank,feature,mean_abs_phi
std::string feature_importance_csv(const std::vector<std::pair<std::string, double>>& ranking);

}  // namespace histgdp::explain
