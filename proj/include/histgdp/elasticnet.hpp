#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "histgdp/matrix.hpp"

namespace histgdp::en {

struct SolverOptions {
  double tolerance = 1e-7;  // max coordinate change per sweep
  int max_sweeps = 100000;
  /// Largest KKT residual accepted once coordinate changes are below
  /// `tolerance` and an exact active-set solve did not reach 1e-9 max_j G_jj.
  double kkt_tolerance = 1e-6;
};

struct CdResult {
  std::vector<double> beta;
  int sweeps = 0;
  double max_delta = 0.0;
};

/// Coordinate descent on ||y - Xb||^2 + lambda (alpha |b|_1 + (1 - alpha) |b|_2^2)
/// given G = XᵀX and c = Xᵀy. The update of coordinate j is
/// S(c_j - sum_{k != j} G_jk b_k, lambda alpha / 2) / (G_jj + lambda (1 - alpha)).
CdResult coordinate_descent(const Matrix& gram, std::span<const double> xty, double alpha, double lambda,
                            std::span<const double> warm_start = {}, const SolverOptions& options = {});

double soft_threshold(double z, double t);

struct EnModel {
  double alpha = 1.0;
  double lambda = 0.0;
  double intercept = 0.0;
  std::vector<std::string> feature_names;  // every training column
  std::vector<double> coefficients;        // standardized scale
  std::vector<double> means;               // training means
  std::vector<double> sds;                 // training sds; 0 marks a constant column
  int sweeps = 0;
  double max_delta = 0.0;
  std::string training_hash;

  /// Names with a nonzero coefficient, in training order.
  std::vector<std::string> selected_features() const;
};

/// Fits on an already standardized design. y need not be centered; the
/// intercept is mean(y). Throws ValidationError when a column of X is not
/// mean 0 / sd 1 within 1e-6 and NumericalError when the sweep cap is hit.
EnModel en_fit(const Matrix& x, std::span<const double> y, double alpha, double lambda,
               std::span<const double> warm_start = {}, const SolverOptions& options = {});

/// Standardizes raw features, fits, and stores the standardization so that
/// en_predict accepts raw-scale inputs. Constant columns get coefficient 0.
/// `warm_start` holds standardized-scale coefficients per input column.
EnModel fit_elastic_net(const Matrix& x, std::span<const std::string> names, std::span<const double> y,
                        double alpha, double lambda, const SolverOptions& options = {},
                        std::span<const double> warm_start = {});

/// intercept + standardized(X_new)·b. Columns are matched by name; a missing
/// training column throws ValidationError, extra columns are ignored with a
/// warning.
std::vector<double> en_predict(const EnModel& model, const Matrix& x, std::span<const std::string> names);

/// Standardizes `x` with the model's stored parameters, in the model's
/// column order. Constant training columns map to 0.
Matrix standardize_with(const EnModel& model, const Matrix& x, std::span<const std::string> names);

/// Geometric grid from lambda_max = 2 max_j |x_jᵀ(y - ȳ)| / alpha down to
/// lambda_max * ratio; alpha = 0 uses alpha = 0.01 for lambda_max.
std::vector<double> lambda_path(const Matrix& x, std::span<const double> y, double alpha,
                                std::size_t n_lambda = 100, double ratio = 1e-4);

enum class SelectionRule { min_mean_error, fold_average };

struct CvOptions {
  std::size_t k = 10;
  std::uint64_t seed = 0;
  std::size_t n_lambda = 100;
  double lambda_ratio = 1e-4;
  SelectionRule rule = SelectionRule::min_mean_error;
  /// Replaces the generated lambda path for every alpha when set.
  std::optional<std::vector<double>> lambdas;
  int threads = 1;
  SolverOptions solver;
};

struct CvCell {
  double alpha = 0.0;
  double lambda = 0.0;
  double mean_mse = 0.0;
  double sd_mse = 0.0;
};

struct CvResult {
  std::vector<CvCell> grid;  // alpha-major, lambda descending
  double alpha = 0.0;
  double lambda = 0.0;
  /// (alpha, lambda) minimizing validation MSE in each fold.
  std::vector<std::pair<double, double>> fold_optima;
};

/// k-fold cross-validation over alpha_grid x lambda path on raw features.
/// Rows are shuffled with the seed and cut into contiguous folds; each fold
/// is standardized on its training rows. The lambda grid comes from the
/// full data and is scaled by n_train / n inside each fold.
CvResult en_cv(const Matrix& x, std::span<const double> y, std::span<const double> alpha_grid,
               const CvOptions& options = {});

/// Default alpha grid: 0, 0.1, ..., 1.0.
std::vector<double> default_alpha_grid();

std::string to_json(const EnModel& model);
EnModel from_json(std::string_view text);

/// FNV-1a over the column names and the bit patterns of the values.
std::string content_hash(const Matrix& x, std::span<const std::string> names, std::span<const double> y = {});

}  // namespace histgdp::en
