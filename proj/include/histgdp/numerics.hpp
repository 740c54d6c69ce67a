#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "histgdp/matrix.hpp"

namespace histgdp::numerics {

// Thin SVD: U is rows x r, V is cols x r, r = min(rows, cols).
struct SvdResult {
  Matrix u;
  std::vector<double> s;  // descending, non-negative
  Matrix v;
  int sweeps = 0;

  std::size_t rank(double relative_tolerance = -1.0) const;
};

struct SvdOptions {
  int max_sweeps = 100;
  double tolerance = 1e-12;  // on |a_i . a_j| / (|a_i| |a_j|)
};

/// One-sided Jacobi SVD.
///
/// Column signs are fixed so that the largest-magnitude entry of every U
/// column is positive (V columns flip with them). Columns of U belonging to
/// zero singular values are completed to an orthonormal set.
///
/// Throws ValidationError on non-finite input or an empty matrix and
/// NumericalError (naming `name`) when the sweep cap is reached.
SvdResult svd(const Matrix& m, std::string_view name = "matrix", const SvdOptions& options = {});

struct OlsResult {
  double intercept = 0.0;
  std::vector<double> coefficients;
  std::size_t rank = 0;  // of the intercept-augmented design
  bool rank_deficient = false;
};

/// Least squares with an implicit intercept column, solved through the SVD
/// pseudo-inverse (minimum-norm when X is rank deficient).
OlsResult ols_fit(const Matrix& x, std::span<const double> y);

struct Standardized {
  Matrix values;                         // only the kept columns
  std::vector<std::size_t> kept;         // indices into the input columns
  std::vector<double> means;             // per kept column
  std::vector<double> sds;               // population sd per kept column
  std::vector<std::size_t> dropped;      // constant input columns
  std::vector<std::string> dropped_names;
};

/// Centers and scales columns to mean 0 / population sd 1. Constant columns
/// are dropped and reported (by name when `names` is given).
Standardized standardize(const Matrix& x, std::span<const std::string> names = {});

double mean(std::span<const double> values);
/// Population (ddof = 0) standard deviation.
double population_sd(std::span<const double> values);

/// Linear-interpolation quantile on p*(n-1) of the sorted sample.
double quantile(std::span<const double> values, double p);

/// Mid-ranks (1-based) with ties averaged.
std::vector<double> midranks(std::span<const double> values);

/// Regularized upper incomplete gamma Q(a, x).
double regularized_gamma_q(double a, double x);
double chi_square_sf(double x, double df);

struct KruskalWallis {
  double h = 0.0;
  double p = 1.0;
};

KruskalWallis kruskal_wallis(const std::vector<std::vector<double>>& groups);

/// 1 - SSE/SST on log10 values; may be negative out of sample.
double r2_log(std::span<const double> predicted, std::span<const double> observed);
/// mean |predicted - observed| / mean(observed) on level values.
double mae_relative(std::span<const double> predicted_level, std::span<const double> observed_level);

double pearson(std::span<const double> a, std::span<const double> b);
double spearman(std::span<const double> a, std::span<const double> b);

}  // namespace histgdp::numerics
