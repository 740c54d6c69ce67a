#include "histgdp/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "histgdp/errors.hpp"

namespace histgdp::numerics {

namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();

struct RawSvd {
  Matrix u;
  std::vector<double> s;
  Matrix v;
  int sweeps = 0;
};

// Hestenes one-sided Jacobi for rows >= cols. Orthogonalizes the columns of
// a working copy; V accumulates the rotations.
RawSvd jacobi_tall(const Matrix& m, std::string_view name, const SvdOptions& options) {
  const std::size_t rows = m.rows();
  const std::size_t n = m.cols();
  Matrix a = m;
  Matrix v = Matrix::identity(n);

  auto rotate = [](Matrix& w, std::size_t i, std::size_t j, double cs, double sn) {
    for (std::size_t k = 0; k < w.rows(); ++k) {
      const double wi = w(k, i);
      const double wj = w(k, j);
      w(k, i) = cs * wi - sn * wj;
      w(k, j) = sn * wi + cs * wj;
    }
  };

  // Columns this small relative to the whole matrix are rounding noise of a
  // zero singular value; their mutual angles never settle.
  const double negligible = 1e-30 * [&] {
    double f = 0.0;
    for (double x : a.values()) f += x * x;
    return f;
  }();

  int sweep = 0;
  bool converged = n < 2;
  while (!converged) {
    if (sweep == options.max_sweeps) {
      throw NumericalError("svd of " + std::string(name) + " did not converge in " +
                           std::to_string(options.max_sweeps) + " sweeps");
    }
    ++sweep;
    bool rotated = false;
    for (std::size_t j = 1; j < n; ++j) {
      for (std::size_t i = 0; i < j; ++i) {
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t k = 0; k < rows; ++k) {
          alpha += a(k, i) * a(k, i);
          beta += a(k, j) * a(k, j);
          gamma += a(k, i) * a(k, j);
        }
        if (alpha <= negligible || beta <= negligible) continue;
        if (std::abs(gamma) <= options.tolerance * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double cs = 1.0 / std::sqrt(1.0 + t * t);
        const double sn = cs * t;
        rotate(a, i, j, cs, sn);
        rotate(v, i, j, cs, sn);
      }
    }
    converged = !rotated;
  }

  std::vector<double> s(n);
  for (std::size_t c = 0; c < n; ++c) {
    double norm = 0.0;
    for (std::size_t k = 0; k < rows; ++k) norm += a(k, c) * a(k, c);
    s[c] = std::sqrt(norm);
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return s[x] > s[y]; });

  RawSvd out;
  out.sweeps = sweep;
  out.s.resize(n);
  out.u = Matrix(rows, n);
  out.v = Matrix(n, n);
  const double smax = n == 0 ? 0.0 : s[order[0]];
  const double cutoff = smax * static_cast<double>(std::max(rows, n)) * kEps;
  std::vector<bool> filled(n, false);
  for (std::size_t c = 0; c < n; ++c) {
    const std::size_t src = order[c];
    out.s[c] = s[src];
    for (std::size_t k = 0; k < n; ++k) out.v(k, c) = v(k, src);
    if (s[src] > cutoff && s[src] > 0.0) {
      for (std::size_t k = 0; k < rows; ++k) out.u(k, c) = a(k, src) / s[src];
      filled[c] = true;
    }
  }

  // Complete U columns of (numerically) zero singular values from the
  // standard basis, orthogonalized against everything already present.
  std::size_t basis = 0;
  for (std::size_t c = 0; c < n; ++c) {
    if (filled[c]) continue;
    while (basis < rows) {
      std::vector<double> cand(rows, 0.0);
      cand[basis++] = 1.0;
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t o = 0; o < n; ++o) {
          if (!filled[o]) continue;
          double proj = 0.0;
          for (std::size_t k = 0; k < rows; ++k) proj += cand[k] * out.u(k, o);
          for (std::size_t k = 0; k < rows; ++k) cand[k] -= proj * out.u(k, o);
        }
      }
      double norm = 0.0;
      for (double x : cand) norm += x * x;
      norm = std::sqrt(norm);
      if (norm > 1e-8) {
        for (std::size_t k = 0; k < rows; ++k) out.u(k, c) = cand[k] / norm;
        filled[c] = true;
        break;
      }
    }
  }
  return out;
}

}  // namespace

std::size_t SvdResult::rank(double relative_tolerance) const {
  if (s.empty()) return 0;
  const double tol = relative_tolerance >= 0.0
                         ? relative_tolerance * s.front()
                         : s.front() * static_cast<double>(std::max(u.rows(), v.rows())) * kEps;
  std::size_t r = 0;
  for (double x : s)
    if (x > tol) ++r;
  return r;
}

SvdResult svd(const Matrix& m, std::string_view name, const SvdOptions& options) {
  if (m.rows() == 0 || m.cols() == 0) throw ValidationError("svd of empty " + std::string(name));
  if (!m.all_finite()) throw ValidationError("svd of " + std::string(name) + ": non-finite entries");

  SvdResult out;
  if (m.rows() >= m.cols()) {
    auto raw = jacobi_tall(m, name, options);
    out.u = std::move(raw.u);
    out.v = std::move(raw.v);
    out.s = std::move(raw.s);
    out.sweeps = raw.sweeps;
  } else {
    auto raw = jacobi_tall(m.transpose(), name, options);
    out.u = std::move(raw.v);
    out.v = std::move(raw.u);
    out.s = std::move(raw.s);
    out.sweeps = raw.sweeps;
  }

  for (std::size_t c = 0; c < out.s.size(); ++c) {
    std::size_t arg = 0;
    double best = -1.0;
    for (std::size_t k = 0; k < out.u.rows(); ++k) {
      if (std::abs(out.u(k, c)) > best) {
        best = std::abs(out.u(k, c));
        arg = k;
      }
    }
    if (out.u(arg, c) < 0.0) {
      for (std::size_t k = 0; k < out.u.rows(); ++k) out.u(k, c) = -out.u(k, c);
      for (std::size_t k = 0; k < out.v.rows(); ++k) out.v(k, c) = -out.v(k, c);
    }
  }
  return out;
}

OlsResult ols_fit(const Matrix& x, std::span<const double> y) {
  if (x.rows() != y.size()) throw ValidationError("ols_fit: X has " + std::to_string(x.rows()) +
                                                  " rows but y has " + std::to_string(y.size()));
  if (x.rows() == 0) throw ValidationError("ols_fit: no observations");
  const std::size_t n = x.rows();
  const std::size_t p = x.cols() + 1;
  Matrix z(n, p);
  for (std::size_t i = 0; i < n; ++i) {
    z(i, 0) = 1.0;
    for (std::size_t j = 1; j < p; ++j) z(i, j) = x(i, j - 1);
  }
  const auto dec = svd(z, "ols design");
  const double tol = dec.s.front() * static_cast<double>(std::max(n, p)) * kEps;
  const std::size_t r = dec.s.size();
  std::vector<double> uty(r, 0.0);
  for (std::size_t c = 0; c < r; ++c) {
    if (dec.s[c] <= tol) continue;
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += dec.u(i, c) * y[i];
    uty[c] = acc / dec.s[c];
  }
  std::vector<double> beta(p, 0.0);
  for (std::size_t j = 0; j < p; ++j)
    for (std::size_t c = 0; c < r; ++c) beta[j] += dec.v(j, c) * uty[c];

  OlsResult out;
  out.rank = 0;
  for (double sv : dec.s)
    if (sv > tol) ++out.rank;
  out.rank_deficient = out.rank < p;
  out.intercept = beta[0];
  out.coefficients.assign(beta.begin() + 1, beta.end());
  return out;
}

double mean(std::span<const double> values) {
  if (values.empty()) throw ValidationError("mean of empty sample");
  double s = 0.0;
  for (double v : values) s += v;
  return s / static_cast<double>(values.size());
}

double population_sd(std::span<const double> values) {
  const double m = mean(values);
  double s = 0.0;
  for (double v : values) s += (v - m) * (v - m);
  return std::sqrt(s / static_cast<double>(values.size()));
}

Standardized standardize(const Matrix& x, std::span<const std::string> names) {
  Standardized out;
  const std::size_t n = x.rows();
  for (std::size_t c = 0; c < x.cols(); ++c) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (std::size_t r = 0; r < n; ++r) {
      lo = std::min(lo, x(r, c));
      hi = std::max(hi, x(r, c));
    }
    if (n == 0 || lo == hi) {
      out.dropped.push_back(c);
      if (c < names.size()) out.dropped_names.push_back(names[c]);
      continue;
    }
    out.kept.push_back(c);
  }
  out.values = Matrix(n, out.kept.size());
  for (std::size_t j = 0; j < out.kept.size(); ++j) {
    const auto col = x.column(out.kept[j]);
    const double m = mean(col);
    double ss = 0.0;
    for (double v : col) ss += (v - m) * (v - m);
    const double sd = std::sqrt(ss / static_cast<double>(n));
    out.means.push_back(m);
    out.sds.push_back(sd);
    for (std::size_t r = 0; r < n; ++r) out.values(r, j) = (col[r] - m) / sd;
  }
  return out;
}

double quantile(std::span<const double> values, double p) {
  if (values.empty()) throw ValidationError("quantile of empty sample");
  if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("quantile probability outside [0, 1]");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double h = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = h - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

std::vector<double> midranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double regularized_gamma_q(double a, double x) {
  if (!(a > 0.0) || x < 0.0) throw ValidationError("regularized_gamma_q: invalid arguments");
  if (x == 0.0) return 1.0;
  const double log_prefactor = -x + a * std::log(x) - std::lgamma(a);
  constexpr int kMaxIter = 10000;
  if (x < a + 1.0) {
    // Series for P(a, x).
    double ap = a;
    double term = 1.0 / a;
    double sum = term;
    for (int i = 0; i < kMaxIter; ++i) {
      ap += 1.0;
      term *= x / ap;
      sum += term;
      if (std::abs(term) < std::abs(sum) * kEps) break;
    }
    return 1.0 - sum * std::exp(log_prefactor);
  }
  // Modified Lentz continued fraction for Q(a, x).
  constexpr double kTiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / kTiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i <= kMaxIter; ++i) {
    const double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < kTiny) d = kTiny;
    c = b + an / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < kEps) break;
  }
  return std::exp(log_prefactor) * h;
}

double chi_square_sf(double x, double df) {
  if (!(df > 0.0)) throw ValidationError("chi_square_sf: df must be positive");
  if (x <= 0.0) return 1.0;
  return regularized_gamma_q(0.5 * df, 0.5 * x);
}

KruskalWallis kruskal_wallis(const std::vector<std::vector<double>>& groups) {
  if (groups.size() < 2) throw ValidationError("kruskal_wallis needs at least two groups");
  std::vector<double> pooled;
  for (const auto& g : groups) {
    if (g.empty()) throw ValidationError("kruskal_wallis: empty group");
    pooled.insert(pooled.end(), g.begin(), g.end());
  }
  const double n = static_cast<double>(pooled.size());
  const auto ranks = midranks(pooled);

  std::vector<double> sorted = pooled;
  std::sort(sorted.begin(), sorted.end());
  double ties = 0.0;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    const double t = static_cast<double>(j - i);
    ties += t * t * t - t;
    i = j;
  }
  const double correction = 1.0 - ties / (n * n * n - n);
  if (correction <= 0.0) return {0.0, 1.0};

  double acc = 0.0;
  std::size_t offset = 0;
  for (const auto& g : groups) {
    double r = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) r += ranks[offset + i];
    offset += g.size();
    acc += r * r / static_cast<double>(g.size());
  }
  double h = 12.0 / (n * (n + 1.0)) * acc - 3.0 * (n + 1.0);
  h = std::max(0.0, h / correction);
  return {h, chi_square_sf(h, static_cast<double>(groups.size() - 1))};
}

double r2_log(std::span<const double> predicted, std::span<const double> observed) {
  if (predicted.size() != observed.size()) throw ValidationError("r2_log: length mismatch");
  if (observed.size() < 2) throw ValidationError("r2_log: need at least two observations");
  const double m = mean(observed);
  double sse = 0.0, sst = 0.0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    sse += (observed[i] - predicted[i]) * (observed[i] - predicted[i]);
    sst += (observed[i] - m) * (observed[i] - m);
  }
  if (sst == 0.0) throw ValidationError("r2_log: observed values have zero variance");
  return 1.0 - sse / sst;
}

double mae_relative(std::span<const double> predicted_level, std::span<const double> observed_level) {
  if (predicted_level.size() != observed_level.size()) throw ValidationError("mae_relative: length mismatch");
  if (observed_level.empty()) throw ValidationError("mae_relative: empty input");
  double abs_err = 0.0, total = 0.0;
  for (std::size_t i = 0; i < observed_level.size(); ++i) {
    if (!(observed_level[i] > 0.0)) throw ValidationError("mae_relative: observed level must be positive");
    abs_err += std::abs(predicted_level[i] - observed_level[i]);
    total += observed_level[i];
  }
  return abs_err / total;
}

double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ValidationError("pearson: length mismatch");
  if (a.size() < 2) throw ValidationError("pearson: need at least two pairs");
  const double ma = mean(a);
  const double mb = mean(b);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  // Constant input carries no linear association.
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

double spearman(std::span<const double> a, std::span<const double> b) {
  const auto ra = midranks(a);
  const auto rb = midranks(b);
  return pearson(ra, rb);
}

}  // namespace histgdp::numerics
