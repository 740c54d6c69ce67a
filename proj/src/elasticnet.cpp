#include "histgdp/elasticnet.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <limits>
#include <map>
#include <numeric>

#include <json.hpp>

#include "histgdp/errors.hpp"
#include "histgdp/log.hpp"
#include "histgdp/numerics.hpp"
#include "histgdp/parallel.hpp"
#include "histgdp/rng.hpp"

namespace histgdp::en {

namespace {

double kkt_violation(std::span<const double> g, std::span<const double> beta, double l1, double l2) {
  double worst = 0.0;
  for (std::size_t j = 0; j < beta.size(); ++j) {
    if (beta[j] != 0.0) {
      const double sign = beta[j] > 0.0 ? 1.0 : -1.0;
      worst = std::max(worst, std::abs(g[j] - l1 * sign - l2 * beta[j]));
    } else {
      worst = std::max(worst, std::abs(g[j]) - l1);
    }
  }
  return worst;
}

// Cholesky solve of a symmetric system; false when a pivot is not safely
// positive.
// On failure at pivot j, `null` (when given) receives (-M11^-1 m_1j, 1, 0...),
// a vector M maps to nearly zero.
bool cholesky_solve(const Matrix& m, const std::vector<double>& rhs, std::vector<double>& sol,
                    std::vector<double>* null = nullptr) {
  const std::size_t n = m.rows();
  double max_diag = 0.0;
  for (std::size_t i = 0; i < n; ++i) max_diag = std::max(max_diag, m(i, i));
  Matrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double d = m(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (!(d > 1e-10 * max_diag)) {
      if (null) {
        null->assign(n, 0.0);
        auto& w = *null;
        for (std::size_t i = 0; i < j; ++i) {
          w[i] = m(i, j);
          for (std::size_t k = 0; k < i; ++k) w[i] -= l(i, k) * w[k];
          w[i] /= l(i, i);
        }
        for (std::size_t i = j; i-- > 0;) {
          for (std::size_t k = i + 1; k < j; ++k) w[i] -= l(k, i) * w[k];
          w[i] /= l(i, i);
        }
        for (std::size_t i = 0; i < j; ++i) w[i] = -w[i];
        w[j] = 1.0;
      }
      return false;
    }
    l(j, j) = std::sqrt(d);
    for (std::size_t i = j + 1; i < n; ++i) {
      double v = m(i, j);
      for (std::size_t k = 0; k < j; ++k) v -= l(i, k) * l(j, k);
      l(i, j) = v / l(j, j);
    }
  }
  sol = rhs;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < i; ++k) sol[i] -= l(i, k) * sol[k];
    sol[i] /= l(i, i);
  }
  for (std::size_t i = n; i-- > 0;) {
    for (std::size_t k = i + 1; k < n; ++k) sol[i] -= l(k, i) * sol[k];
    sol[i] /= l(i, i);
  }
  return true;
}

enum class Polish { failed, partial, solved };

// Solves (G_AA + l2 I) b_A = c_A - l1 sign(b_A) on the current active set
// through a pseudo-inverse. Returns false when a sign flips.
bool active_set_solve(const Matrix& gram, std::span<const double> xty, double l1, double l2,
                      std::vector<double>& beta, bool allow_svd = true);

// Cholesky variant. When signs flip, moves beta towards the solution up to
// the first zero crossing, which lowers the objective on a positive definite
// system, and reports a partial step. A singular system gets a step along
// its null vector instead.
Polish active_set_step(const Matrix& gram, std::span<const double> xty, double l1, double l2,
                       std::vector<double>& beta) {
  std::vector<std::size_t> active;
  for (std::size_t j = 0; j < beta.size(); ++j)
    if (beta[j] != 0.0) active.push_back(j);
  if (active.empty()) return Polish::failed;
  const std::size_t a = active.size();
  Matrix m(a, a);
  std::vector<double> rhs(a);
  for (std::size_t i = 0; i < a; ++i) {
    for (std::size_t k = 0; k < a; ++k) m(i, k) = gram(active[i], active[k]);
    m(i, i) += l2;
    rhs[i] = xty[active[i]] - l1 * (beta[active[i]] > 0.0 ? 1.0 : -1.0);
  }
  std::vector<double> sol;
  std::vector<double> v;
  if (!cholesky_solve(m, rhs, sol, &v)) {
    // Singular system: the fit is flat along a null vector; follow it in the
    // direction that shrinks the l1 term until a coefficient reaches zero.
    double slope = 0.0;
    for (std::size_t i = 0; i < a; ++i) slope += (beta[active[i]] > 0.0 ? 1.0 : -1.0) * v[i];
    if (slope > 0.0)
      for (double& x : v) x = -x;
    double t = std::numeric_limits<double>::infinity();
    std::size_t hit = a;
    for (std::size_t i = 0; i < a; ++i) {
      const double b = beta[active[i]];
      if (v[i] == 0.0 || (v[i] > 0.0) == (b > 0.0)) continue;
      if (-b / v[i] < t) {
        t = -b / v[i];
        hit = i;
      }
    }
    if (hit == a) return Polish::failed;
    for (std::size_t i = 0; i < a; ++i) {
      double& b = beta[active[i]];
      const double moved = b + t * v[i];
      b = i == hit || (moved > 0.0) != (b > 0.0) ? 0.0 : moved;
    }
    return Polish::partial;
  }
  double t = 1.0;
  std::size_t hit = a;
  for (std::size_t i = 0; i < a; ++i) {
    const double b = beta[active[i]];
    if (sol[i] != 0.0 && (sol[i] > 0.0) == (b > 0.0)) continue;
    const double ti = b / (b - sol[i]);
    if (ti < t) {
      t = ti;
      hit = i;
    }
  }
  if (hit == a) {
    for (std::size_t i = 0; i < a; ++i) beta[active[i]] = sol[i];
    return Polish::solved;
  }
  for (std::size_t i = 0; i < a; ++i) {
    double& b = beta[active[i]];
    const double moved = b + t * (sol[i] - b);
    b = i == hit || (moved > 0.0) != (b > 0.0) ? 0.0 : moved;
  }
  return Polish::partial;
}

bool active_set_solve(const Matrix& gram, std::span<const double> xty, double l1, double l2,
                      std::vector<double>& beta, bool allow_svd) {
  std::vector<std::size_t> active;
  for (std::size_t j = 0; j < beta.size(); ++j)
    if (beta[j] != 0.0) active.push_back(j);
  if (active.empty()) return false;
  const std::size_t a = active.size();
  Matrix m(a, a);
  std::vector<double> rhs(a);
  for (std::size_t i = 0; i < a; ++i) {
    for (std::size_t k = 0; k < a; ++k) m(i, k) = gram(active[i], active[k]);
    m(i, i) += l2;
    rhs[i] = xty[active[i]] - l1 * (beta[active[i]] > 0.0 ? 1.0 : -1.0);
  }
  std::vector<double> sol;
  if (!cholesky_solve(m, rhs, sol)) {
    if (!allow_svd) return false;
    numerics::SvdResult sv;
    try {
      sv = numerics::svd(m, "active-set system");
    } catch (const NumericalError&) {
      return false;
    }
    const double cutoff = sv.s.empty() ? 0.0 : 1e-12 * sv.s[0] * static_cast<double>(a);
    sol.assign(a, 0.0);
    for (std::size_t r = 0; r < sv.s.size(); ++r) {
      if (sv.s[r] <= cutoff) continue;
      double proj = 0.0;
      for (std::size_t i = 0; i < a; ++i) proj += sv.u(i, r) * rhs[i];
      proj /= sv.s[r];
      for (std::size_t i = 0; i < a; ++i) sol[i] += sv.v(i, r) * proj;
    }
  }
  for (std::size_t i = 0; i < a; ++i)
    if (sol[i] == 0.0 || (sol[i] > 0.0) != (beta[active[i]] > 0.0)) return false;
  for (std::size_t i = 0; i < a; ++i) beta[active[i]] = sol[i];
  return true;
}

std::string hex_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

double parse_hex_double(const nlohmann::json& j, const char* what) {
  if (!j.is_string()) throw ValidationError(std::string("model json: ") + what + " must be a hex-float string");
  const std::string s = j.get<std::string>();
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') throw ValidationError(std::string("model json: bad number for ") + what);
  return v;
}

}  // namespace

double soft_threshold(double z, double t) {
  if (z > t) return z - t;
  if (z < -t) return z + t;
  return 0.0;
}

CdResult coordinate_descent(const Matrix& gram, std::span<const double> xty, double alpha, double lambda,
                            std::span<const double> warm_start, const SolverOptions& options) {
  const std::size_t p = xty.size();
  if (gram.rows() != p || gram.cols() != p) throw ValidationError("coordinate_descent: gram/xty size mismatch");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("alpha must lie in [0, 1]");
  if (!(lambda >= 0.0)) throw ValidationError("lambda must be non-negative");

  CdResult out;
  out.beta.assign(p, 0.0);
  if (!warm_start.empty()) {
    if (warm_start.size() != p) throw ValidationError("coordinate_descent: warm start has the wrong length");
    std::copy(warm_start.begin(), warm_start.end(), out.beta.begin());
  }
  const double l1 = lambda * alpha / 2.0;
  const double l2 = lambda * (1.0 - alpha);

  // g_j = x_jᵀ(y - Xb)
  std::vector<double> g(xty.begin(), xty.end());
  for (std::size_t k = 0; k < p; ++k) {
    if (out.beta[k] == 0.0) continue;
    for (std::size_t j = 0; j < p; ++j) g[j] -= gram(j, k) * out.beta[k];
  }
  double scale = 1.0;
  for (std::size_t j = 0; j < p; ++j) scale = std::max(scale, gram(j, j));
  const double kkt_tolerance = 1e-9 * scale;

  auto sweep = [&](const std::vector<std::size_t>& coords) {
    double max_delta = 0.0;
    for (std::size_t j : coords) {
      const double old = out.beta[j];
      const double denom = gram(j, j) + l2;
      const double updated = denom > 0.0 ? soft_threshold(g[j] + gram(j, j) * old, l1) / denom : 0.0;
      const double d = updated - old;
      if (d == 0.0) continue;
      out.beta[j] = updated;
      const auto row = gram.row(j);  // symmetric
      for (std::size_t k = 0; k < p; ++k) g[k] -= d * row[k];
      max_delta = std::max(max_delta, std::abs(d));
    }
    ++out.sweeps;
    out.max_delta = max_delta;
    return max_delta;
  };

  auto refresh_gradient = [&](const std::vector<double>& beta) {
    std::vector<double> fresh(xty.begin(), xty.end());
    for (std::size_t k = 0; k < p; ++k) {
      if (beta[k] == 0.0) continue;
      const auto row = gram.row(k);
      for (std::size_t j = 0; j < p; ++j) fresh[j] -= row[j] * beta[k];
    }
    return fresh;
  };

  std::vector<std::size_t> all(p);
  std::iota(all.begin(), all.end(), 0);
  // Half the loss up to a constant, using g = c - Gb.
  auto objective = [&](const std::vector<double>& beta, const std::vector<double>& grad) {
    double v = 0.0;
    for (std::size_t j = 0; j < p; ++j)
      v += -0.5 * (xty[j] + grad[j]) * beta[j] + l1 * std::abs(beta[j]) + 0.5 * l2 * beta[j] * beta[j];
    return v;
  };

  int first_small = -1;
  int last_exact = 0;
  int stall_mark = 0;
  double stall_value = 0.0;

  // Exact solves on the current sign pattern, tried every few sweeps once
  // changes are small; up to four partial steps when signs flip. Kept when
  // the objective drops.
  int last_polish = 0;
  int polish_interval = 5;  // doubles after each failed attempt
  auto try_polish = [&](double delta) {
    if (delta > 1e-2 || out.sweeps - last_polish < polish_interval) return false;
    last_polish = out.sweeps;
    std::vector<double> polished = out.beta;
    bool accepted = false;
    std::vector<double> pg;
    Polish result = Polish::failed;
    for (int step = 0; step < 4; ++step) {
      const Polish r = active_set_step(gram, xty, l1, l2, polished);
      if (r == Polish::failed) break;
      result = r;
      if (r == Polish::solved) break;
    }
    if (result != Polish::failed) {
      pg = refresh_gradient(polished);
      accepted = objective(polished, pg) < objective(out.beta, refresh_gradient(out.beta));
    }
    if (!accepted) {
      polish_interval = std::min(polish_interval * 2, 80);
      return false;
    }
    polish_interval = 5;
    out.beta = std::move(polished);
    g = std::move(pg);
    return true;
  };

  while (out.sweeps < options.max_sweeps) {
    const double delta = sweep(all);
    if (delta < options.tolerance) {
      g = refresh_gradient(out.beta);
      const double violation = kkt_violation(g, out.beta, l1, l2);
      if (violation <= kkt_tolerance) return out;
      if (first_small < 0 || out.sweeps - last_exact >= 500) {
        last_exact = out.sweeps;
        std::vector<double> polished = out.beta;
        if (active_set_solve(gram, xty, l1, l2, polished)) {
          auto pg = refresh_gradient(polished);
          if (kkt_violation(pg, polished, l1, l2) <= kkt_tolerance) {
            out.beta = std::move(polished);
            return out;
          }
        }
      }
      if (violation <= options.kkt_tolerance) return out;
      if (first_small < 0) first_small = out.sweeps;
    }
    // On ill-conditioned designs the steps can hover around the tolerance
    // while the objective no longer moves; stop on stagnation.
    if (out.sweeps - stall_mark >= 1000) {
      const double f = objective(out.beta, refresh_gradient(out.beta));
      if (stall_mark > 0 && !(f < stall_value - 1e-9 * std::abs(stall_value))) return out;
      stall_mark = out.sweeps;
      stall_value = f;
    }
    if (try_polish(delta)) continue;
    // Iterate on the active set until it settles, then re-check all coordinates.
    std::vector<std::size_t> active;
    for (std::size_t j = 0; j < p; ++j)
      if (out.beta[j] != 0.0) active.push_back(j);
    if (active.empty() || active.size() == p) continue;
    for (int inner = 0; inner < 50 && out.sweeps < options.max_sweeps; ++inner) {
      const double d = sweep(active);
      if (d < options.tolerance || try_polish(d)) break;
    }
  }
  throw NumericalError("coordinate descent did not converge in " + std::to_string(options.max_sweeps) +
                       " sweeps (alpha " + std::to_string(alpha) + ", lambda " + std::to_string(lambda) +
                       ", last max change " + std::to_string(out.max_delta) + ")");
}

std::vector<std::string> EnModel::selected_features() const {
  std::vector<std::string> out;
  for (std::size_t j = 0; j < coefficients.size(); ++j)
    if (coefficients[j] != 0.0) out.push_back(feature_names[j]);
  return out;
}

EnModel en_fit(const Matrix& x, std::span<const double> y, double alpha, double lambda,
               std::span<const double> warm_start, const SolverOptions& options) {
  if (x.rows() != y.size()) throw ValidationError("en_fit: X and y have different row counts");
  if (x.rows() == 0) throw ValidationError("en_fit: empty design");
  const std::size_t n = x.rows();
  const std::size_t p = x.cols();
  for (std::size_t j = 0; j < p; ++j) {
    const auto col = x.column(j);
    const double m = numerics::mean(col);
    const double sd = numerics::population_sd(col);
    if (std::abs(m) > 1e-6 || std::abs(sd - 1.0) > 1e-6)
      throw ValidationError("en_fit: column " + std::to_string(j) + " is not standardized (mean " +
                            std::to_string(m) + ", sd " + std::to_string(sd) + ")");
  }
  const double ybar = numerics::mean(y);
  std::vector<double> yc(n);
  for (std::size_t i = 0; i < n; ++i) yc[i] = y[i] - ybar;
  const auto cd = coordinate_descent(gram(x), multiply_transposed(x, yc), alpha, lambda, warm_start, options);

  EnModel model;
  model.alpha = alpha;
  model.lambda = lambda;
  model.intercept = ybar;
  model.coefficients = cd.beta;
  model.means.assign(p, 0.0);
  model.sds.assign(p, 1.0);
  for (std::size_t j = 0; j < p; ++j) model.feature_names.push_back("x" + std::to_string(j + 1));
  model.sweeps = cd.sweeps;
  model.max_delta = cd.max_delta;
  model.training_hash = content_hash(x, model.feature_names, y);
  return model;
}

EnModel fit_elastic_net(const Matrix& x, std::span<const std::string> names, std::span<const double> y,
                        double alpha, double lambda, const SolverOptions& options,
                        std::span<const double> warm_start) {
  if (names.size() != x.cols()) throw ValidationError("fit_elastic_net: one name per column required");
  if (!warm_start.empty() && warm_start.size() != x.cols())
    throw ValidationError("fit_elastic_net: warm start has the wrong length");
  const auto st = numerics::standardize(x, names);
  std::vector<double> warm;
  if (!warm_start.empty())
    for (std::size_t j : st.kept) warm.push_back(warm_start[j]);
  EnModel inner = en_fit(st.values, y, alpha, lambda, warm, options);

  EnModel model;
  model.alpha = alpha;
  model.lambda = lambda;
  model.intercept = inner.intercept;
  model.feature_names.assign(names.begin(), names.end());
  model.coefficients.assign(x.cols(), 0.0);
  model.sds.assign(x.cols(), 0.0);
  model.means.assign(x.cols(), 0.0);
  for (std::size_t j : st.dropped) model.means[j] = x.rows() ? x(0, j) : 0.0;
  for (std::size_t a = 0; a < st.kept.size(); ++a) {
    const std::size_t j = st.kept[a];
    model.coefficients[j] = inner.coefficients[a];
    model.means[j] = st.means[a];
    model.sds[j] = st.sds[a];
  }
  model.sweeps = inner.sweeps;
  model.max_delta = inner.max_delta;
  model.training_hash = content_hash(x, names, y);
  return model;
}

Matrix standardize_with(const EnModel& model, const Matrix& x, std::span<const std::string> names) {
  if (names.size() != x.cols()) throw ValidationError("en_predict: one name per column required");
  std::map<std::string_view, std::size_t> index;
  for (std::size_t c = 0; c < names.size(); ++c) index.emplace(names[c], c);
  std::vector<std::size_t> source(model.feature_names.size());
  for (std::size_t j = 0; j < model.feature_names.size(); ++j) {
    auto it = index.find(model.feature_names[j]);
    if (it == index.end()) throw ValidationError("en_predict: missing feature column '" + model.feature_names[j] + "'");
    source[j] = it->second;
  }
  if (names.size() > model.feature_names.size()) {
    std::size_t extra = 0;
    for (const auto& n : names)
      if (std::find(model.feature_names.begin(), model.feature_names.end(), n) == model.feature_names.end()) ++extra;
    if (extra > 0) log::warn("en_predict: ignoring " + std::to_string(extra) + " column(s) unknown to the model");
  }
  Matrix z(x.rows(), model.feature_names.size());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < source.size(); ++j)
      z(i, j) = model.sds[j] > 0.0 ? (x(i, source[j]) - model.means[j]) / model.sds[j] : 0.0;
  return z;
}

std::vector<double> en_predict(const EnModel& model, const Matrix& x, std::span<const std::string> names) {
  const Matrix z = standardize_with(model, x, names);
  std::vector<double> out(x.rows(), model.intercept);
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < model.coefficients.size(); ++j) out[i] += z(i, j) * model.coefficients[j];
  return out;
}

std::vector<double> lambda_path(const Matrix& x, std::span<const double> y, double alpha, std::size_t n_lambda,
                                double ratio) {
  if (n_lambda == 0) throw ValidationError("lambda_path: n_lambda must be positive");
  if (!(ratio > 0.0 && ratio < 1.0)) throw ValidationError("lambda_path: ratio must lie in (0, 1)");
  if (x.rows() != y.size()) throw ValidationError("lambda_path: X and y have different row counts");
  const double ybar = numerics::mean(y);
  std::vector<double> yc(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) yc[i] = y[i] - ybar;
  const auto c = multiply_transposed(x, yc);
  double top = 0.0;
  for (double v : c) top = std::max(top, std::abs(v));
  const double a = alpha > 0.0 ? alpha : 0.01;
  double lambda_max = 2.0 * top / a;
  if (!(lambda_max > 0.0)) lambda_max = 1.0;  // constant response: any grid gives the zero fit
  std::vector<double> path(n_lambda);
  for (std::size_t i = 0; i < n_lambda; ++i) {
    const double t = n_lambda == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(n_lambda - 1);
    path[i] = lambda_max * std::pow(ratio, t);
  }
  return path;
}

std::vector<double> default_alpha_grid() {
  std::vector<double> g;
  for (int i = 0; i <= 10; ++i) g.push_back(i / 10.0);
  return g;
}

CvResult en_cv(const Matrix& x, std::span<const double> y, std::span<const double> alpha_grid,
               const CvOptions& options) {
  const std::size_t n = x.rows();
  const std::size_t k = options.k;
  if (y.size() != n) throw ValidationError("en_cv: X and y have different row counts");
  if (k < 2) throw ValidationError("en_cv: k must be at least 2");
  if (k > n) throw ValidationError("en_cv: k = " + std::to_string(k) + " exceeds the " + std::to_string(n) + " rows");
  if (alpha_grid.empty()) throw ValidationError("en_cv: empty alpha grid");
  for (double a : alpha_grid)
    if (!(a >= 0.0 && a <= 1.0)) throw ValidationError("en_cv: alpha outside [0, 1]");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(child_seed(options.seed, "cv-shuffle"));
  rng.shuffle(std::span<std::size_t>(order));

  std::vector<std::vector<double>> paths;
  {
    const auto full = numerics::standardize(x);
    for (double a : alpha_grid)
      paths.push_back(options.lambdas ? *options.lambdas
                                      : lambda_path(full.values, y, a, options.n_lambda, options.lambda_ratio));
  }

  const std::size_t n_alpha = alpha_grid.size();
  // mse[a][f][l]
  std::vector<std::vector<std::vector<double>>> mse(n_alpha, std::vector<std::vector<double>>(k));
  parallel_for(n_alpha * k, options.threads, [&](std::size_t cell) {
    const std::size_t ai = cell / k;
    const std::size_t f = cell % k;
    const std::size_t lo = f * n / k;
    const std::size_t hi = (f + 1) * n / k;
    std::vector<std::size_t> train, valid;
    for (std::size_t i = 0; i < n; ++i) (i >= lo && i < hi ? valid : train).push_back(order[i]);
    std::sort(train.begin(), train.end());
    std::sort(valid.begin(), valid.end());

    const Matrix xt = x.select_rows(train);
    const auto st = numerics::standardize(xt);
    std::vector<double> yt(train.size());
    for (std::size_t i = 0; i < train.size(); ++i) yt[i] = y[train[i]];
    const double ybar = numerics::mean(yt);
    for (double& v : yt) v -= ybar;
    const Matrix g = gram(st.values);
    const auto c = multiply_transposed(st.values, yt);
    Matrix zv(valid.size(), st.kept.size());
    for (std::size_t i = 0; i < valid.size(); ++i)
      for (std::size_t a = 0; a < st.kept.size(); ++a)
        zv(i, a) = (x(valid[i], st.kept[a]) - st.means[a]) / st.sds[a];

    const double scale = static_cast<double>(train.size()) / static_cast<double>(n);
    std::vector<double> beta(st.kept.size(), 0.0);
    auto& out = mse[ai][f];
    for (double lambda : paths[ai]) {
      beta = coordinate_descent(g, c, alpha_grid[ai], lambda * scale, beta, options.solver).beta;
      const auto pred = multiply(zv, beta);
      double sse = 0.0;
      for (std::size_t i = 0; i < valid.size(); ++i) {
        const double r = y[valid[i]] - (ybar + pred[i]);
        sse += r * r;
      }
      out.push_back(sse / static_cast<double>(valid.size()));
    }
  });

  CvResult result;
  for (std::size_t ai = 0; ai < n_alpha; ++ai) {
    for (std::size_t li = 0; li < paths[ai].size(); ++li) {
      std::vector<double> per_fold(k);
      for (std::size_t f = 0; f < k; ++f) per_fold[f] = mse[ai][f][li];
      result.grid.push_back({alpha_grid[ai], paths[ai][li], numerics::mean(per_fold), numerics::population_sd(per_fold)});
    }
  }
  const CvCell* best = nullptr;
  for (const auto& cell : result.grid) {
    if (best == nullptr || cell.mean_mse < best->mean_mse ||
        (cell.mean_mse == best->mean_mse && cell.lambda > best->lambda))
      best = &cell;
  }

  for (std::size_t f = 0; f < k; ++f) {
    double best_mse = 0.0, best_alpha = 0.0, best_lambda = 0.0;
    bool found = false;
    for (std::size_t ai = 0; ai < n_alpha; ++ai)
      for (std::size_t li = 0; li < paths[ai].size(); ++li) {
        const double v = mse[ai][f][li];
        if (!found || v < best_mse || (v == best_mse && paths[ai][li] > best_lambda)) {
          found = true;
          best_mse = v;
          best_alpha = alpha_grid[ai];
          best_lambda = paths[ai][li];
        }
      }
    result.fold_optima.emplace_back(best_alpha, best_lambda);
  }

  if (options.rule == SelectionRule::min_mean_error) {
    result.alpha = best->alpha;
    result.lambda = best->lambda;
  } else {
    double sa = 0.0, sl = 0.0;
    for (const auto& [a, l] : result.fold_optima) {
      sa += a;
      sl += l;
    }
    result.alpha = sa / static_cast<double>(k);
    result.lambda = sl / static_cast<double>(k);
  }
  return result;
}

std::string content_hash(const Matrix& x, std::span<const std::string> names, std::span<const double> y) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&](const void* data, std::size_t len) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  const std::uint64_t shape[2] = {x.rows(), x.cols()};
  feed(shape, sizeof shape);
  for (const auto& n : names) {
    feed(n.data(), n.size());
    feed("", 1);
  }
  for (double v : x.values()) feed(&v, sizeof v);
  for (double v : y) feed(&v, sizeof v);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
  return buf;
}

std::string to_json(const EnModel& model) {
  nlohmann::ordered_json j;
  j["alpha"] = hex_double(model.alpha);
  j["lambda"] = hex_double(model.lambda);
  j["intercept"] = hex_double(model.intercept);
  auto features = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < model.feature_names.size(); ++i) {
    nlohmann::ordered_json f;
    f["name"] = model.feature_names[i];
    f["coefficient"] = hex_double(model.coefficients[i]);
    f["mean"] = hex_double(model.means[i]);
    f["sd"] = hex_double(model.sds[i]);
    features.push_back(f);
  }
  j["features"] = features;
  j["selected_features"] = model.selected_features();
  j["convergence"] = {{"sweeps", model.sweeps}, {"max_delta", hex_double(model.max_delta)}};
  j["training_hash"] = model.training_hash;
  return j.dump(2) + "\n";
}

EnModel from_json(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("model json: ") + e.what());
  }
  EnModel m;
  try {
    m.alpha = parse_hex_double(j.at("alpha"), "alpha");
    m.lambda = parse_hex_double(j.at("lambda"), "lambda");
    m.intercept = parse_hex_double(j.at("intercept"), "intercept");
    for (const auto& f : j.at("features")) {
      m.feature_names.push_back(f.at("name").get<std::string>());
      m.coefficients.push_back(parse_hex_double(f.at("coefficient"), "coefficient"));
      m.means.push_back(parse_hex_double(f.at("mean"), "mean"));
      m.sds.push_back(parse_hex_double(f.at("sd"), "sd"));
    }
    m.sweeps = j.at("convergence").at("sweeps").get<int>();
    m.max_delta = parse_hex_double(j.at("convergence").at("max_delta"), "max_delta");
    m.training_hash = j.at("training_hash").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("model json: ") + e.what());
  }
  return m;
}

}  // namespace histgdp::en
