#include "histgdp/features.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "histgdp/csv.hpp"
#include "histgdp/errors.hpp"
#include "histgdp/numerics.hpp"
#include "histgdp/periods.hpp"

namespace histgdp {

namespace {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string_view scale_name(Scale s) { return s == Scale::log10p1 ? "log10p1" : "asinh"; }

std::optional<Scale> parse_scale(std::string_view name) {
  if (name == "log10p1") return Scale::log10p1;
  if (name == "asinh") return Scale::asinh;
  return std::nullopt;
}

std::string_view age_mode_name(AgeMode m) { return m == AgeMode::lifespan ? "lifespan" : "age_at_snapshot"; }

std::optional<AgeMode> parse_age_mode(std::string_view name) {
  if (name == "lifespan") return AgeMode::lifespan;
  if (name == "age_at_snapshot") return AgeMode::age_at_snapshot;
  return std::nullopt;
}

std::optional<std::size_t> FeatureMatrix::column_index(std::string_view name) const {
  for (std::size_t i = 0; i < columns.size(); ++i)
    if (columns[i] == name) return i;
  return std::nullopt;
}

std::optional<std::size_t> FeatureMatrix::row_index(const RowKey& key) const {
  for (std::size_t i = 0; i < rows.size(); ++i)
    if (rows[i] == key) return i;
  return std::nullopt;
}

FeatureMatrix FeatureMatrix::select_rows(std::span<const std::size_t> indices) const {
  FeatureMatrix out;
  out.columns = columns;
  out.scale = scale;
  out.values = values.select_rows(indices);
  for (auto i : indices) out.rows.push_back(rows[i]);
  return out;
}

void FeatureMatrix::validate() const {
  if (values.rows() != rows.size() || values.cols() != columns.size())
    throw ValidationError("feature matrix shape does not match its labels");
  if (!values.all_finite()) throw ValidationError("feature matrix contains non-finite values");
  std::set<std::string_view> names(columns.begin(), columns.end());
  if (names.size() != columns.size()) throw ValidationError("duplicate feature names");
  std::set<RowKey> keys(rows.begin(), rows.end());
  if (keys.size() != rows.size()) throw ValidationError("duplicate feature row keys");
}

std::string FeatureMatrix::to_csv() const {
  std::ostringstream out;
  std::vector<std::string> header = {"location_id", "year"};
  header.insert(header.end(), columns.begin(), columns.end());
  out << csv::join(header) << '\n';
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out << csv::escape(rows[r].location_id) << ',' << rows[r].year;
    for (std::size_t c = 0; c < columns.size(); ++c) out << ',' << format_double(values(r, c));
    out << '\n';
  }
  return out.str();
}

FeatureMatrix vstack(std::span<const FeatureMatrix* const> parts) {
  FeatureMatrix out;
  if (parts.empty()) return out;
  out.columns = parts.front()->columns;
  out.scale = parts.front()->scale;
  std::size_t total = 0;
  for (const auto* p : parts) {
    if (p->columns != out.columns) throw ValidationError("vstack: column lists differ");
    total += p->rows.size();
  }
  out.values = Matrix(total, out.columns.size());
  std::size_t r = 0;
  for (const auto* p : parts) {
    for (std::size_t i = 0; i < p->rows.size(); ++i, ++r) {
      out.rows.push_back(p->rows[i]);
      const auto src = p->values.row(i);
      std::copy(src.begin(), src.end(), out.values.row(r).begin());
    }
  }
  return out;
}

HpiScore hpi(double pageviews, double language_editions, double age) {
  HpiScore out;
  if (pageviews < 1.0) {
    pageviews = 1.0;
    out.clamped = true;
  }
  if (language_editions < 1.0) {
    language_editions = 1.0;
    out.clamped = true;
  }
  if (age < 1.0) {
    age = 1.0;
    out.clamped = true;
  }
  out.value = std::log10(pageviews) + std::log(language_editions) + std::log(age) / std::log(4.0);
  if (age < 70.0) out.value -= (70.0 - age) / 7.0;
  return out;
}

HpiScore hpi(const BiographyRecord& record, int reference_year) {
  return hpi(record.pageviews, record.language_editions, static_cast<double>(reference_year - record.birth_year));
}

std::vector<double> hpi_weights(const std::vector<BiographyRecord>& records, int reference_year) {
  std::vector<double> w(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) w[i] = std::max(hpi(records[i], reference_year).value, 0.0);
  return w;
}

CountTensor flow_counts(const FlowAssignment& flows, const std::vector<BiographyRecord>& records,
                        std::span<const double> weights, std::span<const std::string> locations,
                        std::span<const std::string> occupations) {
  if (weights.size() != records.size()) throw ValidationError("flow_counts: one weight per record required");
  CountTensor out;
  out.locations.assign(locations.begin(), locations.end());
  out.occupations.assign(occupations.begin(), occupations.end());
  std::map<std::string_view, std::size_t> occ_index;
  for (std::size_t k = 0; k < occupations.size(); ++k) occ_index.emplace(occupations[k], k);

  for (Flow f : kFlows) {
    const int fi = static_cast<int>(f);
    out.weighted[fi] = Matrix(locations.size(), occupations.size());
    out.people[fi] = Matrix(locations.size(), occupations.size());
    out.totals[fi].assign(locations.size(), 0);
  }
  for (std::size_t i = 0; i < locations.size(); ++i) {
    const FlowSets& sets = flows.at(locations[i]);
    for (Flow f : kFlows) {
      const int fi = static_cast<int>(f);
      for (std::size_t idx : sets[f]) {
        if (idx >= records.size())
          throw ValidationError("flow_counts: record index " + std::to_string(idx) + " does not resolve");
        auto it = occ_index.find(records[idx].occupation);
        if (it == occ_index.end())
          throw ValidationError("flow_counts: occupation '" + records[idx].occupation + "' not in column list");
        out.weighted[fi](i, it->second) += weights[idx];
        out.people[fi](i, it->second) += 1.0;
        ++out.totals[fi][i];
      }
    }
  }
  return out;
}

std::vector<int> diversity(const CountTensor& counts, Flow flow) {
  const Matrix& p = counts.people_of(flow);
  std::vector<int> out(p.rows(), 0);
  for (std::size_t i = 0; i < p.rows(); ++i)
    for (std::size_t k = 0; k < p.cols(); ++k)
      if (p(i, k) >= 1.0) ++out[i];
  return out;
}

FlaggedValues avg_ubiquity(const CountTensor& counts, Flow flow) {
  const Matrix& p = counts.people_of(flow);
  std::vector<int> ubiquity(p.cols(), 0);
  for (std::size_t i = 0; i < p.rows(); ++i)
    for (std::size_t k = 0; k < p.cols(); ++k)
      if (p(i, k) >= 1.0) ++ubiquity[k];
  FlaggedValues out;
  out.values.assign(p.rows(), 0.0);
  out.flagged.assign(p.rows(), false);
  for (std::size_t i = 0; i < p.rows(); ++i) {
    double sum = 0.0;
    int present = 0;
    for (std::size_t k = 0; k < p.cols(); ++k) {
      if (p(i, k) >= 1.0) {
        sum += ubiquity[k];
        ++present;
      }
    }
    if (present == 0) {
      out.flagged[i] = true;
    } else {
      out.values[i] = sum / present;
    }
  }
  return out;
}

RcaResult rca_matrix(const Matrix& counts) {
  RcaResult out;
  std::vector<double> row_sum(counts.rows(), 0.0), col_sum(counts.cols(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < counts.rows(); ++i)
    for (std::size_t k = 0; k < counts.cols(); ++k) {
      const double v = counts(i, k);
      if (v < 0.0) throw ValidationError("rca_matrix: negative count");
      row_sum[i] += v;
      col_sum[k] += v;
      total += v;
    }
  if (!(total > 0.0)) throw ValidationError("rca_matrix: all-zero count matrix");
  for (std::size_t i = 0; i < counts.rows(); ++i)
    (row_sum[i] > 0.0 ? out.kept_rows : out.dropped_rows).push_back(i);
  for (std::size_t k = 0; k < counts.cols(); ++k)
    (col_sum[k] > 0.0 ? out.kept_cols : out.dropped_cols).push_back(k);
  out.m = Matrix(out.kept_rows.size(), out.kept_cols.size());
  for (std::size_t a = 0; a < out.kept_rows.size(); ++a) {
    const std::size_t i = out.kept_rows[a];
    for (std::size_t b = 0; b < out.kept_cols.size(); ++b) {
      const std::size_t k = out.kept_cols[b];
      // (N_ik / N_i) / (N_k / N) >= 1  <=>  N_ik * N >= N_i * N_k
      out.m(a, b) = counts(i, k) * total >= row_sum[i] * col_sum[k] ? 1.0 : 0.0;
    }
  }
  return out;
}

RcaResult rca_matrix(const CountTensor& counts, Flow flow) { return rca_matrix(counts.weighted_of(flow)); }

namespace {

// z-scores in place; returns false when the vector is constant.
bool zscore(std::vector<double>& x) {
  const double m = numerics::mean(x);
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  const double sd = std::sqrt(ss / static_cast<double>(x.size()));
  const double scale = std::max(1.0, std::abs(m));
  if (!(sd > 1e-13 * scale)) return false;
  for (double& v : x) v = (v - m) / sd;
  return true;
}

}  // namespace

EciResult eci(const Matrix& m, int max_iterations, double tolerance) {
  const std::size_t rows = m.rows();
  const std::size_t cols = m.cols();
  EciResult out;
  out.eci.assign(rows, 0.0);
  out.pci.assign(cols, 0.0);
  std::vector<double> kc(rows, 0.0), ku(cols, 0.0);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t k = 0; k < cols; ++k) {
      kc[i] += m(i, k);
      ku[k] += m(i, k);
    }
  for (double v : kc)
    if (v == 0.0) throw ValidationError("eci: specialization matrix has an all-zero row");
  for (double v : ku)
    if (v == 0.0) throw ValidationError("eci: specialization matrix has an all-zero column");
  if (rows < 2 || cols < 2) {
    out.degenerate = true;
    return out;
  }

  // The z-scored map x -> D_c^-1 M D_u^-1 Mᵀ x is similar to the symmetric
  // A Aᵀ with A = D_c^-1/2 M D_u^-1/2, whose top eigenvector sqrt(kc) is the
  // trivial constant solution. ECI is the next eigenvector, mapped back by
  // D_c^-1/2. When that eigenspace is not one-dimensional the iteration's
  // limit from the diversity start (its projection) is used instead.
  Matrix a(rows, cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t k = 0; k < cols; ++k) a(i, k) = m(i, k) / std::sqrt(kc[i] * ku[k]);
  numerics::SvdOptions svd_options;
  svd_options.max_sweeps = std::max(1, max_iterations);
  const auto dec = numerics::svd(a, "specialization matrix", svd_options);

  std::vector<double> trivial(rows);
  double tn = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    trivial[i] = std::sqrt(kc[i]);
    tn += kc[i];
  }
  for (double& v : trivial) v /= std::sqrt(tn);

  auto group_end = [&](std::size_t g) {
    std::size_t end = g + 1;
    while (end < dec.s.size() && std::abs(dec.s[end] - dec.s[g]) <= tolerance) ++end;
    return end;
  };
  std::size_t first = 0, last = group_end(0), dim = last - 1;
  if (last == 1) {
    first = 1;
    if (first >= dec.s.size() || dec.s[first] <= 1e-10) {
      out.degenerate = true;
      return out;
    }
    last = group_end(first);
    dim = last - first;
  }
  out.iterations = 1;

  std::optional<std::vector<double>> x;
  auto unscale = [&](std::vector<double> y) -> std::optional<std::vector<double>> {
    for (std::size_t i = 0; i < rows; ++i) y[i] /= std::sqrt(kc[i]);
    if (!zscore(y)) return std::nullopt;
    return y;
  };
  if (dim == 1) {
    std::vector<double> best;
    double best_norm = -1.0;
    for (std::size_t c = first; c < last; ++c) {
      std::vector<double> w(rows);
      for (std::size_t i = 0; i < rows; ++i) w[i] = dec.u(i, c);
      const double t = dot(w, trivial);
      for (std::size_t i = 0; i < rows; ++i) w[i] -= t * trivial[i];
      const double norm = std::sqrt(dot(w, w));
      if (norm > best_norm) {
        best_norm = norm;
        best = std::move(w);
      }
    }
    x = unscale(std::move(best));
  } else {
    std::vector<double> avg_ubiquity(rows, 0.0);
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t k = 0; k < cols; ++k) avg_ubiquity[i] += m(i, k) * ku[k];
      avg_ubiquity[i] /= kc[i];
    }
    for (const auto* start : {&kc, &avg_ubiquity}) {
      std::vector<double> y(rows);
      for (std::size_t i = 0; i < rows; ++i) y[i] = std::sqrt(kc[i]) * (*start)[i];
      const double t = dot(y, trivial);
      for (std::size_t i = 0; i < rows; ++i) y[i] -= t * trivial[i];
      const double norm = std::sqrt(dot(y, y));
      if (!(norm > 0.0)) continue;
      std::vector<double> proj(rows, 0.0);
      for (std::size_t c = first; c < last; ++c) {
        double w = 0.0;
        for (std::size_t i = 0; i < rows; ++i) w += dec.u(i, c) * y[i];
        for (std::size_t i = 0; i < rows; ++i) proj[i] += w * dec.u(i, c);
      }
      if (std::sqrt(dot(proj, proj)) <= 1e-8 * norm) continue;
      x = unscale(std::move(proj));
      if (x) break;
    }
  }
  if (!x) {
    out.degenerate = true;
    return out;
  }

  std::vector<double> p(cols, 0.0);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t k = 0; k < cols; ++k) p[k] += m(i, k) * (*x)[i];
  for (std::size_t k = 0; k < cols; ++k) p[k] /= ku[k];
  if (!zscore(p)) std::fill(p.begin(), p.end(), 0.0);

  // Orientation: non-negative association with diversity, then complex
  // occupations being the less ubiquitous ones, then positive skew.
  double orientation = numerics::spearman(*x, kc);
  if (std::abs(orientation) < 1e-12) orientation = numerics::pearson(*x, kc);
  if (std::abs(orientation) < 1e-12) orientation = -numerics::spearman(p, ku);
  if (std::abs(orientation) < 1e-12) {
    double skew = 0.0;
    for (double v : *x) skew += v * v * v;
    orientation = skew / static_cast<double>(rows);
  }
  if (std::abs(orientation) < 1e-12) {
    // Sign cannot be fixed without reference to the input order.
    out.degenerate = true;
    return out;
  }
  if (orientation < 0.0) {
    for (double& v : *x) v = -v;
    for (double& v : p) v = -v;
  }
  out.eci = std::move(*x);
  out.pci = std::move(p);
  return out;
}

SvdFactors svd_factors(const CountTensor& counts, Flow flow, std::size_t n_factors) {
  const Matrix& n = counts.weighted_of(flow);
  SvdFactors out;
  out.factors = Matrix(n.rows(), n_factors);
  if (n.rows() == 0) return out;
  if (n.cols() == 0) {
    out.padded = n_factors > 0;
    return out;
  }
  Matrix logged(n.rows(), n.cols());
  for (std::size_t i = 0; i < n.rows(); ++i)
    for (std::size_t k = 0; k < n.cols(); ++k) logged(i, k) = std::log10(1.0 + n(i, k));
  const auto dec = numerics::svd(logged, std::string("log counts of ") + std::string(flow_name(flow)));
  out.available = std::min(n_factors, dec.rank());
  out.padded = out.available < n_factors;
  for (std::size_t c = 0; c < out.available; ++c)
    for (std::size_t i = 0; i < n.rows(); ++i) out.factors(i, c) = dec.u(i, c);
  return out;
}

FlaggedValues avg_age(const FlowAssignment& flows, const std::vector<BiographyRecord>& records,
                      std::span<const std::string> locations, AgeMode mode) {
  auto age_of = [&](std::size_t idx) -> std::optional<double> {
    const auto& r = records.at(idx);
    if (mode == AgeMode::lifespan) {
      if (!r.death_year) return std::nullopt;
      return static_cast<double>(*r.death_year - r.birth_year);
    }
    const int end = r.death_year ? std::min(*r.death_year, flows.snapshot_year) : flows.snapshot_year;
    return static_cast<double>(end - r.birth_year);
  };

  FlaggedValues out;
  out.values.assign(locations.size(), 0.0);
  out.flagged.assign(locations.size(), false);
  std::set<std::size_t> everyone;
  std::vector<std::vector<std::size_t>> members(locations.size());
  for (std::size_t i = 0; i < locations.size(); ++i) {
    const FlowSets& sets = flows.at(locations[i]);
    std::set<std::size_t> local;
    for (Flow f : kFlows) local.insert(sets[f].begin(), sets[f].end());
    members[i].assign(local.begin(), local.end());
    everyone.insert(local.begin(), local.end());
  }
  double global_sum = 0.0;
  std::size_t global_n = 0;
  for (std::size_t idx : everyone) {
    if (auto a = age_of(idx)) {
      global_sum += *a;
      ++global_n;
    }
  }
  const double global_mean = global_n ? global_sum / static_cast<double>(global_n) : 0.0;
  for (std::size_t i = 0; i < locations.size(); ++i) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t idx : members[i]) {
      if (auto a = age_of(idx)) {
        sum += *a;
        ++n;
      }
    }
    if (n == 0) {
      out.values[i] = global_mean;
      out.flagged[i] = true;
    } else {
      out.values[i] = sum / static_cast<double>(n);
    }
  }
  return out;
}

double linearize(double x, Scale scale) {
  if (!(x >= 0.0)) throw ValidationError("linearize: negative input");
  return scale == Scale::log10p1 ? std::log10(1.0 + x) : std::asinh(x);
}

std::vector<std::string> occupation_list(const std::vector<BiographyRecord>& records) {
  std::set<std::string> s;
  for (const auto& r : records)
    if (!r.occupation.empty()) s.insert(r.occupation);
  return {s.begin(), s.end()};
}

YearFeatures compute_year_features(int year, const std::vector<BiographyRecord>& records,
                                   std::span<const double> weights, const LocationTable& locations,
                                   std::span<const std::string> occupations, const FeatureConfig& config) {
  YearFeatures out;
  out.year = year;
  const FlowAssignment flows = assign_flows(records, locations, year, config.window_years);

  std::set<std::size_t> present;
  for (const auto& [_, sets] : flows.by_location) {
    present.insert(sets[Flow::births].begin(), sets[Flow::births].end());
    present.insert(sets[Flow::deaths].begin(), sets[Flow::deaths].end());
  }
  out.individuals = present.size();
  if (out.individuals == 0)
    throw ValidationError("no individuals in the " + std::to_string(config.window_years) + "-year window before " +
                          std::to_string(year));

  const auto supra = locations.supranational_regions();
  std::vector<std::string> columns;
  for (Flow f : kFlows) {
    const std::string fn(flow_name(f));
    columns.push_back(fn + ".total");
    for (const auto& occ : occupations) columns.push_back(fn + "." + occ);
  }
  for (Flow f : kFlows) columns.push_back("diversity." + std::string(flow_name(f)));
  for (Flow f : kFlows) columns.push_back("ubiquity." + std::string(flow_name(f)));
  for (Flow f : kFlows) columns.push_back("eci." + std::string(flow_name(f)));
  for (Flow f : kFlows)
    for (std::size_t i = 1; i <= config.n_factors; ++i)
      columns.push_back("svd." + std::string(flow_name(f)) + "." + std::to_string(i));
  columns.push_back("avg_age");
  for (const auto& s : supra) columns.push_back("dummy." + s);

  const auto& ids = locations.ids();
  std::map<std::string_view, std::size_t> row_of;
  for (std::size_t i = 0; i < ids.size(); ++i) row_of.emplace(ids[i], i);

  FeatureMatrix& fm = out.matrix;
  fm.columns = columns;
  fm.scale = config.scale;
  fm.values = Matrix(ids.size(), columns.size());
  for (const auto& id : ids) fm.rows.push_back({id, year});

  const std::size_t occ_n = occupations.size();
  const std::size_t div_col = 4 * (occ_n + 1);
  const std::size_t ubi_col = div_col + 4;
  const std::size_t eci_col = ubi_col + 4;
  const std::size_t svd_col = eci_col + 4;
  const std::size_t age_col = svd_col + 4 * config.n_factors;
  const std::size_t dummy_col = age_col + 1;

  for (LocationLevel level : {LocationLevel::country, LocationLevel::region}) {
    const auto level_ids = locations.ids_at(level);
    if (level_ids.empty()) continue;
    const std::string level_name = level == LocationLevel::country ? "country" : "region";
    const CountTensor counts = flow_counts(flows, records, weights, level_ids, occupations);

    for (Flow f : kFlows) {
      const int fi = static_cast<int>(f);
      const std::size_t base = static_cast<std::size_t>(fi) * (occ_n + 1);
      const Matrix& w = counts.weighted_of(f);
      const auto div = diversity(counts, f);
      const auto ubi = avg_ubiquity(counts, f);

      std::vector<double> eci_values(level_ids.size(), 0.0);
      double total = 0.0;
      for (double v : w.values()) total += v;
      if (total > 0.0) {
        const auto rca = rca_matrix(w);
        const auto e = eci(rca.m);
        for (std::size_t a = 0; a < rca.kept_rows.size(); ++a) eci_values[rca.kept_rows[a]] = e.eci[a];
        if (e.degenerate) out.flags.push_back("eci." + std::string(flow_name(f)) + " degenerate at " + level_name + " level");
      } else {
        out.flags.push_back("eci." + std::string(flow_name(f)) + " empty at " + level_name + " level");
      }
      const auto factors = svd_factors(counts, f, config.n_factors);
      if (factors.padded)
        out.flags.push_back("svd." + std::string(flow_name(f)) + " padded with zeros at " + level_name + " level");

      for (std::size_t i = 0; i < level_ids.size(); ++i) {
        auto row = fm.values.row(row_of.at(level_ids[i]));
        double row_total = 0.0;
        for (std::size_t k = 0; k < occ_n; ++k) {
          row_total += w(i, k);
          row[base + 1 + k] = linearize(w(i, k), config.scale);
        }
        row[base] = linearize(row_total, config.scale);
        row[div_col + fi] = div[i];
        row[ubi_col + fi] = ubi.values[i];
        row[eci_col + fi] = eci_values[i];
        for (std::size_t c = 0; c < config.n_factors; ++c) row[svd_col + fi * config.n_factors + c] = factors.factors(i, c);
      }
    }
    const auto ages = avg_age(flows, records, level_ids, config.age_mode);
    for (std::size_t i = 0; i < level_ids.size(); ++i) {
      fm.values(row_of.at(level_ids[i]), age_col) = ages.values[i];
      if (ages.flagged[i]) out.flags.push_back("avg_age imputed for " + level_ids[i]);
    }
  }

  for (std::size_t r = 0; r < ids.size(); ++r) {
    const auto& s = locations.supranational_of(ids[r]);
    const auto it = std::lower_bound(supra.begin(), supra.end(), s);
    fm.values(r, dummy_col + static_cast<std::size_t>(it - supra.begin())) = 1.0;
    const FlowSets& sets = flows.at(ids[r]);
    out.people[ids[r]] = {sets[Flow::births].size(), sets[Flow::deaths].size()};
  }
  fm.validate();
  return out;
}

GdpTable gdp_table(const std::vector<GdpObservation>& observations) {
  GdpTable t;
  for (const auto& o : observations) t[{o.location_id, o.year}] = o.gdp_pc;
  return t;
}

std::string_view provenance_name(InitProvenance p) {
  switch (p) {
    case InitProvenance::none: return "none";
    case InitProvenance::source: return "source";
    case InitProvenance::model: return "model";
    case InitProvenance::country_source: return "country_source";
    case InitProvenance::country_model: return "country_model";
    case InitProvenance::supra_mean: return "supra_mean";
  }
  return "";
}

InitialGdp initial_gdp(std::string_view location, int year, const GdpTable& source, const GdpTable& model,
                       const LocationTable& locations) {
  const auto prev = previous_period_end(period_of(year));
  if (!prev) throw ValidationError("initial_gdp: year " + std::to_string(year) + " has no previous period");
  const Location& loc = locations.at(location);
  auto lookup = [&](const GdpTable& t, const std::string& id) -> std::optional<double> {
    auto it = t.find({id, *prev});
    if (it == t.end()) return std::nullopt;
    return it->second;
  };
  if (auto v = lookup(source, loc.id)) return {std::log10(*v), InitProvenance::source};
  if (auto v = lookup(model, loc.id)) return {std::log10(*v), InitProvenance::model};
  if (loc.level == LocationLevel::region) {
    if (auto v = lookup(source, loc.parent_country)) return {std::log10(*v), InitProvenance::country_source};
    if (auto v = lookup(model, loc.parent_country)) return {std::log10(*v), InitProvenance::country_model};
  }
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& [key, value] : source) {
    if (key.second != *prev) continue;
    const Location* other = locations.find(key.first);
    if (other == nullptr || other->level != LocationLevel::country) continue;
    if (other->supranational_region != loc.supranational_region) continue;
    sum += value;
    ++n;
  }
  if (n == 0)
    throw ValidationError("initial_gdp: no source data for supranational region '" + loc.supranational_region +
                          "' in " + std::to_string(*prev));
  return {std::log10(sum / static_cast<double>(n)), InitProvenance::supra_mean};
}

AssembledFeatures build_feature_matrix(const YearFeatures& year_features, const GdpTable& source,
                                       const GdpTable& model, const LocationTable& locations) {
  AssembledFeatures out;
  const FeatureMatrix& bio = year_features.matrix;
  const std::size_t rows = bio.rows.size();
  if (!previous_period_end(period_of(year_features.year))) {
    out.matrix = bio;
    out.provenance.assign(rows, InitProvenance::none);
    return out;
  }
  const std::size_t cols = bio.columns.size() + 1;
  out.matrix.rows = bio.rows;
  out.matrix.columns = bio.columns;
  out.matrix.columns.push_back("init_gdp");
  out.matrix.scale = bio.scale;
  out.matrix.values = Matrix(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto src = bio.values.row(r);
    auto dst = out.matrix.values.row(r);
    std::copy(src.begin(), src.end(), dst.begin());
    const auto init = initial_gdp(bio.rows[r].location_id, year_features.year, source, model, locations);
    dst[cols - 1] = init.log10_value;
    out.provenance.push_back(init.provenance);
  }
  return out;
}

}  // namespace histgdp
