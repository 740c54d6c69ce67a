#include "histgdp/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "histgdp/csv.hpp"
#include "histgdp/errors.hpp"
#include "histgdp/log.hpp"
#include "histgdp/numerics.hpp"
#include "histgdp/parallel.hpp"
#include "histgdp/rng.hpp"
#include "json.hpp"

namespace histgdp::pipeline {

using Json = nlohmann::ordered_json;

namespace {

std::string format_number(double v, bool exact) {
  char buf[40];
  std::snprintf(buf, sizeof buf, exact ? "%.17g" : "%.6g", v);
  return buf;
}

std::string key_string(const RowKey& k) { return k.location_id + "@" + std::to_string(k.year); }

// The region dummies sum to one; the first is left out of model designs.
FeatureMatrix model_design(const FeatureMatrix& fm, const LocationTable& locations) {
  const auto supra = locations.supranational_regions();
  if (supra.empty()) return fm;
  const auto drop = fm.column_index("dummy." + supra.front());
  if (!drop) return fm;
  std::vector<std::size_t> keep;
  FeatureMatrix out;
  for (std::size_t c = 0; c < fm.columns.size(); ++c) {
    if (c == *drop) continue;
    keep.push_back(c);
    out.columns.push_back(fm.columns[c]);
  }
  out.rows = fm.rows;
  out.values = fm.values.select_cols(keep);
  out.scale = fm.scale;
  return out;
}

}  // namespace

// --- gating ------------------------------------------------------------------

std::string_view gating_rule_name(GatingRule r) {
  switch (r) {
    case GatingRule::all: return "all";
    case GatingRule::any: return "any";
    case GatingRule::sum: return "sum";
  }
  return "all";
}

std::optional<GatingRule> parse_gating_rule(std::string_view name) {
  if (name == "all") return GatingRule::all;
  if (name == "any") return GatingRule::any;
  if (name == "sum") return GatingRule::sum;
  return std::nullopt;
}

int GatingPolicy::threshold(int year) const {
  if (year <= 1600) return early;
  if (year <= 1950) return middle;
  return late;
}

bool GatingPolicy::passes(int year, const PeopleCounts& counts) const {
  const auto t = static_cast<std::size_t>(threshold(year));
  switch (rule) {
    case GatingRule::all: return counts.births >= t && counts.deaths >= t;
    case GatingRule::any: return counts.births >= t || counts.deaths >= t;
    case GatingRule::sum: return counts.births + counts.deaths >= t;
  }
  return false;
}

void GatingPolicy::validate() const {
  if (early <= 0 || middle <= 0 || late <= 0) throw ValidationError("gating thresholds must be positive");
  if (early > middle || middle > late) throw ValidationError("gating thresholds must be non-decreasing in year");
}

std::string_view bootstrap_unit_name(BootstrapUnit u) { return u == BootstrapUnit::row ? "row" : "country"; }

std::optional<BootstrapUnit> parse_bootstrap_unit(std::string_view name) {
  if (name == "row") return BootstrapUnit::row;
  if (name == "country") return BootstrapUnit::country;
  return std::nullopt;
}

void PipelineConfig::validate() const {
  if (features.window_years <= 0) throw ValidationError("window_years must be positive");
  if (features.n_factors == 0) throw ValidationError("n_factors must be positive");
  if (alpha_grid.empty()) throw ValidationError("alpha_grid is empty");
  for (double a : alpha_grid)
    if (!(a >= 0.0 && a <= 1.0)) throw ValidationError("alpha_grid values must lie in [0, 1]");
  if (n_lambda == 0) throw ValidationError("n_lambda must be positive");
  if (!(lambda_ratio > 0.0 && lambda_ratio < 1.0)) throw ValidationError("lambda_ratio must lie in (0, 1)");
  if (k_folds < 2) throw ValidationError("k_folds must be at least 2");
  if (bootstrap_reps < 50) throw ValidationError("bootstrap B must be at least 50");
  if (!(ci_level > 0.0 && ci_level < 1.0)) throw ValidationError("ci_level must lie in (0, 1)");
  gating.validate();
}

// --- feature store -----------------------------------------------------------

FeatureStore build_feature_store(const std::vector<BiographyRecord>& records, const LocationTable& locations,
                                 const FeatureConfig& config, int threads) {
  FeatureStore store;
  store.occupations = occupation_list(records);
  const auto weights = hpi_weights(records, config.reference_year);
  const auto years = snapshot_years();

  std::vector<bool> present(years.size(), false);
  for (std::size_t i = 0; i < years.size(); ++i) {
    const int lo = years[i] - config.window_years;
    for (const auto& r : records) {
      if (r.birth_year < lo || r.birth_year > years[i]) continue;
      const bool placed = (r.birth_location && locations.contains(*r.birth_location)) ||
                          (r.death_location && locations.contains(*r.death_location));
      if (placed) {
        present[i] = true;
        break;
      }
    }
  }

  std::vector<std::optional<YearFeatures>> computed(years.size());
  parallel_for(years.size(), threads, [&](std::size_t i) {
    if (!present[i]) return;
    computed[i] = compute_year_features(years[i], records, weights, locations, store.occupations, config);
  });
  for (std::size_t i = 0; i < years.size(); ++i) {
    if (computed[i])
      store.years.emplace(years[i], std::move(*computed[i]));
    else
      store.empty_years.push_back(years[i]);
  }
  return store;
}

// --- baseline ----------------------------------------------------------------

namespace {

std::string cell_of(const RowKey& key, const LocationTable& locations) {
  return locations.supranational_of(key.location_id) + "@" + std::to_string(key.year);
}

}  // namespace

BaselineModel fit_baseline(const FeatureMatrix& features, std::span<const double> log10_gdp,
                           const LocationTable& locations) {
  const std::size_t n = features.rows.size();
  if (n == 0) throw ValidationError("fit_baseline: empty period");
  if (log10_gdp.size() != n) throw ValidationError("fit_baseline: one label per row required");

  BaselineModel model;
  std::map<std::string, std::size_t> cell_counts;
  std::vector<std::string> row_cells;
  row_cells.reserve(n);
  for (const auto& key : features.rows) {
    row_cells.push_back(cell_of(key, locations));
    ++cell_counts[row_cells.back()];
  }
  for (const auto& [cell, count] : cell_counts) {
    model.cells.push_back(cell);
    if (count == 1) ++model.singleton_cells;
  }

  const auto lag_col = features.column_index("init_gdp");
  model.has_lag = lag_col.has_value();
  const std::size_t dummies = model.cells.size() - 1;
  const std::size_t p = dummies + (model.has_lag ? 1 : 0);

  std::vector<double> cell_effects(model.cells.size(), 0.0);
  if (p == 0) {
    model.intercept = numerics::mean(log10_gdp);
  } else {
    Matrix x(n, p);
    for (std::size_t r = 0; r < n; ++r) {
      const auto it = std::lower_bound(model.cells.begin(), model.cells.end(), row_cells[r]);
      const auto c = static_cast<std::size_t>(it - model.cells.begin());
      if (c > 0) x(r, c - 1) = 1.0;
      if (model.has_lag) x(r, dummies) = features.values(r, *lag_col);
    }
    const auto fit = numerics::ols_fit(x, log10_gdp);
    model.intercept = fit.intercept;
    model.rank_deficient = fit.rank_deficient;
    for (std::size_t c = 0; c < dummies; ++c) cell_effects[c + 1] = fit.coefficients[c];
    if (model.has_lag) model.lag_coefficient = fit.coefficients[dummies];
  }
  model.cell_effects = std::move(cell_effects);
  model.mean_effect = numerics::mean(model.cell_effects);
  return model;
}

std::vector<double> BaselineModel::predict(const FeatureMatrix& features, const LocationTable& locations) const {
  std::optional<std::size_t> lag_col;
  if (has_lag) {
    lag_col = features.column_index("init_gdp");
    if (!lag_col) throw ValidationError("baseline predict: column 'init_gdp' missing");
  }
  std::vector<double> out(features.rows.size());
  for (std::size_t r = 0; r < features.rows.size(); ++r) {
    const std::string cell = cell_of(features.rows[r], locations);
    const auto it = std::lower_bound(cells.begin(), cells.end(), cell);
    double effect = mean_effect;
    if (it != cells.end() && *it == cell) effect = cell_effects[static_cast<std::size_t>(it - cells.begin())];
    double v = intercept + effect;
    if (lag_col) v += lag_coefficient * features.values(r, *lag_col);
    out[r] = v;
  }
  return out;
}

std::string_view model_kind_name(ModelKind k) { return k == ModelKind::elastic_net ? "elastic_net" : "baseline"; }

std::vector<double> TrainedPeriodModel::predict(const FeatureMatrix& features, const LocationTable& locations) const {
  if (kind == ModelKind::baseline) return baseline.predict(features, locations);
  return en::en_predict(en, features.values, features.columns);
}

// --- rescaling ---------------------------------------------------------------

RescaleOutcome rescale_regions(std::span<const double> regional, double country_value, std::span<const double> proxies) {
  RescaleOutcome out;
  out.values.assign(regional.begin(), regional.end());
  if (regional.empty()) return out;
  if (proxies.size() != regional.size()) throw ValidationError("rescale_regions: one proxy per region required");
  if (!(country_value > 0.0)) throw ValidationError("rescale_regions: country value must be positive");
  double wsum = 0.0;
  double wv = 0.0;
  for (std::size_t i = 0; i < regional.size(); ++i) {
    if (proxies[i] < 0.0) throw ValidationError("rescale_regions: negative population proxy");
    wsum += proxies[i];
    wv += proxies[i] * regional[i];
  }
  if (wsum == 0.0) throw ValidationError("rescale_regions: population proxies sum to zero");
  const double mean = wv / wsum;
  if (!(mean > 0.0)) throw ValidationError("rescale_regions: weighted regional mean must be positive");
  out.factor = country_value / mean;
  for (double& v : out.values) v *= out.factor;
  return out;
}

// --- bootstrap ---------------------------------------------------------------

BootstrapResult bootstrap_ci(const Matrix& x, std::span<const std::string> names, std::span<const double> log10_y,
                             const Matrix& targets, double alpha, double lambda, const BootstrapOptions& options) {
  const std::size_t n = x.rows();
  if (options.reps < 50) throw ValidationError("bootstrap: B must be at least 50");
  if (!(options.level > 0.0 && options.level < 1.0)) throw ValidationError("bootstrap: level must lie in (0, 1)");
  if (log10_y.size() != n) throw ValidationError("bootstrap: one response per row required");
  if (n < 2) throw ValidationError("bootstrap: at least two training rows required");
  const bool clustered = !options.clusters.empty();
  if (clustered && options.clusters.size() != n) throw ValidationError("bootstrap: one cluster label per row required");

  std::vector<std::vector<std::size_t>> groups;
  if (clustered) {
    std::map<std::string, std::size_t> index;
    for (std::size_t r = 0; r < n; ++r) {
      auto [it, inserted] = index.emplace(options.clusters[r], groups.size());
      if (inserted) groups.emplace_back();
      groups[it->second].push_back(r);
    }
    if (groups.size() < 2) throw ValidationError("bootstrap: at least two clusters required");
  }

  const std::vector<std::string> name_list(names.begin(), names.end());
  const auto full = en::fit_elastic_net(x, names, log10_y, alpha, lambda, options.solver);

  const std::size_t t = targets.rows();
  std::vector<std::vector<double>> preds(options.reps);
  std::vector<std::size_t> retries(options.reps, 0);
  parallel_for(options.reps, options.threads, [&](std::size_t b) {
    Rng rng(child_seed(options.seed, "bootstrap", b));
    std::vector<std::size_t> rows;
    for (;;) {
      rows.clear();
      bool varied = false;
      if (clustered) {
        std::size_t first = groups.size();
        for (std::size_t i = 0; i < groups.size(); ++i) {
          const std::size_t g = rng.uniform_index(groups.size());
          if (first == groups.size()) first = g;
          if (g != first) varied = true;
          rows.insert(rows.end(), groups[g].begin(), groups[g].end());
        }
        if (!varied && groups[first].size() > 1) varied = true;
      } else {
        for (std::size_t i = 0; i < n; ++i) {
          rows.push_back(rng.uniform_index(n));
          if (rows.back() != rows.front()) varied = true;
        }
      }
      if (varied) break;
      ++retries[b];
    }
    std::vector<double> y(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) y[i] = log10_y[rows[i]];
    const auto model = en::fit_elastic_net(x.select_rows(rows), names, y, alpha, lambda, options.solver,
                                           full.coefficients);
    auto p = en::en_predict(model, targets, name_list);
    for (double& v : p) v = std::pow(10.0, v);
    preds[b] = std::move(p);
  });

  BootstrapResult out;
  out.low.resize(t);
  out.high.resize(t);
  const double q = (1.0 - options.level) / 2.0;
  std::vector<double> column(options.reps);
  for (std::size_t j = 0; j < t; ++j) {
    for (std::size_t b = 0; b < options.reps; ++b) column[b] = preds[b][j];
    out.low[j] = numerics::quantile(column, q);
    out.high[j] = numerics::quantile(column, 1.0 - q);
  }
  for (std::size_t r : retries) out.retries += r;
  return out;
}

// --- chain -------------------------------------------------------------------

EstimationChain::EstimationChain(const FeatureStore& store, const LocationTable& locations, GdpTable labels,
                                 const PipelineConfig& config, ModelKind kind, ChainOptions options)
    : store_(store), locations_(locations), labels_(std::move(labels)), config_(config), kind_(kind),
      options_(options) {
  config_.validate();
}

AssembledFeatures EstimationChain::period_features(Period period) const {
  std::vector<AssembledFeatures> parts;
  for (int year : period_years(period)) {
    const auto it = store_.years.find(year);
    if (it == store_.years.end()) continue;
    parts.push_back(build_feature_matrix(it->second, labels_, estimates_, locations_));
  }
  AssembledFeatures out;
  if (parts.empty()) return out;
  std::vector<const FeatureMatrix*> ptrs;
  for (const auto& p : parts) {
    ptrs.push_back(&p.matrix);
    out.provenance.insert(out.provenance.end(), p.provenance.begin(), p.provenance.end());
  }
  out.matrix = vstack(ptrs);
  return out;
}

const PeriodOutcome& EstimationChain::run_period(Period period) {
  if (next_ >= kPeriodCount || static_cast<int>(period) != next_) {
    const std::string expected =
        next_ < kPeriodCount ? std::string(period_name(all_periods()[static_cast<std::size_t>(next_)])) : "none";
    throw ValidationError("periods must run in chronological order: got " + std::string(period_name(period)) +
                          ", expected " + expected);
  }
  ++next_;
  const auto period_index = static_cast<std::uint64_t>(period);

  PeriodOutcome outcome;
  outcome.period = period;
  for (int year : period_years(period))
    if (store_.years.count(year) != 0) outcome.years.push_back(year);
  if (outcome.years.empty()) {
    outcome.skip_reason = "no snapshot year with individuals";
    outcomes_.push_back(std::move(outcome));
    return outcomes_.back();
  }

  const AssembledFeatures assembled = period_features(period);
  const FeatureMatrix fm = model_design(assembled.matrix, locations_);
  for (InitProvenance p : assembled.provenance) ++outcome.init_provenance_counts[p];

  std::vector<std::size_t> train_rows;
  std::vector<std::size_t> candidate_rows;
  std::vector<double> y;
  for (std::size_t r = 0; r < fm.rows.size(); ++r) {
    const auto it = labels_.find({fm.rows[r].location_id, fm.rows[r].year});
    if (it != labels_.end()) {
      train_rows.push_back(r);
      y.push_back(std::log10(it->second));
    } else {
      candidate_rows.push_back(r);
    }
  }
  if (train_rows.empty()) {
    outcome.skip_reason = "no labeled rows";
    for (std::size_t r : candidate_rows) outcome.gated.push_back(fm.rows[r]);
    log::warn("period " + std::string(period_name(period)) + ": no labeled rows, no estimates");
    outcomes_.push_back(std::move(outcome));
    return outcomes_.back();
  }

  TrainedPeriodModel model;
  model.period = period;
  model.kind = kind_;
  model.feature_names = fm.columns;
  model.training = fm.select_rows(train_rows);
  model.training_rows = model.training.rows;
  model.training_y = y;
  if (kind_ == ModelKind::elastic_net) {
    if (train_rows.size() < 2 * config_.k_folds)
      throw ValidationError("period " + std::string(period_name(period)) + " has " +
                            std::to_string(train_rows.size()) + " labeled rows; " +
                            std::to_string(config_.k_folds) + "-fold CV needs at least " +
                            std::to_string(2 * config_.k_folds) + " (reduce k_folds)");
    en::CvOptions cv;
    cv.k = config_.k_folds;
    cv.seed = child_seed(config_.seed, "cv", period_index);
    cv.n_lambda = config_.n_lambda;
    cv.lambda_ratio = config_.lambda_ratio;
    cv.rule = config_.cv_rule;
    cv.threads = config_.threads;
    model.cv = en::en_cv(model.training.values, y, config_.alpha_grid, cv);
    model.en = en::fit_elastic_net(model.training.values, fm.columns, y, model.cv->alpha, model.cv->lambda);
  } else {
    model.baseline = fit_baseline(model.training, y, locations_);
  }

  std::vector<std::size_t> predict_rows;
  for (std::size_t r : candidate_rows) {
    const RowKey& key = fm.rows[r];
    const auto& people = store_.years.at(key.year).people;
    const auto it = people.find(key.location_id);
    const PeopleCounts counts = it == people.end() ? PeopleCounts{} : it->second;
    if (config_.gating.passes(key.year, counts))
      predict_rows.push_back(r);
    else
      outcome.gated.push_back(key);
  }

  const FeatureMatrix targets = fm.select_rows(predict_rows);
  const std::vector<double> log_pred = model.predict(targets, locations_);
  std::vector<double> value(log_pred.size());
  std::vector<double> low(log_pred.size());
  std::vector<double> high(log_pred.size());
  for (std::size_t i = 0; i < log_pred.size(); ++i) {
    outcome.raw_log10[targets.rows[i]] = log_pred[i];
    value[i] = low[i] = high[i] = std::pow(10.0, log_pred[i]);
  }

  if (options_.bootstrap && kind_ == ModelKind::elastic_net && !predict_rows.empty()) {
    BootstrapOptions bo;
    bo.reps = config_.bootstrap_reps;
    bo.level = config_.ci_level;
    bo.seed = child_seed(config_.seed, "bootstrap-period", period_index);
    bo.threads = config_.threads;
    if (config_.bootstrap_unit == BootstrapUnit::country)
      for (const auto& key : model.training_rows) bo.clusters.push_back(locations_.country_of(key.location_id));
    const auto ci = bootstrap_ci(model.training.values, fm.columns, y, targets.values, model.cv->alpha,
                                 model.cv->lambda, bo);
    low = ci.low;
    high = ci.high;
    outcome.bootstrap_retries = ci.retries;
  }

  std::vector<std::string> rescaled(predict_rows.size(), "false");
  if (options_.rescale) {
    std::map<std::pair<std::string, int>, std::vector<std::size_t>> by_country;
    std::map<std::pair<std::string, int>, std::size_t> country_row;
    for (std::size_t i = 0; i < targets.rows.size(); ++i) {
      const RowKey& key = targets.rows[i];
      const Location& loc = locations_.at(key.location_id);
      if (loc.level == LocationLevel::region)
        by_country[{loc.parent_country, key.year}].push_back(i);
      else
        country_row[{loc.id, key.year}] = i;
    }
    for (const auto& [ck, members] : by_country) {
      std::optional<double> country_value;
      if (auto it = labels_.find(ck); it != labels_.end())
        country_value = it->second;
      else if (auto jt = country_row.find(ck); jt != country_row.end())
        country_value = value[jt->second];
      if (!country_value) {
        for (std::size_t i : members) rescaled[i] = "no_country_value";
        outcome.unrescaled += members.size();
        continue;
      }
      std::vector<double> regional;
      std::vector<double> proxies;
      const auto& people = store_.years.at(ck.second).people;
      for (std::size_t i : members) {
        regional.push_back(value[i]);
        const auto& pc = people.at(targets.rows[i].location_id);
        proxies.push_back(static_cast<double>(pc.births + pc.deaths));
      }
      const auto res = rescale_regions(regional, *country_value, proxies);
      for (std::size_t m = 0; m < members.size(); ++m) {
        const std::size_t i = members[m];
        value[i] = res.values[m];
        low[i] *= res.factor;
        high[i] *= res.factor;
        rescaled[i] = "true";
      }
      outcome.rescaled += members.size();
    }
  }

  for (std::size_t i = 0; i < predict_rows.size(); ++i) {
    const RowKey& key = targets.rows[i];
    EstimateRecord rec;
    rec.location_id = key.location_id;
    rec.year = key.year;
    rec.gdp_pc = value[i];
    rec.ci_low = std::min(low[i], high[i]);
    rec.ci_high = std::max(low[i], high[i]);
    rec.rescaled = rescaled[i];
    rec.init_provenance = std::string(provenance_name(assembled.provenance[predict_rows[i]]));
    estimates_[{key.location_id, key.year}] = value[i];
    outcome.estimates.push_back(std::move(rec));
  }
  std::sort(outcome.estimates.begin(), outcome.estimates.end(), [](const auto& a, const auto& b) {
    return std::tie(a.location_id, a.year) < std::tie(b.location_id, b.year);
  });
  outcome.model = std::move(model);
  outcomes_.push_back(std::move(outcome));
  return outcomes_.back();
}

void EstimationChain::run_all() {
  for (Period p : all_periods()) run_period(p);
}

// --- full run ----------------------------------------------------------------

std::string pipeline_config_json(const PipelineConfig& c) {
  Json j;
  j["window_years"] = c.features.window_years;
  j["scale"] = std::string(scale_name(c.features.scale));
  j["reference_year_for_age"] = c.features.reference_year;
  j["age_mode"] = std::string(age_mode_name(c.features.age_mode));
  j["n_factors"] = c.features.n_factors;
  j["alpha_grid"] = c.alpha_grid;
  j["n_lambda"] = c.n_lambda;
  j["lambda_ratio"] = c.lambda_ratio;
  j["k_folds"] = c.k_folds;
  j["cv_selection_rule"] = c.cv_rule == en::SelectionRule::min_mean_error ? "min_mean" : "fold_average";
  j["B"] = c.bootstrap_reps;
  j["ci_level"] = c.ci_level;
  j["bootstrap_unit"] = std::string(bootstrap_unit_name(c.bootstrap_unit));
  j["gating_rule"] = std::string(gating_rule_name(c.gating.rule));
  j["gating_early"] = c.gating.early;
  j["gating_middle"] = c.gating.middle;
  j["gating_late"] = c.gating.late;
  j["seed"] = c.seed;
  return j.dump(2);
}

RunResult run_full(const Dataset& data, const FeatureStore& store, const PipelineConfig& config) {
  config.validate();
  const GdpTable labels = gdp_table(data.gdp);
  EstimationChain chain(store, data.locations, labels, config, ModelKind::elastic_net);
  chain.run_all();

  RunResult result;
  for (const auto& obs : data.gdp) {
    EstimateRecord rec;
    rec.location_id = obs.location_id;
    rec.year = obs.year;
    rec.gdp_pc = rec.ci_low = rec.ci_high = obs.gdp_pc;
    rec.source = true;
    result.records.push_back(std::move(rec));
  }
  std::size_t gated = 0, rescaled = 0, unrescaled = 0, retries = 0, estimates = 0;
  std::map<std::string, std::size_t> provenance;
  Json periods = Json::array();
  for (const auto& o : chain.outcomes()) {
    for (const auto& rec : o.estimates) {
      result.records.push_back(rec);
      ++provenance[rec.init_provenance];
    }
    estimates += o.estimates.size();
    gated += o.gated.size();
    rescaled += o.rescaled;
    unrescaled += o.unrescaled;
    retries += o.bootstrap_retries;

    Json p;
    p["period"] = std::string(period_name(o.period));
    p["years"] = o.years;
    if (!o.skip_reason.empty()) p["skipped"] = o.skip_reason;
    if (o.model) {
      const auto& m = *o.model;
      p["training_rows"] = m.training_rows.size();
      p["candidate_features"] = m.feature_names.size();
      p["alpha"] = m.en.alpha;
      p["lambda"] = m.en.lambda;
      if (m.cv) {
        double best = 0.0;
        for (const auto& cell : m.cv->grid)
          if (cell.alpha == m.cv->alpha && cell.lambda == m.cv->lambda) best = cell.mean_mse;
        p["cv_mse"] = best;
      }
      p["selected_features"] = m.en.selected_features();
      p["sweeps"] = m.en.sweeps;
      p["max_delta"] = m.en.max_delta;
      p["training_hash"] = m.en.training_hash;
    }
    p["estimates"] = o.estimates.size();
    p["rescaled"] = o.rescaled;
    p["no_country_value"] = o.unrescaled;
    p["bootstrap_retries"] = o.bootstrap_retries;
    Json prov;
    for (const auto& [k, v] : o.init_provenance_counts) prov[std::string(provenance_name(k))] = v;
    p["init_gdp_provenance"] = prov;
    std::vector<std::string> gated_keys;
    for (const auto& k : o.gated) gated_keys.push_back(key_string(k));
    p["gated"] = gated_keys;
    periods.push_back(std::move(p));
  }
  std::sort(result.records.begin(), result.records.end(), [](const auto& a, const auto& b) {
    return std::tie(a.location_id, a.year) < std::tie(b.location_id, b.year);
  });

  Json report;
  Json inputs;
  inputs["biography_rows"] = data.biography_rows;
  inputs["biography_rejects"] = data.biography_rejects;
  inputs["ineligible"] = data.ineligible;
  inputs["eligible_records"] = data.records.size();
  inputs["gdp_rows"] = data.gdp_rows;
  inputs["gdp_rejects"] = data.gdp_rejects;
  inputs["locations"] = data.locations.size();
  report["inputs"] = inputs;
  Json counts;
  counts["source"] = data.gdp.size();
  counts["estimate"] = estimates;
  counts["gated"] = gated;
  counts["rescaled"] = rescaled;
  counts["no_country_value"] = unrescaled;
  counts["bootstrap_retries"] = retries;
  Json prov;
  for (const auto& [k, v] : provenance) prov[k] = v;
  counts["estimate_init_gdp_provenance"] = prov;
  report["counts"] = counts;
  report["empty_years"] = store.empty_years;
  Json flags;
  for (const auto& [year, yf] : store.years) flags[std::to_string(year)] = yf.flags;
  report["feature_flags"] = flags;
  report["periods"] = periods;
  report["config"] = Json::parse(pipeline_config_json(config));
  result.report_json = report.dump(2);
  result.outcomes = chain.outcomes();
  for (const auto& o : chain.outcomes())
    if (!o.years.empty()) result.features.push_back(chain.period_features(o.period).matrix);
  return result;
}

std::string estimates_csv(const std::vector<EstimateRecord>& records, bool exact) {
  std::string out = "location_id,year,gdp_pc_2011usd,ci_low,ci_high,kind,gated,rescaled,init_gdp_provenance\n";
  for (const auto& r : records) {
    out += csv::join({r.location_id, std::to_string(r.year), format_number(r.gdp_pc, exact),
                      format_number(r.ci_low, exact), format_number(r.ci_high, exact),
                      r.source ? "source" : "estimate", r.gated ? "true" : "false", r.rescaled, r.init_provenance});
    out += '\n';
  }
  return out;
}

std::size_t audit_rescaling(const std::filesystem::path& estimates, const FeatureStore& store,
                            const LocationTable& locations, double relative_tolerance) {
  const auto table = csv::read(estimates);
  const auto c_loc = table.column("location_id");
  const auto c_year = table.column("year");
  const auto c_val = table.column("gdp_pc_2011usd");
  const auto c_res = table.column("rescaled");
  if (!c_loc || !c_year || !c_val || !c_res)
    throw ValidationError(estimates.string() + ": not an estimates file (missing columns)");

  std::map<std::pair<std::string, int>, double> values;
  std::map<std::pair<std::string, int>, std::vector<std::pair<std::string, double>>> groups;
  for (const auto& row : table.rows) {
    const std::string& id = row.fields.at(*c_loc);
    const int year = std::stoi(row.fields.at(*c_year));
    const double v = std::stod(row.fields.at(*c_val));
    values[{id, year}] = v;
    if (row.fields.at(*c_res) == "true") groups[{locations.country_of(id), year}].emplace_back(id, v);
  }
  for (const auto& [ck, members] : groups) {
    const auto cv = values.find(ck);
    if (cv == values.end())
      throw ValidationError("rescaling audit: no value for country " + ck.first + " in " + std::to_string(ck.second));
    const auto& people = store.years.at(ck.second).people;
    double wsum = 0.0, wv = 0.0;
    for (const auto& [id, v] : members) {
      const auto& pc = people.at(id);
      const double w = static_cast<double>(pc.births + pc.deaths);
      wsum += w;
      wv += w * v;
    }
    const double mean = wv / wsum;
    if (std::abs(mean - cv->second) > relative_tolerance * std::abs(cv->second)) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "rescaling audit: %s in %d has weighted regional mean %.17g vs %.17g",
                    ck.first.c_str(), ck.second, mean, cv->second);
      throw ValidationError(buf);
    }
  }
  return groups.size();
}

}  // namespace histgdp::pipeline
