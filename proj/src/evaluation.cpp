#include "histgdp/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <stdexcept>

#include "histgdp/csv.hpp"
#include "histgdp/errors.hpp"
#include "histgdp/parallel.hpp"
#include "histgdp/rng.hpp"
#include "json.hpp"

namespace histgdp::evaluation {

using Json = nlohmann::ordered_json;

namespace {

std::string exact(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& field, const std::string& file, std::size_t line, const char* what) {
  char* end = nullptr;
  const double v = std::strtod(field.c_str(), &end);
  if (field.empty() || end != field.c_str() + field.size() || !std::isfinite(v))
    throw ValidationError(file + ":" + std::to_string(line) + ": bad " + what + " '" + field + "'");
  return v;
}

int parse_year(const std::string& field, const std::string& file, std::size_t line) {
  const double v = parse_double(field, file, line, "year");
  if (v != std::floor(v)) throw ValidationError(file + ":" + std::to_string(line) + ": bad year '" + field + "'");
  return static_cast<int>(v);
}

std::size_t required(const csv::Table& t, const char* name, const std::string& file) {
  const auto c = t.column(name);
  if (!c) throw ValidationError(file + ": missing column '" + name + "'");
  return *c;
}

MetricSummary summarize(const std::vector<double>& v) {
  if (v.empty()) return {};
  return {numerics::quantile(v, 0.5), numerics::quantile(v, 0.25), numerics::quantile(v, 0.75)};
}

}  // namespace

SplitSpec split_countries(const LocationTable& locations, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ValidationError("split fraction must lie in (0, 1)");
  auto countries = locations.ids_at(LocationLevel::country);
  if (countries.size() < 5)
    throw ValidationError("country split needs at least 5 countries, got " + std::to_string(countries.size()));
  const auto m = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(countries.size()) - 1e-9));
  Rng rng(seed);
  rng.shuffle(std::span<std::string>(countries));
  SplitSpec spec;
  spec.seed = seed;
  spec.test_countries.assign(countries.begin(), countries.begin() + static_cast<std::ptrdiff_t>(m));
  std::sort(spec.test_countries.begin(), spec.test_countries.end());
  for (const auto& c : spec.test_countries) {
    spec.test_locations.insert(c);
    for (const auto& r : locations.regions_of(c)) spec.test_locations.insert(r);
  }
  return spec;
}

std::uint64_t split_seed(std::uint64_t master, std::size_t index) { return child_seed(master, "split", index); }

SplitResult run_split(const Dataset& data, const pipeline::FeatureStore& store, const pipeline::PipelineConfig& config,
                      const SplitSpec& split, const EvaluationOptions& options) {
  SplitResult out;
  out.seed = split.seed;
  out.test_countries = split.test_countries;

  GdpTable train;
  std::map<RowKey, double> test;
  for (const auto& obs : data.gdp) {
    if (split.is_test(obs.location_id))
      test[{obs.location_id, obs.year}] = obs.gdp_pc;
    else
      train[{obs.location_id, obs.year}] = obs.gdp_pc;
  }
  out.test_rows = test.size();

  pipeline::PipelineConfig cfg = config;
  cfg.seed = child_seed(split.seed, "models");
  const pipeline::ChainOptions chain_options{false, false};

  std::map<RowKey, double> predicted[2];
  const pipeline::ModelKind arms[2] = {options.baseline_arm, options.full_arm};
  for (int a = 0; a < 2; ++a) {
    pipeline::EstimationChain chain(store, data.locations, train, cfg, arms[a], chain_options);
    try {
      chain.run_all();
    } catch (const ValidationError& e) {
      out.failure = std::string(pipeline::model_kind_name(arms[a])) + ": " + e.what();
      return out;
    } catch (const NumericalError& e) {
      out.failure = std::string(pipeline::model_kind_name(arms[a])) + ": " + e.what();
      return out;
    }
    for (const auto& o : chain.outcomes()) {
      if (o.model)
        for (const auto& key : o.model->training_rows)
          if (test.count(key) != 0)
            throw std::logic_error("evaluation leak: " + key.location_id + "@" + std::to_string(key.year) +
                                   " is both a training and a test row");
      for (const auto& [key, value] : o.raw_log10)
        if (test.count(key) != 0) predicted[a][key] = value;
    }
  }

  std::vector<double> obs_log, obs_level, pred_log[2], pred_level[2];
  std::map<int, std::vector<std::size_t>> by_period;
  for (const auto& [key, value] : test) {
    const auto b = predicted[0].find(key);
    const auto f = predicted[1].find(key);
    if (b == predicted[0].end() || f == predicted[1].end()) {
      ++out.gated_rows;
      continue;
    }
    by_period[static_cast<int>(period_of(key.year))].push_back(obs_log.size());
    obs_log.push_back(std::log10(value));
    obs_level.push_back(value);
    pred_log[0].push_back(b->second);
    pred_log[1].push_back(f->second);
    pred_level[0].push_back(std::pow(10.0, b->second));
    pred_level[1].push_back(std::pow(10.0, f->second));
  }
  out.scored_rows = obs_log.size();
  if (out.scored_rows < options.min_test_rows) {
    out.failure = "only " + std::to_string(out.scored_rows) + " scorable test rows";
    return out;
  }
  out.r2_baseline = numerics::r2_log(pred_log[0], obs_log);
  out.r2_full = numerics::r2_log(pred_log[1], obs_log);
  out.mae_baseline = numerics::mae_relative(pred_level[0], obs_level);
  out.mae_full = numerics::mae_relative(pred_level[1], obs_level);
  for (int a = 0; a < 2; ++a) {
    double weighted = 0.0;
    for (const auto& [period, rows] : by_period) {
      std::vector<double> p, o;
      for (std::size_t i : rows) {
        p.push_back(pred_level[a][i]);
        o.push_back(obs_level[i]);
      }
      weighted += numerics::mae_relative(p, o) * static_cast<double>(rows.size());
    }
    (a == 0 ? out.mae_baseline_period : out.mae_full_period) = weighted / static_cast<double>(out.scored_rows);
  }
  out.completed = true;
  return out;
}

PerformanceDistribution evaluate_models(const Dataset& data, const pipeline::FeatureStore& store,
                                        const pipeline::PipelineConfig& config, const EvaluationOptions& options) {
  if (options.n_splits == 0) throw ValidationError("n_splits must be positive");
  config.validate();
  pipeline::PipelineConfig inner = config;
  inner.threads = 1;

  PerformanceDistribution d;
  d.splits.resize(options.n_splits);
  parallel_for(options.n_splits, options.threads, [&](std::size_t i) {
    const auto spec = split_countries(data.locations, options.fraction, split_seed(options.master_seed, i));
    d.splits[i] = run_split(data, store, inner, spec, options);
    d.splits[i].index = i;
  });

  std::vector<double> r2b, r2f, maeb, maef;
  for (const auto& s : d.splits) {
    if (!s.completed) continue;
    ++d.completed;
    r2b.push_back(s.r2_baseline);
    r2f.push_back(s.r2_full);
    maeb.push_back(s.mae_baseline);
    maef.push_back(s.mae_full);
  }
  d.r2_baseline = summarize(r2b);
  d.r2_full = summarize(r2f);
  d.mae_baseline = summarize(maeb);
  d.mae_full = summarize(maef);
  if (d.completed > 0) {
    d.kw_r2 = numerics::kruskal_wallis({r2b, r2f});
    d.kw_mae = numerics::kruskal_wallis({maeb, maef});
  }
  return d;
}

std::string evaluation_csv(const PerformanceDistribution& d) {
  std::string out =
      "split,seed,status,test_countries,test_rows,scored_rows,gated_rows,r2_baseline,r2_full,mae_baseline,mae_full,"
      "mae_baseline_period,mae_full_period,failure\n";
  for (const auto& s : d.splits) {
    std::string countries;
    for (const auto& c : s.test_countries) countries += (countries.empty() ? "" : ";") + c;
    std::vector<std::string> f = {std::to_string(s.index), std::to_string(s.seed), s.completed ? "ok" : "failed",
                                  countries, std::to_string(s.test_rows), std::to_string(s.scored_rows),
                                  std::to_string(s.gated_rows)};
    if (s.completed) {
      for (double v : {s.r2_baseline, s.r2_full, s.mae_baseline, s.mae_full, s.mae_baseline_period, s.mae_full_period})
        f.push_back(exact(v));
    } else {
      f.insert(f.end(), 6, "");
    }
    f.push_back(s.failure);
    out += csv::join(f) + "\n";
  }
  return out;
}

std::string evaluation_summary_json(const PerformanceDistribution& d, const EvaluationOptions& options) {
  auto metric = [](const MetricSummary& m) {
    Json j;
    j["median"] = m.median;
    j["q25"] = m.q25;
    j["q75"] = m.q75;
    j["iqr"] = m.q75 - m.q25;
    return j;
  };
  std::vector<double> period_b, period_f;
  std::size_t gated = 0;
  for (const auto& s : d.splits) {
    gated += s.gated_rows;
    if (!s.completed) continue;
    period_b.push_back(s.mae_baseline_period);
    period_f.push_back(s.mae_full_period);
  }
  Json j;
  j["n_splits"] = d.splits.size();
  j["completed"] = d.completed;
  j["failed"] = d.splits.size() - d.completed;
  j["fraction"] = options.fraction;
  j["master_seed"] = options.master_seed;
  j["baseline_arm"] = std::string(pipeline::model_kind_name(options.baseline_arm));
  j["full_arm"] = std::string(pipeline::model_kind_name(options.full_arm));
  j["gated_test_rows"] = gated;
  j["r2_baseline"] = metric(d.r2_baseline);
  j["r2_full"] = metric(d.r2_full);
  j["mae_baseline"] = metric(d.mae_baseline);
  j["mae_full"] = metric(d.mae_full);
  j["mae_baseline_per_period"] = metric(summarize(period_b));
  j["mae_full_per_period"] = metric(summarize(period_f));
  j["kruskal_wallis_r2"] = {{"h", d.kw_r2.h}, {"p", d.kw_r2.p}};
  j["kruskal_wallis_mae"] = {{"h", d.kw_mae.h}, {"p", d.kw_mae.p}};
  return j.dump(2);
}

// --- proxies -----------------------------------------------------------------

std::vector<ProxyObservation> load_proxies(const std::filesystem::path& path) {
  const auto table = csv::read(path);
  const std::string file = path.string();
  const auto c_loc = required(table, "location_id", file);
  const auto c_year = required(table, "year", file);
  const auto c_val = required(table, "value", file);
  std::vector<ProxyObservation> out;
  for (const auto& row : table.rows) {
    if (row.fields.size() != table.header.size())
      throw ValidationError(file + ":" + std::to_string(row.line) + ": wrong number of fields");
    out.push_back({row.fields[c_loc], parse_year(row.fields[c_year], file, row.line),
                   parse_double(row.fields[c_val], file, row.line, "value")});
  }
  return out;
}

std::vector<pipeline::EstimateRecord> load_estimates(const std::filesystem::path& path) {
  const auto table = csv::read(path);
  const std::string file = path.string();
  const auto c_loc = required(table, "location_id", file);
  const auto c_year = required(table, "year", file);
  const auto c_val = required(table, "gdp_pc_2011usd", file);
  const auto c_lo = required(table, "ci_low", file);
  const auto c_hi = required(table, "ci_high", file);
  const auto c_kind = required(table, "kind", file);
  const auto c_res = table.column("rescaled");
  const auto c_prov = table.column("init_gdp_provenance");
  std::vector<pipeline::EstimateRecord> out;
  for (const auto& row : table.rows) {
    if (row.fields.size() != table.header.size())
      throw ValidationError(file + ":" + std::to_string(row.line) + ": wrong number of fields");
    pipeline::EstimateRecord r;
    r.location_id = row.fields[c_loc];
    r.year = parse_year(row.fields[c_year], file, row.line);
    r.gdp_pc = parse_double(row.fields[c_val], file, row.line, "gdp_pc_2011usd");
    r.ci_low = parse_double(row.fields[c_lo], file, row.line, "ci_low");
    r.ci_high = parse_double(row.fields[c_hi], file, row.line, "ci_high");
    const auto& kind = row.fields[c_kind];
    if (kind != "source" && kind != "estimate")
      throw ValidationError(file + ":" + std::to_string(row.line) + ": bad kind '" + kind + "'");
    r.source = kind == "source";
    if (c_res) r.rescaled = row.fields[*c_res];
    if (c_prov) r.init_provenance = row.fields[*c_prov];
    out.push_back(std::move(r));
  }
  return out;
}

std::optional<Transform> parse_transform(std::string_view name) {
  if (name == "none") return Transform::none;
  if (name == "log10") return Transform::log10;
  return std::nullopt;
}

ProxyCorrelation proxy_correlation(const std::vector<pipeline::EstimateRecord>& estimates,
                                   const std::vector<ProxyObservation>& proxies, Transform transform) {
  std::map<RowKey, const pipeline::EstimateRecord*> index;
  for (const auto& e : estimates) index[{e.location_id, e.year}] = &e;
  std::vector<double> est[3], prox[3];  // all, source, estimate
  for (const auto& p : proxies) {
    const auto it = index.find({p.location_id, p.year});
    if (it == index.end()) continue;
    double v = it->second->gdp_pc;
    if (transform == Transform::log10) {
      if (!(v > 0.0)) throw ValidationError("proxy_correlation: log10 of a non-positive estimate");
      v = std::log10(v);
    }
    for (int g : {0, it->second->source ? 1 : 2}) {
      est[g].push_back(v);
      prox[g].push_back(p.value);
    }
  }
  if (est[0].size() < 3)
    throw ValidationError("proxy_correlation: " + std::to_string(est[0].size()) +
                          " matched location-years, at least 3 required");
  ProxyCorrelation out;
  out.n = est[0].size();
  out.r = numerics::pearson(est[0], prox[0]);
  out.n_source = est[1].size();
  out.n_estimate = est[2].size();
  if (out.n_source >= 3) out.r_source = numerics::pearson(est[1], prox[1]);
  if (out.n_estimate >= 3) out.r_estimate = numerics::pearson(est[2], prox[2]);
  return out;
}

std::string proxy_correlation_json(const ProxyCorrelation& c) {
  Json j;
  j["r"] = c.r;
  j["n"] = c.n;
  j["r_source"] = c.r_source ? Json(*c.r_source) : Json(nullptr);
  j["n_source"] = c.n_source;
  j["r_estimate"] = c.r_estimate ? Json(*c.r_estimate) : Json(nullptr);
  j["n_estimate"] = c.n_estimate;
  return j.dump(2);
}

}  // namespace histgdp::evaluation
