#include "histgdp/cli.hpp"

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <type_traits>

#include "CLI11.hpp"
#include "histgdp/errors.hpp"
#include "histgdp/evaluation.hpp"
#include "histgdp/explain.hpp"
#include "histgdp/log.hpp"
#include "histgdp/parallel.hpp"
#include "histgdp/pipeline.hpp"
#include "histgdp/rng.hpp"
#include "json.hpp"

#ifndef HISTGDP_VERSION
#define HISTGDP_VERSION "unknown"
#endif

namespace histgdp::cli {

using Json = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

template <typename T>
struct is_vector : std::false_type {};
template <typename T>
struct is_vector<std::vector<T>> : std::true_type {};

struct RunConfig {
  std::string biographies, locations, gdp, proxies, estimates;
  std::string output_dir = "output";
  int window_years = 150;
  std::string scale = "log10p1";
  int reference_year_for_age = 2023;
  std::string age_mode = "lifespan";
  std::size_t n_factors = 5;
  int min_birth_year = 1100;
  double max_reject_fraction = 0.10;
  std::vector<double> alpha_grid = en::default_alpha_grid();
  std::size_t n_lambda = 100;
  double lambda_ratio = 1e-4;
  std::size_t k_folds = 10;
  std::string cv_selection_rule = "min_mean";
  std::size_t bootstrap_reps = 200;
  double ci_level = 0.90;
  std::string bootstrap_unit = "row";
  std::string gating_rule = "all";
  int gating_early = 3;
  int gating_middle = 5;
  int gating_late = 10;
  std::uint64_t seed = 0;
  std::size_t n_splits = 500;
  double test_fraction = 0.2;
  std::string method = "exact";
  std::size_t n_permutations = 1000;
  std::string period = "all";
  std::string transform = "none";
  int threads = default_threads();
  std::string log_level = "warn";
};

struct Setting {
  std::string key;
  CLI::Option* option = nullptr;
  std::function<void(const Json&)> load;
  std::function<Json()> echo;
  bool echoed = true;
};

std::string key_of(const std::string& flags) {
  std::string name = flags.substr(flags.rfind(',') + 1);
  name.erase(0, name.find_first_not_of('-'));
  for (char& c : name)
    if (c == '-') c = '_';
  return name;
}

class Settings {
 public:
  explicit Settings(CLI::App& app) : app_(app) {}

  template <typename T>
  CLI::Option* add(const std::string& flags, T& field, const std::string& help, bool echoed = true) {
    Setting s;
    s.key = key_of(flags);
    s.option = app_.add_option(flags, field, help)->capture_default_str();
    if constexpr (is_vector<T>::value) s.option->delimiter(',');
    s.load = [&field, key = s.key](const Json& j) {
      bool ok = false;
      if constexpr (std::is_same_v<T, std::string>)
        ok = j.is_string();
      else if constexpr (is_vector<T>::value)
        ok = j.is_array() && std::all_of(j.begin(), j.end(), [](const Json& v) { return v.is_number(); });
      else if constexpr (std::is_unsigned_v<T>)
        ok = j.is_number_unsigned();
      else if constexpr (std::is_integral_v<T>)
        ok = j.is_number_integer();
      else
        ok = j.is_number();
      if (!ok) throw ValidationError("config: bad value for '" + key + "': " + j.dump());
      field = j.get<T>();
    };
    s.echo = [&field] { return Json(field); };
    s.echoed = echoed;
    items_.push_back(std::move(s));
    return items_.back().option;
  }

  void load_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read config file " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    Json j;
    try {
      j = Json::parse(buf.str());
    } catch (const Json::parse_error& e) {
      throw ValidationError("config file " + path + ": " + e.what());
    }
    if (!j.is_object()) throw ValidationError("config file " + path + ": expected a JSON object");
    for (const auto& [key, value] : j.items()) {
      const auto it = std::find_if(items_.begin(), items_.end(), [&](const Setting& s) { return s.key == key; });
      if (it == items_.end()) throw ValidationError("config file " + path + ": unknown key '" + key + "'");
      if (it->option->count() == 0) it->load(value);
    }
  }

  Json echo() const {
    Json j;
    for (const auto& s : items_)
      if (s.echoed) j[s.key] = s.echo();
    return j;
  }

 private:
  CLI::App& app_;
  std::vector<Setting> items_;
};

template <typename E>
E parse_or_throw(std::optional<E> v, const std::string& what, const std::string& value) {
  if (!v) throw ValidationError("unknown " + what + " '" + value + "'");
  return *v;
}

pipeline::PipelineConfig pipeline_config(const RunConfig& c) {
  pipeline::PipelineConfig p;
  p.features.window_years = c.window_years;
  p.features.scale = parse_or_throw(parse_scale(c.scale), "scale", c.scale);
  p.features.reference_year = c.reference_year_for_age;
  p.features.age_mode = parse_or_throw(parse_age_mode(c.age_mode), "age mode", c.age_mode);
  p.features.n_factors = c.n_factors;
  p.alpha_grid = c.alpha_grid;
  p.n_lambda = c.n_lambda;
  p.lambda_ratio = c.lambda_ratio;
  p.k_folds = c.k_folds;
  if (c.cv_selection_rule == "min_mean")
    p.cv_rule = en::SelectionRule::min_mean_error;
  else if (c.cv_selection_rule == "fold_average")
    p.cv_rule = en::SelectionRule::fold_average;
  else
    throw ValidationError("unknown cv selection rule '" + c.cv_selection_rule + "'");
  p.bootstrap_reps = c.bootstrap_reps;
  p.ci_level = c.ci_level;
  p.bootstrap_unit = parse_or_throw(pipeline::parse_bootstrap_unit(c.bootstrap_unit), "bootstrap unit", c.bootstrap_unit);
  p.gating.rule = parse_or_throw(pipeline::parse_gating_rule(c.gating_rule), "gating rule", c.gating_rule);
  p.gating.early = c.gating_early;
  p.gating.middle = c.gating_middle;
  p.gating.late = c.gating_late;
  p.seed = c.seed;
  p.threads = c.threads;
  p.validate();
  return p;
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw ValidationError(std::string("missing required path ") + flag);
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  out.close();
  if (!out) throw IoError("failed writing " + path.string());
}

fs::path output_dir(const RunConfig& c) {
  std::error_code ec;
  fs::create_directories(c.output_dir, ec);
  if (ec) throw IoError("cannot create output directory " + c.output_dir + ": " + ec.message());
  return c.output_dir;
}

Json rejects_json(const Dataset& ds) {
  std::map<std::string, std::size_t> by_reason;
  for (const auto& r : ds.rejects) ++by_reason[r.reason];
  Json j;
  j["biography_rows"] = ds.biography_rows;
  j["biography_rejects"] = ds.biography_rejects;
  j["gdp_rows"] = ds.gdp_rows;
  j["gdp_rejects"] = ds.gdp_rejects;
  j["ineligible"] = ds.ineligible;
  Json reasons = Json::object();
  for (const auto& [k, v] : by_reason) reasons[k] = v;
  j["by_reason"] = reasons;
  return j;
}

// Loads the inputs, writes the rejects report and applies the reject ceiling.
Dataset load_inputs(const RunConfig& c, const fs::path& out) {
  require(c.biographies, "--biographies");
  require(c.locations, "--locations");
  require(c.gdp, "--gdp");
  Dataset ds = load_dataset(c.biographies, c.locations, c.gdp, c.min_birth_year);
  write_file(out / "rejects.csv", rejects_csv(ds.rejects));
  check_reject_ceiling(ds, c.max_reject_fraction);
  return ds;
}

void write_feature_years(const FeatureMatrix& fm, const fs::path& out) {
  std::map<int, std::vector<std::size_t>> by_year;
  for (std::size_t r = 0; r < fm.rows.size(); ++r) by_year[fm.rows[r].year].push_back(r);
  for (const auto& [year, rows] : by_year)
    write_file(out / ("feature_matrix_" + std::to_string(year) + ".csv"), fm.select_rows(rows).to_csv());
}

Json report_head(const char* command) {
  Json j;
  j["command"] = command;
  j["version"] = HISTGDP_VERSION;
  return j;
}

int cmd_validate(const RunConfig& c, const Json& echo, std::ostream& stdout_) {
  const auto out = output_dir(c);
  require(c.biographies, "--biographies");
  require(c.locations, "--locations");
  require(c.gdp, "--gdp");
  const Dataset ds = load_dataset(c.biographies, c.locations, c.gdp, c.min_birth_year);
  write_file(out / "rejects.csv", rejects_csv(ds.rejects));
  Json report = report_head("validate");
  Json inputs = rejects_json(ds);
  inputs["eligible_records"] = ds.records.size();
  inputs["gdp_observations"] = ds.gdp.size();
  inputs["locations"] = ds.locations.size();
  report["inputs"] = inputs;
  report["config"] = echo;
  write_file(out / "run_report.json", report.dump(2) + "\n");
  stdout_ << inputs.dump(2) << "\n";
  check_reject_ceiling(ds, c.max_reject_fraction);
  return 0;
}

int cmd_features(const RunConfig& c, const pipeline::PipelineConfig& p, const Json& echo) {
  const auto out = output_dir(c);
  const Dataset ds = load_inputs(c, out);
  const auto store = pipeline::build_feature_store(ds.records, ds.locations, p.features, c.threads);
  Json years = Json::array();
  for (const auto& [year, yf] : store.years) {
    write_file(out / ("feature_matrix_" + std::to_string(year) + ".csv"), yf.matrix.to_csv());
    Json y;
    y["year"] = year;
    y["rows"] = yf.matrix.rows.size();
    y["columns"] = yf.matrix.columns.size();
    y["individuals"] = yf.individuals;
    y["flags"] = yf.flags;
    years.push_back(y);
  }
  Json report = report_head("features");
  report["rejects"] = rejects_json(ds);
  report["years"] = years;
  report["empty_years"] = store.empty_years;
  report["config"] = echo;
  write_file(out / "run_report.json", report.dump(2) + "\n");
  return 0;
}

int cmd_estimate(const RunConfig& c, const pipeline::PipelineConfig& p, const Json& echo, bool emit_features) {
  const auto out = output_dir(c);
  const Dataset ds = load_inputs(c, out);
  const auto store = pipeline::build_feature_store(ds.records, ds.locations, p.features, c.threads);
  log::info("estimate: running all periods");
  const auto result = pipeline::run_full(ds, store, p);
  write_file(out / "estimates.csv", pipeline::estimates_csv(result.records));
  write_file(out / "estimates_exact.csv", pipeline::estimates_csv(result.records, true));
  const std::size_t audited = pipeline::audit_rescaling(out / "estimates_exact.csv", store, ds.locations, 1e-9);
  if (emit_features)
    for (const auto& fm : result.features) write_feature_years(fm, out);

  Json run = Json::parse(result.report_json);
  Json report = report_head("estimate");
  for (const auto& [k, v] : run.items())
    if (k != "config") report[k] = v;
  report["rejects"] = rejects_json(ds);
  report["rescaling_audit"] = {{"country_years", audited}, {"relative_tolerance", 1e-9}};
  report["config"] = echo;
  write_file(out / "run_report.json", report.dump(2) + "\n");
  return 0;
}

int cmd_evaluate(const RunConfig& c, const pipeline::PipelineConfig& p, const Json& echo) {
  const auto out = output_dir(c);
  const Dataset ds = load_inputs(c, out);
  const auto store = pipeline::build_feature_store(ds.records, ds.locations, p.features, c.threads);
  evaluation::EvaluationOptions opt;
  opt.n_splits = c.n_splits;
  opt.fraction = c.test_fraction;
  opt.master_seed = c.seed;
  opt.threads = c.threads;
  const auto d = evaluation::evaluate_models(ds, store, p, opt);
  write_file(out / "evaluation.csv", evaluation::evaluation_csv(d));
  const std::string summary = evaluation::evaluation_summary_json(d, opt);
  write_file(out / "evaluation_summary.json", summary + "\n");
  Json report = report_head("evaluate");
  report["rejects"] = rejects_json(ds);
  report["evaluation"] = Json::parse(summary);
  report["config"] = echo;
  write_file(out / "run_report.json", report.dump(2) + "\n");
  for (const auto& s : d.splits)
    if (!s.completed) log::warn("split " + std::to_string(s.index) + " failed: " + s.failure);
  return 0;
}

int cmd_explain(const RunConfig& c, const pipeline::PipelineConfig& p, const Json& echo) {
  std::optional<Period> only;
  if (c.period != "all") only = parse_or_throw(parse_period(c.period), "period", c.period);
  explain::ExplainOptions opt;
  if (c.method == "exact")
    opt.method = explain::Method::exact;
  else if (c.method == "permutation")
    opt.method = explain::Method::permutation;
  else
    throw ValidationError("unknown explain method '" + c.method + "'");
  opt.n_permutations = c.n_permutations;
  opt.threads = c.threads;

  const auto out = output_dir(c);
  const Dataset ds = load_inputs(c, out);
  const auto store = pipeline::build_feature_store(ds.records, ds.locations, p.features, c.threads);
  pipeline::EstimationChain chain(store, ds.locations, gdp_table(ds.gdp), p, pipeline::ModelKind::elastic_net,
                                  {true, false});
  Json periods = Json::array();
  for (Period period : all_periods()) {
    const auto& o = chain.run_period(period);
    if (only && *only != period) continue;
    Json entry;
    entry["period"] = std::string(period_name(period));
    if (!o.model) {
      entry["skipped"] = o.skip_reason;
      periods.push_back(entry);
      continue;
    }
    opt.seed = child_seed(c.seed, "explain", static_cast<std::uint64_t>(period));
    const auto attributions = explain::explain_period(*o.model, opt);
    const auto ranking = explain::rank_features(attributions);
    const std::string name(period_name(period));
    write_file(out / ("shapley_" + name + ".csv"), explain::shapley_csv(attributions));
    write_file(out / ("feature_importance_" + name + ".csv"), explain::feature_importance_csv(ranking));
    entry["instances"] = attributions.size();
    Json top = Json::array();
    for (std::size_t i = 0; i < std::min<std::size_t>(10, ranking.size()); ++i)
      top.push_back({{"feature", ranking[i].first}, {"mean_abs_phi", ranking[i].second}});
    entry["top_features"] = top;
    periods.push_back(entry);
  }
  Json report = report_head("explain");
  report["rejects"] = rejects_json(ds);
  report["periods"] = periods;
  report["config"] = echo;
  write_file(out / "run_report.json", report.dump(2) + "\n");
  return 0;
}

int cmd_correlate(const RunConfig& c, const Json& echo, std::ostream& stdout_) {
  require(c.proxies, "--proxies");
  const auto out = output_dir(c);
  const fs::path estimates = c.estimates.empty() ? out / "estimates.csv" : fs::path(c.estimates);
  const auto transform = parse_or_throw(evaluation::parse_transform(c.transform), "transform", c.transform);
  const auto r = evaluation::proxy_correlation(evaluation::load_estimates(estimates),
                                               evaluation::load_proxies(c.proxies), transform);
  const std::string text = evaluation::proxy_correlation_json(r);
  write_file(out / "proxy_correlation.json", text + "\n");
  Json report = report_head("correlate");
  report["estimates"] = estimates.string();
  report["correlation"] = Json::parse(text);
  report["config"] = echo;
  write_file(out / "run_report.json", report.dump(2) + "\n");
  stdout_ << text << "\n";
  return 0;
}

std::optional<log::Level> parse_level(const std::string& s) {
  if (s == "debug") return log::Level::debug;
  if (s == "info") return log::Level::info;
  if (s == "warn") return log::Level::warn;
  if (s == "error") return log::Level::error;
  if (s == "off") return log::Level::off;
  return std::nullopt;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  RunConfig c;
  std::string config_path;
  bool emit_features = false;

  CLI::App app{"Historical GDP per capita estimates from biography records", "histgdp"};
  app.set_version_flag("--version", HISTGDP_VERSION);
  app.fallthrough();
  app.require_subcommand(1, 1);

  Settings s(app);
  app.add_option("--config", config_path, "JSON config file; flags override its values");
  s.add("--biographies", c.biographies, "Biographies CSV");
  s.add("--locations", c.locations, "Locations CSV");
  s.add("--gdp", c.gdp, "GDP labels CSV");
  s.add("--proxies", c.proxies, "Proxy series CSV (correlate)");
  s.add("--estimates", c.estimates, "Estimates CSV (correlate; default <output-dir>/estimates.csv)");
  s.add("--output-dir", c.output_dir, "Directory for all outputs");
  s.add("--window-years", c.window_years, "Birth-year window before each snapshot");
  s.add("--scale", c.scale, "Count scale: log10p1 or asinh");
  s.add("--reference-year-for-age", c.reference_year_for_age, "Reference year for the popularity age");
  s.add("--age-mode", c.age_mode, "avg_age measure: lifespan or age_at_snapshot");
  s.add("--n-factors", c.n_factors, "SVD factors per flow");
  s.add("--min-birth-year", c.min_birth_year, "Earliest eligible birth year");
  s.add("--max-reject-fraction", c.max_reject_fraction, "Abort when a file rejects more rows than this");
  s.add("--alpha-grid", c.alpha_grid, "Elastic-net mixing values, comma separated");
  s.add("--n-lambda", c.n_lambda, "Lambda path length");
  s.add("--lambda-ratio", c.lambda_ratio, "Smallest lambda as a fraction of the largest");
  s.add("--k-folds", c.k_folds, "Cross-validation folds");
  s.add("--cv-selection-rule", c.cv_selection_rule, "min_mean or fold_average");
  s.add("-B", c.bootstrap_reps, "Bootstrap replicates");
  s.add("--ci-level", c.ci_level, "Confidence level of the intervals");
  s.add("--bootstrap-unit", c.bootstrap_unit, "Resampling unit: row or country");
  s.add("--gating-rule", c.gating_rule, "all, any or sum");
  s.add("--gating-early", c.gating_early, "Threshold for years up to 1600");
  s.add("--gating-middle", c.gating_middle, "Threshold for 1650 to 1950");
  s.add("--gating-late", c.gating_late, "Threshold for 2000");
  s.add("--seed", c.seed, "Master seed");
  s.add("--n-splits", c.n_splits, "Evaluation splits");
  s.add("--test-fraction", c.test_fraction, "Fraction of countries held out per split");
  s.add("--method", c.method, "Shapley method: exact or permutation");
  s.add("--n-permutations", c.n_permutations, "Permutations per instance");
  s.add("--period", c.period, "Period to explain, or all");
  s.add("--transform", c.transform, "Estimate transform before correlating: none or log10");
  s.add("--threads", c.threads, "Worker threads; results do not depend on it", false);
  s.add("--log-level", c.log_level, "debug, info, warn, error or off", false);

  auto* validate = app.add_subcommand("validate", "Load and check the inputs, write the rejects report");
  auto* features = app.add_subcommand("features", "Write the biography feature matrix of every snapshot year");
  auto* estimate = app.add_subcommand("estimate", "Estimate GDP per capita for all periods");
  estimate->add_flag("--emit-features", emit_features, "Also write the assembled feature matrices");
  auto* evaluate = app.add_subcommand("evaluate", "Compare baseline and full models on country-held-out splits");
  auto* explain = app.add_subcommand("explain", "Shapley attributions of the period models");
  auto* correlate = app.add_subcommand("correlate", "Correlate estimates with an external proxy series");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (!config_path.empty()) s.load_file(config_path);
    const auto level = parse_level(c.log_level);
    if (!level) throw ValidationError("unknown log level '" + c.log_level + "'");
    log::set_level(*level);
    if (c.threads <= 0) c.threads = default_threads();
    const Json echo = s.echo();

    const auto p = pipeline_config(c);
    if (validate->parsed()) return cmd_validate(c, echo, out);
    if (correlate->parsed()) return cmd_correlate(c, echo, out);
    if (features->parsed()) return cmd_features(c, p, echo);
    if (estimate->parsed()) return cmd_estimate(c, p, echo, emit_features);
    if (evaluate->parsed()) return cmd_evaluate(c, p, echo);
    if (explain->parsed()) return cmd_explain(c, p, echo);
    return 1;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace histgdp::cli
