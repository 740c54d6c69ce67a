#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "histgdp/data_ingest.hpp"
#include "histgdp/elasticnet.hpp"
#include "histgdp/features.hpp"
#include "histgdp/periods.hpp"

namespace histgdp::pipeline {

/// How births and deaths are combined against a threshold: both at least t,
/// either at least t, or their sum at least t.
enum class GatingRule { all, any, sum };
std::string_view gating_rule_name(GatingRule r);
std::optional<GatingRule> parse_gating_rule(std::string_view name);

struct GatingPolicy {
  int early = 3;   // years up to 1600
  int middle = 5;  // 1650 to 1950
  int late = 10;   // 2000
  GatingRule rule = GatingRule::all;

  int threshold(int year) const;
  bool passes(int year, const PeopleCounts& counts) const;
  /// Thresholds must be positive and non-decreasing.
  void validate() const;
};

enum class BootstrapUnit { row, country };
std::string_view bootstrap_unit_name(BootstrapUnit u);
std::optional<BootstrapUnit> parse_bootstrap_unit(std::string_view name);

struct PipelineConfig {
  FeatureConfig features;
  std::vector<double> alpha_grid = en::default_alpha_grid();
  std::size_t n_lambda = 100;
  double lambda_ratio = 1e-4;
  std::size_t k_folds = 10;
  en::SelectionRule cv_rule = en::SelectionRule::min_mean_error;
  std::size_t bootstrap_reps = 200;
  double ci_level = 0.90;
  BootstrapUnit bootstrap_unit = BootstrapUnit::row;
  GatingPolicy gating;
  std::uint64_t seed = 0;
  int threads = 1;

  void validate() const;
};

/// Biography features for every snapshot year; computed once and shared by
/// all chains over the same biographies.
struct FeatureStore {
  std::map<int, YearFeatures> years;
  std::vector<std::string> occupations;
  std::vector<int> empty_years;  // no individuals in the window
};

FeatureStore build_feature_store(const std::vector<BiographyRecord>& records, const LocationTable& locations,
                                 const FeatureConfig& config, int threads = 1);

/// OLS of log10 GDP on supranational-region x year cells plus the lag.
struct BaselineModel {
  std::vector<std::string> cells;  // "<region>@<year>", sorted; the first is the reference
  std::vector<double> cell_effects;  // per cell, reference = 0
  double intercept = 0.0;
  bool has_lag = false;
  double lag_coefficient = 0.0;
  double mean_effect = 0.0;  // used for cells without training rows
  std::size_t singleton_cells = 0;
  bool rank_deficient = false;

  std::vector<double> predict(const FeatureMatrix& features, const LocationTable& locations) const;
};

/// `features` holds the training rows; uses init_gdp when present.
BaselineModel fit_baseline(const FeatureMatrix& features, std::span<const double> log10_gdp,
                           const LocationTable& locations);

enum class ModelKind { elastic_net, baseline };
std::string_view model_kind_name(ModelKind k);

/// Model designs leave out the dummy of the first supranational region.
struct TrainedPeriodModel {
  Period period = Period::late_middle_ages;
  ModelKind kind = ModelKind::elastic_net;
  en::EnModel en;
  BaselineModel baseline;
  std::vector<std::string> feature_names;
  std::vector<RowKey> training_rows;
  std::optional<en::CvResult> cv;
  FeatureMatrix training;  // raw training matrix (explain background)
  std::vector<double> training_y;

  std::vector<double> predict(const FeatureMatrix& features, const LocationTable& locations) const;
};

struct EstimateRecord {
  std::string location_id;
  int year = 0;
  double gdp_pc = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  bool source = false;
  bool gated = false;
  std::string rescaled = "false";  // "true", "false" or "no_country_value"
  std::string init_provenance;
};

struct RescaleOutcome {
  std::vector<double> values;
  double factor = 1.0;
};

/// Multiplies regional estimates so that their proxy-weighted mean equals the
/// country value. Throws ValidationError when the proxies sum to zero.
RescaleOutcome rescale_regions(std::span<const double> regional, double country_value, std::span<const double> proxies);

struct BootstrapOptions {
  std::size_t reps = 200;
  double level = 0.90;
  std::uint64_t seed = 0;
  int threads = 1;
  /// Cluster label per training row for the country bootstrap; empty for
  /// row resampling.
  std::vector<std::string> clusters;
  en::SolverOptions solver;
};

struct BootstrapResult {
  std::vector<double> low;   // level scale
  std::vector<double> high;  // level scale
  std::size_t retries = 0;   // degenerate resamples drawn again
};

/// Percentile bootstrap of level-scale predictions with (alpha, lambda)
/// fixed. Replicate b draws from child_seed(seed, "bootstrap", b).
BootstrapResult bootstrap_ci(const Matrix& x, std::span<const std::string> names, std::span<const double> log10_y,
                             const Matrix& targets, double alpha, double lambda, const BootstrapOptions& options);

struct PeriodOutcome {
  Period period = Period::late_middle_ages;
  std::vector<int> years;
  std::optional<TrainedPeriodModel> model;
  std::string skip_reason;
  std::vector<EstimateRecord> estimates;  // model rows only, sorted
  std::map<RowKey, double> raw_log10;     // predictions before rescaling
  std::vector<RowKey> gated;
  std::map<InitProvenance, std::size_t> init_provenance_counts;
  std::size_t rescaled = 0;
  std::size_t unrescaled = 0;
  std::size_t bootstrap_retries = 0;
};

struct ChainOptions {
  bool rescale = true;
  bool bootstrap = true;
};

/// Trains and predicts period by period; each period's initial GDP draws on
/// the estimates of earlier ones, so periods must be run in order.
class EstimationChain {
 public:
  EstimationChain(const FeatureStore& store, const LocationTable& locations, GdpTable labels,
                  const PipelineConfig& config, ModelKind kind, ChainOptions options = {});

  /// Throws ValidationError unless `period` is the next one in chronological
  /// order.
  const PeriodOutcome& run_period(Period period);
  void run_all();

  const std::vector<PeriodOutcome>& outcomes() const { return outcomes_; }
  /// Final (rescaled) level-scale estimates of the periods run so far.
  const GdpTable& model_estimates() const { return estimates_; }
  const GdpTable& labels() const { return labels_; }

  /// The period's assembled feature matrix (all location-years, with
  /// init_gdp where applicable) and per-row lag provenance.
  AssembledFeatures period_features(Period period) const;

 private:
  const FeatureStore& store_;
  const LocationTable& locations_;
  GdpTable labels_;
  PipelineConfig config_;
  ModelKind kind_;
  ChainOptions options_;
  int next_ = 0;
  GdpTable estimates_;
  std::vector<PeriodOutcome> outcomes_;
};

struct RunResult {
  std::vector<EstimateRecord> records;  // sources and estimates, sorted by (location, year)
  std::vector<PeriodOutcome> outcomes;
  std::string report_json;
  /// Assembled matrices (with init_gdp) of the periods that have years.
  std::vector<FeatureMatrix> features;
};

/// Full estimation over all periods: sources pass through, every other
/// location-year is gated, predicted, rescaled and given a bootstrap CI.
RunResult run_full(const Dataset& data, const FeatureStore& store, const PipelineConfig& config);

std::string estimates_csv(const std::vector<EstimateRecord>& records, bool exact = false);

/// Re-reads an estimates file and checks, for every country-year with
/// rescaled regions, that the births+deaths weighted mean of the regional
/// values equals the country value within `relative_tolerance`. Returns the
/// number of country-years checked; throws ValidationError on a violation.
std::size_t audit_rescaling(const std::filesystem::path& estimates, const FeatureStore& store,
                            const LocationTable& locations, double relative_tolerance);

std::string pipeline_config_json(const PipelineConfig& config);

}  // namespace histgdp::pipeline
