#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "histgdp/data_ingest.hpp"
#include "histgdp/numerics.hpp"
#include "histgdp/pipeline.hpp"

namespace histgdp::evaluation {

struct SplitSpec {
  std::uint64_t seed = 0;
  std::vector<std::string> test_countries;  // sorted
  std::set<std::string> test_locations;     // test countries and their regions

  bool is_test(const std::string& location) const { return test_locations.count(location) != 0; }
};

/// Draws ceil(fraction * n) countries without replacement. Throws
/// ValidationError for fewer than 5 countries.
SplitSpec split_countries(const LocationTable& locations, double fraction, std::uint64_t seed);

struct EvaluationOptions {
  std::size_t n_splits = 500;
  double fraction = 0.2;
  std::uint64_t master_seed = 0;
  int threads = 1;
  /// The two arms compared; "baseline" and "full" in the outputs.
  pipeline::ModelKind baseline_arm = pipeline::ModelKind::baseline;
  pipeline::ModelKind full_arm = pipeline::ModelKind::elastic_net;
  std::size_t min_test_rows = 5;
};

struct SplitResult {
  std::size_t index = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> test_countries;
  bool completed = false;
  std::string failure;
  std::size_t test_rows = 0;    // labeled rows of test locations
  std::size_t scored_rows = 0;  // predicted by both arms
  std::size_t gated_rows = 0;   // test rows without a prediction
  double r2_baseline = 0.0;
  double r2_full = 0.0;
  double mae_baseline = 0.0;  // pooled denominator
  double mae_full = 0.0;
  double mae_baseline_period = 0.0;  // per-period denominators, row-weighted
  double mae_full_period = 0.0;
};

/// Removes the test locations' labels, runs both arms' chains on the rest
/// (no rescaling, no bootstrap) and scores the test rows. Throws if a model
/// saw a test row. Model failures are reported in the result, not thrown.
SplitResult run_split(const Dataset& data, const pipeline::FeatureStore& store, const pipeline::PipelineConfig& config,
                      const SplitSpec& split, const EvaluationOptions& options);

/// Seed of split i.
std::uint64_t split_seed(std::uint64_t master, std::size_t index);

struct MetricSummary {
  double median = 0.0;
  double q25 = 0.0;
  double q75 = 0.0;
};

struct PerformanceDistribution {
  std::vector<SplitResult> splits;  // by index, failures included
  std::size_t completed = 0;
  MetricSummary r2_baseline, r2_full, mae_baseline, mae_full;
  numerics::KruskalWallis kw_r2;
  numerics::KruskalWallis kw_mae;
};

/// Splits run in parallel; split i uses split_seed(master_seed, i) for both
/// the country draw and the models.
PerformanceDistribution evaluate_models(const Dataset& data, const pipeline::FeatureStore& store,
                                        const pipeline::PipelineConfig& config, const EvaluationOptions& options);

std::string evaluation_csv(const PerformanceDistribution& d);
std::string evaluation_summary_json(const PerformanceDistribution& d, const EvaluationOptions& options);

// --- external proxies --------------------------------------------------------

struct ProxyObservation {
  std::string location_id;
  int year = 0;
  double value = 0.0;
};

/// CSV with header location_id,year,value.
std::vector<ProxyObservation> load_proxies(const std::filesystem::path& path);
/// Reads an estimates file written by the pipeline.
std::vector<pipeline::EstimateRecord> load_estimates(const std::filesystem::path& path);

enum class Transform { none, log10 };
std::optional<Transform> parse_transform(std::string_view name);

struct ProxyCorrelation {
  double r = 0.0;
  std::size_t n = 0;
  std::optional<double> r_source;  // none below 3 matches
  std::size_t n_source = 0;
  std::optional<double> r_estimate;
  std::size_t n_estimate = 0;
};

/// Pearson r between the (transformed) estimate and the proxy over
/// location-years present in both. Throws ValidationError below 3 matches.
ProxyCorrelation proxy_correlation(const std::vector<pipeline::EstimateRecord>& estimates,
                                   const std::vector<ProxyObservation>& proxies, Transform transform = Transform::none);

std::string proxy_correlation_json(const ProxyCorrelation& c);

}  // namespace histgdp::evaluation
