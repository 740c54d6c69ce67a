#pragma once

#include <array>
#include <compare>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "histgdp/data_ingest.hpp"
#include "histgdp/matrix.hpp"

namespace histgdp {

enum class Scale { log10p1, asinh };
std::string_view scale_name(Scale s);
std::optional<Scale> parse_scale(std::string_view name);

/// How avg_age is measured: completed lifespans of the deceased, or age at
/// the snapshot year (capped at death).
enum class AgeMode { lifespan, age_at_snapshot };
std::string_view age_mode_name(AgeMode m);
std::optional<AgeMode> parse_age_mode(std::string_view name);

struct RowKey {
  std::string location_id;
  int year = 0;

  auto operator<=>(const RowKey&) const = default;
};

/// Named feature columns for (location, year) rows.
struct FeatureMatrix {
  std::vector<RowKey> rows;
  std::vector<std::string> columns;
  Matrix values;
  Scale scale = Scale::log10p1;

  std::optional<std::size_t> column_index(std::string_view name) const;
  std::optional<std::size_t> row_index(const RowKey& key) const;
  FeatureMatrix select_rows(std::span<const std::size_t> indices) const;
  /// Throws ValidationError on duplicate names/keys, shape mismatch or
  /// non-finite values.
  void validate() const;
  std::string to_csv() const;
};

/// Row-wise concatenation; all inputs must share the column list.
FeatureMatrix vstack(std::span<const FeatureMatrix* const> parts);

// --- popularity -----------------------------------------------------------

struct HpiScore {
  double value = 0.0;
  bool clamped = false;  // an input was below its floor of 1
};

/// log10(V) + ln(L) + log4(A), minus (70 - A)/7 when A < 70.
HpiScore hpi(double pageviews, double language_editions, double age);
/// Age is reference_year - birth_year.
HpiScore hpi(const BiographyRecord& record, int reference_year = 2023);
/// Count weights max(HPI, 0) for every record.
std::vector<double> hpi_weights(const std::vector<BiographyRecord>& records, int reference_year = 2023);

// --- count tensor ----------------------------------------------------------

struct CountTensor {
  std::vector<std::string> locations;    // row labels
  std::vector<std::string> occupations;  // column labels
  std::array<Matrix, 4> weighted;        // HPI-weighted N_ik per flow
  std::array<Matrix, 4> people;          // unweighted N_ik per flow
  std::array<std::vector<std::size_t>, 4> totals;  // unweighted per location

  const Matrix& weighted_of(Flow f) const { return weighted[static_cast<int>(f)]; }
  const Matrix& people_of(Flow f) const { return people[static_cast<int>(f)]; }
  const std::vector<std::size_t>& totals_of(Flow f) const { return totals[static_cast<int>(f)]; }
};

/// Builds the location x occupation tensor for the given rows. `weights`
/// holds one count weight per record (see hpi_weights).
CountTensor flow_counts(const FlowAssignment& flows, const std::vector<BiographyRecord>& records,
                        std::span<const double> weights, std::span<const std::string> locations,
                        std::span<const std::string> occupations);

/// Number of occupations with at least one individual, per location.
std::vector<int> diversity(const CountTensor& counts, Flow flow);

struct FlaggedValues {
  std::vector<double> values;
  std::vector<bool> flagged;
};

/// Mean ubiquity of the occupations present in each location; 0 and flagged
/// for empty locations.
FlaggedValues avg_ubiquity(const CountTensor& counts, Flow flow);

struct RcaResult {
  Matrix m;                             // binary, kept rows x kept cols
  std::vector<std::size_t> kept_rows;   // indices into the input rows
  std::vector<std::size_t> kept_cols;
  std::vector<std::size_t> dropped_rows;
  std::vector<std::size_t> dropped_cols;
};

/// M_ik = 1 iff (N_ik / N_i.) / (N_.k / N_..) >= 1. All-zero rows and
/// columns are dropped first. Throws ValidationError for an all-zero input.
RcaResult rca_matrix(const Matrix& counts);
RcaResult rca_matrix(const CountTensor& counts, Flow flow);

struct EciResult {
  std::vector<double> eci;  // per row of M
  std::vector<double> pci;  // per column of M
  int iterations = 0;
  bool degenerate = false;
};

/// Fixed point of the location/occupation averaging map (z-scored each
/// round), i.e. the leading non-trivial eigenvector of D_c^-1 M D_u^-1 Mᵀ,
/// computed through an SVD of the symmetrized matrix. A multi-dimensional
/// leading eigenspace is resolved by projecting the diversity vector onto it.
/// Oriented so that ECI does not anti-correlate with diversity. Inputs whose
/// orientation cannot be fixed, 1 x k and i x 1 matrices, and all-tie
/// outcomes give zeros flagged degenerate. `max_iterations` caps the SVD
/// sweeps; eigenvalues closer than `tolerance` count as one eigenspace.
EciResult eci(const Matrix& m, int max_iterations = 1000, double tolerance = 1e-9);

struct SvdFactors {
  Matrix factors;  // locations x n_factors
  std::size_t available = 0;  // min(n_factors, rank)
  bool padded = false;        // fewer than n_factors were available
};

/// Leading left singular vectors of log10(1 + N) for one flow.
SvdFactors svd_factors(const CountTensor& counts, Flow flow, std::size_t n_factors = 5);

/// Mean age per location over the union of its flow sets. Locations without
/// a qualifying individual get the mean over all qualifying individuals of
/// the listed locations, flagged.
FlaggedValues avg_age(const FlowAssignment& flows, const std::vector<BiographyRecord>& records,
                      std::span<const std::string> locations, AgeMode mode = AgeMode::lifespan);

double linearize(double x, Scale scale);

// --- assembly --------------------------------------------------------------

struct FeatureConfig {
  int window_years = 150;
  Scale scale = Scale::log10p1;
  int reference_year = 2023;
  AgeMode age_mode = AgeMode::lifespan;
  std::size_t n_factors = 5;
};

/// Unweighted births and deaths of one location-year; gating and
/// population proxy.
struct PeopleCounts {
  std::size_t births = 0;
  std::size_t deaths = 0;
};

/// Everything computed from biographies for one snapshot year. Does not
/// depend on labels or models.
struct YearFeatures {
  int year = 0;
  FeatureMatrix matrix;  // biography features + dummies, no init_gdp
  std::map<std::string, PeopleCounts> people;
  std::size_t individuals = 0;
  std::vector<std::string> flags;
};

/// Occupations across all records, sorted.
std::vector<std::string> occupation_list(const std::vector<BiographyRecord>& records);

/// Computes biography features per level (countries and regions are
/// separate universes for RCA, ECI, ubiquity and SVD) and stacks the rows.
YearFeatures compute_year_features(int year, const std::vector<BiographyRecord>& records,
                                   std::span<const double> weights, const LocationTable& locations,
                                   std::span<const std::string> occupations, const FeatureConfig& config);

/// Level-scale GDP per capita keyed by (location, year).
using GdpTable = std::map<std::pair<std::string, int>, double>;

GdpTable gdp_table(const std::vector<GdpObservation>& observations);

enum class InitProvenance { none, source, model, country_source, country_model, supra_mean };
std::string_view provenance_name(InitProvenance p);

struct InitialGdp {
  double log10_value = 0.0;
  InitProvenance provenance = InitProvenance::none;
};

/// Previous-period GDP for a location: own source, own model estimate,
/// parent-country source then model, then the supranational mean of
/// country-level sources at the previous period's end year.
InitialGdp initial_gdp(std::string_view location, int year, const GdpTable& source, const GdpTable& model,
                       const LocationTable& locations);

struct AssembledFeatures {
  FeatureMatrix matrix;
  std::vector<InitProvenance> provenance;  // per row
};

/// Appends the init_gdp column to a year's biography features. The column
/// is omitted for years of the earliest period.
AssembledFeatures build_feature_matrix(const YearFeatures& year_features, const GdpTable& source,
                                       const GdpTable& model, const LocationTable& locations);

}  // namespace histgdp
