#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace histgdp {

struct BiographyRecord {
  std::string person_id;
  std::string name;
  int birth_year = 0;
  std::optional<int> death_year;
  std::optional<std::string> birth_location;
  std::optional<std::string> death_location;
  std::string occupation;  // case-folded and trimmed
  double pageviews = 0.0;
  double language_editions = 0.0;
};

enum class LocationLevel { country, region };

struct Location {
  std::string id;
  std::string name;
  LocationLevel level = LocationLevel::country;
  std::string parent_country;       // regions only
  std::string supranational_region;  // regions inherit from their country
};

/// Country/region hierarchy. Construction validates uniqueness, that every
/// region points at an existing country, and that every country carries a
/// supranational region.
class LocationTable {
 public:
  LocationTable() = default;
  explicit LocationTable(std::vector<Location> entries);

  const Location* find(std::string_view id) const;
  bool contains(std::string_view id) const { return find(id) != nullptr; }
  const Location& at(std::string_view id) const;

  /// The location itself for countries, the parent for regions.
  const std::string& country_of(std::string_view id) const;
  const std::string& supranational_of(std::string_view id) const;

  /// Ids sorted ascending.
  const std::vector<std::string>& ids() const { return ids_; }
  std::vector<std::string> ids_at(LocationLevel level) const;
  std::vector<std::string> regions_of(std::string_view country) const;
  /// Distinct supranational regions, sorted.
  std::vector<std::string> supranational_regions() const;
  std::size_t size() const { return entries_.size(); }

 private:
  std::vector<Location> entries_;
  std::map<std::string, std::size_t, std::less<>> index_;
  std::vector<std::string> ids_;
};

struct GdpObservation {
  std::string location_id;
  int year = 0;
  double gdp_pc = 0.0;  // 2011 USD PPP
  std::string source;
};

struct RejectedRow {
  std::string file;
  std::size_t line = 0;
  std::string reason;
};

template <typename T>
struct Loaded {
  std::vector<T> items;
  std::vector<RejectedRow> rejects;
  std::size_t rows_read = 0;
};

/// Biographies; malformed rows are rejected with line numbers. Missing file
/// throws IoError; missing columns or unparseable years throw
/// ValidationError with path and line.
Loaded<BiographyRecord> load_biographies(const std::filesystem::path& path);
LocationTable load_locations(const std::filesystem::path& path);
/// GDP labels; off-grid years, non-positive values, unknown locations and
/// duplicates are rejected.
Loaded<GdpObservation> load_gdp(const std::filesystem::path& path, const LocationTable& locations);

/// Keeps records with at least two language editions, an occupation, a
/// birth year >= min_birth_year, and a birth or death place in the table.
std::vector<BiographyRecord> filter_eligible(const std::vector<BiographyRecord>& records,
                                             const LocationTable& locations, int min_birth_year = 1100);

enum class Flow { births = 0, deaths = 1, immigrants = 2, emigrants = 3 };
inline constexpr std::array<Flow, 4> kFlows = {Flow::births, Flow::deaths, Flow::immigrants, Flow::emigrants};
std::string_view flow_name(Flow f);

/// Members of the four flows of one location, as sorted indices into the
/// record vector passed to assign_flows.
struct FlowSets {
  std::array<std::vector<std::size_t>, 4> members;

  const std::vector<std::size_t>& operator[](Flow f) const { return members[static_cast<int>(f)]; }
  std::vector<std::size_t>& operator[](Flow f) { return members[static_cast<int>(f)]; }
};

struct FlowAssignment {
  int snapshot_year = 0;
  int window_years = 0;
  /// Every location of the table has an entry (possibly empty). Country
  /// entries are the union of their regions' sets plus records placed
  /// directly at country level.
  std::map<std::string, FlowSets> by_location;

  const FlowSets& at(std::string_view location) const;
};

/// Assigns individuals born in [snapshot_year - window_years, snapshot_year]
/// to birth, death, immigration (died here, born elsewhere) and emigration
/// (born here, died elsewhere) sets.
FlowAssignment assign_flows(const std::vector<BiographyRecord>& records, const LocationTable& locations,
                            int snapshot_year, int window_years = 150);

/// Inputs after loading and filtering.
struct Dataset {
  std::vector<BiographyRecord> records;  // eligible only
  LocationTable locations;
  std::vector<GdpObservation> gdp;
  std::vector<RejectedRow> rejects;
  std::size_t biography_rows = 0;
  std::size_t gdp_rows = 0;
  std::size_t biography_rejects = 0;
  std::size_t gdp_rejects = 0;
  std::size_t ineligible = 0;
  std::string biography_path;
  std::string gdp_path;
};

/// Loads all three files and filters biographies. Rejected rows are kept in
/// the result; see check_reject_ceiling.
Dataset load_dataset(const std::filesystem::path& biographies, const std::filesystem::path& locations,
                     const std::filesystem::path& gdp, int min_birth_year = 1100);

/// Throws ValidationError when either file rejected more than the allowed
/// fraction of its rows.
void check_reject_ceiling(const Dataset& ds, double max_reject_fraction = 0.10);

std::string rejects_csv(const std::vector<RejectedRow>& rejects);

}  // namespace histgdp
