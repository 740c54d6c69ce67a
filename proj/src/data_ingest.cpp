#include "histgdp/data_ingest.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <set>
#include <sstream>

#include "histgdp/csv.hpp"
#include "histgdp/errors.hpp"
#include "histgdp/log.hpp"
#include "histgdp/periods.hpp"

namespace histgdp {

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::string fold(std::string_view s) {
  std::string out = trim(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::optional<long long> parse_int(std::string_view s) {
  const std::string t = trim(s);
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc{} || ptr != t.data() + t.size() || t.empty()) return std::nullopt;
  return v;
}

std::optional<double> parse_double(std::string_view s) {
  const std::string t = trim(s);
  double v = 0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc{} || ptr != t.data() + t.size() || t.empty()) return std::nullopt;
  return v;
}

std::optional<std::string> optional_field(const std::string& s) {
  std::string t = trim(s);
  if (t.empty()) return std::nullopt;
  return t;
}

std::vector<std::size_t> require_columns(const csv::Table& table, const std::filesystem::path& path,
                                         std::initializer_list<std::string_view> names) {
  if (table.header.empty()) throw ValidationError(path.string() + ":1: missing header");
  std::vector<std::size_t> idx;
  for (auto n : names) {
    auto c = table.column(n);
    if (!c) throw ValidationError(path.string() + ":1: missing column '" + std::string(n) + "'");
    idx.push_back(*c);
  }
  return idx;
}

std::string where(const std::filesystem::path& path, std::size_t line) {
  return path.string() + ":" + std::to_string(line);
}

}  // namespace

LocationTable::LocationTable(std::vector<Location> entries) : entries_(std::move(entries)) {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].id.empty()) throw ValidationError("location with empty id");
    if (!index_.emplace(entries_[i].id, i).second)
      throw ValidationError("duplicate location id '" + entries_[i].id + "'");
  }
  for (auto& e : entries_) {
    if (e.level == LocationLevel::country) {
      if (e.supranational_region.empty())
        throw ValidationError("country '" + e.id + "' has no supranational region");
      continue;
    }
    const Location* parent = find(e.parent_country);
    if (parent == nullptr || parent->level != LocationLevel::country)
      throw ValidationError("region '" + e.id + "' has no valid parent country '" + e.parent_country + "'");
  }
  for (auto& e : entries_)
    if (e.level == LocationLevel::region) e.supranational_region = at(e.parent_country).supranational_region;
  for (const auto& [id, _] : index_) ids_.push_back(id);
}

const Location* LocationTable::find(std::string_view id) const {
  auto it = index_.find(id);
  return it == index_.end() ? nullptr : &entries_[it->second];
}

const Location& LocationTable::at(std::string_view id) const {
  const Location* loc = find(id);
  if (loc == nullptr) throw ValidationError("unknown location '" + std::string(id) + "'");
  return *loc;
}

const std::string& LocationTable::country_of(std::string_view id) const {
  const Location& loc = at(id);
  return loc.level == LocationLevel::country ? loc.id : loc.parent_country;
}

const std::string& LocationTable::supranational_of(std::string_view id) const {
  return at(id).supranational_region;
}

std::vector<std::string> LocationTable::ids_at(LocationLevel level) const {
  std::vector<std::string> out;
  for (const auto& id : ids_)
    if (at(id).level == level) out.push_back(id);
  return out;
}

std::vector<std::string> LocationTable::regions_of(std::string_view country) const {
  std::vector<std::string> out;
  for (const auto& id : ids_) {
    const Location& loc = at(id);
    if (loc.level == LocationLevel::region && loc.parent_country == country) out.push_back(id);
  }
  return out;
}

std::vector<std::string> LocationTable::supranational_regions() const {
  std::set<std::string> s;
  for (const auto& e : entries_) s.insert(e.supranational_region);
  return {s.begin(), s.end()};
}

Loaded<BiographyRecord> load_biographies(const std::filesystem::path& path) {
  const auto table = csv::read(path);
  const auto col = require_columns(table, path,
                                   {"person_id", "name", "birth_year", "death_year", "birth_location_id",
                                    "death_location_id", "occupation", "pageviews", "language_editions"});
  Loaded<BiographyRecord> out;
  out.rows_read = table.rows.size();
  if (table.rows.empty()) log::warn(path.string() + ": no biography rows");
  std::set<std::string> seen;
  const std::string file = path.string();
  for (const auto& row : table.rows) {
    auto reject = [&](std::string reason) { out.rejects.push_back({file, row.line, std::move(reason)}); };
    if (row.fields.size() != table.header.size()) {
      reject("expected " + std::to_string(table.header.size()) + " fields, found " +
             std::to_string(row.fields.size()));
      continue;
    }
    const auto& f = row.fields;
    BiographyRecord rec;
    rec.person_id = trim(f[col[0]]);
    rec.name = f[col[1]];
    const auto birth = parse_int(f[col[2]]);
    if (!birth) throw ValidationError(where(path, row.line) + ": unparseable birth_year '" + f[col[2]] + "'");
    rec.birth_year = static_cast<int>(*birth);
    if (!trim(f[col[3]]).empty()) {
      const auto death = parse_int(f[col[3]]);
      if (!death) throw ValidationError(where(path, row.line) + ": unparseable death_year '" + f[col[3]] + "'");
      rec.death_year = static_cast<int>(*death);
    }
    rec.birth_location = optional_field(f[col[4]]);
    rec.death_location = optional_field(f[col[5]]);
    rec.occupation = fold(f[col[6]]);
    const auto views = parse_double(f[col[7]]);
    const auto editions = parse_double(f[col[8]]);

    if (rec.person_id.empty()) {
      reject("empty person_id");
      continue;
    }
    if (!views || *views < 0.0) {
      reject("invalid pageviews '" + f[col[7]] + "'");
      continue;
    }
    if (!editions || *editions < 1.0) {
      reject("invalid language_editions '" + f[col[8]] + "'");
      continue;
    }
    if (rec.death_year && *rec.death_year < rec.birth_year) {
      reject("negative lifespan");
      continue;
    }
    if (!seen.insert(rec.person_id).second) {
      reject("duplicate person_id '" + rec.person_id + "'");
      continue;
    }
    rec.pageviews = *views;
    rec.language_editions = *editions;
    out.items.push_back(std::move(rec));
  }
  return out;
}

LocationTable load_locations(const std::filesystem::path& path) {
  const auto table = csv::read(path);
  const auto col =
      require_columns(table, path, {"location_id", "name", "level", "parent_country_id", "supranational_region"});
  std::vector<Location> entries;
  for (const auto& row : table.rows) {
    if (row.fields.size() != table.header.size())
      throw ValidationError(where(path, row.line) + ": wrong number of fields");
    const auto& f = row.fields;
    Location loc;
    loc.id = trim(f[col[0]]);
    loc.name = f[col[1]];
    const std::string level = fold(f[col[2]]);
    if (level == "country") {
      loc.level = LocationLevel::country;
    } else if (level == "region") {
      loc.level = LocationLevel::region;
    } else {
      throw ValidationError(where(path, row.line) + ": level must be 'country' or 'region', got '" + f[col[2]] + "'");
    }
    loc.parent_country = trim(f[col[3]]);
    loc.supranational_region = trim(f[col[4]]);
    entries.push_back(std::move(loc));
  }
  try {
    return LocationTable(std::move(entries));
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

Loaded<GdpObservation> load_gdp(const std::filesystem::path& path, const LocationTable& locations) {
  const auto table = csv::read(path);
  const auto col = require_columns(table, path, {"location_id", "year", "gdp_pc_2011usd", "source"});
  Loaded<GdpObservation> out;
  out.rows_read = table.rows.size();
  std::set<std::pair<std::string, int>> seen;
  const std::string file = path.string();
  for (const auto& row : table.rows) {
    auto reject = [&](std::string reason) { out.rejects.push_back({file, row.line, std::move(reason)}); };
    if (row.fields.size() != table.header.size()) {
      reject("wrong number of fields");
      continue;
    }
    const auto& f = row.fields;
    GdpObservation obs;
    obs.location_id = trim(f[col[0]]);
    const auto year = parse_int(f[col[1]]);
    if (!year) throw ValidationError(where(path, row.line) + ": unparseable year '" + f[col[1]] + "'");
    const auto value = parse_double(f[col[2]]);
    if (!value) throw ValidationError(where(path, row.line) + ": unparseable gdp_pc_2011usd '" + f[col[2]] + "'");
    obs.year = static_cast<int>(*year);
    obs.gdp_pc = *value;
    obs.source = f[col[3]];
    if (!is_snapshot_year(obs.year)) {
      reject("year " + std::to_string(obs.year) + " is not on the 50-year grid");
      continue;
    }
    if (!(obs.gdp_pc > 0.0)) {
      reject("non-positive gdp_pc");
      continue;
    }
    if (!locations.contains(obs.location_id)) {
      reject("unknown location '" + obs.location_id + "'");
      continue;
    }
    if (!seen.emplace(obs.location_id, obs.year).second) {
      reject("duplicate observation for " + obs.location_id + " " + std::to_string(obs.year));
      continue;
    }
    out.items.push_back(std::move(obs));
  }
  return out;
}

std::vector<BiographyRecord> filter_eligible(const std::vector<BiographyRecord>& records,
                                             const LocationTable& locations, int min_birth_year) {
  std::vector<BiographyRecord> out;
  for (const auto& r : records) {
    if (r.language_editions < 2.0) continue;
    if (r.occupation.empty()) continue;
    if (r.birth_year < min_birth_year) continue;
    const bool birth_known = r.birth_location && locations.contains(*r.birth_location);
    const bool death_known = r.death_location && locations.contains(*r.death_location);
    if (!birth_known && !death_known) continue;
    out.push_back(r);
  }
  return out;
}

std::string_view flow_name(Flow f) {
  switch (f) {
    case Flow::births: return "births";
    case Flow::deaths: return "deaths";
    case Flow::immigrants: return "immigrants";
    case Flow::emigrants: return "emigrants";
  }
  return "";
}

const FlowSets& FlowAssignment::at(std::string_view location) const {
  auto it = by_location.find(std::string(location));
  if (it == by_location.end()) throw ValidationError("no flows for location '" + std::string(location) + "'");
  return it->second;
}

FlowAssignment assign_flows(const std::vector<BiographyRecord>& records, const LocationTable& locations,
                            int snapshot_year, int window_years) {
  if (window_years <= 0) throw ValidationError("window_years must be positive");
  FlowAssignment out;
  out.snapshot_year = snapshot_year;
  out.window_years = window_years;
  for (const auto& id : locations.ids()) out.by_location[id];

  // Direct placement: every location id is a distinct place.
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.birth_year < snapshot_year - window_years || r.birth_year > snapshot_year) continue;
    const std::string* birth =
        r.birth_location && locations.contains(*r.birth_location) ? &*r.birth_location : nullptr;
    const std::string* death =
        r.death_location && locations.contains(*r.death_location) ? &*r.death_location : nullptr;
    if (birth) out.by_location[*birth][Flow::births].push_back(i);
    if (death) out.by_location[*death][Flow::deaths].push_back(i);
    if (birth && death && *birth != *death) {
      out.by_location[*birth][Flow::emigrants].push_back(i);
      out.by_location[*death][Flow::immigrants].push_back(i);
    }
  }

  // Roll regions up into their countries.
  for (const auto& id : locations.ids_at(LocationLevel::region)) {
    const FlowSets region = out.by_location[id];
    FlowSets& country = out.by_location[locations.at(id).parent_country];
    for (Flow f : kFlows) country[f].insert(country[f].end(), region[f].begin(), region[f].end());
  }
  for (auto& [_, sets] : out.by_location) {
    for (auto& m : sets.members) {
      std::sort(m.begin(), m.end());
      m.erase(std::unique(m.begin(), m.end()), m.end());
    }
  }
  return out;
}

Dataset load_dataset(const std::filesystem::path& biographies, const std::filesystem::path& locations,
                     const std::filesystem::path& gdp, int min_birth_year) {
  Dataset ds;
  ds.locations = load_locations(locations);
  auto bio = load_biographies(biographies);
  auto labels = load_gdp(gdp, ds.locations);
  ds.biography_rows = bio.rows_read;
  ds.gdp_rows = labels.rows_read;
  ds.biography_rejects = bio.rejects.size();
  ds.gdp_rejects = labels.rejects.size();
  ds.biography_path = biographies.string();
  ds.gdp_path = gdp.string();
  ds.rejects = bio.rejects;
  ds.rejects.insert(ds.rejects.end(), labels.rejects.begin(), labels.rejects.end());
  ds.records = filter_eligible(bio.items, ds.locations, min_birth_year);
  ds.ineligible = bio.items.size() - ds.records.size();
  ds.gdp = std::move(labels.items);
  return ds;
}

void check_reject_ceiling(const Dataset& ds, double max_reject_fraction) {
  auto check = [&](std::size_t rejected, std::size_t rows, const std::string& path) {
    if (rows == 0) return;
    const double frac = static_cast<double>(rejected) / static_cast<double>(rows);
    if (frac > max_reject_fraction) {
      std::ostringstream msg;
      msg << path << ": " << rejected << " of " << rows << " rows rejected, above the allowed fraction "
          << max_reject_fraction;
      throw ValidationError(msg.str());
    }
  };
  check(ds.biography_rejects, ds.biography_rows, ds.biography_path);
  check(ds.gdp_rejects, ds.gdp_rows, ds.gdp_path);
}

std::string rejects_csv(const std::vector<RejectedRow>& rejects) {
  std::string out = "file,line,reason\n";
  for (const auto& r : rejects) out += csv::join({r.file, std::to_string(r.line), r.reason}) + "\n";
  return out;
}

}  // namespace histgdp
