#include "histgdp/periods.hpp"

#include <algorithm>
#include <array>
#include <string>

#include "histgdp/errors.hpp"

namespace histgdp {

namespace {
constexpr std::array<int, 15> kSnapshots = {1300, 1350, 1400, 1450, 1500, 1550, 1600, 1650,
                                            1700, 1750, 1800, 1850, 1900, 1950, 2000};
constexpr std::array<Period, kPeriodCount> kPeriods = {Period::late_middle_ages, Period::early_modern,
                                                       Period::age_of_revolutions, Period::machine_age,
                                                       Period::information_age};
constexpr std::array<std::string_view, kPeriodCount> kNames = {"late_middle_ages", "early_modern",
                                                               "age_of_revolutions", "machine_age",
                                                               "information_age"};
}  // namespace

std::span<const int> snapshot_years() { return kSnapshots; }

bool is_snapshot_year(int year) { return std::find(kSnapshots.begin(), kSnapshots.end(), year) != kSnapshots.end(); }

std::span<const Period> all_periods() { return kPeriods; }

std::string_view period_name(Period p) { return kNames[static_cast<int>(p)]; }

std::optional<Period> parse_period(std::string_view name) {
  for (int i = 0; i < kPeriodCount; ++i)
    if (kNames[i] == name) return kPeriods[i];
  return std::nullopt;
}

std::pair<int, int> period_bounds(Period p) {
  switch (p) {
    case Period::late_middle_ages: return {1300, 1500};
    case Period::early_modern: return {1501, 1750};
    case Period::age_of_revolutions: return {1751, 1850};
    case Period::machine_age: return {1851, 1950};
    case Period::information_age: return {2000, 2000};
  }
  return {0, 0};
}

std::vector<int> period_years(Period p) {
  const auto [lo, hi] = period_bounds(p);
  std::vector<int> out;
  for (int y : kSnapshots)
    if (y >= lo && y <= hi) out.push_back(y);
  return out;
}

Period period_of(int snapshot_year) {
  for (Period p : kPeriods) {
    const auto [lo, hi] = period_bounds(p);
    if (snapshot_year >= lo && snapshot_year <= hi && is_snapshot_year(snapshot_year)) return p;
  }
  throw ValidationError("year " + std::to_string(snapshot_year) + " is not a snapshot year");
}

std::optional<int> previous_period_end(Period p) {
  const int idx = static_cast<int>(p);
  if (idx == 0) return std::nullopt;
  return period_years(kPeriods[idx - 1]).back();
}

}  // namespace histgdp
