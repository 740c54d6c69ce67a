#pragma once

#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace histgdp {

/// Snapshot years 1300, 1350, ..., 1950, 2000.
std::span<const int> snapshot_years();
bool is_snapshot_year(int year);

enum class Period { late_middle_ages = 0, early_modern, age_of_revolutions, machine_age, information_age };

inline constexpr int kPeriodCount = 5;

std::span<const Period> all_periods();
std::string_view period_name(Period p);
std::optional<Period> parse_period(std::string_view name);
/// Inclusive calendar bounds, e.g. Early Modern = [1501, 1750].
std::pair<int, int> period_bounds(Period p);
/// Snapshot years that fall inside the period.
std::vector<int> period_years(Period p);
Period period_of(int snapshot_year);
/// Last snapshot year of the preceding period; none for the earliest.
std::optional<int> previous_period_end(Period p);

}  // namespace histgdp
