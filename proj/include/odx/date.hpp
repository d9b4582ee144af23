#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <string_view>

namespace odx {

/// Calendar day. All event dates in the pipeline use this resolution.
using Date = std::chrono::sys_days;

/// Parses a strict ISO-8601 calendar date (YYYY-MM-DD). Returns nullopt for
/// anything else, including impossible dates such as 2022-02-30.
std::optional<Date> try_parse_date(std::string_view text);

/// Like try_parse_date but throws ValidationError.
Date parse_date(std::string_view text);

std::string format_date(Date d);

/// Signed whole days from `from` to `to`.
inline long days_between(Date from, Date to) { return static_cast<long>((to - from).count()); }

inline Date add_days(Date d, long days) { return d + std::chrono::days{days}; }

}  // namespace odx
