#pragma once

#include <cstdint>
#include <string>

namespace ufi {

/// Parses "YYYY-MM-DDTHH:MM:SS" (optional trailing 'Z') into unix seconds.
/// Throws std::invalid_argument on malformed input.
int64_t parse_iso8601(const std::string& text);

std::string format_iso8601(int64_t unix_seconds);

/// Day of week with 0 = Monday ... 6 = Sunday.
int day_of_week(int64_t unix_seconds);

int hour_of_day(int64_t unix_seconds);

}  // namespace ufi
