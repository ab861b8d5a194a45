#pragma once

#include <cmath>
#include <cstdint>
#include <limits>

namespace rct {

// Pilot clock ticks: integer microseconds since pilot submission.
using Micros = std::int64_t;

inline constexpr Micros kMicrosPerSecond = 1'000'000;
inline constexpr Micros kNever = std::numeric_limits<Micros>::max();

inline Micros from_seconds(double s) {
  return static_cast<Micros>(std::llround(s * static_cast<double>(kMicrosPerSecond)));
}

inline double to_seconds(Micros us) {
  return static_cast<double>(us) / static_cast<double>(kMicrosPerSecond);
}

}  // namespace rct
