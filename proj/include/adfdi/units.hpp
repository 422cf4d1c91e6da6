#pragma once

#include <numbers>

// All internal computation is SI (m, s, rad, kg). Knots and degrees are
// accepted or emitted only at configuration and reporting boundaries.

namespace adfdi {

inline constexpr double kKnot = 0.514444;  // m/s per knot

inline constexpr double knots_to_mps(double kts) { return kts * kKnot; }
inline constexpr double mps_to_knots(double mps) { return mps / kKnot; }

inline constexpr double deg_to_rad(double deg) {
  return deg * std::numbers::pi / 180.0;
}
inline constexpr double rad_to_deg(double rad) {
  return rad * 180.0 / std::numbers::pi;
}

}  // namespace adfdi
