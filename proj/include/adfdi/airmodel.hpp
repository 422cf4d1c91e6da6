#pragma once

#include <Eigen/Dense>

#include "adfdi/errors.hpp"

// Longitudinal air-data model: angle-of-attack dynamics driven by measured
// load factors and pitch, a random-walk wind model, and the output map from
// the augmented state [alpha, Wx, Wz] to the monitored air-data quantities
// (AOA, inertial vertical speed, calibrated airspeed).

namespace adfdi::air {

/// International Standard Atmosphere constants (troposphere segment).
struct Isa {
  static constexpr double kSeaLevelTempK = 288.15;
  static constexpr double kLapseRateKpm = -6.5e-3;
  static constexpr double kGasConstant = 287.05287;  // J/(kg K)
  static constexpr double kHeatRatio = 1.4;
  static constexpr double kGravity = 9.80665;  // m/s^2 (standard gravity)
};

/// Floor below which speeds may not be used as divisors.
inline constexpr double kSpeedFloor = 1.0;  // m/s

/// Known per-sample flight parameters: ground speed, pitch, pitch rate,
/// longitudinal/normal load factors (stored in m/s^2), and altitude.
struct ParamSample {
  double vg = 0.0;     // ground speed magnitude, m/s
  double theta = 0.0;  // pitch angle, rad
  double q = 0.0;      // pitch rate, rad/s
  double nx = 0.0;     // longitudinal specific force, m/s^2
  double nz = 0.0;     // normal specific force, m/s^2
  double z = 0.0;      // altitude, m
};

/// Horizontal/vertical wind speed, m/s.
struct WindState {
  double wx = 0.0;
  double wz = 0.0;
};

/// Wind acceleration, m/s^2.
struct WindRate {
  double wx_dot = 0.0;
  double wz_dot = 0.0;
};

/// Estimator state: angle of attack augmented with the wind components.
struct AugmentedState {
  double alpha = 0.0;  // rad, |alpha| < pi/2
  WindState wind;

  Eigen::Vector3d vec() const { return {alpha, wind.wx, wind.wz}; }
  static AugmentedState from_vec(const Eigen::Vector3d& v) {
    return {v[0], {v[1], v[2]}};
  }
};

/// Process noise acting on the AOA equation and the wind random walk.
struct NoiseInput {
  double u_alpha = 0.0;  // rad/s
  double u_dx = 0.0;     // m/s^2
  double u_dz = 0.0;     // m/s^2

  Eigen::Vector3d vec() const { return {u_alpha, u_dx, u_dz}; }
  static NoiseInput from_vec(const Eigen::Vector3d& v) {
    return {v[0], v[1], v[2]};
  }
};

/// Specific-force combination driving the AOA rate:
/// nz cos(a) - nx sin(a) + g cos(a - theta).
double normal_specific_force(double alpha, const ParamSample& p);

/// Simplified AOA rate used by the estimator; divides by ground speed.
/// Throws DegenerateSpeed when vg <= kSpeedFloor.
double aoa_rate_simplified(double alpha, const ParamSample& p, double u_alpha);

/// Exact AOA rate including the wind-acceleration coupling; divides by the
/// true airspeed implied by (alpha, wind, p).
double aoa_rate_exact(double alpha, const ParamSample& p, const WindState& w,
                      const WindRate& wdot);

/// True airspeed recovered from ground speed and wind.
/// Throws ComplexAirspeed when the crosswind projection exceeds vg.
double true_airspeed(double alpha, const WindState& w, const ParamSample& p);

/// Inertial vertical speed (positive up convention of the output map).
double vertical_speed(double alpha, const WindState& w, const ParamSample& p);

/// Calibrated airspeed via the ISA troposphere pressure model.
/// Throws AltitudeOutOfRange outside [0, 11 km].
double calibrated_airspeed(double alpha, const WindState& w,
                           const ParamSample& p);

/// Output map h(x, p) = [alpha, vertical_speed, calibrated_airspeed].
Eigen::Vector3d outputs(const AugmentedState& x, const ParamSample& p);

/// Explicit Euler step of the estimator model over ts seconds.
AugmentedState euler_step(const AugmentedState& x, const NoiseInput& u,
                          const ParamSample& p, double ts);

/// Analytic Jacobians of the Euler step and the output map at x.
struct Jacobians {
  Eigen::Matrix3d step_x;   // d(euler_step)/dx
  Eigen::Matrix3d step_u;   // d(euler_step)/du = ts * I
  Eigen::Matrix3d output_x; // dh/dx
};
Jacobians jacobians(const AugmentedState& x, const ParamSample& p, double ts);

}  // namespace adfdi::air
