#include "adfdi/airmodel.hpp"

#include <cmath>

namespace adfdi::air {
namespace {

// Shared pieces of the true-airspeed expression at (alpha, wind, p).
struct TasTerms {
  double s, c;      // sin/cos of (alpha - theta)
  double cross;     // wind projection normal to the airspeed axis
  double along;     // wind projection along the airspeed axis
  double root;      // sqrt(vg^2 - cross^2)
  double vt;
};

TasTerms tas_terms(double alpha, const WindState& w, const ParamSample& p) {
  TasTerms t;
  t.s = std::sin(alpha - p.theta);
  t.c = std::cos(alpha - p.theta);
  t.cross = w.wx * t.s + w.wz * t.c;
  t.along = w.wx * t.c - w.wz * t.s;
  const double radicand = p.vg * p.vg - t.cross * t.cross;
  if (radicand < 0.0) {
    throw ComplexAirspeed("crosswind projection exceeds ground speed");
  }
  t.root = std::sqrt(radicand);
  t.vt = -t.along + t.root;
  return t;
}

struct IsaState {
  double temp;   // K at altitude
  double pbar;   // pressure ratio p/p0
  double a5;     // 5 * gamma * R * T
  double c0;     // sqrt(5 * gamma * R * T0)
};

IsaState isa_at(double z) {
  if (z < 0.0 || z > 11000.0) {
    throw AltitudeOutOfRange("altitude outside [0, 11000] m");
  }
  IsaState s;
  s.temp = Isa::kSeaLevelTempK + Isa::kLapseRateKpm * z;
  const double base = 1.0 + Isa::kLapseRateKpm * z / Isa::kSeaLevelTempK;
  const double expo =
      Isa::kGravity / (-Isa::kGasConstant * Isa::kLapseRateKpm);
  s.pbar = std::pow(base, expo);
  s.a5 = 5.0 * Isa::kHeatRatio * Isa::kGasConstant * s.temp;
  s.c0 = std::sqrt(5.0 * Isa::kHeatRatio * Isa::kGasConstant *
                   Isa::kSeaLevelTempK);
  return s;
}

double cas_from_tas(double vt, const IsaState& isa) {
  const double m = 1.0 + vt * vt / isa.a5;
  const double inner = (std::pow(m, 3.5) - 1.0) * isa.pbar + 1.0;
  return isa.c0 * std::sqrt(std::pow(inner, 1.0 / 3.5) - 1.0);
}

}  // namespace

double normal_specific_force(double alpha, const ParamSample& p) {
  return p.nz * std::cos(alpha) - p.nx * std::sin(alpha) +
         Isa::kGravity * std::cos(alpha - p.theta);
}

double aoa_rate_simplified(double alpha, const ParamSample& p,
                           double u_alpha) {
  if (p.vg <= kSpeedFloor) {
    throw DegenerateSpeed("ground speed at or below floor");
  }
  return normal_specific_force(alpha, p) / p.vg + p.q + u_alpha;
}

double aoa_rate_exact(double alpha, const ParamSample& p, const WindState& w,
                      const WindRate& wdot) {
  const double vt = true_airspeed(alpha, w, p);
  if (vt <= kSpeedFloor) {
    throw DegenerateSpeed("true airspeed at or below floor");
  }
  const double s = std::sin(alpha - p.theta);
  const double c = std::cos(alpha - p.theta);
  const double wind_force = wdot.wx_dot * s - wdot.wz_dot * c;
  return normal_specific_force(alpha, p) / vt + p.q + wind_force / vt;
}

double true_airspeed(double alpha, const WindState& w, const ParamSample& p) {
  return tas_terms(alpha, w, p).vt;
}

double vertical_speed(double alpha, const WindState& w, const ParamSample& p) {
  const TasTerms t = tas_terms(alpha, w, p);
  return -t.vt * t.s + w.wz;
}

double calibrated_airspeed(double alpha, const WindState& w,
                           const ParamSample& p) {
  const double vt = true_airspeed(alpha, w, p);
  if (vt < 0.0) {
    throw DegenerateSpeed("negative true airspeed");
  }
  return cas_from_tas(vt, isa_at(p.z));
}

Eigen::Vector3d outputs(const AugmentedState& x, const ParamSample& p) {
  return {x.alpha, vertical_speed(x.alpha, x.wind, p),
          calibrated_airspeed(x.alpha, x.wind, p)};
}

AugmentedState euler_step(const AugmentedState& x, const NoiseInput& u,
                          const ParamSample& p, double ts) {
  AugmentedState next;
  next.alpha = x.alpha + ts * aoa_rate_simplified(x.alpha, p, u.u_alpha);
  next.wind.wx = x.wind.wx + ts * u.u_dx;
  next.wind.wz = x.wind.wz + ts * u.u_dz;
  return next;
}

Jacobians jacobians(const AugmentedState& x, const ParamSample& p, double ts) {
  if (p.vg <= kSpeedFloor) {
    throw DegenerateSpeed("ground speed at or below floor");
  }
  const double a = x.alpha;
  const TasTerms t = tas_terms(a, x.wind, p);
  if (t.vt <= kSpeedFloor) {
    throw DegenerateSpeed("true airspeed at or below floor");
  }

  Jacobians j;
  // d(force)/dalpha for the simplified AOA equation.
  const double dforce = -p.nz * std::sin(a) - p.nx * std::cos(a) -
                        Isa::kGravity * std::sin(a - p.theta);
  j.step_x = Eigen::Matrix3d::Identity();
  j.step_x(0, 0) = 1.0 + ts * dforce / p.vg;
  j.step_u = ts * Eigen::Matrix3d::Identity();

  // True-airspeed partials.
  const double dcross_da = t.along;           // d(cross)/dalpha
  const double dvt_da = t.cross - t.cross * dcross_da / t.root;
  const double dvt_dwx = -t.c - t.cross * t.s / t.root;
  const double dvt_dwz = t.s - t.cross * t.c / t.root;

  // Vertical-speed partials: vz = -vt*s + wz.
  const double dvz_da = -dvt_da * t.s - t.vt * t.c;
  const double dvz_dwx = -dvt_dwx * t.s;
  const double dvz_dwz = -dvt_dwz * t.s + 1.0;

  // Calibrated-airspeed partials through the ISA conversion.
  const IsaState isa = isa_at(p.z);
  const double m = 1.0 + t.vt * t.vt / isa.a5;
  const double inner = (std::pow(m, 3.5) - 1.0) * isa.pbar + 1.0;
  const double rho = std::sqrt(std::pow(inner, 1.0 / 3.5) - 1.0);
  const double dvc_dvt = isa.c0 * std::pow(inner, 1.0 / 3.5 - 1.0) * isa.pbar *
                         std::pow(m, 2.5) * t.vt / (rho * isa.a5);

  j.output_x.setZero();
  j.output_x(0, 0) = 1.0;
  j.output_x(1, 0) = dvz_da;
  j.output_x(1, 1) = dvz_dwx;
  j.output_x(1, 2) = dvz_dwz;
  j.output_x(2, 0) = dvc_dvt * dvt_da;
  j.output_x(2, 1) = dvc_dvt * dvt_dwx;
  j.output_x(2, 2) = dvc_dvt * dvt_dwz;
  return j;
}

}  // namespace adfdi::air
