#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "adfdi/airmodel.hpp"

// Self-contained longitudinal scenario generator: smooth exogenous parameter
// trajectories, piecewise-linear wind with optional colored turbulence, RK4
// truth integration of the exact AOA dynamics, and triplex sensor sampling
// with additive bias/runaway faults.
namespace adfdi::sim {

uint64_t splitmix64(uint64_t x);

// Deterministic standard-normal stream (Box-Muller over mt19937_64).
// The engine's output sequence is standardized, so draws are bit-stable
// across platforms.
class GaussianStream {
 public:
  explicit GaussianStream(uint64_t seed) : eng_(seed) {}
  double next();

 private:
  double uniform01();
  std::mt19937_64 eng_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// One wind-axis building block. Ramp moves toward `target` at |accel| and
// derives its own duration; Hold keeps the current level; Constant jumps to
// `target` and holds (step gusts are allowed, the profile is continuous
// within each piece).
struct WindSegment {
  enum class Kind { Constant, Ramp, Hold };
  Kind kind = Kind::Hold;
  double target = 0.0;    // m/s
  double accel = 0.0;     // m/s^2, > 0 for Ramp
  double duration = 0.0;  // s, for Constant/Hold
};

struct AxisProfile {
  double initial = 0.0;
  std::vector<WindSegment> segments;

  double value_at(double t) const;
  double rate_at(double t) const;  // d/dt of the profile (0 inside holds)
};

struct TurbulenceSpec {
  bool enabled = false;
  double rms = 0.0;           // m/s, per axis
  double bandwidth_hz = 0.5;  // first-order cutoff
  uint64_t seed = 0;
};

struct WindProfile {
  AxisProfile wx, wz;
  TurbulenceSpec turbulence;
};

// First-order colored noise with stationary std ~ rms, sampled at ts.
std::vector<double> turbulence(uint64_t seed, double rms, double bandwidth_hz,
                               double ts, int n);

// Additive sensor fault on one physical channel. `value` is the bias in
// sensor units (rad or m/s) or the runaway rate (rad/s or m/s^2).
struct FaultSpec {
  enum class Sensor { Aoa, Vcas };
  enum class Kind { Bias, Runaway };
  Sensor sensor = Sensor::Vcas;
  int channel = 1;  // 1..3
  Kind kind = Kind::Bias;
  double start_s = 0.0;
  double value = 0.0;

  double signal_at(double t) const;
};

struct SensorNoiseSpec {
  double sigma_alpha = 0.0;  // rad
  double sigma_vz = 0.0;     // m/s
  double sigma_vc = 0.0;     // m/s
  uint64_t seed = 0;
};

// base + amplitude * sin(2*pi*t/period), with analytic rate.
struct SineSpec {
  double base = 0.0;
  double amplitude = 0.0;
  double period_s = 1.0;

  double at(double t) const;
  double rate(double t) const;
};

struct ScenarioConfig {
  double duration_s = 60.0;
  double ts = 0.04;
  double altitude = 1524.0;  // m, constant level flight
  SineSpec groundspeed{120.0, 0.0, 40.0};
  SineSpec pitch{0.03, 0.0, 25.0};
  double alpha_ref = 0.04;  // quasi-equilibrium AOA target
  WindProfile wind;
  SensorNoiseSpec noise;
  std::vector<FaultSpec> faults;
};

struct MeasurementBundle {
  std::array<double, 3> alpha{};  // rad
  double vz = 0.0;                // m/s
  std::array<double, 3> vcas{};   // m/s
};

struct ScenarioTrace {
  double ts = 0.04;
  std::vector<double> time;
  std::vector<air::ParamSample> params;       // what the estimator consumes
  std::vector<air::AugmentedState> truth;     // alpha + wind at sample times
  std::vector<Eigen::Vector3d> true_outputs;  // h(truth)
  std::vector<MeasurementBundle> meas;
  // Additive fault ground truth per physical sensor: [a1 a2 a3 vc1 vc2 vc3].
  std::vector<std::array<double, 6>> fault_truth;

  int samples() const { return static_cast<int>(time.size()); }
};

// Exogenous Theta at continuous time: analytic (V_g, theta) with derived
// q = theta_dot, n_x = V_g_dot, and n_z chosen so the exact dynamics hold a
// quasi-equilibrium at alpha_ref.
air::ParamSample theta_at(const ScenarioConfig& cfg, double t);

std::vector<air::ParamSample> generate_param_trace(const ScenarioConfig& cfg);

// RK4 at ts/4 on the exact AOA dynamics; wind = profile + piecewise-linear
// turbulence. Fills everything except measurements.
ScenarioTrace simulate_truth(const ScenarioConfig& cfg);

// Per-channel noise streams are fixed by (seed, channel index) and drawn
// independently of faults, so faulty = fault-free + fault signal exactly.
void sample_sensors(ScenarioTrace& trace, const SensorNoiseSpec& noise,
                    const std::vector<FaultSpec>& faults);

// simulate_truth + sample_sensors from one config.
ScenarioTrace run_scenario(const ScenarioConfig& cfg);

// True wind stays within the given magnitude bounds at every sample.
bool wind_within(const ScenarioTrace& trace, double wx_bound, double wz_bound);

// JSON I/O. Config files use kts/deg; everything in ScenarioConfig is SI.
ScenarioConfig load_scenario(const std::string& path);
ScenarioConfig parse_scenario(const std::string& json_text);

void write_csv(const ScenarioTrace& trace, const std::string& path);

}  // namespace adfdi::sim
