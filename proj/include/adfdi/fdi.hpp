#pragma once

#include <Eigen/Dense>
#include <array>
#include <deque>
#include <string>
#include <vector>

#include "adfdi/mhe.hpp"
#include "adfdi/simulator.hpp"

// Residual generation, sliding-window RMS evaluation, persistence-based
// detection/isolation with latching, and the closed estimation loop:
// fuse -> solve -> predict -> residuals -> detect -> shrink healthy sets.
namespace adfdi::fdi {

// Per-channel residuals against the shared one-step-ahead prediction.
// Residuals always use the original channel measurements, never the fused
// values.
struct ResidualRecord {
  int k = -1;
  std::array<double, 3> r_alpha{};  // rad
  std::array<double, 3> r_vc{};     // m/s
};

ResidualRecord residuals(int k, const sim::MeasurementBundle& bundle,
                         const Eigen::Vector3d& prediction);

// Sliding RMS over the most recent n_eval residuals; shorter during
// startup while the buffer fills.
class RmsWindow {
 public:
  explicit RmsWindow(int n_eval = 10);
  void push(double r);
  void clear() { buf_.clear(); }
  double rms() const;  // 0 while empty
  int size() const { return static_cast<int>(buf_.size()); }

 private:
  int n_eval_;
  std::deque<double> buf_;
};

struct Thresholds {
  double j_alpha = 0.0;  // rad
  double j_vc = 0.0;     // m/s
};

struct SensorState {
  bool healthy = true;
  int faulty_since = -1;  // sample index of the declaration
};

struct HealthReport {
  std::array<SensorState, 3> alpha;
  std::array<SensorState, 3> vc;

  std::array<bool, 3> healthy_alpha() const;
  std::array<bool, 3> healthy_vc() const;
  int n_alpha() const;
  int n_vc() const;
};

// Declares a sensor faulty when its J exceeded the threshold at least
// `hits` times within the last `window` live samples. Declarations latch.
// Detection is suppressed for the first `suppress` samples of a run.
// At most one channel per type is declared per update (the strongest
// exceeder); the remaining same-type channels' hit history is discarded
// because it was accumulated against a fusion that has just changed.
// Throws AllSensorsFaulty when a whole sensor type is exhausted.
class Detector {
 public:
  Detector(Thresholds th, int window = 10, int hits = 3, int suppress = 10);

  const HealthReport& update(int k, const std::array<double, 3>& j_alpha,
                             const std::array<double, 3>& j_vc);
  const HealthReport& health() const { return report_; }
  const Thresholds& thresholds() const { return th_; }

 private:
  Thresholds th_;
  int window_, hits_, suppress_;
  HealthReport report_;
  std::array<std::deque<bool>, 6> hit_log_;  // a1 a2 a3 vc1 vc2 vc3
};

struct FdiConfig {
  mhe::EstimatorConfig estimator;
  Thresholds thresholds;
  int n_eval = 10;
  int persistence_window = 10;
  int persistence_hits = 3;
  int suppress_samples = 10;
};

struct SampleLog {
  int k = 0;
  double t = 0.0;
  sim::MeasurementBundle meas;
  bool has_prediction = false;
  Eigen::Vector3d prediction = Eigen::Vector3d::Zero();
  ResidualRecord rec;
  std::array<double, 3> j_alpha{};
  std::array<double, 3> j_vc{};
  std::array<bool, 3> healthy_alpha{true, true, true};  // after detection
  std::array<bool, 3> healthy_vc{true, true, true};
  Eigen::Vector3d estimate = Eigen::Vector3d::Zero();  // filtered x
  int active_count = 0;
  int iterations = 0;
  double wall_ms = 0.0;
  double stat_norm = 0.0, eq_norm = 0.0, comp_norm = 0.0;
  bool converged = false;
};

struct FdiTrace {
  std::vector<SampleLog> samples;
  Thresholds thresholds;
  HealthReport final_health;
  std::array<int, 3> alpha_isolated_at{-1, -1, -1};  // sample index or -1
  std::array<int, 3> vc_isolated_at{-1, -1, -1};
  int false_alarms = 0;  // declarations on channels with no injected fault
  bool terminated_all_faulty = false;
  double ts = 0.04;
};

// Runs the two-step loop over a recorded scenario. Detection precedes the
// solve at each sample, so an isolation takes effect in the same sample's
// window re-fusion (and its R weights).
FdiTrace run_closed_loop(const sim::ScenarioTrace& scenario,
                         const FdiConfig& cfg);

// Max of J per sensor type over the live samples of fault-free runs,
// scaled by `factor`. Throws EmptyBank on an empty bank.
Thresholds calibrate_thresholds(const std::vector<sim::ScenarioTrace>& bank,
                                const FdiConfig& cfg, double factor = 1.0);

void write_fdi_csv(const FdiTrace& trace, const std::string& path);
std::string summary_json(const FdiTrace& trace);

}  // namespace adfdi::fdi
