#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "adfdi/errors.hpp"
#include "adfdi/fdi.hpp"
#include "adfdi/simulator.hpp"
#include "adfdi/units.hpp"

using namespace adfdi;
using namespace adfdi::fdi;

namespace {

sim::ScenarioConfig windy_scenario(double duration, uint64_t seed) {
  sim::ScenarioConfig cfg;
  cfg.duration_s = duration;
  cfg.groundspeed = {120.0, 3.0, 40.0};
  cfg.pitch = {0.03, 0.008, 25.0};
  cfg.alpha_ref = 0.04;
  cfg.wind.wx.segments = {
      {sim::WindSegment::Kind::Hold, 0.0, 0.0, 1.0},
      {sim::WindSegment::Kind::Ramp, knots_to_mps(8.0), knots_to_mps(4.0),
       0.0}};
  cfg.wind.wz.segments = {
      {sim::WindSegment::Kind::Hold, 0.0, 0.0, 2.0},
      {sim::WindSegment::Kind::Ramp, knots_to_mps(-4.0), knots_to_mps(4.0),
       0.0}};
  cfg.wind.turbulence = {true, knots_to_mps(0.5), 0.5, 99};
  cfg.noise = {deg_to_rad(0.05), knots_to_mps(0.3), knots_to_mps(0.3), seed};
  return cfg;
}

// Worst-case in-bound wind (largest speed, fastest acceleration) drives the
// calibration so that healthy-channel transients during fault absorption
// stay below threshold.
Thresholds worst_case_thresholds(const FdiConfig& fcfg) {
  sim::ScenarioConfig c;
  c.duration_s = 12.0;
  c.groundspeed = {120.0, 3.0, 40.0};
  c.pitch = {0.03, 0.008, 25.0};
  c.alpha_ref = 0.04;
  c.wind.wx.segments = {
      {sim::WindSegment::Kind::Hold, 0.0, 0.0, 1.0},
      {sim::WindSegment::Kind::Ramp, knots_to_mps(20.0), knots_to_mps(10.0),
       0.0}};
  c.wind.wz.segments = {
      {sim::WindSegment::Kind::Hold, 0.0, 0.0, 2.0},
      {sim::WindSegment::Kind::Ramp, knots_to_mps(-8.0), knots_to_mps(8.0),
       0.0}};
  c.wind.turbulence = {true, knots_to_mps(1.0), 0.5, 77};
  c.noise = {deg_to_rad(0.05), knots_to_mps(0.3), knots_to_mps(0.3), 57};
  return calibrate_thresholds({sim::run_scenario(c)}, fcfg);
}

}  // namespace

TEST_CASE("residuals are per-channel differences against the prediction") {
  sim::MeasurementBundle b;
  b.alpha = {0.040, 0.041, 0.039};
  b.vz = -2.0;
  b.vcas = {104.0, 103.5, 104.5};
  const Eigen::Vector3d pred(0.040, -2.0, 104.0);

  SUBCASE("measurement equal to prediction gives zero") {
    sim::MeasurementBundle eq;
    eq.alpha = {0.04, 0.04, 0.04};
    eq.vcas = {104.0, 104.0, 104.0};
    const ResidualRecord r = residuals(7, eq, Eigen::Vector3d(0.04, 0, 104.0));
    CHECK(r.k == 7);
    for (int i = 0; i < 3; ++i) {
      CHECK(r.r_alpha[i] == 0.0);
      CHECK(r.r_vc[i] == 0.0);
    }
  }
  SUBCASE("bias on one channel shows up only there") {
    sim::MeasurementBundle one;
    one.alpha = {0.04, 0.04 + 0.002, 0.04};
    one.vcas = {104.0, 104.0, 104.0};
    const ResidualRecord r =
        residuals(0, one, Eigen::Vector3d(0.04, 0, 104.0));
    CHECK(r.r_alpha[0] == 0.0);
    CHECK(r.r_alpha[1] == doctest::Approx(0.002).epsilon(1e-12));
    CHECK(r.r_alpha[2] == 0.0);
  }
  SUBCASE("generic values") {
    const ResidualRecord r = residuals(3, b, pred);
    CHECK(r.r_alpha[1] == doctest::Approx(0.001).epsilon(1e-12));
    CHECK(r.r_alpha[2] == doctest::Approx(-0.001).epsilon(1e-12));
    CHECK(r.r_vc[0] == 0.0);
    CHECK(r.r_vc[1] == doctest::Approx(-0.5).epsilon(1e-12));
    CHECK(r.r_vc[2] == doctest::Approx(0.5).epsilon(1e-12));
  }
}

TEST_CASE("RMS window arithmetic") {
  SUBCASE("constant residual gives its magnitude") {
    RmsWindow w(10);
    for (int i = 0; i < 10; ++i) w.push(-0.7);
    CHECK(w.rms() == doctest::Approx(0.7).epsilon(1e-15));
  }
  SUBCASE("hand value for {3,4} at N_eval=2") {
    RmsWindow w(2);
    w.push(3.0);
    w.push(4.0);
    CHECK(w.rms() == doctest::Approx(std::sqrt(12.5)).epsilon(1e-15));
  }
  SUBCASE("startup uses the partial window") {
    RmsWindow w(10);
    w.push(2.0);
    CHECK(w.rms() == 2.0);
    w.push(0.0);
    CHECK(w.rms() == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));
  }
  SUBCASE("only the last N_eval residuals count") {
    RmsWindow w(10);
    for (int i = 0; i < 5; ++i) w.push(100.0);  // must roll out
    double manual = 0.0;
    for (int i = 0; i < 10; ++i) {
      const double r = 0.1 * (i + 1);
      w.push(r);
      manual += r * r;
    }
    CHECK(w.size() == 10);
    CHECK(w.rms() == doctest::Approx(std::sqrt(manual / 10)).epsilon(1e-15));
  }
  SUBCASE("validation") {
    CHECK_THROWS_AS(RmsWindow(0), ConfigError);
    RmsWindow w(3);
    CHECK_THROWS_AS(w.push(std::nan("")), ConfigError);
  }
}

TEST_CASE("persistence detector") {
  const Thresholds th{0.01, 1.0};
  const std::array<double, 3> quiet_a{0.001, 0.001, 0.001};
  const std::array<double, 3> quiet_v{0.1, 0.1, 0.1};

  SUBCASE("below threshold stays healthy forever") {
    Detector d(th, 10, 3, 0);
    for (int k = 0; k < 200; ++k) d.update(k, quiet_a, quiet_v);
    CHECK(d.health().n_alpha() == 3);
    CHECK(d.health().n_vc() == 3);
  }
  SUBCASE("exactly three hits in ten trip the rule; two do not") {
    Detector d(th, 10, 3, 0);
    std::array<double, 3> v = quiet_v;
    int k = 0;
    for (; k < 20; ++k) d.update(k, quiet_a, quiet_v);
    v[1] = 2.0;  // hit
    d.update(k++, quiet_a, v);
    d.update(k++, quiet_a, quiet_v);
    d.update(k++, quiet_a, v);  // second hit
    CHECK(d.health().vc[1].healthy);
    for (int j = 0; j < 8; ++j) d.update(k++, quiet_a, quiet_v);
    // the earlier hits expire one by one; fresh ones must re-accumulate
    d.update(k++, quiet_a, v);
    CHECK(d.health().vc[1].healthy);  // hits at 22 and 31: two in window
    d.update(k++, quiet_a, v);
    CHECK(d.health().vc[1].healthy);  // 22 expired; 31, 32: still two
    d.update(k++, quiet_a, v);
    CHECK_FALSE(d.health().vc[1].healthy);  // 31, 32, 33
    CHECK(d.health().vc[1].faulty_since == k - 1);
    CHECK(d.health().vc[0].healthy);
    CHECK(d.health().vc[2].healthy);
  }
  SUBCASE("declaration latches") {
    Detector d(th, 10, 3, 0);
    std::array<double, 3> a = quiet_a;
    a[0] = 1.0;
    for (int k = 0; k < 3; ++k) d.update(k, a, quiet_v);
    CHECK_FALSE(d.health().alpha[0].healthy);
    const int since = d.health().alpha[0].faulty_since;
    for (int k = 3; k < 100; ++k) d.update(k, quiet_a, quiet_v);
    CHECK_FALSE(d.health().alpha[0].healthy);
    CHECK(d.health().alpha[0].faulty_since == since);
  }
  SUBCASE("suppression window ignores early exceedances") {
    Detector d(th, 10, 3, 10);
    std::array<double, 3> a = quiet_a;
    a[2] = 5.0;
    for (int k = 0; k < 10; ++k) d.update(k, a, quiet_v);
    CHECK(d.health().alpha[2].healthy);  // all suppressed
    d.update(10, a, quiet_v);
    d.update(11, a, quiet_v);
    CHECK(d.health().alpha[2].healthy);  // two live hits
    d.update(12, a, quiet_v);
    CHECK_FALSE(d.health().alpha[2].healthy);
    CHECK(d.health().alpha[2].faulty_since == 12);
  }
  SUBCASE("simultaneous exceedances isolate one channel per update") {
    Detector d(th, 10, 1, 0);
    std::array<double, 3> v{2.0, 3.0, 0.1};
    d.update(0, quiet_a, v);
    CHECK(d.health().n_vc() == 2);  // strongest exceeder goes first
    CHECK_FALSE(d.health().vc[1].healthy);
    d.update(1, quiet_a, v);
    CHECK(d.health().n_vc() == 1);  // the other re-accumulates and follows
    CHECK_FALSE(d.health().vc[0].healthy);
    v[2] = 2.0;
    CHECK_THROWS_AS(d.update(2, quiet_a, v), AllSensorsFaulty);
  }
  SUBCASE("validation") {
    CHECK_THROWS_AS(Detector({0.0, 1.0}, 10, 3, 10), ConfigError);
    CHECK_THROWS_AS(Detector(th, 10, 11, 10), ConfigError);
    CHECK_THROWS_AS(Detector(th, 0, 1, 10), ConfigError);
    CHECK_THROWS_AS(Detector(th, 10, 3, -1), ConfigError);
  }
}

TEST_CASE("closed loop on a quiet noiseless scenario stays clean") {
  sim::ScenarioConfig cfg;  // constant flight, no wind, no noise
  cfg.duration_s = 8.0;
  FdiConfig fcfg;
  fcfg.thresholds = {1e-3, 0.1};
  const FdiTrace t = run_closed_loop(sim::run_scenario(cfg), fcfg);

  REQUIRE(t.samples.size() == 201);
  CHECK(t.false_alarms == 0);
  CHECK_FALSE(t.terminated_all_faulty);
  CHECK(t.final_health.n_alpha() == 3);
  CHECK(t.final_health.n_vc() == 3);
  for (const SampleLog& s : t.samples) {
    CHECK(s.converged);
    if (s.k == 0) CHECK_FALSE(s.has_prediction);
    if (s.k >= 2) {
      for (int i = 0; i < 3; ++i) {
        CHECK(std::abs(s.rec.r_alpha[i]) <= 1e-6);
        CHECK(std::abs(s.rec.r_vc[i]) <= 1e-5);
      }
    }
  }
}

TEST_CASE("threshold calibration") {
  FdiConfig fcfg;
  SUBCASE("empty bank") {
    CHECK_THROWS_AS(calibrate_thresholds({}, fcfg), EmptyBank);
  }
  SUBCASE("bad factor") {
    const auto trace = sim::run_scenario(windy_scenario(6.0, 3));
    CHECK_THROWS_AS(calibrate_thresholds({trace}, fcfg, 0.0), ConfigError);
  }
  SUBCASE("max rule, monotone in the bank, zero alarms on its own bank") {
    const auto mild = sim::run_scenario(windy_scenario(8.0, 3));
    sim::ScenarioConfig strong_cfg = windy_scenario(8.0, 4);
    strong_cfg.wind.turbulence.rms = knots_to_mps(1.5);
    const auto strong = sim::run_scenario(strong_cfg);

    const Thresholds t1 = calibrate_thresholds({mild}, fcfg);
    const Thresholds t2 = calibrate_thresholds({mild, strong}, fcfg);
    CHECK(t1.j_alpha > 0.0);
    CHECK(t1.j_vc > 0.0);
    CHECK(t2.j_alpha >= t1.j_alpha);
    CHECK(t2.j_vc >= t1.j_vc);

    FdiConfig armed = fcfg;
    armed.thresholds = t2;
    for (const auto& trace : {mild, strong}) {
      const FdiTrace run = run_closed_loop(trace, armed);
      CHECK(run.false_alarms == 0);
      CHECK(run.final_health.n_alpha() == 3);
      CHECK(run.final_health.n_vc() == 3);
    }
  }
}

TEST_CASE("single VCAS bias is isolated and estimation continues") {
  sim::ScenarioConfig cfg = windy_scenario(12.0, 11);
  sim::FaultSpec f;
  f.sensor = sim::FaultSpec::Sensor::Vcas;
  f.channel = 2;
  f.kind = sim::FaultSpec::Kind::Bias;
  f.start_s = 6.0;
  f.value = knots_to_mps(7.0);
  cfg.faults = {f};

  FdiConfig fcfg;
  fcfg.thresholds = worst_case_thresholds(fcfg);
  const sim::ScenarioTrace trace = sim::run_scenario(cfg);
  const FdiTrace t = run_closed_loop(trace, fcfg);

  const int onset = 150;  // 6 s at 40 ms
  CHECK(t.false_alarms == 0);
  CHECK(t.vc_isolated_at[1] >= onset);
  CHECK(t.vc_isolated_at[1] <= onset + 38);  // within 1.5 s
  CHECK(t.vc_isolated_at[0] == -1);
  CHECK(t.vc_isolated_at[2] == -1);
  CHECK(t.final_health.n_alpha() == 3);
  CHECK(t.final_health.n_vc() == 2);

  // After isolation the estimator runs on the two clean channels and the
  // wind estimate returns to the truth.
  const SampleLog& last = t.samples.back();
  const auto& truth = trace.truth[last.k];
  CHECK(std::abs(last.estimate[1] - truth.wind.wx) <= knots_to_mps(1.0));
  CHECK(std::abs(last.estimate[2] - truth.wind.wz) <= knots_to_mps(1.0));
}

TEST_CASE("four-fault scenario isolates all faulty sensors, channel 3 clean") {
  sim::ScenarioConfig cfg = windy_scenario(20.0, 23);
  auto vc_bias = [](int ch, double start, double kts) {
    sim::FaultSpec f;
    f.sensor = sim::FaultSpec::Sensor::Vcas;
    f.channel = ch;
    f.kind = sim::FaultSpec::Kind::Bias;
    f.start_s = start;
    f.value = knots_to_mps(kts);
    return f;
  };
  auto aoa_runaway = [](int ch, double start, double deg_per_s) {
    sim::FaultSpec f;
    f.sensor = sim::FaultSpec::Sensor::Aoa;
    f.channel = ch;
    f.kind = sim::FaultSpec::Kind::Runaway;
    f.start_s = start;
    f.value = deg_to_rad(deg_per_s);
    return f;
  };
  cfg.faults = {vc_bias(1, 4.0, 5.0), vc_bias(2, 8.0, 7.0),
                aoa_runaway(1, 12.0, 1.0), aoa_runaway(2, 16.0, 10.0)};

  FdiConfig fcfg;
  fcfg.thresholds = worst_case_thresholds(fcfg);
  const FdiTrace t = run_closed_loop(sim::run_scenario(cfg), fcfg);

  CHECK(t.false_alarms == 0);
  CHECK(t.vc_isolated_at[0] >= 100);
  CHECK(t.vc_isolated_at[0] <= 138);  // within 1.5 s of onset
  CHECK(t.vc_isolated_at[1] >= 200);
  CHECK(t.vc_isolated_at[1] <= 238);
  CHECK(t.alpha_isolated_at[0] >= 300);
  CHECK(t.alpha_isolated_at[0] <= 338);
  CHECK(t.alpha_isolated_at[1] >= 400);
  CHECK(t.alpha_isolated_at[1] <= 438);
  CHECK(t.vc_isolated_at[2] == -1);
  CHECK(t.alpha_isolated_at[2] == -1);
  CHECK(t.final_health.vc[2].healthy);
  CHECK(t.final_health.alpha[2].healthy);
}

TEST_CASE("exhausting a sensor type terminates the run with partial trace") {
  sim::ScenarioConfig cfg = windy_scenario(12.0, 31);
  for (int ch = 1; ch <= 3; ++ch) {
    sim::FaultSpec f;
    f.sensor = sim::FaultSpec::Sensor::Vcas;
    f.channel = ch;
    f.kind = sim::FaultSpec::Kind::Bias;
    f.start_s = 2.0 + ch;
    f.value = knots_to_mps(25.0 + 5.0 * ch);
    cfg.faults.push_back(f);
  }
  FdiConfig fcfg;
  fcfg.thresholds = worst_case_thresholds(fcfg);
  const FdiTrace t = run_closed_loop(sim::run_scenario(cfg), fcfg);

  CHECK(t.terminated_all_faulty);
  CHECK(t.samples.size() < 300);
  CHECK(t.final_health.n_vc() == 0);
  CHECK(t.false_alarms == 0);
}

TEST_CASE("CSV and summary outputs") {
  sim::ScenarioConfig cfg = windy_scenario(4.0, 41);
  FdiConfig fcfg;
  fcfg.thresholds = {0.01, 1.0};
  const FdiTrace t = run_closed_loop(sim::run_scenario(cfg), fcfg);

  const std::string path = "/tmp/adfdi_fdi_test.csv";
  write_fdi_csv(t, path);
  std::ifstream f(path);
  REQUIRE(f.good());
  std::string line;
  std::getline(f, line);
  CHECK(line[0] == '#');
  std::getline(f, line);
  const auto cols = std::count(line.begin(), line.end(), ',') + 1;
  CHECK(cols == 43);
  int rows = 0;
  while (std::getline(f, line)) {
    CHECK(std::count(line.begin(), line.end(), ',') + 1 == cols);
    ++rows;
  }
  CHECK(rows == static_cast<int>(t.samples.size()));
  std::remove(path.c_str());

  const auto j = nlohmann::json::parse(summary_json(t));
  CHECK(j["samples"] == t.samples.size());
  CHECK(j["false_alarms"] == 0);
  CHECK(j["terminated_all_faulty"] == false);
  CHECK(j["isolation_times_s"]["aoa"].size() == 3);
  CHECK(j["isolation_times_s"]["vcas"][0].is_null());
}
