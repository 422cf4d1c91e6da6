#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "adfdi/errors.hpp"
#include "adfdi/simulator.hpp"
#include "adfdi/units.hpp"

using namespace adfdi;
using namespace adfdi::sim;

namespace {

// 60 s level-flight template with a ramp-in crosswind pair; shared by the
// regression snapshot and the bound checks.
ScenarioConfig template_config() {
  ScenarioConfig cfg;
  cfg.duration_s = 60.0;
  cfg.alpha_ref = 0.04;
  cfg.groundspeed = {120.0, 3.0, 40.0};
  cfg.pitch = {0.03, 0.008, 25.0};
  cfg.wind.wx.segments = {
      {WindSegment::Kind::Hold, 0.0, 0.0, 5.0},
      {WindSegment::Kind::Ramp, knots_to_mps(10.0), knots_to_mps(5.0), 0.0}};
  cfg.wind.wz.segments = {
      {WindSegment::Kind::Hold, 0.0, 0.0, 8.0},
      {WindSegment::Kind::Ramp, knots_to_mps(-5.0), knots_to_mps(5.0), 0.0}};
  return cfg;
}

}  // namespace

TEST_CASE("turbulence basics") {
  CHECK(turbulence(1, 0.0, 0.5, 0.04, 100) == std::vector<double>(100, 0.0));
  const auto a = turbulence(42, 0.5, 0.5, 0.04, 10000);
  const auto b = turbulence(42, 0.5, 0.5, 0.04, 10000);
  CHECK(a == b);
  double s2 = 0.0;
  for (double v : a) s2 += v * v;
  const double stddev = std::sqrt(s2 / a.size());
  CHECK(stddev > 0.45);
  CHECK(stddev < 0.55);
  CHECK(turbulence(42, 0.5, 0.5, 0.04, 10000) !=
        turbulence(43, 0.5, 0.5, 0.04, 10000));
}

TEST_CASE("parameter trace kinematics") {
  ScenarioConfig cfg;
  cfg.groundspeed = {120.0, 0.0, 40.0};
  cfg.pitch = {0.0, 0.0, 25.0};
  for (const auto& p : generate_param_trace(cfg)) {
    CHECK(p.q == 0.0);
    CHECK(p.nx == 0.0);
  }

  cfg.pitch = {0.03, 0.01, 25.0};
  const auto trace = generate_param_trace(cfg);
  const double w = 2.0 * std::numbers::pi / 25.0;
  double qmax = 0.0;
  for (const auto& p : trace) qmax = std::max(qmax, std::abs(p.q));
  CHECK(qmax == doctest::Approx(0.01 * w).epsilon(1e-3));

  // q is the exact derivative of theta: central differences agree.
  for (size_t k = 1; k + 1 < trace.size(); ++k) {
    const double fd =
        (trace[k + 1].theta - trace[k - 1].theta) / (2.0 * cfg.ts);
    CHECK(std::abs(fd - trace[k].q) <= 1e-6);
  }
}

TEST_CASE("trim equilibrium holds without wind") {
  ScenarioConfig cfg;
  cfg.duration_s = 20.0;
  cfg.alpha_ref = 0.05;
  cfg.groundspeed = {118.0, 0.0, 40.0};
  cfg.pitch = {0.03, 0.0, 25.0};
  const auto tr = simulate_truth(cfg);
  for (const auto& x : tr.truth)
    CHECK(std::abs(x.alpha - 0.05) <= 1e-12);
}

TEST_CASE("pure horizontal ramp at alpha=theta matches the no-wind run") {
  ScenarioConfig cfg;
  cfg.duration_s = 20.0;
  cfg.alpha_ref = 0.04;
  cfg.groundspeed = {120.0, 0.0, 40.0};
  cfg.pitch = {0.04, 0.0, 25.0};  // theta == alpha_ref: f_w vanishes
  const auto base = simulate_truth(cfg);
  cfg.wind.wx.segments = {
      {WindSegment::Kind::Ramp, knots_to_mps(10.0), knots_to_mps(5.0), 0.0}};
  const auto windy = simulate_truth(cfg);
  for (int k = 0; k < base.samples(); ++k)
    CHECK(std::abs(base.truth[k].alpha - windy.truth[k].alpha) <= 1e-10);
}

TEST_CASE("level-flight template snapshot") {
  const auto tr = simulate_truth(template_config());
  REQUIRE(tr.samples() == 1501);
  double amax = 0.0;
  for (const auto& x : tr.truth) amax = std::max(amax, std::abs(x.alpha));
  CHECK(amax < 0.3);

  // Wind ramps complete at their targets.
  CHECK(tr.truth[500].wind.wx ==
        doctest::Approx(knots_to_mps(10.0)).epsilon(1e-12));
  CHECK(tr.truth[500].wind.wz ==
        doctest::Approx(knots_to_mps(-5.0)).epsilon(1e-12));

  // Regression snapshot of the first validated run (loose enough to absorb
  // libm differences across platforms).
  CHECK(tr.truth[500].alpha ==
        doctest::Approx(0.063766331062654044).epsilon(1e-7));
  CHECK(tr.true_outputs[500][1] ==
        doctest::Approx(-7.3178117414171382).epsilon(1e-7));
  CHECK(tr.true_outputs[500][2] ==
        doctest::Approx(106.75572207281081).epsilon(1e-7));
  CHECK(tr.truth[1000].alpha ==
        doctest::Approx(0.064962645505084127).epsilon(1e-7));
  CHECK(tr.true_outputs[1000][2] ==
        doctest::Approx(106.75933206560394).epsilon(1e-7));
}

TEST_CASE("noiseless sensors reproduce truth and faults add exactly") {
  ScenarioConfig cfg = template_config();
  cfg.duration_s = 20.0;
  auto tr = simulate_truth(cfg);
  sample_sensors(tr, {}, {});
  for (int k = 0; k < tr.samples(); ++k) {
    for (int i = 0; i < 3; ++i) {
      CHECK(tr.meas[k].alpha[i] == tr.true_outputs[k][0]);
      CHECK(tr.meas[k].vcas[i] == tr.true_outputs[k][2]);
    }
    CHECK(tr.meas[k].vz == tr.true_outputs[k][1]);
  }

  FaultSpec bias{FaultSpec::Sensor::Vcas, 1, FaultSpec::Kind::Bias, 10.0,
                 knots_to_mps(5.0)};
  FaultSpec run{FaultSpec::Sensor::Aoa, 1, FaultSpec::Kind::Runaway, 5.0,
                deg_to_rad(1.0)};
  auto faulty = tr;
  sample_sensors(faulty, {}, {bias, run});
  for (int k = 0; k < tr.samples(); ++k) {
    const double t = tr.time[k];
    const double dvc = faulty.meas[k].vcas[0] - tr.meas[k].vcas[0];
    if (t >= 10.0)
      CHECK(dvc == doctest::Approx(knots_to_mps(5.0)).epsilon(1e-12));
    else
      CHECK(dvc == 0.0);
    CHECK(faulty.meas[k].vcas[1] == tr.meas[k].vcas[1]);
  }
  const int k7 = static_cast<int>(std::lround(7.0 / cfg.ts));
  CHECK(faulty.meas[k7].alpha[0] - tr.meas[k7].alpha[0] ==
        doctest::Approx(deg_to_rad(2.0)).epsilon(1e-12));
}

TEST_CASE("fault additivity with noise enabled") {
  ScenarioConfig cfg = template_config();
  cfg.duration_s = 15.0;
  cfg.wind.turbulence = {true, 0.3, 0.5, 7};
  SensorNoiseSpec noise{0.001, 0.1, 0.15, 99};
  auto clean = simulate_truth(cfg);
  auto faulty = clean;
  sample_sensors(clean, noise, {});
  sample_sensors(faulty, noise,
                 {{FaultSpec::Sensor::Vcas, 2, FaultSpec::Kind::Bias, 4.0,
                   knots_to_mps(7.0)},
                  {FaultSpec::Sensor::Aoa, 3, FaultSpec::Kind::Runaway, 6.0,
                   deg_to_rad(0.5)}});
  for (int k = 0; k < clean.samples(); ++k) {
    for (int i = 0; i < 3; ++i) {
      CHECK(faulty.meas[k].alpha[i] ==
            clean.meas[k].alpha[i] + faulty.fault_truth[k][i]);
      CHECK(faulty.meas[k].vcas[i] ==
            clean.meas[k].vcas[i] + faulty.fault_truth[k][3 + i]);
    }
    CHECK(faulty.meas[k].vz == clean.meas[k].vz);
  }
}

TEST_CASE("fault validation") {
  ScenarioConfig cfg = template_config();
  cfg.duration_s = 10.0;
  auto tr = simulate_truth(cfg);
  const FaultSpec ok{FaultSpec::Sensor::Vcas, 1, FaultSpec::Kind::Bias, 2.0,
                     1.0};
  CHECK_THROWS_AS(sample_sensors(tr, {}, {ok, ok}), FaultSpecError);
  FaultSpec bad = ok;
  bad.channel = 4;
  CHECK_THROWS_AS(sample_sensors(tr, {}, {bad}), FaultSpecError);
  bad = ok;
  bad.start_s = -1.0;
  CHECK_THROWS_AS(sample_sensors(tr, {}, {bad}), FaultSpecError);
  bad = ok;
  bad.start_s = 10.5;
  CHECK_THROWS_AS(sample_sensors(tr, {}, {bad}), FaultSpecError);
}

TEST_CASE("scenario runs are deterministic") {
  ScenarioConfig cfg = template_config();
  cfg.duration_s = 12.0;
  cfg.wind.turbulence = {true, 0.4, 0.5, 11};
  cfg.noise = {0.001, 0.1, 0.15, 5};
  cfg.faults = {{FaultSpec::Sensor::Vcas, 1, FaultSpec::Kind::Bias, 6.0,
                 knots_to_mps(5.0)}};
  const auto a = run_scenario(cfg);
  const auto b = run_scenario(cfg);
  REQUIRE(a.samples() == b.samples());
  for (int k = 0; k < a.samples(); ++k) {
    CHECK(a.truth[k].alpha == b.truth[k].alpha);
    CHECK(a.truth[k].wind.wx == b.truth[k].wind.wx);
    CHECK(a.meas[k].alpha == b.meas[k].alpha);
    CHECK(a.meas[k].vz == b.meas[k].vz);
    CHECK(a.meas[k].vcas == b.meas[k].vcas);
  }
}

TEST_CASE("wind bound check") {
  const auto tr = simulate_truth(template_config());
  CHECK(wind_within(tr, knots_to_mps(120.0), knots_to_mps(30.0)));
  CHECK_FALSE(wind_within(tr, knots_to_mps(8.0), knots_to_mps(30.0)));
}

TEST_CASE("scenario JSON parsing") {
  const std::string text = R"({
    "duration_s": 30.0, "ts": 0.04, "altitude_m": 1524.0,
    "groundspeed_mps": {"base": 120.0, "amplitude": 3.0, "period_s": 40.0},
    "pitch_deg": {"base": 1.7, "amplitude": 0.5, "period_s": 25.0},
    "alpha_ref_deg": 2.3,
    "wind": {
      "wx_kts": {"initial": 0.0, "segments": [
        {"kind": "hold", "duration_s": 5.0},
        {"kind": "ramp", "target": 10.0, "accel_per_s": 5.0}]},
      "turbulence": {"enabled": true, "rms_kts": 1.0, "bandwidth_hz": 0.5,
                     "seed": 7}
    },
    "noise": {"sigma_alpha_deg": 0.06, "sigma_vz_kts": 0.2,
              "sigma_vc_kts": 0.3, "seed": 99},
    "faults": [
      {"sensor": "vcas", "channel": 1, "kind": "bias", "start_s": 10.0,
       "amplitude_kts": 5.0},
      {"sensor": "aoa", "channel": 2, "kind": "runaway", "start_s": 5.0,
       "rate_deg_per_s": 1.0}]
  })";
  const ScenarioConfig cfg = parse_scenario(text);
  CHECK(cfg.duration_s == 30.0);
  CHECK(cfg.pitch.base == doctest::Approx(deg_to_rad(1.7)).epsilon(1e-15));
  CHECK(cfg.alpha_ref == doctest::Approx(deg_to_rad(2.3)).epsilon(1e-15));
  REQUIRE(cfg.wind.wx.segments.size() == 2);
  CHECK(cfg.wind.wx.segments[1].target ==
        doctest::Approx(knots_to_mps(10.0)).epsilon(1e-15));
  CHECK(cfg.wind.turbulence.rms ==
        doctest::Approx(knots_to_mps(1.0)).epsilon(1e-15));
  REQUIRE(cfg.faults.size() == 2);
  CHECK(cfg.faults[0].value ==
        doctest::Approx(knots_to_mps(5.0)).epsilon(1e-15));
  CHECK(cfg.faults[1].value ==
        doctest::Approx(deg_to_rad(1.0)).epsilon(1e-15));

  CHECK_THROWS_AS(parse_scenario("{nope"), ConfigError);
  CHECK_THROWS_AS(parse_scenario(R"({"faults":[{"sensor":"gps"}]})"),
                  ConfigError);
  CHECK_THROWS_AS(
      parse_scenario(
          R"({"wind":{"wx_kts":{"segments":[{"kind":"spiral"}]}}})"),
      ConfigError);
}

TEST_CASE("csv export") {
  ScenarioConfig cfg = template_config();
  cfg.duration_s = 2.0;
  cfg.noise = {0.001, 0.1, 0.15, 3};
  const auto tr = run_scenario(cfg);
  const std::string path = "test_trace_out.csv";
  write_csv(tr, path);
  std::ifstream in(path);
  REQUIRE(in.good());
  std::string line;
  int lines = 0;
  std::getline(in, line);
  CHECK(line[0] == '#');
  std::getline(in, line);
  CHECK(line.substr(0, 5) == "time,");
  std::getline(in, line);
  ++lines;
  std::stringstream row(line);
  std::string cell;
  std::getline(row, cell, ',');
  CHECK(std::stod(cell) == 0.0);
  while (std::getline(in, line)) ++lines;
  CHECK(lines == tr.samples());
  std::remove(path.c_str());
}
