#include "adfdi/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "adfdi/errors.hpp"
#include "adfdi/units.hpp"

namespace adfdi::sim {

using json = nlohmann::json;

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double GaussianStream::uniform01() {
  // (0,1]: never 0, so log() below is finite.
  return ((eng_() >> 11) + 1) * 0x1.0p-53;
}

double GaussianStream::next() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  const double u1 = uniform01();
  const double u2 = uniform01();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double phi = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(phi);
  have_spare_ = true;
  return r * std::cos(phi);
}

namespace {

// Resolved piece of an axis profile: value(t) = v0 + slope*(t - t0).
struct Piece {
  double t0, v0, slope, duration;
};

// Walks the segment list resolving ramp durations from the entry value.
std::vector<Piece> resolve(const AxisProfile& prof) {
  std::vector<Piece> pieces;
  double v = prof.initial;
  double t0 = 0.0;
  for (const WindSegment& s : prof.segments) {
    Piece p{t0, v, 0.0, 0.0};
    switch (s.kind) {
      case WindSegment::Kind::Hold:
        p.duration = s.duration;
        break;
      case WindSegment::Kind::Constant:
        p.v0 = s.target;
        p.duration = s.duration;
        break;
      case WindSegment::Kind::Ramp: {
        if (!(s.accel > 0.0)) throw ConfigError("ramp segment needs accel > 0");
        const double dv = s.target - v;
        p.slope = dv >= 0.0 ? s.accel : -s.accel;
        p.duration = std::abs(dv) / s.accel;
        break;
      }
    }
    if (p.duration < 0.0) throw ConfigError("segment duration must be >= 0");
    v = p.v0 + p.slope * p.duration;
    t0 += p.duration;
    pieces.push_back(p);
  }
  pieces.push_back({t0, v, 0.0, std::numeric_limits<double>::infinity()});
  return pieces;
}

const Piece& piece_at(const std::vector<Piece>& pieces, double t) {
  for (const Piece& p : pieces) {
    if (t < p.t0 + p.duration) return p;
  }
  return pieces.back();
}

}  // namespace

double AxisProfile::value_at(double t) const {
  const auto pieces = resolve(*this);
  const Piece& p = piece_at(pieces, t);
  return p.v0 + p.slope * (t - p.t0);
}

double AxisProfile::rate_at(double t) const {
  const auto pieces = resolve(*this);
  return piece_at(pieces, t).slope;
}

std::vector<double> turbulence(uint64_t seed, double rms, double bandwidth_hz,
                               double ts, int n) {
  if (n <= 0) return {};
  std::vector<double> d(n, 0.0);
  if (rms <= 0.0) return d;
  GaussianStream g(seed);
  const double a = std::exp(-2.0 * std::numbers::pi * bandwidth_hz * ts);
  const double b = rms * std::sqrt(1.0 - a * a);
  d[0] = rms * g.next();  // stationary initialization
  for (int k = 1; k < n; ++k) d[k] = a * d[k - 1] + b * g.next();
  return d;
}

double FaultSpec::signal_at(double t) const {
  if (t < start_s) return 0.0;
  return kind == Kind::Bias ? value : value * (t - start_s);
}

double SineSpec::at(double t) const {
  if (amplitude == 0.0) return base;
  return base + amplitude * std::sin(2.0 * std::numbers::pi * t / period_s);
}

double SineSpec::rate(double t) const {
  if (amplitude == 0.0) return 0.0;
  const double w = 2.0 * std::numbers::pi / period_s;
  return amplitude * w * std::cos(w * t);
}

air::ParamSample theta_at(const ScenarioConfig& cfg, double t) {
  air::ParamSample p;
  p.vg = cfg.groundspeed.at(t);
  p.theta = cfg.pitch.at(t);
  p.q = cfg.pitch.rate(t);
  p.nx = cfg.groundspeed.rate(t);
  p.z = cfg.altitude;
  // n_z closes the loop: f_alpha(alpha_ref) = -q*V_g, so the exact dynamics
  // hold a quasi-equilibrium at alpha_ref (up to the wind terms).
  const double ar = cfg.alpha_ref;
  p.nz = (-p.q * p.vg + p.nx * std::sin(ar) -
          air::Isa::kGravity * std::cos(ar - p.theta)) /
         std::cos(ar);
  return p;
}

std::vector<air::ParamSample> generate_param_trace(const ScenarioConfig& cfg) {
  if (cfg.ts <= 0.0 || cfg.duration_s <= 0.0)
    throw ConfigError("duration and ts must be positive");
  const int n = static_cast<int>(std::lround(cfg.duration_s / cfg.ts)) + 1;
  std::vector<air::ParamSample> out;
  out.reserve(n);
  for (int k = 0; k < n; ++k) out.push_back(theta_at(cfg, k * cfg.ts));
  return out;
}

namespace {

// Continuous-time truth wind: profile plus piecewise-linear turbulence.
struct WindField {
  const AxisProfile* wx;
  const AxisProfile* wz;
  const std::vector<double>* tx;  // nullptr when turbulence off
  const std::vector<double>* tz;
  double ts;

  double lerp(const std::vector<double>& d, double t) const {
    const int last = static_cast<int>(d.size()) - 1;
    const double s = std::clamp(t / ts, 0.0, static_cast<double>(last));
    const int k = std::min(static_cast<int>(s), last - 1);
    return d[k] + (d[k + 1] - d[k]) * (s - k);
  }
  double slope(const std::vector<double>& d, double t) const {
    const int last = static_cast<int>(d.size()) - 1;
    const int k = std::clamp(static_cast<int>(t / ts), 0, last - 1);
    return (d[k + 1] - d[k]) / ts;
  }

  air::WindState state(double t) const {
    air::WindState w{wx->value_at(t), wz->value_at(t)};
    if (tx) {
      w.wx += lerp(*tx, t);
      w.wz += lerp(*tz, t);
    }
    return w;
  }
  air::WindRate rate(double t) const {
    air::WindRate r{wx->rate_at(t), wz->rate_at(t)};
    if (tx) {
      r.wx_dot += slope(*tx, t);
      r.wz_dot += slope(*tz, t);
    }
    return r;
  }
};

}  // namespace

ScenarioTrace simulate_truth(const ScenarioConfig& cfg) {
  if (cfg.ts <= 0.0 || cfg.duration_s <= 0.0)
    throw ConfigError("duration and ts must be positive");
  const int n = static_cast<int>(std::lround(cfg.duration_s / cfg.ts)) + 1;

  std::vector<double> tx, tz;
  const TurbulenceSpec& tb = cfg.wind.turbulence;
  if (tb.enabled && tb.rms > 0.0) {
    tx = turbulence(splitmix64(tb.seed) ^ splitmix64(1), tb.rms,
                    tb.bandwidth_hz, cfg.ts, n);
    tz = turbulence(splitmix64(tb.seed) ^ splitmix64(2), tb.rms,
                    tb.bandwidth_hz, cfg.ts, n);
  }
  WindField wind{&cfg.wind.wx, &cfg.wind.wz, tx.empty() ? nullptr : &tx,
                 tz.empty() ? nullptr : &tz, cfg.ts};

  ScenarioTrace trace;
  trace.ts = cfg.ts;
  trace.time.reserve(n);
  trace.params.reserve(n);
  trace.truth.reserve(n);
  trace.true_outputs.reserve(n);

  auto alpha_dot = [&](double t, double a) {
    return air::aoa_rate_exact(a, theta_at(cfg, t), wind.state(t),
                               wind.rate(t));
  };

  double alpha = cfg.alpha_ref;
  for (int k = 0; k < n; ++k) {
    const double t = k * cfg.ts;
    trace.time.push_back(t);
    trace.params.push_back(theta_at(cfg, t));
    const air::AugmentedState x{alpha, wind.state(t)};
    trace.truth.push_back(x);
    trace.true_outputs.push_back(air::outputs(x, trace.params.back()));

    if (k + 1 < n) {
      const double h = cfg.ts / 4.0;
      double tk = t;
      for (int s = 0; s < 4; ++s) {
        const double k1 = alpha_dot(tk, alpha);
        const double k2 = alpha_dot(tk + 0.5 * h, alpha + 0.5 * h * k1);
        const double k3 = alpha_dot(tk + 0.5 * h, alpha + 0.5 * h * k2);
        const double k4 = alpha_dot(tk + h, alpha + h * k3);
        alpha += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        tk += h;
      }
    }
  }
  return trace;
}

void sample_sensors(ScenarioTrace& trace, const SensorNoiseSpec& noise,
                    const std::vector<FaultSpec>& faults) {
  const int n = trace.samples();
  if (n == 0) throw ConfigError("empty trace");
  const double t_end = trace.time.back();

  std::set<std::pair<int, int>> used;
  for (const FaultSpec& f : faults) {
    if (f.channel < 1 || f.channel > 3)
      throw FaultSpecError("fault channel must be in 1..3");
    if (f.start_s < 0.0 || f.start_s > t_end)
      throw FaultSpecError("fault start time outside trace");
    if (!used.insert({static_cast<int>(f.sensor), f.channel}).second)
      throw FaultSpecError("duplicate fault on one physical sensor");
  }

  // One independent stream per physical sensor: 0..2 AOA, 3 Vz, 4..6 VCAS.
  std::vector<GaussianStream> streams;
  for (int i = 0; i < 7; ++i)
    streams.emplace_back(splitmix64(noise.seed) ^ splitmix64(100 + i));

  trace.meas.assign(n, MeasurementBundle{});
  trace.fault_truth.assign(n, {});
  for (int k = 0; k < n; ++k) {
    const double t = trace.time[k];
    const Eigen::Vector3d& y = trace.true_outputs[k];
    MeasurementBundle& m = trace.meas[k];
    std::array<double, 6>& ft = trace.fault_truth[k];

    // Noise is drawn before faults are applied, every sample, so the
    // stream position never depends on the fault list.
    for (int i = 0; i < 3; ++i)
      m.alpha[i] = y[0] + noise.sigma_alpha * streams[i].next();
    m.vz = y[1] + noise.sigma_vz * streams[3].next();
    for (int i = 0; i < 3; ++i)
      m.vcas[i] = y[2] + noise.sigma_vc * streams[4 + i].next();

    for (const FaultSpec& f : faults) {
      const double s = f.signal_at(t);
      if (f.sensor == FaultSpec::Sensor::Aoa) {
        m.alpha[f.channel - 1] += s;
        ft[f.channel - 1] = s;
      } else {
        m.vcas[f.channel - 1] += s;
        ft[3 + f.channel - 1] = s;
      }
    }
  }
}

ScenarioTrace run_scenario(const ScenarioConfig& cfg) {
  ScenarioTrace trace = simulate_truth(cfg);
  sample_sensors(trace, cfg.noise, cfg.faults);
  return trace;
}

bool wind_within(const ScenarioTrace& trace, double wx_bound,
                 double wz_bound) {
  for (const air::AugmentedState& x : trace.truth) {
    if (std::abs(x.wind.wx) > wx_bound || std::abs(x.wind.wz) > wz_bound)
      return false;
  }
  return true;
}

namespace {

AxisProfile parse_axis_kts(const json& j) {
  AxisProfile prof;
  prof.initial = knots_to_mps(j.value("initial", 0.0));
  for (const json& s : j.value("segments", json::array())) {
    WindSegment seg;
    const std::string kind = s.value("kind", "hold");
    if (kind == "hold") {
      seg.kind = WindSegment::Kind::Hold;
      seg.duration = s.value("duration_s", 0.0);
    } else if (kind == "ramp") {
      seg.kind = WindSegment::Kind::Ramp;
      seg.target = knots_to_mps(s.value("target", 0.0));
      seg.accel = knots_to_mps(s.value("accel_per_s", 0.0));
    } else if (kind == "constant") {
      seg.kind = WindSegment::Kind::Constant;
      seg.target = knots_to_mps(s.value("target", 0.0));
      seg.duration = s.value("duration_s", 0.0);
    } else {
      throw ConfigError("unknown wind segment kind: " + kind);
    }
    prof.segments.push_back(seg);
  }
  return prof;
}

SineSpec parse_sine(const json& j, double scale) {
  SineSpec s;
  s.base = scale * j.value("base", 0.0);
  s.amplitude = scale * j.value("amplitude", 0.0);
  s.period_s = j.value("period_s", 1.0);
  if (s.amplitude != 0.0 && s.period_s <= 0.0)
    throw ConfigError("sine period must be positive");
  return s;
}

}  // namespace

ScenarioConfig parse_scenario(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad scenario JSON: ") + e.what());
  }
  try {
    ScenarioConfig cfg;
    cfg.duration_s = j.value("duration_s", cfg.duration_s);
    cfg.ts = j.value("ts", cfg.ts);
    cfg.altitude = j.value("altitude_m", cfg.altitude);
    if (j.contains("groundspeed_mps"))
      cfg.groundspeed = parse_sine(j["groundspeed_mps"], 1.0);
    if (j.contains("pitch_deg"))
      cfg.pitch = parse_sine(j["pitch_deg"], deg_to_rad(1.0));
    cfg.alpha_ref = deg_to_rad(j.value("alpha_ref_deg", 2.3));
    if (j.contains("wind")) {
      const json& w = j["wind"];
      if (w.contains("wx_kts")) cfg.wind.wx = parse_axis_kts(w["wx_kts"]);
      if (w.contains("wz_kts")) cfg.wind.wz = parse_axis_kts(w["wz_kts"]);
      if (w.contains("turbulence")) {
        const json& t = w["turbulence"];
        cfg.wind.turbulence.enabled = t.value("enabled", false);
        cfg.wind.turbulence.rms = knots_to_mps(t.value("rms_kts", 0.0));
        cfg.wind.turbulence.bandwidth_hz = t.value("bandwidth_hz", 0.5);
        cfg.wind.turbulence.seed = t.value("seed", 0ULL);
      }
    }
    if (j.contains("noise")) {
      const json& nj = j["noise"];
      cfg.noise.sigma_alpha = deg_to_rad(nj.value("sigma_alpha_deg", 0.0));
      cfg.noise.sigma_vz = knots_to_mps(nj.value("sigma_vz_kts", 0.0));
      cfg.noise.sigma_vc = knots_to_mps(nj.value("sigma_vc_kts", 0.0));
      cfg.noise.seed = nj.value("seed", 0ULL);
    }
    for (const json& fj : j.value("faults", json::array())) {
      FaultSpec f;
      const std::string sensor = fj.value("sensor", "");
      if (sensor == "aoa")
        f.sensor = FaultSpec::Sensor::Aoa;
      else if (sensor == "vcas")
        f.sensor = FaultSpec::Sensor::Vcas;
      else
        throw ConfigError("fault sensor must be 'aoa' or 'vcas'");
      f.channel = fj.value("channel", 1);
      f.start_s = fj.value("start_s", 0.0);
      const std::string kind = fj.value("kind", "bias");
      if (kind == "bias") {
        f.kind = FaultSpec::Kind::Bias;
        f.value = f.sensor == FaultSpec::Sensor::Aoa
                      ? deg_to_rad(fj.value("amplitude_deg", 0.0))
                      : knots_to_mps(fj.value("amplitude_kts", 0.0));
      } else if (kind == "runaway") {
        f.kind = FaultSpec::Kind::Runaway;
        f.value = f.sensor == FaultSpec::Sensor::Aoa
                      ? deg_to_rad(fj.value("rate_deg_per_s", 0.0))
                      : knots_to_mps(fj.value("rate_kts_per_s", 0.0));
      } else {
        throw ConfigError("fault kind must be 'bias' or 'runaway'");
      }
      cfg.faults.push_back(f);
    }
    return cfg;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad scenario field: ") + e.what());
  }
}

ScenarioConfig load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open scenario file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_scenario(buf.str());
}

void write_csv(const ScenarioTrace& trace, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open output file: " + path);
  out << "# scenario trace v1; units: s, m/s, rad, rad/s, m/s^2, m; "
         "all columns SI\n";
  out << "time,vg,theta,q,nx,nz,z,alpha_true,wx_true,wz_true,"
         "y_alpha,y_vz,y_vc,"
         "aoa_m1,aoa_m2,aoa_m3,vz_m,vc_m1,vc_m2,vc_m3,"
         "f_a1,f_a2,f_a3,f_vc1,f_vc2,f_vc3\n";
  out << std::setprecision(17);
  const bool have_meas = !trace.meas.empty();
  for (int k = 0; k < trace.samples(); ++k) {
    const air::ParamSample& p = trace.params[k];
    const air::AugmentedState& x = trace.truth[k];
    const Eigen::Vector3d& y = trace.true_outputs[k];
    out << trace.time[k] << ',' << p.vg << ',' << p.theta << ',' << p.q << ','
        << p.nx << ',' << p.nz << ',' << p.z << ',' << x.alpha << ','
        << x.wind.wx << ',' << x.wind.wz << ',' << y[0] << ',' << y[1] << ','
        << y[2];
    const MeasurementBundle m = have_meas ? trace.meas[k] : MeasurementBundle{};
    const std::array<double, 6> ft =
        have_meas ? trace.fault_truth[k] : std::array<double, 6>{};
    for (int i = 0; i < 3; ++i) out << ',' << m.alpha[i];
    out << ',' << m.vz;
    for (int i = 0; i < 3; ++i) out << ',' << m.vcas[i];
    for (int i = 0; i < 6; ++i) out << ',' << ft[i];
    out << '\n';
  }
}

}  // namespace adfdi::sim
