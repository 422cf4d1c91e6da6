#include "adfdi/fdi.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "adfdi/errors.hpp"

namespace adfdi::fdi {

ResidualRecord residuals(int k, const sim::MeasurementBundle& bundle,
                         const Eigen::Vector3d& prediction) {
  ResidualRecord rec;
  rec.k = k;
  for (int i = 0; i < 3; ++i) {
    rec.r_alpha[i] = bundle.alpha[i] - prediction[0];
    rec.r_vc[i] = bundle.vcas[i] - prediction[2];
  }
  return rec;
}

RmsWindow::RmsWindow(int n_eval) : n_eval_(n_eval) {
  if (n_eval < 1) throw ConfigError("RMS window must hold at least 1 sample");
}

void RmsWindow::push(double r) {
  if (!std::isfinite(r)) throw ConfigError("non-finite residual");
  buf_.push_back(r);
  if (static_cast<int>(buf_.size()) > n_eval_) buf_.pop_front();
}

double RmsWindow::rms() const {
  if (buf_.empty()) return 0.0;
  double s = 0.0;
  for (double r : buf_) s += r * r;
  return std::sqrt(s / static_cast<double>(buf_.size()));
}

std::array<bool, 3> HealthReport::healthy_alpha() const {
  return {alpha[0].healthy, alpha[1].healthy, alpha[2].healthy};
}

std::array<bool, 3> HealthReport::healthy_vc() const {
  return {vc[0].healthy, vc[1].healthy, vc[2].healthy};
}

int HealthReport::n_alpha() const {
  return static_cast<int>(alpha[0].healthy) + alpha[1].healthy +
         alpha[2].healthy;
}

int HealthReport::n_vc() const {
  return static_cast<int>(vc[0].healthy) + vc[1].healthy + vc[2].healthy;
}

Detector::Detector(Thresholds th, int window, int hits, int suppress)
    : th_(th), window_(window), hits_(hits), suppress_(suppress) {
  if (!(th.j_alpha > 0.0) || !(th.j_vc > 0.0))
    throw ConfigError("detection thresholds must be positive");
  if (window < 1 || hits < 1 || hits > window)
    throw ConfigError("persistence rule needs 1 <= hits <= window");
  if (suppress < 0) throw ConfigError("negative suppression window");
}

const HealthReport& Detector::update(int k,
                                     const std::array<double, 3>& j_alpha,
                                     const std::array<double, 3>& j_vc) {
  const bool live = k >= suppress_;
  auto state = [&](int s) -> SensorState& {
    return s < 3 ? report_.alpha[s] : report_.vc[s - 3];
  };
  auto jval = [&](int s) { return s < 3 ? j_alpha[s] : j_vc[s - 3]; };

  for (int s = 0; s < 6; ++s) {
    const double th = s < 3 ? th_.j_alpha : th_.j_vc;
    auto& log = hit_log_[s];
    log.push_back(live && state(s).healthy && jval(s) > th);
    if (static_cast<int>(log.size()) > window_) log.pop_front();
  }
  // One declaration per type and update: the strongest exceeder wins. The
  // other channels of the type were judged against a fusion that is about
  // to change, so their accumulated evidence is discarded.
  for (int base : {0, 3}) {
    int pick = -1;
    for (int s = base; s < base + 3; ++s) {
      if (!state(s).healthy) continue;  // latched
      const auto& log = hit_log_[s];
      const int n = static_cast<int>(std::count(log.begin(), log.end(), true));
      if (n >= hits_ && (pick < 0 || jval(s) > jval(pick))) pick = s;
    }
    if (pick >= 0) {
      state(pick).healthy = false;
      state(pick).faulty_since = k;
      for (int s = base; s < base + 3; ++s)
        if (s != pick && state(s).healthy) hit_log_[s].clear();
    }
  }
  if (report_.n_alpha() == 0 || report_.n_vc() == 0)
    throw AllSensorsFaulty(report_.n_alpha() == 0 ? "all AOA sensors faulty"
                                                  : "all VCAS sensors faulty");
  return report_;
}

FdiTrace run_closed_loop(const sim::ScenarioTrace& scenario,
                         const FdiConfig& cfg) {
  mhe::MovingHorizonEstimator est(cfg.estimator);
  Detector det(cfg.thresholds, cfg.persistence_window, cfg.persistence_hits,
               cfg.suppress_samples);
  std::array<RmsWindow, 6> jw{RmsWindow(cfg.n_eval), RmsWindow(cfg.n_eval),
                              RmsWindow(cfg.n_eval), RmsWindow(cfg.n_eval),
                              RmsWindow(cfg.n_eval), RmsWindow(cfg.n_eval)};

  FdiTrace out;
  out.ts = scenario.ts;
  out.thresholds = cfg.thresholds;
  out.samples.reserve(scenario.samples());

  for (int k = 0; k < scenario.samples(); ++k) {
    SampleLog log;
    log.k = k;
    log.t = scenario.time[k];
    log.meas = scenario.meas[k];

    if (const auto pred = est.predict_next(scenario.params[k])) {
      log.has_prediction = true;
      log.prediction = *pred;
      log.rec = residuals(k, scenario.meas[k], *pred);
      for (int i = 0; i < 3; ++i) {
        jw[i].push(log.rec.r_alpha[i]);
        jw[3 + i].push(log.rec.r_vc[i]);
      }
    }
    for (int i = 0; i < 3; ++i) {
      log.j_alpha[i] = jw[i].rms();
      log.j_vc[i] = jw[3 + i].rms();
    }

    // Detection first: an isolation at k drops the channel from this very
    // sample's window re-fusion.
    const auto before_a = det.health().healthy_alpha();
    const auto before_v = det.health().healthy_vc();
    try {
      det.update(k, log.j_alpha, log.j_vc);
    } catch (const AllSensorsFaulty&) {
      out.terminated_all_faulty = true;
      out.samples.push_back(log);
      break;
    }
    log.healthy_alpha = det.health().healthy_alpha();
    log.healthy_vc = det.health().healthy_vc();

    // The surviving channels' J windows hold residuals taken against the
    // old, contaminated fusion; restart them after an isolation.
    if (before_a != log.healthy_alpha)
      for (int i = 0; i < 3; ++i)
        if (log.healthy_alpha[i]) jw[i].clear();
    if (before_v != log.healthy_vc)
      for (int i = 0; i < 3; ++i)
        if (log.healthy_vc[i]) jw[3 + i].clear();

    const mhe::MheSolution sol = est.step(
        scenario.meas[k], scenario.params[k], log.healthy_alpha,
        log.healthy_vc);
    log.estimate = sol.filtered();
    log.active_count = static_cast<int>(sol.active.size());
    log.iterations = sol.iterations;
    log.wall_ms = sol.wall_ms;
    log.stat_norm = sol.stat_norm;
    log.eq_norm = sol.eq_norm;
    log.comp_norm = sol.comp_norm;
    log.converged = sol.converged;
    out.samples.push_back(log);
  }

  out.final_health = det.health();
  for (int i = 0; i < 3; ++i) {
    out.alpha_isolated_at[i] = out.final_health.alpha[i].faulty_since;
    out.vc_isolated_at[i] = out.final_health.vc[i].faulty_since;
  }

  // A declaration is genuine only if the channel's injected fault signal is
  // already nonzero by the declaration sample.
  auto genuine = [&](int chan, int since) {
    for (int j = 0; j <= since && j < scenario.samples(); ++j)
      if (scenario.fault_truth[j][chan] != 0.0) return true;
    return false;
  };
  for (int i = 0; i < 3; ++i) {
    if (out.alpha_isolated_at[i] >= 0 && !genuine(i, out.alpha_isolated_at[i]))
      ++out.false_alarms;
    if (out.vc_isolated_at[i] >= 0 && !genuine(3 + i, out.vc_isolated_at[i]))
      ++out.false_alarms;
  }
  return out;
}

Thresholds calibrate_thresholds(const std::vector<sim::ScenarioTrace>& bank,
                                const FdiConfig& cfg, double factor) {
  if (bank.empty()) throw EmptyBank("threshold calibration needs runs");
  if (!(factor > 0.0)) throw ConfigError("threshold factor must be positive");

  FdiConfig open = cfg;
  open.thresholds = {std::numeric_limits<double>::infinity(),
                     std::numeric_limits<double>::infinity()};
  double ja = 0.0, jv = 0.0;
  for (const auto& trace : bank) {
    const FdiTrace run = run_closed_loop(trace, open);
    for (const SampleLog& s : run.samples) {
      if (s.k < cfg.suppress_samples) continue;
      for (int i = 0; i < 3; ++i) {
        ja = std::max(ja, s.j_alpha[i]);
        jv = std::max(jv, s.j_vc[i]);
      }
    }
  }
  return {factor * ja, factor * jv};
}

void write_fdi_csv(const FdiTrace& trace, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot open " + path);
  f << "# t in s; alpha in rad; speeds in m/s\n";
  f << "k,t,alpha_m1,alpha_m2,alpha_m3,vz_m,vc_m1,vc_m2,vc_m3,"
       "has_pred,pred_alpha,pred_vz,pred_vc,"
       "r_alpha1,r_alpha2,r_alpha3,r_vc1,r_vc2,r_vc3,"
       "j_alpha1,j_alpha2,j_alpha3,j_vc1,j_vc2,j_vc3,"
       "th_alpha,th_vc,h_alpha1,h_alpha2,h_alpha3,h_vc1,h_vc2,h_vc3,"
       "alpha_hat,wx_hat,wz_hat,active,iters,wall_ms,stat,eq,comp,conv\n";
  f << std::setprecision(17);
  for (const SampleLog& s : trace.samples) {
    f << s.k << ',' << s.t;
    for (int i = 0; i < 3; ++i) f << ',' << s.meas.alpha[i];
    f << ',' << s.meas.vz;
    for (int i = 0; i < 3; ++i) f << ',' << s.meas.vcas[i];
    f << ',' << (s.has_prediction ? 1 : 0);
    for (int i = 0; i < 3; ++i) f << ',' << s.prediction[i];
    for (int i = 0; i < 3; ++i) f << ',' << s.rec.r_alpha[i];
    for (int i = 0; i < 3; ++i) f << ',' << s.rec.r_vc[i];
    for (int i = 0; i < 3; ++i) f << ',' << s.j_alpha[i];
    for (int i = 0; i < 3; ++i) f << ',' << s.j_vc[i];
    f << ',' << trace.thresholds.j_alpha << ',' << trace.thresholds.j_vc;
    for (int i = 0; i < 3; ++i) f << ',' << (s.healthy_alpha[i] ? 1 : 0);
    for (int i = 0; i < 3; ++i) f << ',' << (s.healthy_vc[i] ? 1 : 0);
    for (int i = 0; i < 3; ++i) f << ',' << s.estimate[i];
    f << ',' << s.active_count << ',' << s.iterations << ',' << s.wall_ms
      << ',' << s.stat_norm << ',' << s.eq_norm << ',' << s.comp_norm << ','
      << (s.converged ? 1 : 0) << '\n';
  }
}

std::string summary_json(const FdiTrace& trace) {
  nlohmann::json j;
  j["samples"] = trace.samples.size();
  j["ts"] = trace.ts;
  j["false_alarms"] = trace.false_alarms;
  j["terminated_all_faulty"] = trace.terminated_all_faulty;
  auto times = [&](const std::array<int, 3>& at) {
    nlohmann::json arr = nlohmann::json::array();
    for (int i = 0; i < 3; ++i) {
      if (at[i] < 0)
        arr.push_back(nullptr);
      else
        arr.push_back(at[i] * trace.ts);
    }
    return arr;
  };
  j["isolation_times_s"]["aoa"] = times(trace.alpha_isolated_at);
  j["isolation_times_s"]["vcas"] = times(trace.vc_isolated_at);
  return j.dump(2);
}

}  // namespace adfdi::fdi
