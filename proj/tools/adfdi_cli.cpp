// Command-line front end: scenario simulation, threshold calibration, the
// four experiment tables, the property-suite gate, and the sensitivity
// batch. Exit codes: 0 all checks hold, 1 a check failed, 2 bad input.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "adfdi/errors.hpp"
#include "adfdi/experiments.hpp"
#include "adfdi/fdi.hpp"
#include "adfdi/kkt_sensitivity.hpp"
#include "adfdi/simulator.hpp"
#include "adfdi/units.hpp"

using namespace adfdi;
using nlohmann::json;

namespace {

// Level-flight template shared by simulate and calibrate.
sim::ScenarioConfig base_scenario(double duration, uint64_t noise_seed) {
  sim::ScenarioConfig c;
  c.duration_s = duration;
  c.ts = 0.04;
  c.groundspeed = {120.0, 3.0, 40.0};
  c.pitch = {0.03, 0.008, 25.0};
  c.alpha_ref = 0.04;
  c.noise = {deg_to_rad(0.05), knots_to_mps(0.3), knots_to_mps(0.3),
             noise_seed};
  return c;
}

// sensor:channel:kind:start_s:value, e.g. vcas:1:bias:4.0:5
sim::FaultSpec parse_fault(const std::string& spec) {
  std::vector<std::string> parts;
  std::stringstream ss(spec);
  std::string tok;
  while (std::getline(ss, tok, ':')) parts.push_back(tok);
  if (parts.size() != 5)
    throw ConfigError("fault spec needs sensor:channel:kind:start:value");

  sim::FaultSpec f;
  const bool aoa = parts[0] == "aoa";
  if (!aoa && parts[0] != "vcas")
    throw ConfigError("fault sensor must be aoa or vcas");
  f.sensor = aoa ? sim::FaultSpec::Sensor::Aoa : sim::FaultSpec::Sensor::Vcas;
  f.channel = std::stoi(parts[1]);
  if (parts[2] == "bias")
    f.kind = sim::FaultSpec::Kind::Bias;
  else if (parts[2] == "runaway")
    f.kind = sim::FaultSpec::Kind::Runaway;
  else
    throw ConfigError("fault kind must be bias or runaway");
  f.start_s = std::stod(parts[3]);
  // AOA values in deg (or deg/s), VCAS in kts (or kts/s).
  const double v = std::stod(parts[4]);
  f.value = aoa ? deg_to_rad(v) : knots_to_mps(v);
  return f;
}

void write_trace_csv(const sim::ScenarioTrace& t, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot open " + path);
  f << "# t in s; alpha in rad; speeds in m/s\n";
  f << "k,t,alpha_true,wx_true,wz_true,alpha_out,vz_out,vc_out,"
       "alpha_m1,alpha_m2,alpha_m3,vz_m,vc_m1,vc_m2,vc_m3,"
       "f_a1,f_a2,f_a3,f_vc1,f_vc2,f_vc3\n";
  f << std::setprecision(17);
  for (int k = 0; k < t.samples(); ++k) {
    f << k << ',' << t.time[k] << ',' << t.truth[k].alpha << ','
      << t.truth[k].wind.wx << ',' << t.truth[k].wind.wz;
    for (int i = 0; i < 3; ++i) f << ',' << t.true_outputs[k][i];
    for (int i = 0; i < 3; ++i) f << ',' << t.meas[k].alpha[i];
    f << ',' << t.meas[k].vz;
    for (int i = 0; i < 3; ++i) f << ',' << t.meas[k].vcas[i];
    for (int i = 0; i < 6; ++i) f << ',' << t.fault_truth[k][i];
    f << '\n';
  }
}

void load_config_file(const std::string& path, exp::ExperimentConfig& cfg) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file " + path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config parse: ") + e.what());
  }
  if (j.contains("seed")) cfg.seed = j["seed"].get<uint64_t>();
  if (j.contains("workers")) cfg.workers = j["workers"].get<int>();
  if (j.contains("out_dir")) cfg.out_dir = j["out_dir"].get<std::string>();
  if (j.contains("q_d_sweep"))
    cfg.q_d_sweep = j["q_d_sweep"].get<std::vector<double>>();
  if (j.contains("fig3_grid_kts"))
    cfg.fig3_grid_kts = j["fig3_grid_kts"].get<std::vector<double>>();
  if (j.contains("fig4_step_kts"))
    cfg.fig4_step_kts = j["fig4_step_kts"].get<double>();
  if (j.contains("fig4_max_kts"))
    cfg.fig4_max_kts = j["fig4_max_kts"].get<double>();
  if (j.contains("fig2_analyzer_bound_kts"))
    cfg.fig2_analyzer_bound_kts = j["fig2_analyzer_bound_kts"].get<double>();
  if (j.contains("fig3_analyzer_wind_bound_kts"))
    cfg.fig3_analyzer_wind_bound_kts =
        j["fig3_analyzer_wind_bound_kts"].get<double>();
}

struct ExpArgs {
  std::string config;
  std::string out_dir;
  std::optional<uint64_t> seed;
  std::optional<int> workers;

  exp::ExperimentConfig resolve() const {
    exp::ExperimentConfig cfg;
    if (!config.empty()) load_config_file(config, cfg);
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (seed) cfg.seed = *seed;
    if (workers) cfg.workers = *workers;
    cfg.validate();
    return cfg;
  }
};

void add_exp_options(CLI::App* sub, ExpArgs& a) {
  sub->add_option("--config", a.config, "JSON config file");
  sub->add_option("--out", a.out_dir, "directory for CSV/JSON tables");
  sub->add_option("--seed", a.seed, "master seed (default 1)");
  sub->add_option("--workers", a.workers, "worker threads (default 1)");
}

const char* mark(bool ok) { return ok ? "pass" : "FAIL"; }

int run_fig2(const exp::ExperimentConfig& cfg) {
  const exp::Fig2Result r = exp::run_fig2_analogue(cfg);
  std::printf("scenario algo   q_d   rms_alpha_rad rms_vc_mps  active\n");
  for (const auto& c : r.cells)
    std::printf("%8d %-6s %-5g %-13.6e %-11.6e %d\n", c.scenario,
                c.algo.c_str(), c.q_d, c.rms_alpha, c.rms_vc, c.activations);
  std::printf("in-bounds max gap  %.3e  [%s]\n", r.in_bounds_max_gap,
              mark(r.pass_in_bounds));
  std::printf("violation excess   %.4f     [%s]\n", r.out_rel_excess,
              mark(r.pass_out_bounds));
  std::printf("umhe q_d monotone             [%s]\n",
              mark(r.umhe_monotone_qd));
  std::printf("solve ms: n=%d median=%.3f p99=%.3f max=%.3f\n", r.timing.n,
              r.timing.median_ms, r.timing.p99_ms, r.timing.max_ms);
  return r.passed() ? 0 : 1;
}

int run_fig3(const exp::ExperimentConfig& cfg) {
  const exp::Fig3Result r = exp::run_fig3_analogue(cfg);
  std::printf("algo   q_d   bias_kts rms_vc1_mps   active\n");
  for (const auto& c : r.cells)
    std::printf("%-6s %-5g %-8g %-13.6e %d\n", c.algo.c_str(), c.q_d,
                c.bias_kts, c.rms_vc1, c.activated ? 1 : 0);
  std::printf("crossover %.2f kts, gap below %.3e  [%s]\n", r.crossover_kts,
              r.below_max_gap, mark(r.pass_below));
  std::printf("cmhe > umhe above crossover   [%s]\n", mark(r.pass_above));
  std::printf("q_d trend at top amplitude    [%s]\n", mark(r.pass_qd_trend));
  return r.passed() ? 0 : 1;
}

int run_fig4(const exp::ExperimentConfig& cfg) {
  const exp::Fig4Result r = exp::run_fig4_analogue(cfg);
  for (const auto& s : r.scans)
    std::printf("%-9s %-6s min_detectable=%.2f kts  threshold=%.4f kts  "
                "scan_false_alarms=%d\n",
                s.wind_case.c_str(), s.algo.c_str(), s.min_detectable_kts,
                mps_to_knots(s.thresholds.j_vc), s.scan_false_alarms);
  std::printf("cmhe <= umhe in both cases    [%s]\n",
              mark(r.pass_cmhe_leq_umhe));
  std::printf("calibration bank silent       [%s]\n",
              mark(r.pass_zero_false_alarms));
  std::printf("detection monotone            [%s]\n", mark(r.pass_monotone));
  std::printf("calm sanity %.2f <= %.2f kts  [%s]\n", r.calm_min_kts,
              r.calm_bound_kts, mark(r.pass_calm_sanity));
  return r.passed() ? 0 : 1;
}

int run_fig5(const exp::ExperimentConfig& cfg) {
  const exp::Fig5Result r = exp::run_fig5_analogue(cfg);
  for (const auto& run : r.runs)
    std::printf("%-5s alpha=[%d %d %d] vcas=[%d %d %d] false_alarms=%d "
                "max_vc_latency=%.2f s\n",
                run.algo.c_str(), run.alpha_isolated_at[0],
                run.alpha_isolated_at[1], run.alpha_isolated_at[2],
                run.vc_isolated_at[0], run.vc_isolated_at[1],
                run.vc_isolated_at[2], run.false_alarms,
                run.max_vc_latency_s);
  std::printf("cmhe isolates all four        [%s]\n",
              mark(r.pass_cmhe_all_four));
  std::printf("channel 3 stays clean         [%s]\n",
              mark(r.pass_channel3_clean));
  std::printf("aoa isolated by both          [%s]\n", mark(r.pass_aoa_both));
  std::printf("vcas latency under 1 s        [%s]\n",
              mark(r.pass_vc_latency));
  return r.passed() ? 0 : 1;
}

int run_verify(const exp::ExperimentConfig& cfg) {
  const exp::PropertyReport rep = exp::run_property_suites(cfg);
  for (const auto& s : rep.suites)
    std::printf("%-22s %s  %s\n", s.name.c_str(), mark(s.passed),
                s.detail.c_str());
  for (const auto& d : rep.dumps) std::printf("dump: %s\n", d.c_str());
  return rep.all_passed() ? 0 : 1;
}

int run_sensitivity(int n, uint64_t seed) {
  const kkt::Theorem2Report rep = kkt::verify_theorem2(n, seed);
  const int checked = rep.total - rep.skipped_licq;
  std::printf("instances %d (skipped %d without full-rank active rows)\n",
              rep.total, rep.skipped_licq);
  std::printf("X chain ordering      %d/%d  worst eig %.3e\n", rep.chain_pass,
              checked, rep.worst_chain);
  std::printf("weight-scaling order  %d/%d  worst eig %.3e\n",
              rep.weight_pass, checked, rep.worst_weight);
  std::printf("gram ordering         %d/%d  worst eig %.3e "
              "(does not hold in general; see counterexamples)\n",
              rep.gram_pass, checked, rep.worst_gram);
  for (const auto& c : rep.counterexamples)
    std::printf("counterexample: %s\n", c.c_str());
  return (rep.chain_pass == checked && rep.weight_pass == checked) ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"air-data fault detection workbench"};
  app.require_subcommand(1);

  // simulate
  auto* sim_cmd = app.add_subcommand("simulate", "run a scenario, dump CSV");
  double duration = 20.0;
  uint64_t sim_seed = 1;
  std::string sim_out = "trace.csv";
  double wx_target = 8.0, wx_rate = 4.0, wx_hold = 1.0;
  double wz_target = -4.0, wz_rate = 4.0, wz_hold = 2.0;
  double turb_rms = 0.5, turb_hz = 0.5;
  std::vector<std::string> fault_specs;
  sim_cmd->add_option("--duration", duration, "seconds (default 20)");
  sim_cmd->add_option("--seed", sim_seed, "noise seed");
  sim_cmd->add_option("--out", sim_out, "output CSV path");
  sim_cmd->add_option("--wx-target", wx_target, "wind-x ramp target, kts");
  sim_cmd->add_option("--wx-rate", wx_rate, "wind-x ramp rate, kts/s");
  sim_cmd->add_option("--wx-hold", wx_hold, "seconds before the x ramp");
  sim_cmd->add_option("--wz-target", wz_target, "wind-z ramp target, kts");
  sim_cmd->add_option("--wz-rate", wz_rate, "wind-z ramp rate, kts/s");
  sim_cmd->add_option("--wz-hold", wz_hold, "seconds before the z ramp");
  sim_cmd->add_option("--turb-rms", turb_rms, "turbulence rms, kts (0: off)");
  sim_cmd->add_option("--turb-hz", turb_hz, "turbulence bandwidth, Hz");
  sim_cmd->add_option("--fault", fault_specs,
                      "sensor:channel:kind:start:value (aoa deg, vcas kts)");

  // calibrate
  auto* cal_cmd =
      app.add_subcommand("calibrate", "fault-free threshold calibration");
  std::string cal_algo = "cmhe";
  int cal_runs = 3;
  double cal_factor = 1.0;
  uint64_t cal_seed = 1;
  std::string cal_out;
  cal_cmd->add_option("--algo", cal_algo, "cmhe | umhe")
      ->check(CLI::IsMember({"cmhe", "umhe"}));
  cal_cmd->add_option("--runs", cal_runs, "bank size (default 3)")
      ->check(CLI::PositiveNumber);
  cal_cmd->add_option("--factor", cal_factor, "threshold margin factor");
  cal_cmd->add_option("--seed", cal_seed, "bank noise seed");
  cal_cmd->add_option("--out", cal_out, "write thresholds JSON here");

  // experiments + verify
  ExpArgs a2, a3, a4, a5, av;
  auto* fig2_cmd = app.add_subcommand("fig2", "disturbance robustness table");
  auto* fig3_cmd = app.add_subcommand("fig3", "fault sensitivity table");
  auto* fig4_cmd = app.add_subcommand("fig4", "minimal detectable bias scan");
  auto* fig5_cmd = app.add_subcommand("fig5", "four-fault isolation run");
  auto* verify_cmd = app.add_subcommand("verify", "module property suites");
  add_exp_options(fig2_cmd, a2);
  add_exp_options(fig3_cmd, a3);
  add_exp_options(fig4_cmd, a4);
  add_exp_options(fig5_cmd, a5);
  add_exp_options(verify_cmd, av);

  // sensitivity
  auto* sens_cmd =
      app.add_subcommand("sensitivity", "active-set ordering batch");
  int sens_n = 100;
  uint64_t sens_seed = 2024;
  sens_cmd->add_option("--n", sens_n, "instance count")
      ->check(CLI::PositiveNumber);
  sens_cmd->add_option("--seed", sens_seed, "batch seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (sim_cmd->parsed()) {
      sim::ScenarioConfig c = base_scenario(duration, sim_seed);
      if (wx_target != 0.0)
        c.wind.wx.segments = {
            {sim::WindSegment::Kind::Hold, 0.0, 0.0, wx_hold},
            {sim::WindSegment::Kind::Ramp, knots_to_mps(wx_target),
             knots_to_mps(std::abs(wx_rate)), 0.0}};
      if (wz_target != 0.0)
        c.wind.wz.segments = {
            {sim::WindSegment::Kind::Hold, 0.0, 0.0, wz_hold},
            {sim::WindSegment::Kind::Ramp, knots_to_mps(wz_target),
             knots_to_mps(std::abs(wz_rate)), 0.0}};
      if (turb_rms > 0.0)
        c.wind.turbulence = {true, knots_to_mps(turb_rms), turb_hz,
                             sim_seed + 1};
      for (const auto& spec : fault_specs)
        c.faults.push_back(parse_fault(spec));
      write_trace_csv(sim::run_scenario(c), sim_out);
      std::printf("wrote %s\n", sim_out.c_str());
      return 0;
    }
    if (cal_cmd->parsed()) {
      // Envelope calibration: winds and turbulence at the levels the
      // detector must stay silent under.
      std::vector<sim::ScenarioTrace> bank;
      for (int i = 0; i < cal_runs; ++i) {
        sim::ScenarioConfig c = base_scenario(12.0, cal_seed + 97 * i);
        c.wind.wx.segments = {
            {sim::WindSegment::Kind::Hold, 0.0, 0.0, 1.0},
            {sim::WindSegment::Kind::Ramp, knots_to_mps(20.0),
             knots_to_mps(10.0), 0.0}};
        c.wind.wz.segments = {
            {sim::WindSegment::Kind::Hold, 0.0, 0.0, 2.0},
            {sim::WindSegment::Kind::Ramp, knots_to_mps(-8.0),
             knots_to_mps(8.0), 0.0}};
        c.wind.turbulence = {true, knots_to_mps(1.0), 0.5, cal_seed + 31 * i};
        bank.push_back(sim::run_scenario(c));
      }
      fdi::FdiConfig fc;
      fc.estimator.mode =
          cal_algo == "cmhe" ? mhe::Mode::Constrained : mhe::Mode::Unconstrained;
      const fdi::Thresholds th =
          fdi::calibrate_thresholds(bank, fc, cal_factor);
      json j;
      j["algo"] = cal_algo;
      j["runs"] = cal_runs;
      j["factor"] = cal_factor;
      j["j_alpha_rad"] = th.j_alpha;
      j["j_vc_mps"] = th.j_vc;
      j["j_alpha_deg"] = rad_to_deg(th.j_alpha);
      j["j_vc_kts"] = mps_to_knots(th.j_vc);
      const std::string text = j.dump(2) + "\n";
      if (cal_out.empty()) {
        std::fputs(text.c_str(), stdout);
      } else {
        std::ofstream f(cal_out);
        if (!f) throw ConfigError("cannot open " + cal_out);
        f << text;
        std::printf("wrote %s\n", cal_out.c_str());
      }
      return 0;
    }
    if (fig2_cmd->parsed()) return run_fig2(a2.resolve());
    if (fig3_cmd->parsed()) return run_fig3(a3.resolve());
    if (fig4_cmd->parsed()) return run_fig4(a4.resolve());
    if (fig5_cmd->parsed()) return run_fig5(a5.resolve());
    if (verify_cmd->parsed()) return run_verify(av.resolve());
    if (sens_cmd->parsed()) return run_sensitivity(sens_n, sens_seed);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
