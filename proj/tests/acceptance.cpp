// Acceptance gate: every release criterion on one line with its pinned
// tolerance and measured runtime. Two clauses are recorded as expected
// failures and print as XFAIL: the Gram-matrix ordering over the random
// batch (counterexamples exist and are dumped by the property suites) and
// the constrained estimator's q_d trend at the top fault amplitude (the
// pinned-bound residual level is q_d independent, so the RMS will not rise).
// The gate exits nonzero when a required criterion fails or when a recorded
// expected failure unexpectedly passes; either means the numbers moved and
// the recorded state needs review.

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "adfdi/airmodel.hpp"
#include "adfdi/errors.hpp"
#include "adfdi/experiments.hpp"
#include "adfdi/kkt_sensitivity.hpp"
#include "adfdi/mhe.hpp"

using namespace adfdi;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

enum class Status { Pass, Fail, Xfail, Xpass };

struct Line {
  int id = 0;
  Status status = Status::Fail;
  std::string name;
  std::string detail;
  double secs = 0.0;
};

const char* tag(Status s) {
  switch (s) {
    case Status::Pass:
      return "PASS ";
    case Status::Fail:
      return "FAIL ";
    case Status::Xfail:
      return "XFAIL";
    case Status::Xpass:
      return "XPASS";
  }
  return "?";
}

struct Clock {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double lap() {
    const auto t1 = std::chrono::steady_clock::now();
    const double s = std::chrono::duration<double>(t1 - t0).count();
    t0 = t1;
    return s;
  }
};

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

struct Rng {
  std::mt19937_64 eng;
  explicit Rng(uint64_t seed) : eng(seed) {}
  double uniform(double lo, double hi) {
    const double u = (eng() >> 11) * 0x1.0p-53;
    return lo + u * (hi - lo);
  }
  double logu(double lo, double hi) {
    return std::exp(uniform(std::log(lo), std::log(hi)));
  }
};

mhe::HorizonWindow random_window(Rng& r, int m) {
  mhe::HorizonWindow w;
  w.x_prior = Eigen::Vector3d(r.uniform(-1, 1), r.uniform(-1, 1),
                              r.uniform(-1, 1));
  w.P_diag = Eigen::Vector3d(r.logu(0.2, 5), r.logu(0.2, 5), r.logu(0.2, 5));
  for (int i = 0; i + 1 < m; ++i)
    w.Q_diag.push_back(
        Eigen::Vector3d(r.logu(0.2, 5), r.logu(0.2, 5), r.logu(0.2, 5)));
  for (int i = 0; i < m; ++i) {
    w.R_diag.push_back(
        Eigen::Vector3d(r.logu(0.2, 5), r.logu(0.2, 5), r.logu(0.2, 5)));
    w.y.push_back(Eigen::Vector3d(r.uniform(-2, 2), r.uniform(-2, 2),
                                  r.uniform(-2, 2)));
  }
  return w;
}

// Solution of the full equality-pinned KKT system by dense factorization,
// entirely outside the solver's own linear algebra. Active bounds enter as
// unit rows; only the primal block is compared, so the sign convention of
// the bound multipliers does not matter.
double dense_oracle_gap(const mhe::MheProblem& pb, const mhe::MheSolution& sol) {
  const kkt::StackedSystem sys = kkt::assemble(pb, sol);
  const int nz = sys.nz(), m2 = sys.neq(), na = sys.nact();
  const VectorXd z0 = VectorXd::Zero(nz);
  const VectorXd vinv = sys.vdiag.cwiseInverse();
  MatrixXd K = MatrixXd::Zero(nz + m2 + na, nz + m2 + na);
  K.topLeftCorner(nz, nz) = sys.H();
  MatrixXd A(m2 + na, nz);
  A.topRows(m2) = sys.J2;
  A.bottomRows(na) = sys.Ja;
  K.block(0, nz, nz, m2 + na) = A.transpose();
  K.block(nz, 0, m2 + na, nz) = A;
  VectorXd rhs(nz + m2 + na);
  rhs.head(nz) =
      -sys.J1.transpose() * vinv.cwiseProduct(pb.f1(z0) - pb.info_vector());
  rhs.segment(nz, m2) = -pb.f2(z0);
  for (int i = 0; i < na; ++i) {
    const auto& ab = sol.active[i];
    rhs[nz + m2 + i] =
        ab.upper ? pb.z_hi()[ab.index] : pb.z_lo()[ab.index];
  }
  const VectorXd zo = Eigen::FullPivLU<MatrixXd>(K).solve(rhs).head(nz);
  return (sol.z - zo).lpNorm<Eigen::Infinity>() /
         (1.0 + zo.lpNorm<Eigen::Infinity>());
}

air::ParamSample theta_at(int i) {
  air::ParamSample t{118.0, 0.03, 0.006, 0.25, -9.78, 1524.0};
  t.vg += 0.3 * i;
  t.theta += 0.002 * i;
  return t;
}

// Flight-model window around a plausible trajectory, unit-order weights.
struct AirCase {
  mhe::AirStageModel model;
  mhe::MheProblem problem;

  AirCase(int horizon, uint64_t seed, double meas_noise)
      : model(
            [&] {
              std::vector<air::ParamSample> ths;
              for (int i = 0; i < horizon; ++i) ths.push_back(theta_at(i));
              return ths;
            }(),
            0.04),
        problem([&] {
          std::mt19937_64 rng(seed);
          std::normal_distribution<double> gauss(0.0, 1.0);
          VectorXd x(3);
          x << 0.05, 3.0, -1.0;
          mhe::HorizonWindow w;
          w.x_prior =
              x + meas_noise * VectorXd::NullaryExpr(3, [&] { return gauss(rng); });
          w.P_diag = VectorXd::Constant(3, 2.0);
          for (int i = 0; i < horizon; ++i) {
            w.y.push_back(model.output(x, i) +
                          meas_noise *
                              VectorXd::NullaryExpr(3, [&] { return gauss(rng); }));
            w.R_diag.push_back(VectorXd::Constant(3, 0.5));
            if (i + 1 < horizon) {
              w.Q_diag.push_back(VectorXd::Constant(3, 1.0));
              x = model.step(x, VectorXd::Zero(3), i);
            }
          }
          return mhe::build_problem(model, std::move(w),
                                    mhe::Bounds::unbounded(3, 3),
                                    mhe::Mode::Constrained);
        }()) {}
};

const exp::SuiteOutcome* find_suite(const exp::PropertyReport& rep,
                                    const std::string& name) {
  for (const auto& s : rep.suites)
    if (s.name == name) return &s;
  return nullptr;
}

double fig3_rms(const exp::Fig3Result& r, const std::string& algo, double q,
                double bias) {
  for (const auto& c : r.cells)
    if (c.algo == algo && c.q_d == q && c.bias_kts == bias) return c.rms_vc1;
  return -1.0;
}

}  // namespace

int main() {
  std::vector<Line> lines;
  const exp::ExperimentConfig cfg;  // library defaults, nothing written

  std::printf("adfdi acceptance gate\n");

  // Property bundle shared by the equivalence, projector, contract, and
  // first-order criteria; each of them gets the whole bundle's wall time,
  // which only overstates the individual cost.
  Clock clock;
  const exp::PropertyReport props = exp::run_property_suites(cfg);
  const double props_s = clock.lap();

  {  // 1: open-bounds equivalence of the two residual generators
    Line l{1, Status::Fail, "open-bounds equivalence", "suite missing", props_s};
    if (const auto* s = find_suite(props, "estimator-equivalence")) {
      const bool ok = s->passed && props_s < 10.0;
      l.status = ok ? Status::Pass : Status::Fail;
      l.detail = s->detail + ", tolerance 1e-8";
    }
    lines.push_back(l);
  }

  {  // 2: active-set ordering batch; the Gram clause is a recorded failure
    clock.lap();
    const kkt::Theorem2Report rep = kkt::verify_theorem2(100, 2024);
    const double secs = clock.lap();
    const int checked = rep.total - rep.skipped_licq;
    const bool required = rep.total == 100 && checked > 0 &&
                          rep.chain_pass == checked &&
                          rep.weight_pass == checked &&
                          rep.worst_chain >= -1e-8 &&
                          rep.worst_weight >= -1e-8 && secs < 30.0;
    const bool gram = rep.gram_pass == checked && rep.worst_gram >= -1e-8;
    Line l{2, Status::Fail, "solution-map ordering batch", "", secs};
    l.detail = "chain " + std::to_string(rep.chain_pass) + "/" +
               std::to_string(checked) + ", weight " +
               std::to_string(rep.weight_pass) + "/" +
               std::to_string(checked) + ", gram " +
               std::to_string(rep.gram_pass) + "/" + std::to_string(checked) +
               " (worst " + num(rep.worst_gram) + ")";
    if (!required) {
      l.status = Status::Fail;
    } else if (gram) {
      l.status = Status::Xpass;
      l.detail += "; gram ordering held on every instance, review the record";
    } else {
      l.status = Status::Xfail;
      l.detail +=
          "; the gram ordering is not implied by the solution-map ordering "
          "and fails on dumped counterexamples, recorded as expected";
    }
    lines.push_back(l);
  }

  {  // 3: projector identities and the dual-route agreement
    Line l{3, Status::Fail, "projector identities", "suite missing", props_s};
    if (const auto* s = find_suite(props, "projector-identities")) {
      l.status = s->passed ? Status::Pass : Status::Fail;
      l.detail = s->detail + ", tolerance 1e-9";
    }
    lines.push_back(l);
  }

  {  // 4: solver against a dense full-KKT oracle, horizon 3
    clock.lap();
    double worst_gap = 0.0, worst_stat = 0.0, worst_comp = 0.0;
    int accepted = 0, engaged = 0, skipped = 0;
    bool norms_ok = true;

    for (int s = 0; s < 50; ++s) {  // library batch, open bounds
      kkt::RandomInstance ri;
      try {
        ri = kkt::random_instance(41000 + s, 3);
      } catch (const LicqViolation&) {
        ++skipped;
        continue;
      }
      const mhe::MheSolution sol = mhe::solve(ri.problem, {});
      if (!sol.converged) continue;
      ++accepted;
      worst_stat = std::max(worst_stat, sol.stat_norm);
      worst_comp = std::max(worst_comp, sol.comp_norm);
      norms_ok = norms_ok && sol.stat_norm <= 1e-6 && sol.comp_norm <= 1e-8;
      worst_gap = std::max(worst_gap, dense_oracle_gap(ri.problem, sol));
    }

    for (int s = 0; s < 50; ++s) {  // boxed batch, bounds cut the optimum
      Rng r(9000 + s);
      MatrixXd A(3, 3), B(3, 3), C(3, 3);
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
          A(i, j) = r.uniform(-1, 1);
          B(i, j) = r.uniform(-1, 1);
          C(i, j) = r.uniform(-1, 1);
        }
      const double rho = A.eigenvalues().cwiseAbs().maxCoeff();
      if (rho > 0.9) A *= 0.9 / rho;
      if (std::abs(C.determinant()) < 0.1) {
        ++skipped;
        continue;
      }
      mhe::LinearStageModel lsm(A, B, C);
      mhe::HorizonWindow w = random_window(r, 3);
      const mhe::MheProblem free_pb = mhe::build_problem(
          lsm, w, mhe::Bounds::unbounded(3, 3), mhe::Mode::Unconstrained);
      const mhe::MheSolution free_sol = mhe::solve(free_pb, {});
      if (!free_sol.converged) continue;
      const double mx = free_sol.z.cwiseAbs().maxCoeff();
      mhe::Bounds bd = mhe::Bounds::unbounded(3, 3);
      bd.x_lo.setConstant(-0.6 * mx);
      bd.x_hi.setConstant(0.6 * mx);
      bd.u_lo.setConstant(-0.6 * mx);
      bd.u_hi.setConstant(0.6 * mx);
      const mhe::MheProblem pb =
          mhe::build_problem(lsm, w, bd, mhe::Mode::Constrained);
      const mhe::MheSolution sol = mhe::solve(pb, {});
      if (!sol.converged) continue;
      ++accepted;
      if (!sol.active.empty()) ++engaged;
      worst_stat = std::max(worst_stat, sol.stat_norm);
      worst_comp = std::max(worst_comp, sol.comp_norm);
      norms_ok = norms_ok && sol.stat_norm <= 1e-6 && sol.comp_norm <= 1e-8;
      try {
        worst_gap = std::max(worst_gap, dense_oracle_gap(pb, sol));
      } catch (const LicqViolation&) {
        ++skipped;
      }
    }

    const auto* contract = find_suite(props, "kkt-residual-contract");
    const bool ok = accepted >= 80 && engaged >= 20 && norms_ok &&
                    worst_gap <= 1e-7 && contract && contract->passed;
    Line l{4, ok ? Status::Pass : Status::Fail, "dense KKT oracle", "",
           clock.lap()};
    l.detail = "primal gap " + num(worst_gap) + " over " +
               std::to_string(accepted) + " solves (" +
               std::to_string(engaged) + " with active bounds), worst stat " +
               num(worst_stat) + ", comp " + num(worst_comp) +
               "; flight loop: " +
               (contract ? contract->detail : std::string("suite missing"));
    lines.push_back(l);
  }

  {  // 5: finite differences of the Jacobians and the prediction map
    clock.lap();
    double worst_jac = 0.0;
    long jac_points = 0;

    auto probe = [&](const mhe::MheProblem& pb, const VectorXd& z) {
      const MatrixXd j1 = pb.j1(z);
      const MatrixXd j2 = pb.j2(z);
      for (int c = 0; c < pb.nz(); ++c) {
        const double h = 1e-6 * (1.0 + std::abs(z[c]));
        VectorXd zp = z, zm = z;
        zp[c] += h;
        zm[c] -= h;
        const VectorXd d1 = (pb.f1(zp) - pb.f1(zm)) / (2.0 * h);
        const VectorXd d2 = (pb.f2(zp) - pb.f2(zm)) / (2.0 * h);
        worst_jac = std::max(worst_jac,
                             (d1 - j1.col(c)).cwiseAbs().maxCoeff());
        jac_points += d1.size();
        if (d2.size() > 0) {
          worst_jac = std::max(worst_jac,
                               (d2 - j2.col(c)).cwiseAbs().maxCoeff());
          jac_points += d2.size();
        }
      }
    };

    for (int s = 0; s < 10; ++s) {
      kkt::RandomInstance ri;
      try {
        ri = kkt::random_instance(23000 + s, 3);
      } catch (const LicqViolation&) {
        continue;
      }
      VectorXd z = VectorXd::Zero(ri.problem.nz());
      for (int i = 0; i < z.size(); ++i)
        z[i] = 0.1 * std::sin(1.7 * (i + 1) * (s + 1));
      probe(ri.problem, z);
    }
    for (uint64_t seed : {611u, 612u}) {  // nonlinear rows of the flight model
      AirCase ac(4, seed, 0.02);
      VectorXd z = VectorXd::Zero(ac.problem.nz());
      for (int i = 0; i < z.size(); ++i)
        z[i] = 0.05 * std::cos(0.7 * (i + 1) + static_cast<double>(seed));
      probe(ac.problem, z);
    }

    // Prediction-map sensitivity against re-solved central differences.
    double worst_phi = 0.0;
    int phi_points = 0;
    bool phi_clean = true;
    const int horizon = 3;
    for (uint64_t seed : {321u, 322u, 323u}) {
      AirCase ac(horizon, seed, 0.005);
      mhe::SolverConfig scfg;
      scfg.max_iters = 60;
      scfg.tol_stat = 1e-12;
      scfg.tol_eq = 1e-12;
      const mhe::MheSolution base = mhe::solve(ac.problem, scfg);
      if (base.stat_norm > 1e-10 || base.eq_norm > 1e-10 ||
          !base.active.empty()) {
        phi_clean = false;
        continue;
      }
      const kkt::StackedSystem sys = kkt::assemble(ac.problem, base);
      const MatrixXd phi = kkt::compute_phi(sys, theta_at(horizon - 1),
                                            theta_at(horizon), 0.04, false);
      const mhe::AirStageModel chain(
          {theta_at(horizon - 1), theta_at(horizon)}, 0.04);
      const auto predict = [&](const mhe::MheProblem& p) {
        const mhe::MheSolution s = mhe::solve(p, scfg, &base.z);
        if (s.stat_norm > 1e-10 || s.eq_norm > 1e-10) phi_clean = false;
        return chain.output(chain.step(s.filtered(), VectorXd::Zero(3), 0), 1)
            .eval();
      };
      const VectorXd info = ac.problem.info_vector();
      std::vector<std::pair<int, int>> slots;  // (info column, stage or -1)
      for (int j = 0; j < 3; ++j) slots.emplace_back(j, -1);
      for (int i = 0; i < horizon; ++i) {
        const int at = 3 + i * 6 + (i < horizon - 1 ? 3 : 0);
        for (int j = 0; j < 3; ++j) slots.emplace_back(at + j, i);
      }
      for (const auto& [col, stage] : slots) {
        const double h = 1e-6 * (1.0 + std::abs(info[col]));
        mhe::MheProblem plus = ac.problem, minus = ac.problem;
        if (stage < 0) {
          plus.window.x_prior[col] += h;
          minus.window.x_prior[col] -= h;
        } else {
          const int j = col - (3 + stage * 6 + (stage < horizon - 1 ? 3 : 0));
          plus.window.y[static_cast<size_t>(stage)][j] += h;
          minus.window.y[static_cast<size_t>(stage)][j] -= h;
        }
        const VectorXd fd = (predict(plus) - predict(minus)) / (2.0 * h);
        for (int r = 0; r < 3; ++r) {
          worst_phi = std::max(worst_phi, std::abs(fd[r] - phi(r, col)) /
                                              (1.0 + std::abs(phi(r, col))));
          ++phi_points;
        }
      }
    }

    const bool ok = jac_points >= 1000 && worst_jac <= 1e-5 &&
                    phi_clean && phi_points >= 100 && worst_phi <= 1e-4;
    Line l{5, ok ? Status::Pass : Status::Fail,
           "Jacobian and prediction-map finite differences", "", clock.lap()};
    l.detail = "jacobian error " + num(worst_jac) + " over " +
               std::to_string(jac_points) + " entries (tolerance 1e-5), " +
               "prediction map " + num(worst_phi) + " over " +
               std::to_string(phi_points) + " points (tolerance 1e-4)";
    lines.push_back(l);
  }

  {  // 6: Taylor remainder quarters when the perturbation halves
    Line l{6, Status::Fail, "first-order remainder scaling", "suite missing",
           props_s};
    if (const auto* s = find_suite(props, "first-order-scaling")) {
      l.status = s->passed ? Status::Pass : Status::Fail;
      l.detail = s->detail + ", window [2, 8]";
    }
    lines.push_back(l);
  }

  exp::Fig2Result fig2;
  {  // 7: wind-envelope robustness split
    clock.lap();
    fig2 = exp::run_fig2_analogue(cfg);
    const double secs = clock.lap();
    const bool ok = fig2.passed() && fig2.in_bounds_max_gap <= 1e-9 &&
                    fig2.out_rel_excess >= 0.05 && secs < 120.0;
    Line l{7, ok ? Status::Pass : Status::Fail, "wind-envelope robustness",
           "", secs};
    l.detail = "in-bounds gap " + num(fig2.in_bounds_max_gap) +
               " (tolerance 1e-9), violation excess " +
               num(100.0 * fig2.out_rel_excess) + "% (needs 5%)";
    lines.push_back(l);
  }

  {  // 8: fault-amplitude sweep; the constrained q_d rise is a recorded miss
    clock.lap();
    const exp::Fig3Result r = exp::run_fig3_analogue(cfg);
    const double secs = clock.lap();
    const double q_lo = cfg.q_d_sweep.front(), q_hi = cfg.q_d_sweep.back();
    double top = 0.0;
    for (const auto& c : r.cells) top = std::max(top, c.bias_kts);
    const double umhe_lo = fig3_rms(r, "umhe", q_lo, top);
    const double umhe_hi = fig3_rms(r, "umhe", q_hi, top);
    const double cmhe_lo = fig3_rms(r, "cmhe", q_lo, top);
    const double cmhe_hi = fig3_rms(r, "cmhe", q_hi, top);
    const bool umhe_falls = umhe_lo > 0.0 && umhe_hi > 0.0 && umhe_hi < umhe_lo;
    const bool cmhe_rises = cmhe_lo > 0.0 && cmhe_hi > 0.0 && cmhe_hi > cmhe_lo;
    const bool required = r.pass_below && r.below_max_gap <= 1e-9 &&
                          r.pass_above && umhe_falls && secs < 300.0;
    Line l{8, Status::Fail, "fault-amplitude sensitivity sweep", "", secs};
    l.detail = "crossover " + num(r.crossover_kts) + " kt, below gap " +
               num(r.below_max_gap) + ", q_d " + num(q_lo) + " to " +
               num(q_hi) + " at " + num(top) + " kt: unconstrained " +
               num(umhe_lo) + " to " + num(umhe_hi) + ", constrained " +
               num(cmhe_lo) + " to " + num(cmhe_hi);
    if (!required) {
      l.status = Status::Fail;
    } else if (cmhe_rises) {
      l.status = Status::Xpass;
      l.detail += "; constrained RMS rose with q_d, review the record";
    } else {
      l.status = Status::Xfail;
      l.detail +=
          "; constrained RMS does not rise with q_d at the top amplitude: "
          "the estimate is pinned at the wind bound there and the pinned "
          "residual level is q_d independent, recorded as expected";
    }
    lines.push_back(l);
  }

  {  // 9: minimal detectable bias scans under calibrated thresholds
    clock.lap();
    const exp::Fig4Result r = exp::run_fig4_analogue(cfg);
    const double secs = clock.lap();
    const bool ok = r.passed() && cfg.fig4_step_kts == 0.1 && secs < 600.0;
    Line l{9, ok ? Status::Pass : Status::Fail, "minimal detectable bias",
           "", secs};
    std::string mins;
    for (const auto& s : r.scans)
      if (s.wind_case != "calm")
        mins += s.wind_case + "/" + s.algo + " " +
                num(s.min_detectable_kts) + " kt, ";
    l.detail = mins + "0.1 kt grid, calibration bank silent: " +
               (r.pass_zero_false_alarms ? "yes" : "no") + ", calm floor " +
               num(r.calm_min_kts) + " kt";
    lines.push_back(l);
  }

  {  // 10: four-fault isolation with healthy channels untouched
    clock.lap();
    const exp::Fig5Result r = exp::run_fig5_analogue(cfg);
    const double secs = clock.lap();
    const bool ok = r.passed() && secs < 120.0;
    Line l{10, ok ? Status::Pass : Status::Fail, "four-fault isolation", "",
           secs};
    int fa = 0;
    for (const auto& run : r.runs) fa += run.false_alarms;
    std::string iso;
    if (!r.runs.empty()) {
      const auto& c = r.runs.front();
      iso = "isolated at samples " + std::to_string(c.vc_isolated_at[0]) +
            "/" + std::to_string(c.vc_isolated_at[1]) + " (airspeed), " +
            std::to_string(c.alpha_isolated_at[0]) + "/" +
            std::to_string(c.alpha_isolated_at[1]) + " (vane), ";
    }
    l.detail = iso + "false alarms " + std::to_string(fa) +
               ", third channels clean: " +
               (r.pass_channel3_clean ? "yes" : "no");
    lines.push_back(l);
  }

  {  // 11: solve timing, informational only
    const bool ok = fig2.timing.n > 0 && fig2.timing.median_ms < 10.0 &&
                    fig2.timing.p99_ms < 40.0;
    Line l{11, ok ? Status::Pass : Status::Fail, "solve timing", "", 0.0};
    l.detail = "median " + num(fig2.timing.median_ms) + " ms (budget 10), p99 " +
               num(fig2.timing.p99_ms) + " ms (budget 40), max " +
               num(fig2.timing.max_ms) + " ms over " +
               std::to_string(fig2.timing.n) +
               " horizon-5 solves; informational, never gates";
    lines.push_back(l);
  }

  int fails = 0, xfails = 0, xpasses = 0, passes = 0;
  for (const auto& l : lines) {
    std::printf(" %2d  %s %s: %s", l.id, tag(l.status), l.name.c_str(),
                l.detail.c_str());
    if (l.secs > 0.0)
      std::printf(" [%.1f s]", l.secs);
    std::printf("\n");
    switch (l.status) {
      case Status::Pass:
        ++passes;
        break;
      case Status::Fail:
        if (l.id != 11) ++fails;  // timing is non-blocking
        break;
      case Status::Xfail:
        ++xfails;
        break;
      case Status::Xpass:
        ++xpasses;
        break;
    }
  }

  const bool ok = fails == 0 && xpasses == 0;
  std::printf("acceptance: %s (%d pass, %d fail, %d expected failures%s)\n",
              ok ? "PASS" : "FAIL", passes, fails, xfails,
              xpasses ? ", unexpected passes need review" : "");
  return ok ? 0 : 1;
}
