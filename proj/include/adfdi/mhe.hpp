#pragma once

#include <Eigen/Dense>
#include <array>
#include <deque>
#include <optional>
#include <vector>

#include "adfdi/airmodel.hpp"
#include "adfdi/simulator.hpp"

// Horizon-N constrained nonlinear least squares over the stacked variable
// z = (x_0, u_0, ..., x_{M-2}, u_{M-2}, x_{M-1}):
//
//   min  1/2|x_0 - x_prior|^2_{P^-1} + 1/2 sum|u_i|^2_{Q^-1}
//                                    + 1/2 sum|y_i - h(x_i)|^2_{R^-1}
//   s.t. F(x_i, u_i) - x_{i+1} = 0,   lo <= (x_i, u_i) <= hi
//
// solved by Gauss-Newton SQP; each QP subproblem by a Mehrotra
// predictor-corrector interior-point method on the box constraints.
namespace adfdi::mhe {

// Stage-wise model interface. The flight model implements it with the
// per-stage exogenous parameters baked in; dense linear instances serve the
// solver oracles and the sensitivity batches.
class StageModel {
 public:
  virtual ~StageModel() = default;
  virtual int nx() const = 0;
  virtual int nu() const = 0;
  virtual int ny() const = 0;
  virtual Eigen::VectorXd output(const Eigen::VectorXd& x, int stage) const = 0;
  virtual Eigen::MatrixXd output_jac(const Eigen::VectorXd& x,
                                     int stage) const = 0;
  virtual Eigen::VectorXd step(const Eigen::VectorXd& x,
                               const Eigen::VectorXd& u, int stage) const = 0;
  virtual void step_jac(const Eigen::VectorXd& x, const Eigen::VectorXd& u,
                        int stage, Eigen::MatrixXd& A,
                        Eigen::MatrixXd& B) const = 0;
};

// x+ = A x + B u, y = C x; stage-invariant.
class LinearStageModel : public StageModel {
 public:
  LinearStageModel(Eigen::MatrixXd A, Eigen::MatrixXd B, Eigen::MatrixXd C);
  int nx() const override { return static_cast<int>(A_.rows()); }
  int nu() const override { return static_cast<int>(B_.cols()); }
  int ny() const override { return static_cast<int>(C_.rows()); }
  Eigen::VectorXd output(const Eigen::VectorXd& x, int) const override;
  Eigen::MatrixXd output_jac(const Eigen::VectorXd&, int) const override;
  Eigen::VectorXd step(const Eigen::VectorXd& x, const Eigen::VectorXd& u,
                       int) const override;
  void step_jac(const Eigen::VectorXd&, const Eigen::VectorXd&, int,
                Eigen::MatrixXd& A, Eigen::MatrixXd& B) const override;

 private:
  Eigen::MatrixXd A_, B_, C_;
};

// Flight model over a window of exogenous parameter samples.
class AirStageModel : public StageModel {
 public:
  AirStageModel(std::vector<air::ParamSample> thetas, double ts);
  int nx() const override { return 3; }
  int nu() const override { return 3; }
  int ny() const override { return 3; }
  Eigen::VectorXd output(const Eigen::VectorXd& x, int stage) const override;
  Eigen::MatrixXd output_jac(const Eigen::VectorXd& x,
                             int stage) const override;
  Eigen::VectorXd step(const Eigen::VectorXd& x, const Eigen::VectorXd& u,
                       int stage) const override;
  void step_jac(const Eigen::VectorXd& x, const Eigen::VectorXd& u, int stage,
                Eigen::MatrixXd& A, Eigen::MatrixXd& B) const override;

 private:
  std::vector<air::ParamSample> thetas_;
  double ts_;
};

// Tuning weights; the diagonal measurement weight scales with the number of
// healthy sensors fused into each component.
struct Weights {
  double p_alpha = 1e-6;
  double p_d = 1.0;
  double q_alpha = 1e-8;
  double q_d = 1.0;
  double r_alpha = 1e-8;
  double r_vz = 2.5e-3;
  double r_vc = 2.5e-3;

  Eigen::Vector3d P() const { return {p_alpha, p_d, p_d}; }
  Eigen::Vector3d Q() const { return {q_alpha, q_d, q_d}; }
  Eigen::Vector3d R(int n_alpha, int n_vc) const;
};

enum class Mode { Constrained, Unconstrained };

struct Bounds {
  Eigen::VectorXd x_lo, x_hi, u_lo, u_hi;

  static Bounds unbounded(int nx, int nu);
  // alpha and u_alpha free; |W_x| <= 120 kt, |W_z| <= 30 kt,
  // |u_dx|, |u_dz| <= 15 kt/s.
  static Bounds flight_defaults();
};

// One horizon of data, oldest sample first.
struct HorizonWindow {
  std::vector<Eigen::VectorXd> y;       // M fused measurements
  Eigen::VectorXd x_prior;              // anchors the oldest state
  Eigen::VectorXd P_diag;               // nx
  std::vector<Eigen::VectorXd> Q_diag;  // M-1 entries of nu
  std::vector<Eigen::VectorXd> R_diag;  // M entries of ny

  int horizon() const { return static_cast<int>(y.size()); }
};

// Assembled problem. Holds a reference to the model; the caller keeps it
// alive for the problem's lifetime.
struct MheProblem {
  const StageModel* model = nullptr;
  HorizonWindow window;
  Bounds bounds;
  Mode mode = Mode::Constrained;

  int horizon() const { return window.horizon(); }
  int nz() const;
  int neq() const;
  int x_index(int i) const;
  int u_index(int i) const;

  // Stacked bound vectors over z (+-inf where free or Unconstrained).
  Eigen::VectorXd z_lo() const;
  Eigen::VectorXd z_hi() const;

  // Information vector I = [x_prior; 0; y_0; 0; y_1; ...; y_{M-1}] and the
  // matching weight diagonal V = diag(P, Q, R, ..., Q, R, R).
  Eigen::VectorXd info_vector() const;
  Eigen::VectorXd v_diag() const;

  // F1 maps z to the model-implied information vector; F2 stacks the
  // dynamics equalities F(x_i, u_i) - x_{i+1}.
  Eigen::VectorXd f1(const Eigen::VectorXd& z) const;
  Eigen::MatrixXd j1(const Eigen::VectorXd& z) const;
  Eigen::VectorXd f2(const Eigen::VectorXd& z) const;
  Eigen::MatrixXd j2(const Eigen::VectorXd& z) const;

  double objective(const Eigen::VectorXd& z) const;
};

MheProblem build_problem(const StageModel& model, HorizonWindow window,
                         Bounds bounds, Mode mode);

struct SolverConfig {
  // Full convergence by default; `realtime` switches to a fixed iteration
  // budget with unit steps.
  int max_iters = 30;
  bool realtime = false;
  int realtime_iters = 3;

  double tol_stat = 1e-6;  // scaled by 1 + |g|_inf
  double tol_eq = 1e-8;    // scaled by 1 + |z|_inf
  double tol_comp = 1e-8;  // per-bound mu * slack

  double ip_tol = 1e-12;
  int ip_max_iters = 60;
  double ip_boundary = 0.9995;  // fraction-to-boundary factor

  double active_slack_tol = 1e-6;  // * (1 + |bound|)
  double active_mult_tol = 1e-8;

  double ls_c1 = 1e-4;
  int ls_max = 30;
};

struct ActiveBound {
  int index = 0;  // position in z
  bool upper = false;
  double multiplier = 0.0;
};

struct MheSolution {
  Eigen::VectorXd z;
  Eigen::VectorXd lambda;
  Eigen::VectorXd mu_lo, mu_hi;
  std::vector<ActiveBound> active;
  double stat_norm = 0.0, eq_norm = 0.0, comp_norm = 0.0;
  int iterations = 0;
  double wall_ms = 0.0;
  bool converged = false;
  // Per accepted SQP step: l1 merit {before, after} under that step's
  // penalty weight. after <= before on every accepted step.
  std::vector<std::array<double, 2>> merit_history;

  int nx = 0, nu = 0, horizon = 0;
  Eigen::VectorXd state_at(int i) const;
  Eigen::VectorXd input_at(int i) const;
  Eigen::VectorXd filtered() const { return state_at(horizon - 1); }
};

MheSolution solve(const MheProblem& problem, const SolverConfig& cfg,
                  const Eigen::VectorXd* z_init = nullptr);

// Box QP:  min 1/2 d'H d + g'd  s.t.  A d + c = 0,  lo <= d <= hi.
// Infeasible-start Mehrotra predictor-corrector; A may have zero rows.
struct QpResult {
  Eigen::VectorXd d, lambda, mu_lo, mu_hi;
  bool converged = false;
  int iterations = 0;
};

QpResult solve_box_qp(const Eigen::MatrixXd& H, const Eigen::VectorXd& g,
                      const Eigen::MatrixXd& A, const Eigen::VectorXd& c,
                      const Eigen::VectorXd& lo, const Eigen::VectorXd& hi,
                      const SolverConfig& cfg);

// Triplex fusion: mean over healthy channels per component.
struct FusedMeasurement {
  Eigen::Vector3d y;
  int n_alpha = 3, n_vc = 3;
};

FusedMeasurement fuse_measurements(const sim::MeasurementBundle& bundle,
                                   const std::array<bool, 3>& healthy_alpha,
                                   const std::array<bool, 3>& healthy_vc);

struct EstimatorConfig {
  int horizon = 5;
  double ts = 0.04;
  Weights weights;
  Bounds bounds = Bounds::flight_defaults();
  Mode mode = Mode::Constrained;
  SolverConfig solver;
};

// Sliding-window estimator: growing horizon on startup, warm-started solves,
// shift-by-one prior update, window-wide re-fusion under the current healthy
// sets at every solve.
class MovingHorizonEstimator {
 public:
  explicit MovingHorizonEstimator(EstimatorConfig cfg);

  // One-step-ahead output prediction for the incoming sample, available
  // after the first solve: h(F(x_filtered, 0, theta_prev), theta_next).
  std::optional<Eigen::Vector3d> predict_next(
      const air::ParamSample& theta_next) const;

  MheSolution step(const sim::MeasurementBundle& bundle,
                   const air::ParamSample& theta,
                   const std::array<bool, 3>& healthy_alpha,
                   const std::array<bool, 3>& healthy_vc);

  const EstimatorConfig& config() const { return cfg_; }
  int window_size() const { return static_cast<int>(bundles_.size()); }
  const Eigen::VectorXd& prior() const { return x_prior_; }

 private:
  EstimatorConfig cfg_;
  std::deque<sim::MeasurementBundle> bundles_;
  std::deque<air::ParamSample> thetas_;
  Eigen::VectorXd x_prior_;
  std::optional<MheSolution> last_;
  bool started_ = false;
};

}  // namespace adfdi::mhe
