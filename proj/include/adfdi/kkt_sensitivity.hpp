#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "adfdi/mhe.hpp"

// Post-hoc analyzer for the estimator's KKT system. Starting from a
// converged solution it assembles the stacked Jacobians, forms the reduced
// solution-map matrices X / X_a (with and without the active bounds), the
// one-step prediction chain Phi, and the residual sensitivity matrices, and
// numerically certifies their algebraic relations: the projector identities
// behind X, the nested ordering of X under growing active sets, and the
// first-order accuracy of the linearized solution map.
namespace adfdi::kkt {

struct StackedSystem {
  Eigen::VectorXd z;       // converged primal stack
  Eigen::VectorXd info;    // information vector the problem was built from
  Eigen::VectorXd vdiag;   // diagonal of V
  Eigen::MatrixXd J1, J2;  // Jacobians of F1, F2 at z
  Eigen::MatrixXd Ja;      // one row per active bound
  std::vector<int> active_index;  // z-positions of the active bounds

  int nz() const { return static_cast<int>(z.size()); }
  int ninfo() const { return static_cast<int>(info.size()); }
  int neq() const { return static_cast<int>(J2.rows()); }
  int nact() const { return static_cast<int>(Ja.rows()); }

  Eigen::MatrixXd J2a() const;  // [J2; Ja]
  Eigen::MatrixXd H() const;    // J1' V^-1 J1
};

// Builds the system at the solution (which must satisfy the solver's KKT
// tolerances; Jacobians are evaluated at sol.z). Active bounds become unit
// rows of Ja. Throws LicqViolation when J2 or [J2; Ja] loses row rank
// (SVD rank with tolerance 1e-10 * sigma_max).
StackedSystem assemble(const mhe::MheProblem& problem,
                       const mhe::MheSolution& sol);

// Synthetic-instance entry point; performs the same rank checks.
StackedSystem make_system(Eigen::VectorXd z, Eigen::VectorXd info,
                          Eigen::VectorXd vdiag, Eigen::MatrixXd J1,
                          Eigen::MatrixXd J2, Eigen::MatrixXd Ja,
                          std::vector<int> active_index = {});

struct XResult {
  Eigen::MatrixXd X;
  bool shifted = false;  // H needed a Levenberg shift (analyzer only)
  double shift = 0.0;
  double route_gap = 0.0;  // max |X_formula - X_projector|
};

// X = H^-1 - H^-1 J' (J H^-1 J')^-1 J H^-1 with J = J2, or J = [J2; Ja]
// when `active`. Cross-computed through the square-root projector route
// X = Pi^-1 P Pi^-1; the gap between the two is recorded.
XResult compute_X(const StackedSystem& sys, bool active);

// Pi^-1 with Pi = H^(1/2) via symmetric eigendecomposition, and the
// orthogonal projector P = I - Pi^-1 J' (J Pi^-2 J')^-1 J Pi^-1.
Eigen::MatrixXd sqrt_h_inverse(const StackedSystem& sys);
Eigen::MatrixXd projector(const StackedSystem& sys, bool active);

struct KktDelta {
  Eigen::VectorXd dz, dlambda, dmu_a;
  Eigen::VectorXd dz_formula;  // X J1' V^-1 eps
  double rel_gap = 0.0;        // |dz - dz_formula|_inf / (1 + |dz|_inf)
};

// Solves the linearized KKT system for an information-vector perturbation
// eps by dense factorization of the full saddle-point matrix, and
// cross-checks the primal step against the closed form. `active` appends
// the Ja rows as extra equalities.
KktDelta solve_kkt_linearized(const StackedSystem& sys,
                              const Eigen::VectorXd& eps, bool active);

// Phi: sensitivity of the one-step output prediction to the information
// vector, C * A * P_s * X J1' V^-1, with A the state-transition Jacobian at
// the filtered state (zero noise) and C the output Jacobian at the
// propagated state. `active` selects the solution map that includes the
// active bounds.
Eigen::MatrixXd compute_phi(const StackedSystem& sys,
                            const Eigen::MatrixXd& A_step,
                            const Eigen::MatrixXd& C_out, bool active = false);

// Flight-model convenience: derives A and C from the two parameter samples
// bracketing the prediction step.
Eigen::MatrixXd compute_phi(const StackedSystem& sys,
                            const air::ParamSample& theta_prev,
                            const air::ParamSample& theta_next, double ts,
                            bool active = false);

struct SensitivityMatrices {
  Eigen::MatrixXd Sf;         // without active bounds
  Eigen::MatrixXd Sf_active;  // with them
  double form_gap = 0.0;      // factored vs flat, relative
};

// Both residual sensitivity matrices in their flat form
// [-Phi J1 X J1' V^-1, I]; each is also assembled through the factored
// triple product and compared (relative gap recorded).
SensitivityMatrices sensitivity_matrices(const StackedSystem& sys,
                                         const Eigen::MatrixXd& Phi);

// One fully analyzed solution: everything the exports consume.
struct SensitivityReport {
  XResult x, x_active;
  Eigen::MatrixXd phi, Sf, Sf_active;
  Eigen::VectorXd eig_x_gap;     // spectrum of X - X_a
  Eigen::VectorXd eig_gram_gap;  // spectrum of Sfa Sfa' - Sf Sf'
  std::vector<int> active_index;
  double form_gap = 0.0;
  bool licq_ok = true;
};

SensitivityReport analyze(const StackedSystem& sys,
                          const Eigen::MatrixXd& A_step,
                          const Eigen::MatrixXd& C_out);
std::string report_json(const SensitivityReport& rep);
std::string report_table(const SensitivityReport& rep);

// Random linear instance for the property batches: stable dynamics, PD
// diagonal weights, constant Jacobians. The model pointer keeps the
// problem's StageModel alive.
struct RandomInstance {
  std::shared_ptr<mhe::LinearStageModel> model;
  mhe::MheProblem problem;
  Eigen::MatrixXd A, B, C;
  Eigen::VectorXd vdiag;
};

RandomInstance random_instance(uint64_t seed, int horizon);

// Ordering checks over one random instance with nested active sets
// {} subset A1 subset A2.
struct Theorem2Case {
  uint64_t seed = 0;
  int n_small = 0, n_big = 0;       // |A1|, |A2|
  bool licq_skipped = false;
  double min_eig_chain = 0.0;       // min eig over X-Xa and Xa-Xa'
  double min_eig_weight = 0.0;      // min eig of (V-J1 Xa J1')-(V-J1 X J1')
  double min_eig_gram = 0.0;        // min eig of Sfa Sfa' - Sf Sf'
  bool chain_ok = false, weight_ok = false, gram_ok = false;
};

struct Theorem2Report {
  int total = 0, skipped_licq = 0;
  int chain_pass = 0, weight_pass = 0, gram_pass = 0;
  double worst_chain = 0.0, worst_weight = 0.0, worst_gram = 0.0;
  std::vector<Theorem2Case> cases;
  std::vector<std::string> counterexamples;  // instance dumps
};

// Batch verification of the active-set ordering claims over seeded random
// instances. Instances whose appended rows break LICQ are skipped and
// counted. `eig_tol` is the PSD tolerance on minimum eigenvalues.
Theorem2Report verify_theorem2(int n_instances, uint64_t seed,
                               double eig_tol = 1e-8);

struct FirstOrderStep {
  double scale = 1.0;           // eps multiplier for this step
  double eps_norm = 0.0;
  double predicted_norm = 0.0;  // |X J1' V^-1 eps|
  double remainder = 0.0;       // |dz_actual - dz_predicted|
  bool active_set_changed = false;
};

// Re-solves the problem with the information vector perturbed by
// eps, eps/2, ..., eps/2^halvings (realized through x_prior and the stage
// measurements; u-slots of eps must be zero) and compares the actual
// solution change against the linear prediction. An active-set flip is
// reported per step, not raised.
std::vector<FirstOrderStep> first_order_validation(
    const mhe::MheProblem& problem, const mhe::MheSolution& base,
    const Eigen::VectorXd& eps, int halvings, const mhe::SolverConfig& scfg);

}  // namespace adfdi::kkt
