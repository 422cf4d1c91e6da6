#include "adfdi/mhe.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <utility>

#include "adfdi/errors.hpp"
#include "adfdi/units.hpp"

namespace adfdi::mhe {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

using Eigen::MatrixXd;
using Eigen::VectorXd;

}  // namespace

LinearStageModel::LinearStageModel(Eigen::MatrixXd A, Eigen::MatrixXd B,
                                   Eigen::MatrixXd C)
    : A_(std::move(A)), B_(std::move(B)), C_(std::move(C)) {
  if (A_.rows() != A_.cols() || B_.rows() != A_.rows() ||
      C_.cols() != A_.rows())
    throw DimensionMismatch("linear model blocks disagree");
}

VectorXd LinearStageModel::output(const VectorXd& x, int) const {
  return C_ * x;
}
MatrixXd LinearStageModel::output_jac(const VectorXd&, int) const {
  return C_;
}
VectorXd LinearStageModel::step(const VectorXd& x, const VectorXd& u,
                                int) const {
  return A_ * x + B_ * u;
}
void LinearStageModel::step_jac(const VectorXd&, const VectorXd&, int,
                                MatrixXd& A, MatrixXd& B) const {
  A = A_;
  B = B_;
}

AirStageModel::AirStageModel(std::vector<air::ParamSample> thetas, double ts)
    : thetas_(std::move(thetas)), ts_(ts) {
  if (thetas_.empty()) throw DimensionMismatch("empty parameter window");
}

namespace {

const air::ParamSample& theta_checked(const std::vector<air::ParamSample>& v,
                                      int stage) {
  if (stage < 0 || stage >= static_cast<int>(v.size()))
    throw DimensionMismatch("stage index outside parameter window");
  return v[stage];
}

}  // namespace

VectorXd AirStageModel::output(const VectorXd& x, int stage) const {
  return air::outputs(air::AugmentedState::from_vec(x),
                      theta_checked(thetas_, stage));
}
MatrixXd AirStageModel::output_jac(const VectorXd& x, int stage) const {
  return air::jacobians(air::AugmentedState::from_vec(x),
                        theta_checked(thetas_, stage), ts_)
      .output_x;
}
VectorXd AirStageModel::step(const VectorXd& x, const VectorXd& u,
                             int stage) const {
  return air::euler_step(air::AugmentedState::from_vec(x),
                         air::NoiseInput::from_vec(u),
                         theta_checked(thetas_, stage), ts_)
      .vec();
}
void AirStageModel::step_jac(const VectorXd& x, const VectorXd&, int stage,
                             MatrixXd& A, MatrixXd& B) const {
  const air::Jacobians j = air::jacobians(
      air::AugmentedState::from_vec(x), theta_checked(thetas_, stage), ts_);
  A = j.step_x;
  B = j.step_u;
}

Eigen::Vector3d Weights::R(int n_alpha, int n_vc) const {
  if (n_alpha < 1 || n_alpha > 3 || n_vc < 1 || n_vc > 3)
    throw DimensionMismatch("healthy sensor counts must be in 1..3");
  return {r_alpha / n_alpha, r_vz, r_vc / n_vc};
}

Bounds Bounds::unbounded(int nx, int nu) {
  Bounds b;
  b.x_lo = VectorXd::Constant(nx, -kInf);
  b.x_hi = VectorXd::Constant(nx, kInf);
  b.u_lo = VectorXd::Constant(nu, -kInf);
  b.u_hi = VectorXd::Constant(nu, kInf);
  return b;
}

Bounds Bounds::flight_defaults() {
  Bounds b = unbounded(3, 3);
  b.x_lo[1] = -knots_to_mps(120.0);
  b.x_hi[1] = knots_to_mps(120.0);
  b.x_lo[2] = -knots_to_mps(30.0);
  b.x_hi[2] = knots_to_mps(30.0);
  for (int i : {1, 2}) {
    b.u_lo[i] = -knots_to_mps(15.0);
    b.u_hi[i] = knots_to_mps(15.0);
  }
  return b;
}

int MheProblem::nz() const {
  const int m = horizon();
  return m * model->nx() + (m - 1) * model->nu();
}
int MheProblem::neq() const { return (horizon() - 1) * model->nx(); }
int MheProblem::x_index(int i) const {
  return i * (model->nx() + model->nu());
}
int MheProblem::u_index(int i) const {
  return i * (model->nx() + model->nu()) + model->nx();
}

VectorXd MheProblem::z_lo() const {
  VectorXd lo = VectorXd::Constant(nz(), -kInf);
  if (mode == Mode::Unconstrained) return lo;
  const int m = horizon();
  for (int i = 0; i < m; ++i) {
    lo.segment(x_index(i), model->nx()) = bounds.x_lo;
    if (i + 1 < m) lo.segment(u_index(i), model->nu()) = bounds.u_lo;
  }
  return lo;
}

VectorXd MheProblem::z_hi() const {
  VectorXd hi = VectorXd::Constant(nz(), kInf);
  if (mode == Mode::Unconstrained) return hi;
  const int m = horizon();
  for (int i = 0; i < m; ++i) {
    hi.segment(x_index(i), model->nx()) = bounds.x_hi;
    if (i + 1 < m) hi.segment(u_index(i), model->nu()) = bounds.u_hi;
  }
  return hi;
}

namespace {

int info_dim(const MheProblem& p) {
  const int m = p.horizon();
  return p.model->nx() + (m - 1) * (p.model->nu() + p.model->ny()) +
         p.model->ny();
}

}  // namespace

VectorXd MheProblem::info_vector() const {
  const int m = horizon();
  const int nx = model->nx(), nu = model->nu(), ny = model->ny();
  VectorXd I = VectorXd::Zero(info_dim(*this));
  I.head(nx) = window.x_prior;
  int at = nx;
  for (int i = 0; i < m; ++i) {
    if (i + 1 < m) at += nu;  // zero target for u_i
    I.segment(at, ny) = window.y[i];
    at += ny;
  }
  return I;
}

VectorXd MheProblem::v_diag() const {
  const int m = horizon();
  const int nx = model->nx(), nu = model->nu(), ny = model->ny();
  VectorXd v(info_dim(*this));
  v.head(nx) = window.P_diag;
  int at = nx;
  for (int i = 0; i < m; ++i) {
    if (i + 1 < m) {
      v.segment(at, nu) = window.Q_diag[i];
      at += nu;
    }
    v.segment(at, ny) = window.R_diag[i];
    at += ny;
  }
  return v;
}

VectorXd MheProblem::f1(const VectorXd& z) const {
  const int m = horizon();
  const int nx = model->nx(), nu = model->nu(), ny = model->ny();
  VectorXd out(info_dim(*this));
  out.head(nx) = z.segment(x_index(0), nx);
  int at = nx;
  for (int i = 0; i < m; ++i) {
    if (i + 1 < m) {
      out.segment(at, nu) = z.segment(u_index(i), nu);
      at += nu;
    }
    out.segment(at, ny) = model->output(z.segment(x_index(i), nx), i);
    at += ny;
  }
  return out;
}

MatrixXd MheProblem::j1(const VectorXd& z) const {
  const int m = horizon();
  const int nx = model->nx(), nu = model->nu(), ny = model->ny();
  MatrixXd J = MatrixXd::Zero(info_dim(*this), nz());
  J.block(0, x_index(0), nx, nx).setIdentity();
  int at = nx;
  for (int i = 0; i < m; ++i) {
    if (i + 1 < m) {
      J.block(at, u_index(i), nu, nu).setIdentity();
      at += nu;
    }
    J.block(at, x_index(i), ny, nx) =
        model->output_jac(z.segment(x_index(i), nx), i);
    at += ny;
  }
  return J;
}

VectorXd MheProblem::f2(const VectorXd& z) const {
  const int m = horizon();
  const int nx = model->nx(), nu = model->nu();
  VectorXd out(neq());
  for (int i = 0; i + 1 < m; ++i) {
    out.segment(i * nx, nx) =
        model->step(z.segment(x_index(i), nx), z.segment(u_index(i), nu), i) -
        z.segment(x_index(i + 1), nx);
  }
  return out;
}

MatrixXd MheProblem::j2(const VectorXd& z) const {
  const int m = horizon();
  const int nx = model->nx(), nu = model->nu();
  MatrixXd J = MatrixXd::Zero(neq(), nz());
  MatrixXd A(nx, nx), B(nx, nu);
  for (int i = 0; i + 1 < m; ++i) {
    model->step_jac(z.segment(x_index(i), nx), z.segment(u_index(i), nu), i, A,
                    B);
    J.block(i * nx, x_index(i), nx, nx) = A;
    J.block(i * nx, u_index(i), nx, nu) = B;
    J.block(i * nx, x_index(i + 1), nx, nx) = -MatrixXd::Identity(nx, nx);
  }
  return J;
}

double MheProblem::objective(const VectorXd& z) const {
  const VectorXd rho = info_vector() - f1(z);
  return 0.5 * rho.dot(rho.cwiseQuotient(v_diag()));
}

MheProblem build_problem(const StageModel& model, HorizonWindow window,
                         Bounds bounds, Mode mode) {
  const int m = window.horizon();
  if (m == 0) throw ConfigError("empty horizon window");
  const int nx = model.nx(), nu = model.nu(), ny = model.ny();
  if (window.x_prior.size() != nx || window.P_diag.size() != nx)
    throw DimensionMismatch("prior block size mismatch");
  if (static_cast<int>(window.Q_diag.size()) != m - 1 ||
      static_cast<int>(window.R_diag.size()) != m)
    throw DimensionMismatch("per-stage weight count mismatch");
  for (const auto& y : window.y)
    if (y.size() != ny) throw DimensionMismatch("measurement size mismatch");
  for (const auto& q : window.Q_diag)
    if (q.size() != nu) throw DimensionMismatch("Q block size mismatch");
  for (const auto& r : window.R_diag)
    if (r.size() != ny) throw DimensionMismatch("R block size mismatch");
  if (bounds.x_lo.size() != nx || bounds.x_hi.size() != nx ||
      bounds.u_lo.size() != nu || bounds.u_hi.size() != nu)
    throw DimensionMismatch("bound vector size mismatch");

  MheProblem p;
  p.model = &model;
  p.window = std::move(window);
  p.bounds = std::move(bounds);
  p.mode = mode;
  if ((p.v_diag().array() <= 0.0).any())
    throw ConfigError("weights must be strictly positive");
  if (((p.z_hi() - p.z_lo()).array() < 0.0).any())
    throw ConfigError("bounds must satisfy lo <= hi");
  return p;
}

VectorXd MheSolution::state_at(int i) const {
  return z.segment(i * (nx + nu), nx);
}
VectorXd MheSolution::input_at(int i) const {
  return z.segment(i * (nx + nu) + nx, nu);
}

// ---------------------------------------------------------------------------
// Box QP interior-point method.

namespace {

// Indices of finite entries plus slack/multiplier state for one bound side.
struct BoundSide {
  std::vector<int> idx;
  VectorXd s, mu;
  VectorXd resid;  // s - slack(d)
};

double max_product(const BoundSide& b) {
  double m = 0.0;
  for (int j = 0; j < b.s.size(); ++j)
    m = std::max(m, b.s[j] * b.mu[j]);
  return m;
}

// Largest step in [0,1] keeping v + a*dv >= (1-tau)*v.
double step_to_boundary(const VectorXd& v, const VectorXd& dv, double tau) {
  double a = 1.0;
  for (int j = 0; j < v.size(); ++j)
    if (dv[j] < 0.0) a = std::min(a, -tau * v[j] / dv[j]);
  return a;
}

}  // namespace

QpResult solve_box_qp(const MatrixXd& H, const VectorXd& g, const MatrixXd& A,
                      const VectorXd& c, const VectorXd& lo, const VectorXd& hi,
                      const SolverConfig& cfg) {
  const int n = static_cast<int>(H.rows());
  const int m = static_cast<int>(A.rows());
  QpResult out;
  out.d = VectorXd::Zero(n);
  out.lambda = VectorXd::Zero(m);
  out.mu_lo = VectorXd::Zero(n);
  out.mu_hi = VectorXd::Zero(n);

  BoundSide blo, bhi;
  for (int i = 0; i < n; ++i) {
    if (lo[i] > hi[i]) throw ConfigError("QP bounds must satisfy lo <= hi");
    if (std::isfinite(lo[i])) blo.idx.push_back(i);
    if (std::isfinite(hi[i])) bhi.idx.push_back(i);
  }

  // Equality-only path: one saddle-point solve. This is the lane shared by
  // unconstrained mode and constrained mode with infinite bounds.
  if (blo.idx.empty() && bhi.idx.empty()) {
    MatrixXd K = MatrixXd::Zero(n + m, n + m);
    K.topLeftCorner(n, n) = H;
    if (m > 0) {
      K.topRightCorner(n, m) = A.transpose();
      K.bottomLeftCorner(m, n) = A;
    }
    VectorXd rhs(n + m);
    rhs.head(n) = -g;
    rhs.tail(m) = -c;
    const VectorXd sol = Eigen::PartialPivLU<MatrixXd>(K).solve(rhs);
    if (!sol.allFinite()) throw SingularKkt("singular equality KKT system");
    const double err = (K * sol - rhs).lpNorm<Eigen::Infinity>() /
                       (1.0 + rhs.lpNorm<Eigen::Infinity>());
    if (err > 1e-8) throw SingularKkt("equality KKT solve lost accuracy");
    out.d = sol.head(n);
    out.lambda = sol.tail(m);
    out.converged = true;
    out.iterations = 1;
    return out;
  }

  const int nlo = static_cast<int>(blo.idx.size());
  const int nhi = static_cast<int>(bhi.idx.size());
  const double mu0 = std::max(1.0, 0.01 * (1.0 + g.lpNorm<Eigen::Infinity>()));
  auto init_side = [&](BoundSide& b, const VectorXd& slack0) {
    const int k = static_cast<int>(b.idx.size());
    b.s.resize(k);
    b.mu.resize(k);
    for (int j = 0; j < k; ++j) {
      b.s[j] = std::max(slack0[j], 1.0);
      b.mu[j] = mu0;
    }
  };
  VectorXd slo0(nlo), shi0(nhi);
  for (int j = 0; j < nlo; ++j) slo0[j] = -lo[blo.idx[j]];  // d = 0
  for (int j = 0; j < nhi; ++j) shi0[j] = hi[bhi.idx[j]];
  init_side(blo, slo0);
  init_side(bhi, shi0);

  VectorXd d = VectorXd::Zero(n);
  VectorXd lam = VectorXd::Zero(m);
  const int nk = n + m;
  MatrixXd K = MatrixXd::Zero(nk, nk);
  VectorXd rhs(nk), r_d(n), r_p(m);
  const double gscale = 1.0 + g.lpNorm<Eigen::Infinity>();
  const double cscale = 1.0 + (m > 0 ? c.lpNorm<Eigen::Infinity>() : 0.0);
  double sscale = 1.0;
  for (int j : blo.idx) sscale = std::max(sscale, 1.0 + std::abs(lo[j]));
  for (int j : bhi.idx) sscale = std::max(sscale, 1.0 + std::abs(hi[j]));
  const double comp_target = std::min(1e-10, 0.01 * cfg.tol_comp);

  for (int it = 0; it < cfg.ip_max_iters; ++it) {
    // Residuals at the current iterate.
    r_d = H * d + g;
    if (m > 0) r_d += A.transpose() * lam;
    for (int j = 0; j < nlo; ++j) r_d[blo.idx[j]] -= blo.mu[j];
    for (int j = 0; j < nhi; ++j) r_d[bhi.idx[j]] += bhi.mu[j];
    if (m > 0) r_p = A * d + c;
    blo.resid.resize(nlo);
    for (int j = 0; j < nlo; ++j)
      blo.resid[j] = blo.s[j] - (d[blo.idx[j]] - lo[blo.idx[j]]);
    bhi.resid.resize(nhi);
    for (int j = 0; j < nhi; ++j)
      bhi.resid[j] = bhi.s[j] - (hi[bhi.idx[j]] - d[bhi.idx[j]]);

    const double rd_n = r_d.lpNorm<Eigen::Infinity>() / gscale;
    const double rp_n =
        m > 0 ? r_p.lpNorm<Eigen::Infinity>() / cscale : 0.0;
    const double rs_n = std::max(
        nlo > 0 ? blo.resid.lpNorm<Eigen::Infinity>() : 0.0,
        nhi > 0 ? bhi.resid.lpNorm<Eigen::Infinity>() : 0.0);
    const double comp = std::max(max_product(blo), max_product(bhi));
    if (rd_n <= cfg.ip_tol && rp_n <= cfg.ip_tol &&
        rs_n <= 1e2 * cfg.ip_tol * sscale && comp <= comp_target) {
      out.converged = true;
      out.iterations = it;
      break;
    }

    // Condensed Newton matrix: H + Sigma on the diagonal.
    K.setZero();
    K.topLeftCorner(n, n) = H;
    for (int j = 0; j < nlo; ++j)
      K(blo.idx[j], blo.idx[j]) += blo.mu[j] / blo.s[j];
    for (int j = 0; j < nhi; ++j)
      K(bhi.idx[j], bhi.idx[j]) += bhi.mu[j] / bhi.s[j];
    if (m > 0) {
      K.topRightCorner(n, m) = A.transpose();
      K.bottomLeftCorner(m, n) = A;
    }
    Eigen::PartialPivLU<MatrixXd> lu(K);

    // One Newton solve for given complementarity right-hand sides.
    auto newton = [&](const VectorXd& rc_lo, const VectorXd& rc_hi,
                      VectorXd& dd, VectorXd& dlam, VectorXd& ds_lo,
                      VectorXd& dmu_lo, VectorXd& ds_hi, VectorXd& dmu_hi) {
      rhs.head(n) = -r_d;
      for (int j = 0; j < nlo; ++j)
        rhs[blo.idx[j]] +=
            (rc_lo[j] + blo.mu[j] * blo.resid[j]) / blo.s[j];
      for (int j = 0; j < nhi; ++j)
        rhs[bhi.idx[j]] -=
            (rc_hi[j] + bhi.mu[j] * bhi.resid[j]) / bhi.s[j];
      if (m > 0) rhs.tail(m) = -r_p;
      const VectorXd sol = lu.solve(rhs);
      if (!sol.allFinite()) return false;  // degenerate system: give up
      dd = sol.head(n);
      dlam = sol.tail(m);
      ds_lo.resize(nlo);
      dmu_lo.resize(nlo);
      for (int j = 0; j < nlo; ++j) {
        ds_lo[j] = dd[blo.idx[j]] - blo.resid[j];
        dmu_lo[j] = (rc_lo[j] - blo.mu[j] * ds_lo[j]) / blo.s[j];
      }
      ds_hi.resize(nhi);
      dmu_hi.resize(nhi);
      for (int j = 0; j < nhi; ++j) {
        ds_hi[j] = -dd[bhi.idx[j]] - bhi.resid[j];
        dmu_hi[j] = (rc_hi[j] - bhi.mu[j] * ds_hi[j]) / bhi.s[j];
      }
      return true;
    };

    VectorXd rc_lo(nlo), rc_hi(nhi);
    for (int j = 0; j < nlo; ++j) rc_lo[j] = -blo.s[j] * blo.mu[j];
    for (int j = 0; j < nhi; ++j) rc_hi[j] = -bhi.s[j] * bhi.mu[j];

    VectorXd dd, dlam, dslo, dmlo, dshi, dmhi;
    if (!newton(rc_lo, rc_hi, dd, dlam, dslo, dmlo, dshi, dmhi)) break;

    // Mehrotra centering from the affine step.
    const double mu_bar =
        (nlo + nhi) > 0
            ? (blo.s.dot(blo.mu) + bhi.s.dot(bhi.mu)) / (nlo + nhi)
            : 0.0;
    double ap = std::min(step_to_boundary(blo.s, dslo, 1.0),
                         step_to_boundary(bhi.s, dshi, 1.0));
    double ad = std::min(step_to_boundary(blo.mu, dmlo, 1.0),
                         step_to_boundary(bhi.mu, dmhi, 1.0));
    double mu_aff = 0.0;
    for (int j = 0; j < nlo; ++j)
      mu_aff += (blo.s[j] + ap * dslo[j]) * (blo.mu[j] + ad * dmlo[j]);
    for (int j = 0; j < nhi; ++j)
      mu_aff += (bhi.s[j] + ap * dshi[j]) * (bhi.mu[j] + ad * dmhi[j]);
    mu_aff /= std::max(1, nlo + nhi);
    const double sigma =
        mu_bar > 0.0 ? std::pow(std::clamp(mu_aff / mu_bar, 0.0, 1.0), 3) : 0.0;

    for (int j = 0; j < nlo; ++j)
      rc_lo[j] = -blo.s[j] * blo.mu[j] - dslo[j] * dmlo[j] + sigma * mu_bar;
    for (int j = 0; j < nhi; ++j)
      rc_hi[j] = -bhi.s[j] * bhi.mu[j] - dshi[j] * dmhi[j] + sigma * mu_bar;
    if (!newton(rc_lo, rc_hi, dd, dlam, dslo, dmlo, dshi, dmhi)) break;

    ap = std::min(step_to_boundary(blo.s, dslo, cfg.ip_boundary),
                  step_to_boundary(bhi.s, dshi, cfg.ip_boundary));
    ad = std::min(step_to_boundary(blo.mu, dmlo, cfg.ip_boundary),
                  step_to_boundary(bhi.mu, dmhi, cfg.ip_boundary));
    d += ap * dd;
    lam += ad * dlam;
    blo.s += ap * dslo;
    blo.mu += ad * dmlo;
    bhi.s += ap * dshi;
    bhi.mu += ad * dmhi;
    out.iterations = it + 1;
  }

  if (!out.converged) {
    // Re-evaluate the stopping test at the final iterate with the accept
    // tolerance rather than the path-following target.
    r_d = H * d + g;
    if (m > 0) r_d += A.transpose() * lam;
    for (int j = 0; j < nlo; ++j) r_d[blo.idx[j]] -= blo.mu[j];
    for (int j = 0; j < nhi; ++j) r_d[bhi.idx[j]] += bhi.mu[j];
    const double rd_n = r_d.lpNorm<Eigen::Infinity>() / gscale;
    const double rp_n =
        m > 0 ? (A * d + c).lpNorm<Eigen::Infinity>() / cscale : 0.0;
    const double comp = std::max(max_product(blo), max_product(bhi));
    out.converged =
        rd_n <= 1e2 * cfg.ip_tol && rp_n <= 1e2 * cfg.ip_tol &&
        comp <= 0.5 * cfg.tol_comp;
  }

  for (int j = 0; j < nlo; ++j) out.mu_lo[blo.idx[j]] = blo.mu[j];
  for (int j = 0; j < nhi; ++j) out.mu_hi[bhi.idx[j]] = bhi.mu[j];
  out.d = d;
  out.lambda = lam;
  return out;
}

// ---------------------------------------------------------------------------
// Gauss-Newton SQP with l1-merit backtracking.

namespace {

struct KktNorms {
  double stat, eq, comp;
};

KktNorms kkt_norms(const VectorXd& z, const VectorXd& g,
                   const MatrixXd& J2, const VectorXd& c2,
                   const VectorXd& lambda, const VectorXd& mu_lo,
                   const VectorXd& mu_hi, const VectorXd& zlo,
                   const VectorXd& zhi) {
  VectorXd stat = g - mu_lo + mu_hi;
  if (lambda.size() > 0) stat += J2.transpose() * lambda;
  KktNorms out;
  out.stat = stat.lpNorm<Eigen::Infinity>() /
             (1.0 + g.lpNorm<Eigen::Infinity>());
  out.eq = c2.size() > 0 ? c2.lpNorm<Eigen::Infinity>() /
                               (1.0 + z.lpNorm<Eigen::Infinity>())
                         : 0.0;
  out.comp = 0.0;
  for (int i = 0; i < z.size(); ++i) {
    if (std::isfinite(zlo[i]))
      out.comp = std::max(out.comp, mu_lo[i] * (z[i] - zlo[i]));
    if (std::isfinite(zhi[i]))
      out.comp = std::max(out.comp, mu_hi[i] * (zhi[i] - z[i]));
  }
  return out;
}

}  // namespace

MheSolution solve(const MheProblem& pb, const SolverConfig& cfg,
                  const VectorXd* z_init) {
  const auto t0 = std::chrono::steady_clock::now();
  const int n = pb.nz();
  const int m = pb.neq();
  const VectorXd zlo = pb.z_lo();
  const VectorXd zhi = pb.z_hi();
  const VectorXd info = pb.info_vector();
  const VectorXd vinv = pb.v_diag().cwiseInverse();

  VectorXd z;
  if (z_init) {
    if (z_init->size() != n)
      throw DimensionMismatch("warm start size mismatch");
    z = *z_init;
  } else {
    z = VectorXd::Zero(n);
    for (int i = 0; i < pb.horizon(); ++i)
      z.segment(pb.x_index(i), pb.model->nx()) = pb.window.x_prior;
  }
  z = z.cwiseMax(zlo).cwiseMin(zhi);

  MheSolution sol;
  sol.nx = pb.model->nx();
  sol.nu = pb.model->nu();
  sol.horizon = pb.horizon();
  sol.lambda = VectorXd::Zero(m);
  sol.mu_lo = VectorXd::Zero(n);
  sol.mu_hi = VectorXd::Zero(n);

  double merit_nu = 1.0;
  const int budget = cfg.realtime ? cfg.realtime_iters : cfg.max_iters;

  VectorXd g(n), c2(m);
  MatrixXd J1, J2;
  KktNorms norms{0, 0, 0};

  int it = 0;
  for (; it < budget; ++it) {
    const VectorXd rho = info - pb.f1(z);
    c2 = pb.f2(z);
    J1 = pb.j1(z);
    J2 = pb.j2(z);
    g = -J1.transpose() * vinv.cwiseProduct(rho).eval();
    norms = kkt_norms(z, g, J2, c2, sol.lambda, sol.mu_lo, sol.mu_hi, zlo,
                      zhi);
    if (!cfg.realtime && norms.stat <= cfg.tol_stat &&
        norms.eq <= cfg.tol_eq && norms.comp <= cfg.tol_comp) {
      sol.converged = true;
      break;
    }

    const MatrixXd H = J1.transpose() * vinv.asDiagonal() * J1;
    const QpResult qp =
        solve_box_qp(H, g, J2, c2, zlo - z, zhi - z, cfg);

    sol.lambda = qp.lambda;
    sol.mu_lo = qp.mu_lo;
    sol.mu_hi = qp.mu_hi;

    if (cfg.realtime) {
      z = (z + qp.d).cwiseMax(zlo).cwiseMin(zhi);
      continue;
    }

    // l1 merit with a penalty weight dominating the multipliers.
    const double lam_inf =
        m > 0 ? qp.lambda.lpNorm<Eigen::Infinity>() : 0.0;
    merit_nu = std::max(merit_nu, 1.1 * lam_inf + 1.0);
    const double c2_l1 = c2.lpNorm<1>();
    const double phi0 = pb.objective(z) + merit_nu * c2_l1;
    double dphi = g.dot(qp.d) - merit_nu * c2_l1;
    if (dphi > 0.0) dphi = 0.0;  // safeguard; GN direction is a descent one

    double alpha = 1.0;
    bool accepted = false;
    VectorXd z_trial;
    double phi_trial = phi0;
    // Endgame: once the predicted decrease falls below the merit's own
    // evaluation noise, Armijo cannot certify the (Newton-quality) step;
    // take it at full length instead of stalling one step short.
    if (-dphi <= 1e-12 * (1.0 + std::abs(phi0))) {
      z_trial = (z + qp.d).cwiseMax(zlo).cwiseMin(zhi);
      phi_trial =
          pb.objective(z_trial) + merit_nu * pb.f2(z_trial).lpNorm<1>();
      accepted = true;
    }
    for (int ls = 0; !accepted && ls < cfg.ls_max; ++ls) {
      z_trial = (z + alpha * qp.d).cwiseMax(zlo).cwiseMin(zhi);
      phi_trial =
          pb.objective(z_trial) + merit_nu * pb.f2(z_trial).lpNorm<1>();
      if (phi_trial <= phi0 + cfg.ls_c1 * alpha * dphi) {
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) break;  // stalled; report the current iterate honestly
    sol.merit_history.push_back({phi0, phi_trial});
    z = z_trial;
  }

  // Final norms at the returned iterate with the final multipliers.
  c2 = pb.f2(z);
  J1 = pb.j1(z);
  J2 = pb.j2(z);
  const VectorXd rho = info - pb.f1(z);
  g = -J1.transpose() * vinv.cwiseProduct(rho).eval();
  norms = kkt_norms(z, g, J2, c2, sol.lambda, sol.mu_lo, sol.mu_hi, zlo,
                    zhi);
  if (!sol.converged)
    sol.converged = norms.stat <= cfg.tol_stat && norms.eq <= cfg.tol_eq &&
                    norms.comp <= cfg.tol_comp;

  sol.z = z;
  sol.stat_norm = norms.stat;
  sol.eq_norm = norms.eq;
  sol.comp_norm = norms.comp;
  sol.iterations = it;
  for (int i = 0; i < n; ++i) {
    const bool lo_act = std::isfinite(zlo[i]) &&
                        z[i] - zlo[i] <= cfg.active_slack_tol *
                                             (1.0 + std::abs(zlo[i])) &&
                        sol.mu_lo[i] >= cfg.active_mult_tol;
    const bool hi_act = std::isfinite(zhi[i]) &&
                        zhi[i] - z[i] <= cfg.active_slack_tol *
                                             (1.0 + std::abs(zhi[i])) &&
                        sol.mu_hi[i] >= cfg.active_mult_tol;
    if (lo_act) sol.active.push_back({i, false, sol.mu_lo[i]});
    if (hi_act) sol.active.push_back({i, true, sol.mu_hi[i]});
  }
  sol.wall_ms = std::chrono::duration<double, std::milli>(
                    std::chrono::steady_clock::now() - t0)
                    .count();
  return sol;
}

// ---------------------------------------------------------------------------
// Fusion and the sliding-window estimator.

FusedMeasurement fuse_measurements(const sim::MeasurementBundle& bundle,
                                   const std::array<bool, 3>& healthy_alpha,
                                   const std::array<bool, 3>& healthy_vc) {
  FusedMeasurement out;
  double sa = 0.0, sc = 0.0;
  int na = 0, nc = 0;
  for (int i = 0; i < 3; ++i) {
    if (healthy_alpha[i]) {
      sa += bundle.alpha[i];
      ++na;
    }
    if (healthy_vc[i]) {
      sc += bundle.vcas[i];
      ++nc;
    }
  }
  if (na == 0 || nc == 0)
    throw NoHealthySensors("a sensor group has no healthy members");
  out.y = {sa / na, bundle.vz, sc / nc};
  out.n_alpha = na;
  out.n_vc = nc;
  return out;
}

MovingHorizonEstimator::MovingHorizonEstimator(EstimatorConfig cfg)
    : cfg_(std::move(cfg)) {
  if (cfg_.horizon < 1) throw ConfigError("horizon must be >= 1");
}

std::optional<Eigen::Vector3d> MovingHorizonEstimator::predict_next(
    const air::ParamSample& theta_next) const {
  if (!last_) return std::nullopt;
  const air::AugmentedState xf =
      air::AugmentedState::from_vec(last_->filtered());
  const air::AugmentedState xp =
      air::euler_step(xf, air::NoiseInput{0.0, 0.0, 0.0}, thetas_.back(),
                      cfg_.ts);
  return air::outputs(xp, theta_next);
}

MheSolution MovingHorizonEstimator::step(
    const sim::MeasurementBundle& bundle, const air::ParamSample& theta,
    const std::array<bool, 3>& healthy_alpha,
    const std::array<bool, 3>& healthy_vc) {
  bundles_.push_back(bundle);
  thetas_.push_back(theta);
  if (!started_) {
    // Cold start: AOA from the healthy measurement mean, wind at zero.
    const FusedMeasurement f0 =
        fuse_measurements(bundle, healthy_alpha, healthy_vc);
    x_prior_ = Eigen::Vector3d(f0.y[0], 0.0, 0.0);
    started_ = true;
  }
  if (static_cast<int>(bundles_.size()) > cfg_.horizon) {
    const air::ParamSample theta_prev = thetas_.front();
    bundles_.pop_front();
    thetas_.pop_front();
    // The previous solution's smoothed estimate of the sample that is now
    // oldest becomes the new prior; a length-1 window has no such estimate,
    // so the filtered state is propagated instead.
    if (cfg_.horizon > 1) {
      x_prior_ = last_->state_at(1);
    } else {
      x_prior_ = air::euler_step(
                     air::AugmentedState::from_vec(last_->filtered()),
                     air::NoiseInput{0.0, 0.0, 0.0}, theta_prev, cfg_.ts)
                     .vec();
    }
  }

  const int mwin = static_cast<int>(bundles_.size());
  HorizonWindow w;
  w.x_prior = x_prior_;
  w.P_diag = cfg_.weights.P();
  int n_alpha = 3, n_vc = 3;
  for (int i = 0; i < mwin; ++i) {
    const FusedMeasurement f =
        fuse_measurements(bundles_[i], healthy_alpha, healthy_vc);
    w.y.push_back(f.y);
    n_alpha = f.n_alpha;
    n_vc = f.n_vc;
  }
  for (int i = 0; i + 1 < mwin; ++i) w.Q_diag.push_back(cfg_.weights.Q());
  for (int i = 0; i < mwin; ++i)
    w.R_diag.push_back(cfg_.weights.R(n_alpha, n_vc));

  AirStageModel model(std::vector<air::ParamSample>(thetas_.begin(),
                                                    thetas_.end()),
                      cfg_.ts);
  const MheProblem pb = build_problem(model, std::move(w), cfg_.bounds,
                                      cfg_.mode);

  std::optional<VectorXd> z0;
  if (last_ && mwin == 1) {
    z0 = x_prior_;
  } else if (last_) {
    const int nx = 3, nu = 3;
    const int prev_m = last_->horizon;
    const bool grew = mwin == prev_m + 1;
    VectorXd guess(pb.nz());
    const int keep = grew ? prev_m : prev_m - 1;
    const int drop = grew ? 0 : 1;  // window slid by one sample
    for (int i = 0; i < keep; ++i) {
      guess.segment(pb.x_index(i), nx) = last_->state_at(i + drop);
      if (i + 1 < mwin)
        guess.segment(pb.u_index(i), nu) =
            i + drop + 1 < prev_m ? last_->input_at(i + drop)
                                  : VectorXd::Zero(nu);
    }
    // Propagate the newest state with zero input to seed the new stage.
    const air::AugmentedState xf =
        air::AugmentedState::from_vec(last_->filtered());
    guess.segment(pb.u_index(mwin - 2), nu).setZero();
    guess.segment(pb.x_index(mwin - 1), nx) =
        air::euler_step(xf, air::NoiseInput{0.0, 0.0, 0.0},
                        thetas_[thetas_.size() - 2], cfg_.ts)
            .vec();
    z0 = guess;
  }

  last_ = solve(pb, cfg_.solver, z0 ? &*z0 : nullptr);
  return *last_;
}

}  // namespace adfdi::mhe
