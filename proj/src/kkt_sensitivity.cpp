#include "adfdi/kkt_sensitivity.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "adfdi/errors.hpp"

namespace adfdi::kkt {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

int svd_rank(const MatrixXd& m) {
  if (m.rows() == 0 || m.cols() == 0) return 0;
  Eigen::JacobiSVD<MatrixXd> svd(m);
  const auto& sv = svd.singularValues();
  const double tol = 1e-10 * sv(0);
  int r = 0;
  for (int i = 0; i < sv.size(); ++i)
    if (sv(i) > tol) ++r;
  return r;
}

void check_licq(const MatrixXd& j2, const MatrixXd& ja) {
  if (j2.rows() > 0 && svd_rank(j2) < j2.rows())
    throw LicqViolation("equality Jacobian is row-rank deficient");
  if (ja.rows() == 0) return;
  MatrixXd j2a(j2.rows() + ja.rows(), ja.cols());
  j2a.topRows(j2.rows()) = j2;
  j2a.bottomRows(ja.rows()) = ja;
  if (svd_rank(j2a) < j2a.rows())
    throw LicqViolation("active rows dependent on the equality Jacobian");
}

struct ShiftedH {
  MatrixXd H;
  Eigen::LLT<MatrixXd> llt;
  bool shifted = false;
  double shift = 0.0;
};

// The analyzer tolerates a semidefinite Hessian through a tiny Levenberg
// shift; the solver itself never does this.
ShiftedH factor_h(const StackedSystem& sys) {
  ShiftedH out;
  out.H = sys.H();
  out.llt.compute(out.H);
  if (out.llt.info() == Eigen::Success) return out;
  const int n = static_cast<int>(out.H.rows());
  out.shift = 1e-10 * out.H.trace() / n;
  out.H += out.shift * MatrixXd::Identity(n, n);
  out.llt.compute(out.H);
  if (out.llt.info() != Eigen::Success)
    throw SingularKkt("Hessian not positive definite even after shift");
  out.shifted = true;
  return out;
}

MatrixXd symmetrized(const MatrixXd& m) { return 0.5 * (m + m.transpose()); }

// X through the block-inversion formula on a prefactored H.
MatrixXd x_formula(const ShiftedH& h, const MatrixXd& j) {
  const int n = static_cast<int>(h.H.rows());
  MatrixXd hinv = h.llt.solve(MatrixXd::Identity(n, n));
  hinv = symmetrized(hinv);  // exact in theory; enforce against roundoff
  if (j.rows() == 0) return hinv;
  const MatrixXd jh = j * hinv;                 // J H^-1
  const MatrixXd s = symmetrized(jh * j.transpose());
  Eigen::LLT<MatrixXd> sllt(s);
  if (sllt.info() != Eigen::Success)
    throw SingularKkt("J H^-1 J' not positive definite");
  return hinv - jh.transpose() * sllt.solve(jh);
}

MatrixXd pi_inverse(const ShiftedH& h) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(h.H);
  if (es.info() != Eigen::Success)
    throw SingularKkt("Hessian eigendecomposition failed");
  VectorXd inv_sqrt = es.eigenvalues();
  for (int i = 0; i < inv_sqrt.size(); ++i) {
    if (!(inv_sqrt(i) > 0.0))
      throw SingularKkt("Hessian has a nonpositive eigenvalue");
    inv_sqrt(i) = 1.0 / std::sqrt(inv_sqrt(i));
  }
  return es.eigenvectors() * inv_sqrt.asDiagonal() *
         es.eigenvectors().transpose();
}

MatrixXd projector_from(const ShiftedH& h, const MatrixXd& j) {
  const int n = static_cast<int>(h.H.rows());
  if (j.rows() == 0) return MatrixXd::Identity(n, n);
  const MatrixXd pinv = pi_inverse(h);
  const MatrixXd m = pinv * j.transpose();  // Pi^-1 J'
  const MatrixXd s = symmetrized(m.transpose() * m);
  Eigen::LLT<MatrixXd> sllt(s);
  if (sllt.info() != Eigen::Success)
    throw SingularKkt("J Pi^-2 J' not positive definite");
  return MatrixXd::Identity(n, n) - m * sllt.solve(m.transpose());
}

// Flat sensitivity form [-Phi J1 X J1' V^-1, I].
MatrixXd flat_sensitivity(const StackedSystem& sys, const MatrixXd& phi,
                          const MatrixXd& x) {
  const int ny = static_cast<int>(phi.rows());
  const VectorXd vinv = sys.vdiag.cwiseInverse();
  MatrixXd out(ny, sys.ninfo() + ny);
  out.leftCols(sys.ninfo()) =
      -phi * sys.J1 * x * sys.J1.transpose() * vinv.asDiagonal();
  out.rightCols(ny) = MatrixXd::Identity(ny, ny);
  return out;
}

// The factored triple product equivalent of the same matrix.
MatrixXd factored_sensitivity(const StackedSystem& sys, const MatrixXd& phi,
                              const MatrixXd& x) {
  const int ny = static_cast<int>(phi.rows());
  const int ni = sys.ninfo();
  MatrixXd left(ny, ni + ny);
  left << phi, MatrixXd::Identity(ny, ny);

  MatrixXd mid = MatrixXd::Zero(ni + ny, ni + ny);
  mid.topLeftCorner(ni, ni) =
      MatrixXd(sys.vdiag.asDiagonal()) - sys.J1 * x * sys.J1.transpose();
  mid.bottomRightCorner(ny, ny).setIdentity();

  MatrixXd right = MatrixXd::Zero(ni + ny, ni + ny);
  right.topLeftCorner(ni, ni) = sys.vdiag.cwiseInverse().asDiagonal();
  right.bottomLeftCorner(ny, ni) = -phi;
  right.bottomRightCorner(ny, ny).setIdentity();

  return left * mid * right;
}

double min_eig(const MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(symmetrized(m));
  return es.eigenvalues().minCoeff();
}

nlohmann::json matrix_json(const MatrixXd& m) {
  nlohmann::json j;
  j["rows"] = m.rows();
  j["cols"] = m.cols();
  std::vector<double> data;
  data.reserve(static_cast<size_t>(m.size()));
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  j["data"] = data;  // row-major
  return j;
}

struct InfoLayout {
  int nx, nu, ny, horizon;

  int y_start(int i) const {
    return nx + i * (nu + ny) + (i < horizon - 1 ? nu : 0);
  }
  int u_start(int i) const { return nx + i * (nu + ny); }
};

InfoLayout layout_of(const mhe::MheProblem& p) {
  return {p.model->nx(), p.model->nu(), p.model->ny(), p.horizon()};
}

std::vector<std::pair<int, bool>> active_key(const mhe::MheSolution& sol) {
  std::vector<std::pair<int, bool>> key;
  key.reserve(sol.active.size());
  for (const auto& a : sol.active) key.emplace_back(a.index, a.upper);
  std::sort(key.begin(), key.end());
  return key;
}

}  // namespace

MatrixXd StackedSystem::J2a() const {
  MatrixXd out(J2.rows() + Ja.rows(), nz());
  out.topRows(J2.rows()) = J2;
  if (Ja.rows() > 0) out.bottomRows(Ja.rows()) = Ja;
  return out;
}

MatrixXd StackedSystem::H() const {
  return J1.transpose() * vdiag.cwiseInverse().asDiagonal() * J1;
}

StackedSystem assemble(const mhe::MheProblem& problem,
                       const mhe::MheSolution& sol) {
  StackedSystem sys;
  sys.z = sol.z;
  sys.info = problem.info_vector();
  sys.vdiag = problem.v_diag();
  sys.J1 = problem.j1(sol.z);
  sys.J2 = problem.j2(sol.z);
  sys.Ja = MatrixXd::Zero(static_cast<Eigen::Index>(sol.active.size()),
                          problem.nz());
  for (size_t i = 0; i < sol.active.size(); ++i) {
    sys.Ja(static_cast<Eigen::Index>(i), sol.active[i].index) = 1.0;
    sys.active_index.push_back(sol.active[i].index);
  }
  check_licq(sys.J2, sys.Ja);
  return sys;
}

StackedSystem make_system(VectorXd z, VectorXd info, VectorXd vdiag,
                          MatrixXd J1, MatrixXd J2, MatrixXd Ja,
                          std::vector<int> active_index) {
  if (J1.cols() != z.size() || J2.cols() != z.size() ||
      (Ja.rows() > 0 && Ja.cols() != z.size()))
    throw DimensionMismatch("Jacobian columns must match the stack");
  if (J1.rows() != info.size() || vdiag.size() != info.size())
    throw DimensionMismatch("information vector and V disagree");
  if ((vdiag.array() <= 0.0).any())
    throw ConfigError("V diagonal must be positive");
  StackedSystem sys;
  sys.z = std::move(z);
  sys.info = std::move(info);
  sys.vdiag = std::move(vdiag);
  sys.J1 = std::move(J1);
  sys.J2 = std::move(J2);
  sys.Ja = std::move(Ja);
  sys.active_index = std::move(active_index);
  check_licq(sys.J2, sys.Ja);
  return sys;
}

XResult compute_X(const StackedSystem& sys, bool active) {
  const ShiftedH h = factor_h(sys);
  const MatrixXd j = active ? sys.J2a() : sys.J2;
  XResult out;
  out.X = x_formula(h, j);
  out.shifted = h.shifted;
  out.shift = h.shift;
  const MatrixXd pinv = pi_inverse(h);
  const MatrixXd via_projector = pinv * projector_from(h, j) * pinv;
  out.route_gap = (out.X - via_projector).cwiseAbs().maxCoeff();
  return out;
}

MatrixXd sqrt_h_inverse(const StackedSystem& sys) {
  return pi_inverse(factor_h(sys));
}

MatrixXd projector(const StackedSystem& sys, bool active) {
  return projector_from(factor_h(sys), active ? sys.J2a() : sys.J2);
}

KktDelta solve_kkt_linearized(const StackedSystem& sys, const VectorXd& eps,
                              bool active) {
  if (eps.size() != sys.ninfo())
    throw DimensionMismatch("perturbation must match the information vector");
  const ShiftedH h = factor_h(sys);
  const MatrixXd j = active ? sys.J2a() : sys.J2;
  const int n = sys.nz();
  const int m = static_cast<int>(j.rows());

  MatrixXd kkt = MatrixXd::Zero(n + m, n + m);
  kkt.topLeftCorner(n, n) = h.H;
  kkt.topRightCorner(n, m) = j.transpose();
  kkt.bottomLeftCorner(m, n) = j;

  VectorXd rhs = VectorXd::Zero(n + m);
  rhs.head(n) = sys.J1.transpose() * sys.vdiag.cwiseInverse().cwiseProduct(eps);

  Eigen::FullPivLU<MatrixXd> lu(kkt);
  if (!lu.isInvertible()) throw SingularKkt("saddle-point matrix singular");
  const VectorXd sol = lu.solve(rhs);

  KktDelta out;
  out.dz = sol.head(n);
  const int neq = sys.neq();
  out.dlambda = sol.segment(n, active ? neq : m);
  if (active) out.dmu_a = sol.tail(m - neq);
  out.dz_formula = compute_X(sys, active).X * rhs.head(n);
  out.rel_gap = (out.dz - out.dz_formula).lpNorm<Eigen::Infinity>() /
                (1.0 + out.dz.lpNorm<Eigen::Infinity>());
  return out;
}

MatrixXd compute_phi(const StackedSystem& sys, const MatrixXd& A_step,
                     const MatrixXd& C_out, bool active) {
  const int nx = static_cast<int>(A_step.rows());
  if (A_step.cols() != nx || C_out.cols() != nx || nx > sys.nz())
    throw DimensionMismatch("prediction chain blocks inconsistent");
  const MatrixXd x = compute_X(sys, active).X;
  // dz/dI, restricted to the filtered state (the last block of the stack).
  const MatrixXd dz_dinfo =
      x * sys.J1.transpose() * sys.vdiag.cwiseInverse().asDiagonal();
  return C_out * A_step * dz_dinfo.bottomRows(nx);
}

MatrixXd compute_phi(const StackedSystem& sys,
                     const air::ParamSample& theta_prev,
                     const air::ParamSample& theta_next, double ts,
                     bool active) {
  const mhe::AirStageModel model({theta_prev, theta_next}, ts);
  const VectorXd xf = sys.z.tail(3);
  MatrixXd a(3, 3), b(3, 3);
  model.step_jac(xf, VectorXd::Zero(3), 0, a, b);
  const VectorXd xp = model.step(xf, VectorXd::Zero(3), 0);
  return compute_phi(sys, a, model.output_jac(xp, 1), active);
}

SensitivityMatrices sensitivity_matrices(const StackedSystem& sys,
                                         const MatrixXd& Phi) {
  const MatrixXd x = compute_X(sys, false).X;
  const MatrixXd xa = compute_X(sys, true).X;
  SensitivityMatrices out;
  out.Sf = flat_sensitivity(sys, Phi, x);
  out.Sf_active = flat_sensitivity(sys, Phi, xa);
  const auto rel_gap = [&](const MatrixXd& flat, const MatrixXd& xm) {
    const MatrixXd fac = factored_sensitivity(sys, Phi, xm);
    return (fac - flat).cwiseAbs().maxCoeff() /
           (1.0 + flat.cwiseAbs().maxCoeff());
  };
  out.form_gap = std::max(rel_gap(out.Sf, x), rel_gap(out.Sf_active, xa));
  return out;
}

SensitivityReport analyze(const StackedSystem& sys, const MatrixXd& A_step,
                          const MatrixXd& C_out) {
  SensitivityReport rep;
  rep.x = compute_X(sys, false);
  rep.x_active = compute_X(sys, true);
  rep.phi = compute_phi(sys, A_step, C_out, false);
  const SensitivityMatrices sens = sensitivity_matrices(sys, rep.phi);
  rep.Sf = sens.Sf;
  rep.Sf_active = sens.Sf_active;
  rep.form_gap = sens.form_gap;
  rep.active_index = sys.active_index;

  Eigen::SelfAdjointEigenSolver<MatrixXd> ex(
      symmetrized(rep.x.X - rep.x_active.X));
  rep.eig_x_gap = ex.eigenvalues();
  Eigen::SelfAdjointEigenSolver<MatrixXd> eg(
      symmetrized(rep.Sf_active * rep.Sf_active.transpose() -
                  rep.Sf * rep.Sf.transpose()));
  rep.eig_gram_gap = eg.eigenvalues();
  return rep;
}

std::string report_json(const SensitivityReport& rep) {
  nlohmann::json j;
  j["licq_ok"] = rep.licq_ok;
  j["active_index"] = rep.active_index;
  j["levenberg"] = {{"applied", rep.x.shifted}, {"shift", rep.x.shift}};
  j["route_gap"] = {{"x", rep.x.route_gap}, {"x_active", rep.x_active.route_gap}};
  j["form_gap"] = rep.form_gap;
  j["X"] = matrix_json(rep.x.X);
  j["X_active"] = matrix_json(rep.x_active.X);
  j["Phi"] = matrix_json(rep.phi);
  j["Sf"] = matrix_json(rep.Sf);
  j["Sf_active"] = matrix_json(rep.Sf_active);
  j["spectrum_x_gap"] =
      std::vector<double>(rep.eig_x_gap.data(),
                          rep.eig_x_gap.data() + rep.eig_x_gap.size());
  j["spectrum_gram_gap"] =
      std::vector<double>(rep.eig_gram_gap.data(),
                          rep.eig_gram_gap.data() + rep.eig_gram_gap.size());
  return j.dump(2);
}

std::string report_table(const SensitivityReport& rep) {
  std::ostringstream os;
  os << "sensitivity analysis\n"
     << "  stack size        " << rep.x.X.rows() << "\n"
     << "  active bounds     " << rep.active_index.size() << "\n"
     << "  licq              " << (rep.licq_ok ? "ok" : "VIOLATED") << "\n"
     << "  levenberg shift   "
     << (rep.x.shifted ? std::to_string(rep.x.shift) : std::string("none"))
     << "\n"
     << "  route gap         " << rep.x.route_gap << " / "
     << rep.x_active.route_gap << "\n"
     << "  form gap          " << rep.form_gap << "\n"
     << "  eig(X - Xa)       [" << rep.eig_x_gap.minCoeff() << ", "
     << rep.eig_x_gap.maxCoeff() << "]\n"
     << "  eig(gram ordering) [" << rep.eig_gram_gap.minCoeff() << ", "
     << rep.eig_gram_gap.maxCoeff() << "]\n";
  return os.str();
}

RandomInstance random_instance(uint64_t seed, int horizon) {
  if (horizon < 1) throw ConfigError("horizon must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> logu(std::log(0.2), std::log(5.0));

  const int nx = 2 + static_cast<int>(rng() % 2);  // 2 or 3
  const int nu = 1 + static_cast<int>(rng() % 2);  // 1 or 2
  // Every state must be observed at each stage or H loses rank, so C is a
  // well-conditioned tall (or square) matrix.
  const int ny = nx + static_cast<int>(rng() % 2);

  MatrixXd a(nx, nx), b(nx, nu), c(ny, nx);
  for (int i = 0; i < nx; ++i)
    for (int k = 0; k < nx; ++k) a(i, k) = gauss(rng) / std::sqrt(double(nx));
  const double rho = a.eigenvalues().cwiseAbs().maxCoeff();
  if (rho > 0.9) a *= 0.9 / rho;
  for (int i = 0; i < nx; ++i)
    for (int k = 0; k < nu; ++k) b(i, k) = gauss(rng);
  do {
    for (int i = 0; i < ny; ++i)
      for (int k = 0; k < nx; ++k) c(i, k) = gauss(rng);
  } while (Eigen::JacobiSVD<MatrixXd>(c).singularValues().minCoeff() < 0.3);

  RandomInstance inst;
  inst.model = std::make_shared<mhe::LinearStageModel>(a, b, c);
  inst.A = a;
  inst.B = b;
  inst.C = c;

  mhe::HorizonWindow w;
  w.x_prior = VectorXd::NullaryExpr(nx, [&] { return gauss(rng); });
  w.P_diag = VectorXd::NullaryExpr(nx, [&] { return std::exp(logu(rng)); });
  for (int i = 0; i < horizon; ++i) {
    w.y.push_back(VectorXd::NullaryExpr(ny, [&] { return gauss(rng); }));
    w.R_diag.push_back(
        VectorXd::NullaryExpr(ny, [&] { return std::exp(logu(rng)); }));
    if (i + 1 < horizon)
      w.Q_diag.push_back(
          VectorXd::NullaryExpr(nu, [&] { return std::exp(logu(rng)); }));
  }
  inst.problem =
      mhe::build_problem(*inst.model, std::move(w),
                         mhe::Bounds::unbounded(nx, nu), mhe::Mode::Constrained);
  inst.vdiag = inst.problem.v_diag();
  return inst;
}

Theorem2Report verify_theorem2(int n_instances, uint64_t seed,
                               double eig_tol) {
  if (n_instances < 1) throw ConfigError("need at least one instance");
  Theorem2Report rep;
  rep.worst_chain = rep.worst_weight = rep.worst_gram = 1.0;

  for (int i = 0; i < n_instances; ++i) {
    const uint64_t iseed = seed + 1000003ull * static_cast<uint64_t>(i);
    std::mt19937_64 rng(iseed ^ 0x9e3779b97f4a7c15ull);
    const int horizon = 2 + static_cast<int>(rng() % 3);
    const RandomInstance inst = random_instance(iseed, horizon);
    const mhe::MheProblem& p = inst.problem;
    const VectorXd z0 = VectorXd::Zero(p.nz());
    const MatrixXd j1 = p.j1(z0);
    const MatrixXd j2 = p.j2(z0);

    Theorem2Case tc;
    tc.seed = iseed;
    rep.total++;

    // Every 25th instance exercises the degenerate path: an appended row
    // that already lies in the span of the equality Jacobian.
    if (i % 25 == 24) {
      try {
        make_system(z0, p.info_vector(), inst.vdiag, j1, j2, j2.topRows(1));
      } catch (const LicqViolation&) {
        tc.licq_skipped = true;
        rep.skipped_licq++;
        rep.cases.push_back(tc);
        continue;
      }
      throw Error("dependent active row was not rejected");
    }

    std::vector<int> idx(p.nz());
    for (int k = 0; k < p.nz(); ++k) idx[k] = k;
    std::shuffle(idx.begin(), idx.end(), rng);
    const int n_big = 1 + static_cast<int>(rng() % 3);
    const int n_small = static_cast<int>(rng() % static_cast<uint64_t>(n_big));
    tc.n_small = n_small;
    tc.n_big = n_big;

    auto unit_rows = [&](int count) {
      MatrixXd ja = MatrixXd::Zero(count, p.nz());
      for (int r = 0; r < count; ++r) ja(r, idx[static_cast<size_t>(r)]) = 1.0;
      return ja;
    };

    StackedSystem sys_small, sys_big;
    try {
      sys_small = make_system(z0, p.info_vector(), inst.vdiag, j1, j2,
                              unit_rows(n_small));
      sys_big = make_system(z0, p.info_vector(), inst.vdiag, j1, j2,
                            unit_rows(n_big));
    } catch (const LicqViolation&) {
      tc.licq_skipped = true;
      rep.skipped_licq++;
      rep.cases.push_back(tc);
      continue;
    }

    const MatrixXd x = compute_X(sys_small, false).X;
    const MatrixXd xa = compute_X(sys_small, true).X;
    const MatrixXd xa2 = compute_X(sys_big, true).X;

    tc.min_eig_chain = std::min(min_eig(x - xa), min_eig(xa - xa2));
    tc.chain_ok = tc.min_eig_chain >= -eig_tol;

    const auto weight_gap = [&](const MatrixXd& lo, const MatrixXd& hi) {
      // (V - J1 lo J1') - (V - J1 hi J1') = J1 (hi - lo) J1'
      return min_eig(j1 * (hi - lo) * j1.transpose());
    };
    tc.min_eig_weight = std::min(weight_gap(xa, x), weight_gap(xa2, xa));
    tc.weight_ok = tc.min_eig_weight >= -eig_tol;

    const MatrixXd phi = compute_phi(sys_small, inst.A, inst.C, false);
    const MatrixXd sf = flat_sensitivity(sys_small, phi, x);
    const MatrixXd sfa = flat_sensitivity(sys_small, phi, xa);
    const MatrixXd sfa2 = flat_sensitivity(sys_big, phi, xa2);
    const auto gram_gap = [](const MatrixXd& more, const MatrixXd& fewer) {
      return min_eig(more * more.transpose() - fewer * fewer.transpose());
    };
    tc.min_eig_gram = std::min(gram_gap(sfa, sf), gram_gap(sfa2, sfa));
    tc.gram_ok = tc.min_eig_gram >= -eig_tol;

    rep.chain_pass += tc.chain_ok;
    rep.weight_pass += tc.weight_ok;
    rep.gram_pass += tc.gram_ok;
    rep.worst_chain = std::min(rep.worst_chain, tc.min_eig_chain);
    rep.worst_weight = std::min(rep.worst_weight, tc.min_eig_weight);
    rep.worst_gram = std::min(rep.worst_gram, tc.min_eig_gram);

    if (!(tc.chain_ok && tc.weight_ok && tc.gram_ok) &&
        rep.counterexamples.size() < 10) {
      std::ostringstream os;
      os << "seed=" << iseed << " horizon=" << horizon << " nz=" << p.nz()
         << " active " << n_small << " -> " << n_big
         << " min_eig chain=" << tc.min_eig_chain
         << " weight=" << tc.min_eig_weight << " gram=" << tc.min_eig_gram;
      rep.counterexamples.push_back(os.str());
    }
    rep.cases.push_back(tc);
  }
  return rep;
}

std::vector<FirstOrderStep> first_order_validation(
    const mhe::MheProblem& problem, const mhe::MheSolution& base,
    const VectorXd& eps, int halvings, const mhe::SolverConfig& scfg) {
  const InfoLayout lay = layout_of(problem);
  if (eps.size() != problem.info_vector().size())
    throw DimensionMismatch("perturbation must match the information vector");
  for (int i = 0; i + 1 < lay.horizon; ++i)
    if (eps.segment(lay.u_start(i), lay.nu).cwiseAbs().maxCoeff() > 0.0)
      throw ConfigError("noise slots of the perturbation must stay zero");
  if (halvings < 0) throw ConfigError("halvings must be nonnegative");

  const StackedSystem sys = assemble(problem, base);
  const MatrixXd x = compute_X(sys, true).X;  // base active set
  const VectorXd dz_dir =
      x * sys.J1.transpose() * sys.vdiag.cwiseInverse().cwiseProduct(eps);
  const auto base_key = active_key(base);

  std::vector<FirstOrderStep> steps;
  double scale = 1.0;
  for (int s = 0; s <= halvings; ++s, scale *= 0.5) {
    mhe::MheProblem pert = problem;
    pert.window.x_prior += scale * eps.head(lay.nx);
    for (int i = 0; i < lay.horizon; ++i)
      pert.window.y[static_cast<size_t>(i)] +=
          scale * eps.segment(lay.y_start(i), lay.ny);

    const mhe::MheSolution sol = mhe::solve(pert, scfg, &base.z);
    if (!sol.converged)
      throw SingularKkt("perturbed solve did not converge");

    FirstOrderStep st;
    st.scale = scale;
    st.eps_norm = scale * eps.norm();
    st.predicted_norm = scale * dz_dir.norm();
    st.remainder = (sol.z - base.z - scale * dz_dir).norm();
    st.active_set_changed = active_key(sol) != base_key;
    steps.push_back(st);
  }
  return steps;
}

}  // namespace adfdi::kkt
