#include "bilevel/soc.hpp"

#include "bilevel/linprog.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>

namespace bilevel {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Hessian data shared by every check at one point.
struct PointCurvature {
  std::vector<int> active;             // J0
  MatrixXd Hf;                         // hess_yy f
  std::vector<MatrixXd> Hg;            // hess_yy g_j, j in J0
  MatrixXd Wt;                         // m x |J0|, columns grad_y g_j
  VectorXd grad;                       // grad_y f
  double scale = 1.0;                  // curvature magnitude scale
};

PointCurvature point_curvature(const BilevelProblem& prob, const VectorXd& x,
                               const VectorXd& y, const Tolerances& tol) {
  PointCurvature pc;
  pc.active = active_set(prob, x, y, tol);
  pc.Hf = prob.hess_yy_f(x, y);
  pc.grad = prob.grad_y_f(x, y);
  pc.scale = 1.0 + pc.Hf.norm();
  const MatrixXd J = prob.jac_y_g(x, y);
  pc.Wt.resize(prob.m, pc.active.size());
  for (std::size_t k = 0; k < pc.active.size(); ++k) {
    pc.Hg.push_back(prob.hess_yy_g(pc.active[k], x, y));
    pc.scale += pc.Hg.back().norm();
    pc.Wt.col(k) = J.row(pc.active[k]).transpose();
  }
  return pc;
}

MatrixXd weighted_hessian(const PointCurvature& pc, double u0, const VectorXd& u_active) {
  MatrixXd H = u0 * pc.Hf;
  for (int k = 0; k < u_active.size(); ++k) H += u_active(k) * pc.Hg[k];
  return H;
}

VectorXd active_part(const PointCurvature& pc, const VectorXd& u_full) {
  VectorXd ua(pc.active.size());
  for (std::size_t k = 0; k < pc.active.size(); ++k) ua(k) = u_full(pc.active[k]);
  return ua;
}

VectorXd full_from_active(const PointCurvature& pc, int p, const VectorXd& ua) {
  VectorXd u = VectorXd::Zero(p);
  for (std::size_t k = 0; k < pc.active.size(); ++k) u(pc.active[k]) = ua(k);
  return u;
}

// Quadratic forms of one direction against every Hessian block.
struct DirectionForms {
  double q0 = 0.0;      // d^T Hf d
  VectorXd qg;          // d^T Hg_j d per active j
};

DirectionForms direction_forms(const PointCurvature& pc, const VectorXd& d) {
  DirectionForms df;
  df.q0 = d.dot(pc.Hf * d);
  df.qg.resize(pc.Hg.size());
  for (std::size_t k = 0; k < pc.Hg.size(); ++k) df.qg(k) = d.dot(pc.Hg[k] * d);
  return df;
}

// sup over the KKT (or normalized Fritz John) multiplier set of the
// curvature in direction d.  Linear program in the multiplier.
struct CurvatureSup {
  bool applicable = true;  // multiplier set nonempty
  double sup = -kInf;
  bool unbounded = false;
  double u0 = 1.0;
  VectorXd u_active;
};

CurvatureSup direction_curvature_sup(const PointCurvature& pc, const VectorXd& d,
                                     bool fritz_john, const Tolerances& tol) {
  const int a = static_cast<int>(pc.active.size());
  const int m = static_cast<int>(pc.grad.size());
  const DirectionForms df = direction_forms(pc, d);
  CurvatureSup out;

  if (!fritz_john && a == 0) {
    out.applicable = pc.grad.lpNorm<Eigen::Infinity>() <= tol.kkt;
    out.sup = df.q0;
    out.u_active.resize(0);
    return out;
  }

  const int nv = fritz_john ? a + 1 : a;  // [u0,] u_active
  LinearProgram lp = LinearProgram::make(nv);
  if (fritz_john) {
    lp.A_eq = MatrixXd::Zero(m + 1, nv);
    lp.A_eq.col(0).head(m) = pc.grad;
    lp.A_eq.block(0, 1, m, a) = pc.Wt;
    lp.A_eq.row(m).setOnes();
    lp.b_eq = VectorXd::Zero(m + 1);
    lp.b_eq(m) = 1.0;
    lp.c = VectorXd::Zero(nv);
    lp.c(0) = -df.q0;
    lp.c.tail(a) = -df.qg;
  } else {
    lp.A_eq = pc.Wt;
    lp.b_eq = -pc.grad;
    lp.c = -df.qg;
  }

  const LpSolution sol = solve_lp(lp);
  if (sol.status == LpStatus::Infeasible) {
    out.applicable = false;
    return out;
  }
  if (sol.status == LpStatus::Unbounded) {
    out.unbounded = true;
    out.sup = kInf;
    return out;
  }
  if (fritz_john) {
    out.u0 = sol.z(0);
    out.u_active = sol.z.tail(a);
    out.sup = -sol.value;
  } else {
    out.u0 = 1.0;
    out.u_active = sol.z;
    out.sup = df.q0 - sol.value;
  }
  return out;
}

// Max-margin step of the cutting-plane search for a single multiplier with
// nonnegative curvature on every direction in D.  Returns the achievable
// margin (capped at 1) and the maximizing multiplier.
struct MarginResult {
  bool feasible = false;
  double margin = -kInf;
  VectorXd u_active;
};

MarginResult max_margin_multiplier(const PointCurvature& pc,
                                   const std::vector<DirectionForms>& cuts) {
  const int a = static_cast<int>(pc.active.size());
  const int m = static_cast<int>(pc.grad.size());
  const int nv = a + 1;  // [u_active, t]
  LinearProgram lp = LinearProgram::make(nv);
  lp.nonneg[a] = false;
  lp.A_eq = MatrixXd::Zero(m, nv);
  lp.A_eq.leftCols(a) = pc.Wt;
  lp.b_eq = -pc.grad;
  lp.A_le = MatrixXd::Zero(cuts.size() + 1, nv);
  lp.b_le = VectorXd::Zero(cuts.size() + 1);
  for (std::size_t r = 0; r < cuts.size(); ++r) {
    // t - sum_j u_j q_j <= q0
    lp.A_le(r, a) = 1.0;
    lp.A_le.row(r).head(a) = -cuts[r].qg.transpose();
    lp.b_le(r) = cuts[r].q0;
  }
  lp.A_le(cuts.size(), a) = 1.0;  // t <= 1 keeps the LP bounded
  lp.b_le(cuts.size()) = 1.0;
  lp.c = VectorXd::Zero(nv);
  lp.c(a) = -1.0;

  const LpSolution sol = solve_lp(lp);
  MarginResult out;
  if (sol.status != LpStatus::Optimal) return out;  // infeasible: empty M
  out.feasible = true;
  out.margin = sol.z(a);
  out.u_active = sol.z.head(a);
  return out;
}

std::vector<VectorXd> multiplier_candidates(const MultiplierSet& ms,
                                            const SocOptions& opt, Rng& rng) {
  std::vector<VectorXd> cands;
  const auto push_unique = [&cands](const VectorXd& u) {
    for (const auto& c : cands) {
      if ((c - u).lpNorm<Eigen::Infinity>() <= 1e-12) return;
    }
    cands.push_back(u);
  };
  if (ms.representative.size() > 0) push_unique(ms.representative);
  for (const auto& v : ms.vertices) push_unique(v);
  if (ms.vertices_complete && ms.bounded && ms.vertices.size() >= 2) {
    std::exponential_distribution<double> expo(1.0);
    for (int s = 0; s < opt.n_interior; ++s) {
      VectorXd w(ms.vertices.size());
      for (int k = 0; k < w.size(); ++k) w(k) = expo(rng);
      w /= w.sum();
      VectorXd u = VectorXd::Zero(ms.vertices[0].size());
      for (std::size_t k = 0; k < ms.vertices.size(); ++k) u += w(k) * ms.vertices[k];
      push_unique(u);
    }
  }
  return cands;
}

// Per-multiplier curvature test used by the Weak (subspace eigenvalue,
// exact) and Strong (cone minimization) checks.
struct CurvatureProbe {
  double min_value = kInf;
  VectorXd dir;
  bool exact = true;
};

using ProbeFn = std::function<CurvatureProbe(const MatrixXd& H)>;

SocVerdict exists_multiplier_check(const BilevelProblem& prob, const VectorXd& x,
                                   const VectorXd& y, SocKind kind,
                                   const ProbeFn& probe, const SocOptions& opt) {
  SocVerdict v;
  v.kind = kind;
  const PointCurvature pc = point_curvature(prob, x, y, opt.tol);
  const double ctol = opt.tol.soc * pc.scale;
  const MultiplierSet ms = multiplier_set(prob, x, y, opt.tol);
  if (!ms.nonempty) {
    v.status = SocStatus::NotApplicable;
    v.exact = true;
    v.note = "no KKT multiplier exists at this point";
    return v;
  }

  Rng rng(opt.seed);
  std::vector<DirectionForms> cuts;
  bool all_probes_exact = true;
  double worst = kInf;

  const auto test_candidate = [&](const VectorXd& u_full) -> bool {
    const MatrixXd H = weighted_hessian(pc, 1.0, active_part(pc, u_full));
    const CurvatureProbe res = probe(H);
    all_probes_exact = all_probes_exact && res.exact;
    worst = std::min(worst, res.min_value);
    if (res.min_value >= -ctol) {
      v.status = SocStatus::Yes;
      v.exact = res.exact;
      v.witness_u = u_full;
      v.min_curvature = std::min(res.min_value, 0.0);
      return true;
    }
    if (res.dir.size() > 0 && cuts.size() < 64) {
      cuts.push_back(direction_forms(pc, res.dir));
    }
    return false;
  };

  for (const auto& u : multiplier_candidates(ms, opt, rng)) {
    if (test_candidate(u)) return v;
  }

  for (int round = 0; round < opt.max_rounds; ++round) {
    if (cuts.empty()) break;
    const MarginResult mr = max_margin_multiplier(pc, cuts);
    if (!mr.feasible) break;  // cannot happen with nonempty M; stay undetermined
    if (mr.margin < -ctol) {
      // Every multiplier has a certified violating direction among the cuts.
      v.status = SocStatus::No;
      v.exact = true;
      v.min_curvature = worst;
      v.witness_d = VectorXd();
      v.note = "no multiplier keeps curvature nonnegative on the collected directions";
      return v;
    }
    if (test_candidate(full_from_active(pc, prob.p, mr.u_active))) return v;
  }

  v.status = SocStatus::Undetermined;
  v.exact = false;
  v.min_curvature = worst;
  v.note = "multiplier search exhausted its budget without a certificate";
  return v;
}

}  // namespace

bool cone_is_trivial(const PolyhedralCone& cone, double tol) {
  if (cone.is_subspace()) {
    return null_space_basis(cone.E, tol, cone.dim).cols() == 0;
  }
  const int n = cone.dim;
  for (int j = 0; j < n; ++j) {
    for (double sign : {1.0, -1.0}) {
      LinearProgram lp = LinearProgram::make(n);
      lp.nonneg.assign(n, false);
      lp.A_eq = cone.E;
      lp.b_eq = VectorXd::Zero(cone.E.rows());
      const int rows = static_cast<int>(cone.I.rows());
      lp.A_le = MatrixXd::Zero(rows + 2 * n, n);
      lp.b_le = VectorXd::Zero(rows + 2 * n);
      lp.A_le.topRows(rows) = cone.I;
      lp.A_le.block(rows, 0, n, n) = MatrixXd::Identity(n, n);
      lp.b_le.segment(rows, n).setOnes();
      lp.A_le.block(rows + n, 0, n, n) = -MatrixXd::Identity(n, n);
      lp.b_le.segment(rows + n, n).setOnes();
      lp.c = VectorXd::Zero(n);
      lp.c(j) = -sign;
      const LpSolution sol = solve_lp(lp);
      if (sol.status == LpStatus::Optimal && -sol.value > tol) return false;
    }
  }
  return true;
}

ConeQuadMin cone_quadratic_min(const MatrixXd& H, const PolyhedralCone& cone,
                               int n_starts, Rng& rng, const Tolerances& tol) {
  ConeQuadMin out;
  if (cone.is_subspace()) {
    const MatrixXd B = null_space_basis(cone.E, tol.rank, cone.dim);
    if (B.cols() == 0) {
      out.exact = true;
      return out;
    }
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(B.transpose() * H * B);
    int arg = 0;
    es.eigenvalues().minCoeff(&arg);
    out.dir = (B * es.eigenvectors().col(arg)).normalized();
    out.value = out.dir.dot(H * out.dir);
    out.exact = true;
    return out;
  }
  if (cone.dim == 1) {
    out.exact = true;
    for (double s : {1.0, -1.0}) {
      VectorXd d(1);
      d(0) = s;
      if (cone.contains(d, tol.cone) && s * s * H(0, 0) < out.value) {
        out.value = H(0, 0);
        out.dir = d;
      }
    }
    return out;
  }
  if (cone_is_trivial(cone, tol.cone)) {
    out.exact = true;
    return out;
  }

  const std::vector<VectorXd> starts =
      sample_cone_directions(cone, n_starts, rng, tol.cone);
  if (starts.empty()) {
    out.exact = false;  // nontrivial cone but no usable sample
    return out;
  }
  const double eta0 = 1.0 / (1.0 + H.norm());
  for (const VectorXd& s : starts) {
    VectorXd d = s;
    double val = d.dot(H * d);
    for (int it = 0; it < 60; ++it) {
      const VectorXd grad = 2.0 * (H * d - val * d);
      double eta = eta0;
      bool moved = false;
      for (int bt = 0; bt < 8; ++bt, eta *= 0.5) {
        VectorXd trial = project_onto_cone(cone, d - eta * grad);
        const double norm = trial.norm();
        if (norm < 1e-10) continue;
        trial /= norm;
        const double tval = trial.dot(H * trial);
        if (tval < val - 1e-14) {
          d = trial;
          val = tval;
          moved = true;
          break;
        }
      }
      if (!moved) break;
    }
    if (val < out.value && cone.contains(d, tol.cone)) {
      out.value = val;
      out.dir = d;
    }
  }
  out.exact = false;
  return out;
}

SocVerdict check_unconstrained_soc(const BilevelProblem& prob, const VectorXd& x,
                                   const VectorXd& y, const SocOptions& opt) {
  SocVerdict v;
  v.kind = SocKind::Unconstrained;
  const VectorXd grad = prob.grad_y_f(x, y);
  if (grad.lpNorm<Eigen::Infinity>() > opt.tol.kkt) {
    v.status = SocStatus::NotApplicable;
    v.exact = true;
    v.note = "gradient of f does not vanish";
    return v;
  }
  const MatrixXd H = prob.hess_yy_f(x, y);
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(H);
  int arg = 0;
  const double lam = es.eigenvalues().minCoeff(&arg);
  v.min_curvature = std::min(lam, 0.0);
  v.exact = true;
  if (lam >= -opt.tol.soc * (1.0 + H.norm())) {
    v.status = SocStatus::Yes;
  } else {
    v.status = SocStatus::No;
    v.witness_d = es.eigenvectors().col(arg);
    v.min_curvature = lam;
  }
  return v;
}

namespace {

SocVerdict directional_check(const BilevelProblem& prob, const VectorXd& x,
                             const VectorXd& y, bool fritz_john,
                             const SocOptions& opt) {
  SocVerdict v;
  v.kind = fritz_john ? SocKind::FritzJohn : SocKind::Basic;
  const PointCurvature pc = point_curvature(prob, x, y, opt.tol);
  const double ctol = opt.tol.soc * pc.scale;
  const int a = static_cast<int>(pc.active.size());
  const int m = prob.m;

  // Emptiness of the multiplier polytope decides applicability up front.
  if (fritz_john) {
    LinearProgram lp = LinearProgram::make(a + 1);
    lp.A_eq = MatrixXd::Zero(m + 1, a + 1);
    lp.A_eq.col(0).head(m) = pc.grad;
    lp.A_eq.block(0, 1, m, a) = pc.Wt;
    lp.A_eq.row(m).setOnes();
    lp.b_eq = VectorXd::Zero(m + 1);
    lp.b_eq(m) = 1.0;
    const FeasibilityResult feas = min_violation_point(lp);
    if (feas.residual > opt.tol.kkt) {
      v.status = SocStatus::NotApplicable;
      v.exact = true;
      v.note = "no normalized multiplier vector exists at this point";
      return v;
    }
  } else {
    const MultiplierSet ms = multiplier_set(prob, x, y, opt.tol);
    if (!ms.nonempty) {
      v.status = SocStatus::NotApplicable;
      v.exact = true;
      v.note = "no KKT multiplier exists at this point";
      return v;
    }
  }

  const PolyhedralCone cone = critical_cone(prob, x, y, opt.tol);
  if (cone_is_trivial(cone, opt.tol.cone)) {
    v.status = SocStatus::Yes;
    v.exact = true;
    v.note = "critical cone is trivial";
    return v;
  }

  Rng rng(opt.seed);
  std::vector<VectorXd> dirs =
      sample_cone_directions(cone, opt.n_directions, rng, opt.tol.cone);
  const bool exhaustive = (m == 1);
  if (dirs.empty()) {
    v.status = SocStatus::Undetermined;
    v.note = "could not sample directions from a nontrivial critical cone";
    return v;
  }

  double worst = kInf;
  for (const VectorXd& d : dirs) {
    const CurvatureSup sup = direction_curvature_sup(pc, d, fritz_john, opt.tol);
    if (!sup.applicable) {
      v.status = SocStatus::NotApplicable;
      v.exact = true;
      v.note = "multiplier system became infeasible";
      return v;
    }
    if (!sup.unbounded) worst = std::min(worst, sup.sup);
    if (!sup.unbounded && sup.sup < -ctol) {
      v.status = SocStatus::No;
      v.exact = true;  // LP certificate for this explicit direction
      v.witness_d = d;
      v.min_curvature = sup.sup;
      return v;
    }
  }
  v.status = SocStatus::Yes;
  v.exact = exhaustive;
  v.min_curvature = std::isfinite(worst) ? std::min(worst, 0.0) : 0.0;
  if (!exhaustive) v.note = "verified on sampled directions only";
  return v;
}

}  // namespace

SocVerdict check_bsoc(const BilevelProblem& prob, const VectorXd& x,
                      const VectorXd& y, const SocOptions& opt) {
  return directional_check(prob, x, y, /*fritz_john=*/false, opt);
}

SocVerdict check_fjsoc(const BilevelProblem& prob, const VectorXd& x,
                       const VectorXd& y, const SocOptions& opt) {
  return directional_check(prob, x, y, /*fritz_john=*/true, opt);
}

SocVerdict check_wsoc(const BilevelProblem& prob, const VectorXd& x,
                      const VectorXd& y, const SocOptions& opt) {
  const SubspaceResult sub = critical_subspace(prob, x, y, opt.tol);
  if (sub.basis.cols() == 0) {
    SocVerdict v;
    v.kind = SocKind::Weak;
    const MultiplierSet ms = multiplier_set(prob, x, y, opt.tol);
    if (!ms.nonempty) {
      v.status = SocStatus::NotApplicable;
      v.exact = true;
      v.note = "no KKT multiplier exists at this point";
      return v;
    }
    v.status = SocStatus::Yes;
    v.exact = true;
    v.witness_u = ms.representative;
    v.note = "critical subspace is trivial";
    return v;
  }
  const MatrixXd B = sub.basis;
  const ProbeFn probe = [&B](const MatrixXd& H) {
    CurvatureProbe res;
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(B.transpose() * H * B);
    int arg = 0;
    res.min_value = es.eigenvalues().minCoeff(&arg);
    res.dir = (B * es.eigenvectors().col(arg)).normalized();
    res.exact = true;
    return res;
  };
  return exists_multiplier_check(prob, x, y, SocKind::Weak, probe, opt);
}

SocVerdict check_ssoc(const BilevelProblem& prob, const VectorXd& x,
                      const VectorXd& y, const SocOptions& opt) {
  const PolyhedralCone cone = critical_cone(prob, x, y, opt.tol);
  if (cone_is_trivial(cone, opt.tol.cone)) {
    SocVerdict v;
    v.kind = SocKind::Strong;
    const MultiplierSet ms = multiplier_set(prob, x, y, opt.tol);
    if (!ms.nonempty) {
      v.status = SocStatus::NotApplicable;
      v.exact = true;
      v.note = "no KKT multiplier exists at this point";
      return v;
    }
    v.status = SocStatus::Yes;
    v.exact = true;
    v.witness_u = ms.representative;
    v.note = "critical cone is trivial";
    return v;
  }
  // Fresh generator per probe call keeps the check deterministic.
  const Tolerances tol = opt.tol;
  const int n_starts = opt.n_quad_starts;
  const unsigned long long seed = opt.seed;
  const ProbeFn probe = [&cone, tol, n_starts, seed](const MatrixXd& H) {
    Rng rng(seed ^ 0x9e3779b97f4a7c15ull);
    const ConeQuadMin qm = cone_quadratic_min(H, cone, n_starts, rng, tol);
    CurvatureProbe res;
    res.min_value = qm.value;
    res.dir = qm.dir;
    res.exact = qm.exact;
    return res;
  };
  return exists_multiplier_check(prob, x, y, SocKind::Strong, probe, opt);
}

SlackTriple slack_lift(const BilevelProblem& prob, const VectorXd& x,
                       const VectorXd& y, const VectorXd& u,
                       const Tolerances& tol) {
  if (y.size() != prob.m || u.size() != prob.p) {
    throw ValidationError("slack_lift: dimension mismatch");
  }
  const VectorXd gv = prob.eval_g_all(x, y);
  for (int i = 0; i < prob.p; ++i) {
    if (gv(i) > tol.feas) {
      throw ValidationError("slack_lift: constraint " + std::to_string(i) +
                            " is infeasible (g = " + std::to_string(gv(i)) + ")");
    }
    if (u(i) < -tol.pos) {
      throw ValidationError("slack_lift: multiplier " + std::to_string(i) +
                            " is negative (" + std::to_string(u(i)) + ")");
    }
    if (std::abs(u(i) * gv(i)) > tol.active) {
      throw ValidationError("slack_lift: complementarity fails on constraint " +
                            std::to_string(i));
    }
  }
  const VectorXd resid = prob.grad_y_lagrangian(x, y, u);
  const double kkt_tol = tol.kkt * (1.0 + prob.grad_y_f(x, y).lpNorm<Eigen::Infinity>());
  if (resid.lpNorm<Eigen::Infinity>() > kkt_tol) {
    throw ValidationError("slack_lift: (y, u) is not a stationary pair (residual " +
                          std::to_string(resid.lpNorm<Eigen::Infinity>()) + ")");
  }
  SlackTriple out;
  out.y = y;
  out.u = u;
  out.z.resize(prob.p);
  for (int i = 0; i < prob.p; ++i) out.z(i) = std::sqrt(std::max(0.0, -gv(i)));
  return out;
}

SlackSocResult check_slack_soc(const BilevelProblem& prob, const VectorXd& x,
                               const VectorXd& y, const VectorXd& z,
                               const VectorXd& u, const Tolerances& tol) {
  if (u.size() != prob.p) {
    throw ValidationError("check_slack_soc: multiplier dimension mismatch");
  }
  const PolyhedralCone cone = slack_critical_cone(prob, x, y, z, tol);
  const int m = prob.m, p = prob.p;
  MatrixXd H = MatrixXd::Zero(m + p, m + p);
  H.topLeftCorner(m, m) = prob.hess_yy_lagrangian(x, y, u);
  for (int i = 0; i < p; ++i) H(m + i, m + i) = 2.0 * u(i);

  SlackSocResult out;
  const MatrixXd B = null_space_basis(cone.E, tol.rank, cone.dim);
  if (B.cols() == 0) {
    out.holds = true;
    return out;
  }
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(B.transpose() * H * B);
  int arg = 0;
  const double lam = es.eigenvalues().minCoeff(&arg);
  out.min_curvature = lam;
  out.holds = lam >= -tol.soc * (1.0 + H.norm());
  if (!out.holds) out.dir = (B * es.eigenvectors().col(arg)).normalized();
  return out;
}

SlackProjection slack_project(const BilevelProblem& prob, const VectorXd& x,
                              const VectorXd& y, const VectorXd& z,
                              const VectorXd& u, const SocOptions& opt) {
  if (y.size() != prob.m || z.size() != prob.p || u.size() != prob.p) {
    throw ValidationError("slack_project: dimension mismatch");
  }
  // Stationarity of the lifted problem: the y block is the usual Lagrangian
  // gradient, the z block demands 2 u_i z_i = 0.
  const VectorXd resid = prob.grad_y_lagrangian(x, y, u);
  const double kkt_tol =
      opt.tol.kkt * (1.0 + prob.grad_y_f(x, y).lpNorm<Eigen::Infinity>());
  if (resid.lpNorm<Eigen::Infinity>() > kkt_tol) {
    throw ValidationError("slack_project: y block of the lifted system is not stationary");
  }
  for (int i = 0; i < prob.p; ++i) {
    if (std::abs(2.0 * u(i) * z(i)) > opt.tol.kkt * (1.0 + std::abs(u(i)))) {
      throw ValidationError("slack_project: z block of the lifted system is not stationary at index " +
                            std::to_string(i));
    }
  }
  const SlackSocResult soc = check_slack_soc(prob, x, y, z, u, opt.tol);
  if (!soc.holds) {
    throw ValidationError(
        "slack_project: second-order condition fails on the slack form "
        "(curvature " + std::to_string(soc.min_curvature) + "); projection refused");
  }
  SlackProjection out;
  out.y = y;
  out.u = u.cwiseMax(0.0);
  out.weak = check_wsoc(prob, x, y, opt);
  return out;
}

}  // namespace bilevel
