#include "bilevel/stationarity.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <sstream>

#include "bilevel/linprog.hpp"

namespace bilevel {

const char* stationarity_kind_name(StationarityKind k) {
  switch (k) {
    case StationarityKind::MStat: return "M_STAT";
    case StationarityKind::SStat: return "S_STAT";
    case StationarityKind::CpsocStat: return "CPSOC_STAT";
  }
  return "?";
}

const char* stationarity_status_name(StationarityStatus s) {
  switch (s) {
    case StationarityStatus::Holds: return "HOLDS";
    case StationarityStatus::RefutedOverEstimate: return "REFUTED_OVER_ESTIMATE";
    case StationarityStatus::Undetermined: return "UNDETERMINED";
  }
  return "?";
}

namespace {

// Residual threshold below which an L1-minimal violation counts as a
// feasible linear system; HOLDS additionally requires the re-verified
// equation residual to pass tol.kkt.
constexpr double kLpGate = 1e-9;
// Multiplier entries this small are presentation noise from the simplex.
constexpr double kSnap = 1e-12;

double snap(double v) { return std::abs(v) <= kSnap ? 0.0 : v; }

void require_plain_unpenalized(const GenericCombinedProgram& gcp, const char* what) {
  if (gcp.sigma.has_value())
    throw ValidationError(std::string(what) +
                          ": membership programs carry no explicit rows to attach "
                          "multipliers to (kind " +
                          reform_kind_name(gcp.kind) + ")");
  if (gcp.side != SideCondition::None)
    throw ValidationError(std::string(what) + ": kind " + reform_kind_name(gcp.kind) +
                          " carries a checker-backed side condition outside the "
                          "multiplier system; not supported");
  if (gcp.mu != 0.0 || !gcp.has_value_gap)
    throw ValidationError(std::string(what) +
                          ": expects the unpenalized program (value gap kept as a "
                          "constraint, mu = 0); got mu = " +
                          std::to_string(gcp.mu));
}

void require_feasible_point(const GenericCombinedProgram& gcp, const VectorXd& w,
                            const Tolerances& tol, const char* what) {
  if (w.size() != gcp.layout.total())
    throw ValidationError(std::string(what) + ": point has " + std::to_string(w.size()) +
                          " coordinates, program expects " +
                          std::to_string(gcp.layout.total()));
  const FeasibilityReport rep = feasible(gcp, w, tol);
  if (rep.feasible) return;
  const ResidualEntry* worst = nullptr;
  for (const auto& e : rep.entries)
    if (!e.ok && (!worst || e.value - e.bound > worst->value - worst->bound)) worst = &e;
  std::ostringstream os;
  os << what << ": point infeasible for the " << reform_kind_name(gcp.kind) << " program";
  if (worst) os << " (worst: " << worst->name << " = " << worst->value << ")";
  throw ValidationError(os.str());
}

void note_box_touch(const GenericCombinedProgram& gcp, const VectorXd& w,
                    const Tolerances& tol, std::vector<std::string>& notes) {
  const BilevelProblem& prob = *gcp.problem;
  const auto touches = [&](const std::vector<Box>& boxes, const VectorXd& v) {
    for (int i = 0; i < v.size(); ++i)
      if (v[i] <= boxes[i].lo + tol.active || v[i] >= boxes[i].hi - tol.active) return true;
    return false;
  };
  if (touches(prob.x_box, gcp.layout.x_of(w)))
    notes.push_back(
        "point touches the x search box; box bounds are treated as domain, not "
        "constraints, and carry no multiplier");
  if (touches(prob.y_box, gcp.layout.y_of(w)))
    notes.push_back(
        "point touches the y search box; box bounds are treated as domain, not "
        "constraints, and carry no multiplier");
}

// Complementarity index sets at the point, plus the multipliers pinned to
// zero by them: lambda_g_j = 0 off I_g u I0, lambda_u_j = 0 off I_u u I0.
struct IndexSets {
  std::vector<int> I_g, I_u, I0;
  std::vector<char> pin_lg, pin_lu;  // size p
};

IndexSets classify(const GenericCombinedProgram& gcp, const VectorXd& w,
                   const Tolerances& tol) {
  IndexSets s;
  if (!gcp.complementarity || !gcp.layout.has_u || gcp.layout.p == 0) return s;
  const int p = gcp.layout.p;
  s.pin_lg.assign(p, 0);
  s.pin_lu.assign(p, 0);
  const VectorXd u = gcp.layout.u_of(w);
  for (int j = 0; j < p; ++j) {
    const bool active = gcp.g_ext_c[j].eval(w) >= -tol.active;
    const bool upos = u[j] > tol.pos;
    if (active && upos) {
      s.I_g.push_back(j);
      s.pin_lu[j] = 1;
    } else if (!active && !upos) {
      s.I_u.push_back(j);
      s.pin_lg[j] = 1;
    } else if (active) {
      s.I0.push_back(j);
    } else {
      // inactive constraint with a positive multiplier: both conditions pin
      s.pin_lg[j] = s.pin_lu[j] = 1;
    }
  }
  return s;
}

VectorXd ext_grad(const Expr& e, const VectorXd& w) {
  VectorXd g(w.size());
  for (int t = 0; t < w.size(); ++t) g[t] = e.diff(t).eval(w);
  return g;
}

// Normal-cone state of each explicit row at the point: equality rows have a
// free multiplier, active inequality rows a nonnegative one, inactive rows
// none.
enum class RowState { Pinned, Nonneg, Free };

std::vector<RowState> row_states(const GenericCombinedProgram& gcp, const VectorXd& w,
                                 const Tolerances& tol) {
  std::vector<RowState> st(gcp.rows.size());
  for (std::size_t r = 0; r < gcp.rows.size(); ++r) {
    if (gcp.rows[r].target == ConeFactor::Zero)
      st[r] = RowState::Free;
    else
      st[r] = gcp.rows[r].h_c.eval(w) >= -tol.active ? RowState::Nonneg : RowState::Pinned;
  }
  return st;
}

std::vector<VectorXd> estimate_from_minimizers(const BilevelProblem& prob,
                                               const VectorXd& x,
                                               const std::vector<VectorXd>& minimizers,
                                               const Tolerances& tol) {
  std::vector<VectorXd> verts;
  for (const VectorXd& y : minimizers) {
    if (prob.p == 0) {
      verts.push_back(prob.grad_x_f(x, y));
      continue;
    }
    const MultiplierSet ms = multiplier_set(prob, x, y, tol);
    if (!ms.nonempty)
      throw ValidationError(
          "subdifferential estimate unavailable: empty multiplier set at a "
          "lower-level minimizer (stationarity residual " +
          std::to_string(ms.residual) + ")");
    if (!ms.bounded)
      throw ValidationError(
          "subdifferential estimate unavailable: unbounded multiplier set at a "
          "lower-level minimizer (no constraint qualification)");
    if (!ms.vertices_complete || ms.vertices.empty())
      throw ValidationError(
          "subdifferential estimate unavailable: multiplier-set vertex "
          "enumeration incomplete");
    const MatrixXd JxT = prob.jac_x_g(x, y).transpose();  // n x p
    const VectorXd base = prob.grad_x_f(x, y);
    for (const VectorXd& uv : ms.vertices) verts.push_back(base + JxT * uv);
  }
  std::vector<VectorXd> uniq;
  for (const auto& v : verts) {
    bool dup = false;
    for (const auto& kept : uniq)
      if ((v - kept).lpNorm<Eigen::Infinity>() <= tol.cluster) {
        dup = true;
        break;
      }
    if (!dup) uniq.push_back(v);
  }
  return uniq;
}

std::vector<std::vector<int>> enumerate_branches(int k, bool s_variant) {
  std::vector<std::vector<int>> out;
  out.emplace_back(k, 2);  // the S-branch: every biactive pair nonnegative
  if (s_variant || k == 0) return out;
  long total = 1;
  for (int i = 0; i < k; ++i) total *= 3;
  for (long idx = 0; idx < total; ++idx) {
    std::vector<int> code(k);
    long v = idx;
    bool all_two = true;
    for (int i = 0; i < k; ++i) {
      code[i] = static_cast<int>(v % 3);
      v /= 3;
      all_two = all_two && code[i] == 2;
    }
    if (all_two) continue;
    out.push_back(std::move(code));
  }
  return out;
}

StationarityCertificate check_value_stationarity(const GenericCombinedProgram& gcp,
                                                 const VectorXd& w, const Tolerances& tol,
                                                 bool s_variant) {
  const char* what = s_variant ? "check_s_stationary" : "check_m_stationary";
  require_plain_unpenalized(gcp, what);
  require_feasible_point(gcp, w, tol, what);

  const GcpLayout& L = gcp.layout;
  const int N = L.total();
  const int p = (gcp.complementarity && L.has_u) ? L.p : 0;
  const int R = static_cast<int>(gcp.rows.size());

  StationarityCertificate cert;
  cert.kind = s_variant ? StationarityKind::SStat : StationarityKind::MStat;
  note_box_touch(gcp, w, tol, cert.notes);

  const IndexSets is = classify(gcp, w, tol);
  cert.I_g = is.I_g;
  cert.I_u = is.I_u;
  cert.I0 = is.I0;
  if (static_cast<int>(is.I0.size()) > 10)
    throw ValidationError(std::string(what) +
                          ": biactive set too large for case enumeration (|I0| = " +
                          std::to_string(is.I0.size()) + " > 10)");

  // Outer estimate of the value-function subdifferential at the point's x.
  std::vector<VectorXd> est;
  bool have_est = false;
  try {
    est = gcp.oracle ? subdifferential_estimate_V(*gcp.oracle, L.x_of(w), tol)
                     : subdifferential_estimate_V(*gcp.problem, L.x_of(w), LowerOptions{}, tol);
    have_est = true;
  } catch (const ValidationError& err) {
    cert.notes.push_back(std::string(err.what()) + "; only the mu = 0 system is testable");
  }
  const int K = have_est ? static_cast<int>(est.size()) : 0;

  // Extended gradients of every term at the point.
  const VectorXd gF = ext_grad(gcp.objective, w);
  const VectorXd gf = ext_grad(gcp.f_ext, w);
  std::vector<VectorXd> gg(p), gH(R);
  for (int j = 0; j < p; ++j) gg[j] = ext_grad(gcp.g_ext[j], w);
  for (int r = 0; r < R; ++r) gH[r] = ext_grad(gcp.rows[r].h, w);
  const std::vector<RowState> st = row_states(gcp, w, tol);

  // Linear-program variables: mu, eta (hull weights, sum = mu), lambda_g,
  // lambda_u, lambda_H.
  const int i_mu = 0;
  const int i_eta = 1;
  const int i_lg = i_eta + K;
  const int i_lu = i_lg + p;
  const int i_lH = i_lu + p;
  const int NV = i_lH + R;

  const int base_rows = N + 1;  // stationarity equations + (hull or mu pin) row
  MatrixXd A0 = MatrixXd::Zero(base_rows, NV);
  VectorXd b0 = VectorXd::Zero(base_rows);
  for (int t = 0; t < N; ++t) {
    A0(t, i_mu) = gf[t];
    if (t < L.n)
      for (int k = 0; k < K; ++k) A0(t, i_eta + k) = -est[k][t];
    for (int j = 0; j < p; ++j) A0(t, i_lg + j) = gg[j][t];
    for (int r = 0; r < R; ++r) A0(t, i_lH + r) = gH[r][t];
    b0[t] = -gF[t];
  }
  for (int j = 0; j < p; ++j) A0(L.u_offset() + j, i_lu + j) = -1.0;
  if (have_est) {
    A0(N, i_mu) = -1.0;
    for (int k = 0; k < K; ++k) A0(N, i_eta + k) = 1.0;
  } else {
    A0(N, i_mu) = 1.0;  // without the estimate only mu = 0 is testable
  }

  std::vector<bool> base_nonneg(NV, false);
  base_nonneg[i_mu] = true;
  for (int k = 0; k < K; ++k) base_nonneg[i_eta + k] = true;
  std::vector<int> base_pins;
  for (int j = 0; j < p; ++j) {
    if (is.pin_lg[j]) base_pins.push_back(i_lg + j);
    if (is.pin_lu[j]) base_pins.push_back(i_lu + j);
  }
  for (int r = 0; r < R; ++r) {
    if (st[r] == RowState::Pinned)
      base_pins.push_back(i_lH + r);
    else if (st[r] == RowState::Nonneg)
      base_nonneg[i_lH + r] = true;
  }

  const auto branches = enumerate_branches(static_cast<int>(is.I0.size()), s_variant);
  bool near_miss = false;
  for (const auto& code : branches) {
    std::vector<int> pins = base_pins;
    std::vector<bool> nonneg = base_nonneg;
    for (std::size_t bi = 0; bi < code.size(); ++bi) {
      const int j = is.I0[bi];
      if (code[bi] == 0)
        pins.push_back(i_lg + j);
      else if (code[bi] == 1)
        pins.push_back(i_lu + j);
      else {
        nonneg[i_lg + j] = true;
        nonneg[i_lu + j] = true;
      }
    }

    LinearProgram lp = LinearProgram::make(NV);
    const int rows = base_rows + static_cast<int>(pins.size());
    lp.A_eq = MatrixXd::Zero(rows, NV);
    lp.A_eq.topRows(base_rows) = A0;
    for (std::size_t i = 0; i < pins.size(); ++i)
      lp.A_eq(base_rows + static_cast<int>(i), pins[i]) = 1.0;
    lp.b_eq = VectorXd::Zero(rows);
    lp.b_eq.head(base_rows) = b0;
    lp.nonneg = nonneg;

    const FeasibilityResult fr = min_violation_point(lp);
    if (fr.residual > kLpGate) continue;  // this case combination is infeasible

    const double mu = snap(fr.z[i_mu]);
    VectorXd eta(K);
    for (int k = 0; k < K; ++k) eta[k] = snap(fr.z[i_eta + k]);
    VectorXd lg(p), lu(p), lH(R);
    for (int j = 0; j < p; ++j) {
      lg[j] = snap(fr.z[i_lg + j]);
      lu[j] = snap(fr.z[i_lu + j]);
    }
    for (int r = 0; r < R; ++r) lH[r] = snap(fr.z[i_lH + r]);

    // Re-verify the stationarity equation with the snapped multipliers.
    VectorXd E = gF + mu * gf;
    for (int k = 0; k < K; ++k) E.head(L.n) -= eta[k] * est[k];
    for (int j = 0; j < p; ++j) {
      E += lg[j] * gg[j];
      E(L.u_offset() + j) -= lu[j];
    }
    for (int r = 0; r < R; ++r) E += lH[r] * gH[r];
    double resid = E.lpNorm<Eigen::Infinity>();
    if (have_est) resid = std::max(resid, std::abs(eta.sum() - mu));

    // Defensive sign audit; the linear program enforces these by construction.
    bool signs_ok = mu >= 0.0;
    for (int k = 0; k < K; ++k) signs_ok = signs_ok && eta[k] >= 0.0;
    for (int v = 0; v < NV; ++v)
      if (nonneg[v]) signs_ok = signs_ok && fr.z[v] >= -kSnap;
    for (int pin : pins) signs_ok = signs_ok && snap(fr.z[pin]) == 0.0;

    if (resid <= tol.kkt && signs_ok) {
      cert.status = StationarityStatus::Holds;
      cert.mu = mu;
      if (mu > tol.pos) {
        cert.xi = VectorXd::Zero(L.n);
        for (int k = 0; k < K; ++k) cert.xi += (eta[k] / mu) * est[k];
      } else if (have_est) {
        cert.notes.push_back(
            "mu = 0: the certificate is independent of the subdifferential estimate");
      }
      cert.lambda_g = lg;
      cert.lambda_u = lu;
      cert.lambda_H = lH;
      cert.branch = code;
      cert.residual = resid;
      return cert;
    }
    near_miss = true;
  }

  if (near_miss) {
    cert.status = StationarityStatus::Undetermined;
    cert.notes.push_back(
        "a case combination was linearly feasible but failed re-verification at "
        "tol.kkt; neither holding nor refuted");
  } else if (have_est) {
    cert.status = StationarityStatus::RefutedOverEstimate;
    cert.notes.push_back("all " + std::to_string(branches.size()) +
                         " case combination(s) infeasible over the estimate's hull (" +
                         std::to_string(K) +
                         " vertices); refutation is relative to the enumerated "
                         "estimate, the true subdifferential may be smaller");
  } else {
    cert.status = StationarityStatus::Undetermined;
    cert.notes.push_back(
        "the mu = 0 system is infeasible and mu > 0 cannot be tested without the "
        "subdifferential estimate");
  }
  return cert;
}

}  // namespace

std::vector<VectorXd> subdifferential_estimate_V(const BilevelProblem& prob,
                                                 const VectorXd& x,
                                                 const LowerOptions& lower_opt,
                                                 const Tolerances& tol) {
  if (x.size() != prob.n)
    throw ValidationError("subdifferential estimate: x has " + std::to_string(x.size()) +
                          " coordinates, problem expects " + std::to_string(prob.n));
  const LowerSolution sol = solve_lower(prob, x, lower_opt);
  if (!sol.feasible_found || sol.minimizers.empty())
    throw ValidationError(
        "subdifferential estimate: lower level infeasible at the queried x");
  return estimate_from_minimizers(prob, x, sol.minimizers, tol);
}

std::vector<VectorXd> subdifferential_estimate_V(const ValueOracle& oracle,
                                                 const VectorXd& x, const Tolerances& tol) {
  const LowerSolution& sol = oracle.solution(x);
  if (!sol.feasible_found || sol.minimizers.empty())
    throw ValidationError(
        "subdifferential estimate: lower level infeasible at the queried x");
  return estimate_from_minimizers(oracle.problem(), x, sol.minimizers, tol);
}

StationarityCertificate check_m_stationary(const GenericCombinedProgram& gcp,
                                           const VectorXd& point, const Tolerances& tol) {
  return check_value_stationarity(gcp, point, tol, /*s_variant=*/false);
}

StationarityCertificate check_s_stationary(const GenericCombinedProgram& gcp,
                                           const VectorXd& point, const Tolerances& tol) {
  return check_value_stationarity(gcp, point, tol, /*s_variant=*/true);
}

bool check_mpec_licq(const GenericCombinedProgram& gcp, const VectorXd& point,
                     const Tolerances& tol) {
  require_plain_unpenalized(gcp, "check_mpec_licq");
  require_feasible_point(gcp, point, tol, "check_mpec_licq");

  const GcpLayout& L = gcp.layout;
  const int N = L.total();
  const int p = (gcp.complementarity && L.has_u) ? L.p : 0;
  const IndexSets is = classify(gcp, point, tol);
  const std::vector<RowState> st = row_states(gcp, point, tol);

  std::vector<char> g_active(p, 0), u_unit(p, 0);
  for (int j : is.I_g) g_active[j] = 1;
  for (int j : is.I0) {
    g_active[j] = 1;
    u_unit[j] = 1;
  }
  for (int j : is.I_u) u_unit[j] = 1;

  std::vector<VectorXd> cols;
  for (int j = 0; j < p; ++j)
    if (g_active[j]) cols.push_back(ext_grad(gcp.g_ext[j], point));
  for (int j = 0; j < p; ++j)
    if (u_unit[j]) {
      VectorXd e = VectorXd::Zero(N);
      e(L.u_offset() + j) = 1.0;
      cols.push_back(std::move(e));
    }
  for (std::size_t r = 0; r < gcp.rows.size(); ++r)
    if (st[r] != RowState::Pinned) cols.push_back(ext_grad(gcp.rows[r].h, point));

  if (cols.empty()) return true;  // vacuously nondegenerate
  MatrixXd M(N, static_cast<int>(cols.size()));
  for (int i = 0; i < M.cols(); ++i) M.col(i) = cols[static_cast<std::size_t>(i)];
  Eigen::ColPivHouseholderQR<MatrixXd> qr(M);
  qr.setThreshold(tol.rank);
  return qr.rank() == M.cols();
}

StationarityCertificate check_cpsoc_stationarity(const BilevelProblem& prob,
                                                 const VectorXd& x, const VectorXd& y,
                                                 const LowerOptions& lower_opt,
                                                 const Tolerances& tol) {
  // The builder rejects lower levels with inequality constraints.
  const GenericCombinedProgram gcp = build(prob, ReformKind::CPSOC, lower_opt);
  CandidatePoint c;
  c.name = "query";
  c.x = x;
  c.y = y;
  const VectorXd w = gcp.pack(c);

  StationarityCertificate cert;
  cert.kind = StationarityKind::CpsocStat;

  if (prob.m > 3) {
    cert.status = StationarityStatus::Undetermined;
    cert.notes.push_back("the second-order multiplier search supports at most three "
                         "lower-level variables (m = " +
                         std::to_string(prob.m) + "); feasibility not verified either");
    return cert;
  }

  require_feasible_point(gcp, w, tol, "check_cpsoc_stationarity");
  note_box_touch(gcp, w, tol, cert.notes);
  if (prob.q > 0)
    cert.notes.push_back(
        "upper-level constraints are present but carry no multiplier in the "
        "second-order system; they were checked for feasibility only");

  const int n = prob.n, m = prob.m, N = n + m;
  const VectorXd xy = prob.join(x, y);

  // Kernel of the (PSD) Hessian: the trace-orthogonality condition confines
  // the matrix multiplier to it.
  const MatrixXd H = prob.hess_yy_f(x, y);
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(H);
  const double scale = std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
  std::vector<int> kidx;
  for (int i = 0; i < m; ++i)
    if (std::abs(es.eigenvalues()[i]) <= tol.soc * scale) kidx.push_back(i);
  const int k = static_cast<int>(kidx.size());
  MatrixXd Z(m, k);
  for (int i = 0; i < k; ++i) Z.col(i) = es.eigenvectors().col(kidx[i]);
  cert.notes.push_back("Hessian kernel dimension " + std::to_string(k) +
                       "; the matrix multiplier is confined to the kernel by the "
                       "trace condition");

  // Derivative data at (x, y): T[t] = d/dt hess_yy f (third derivatives),
  // Jgf column a = gradient of (grad_y f)_a.
  std::vector<MatrixXd> T(static_cast<std::size_t>(N));
  for (int t = 0; t < N; ++t) {
    MatrixXd Tt(m, m);
    for (int a = 0; a < m; ++a)
      for (int b = 0; b < m; ++b) Tt(a, b) = prob.f_dyy[a][b].diff(t).eval(xy);
    T[static_cast<std::size_t>(t)] = 0.5 * (Tt + Tt.transpose());
  }
  MatrixXd Jgf(N, m);
  for (int t = 0; t < N; ++t)
    for (int a = 0; a < m; ++a) Jgf(t, a) = prob.f_dy[a].diff(t).eval(xy);
  VectorXd gF(N), gf(N);
  for (int t = 0; t < N; ++t) {
    gF[t] = prob.F.diff(t).eval(xy);
    gf[t] = prob.f.diff(t).eval(xy);
  }

  std::vector<VectorXd> est;
  bool have_est = false;
  try {
    est = subdifferential_estimate_V(*gcp.oracle, x, tol);
    have_est = true;
  } catch (const ValidationError& err) {
    cert.notes.push_back(std::string(err.what()) + "; only the mu = 0 system is testable");
  }
  const int K = have_est ? static_cast<int>(est.size()) : 0;

  // Reduced third-derivative quadratic forms over the kernel basis.
  std::vector<MatrixXd> Ct(static_cast<std::size_t>(N));
  for (int t = 0; t < N; ++t)
    Ct[static_cast<std::size_t>(t)] =
        Z.transpose() * T[static_cast<std::size_t>(t)] * Z;

  // Shared variable layout: mu, eta (hull weights), beta, then the kernel
  // block (one scalar for k = 1, packed symmetric entries for k >= 2).
  const int i_mu = 0;
  const int i_eta = 1;
  const int i_beta = i_eta + K;
  const int i_om = i_beta + m;

  // Verification helper: full-equation residual with the candidate
  // multipliers (also the trace condition and the hull-weight identity).
  const auto verify = [&](double mu, const VectorXd& eta, const VectorXd& beta,
                          const MatrixXd& Omega) {
    VectorXd E = gF + mu * gf + Jgf * beta;
    for (int k2 = 0; k2 < K; ++k2) E.head(n) -= eta[k2] * est[k2];
    for (int t = 0; t < N; ++t)
      E[t] -= (T[static_cast<std::size_t>(t)].cwiseProduct(Omega)).sum();
    double resid = E.lpNorm<Eigen::Infinity>();
    resid = std::max(resid, std::abs((H.cwiseProduct(Omega)).sum()));
    if (have_est) resid = std::max(resid, std::abs(eta.sum() - mu));
    return resid;
  };

  const auto fill_holds = [&](double mu, const VectorXd& eta, const VectorXd& beta,
                              const MatrixXd& Omega, double resid) {
    cert.status = StationarityStatus::Holds;
    cert.mu = mu;
    if (mu > tol.pos) {
      cert.xi = VectorXd::Zero(n);
      for (int k2 = 0; k2 < K; ++k2) cert.xi += (eta[k2] / mu) * est[k2];
    } else if (have_est) {
      cert.notes.push_back(
          "mu = 0: the certificate is independent of the subdifferential estimate");
    }
    cert.beta = beta;
    cert.Omega = Omega;
    cert.residual = resid;
  };

  if (k <= 1) {
    // Exact path: the kernel block is a single nonnegative scalar (or absent),
    // so the whole system is one linear feasibility program.
    const int NV = i_om + k;
    MatrixXd A = MatrixXd::Zero(N + 1, NV);
    VectorXd b = VectorXd::Zero(N + 1);
    for (int t = 0; t < N; ++t) {
      A(t, i_mu) = gf[t];
      if (t < n)
        for (int k2 = 0; k2 < K; ++k2) A(t, i_eta + k2) = -est[k2][t];
      for (int a = 0; a < m; ++a) A(t, i_beta + a) = Jgf(t, a);
      if (k == 1) A(t, i_om) = -Ct[static_cast<std::size_t>(t)](0, 0);
      b[t] = -gF[t];
    }
    if (have_est) {
      A(N, i_mu) = -1.0;
      for (int k2 = 0; k2 < K; ++k2) A(N, i_eta + k2) = 1.0;
    } else {
      A(N, i_mu) = 1.0;
    }
    LinearProgram lp = LinearProgram::make(NV);
    lp.A_eq = A;
    lp.b_eq = b;
    lp.nonneg.assign(NV, false);
    lp.nonneg[i_mu] = true;
    for (int k2 = 0; k2 < K; ++k2) lp.nonneg[i_eta + k2] = true;
    if (k == 1) lp.nonneg[i_om] = true;

    const FeasibilityResult fr = min_violation_point(lp);
    if (fr.residual <= kLpGate) {
      const double mu = snap(fr.z[i_mu]);
      VectorXd eta(K);
      for (int k2 = 0; k2 < K; ++k2) eta[k2] = snap(fr.z[i_eta + k2]);
      VectorXd beta(m);
      for (int a = 0; a < m; ++a) beta[a] = snap(fr.z[i_beta + a]);
      MatrixXd Omega = MatrixXd::Zero(m, m);
      if (k == 1) Omega = snap(fr.z[i_om]) * (Z * Z.transpose());
      const double resid = verify(mu, eta, beta, Omega);
      if (resid <= tol.kkt) {
        fill_holds(mu, eta, beta, Omega, resid);
        return cert;
      }
      cert.status = StationarityStatus::Undetermined;
      cert.notes.push_back(
          "the reduced system was linearly feasible but failed re-verification at "
          "tol.kkt; neither holding nor refuted");
      return cert;
    }
    if (have_est) {
      cert.status = StationarityStatus::RefutedOverEstimate;
      cert.notes.push_back(
          "the multiplier system is infeasible for every element of the "
          "estimate's hull (" +
          std::to_string(K) +
          " vertices); refutation is relative to the enumerated estimate");
    } else {
      cert.status = StationarityStatus::Undetermined;
      cert.notes.push_back(
          "the mu = 0 system is infeasible and mu > 0 cannot be tested without "
          "the subdifferential estimate");
    }
    return cert;
  }

  // k >= 2: semidefinite feasibility over the kernel block, solved by
  // alternating projection between the affine equations and the cone
  // constraints. Non-convergence is inconclusive, never a refutation.
  const int ns = k * (k + 1) / 2;
  const int NV = i_om + ns;
  std::vector<std::pair<int, int>> packed;
  packed.reserve(static_cast<std::size_t>(ns));
  for (int a = 0; a < k; ++a)
    for (int b = a; b < k; ++b) packed.emplace_back(a, b);

  MatrixXd A = MatrixXd::Zero(N + 1, NV);
  VectorXd b = VectorXd::Zero(N + 1);
  for (int t = 0; t < N; ++t) {
    A(t, i_mu) = gf[t];
    if (t < n)
      for (int k2 = 0; k2 < K; ++k2) A(t, i_eta + k2) = -est[k2][t];
    for (int a = 0; a < m; ++a) A(t, i_beta + a) = Jgf(t, a);
    for (int s = 0; s < ns; ++s) {
      const auto [a2, b2] = packed[static_cast<std::size_t>(s)];
      const double coef = Ct[static_cast<std::size_t>(t)](a2, b2);
      A(t, i_om + s) = (a2 == b2) ? -coef : -2.0 * coef;
    }
    b[t] = -gF[t];
  }
  if (have_est) {
    A(N, i_mu) = -1.0;
    for (int k2 = 0; k2 < K; ++k2) A(N, i_eta + k2) = 1.0;
  } else {
    A(N, i_mu) = 1.0;
  }

  Eigen::CompleteOrthogonalDecomposition<MatrixXd> cod(A);
  VectorXd v = cod.solve(b);  // minimal-norm least-squares start

  const auto unpack = [&](const VectorXd& vv) {
    MatrixXd Om(k, k);
    for (int s = 0; s < ns; ++s) {
      const auto [a2, b2] = packed[static_cast<std::size_t>(s)];
      Om(a2, b2) = vv[i_om + s];
      Om(b2, a2) = vv[i_om + s];
    }
    return Om;
  };
  const auto repack = [&](VectorXd& vv, const MatrixXd& Om) {
    for (int s = 0; s < ns; ++s) {
      const auto [a2, b2] = packed[static_cast<std::size_t>(s)];
      vv[i_om + s] = Om(a2, b2);
    }
  };
  const auto project_cone = [&](VectorXd& vv) {
    vv[i_mu] = std::max(0.0, vv[i_mu]);
    for (int k2 = 0; k2 < K; ++k2) vv[i_eta + k2] = std::max(0.0, vv[i_eta + k2]);
    MatrixXd Om = unpack(vv);
    Eigen::SelfAdjointEigenSolver<MatrixXd> eso(Om);
    VectorXd lam = eso.eigenvalues().cwiseMax(0.0);
    Om = eso.eigenvectors() * lam.asDiagonal() * eso.eigenvectors().transpose();
    repack(vv, Om);
  };

  const int max_iters = 10000;
  double afres = std::numeric_limits<double>::infinity();
  bool converged = false;
  for (int iter = 0; iter < max_iters; ++iter) {
    project_cone(v);
    const VectorXd r = A * v - b;
    afres = r.lpNorm<Eigen::Infinity>();
    if (afres <= 1e-11) {
      converged = true;
      break;
    }
    v -= cod.solve(r);
  }

  if (converged) {
    const double mu = snap(v[i_mu]);
    VectorXd eta(K);
    for (int k2 = 0; k2 < K; ++k2) eta[k2] = snap(v[i_eta + k2]);
    VectorXd beta(m);
    for (int a = 0; a < m; ++a) beta[a] = snap(v[i_beta + a]);
    const MatrixXd Omega = Z * unpack(v) * Z.transpose();
    const double resid = verify(mu, eta, beta, Omega);
    if (resid <= tol.kkt) {
      fill_holds(mu, eta, beta, Omega, resid);
      return cert;
    }
    cert.status = StationarityStatus::Undetermined;
    cert.notes.push_back(
        "alternating projection converged on the reduced system but the full "
        "residual exceeds tol.kkt; neither holding nor refuted");
    return cert;
  }
  cert.status = StationarityStatus::Undetermined;
  cert.notes.push_back("alternating projection did not converge within " +
                       std::to_string(max_iters) + " iterations (affine residual " +
                       std::to_string(afres) +
                       "); feasibility undecided, not claiming refutation");
  return cert;
}

}  // namespace bilevel
