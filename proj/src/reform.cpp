#include "bilevel/reform.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <cctype>
#include <numeric>
#include <utility>

namespace bilevel {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct KindRow {
  ReformKind kind;
  const char* name;
  bool membership;
};

constexpr KindRow kKinds[] = {
    {ReformKind::VP, "VP", false},
    {ReformKind::CP, "CP", false},
    {ReformKind::CPFJ, "CPFJ", false},
    {ReformKind::KKTCP, "KKTCP", true},
    {ReformKind::CPSOC, "CPSOC", false},
    {ReformKind::FJSOCP, "FJSOCP", true},
    {ReformKind::R_FJSOCP, "R-FJSOCP", false},
    {ReformKind::R_BSOCP, "R-BSOCP", false},
    {ReformKind::SSOCP, "SSOCP", false},
    {ReformKind::WSOCP, "WSOCP", false},
    {ReformKind::WSOCPZ, "WSOCPZ", false},
    {ReformKind::SOCP_B, "SOCP-B", true},
    {ReformKind::SOCP_W, "SOCP-W", true},
    {ReformKind::SOCP_S, "SOCP-S", true},
};

const KindRow& kind_row(ReformKind kind) {
  for (const auto& row : kKinds)
    if (row.kind == kind) return row;
  throw ValidationError("unknown reformulation kind");
}

std::string normalized_token(const std::string& name) {
  std::string s;
  for (char c : name) {
    if (c == '-') c = '_';
    s.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  }
  return s;
}

constexpr const char* kSigmaNames[] = {"KKT", "BSOC", "WSOC", "SSOC", "FJSOC", "GPHS"};

}  // namespace

const char* reform_kind_name(ReformKind kind) { return kind_row(kind).name; }

ReformKind reform_kind_from_name(const std::string& name) {
  const std::string token = normalized_token(name);
  std::string known;
  for (const auto& row : kKinds) {
    if (normalized_token(row.name) == token) return row.kind;
    known += known.empty() ? row.name : std::string(", ") + row.name;
  }
  throw ValidationError("unknown reformulation kind '" + name + "' (known: " + known + ")");
}

bool is_membership_kind(ReformKind kind) { return kind_row(kind).membership; }

const char* sigma_kind_name(SigmaKind kind) {
  return kSigmaNames[static_cast<int>(kind)];
}

SigmaKind sigma_kind_from_name(const std::string& name) {
  const std::string token = normalized_token(name);
  for (int i = 0; i < 6; ++i)
    if (kSigmaNames[i] == token) return static_cast<SigmaKind>(i);
  throw ValidationError(
      "unknown sigma set '" + name + "' (known: KKT, BSOC, WSOC, SSOC, FJSOC, GPHS)");
}

// ---------------------------------------------------------------------------
// Layout

int GcpLayout::total() const {
  return n + m + (has_u0 ? 1 : 0) + (has_u ? p : 0) + (has_d ? m : 0) +
         (has_z ? p : 0) + (has_lambda ? p : 0);
}

namespace {
int require_block(bool present, int offset, const char* name) {
  if (!present) throw ValidationError(std::string("layout has no ") + name + " block");
  return offset;
}

void check_point_size(const GcpLayout& L, const VectorXd& w) {
  if (static_cast<int>(w.size()) != L.total())
    throw ValidationError("point has length " + std::to_string(w.size()) +
                          "; this program expects " + std::to_string(L.total()));
}
}  // namespace

int GcpLayout::u0_offset() const { return require_block(has_u0, n + m, "u0"); }
int GcpLayout::u_offset() const {
  return require_block(has_u, n + m + (has_u0 ? 1 : 0), "u");
}
int GcpLayout::d_offset() const {
  return require_block(has_d, n + m + (has_u0 ? 1 : 0) + (has_u ? p : 0), "d");
}
int GcpLayout::z_offset() const {
  return require_block(
      has_z, n + m + (has_u0 ? 1 : 0) + (has_u ? p : 0) + (has_d ? m : 0), "z");
}
int GcpLayout::lambda_offset() const {
  return require_block(has_lambda,
                       n + m + (has_u0 ? 1 : 0) + (has_u ? p : 0) +
                           (has_d ? m : 0) + (has_z ? p : 0),
                       "lambda");
}

VectorXd GcpLayout::x_of(const VectorXd& w) const {
  check_point_size(*this, w);
  return w.segment(0, n);
}
VectorXd GcpLayout::y_of(const VectorXd& w) const {
  check_point_size(*this, w);
  return w.segment(n, m);
}
double GcpLayout::u0_of(const VectorXd& w) const {
  check_point_size(*this, w);
  return w[u0_offset()];
}
VectorXd GcpLayout::u_of(const VectorXd& w) const {
  check_point_size(*this, w);
  return w.segment(u_offset(), p);
}
VectorXd GcpLayout::d_of(const VectorXd& w) const {
  check_point_size(*this, w);
  return w.segment(d_offset(), m);
}
VectorXd GcpLayout::z_of(const VectorXd& w) const {
  check_point_size(*this, w);
  return w.segment(z_offset(), p);
}
VectorXd GcpLayout::lambda_of(const VectorXd& w) const {
  check_point_size(*this, w);
  return w.segment(lambda_offset(), p);
}

// ---------------------------------------------------------------------------
// Builders

namespace {

GcpLayout layout_for(const BilevelProblem& prob, ReformKind kind) {
  GcpLayout L;
  L.n = prob.n;
  L.m = prob.m;
  L.p = prob.p;
  switch (kind) {
    case ReformKind::CP:
    case ReformKind::SSOCP:
    case ReformKind::WSOCP:
      L.has_u = true;
      break;
    case ReformKind::CPFJ:
      L.has_u0 = L.has_u = true;
      break;
    case ReformKind::R_FJSOCP:
      L.has_u0 = L.has_u = L.has_d = true;
      break;
    case ReformKind::R_BSOCP:
      L.has_u = L.has_d = true;
      break;
    case ReformKind::WSOCPZ:
      L.has_z = L.has_lambda = true;
      break;
    default:
      break;  // VP, CPSOC, membership kinds: (x, y) only
  }
  return L;
}

struct Extended {
  VarTable table;
  std::vector<int> base_map;  // identity over the problem's (x, y) block
  std::vector<Expr> var;      // one Expr per extended coordinate
};

Extended extend_table(const BilevelProblem& prob, const GcpLayout& L) {
  std::vector<std::string> names(prob.vars->begin(),
                                 prob.vars->begin() + prob.n + prob.m);
  if (L.has_u0) names.push_back("u0");
  if (L.has_u)
    for (int i = 1; i <= L.p; ++i) names.push_back("u" + std::to_string(i));
  if (L.has_d)
    for (int i = 1; i <= L.m; ++i) names.push_back("d" + std::to_string(i));
  if (L.has_z)
    for (int i = 1; i <= L.p; ++i) names.push_back("z" + std::to_string(i));
  if (L.has_lambda)
    for (int i = 1; i <= L.p; ++i) names.push_back("lambda" + std::to_string(i));

  Extended ext;
  ext.table = make_var_table(std::move(names));
  ext.base_map.resize(prob.n + prob.m);
  std::iota(ext.base_map.begin(), ext.base_map.end(), 0);
  const int total = static_cast<int>(ext.table->size());
  ext.var.reserve(total);
  for (int i = 0; i < total; ++i) ext.var.push_back(Expr::variable(i, ext.table));
  return ext;
}

GenericCombinedProgram make_common(const BilevelProblem& prob, ReformKind kind,
                                   const LowerOptions& lower_opt, Extended& ext) {
  GenericCombinedProgram gcp;
  gcp.kind = kind;
  gcp.layout = layout_for(prob, kind);
  gcp.problem = std::make_shared<const BilevelProblem>(prob);
  gcp.oracle = std::make_shared<ValueOracle>(*gcp.problem, lower_opt);
  ext = extend_table(*gcp.problem, gcp.layout);
  gcp.vars = ext.table;
  gcp.objective = gcp.problem->F.rebased(ext.table, ext.base_map);
  gcp.f_ext = gcp.problem->f.rebased(ext.table, ext.base_map);
  for (const Expr& gi : gcp.problem->g)
    gcp.g_ext.push_back(gi.rebased(ext.table, ext.base_map));
  return gcp;
}

void compile_program(GenericCombinedProgram& gcp) {
  gcp.objective_c = gcp.objective.compile();
  gcp.f_ext_c = gcp.f_ext.compile();
  for (const Expr& gi : gcp.g_ext) gcp.g_ext_c.push_back(gi.compile());
  for (ConstraintRow& r : gcp.rows) r.h_c = r.h.compile();
}

}  // namespace

GenericCombinedProgram build(const BilevelProblem& prob, ReformKind kind,
                             const LowerOptions& lower_opt) {
  if (is_membership_kind(kind))
    throw ValidationError(std::string("reformulation ") + reform_kind_name(kind) +
                          " is membership-only; request it via build_membership");
  if (kind == ReformKind::CPSOC && prob.p != 0)
    throw ValidationError(
        "the Hessian-PSD combined program requires an unconstrained lower level "
        "(p = 0), got p = " +
        std::to_string(prob.p));

  Extended ext;
  GenericCombinedProgram gcp = make_common(prob, kind, lower_opt, ext);
  const BilevelProblem& P = *gcp.problem;
  const GcpLayout& L = gcp.layout;

  auto rb = [&](const Expr& e) { return e.rebased(ext.table, ext.base_map); };
  auto u0v = [&]() { return ext.var[L.u0_offset()]; };
  auto uv = [&](int i) { return ext.var[L.u_offset() + i]; };
  auto dv = [&](int a) { return ext.var[L.d_offset() + a]; };
  auto zv = [&](int i) { return ext.var[L.z_offset() + i]; };
  auto lv = [&](int i) { return ext.var[L.lambda_offset() + i]; };

  auto add_row = [&](std::string label, Expr h, ConeFactor target) {
    ConstraintRow r;
    r.label = std::move(label);
    r.h = std::move(h);
    r.target = target;
    gcp.rows.push_back(std::move(r));
  };

  // grad_y of (weight * f + sum_i mult(i) * g_i) = 0, one row per y coordinate.
  auto stationarity_rows = [&](const Expr* weight_f, auto mult) {
    for (int k = 0; k < P.m; ++k) {
      Expr row = weight_f ? (*weight_f) * rb(P.f_dy[k]) : rb(P.f_dy[k]);
      for (int i = 0; i < P.p; ++i) row = row + mult(i) * rb(P.g_dy[i][k]);
      add_row("stationarity[" + std::to_string(k) + "]", row, ConeFactor::Zero);
    }
  };
  // d^T hess_yy(weight * f + sum_i u_i g_i) d as an expression in (x,y,u,d).
  auto curvature_quadratic = [&](const Expr* weight_f) {
    Expr qf = Expr::constant(0.0);
    for (int a = 0; a < P.m; ++a)
      for (int b = 0; b < P.m; ++b) qf = qf + rb(P.f_dyy[a][b]) * dv(a) * dv(b);
    Expr total = weight_f ? (*weight_f) * qf : qf;
    for (int i = 0; i < P.p; ++i) {
      Expr qg = Expr::constant(0.0);
      for (int a = 0; a < P.m; ++a)
        for (int b = 0; b < P.m; ++b)
          qg = qg + rb(P.g_dyy[i][a][b]) * dv(a) * dv(b);
      total = total + uv(i) * qg;
    }
    return total;
  };
  auto grad_g_dot_d = [&](int j) {
    Expr s = Expr::constant(0.0);
    for (int a = 0; a < P.m; ++a) s = s + rb(P.g_dy[j][a]) * dv(a);
    return s;
  };
  auto fj_simplex_rows = [&]() {
    Expr sum = u0v();
    for (int i = 0; i < P.p; ++i) sum = sum + uv(i);
    add_row("normalization", sum - 1.0, ConeFactor::Zero);
    add_row("fj_weight", -u0v(), ConeFactor::NonPos);
  };

  switch (kind) {
    case ReformKind::VP:
      for (int i = 0; i < P.p; ++i)
        add_row("g[" + std::to_string(i) + "]", gcp.g_ext[i], ConeFactor::NonPos);
      break;

    case ReformKind::CP:
      stationarity_rows(nullptr, uv);
      gcp.complementarity = true;
      break;

    case ReformKind::CPFJ: {
      const Expr w0 = u0v();
      stationarity_rows(&w0, uv);
      fj_simplex_rows();
      gcp.complementarity = true;
      break;
    }

    case ReformKind::CPSOC:
      stationarity_rows(nullptr, uv);  // p == 0: plain grad_y f = 0
      gcp.side = SideCondition::HessianPsd;
      break;

    case ReformKind::R_FJSOCP: {
      const Expr w0 = u0v();
      stationarity_rows(&w0, uv);
      fj_simplex_rows();
      add_row("curvature", -curvature_quadratic(&w0), ConeFactor::NonPos);
      {
        Expr fd = Expr::constant(0.0);
        for (int a = 0; a < P.m; ++a) fd = fd + rb(P.f_dy[a]) * dv(a);
        add_row("descent[f]", fd, ConeFactor::NonPos);
      }
      for (int j = 0; j < P.p; ++j)
        add_row("descent[g" + std::to_string(j) + "]", uv(j) * grad_g_dot_d(j),
                ConeFactor::NonPos);
      gcp.complementarity = true;
      break;
    }

    case ReformKind::R_BSOCP:
      stationarity_rows(nullptr, uv);
      for (int j = 0; j < P.p; ++j)
        add_row("direction[g" + std::to_string(j) + "]", uv(j) * grad_g_dot_d(j),
                ConeFactor::Zero);
      add_row("curvature", -curvature_quadratic(nullptr), ConeFactor::NonPos);
      gcp.complementarity = true;
      break;

    case ReformKind::SSOCP:
      stationarity_rows(nullptr, uv);
      gcp.complementarity = true;
      gcp.side = SideCondition::ConeCopositive;
      break;

    case ReformKind::WSOCP:
      stationarity_rows(nullptr, uv);
      gcp.complementarity = true;
      gcp.side = SideCondition::SubspaceCopositive;
      break;

    case ReformKind::WSOCPZ:
      stationarity_rows(nullptr, lv);
      for (int i = 0; i < P.p; ++i)
        add_row("slack_feas[" + std::to_string(i) + "]", gcp.g_ext[i] + pow(zv(i), 2),
                ConeFactor::Zero);
      for (int i = 0; i < P.p; ++i)
        add_row("slack_comp[" + std::to_string(i) + "]", lv(i) * zv(i),
                ConeFactor::Zero);
      gcp.side = SideCondition::SlackSubspacePsd;
      break;

    default:
      throw ValidationError("unhandled reformulation kind");  // unreachable
  }

  for (int j = 0; j < P.q; ++j)
    add_row("G[" + std::to_string(j) + "]", rb(P.G[j]), ConeFactor::NonPos);

  compile_program(gcp);
  return gcp;
}

GenericCombinedProgram build_membership(const BilevelProblem& prob, ReformKind kind,
                                        const LowerOptions& lower_opt) {
  SigmaKind sigma;
  switch (kind) {
    case ReformKind::KKTCP: sigma = SigmaKind::KKT; break;
    case ReformKind::FJSOCP: sigma = SigmaKind::FJSOC; break;
    case ReformKind::SOCP_B: sigma = SigmaKind::BSOC; break;
    case ReformKind::SOCP_W: sigma = SigmaKind::WSOC; break;
    case ReformKind::SOCP_S: sigma = SigmaKind::SSOC; break;
    default:
      throw ValidationError(std::string("reformulation ") + reform_kind_name(kind) +
                            " carries explicit rows; request it via build");
  }
  Extended ext;
  GenericCombinedProgram gcp = make_common(prob, kind, lower_opt, ext);
  gcp.sigma = sigma;
  compile_program(gcp);
  return gcp;
}

GenericCombinedProgram penalize(const GenericCombinedProgram& gcp, double mu) {
  if (!(mu >= 0.0))
    throw ValidationError("penalty weight must be nonnegative, got " +
                          std::to_string(mu));
  if (!gcp.has_value_gap)
    throw ValidationError("program has no active value gap to penalize");
  GenericCombinedProgram out = gcp;
  out.mu = mu;
  out.has_value_gap = false;
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

double GenericCombinedProgram::value_gap(const VectorXd& w) const {
  const double V = oracle->value(layout.x_of(w));
  if (!std::isfinite(V)) return kInf;
  return f_ext_c.eval(w) - V;
}

double GenericCombinedProgram::objective_value(const VectorXd& w) const {
  double v = objective_c.eval(w);
  if (mu != 0.0) {
    const double gap = value_gap(w);
    if (!std::isfinite(gap)) return kInf;
    v += mu * gap;
  }
  return v;
}

VectorXd GenericCombinedProgram::pack(const CandidatePoint& c) const {
  const GcpLayout& L = layout;
  auto fail = [&](const std::string& msg) -> void {
    throw ValidationError("candidate '" + c.name + "': " + msg);
  };
  if (static_cast<int>(c.x.size()) != L.n)
    fail("x block must have length " + std::to_string(L.n));
  if (static_cast<int>(c.y.size()) != L.m)
    fail("y block must have length " + std::to_string(L.m));

  VectorXd w = VectorXd::Zero(L.total());
  w.segment(0, L.n) = c.x;
  w.segment(L.n, L.m) = c.y;

  if (L.has_u) {
    VectorXd u = VectorXd::Zero(L.p);
    if (static_cast<int>(c.u.size()) == L.p) u = c.u;
    else if (c.u.size() != 0 || L.p != 0)
      fail("u block must have length " + std::to_string(L.p));
    if (L.has_u0) {
      if (c.u0) {
        w[L.u0_offset()] = *c.u0;
        if (L.p > 0) w.segment(L.u_offset(), L.p) = u;
      } else {
        // Embed a KKT multiplier into the Fritz John simplex.
        const double s = 1.0 + u.sum();
        w[L.u0_offset()] = 1.0 / s;
        if (L.p > 0) w.segment(L.u_offset(), L.p) = u / s;
      }
    } else if (L.p > 0) {
      w.segment(L.u_offset(), L.p) = u;
    }
  }

  if (L.has_d && c.d.size() != 0) {
    if (static_cast<int>(c.d.size()) != L.m)
      fail("d block must have length " + std::to_string(L.m));
    w.segment(L.d_offset(), L.m) = c.d;
  }

  if (L.has_z) {
    if (static_cast<int>(c.z.size()) == L.p) {
      w.segment(L.z_offset(), L.p) = c.z;
    } else if (c.z.size() == 0) {
      const VectorXd g = problem->eval_g_all(c.x, c.y);
      for (int i = 0; i < L.p; ++i)
        w[L.z_offset() + i] = std::sqrt(std::max(0.0, -g[i]));
    } else {
      fail("z block must have length " + std::to_string(L.p));
    }
    if (static_cast<int>(c.lambda.size()) == L.p) {
      w.segment(L.lambda_offset(), L.p) = c.lambda;
    } else if (c.lambda.size() == 0) {
      if (static_cast<int>(c.u.size()) == L.p)
        w.segment(L.lambda_offset(), L.p) = c.u;
      else if (L.p != 0)
        fail("lambda block (or a u block to lift) must have length " +
             std::to_string(L.p));
    } else {
      fail("lambda block must have length " + std::to_string(L.p));
    }
  }
  return w;
}

// ---------------------------------------------------------------------------
// Feasibility

FeasibilityReport feasible(const GenericCombinedProgram& gcp, const VectorXd& point,
                           const Tolerances& tol) {
  check_point_size(gcp.layout, point);
  FeasibilityReport rep;
  auto push = [&](std::string name, double value, double bound) {
    ResidualEntry e;
    e.name = std::move(name);
    e.value = value;
    e.bound = bound;
    e.ok = value <= bound;
    if (!e.ok) rep.feasible = false;
    rep.worst_violation = std::max(rep.worst_violation, value - bound);
    rep.entries.push_back(std::move(e));
  };

  const BilevelProblem& P = *gcp.problem;
  const GcpLayout& L = gcp.layout;
  const VectorXd x = L.x_of(point);
  const VectorXd y = L.y_of(point);

  for (int i = 0; i < P.n; ++i)
    push("x_box[" + std::to_string(i) + "]",
         std::max(P.x_box[i].lo - x[i], x[i] - P.x_box[i].hi), tol.feas);
  for (int k = 0; k < P.m; ++k)
    push("y_box[" + std::to_string(k) + "]",
         std::max(P.y_box[k].lo - y[k], y[k] - P.y_box[k].hi), tol.feas);

  if (gcp.has_value_gap) {
    const double V = gcp.oracle->value(x);
    if (!std::isfinite(V)) {
      push("value_gap", kInf, tol.feas);
      rep.notes.push_back("lower level infeasible at x; value gap undefined");
    } else {
      push("value_gap", gcp.f_ext_c.eval(point) - V, tol.feas * (1.0 + std::abs(V)));
    }
  }

  for (const ConstraintRow& r : gcp.rows) {
    const double h = r.h_c.eval(point);
    push(r.label, r.target == ConeFactor::Zero ? std::abs(h) : h, tol.feas);
  }

  if (gcp.complementarity) {
    const VectorXd g = P.eval_g_all(x, y);
    const VectorXd u = L.u_of(point);
    for (int i = 0; i < P.p; ++i) {
      const std::string t = std::to_string(i);
      push("g[" + t + "]", g[i], tol.feas);
      push("u[" + t + "]", -u[i], tol.pos);
      push("comp[" + t + "]", std::abs(u[i] * g[i]), tol.active * (1.0 + std::abs(u[i])));
    }
  }

  switch (gcp.side) {
    case SideCondition::None:
      break;
    case SideCondition::HessianPsd: {
      const MatrixXd H = P.hess_yy_f(x, y);
      Eigen::SelfAdjointEigenSolver<MatrixXd> es(H);
      const double lam = es.eigenvalues().minCoeff();
      push("hessian_psd", std::max(0.0, -lam), tol.soc * (1.0 + H.norm()));
      break;
    }
    case SideCondition::ConeCopositive: {
      if (!P.lower_feasible(x, y, tol.feas)) {
        push("cone_copositive", kInf, tol.soc);
        rep.notes.push_back("lower level infeasible at (x, y); critical cone undefined");
        break;
      }
      const MatrixXd H = P.hess_yy_lagrangian(x, y, L.u_of(point));
      const PolyhedralCone cone = critical_cone(P, x, y, tol);
      Rng rng(9001);
      const ConeQuadMin cqm = cone_quadratic_min(H, cone, 64, rng, tol);
      const double min_curv = std::isfinite(cqm.value) ? cqm.value : 0.0;
      push("cone_copositive", std::max(0.0, -min_curv), tol.soc * (1.0 + H.norm()));
      if (!cqm.exact)
        rep.notes.push_back("cone curvature minimum is sampled; a pass is one-sided");
      break;
    }
    case SideCondition::SubspaceCopositive: {
      if (!P.lower_feasible(x, y, tol.feas)) {
        push("subspace_copositive", kInf, tol.soc);
        rep.notes.push_back(
            "lower level infeasible at (x, y); critical subspace undefined");
        break;
      }
      const MatrixXd H = P.hess_yy_lagrangian(x, y, L.u_of(point));
      const SubspaceResult sub = critical_subspace(P, x, y, tol);
      double lam = 0.0;
      if (sub.basis.cols() > 0) {
        const MatrixXd R = sub.basis.transpose() * H * sub.basis;
        Eigen::SelfAdjointEigenSolver<MatrixXd> es(R);
        lam = es.eigenvalues().minCoeff();
      }
      push("subspace_copositive", std::max(0.0, -lam), tol.soc * (1.0 + H.norm()));
      break;
    }
    case SideCondition::SlackSubspacePsd: {
      const VectorXd z = L.z_of(point);
      const VectorXd lambda = L.lambda_of(point);
      const VectorXd g = P.eval_g_all(x, y);
      bool consistent = true;
      for (int i = 0; i < P.p; ++i)
        if (std::abs(g[i] + z[i] * z[i]) > tol.active * (1.0 + std::abs(g[i])))
          consistent = false;
      if (!consistent) {
        push("slack_subspace_psd", kInf, tol.soc);
        rep.notes.push_back("slack variables inconsistent with g; side condition undefined");
        break;
      }
      MatrixXd Ht = MatrixXd::Zero(P.m + P.p, P.m + P.p);
      Ht.topLeftCorner(P.m, P.m) = P.hess_yy_lagrangian(x, y, lambda);
      for (int i = 0; i < P.p; ++i) Ht(P.m + i, P.m + i) = 2.0 * lambda[i];
      const SlackSocResult r = check_slack_soc(P, x, y, z, lambda, tol);
      push("slack_subspace_psd", std::max(0.0, -r.min_curvature),
           tol.soc * (1.0 + Ht.norm()));
      break;
    }
  }

  if (gcp.sigma) {
    SocOptions sopt;
    sopt.tol = tol;
    const bool member = sigma_membership(*gcp.oracle, *gcp.sigma, x, y, sopt);
    push(std::string("sigma[") + sigma_kind_name(*gcp.sigma) + "]",
         member ? 0.0 : 1.0, 0.5);
    for (int j = 0; j < P.q; ++j)
      push("G[" + std::to_string(j) + "]", P.eval_G(j, x, y), tol.feas);
  }

  return rep;
}

// ---------------------------------------------------------------------------
// Sigma sets

bool sigma_membership(const ValueOracle& oracle, SigmaKind kind, const VectorXd& x,
                      const VectorXd& y, const SocOptions& opt, double gph_dist_tol) {
  const BilevelProblem& prob = oracle.problem();
  if (static_cast<int>(x.size()) != prob.n || static_cast<int>(y.size()) != prob.m)
    throw ValidationError("sigma membership: point has sizes (" +
                          std::to_string(x.size()) + ", " + std::to_string(y.size()) +
                          "), expected (" + std::to_string(prob.n) + ", " +
                          std::to_string(prob.m) + ")");
  if (!prob.in_y_box(y, opt.tol.feas)) return false;
  if (!prob.lower_feasible(x, y, opt.tol.feas)) return false;

  switch (kind) {
    case SigmaKind::KKT:
      return multiplier_set(prob, x, y, opt.tol).nonempty;
    case SigmaKind::BSOC:
      return check_bsoc(prob, x, y, opt).status == SocStatus::Yes;
    case SigmaKind::WSOC:
      return check_wsoc(prob, x, y, opt).status == SocStatus::Yes;
    case SigmaKind::SSOC:
      return check_ssoc(prob, x, y, opt).status == SocStatus::Yes;
    case SigmaKind::FJSOC:
      return check_fjsoc(prob, x, y, opt).status == SocStatus::Yes;
    case SigmaKind::GPHS: {
      const LowerSolution& sol = oracle.solution(x);
      if (!sol.feasible_found) return false;
      double best = kInf;
      for (const VectorXd& ymin : sol.minimizers)
        best = std::min(best, (ymin - y).norm());
      return best <= gph_dist_tol;
    }
  }
  return false;
}

bool sigma_membership(const BilevelProblem& prob, SigmaKind kind, const VectorXd& x,
                      const VectorXd& y, const SocOptions& opt, double gph_dist_tol) {
  LowerOptions lopt;
  lopt.tol = opt.tol;
  const ValueOracle oracle(prob, lopt);
  return sigma_membership(oracle, kind, x, y, opt, gph_dist_tol);
}

}  // namespace bilevel
