#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "bilevel/lower.hpp"
#include "bilevel/soc.hpp"

namespace bilevel {

// Single-level reformulations of the bilevel problem.  Explicit kinds carry
// a full constraint map H over an extended decision vector; membership kinds
// keep only (x, y) and delegate their defining set to the lower-level /
// second-order checkers.
enum class ReformKind {
  VP,        // value-function program over (x, y)
  CP,        // KKT combined program over (x, y, u)
  CPFJ,      // Fritz John combined program over (x, y, u0, u)
  KKTCP,     // membership form: y is a KKT point of the lower level
  CPSOC,     // unconstrained lower level, Hessian-PSD side condition, (x, y)
  FJSOCP,    // membership: Fritz John second-order condition holds at y
  R_FJSOCP,  // relaxed Fritz John second-order program over (x, y, u0, u, d)
  R_BSOCP,   // relaxed basic second-order program over (x, y, u, d)
  SSOCP,     // KKT rows + cone-copositivity side condition, (x, y, u)
  WSOCP,     // KKT rows + subspace-copositivity side condition, (x, y, u)
  WSOCPZ,    // squared-slack form of WSOCP over (x, y, z, lambda)
  SOCP_B,    // membership: basic second-order condition holds at y
  SOCP_W,    // membership: weak second-order condition holds at y
  SOCP_S,    // membership: strong second-order condition holds at y
};

const char* reform_kind_name(ReformKind kind);
// Inverse of reform_kind_name; throws ValidationError for unknown names.
ReformKind reform_kind_from_name(const std::string& name);
// True for the kinds whose feasible set is defined through a membership
// oracle instead of explicit constraint rows.
bool is_membership_kind(ReformKind kind);

// Offsets of the named blocks inside the flat decision vector.  Blocks are
// laid out in the fixed order x, y, u0, u, d, z, lambda; absent blocks take
// no space.
struct GcpLayout {
  int n = 0, m = 0, p = 0;
  bool has_u0 = false, has_u = false, has_d = false;
  bool has_z = false, has_lambda = false;

  int total() const;
  int u0_offset() const;  // each *_offset requires the block to be present
  int u_offset() const;
  int d_offset() const;
  int z_offset() const;
  int lambda_offset() const;

  VectorXd x_of(const VectorXd& w) const;
  VectorXd y_of(const VectorXd& w) const;
  double u0_of(const VectorXd& w) const;
  VectorXd u_of(const VectorXd& w) const;
  VectorXd d_of(const VectorXd& w) const;
  VectorXd z_of(const VectorXd& w) const;
  VectorXd lambda_of(const VectorXd& w) const;
};

// One coordinate of the constraint map H together with its target cone
// factor: Zero means h(w) = 0, NonPos means h(w) <= 0.
enum class ConeFactor { Zero, NonPos };

struct ConstraintRow {
  std::string label;
  Expr h;            // over the program's extended variable table
  CompiledExpr h_c;  // compiled form of h for hot loops
  ConeFactor target = ConeFactor::Zero;
};

// Constraint checked by a dedicated routine instead of H rows:
//   HessianPsd         eigenvalues of hess_yy f at (x, y)
//   ConeCopositive     hess_yy L(x,y,u) on the multiplier-free critical cone
//   SubspaceCopositive hess_yy L(x,y,u) on the critical subspace
//   SlackSubspacePsd   block Hessian diag(hess L, 2 diag(lambda)) on the
//                      slack critical subspace at (y, z)
enum class SideCondition {
  None,
  HessianPsd,
  ConeCopositive,
  SubspaceCopositive,
  SlackSubspacePsd,
};

// Named point sets in (x, y) space used by the membership reformulations and
// the set-inclusion tests.  GPHS is the graph of the lower-level solution
// map, decided by distance to the solver's minimizers.
enum class SigmaKind { KKT, BSOC, WSOC, SSOC, FJSOC, GPHS };

const char* sigma_kind_name(SigmaKind kind);
SigmaKind sigma_kind_from_name(const std::string& name);

// A single-level program
//     min  objective(w) [+ mu * (f - V)]
//     s.t. f(x,y) - V(x) <= 0          (when has_value_gap)
//          H(w) in C                   (rows, componentwise Zero / NonPos)
//          g(x,y) <= 0, u >= 0, u_i g_i(x,y) = 0   (when complementarity)
//          side condition              (when side != None)
//          (x,y) in Sigma, G(x,y) <= 0 (membership kinds)
// over the block layout above.  Immutable after construction; copies share
// the problem and the memoizing value oracle, so penalized variants reuse
// all lower-level solves.
struct GenericCombinedProgram {
  ReformKind kind = ReformKind::VP;
  GcpLayout layout;
  VarTable vars;  // extended table naming every block coordinate
  std::shared_ptr<const BilevelProblem> problem;
  std::shared_ptr<ValueOracle> oracle;

  Expr objective;  // upper objective F over the extended table
  CompiledExpr objective_c;
  Expr f_ext;  // lower objective over the extended table
  CompiledExpr f_ext_c;
  std::vector<Expr> g_ext;  // lower constraints over the extended table
  std::vector<CompiledExpr> g_ext_c;

  double mu = 0.0;  // penalty weight on the value gap; set by penalize()
  bool has_value_gap = true;
  std::vector<ConstraintRow> rows;
  bool complementarity = false;
  SideCondition side = SideCondition::None;
  std::optional<SigmaKind> sigma;  // set exactly for membership kinds

  // f(x,y) - V(x) at w's (x, y) block; +infinity when the lower level is
  // infeasible at x (the point is outside the program's domain).
  double value_gap(const VectorXd& w) const;
  // objective + mu * value_gap; evaluates the bare objective when mu == 0.
  double objective_value(const VectorXd& w) const;

  // Flat decision vector from a named candidate point.  x and y are
  // required; u is required when the layout carries it (p > 0); a missing d
  // defaults to zero; a missing u0 embeds u into the Fritz John simplex as
  // (1, u) / (1 + sum u); missing z / lambda are lifted from u as
  // z_i = sqrt(-g_i), lambda = u.  Present blocks are validated against the
  // layout and never rescaled.
  VectorXd pack(const CandidatePoint& c) const;
};

// Assembles the explicit single-level program for the given kind.  Throws
// ValidationError for membership kinds (use build_membership) and for CPSOC
// on a problem with lower-level inequality constraints.
GenericCombinedProgram build(const BilevelProblem& prob, ReformKind kind,
                             const LowerOptions& lower_opt = {});

// Assembles a membership program (KKTCP, FJSOCP, SOCP_B/W/S): layout (x, y),
// no H rows, feasibility = value gap + sigma membership + G <= 0.
GenericCombinedProgram build_membership(const BilevelProblem& prob, ReformKind kind,
                                        const LowerOptions& lower_opt = {});

// Moves the value gap into the objective: objective becomes
// F + mu * (f - V), has_value_gap turns false, every other constraint is
// retained.  Requires mu >= 0 and an active value gap.
GenericCombinedProgram penalize(const GenericCombinedProgram& gcp, double mu);

struct ResidualEntry {
  std::string name;
  double value = 0.0;  // residual, nonnegative except for signed NonPos rows
  double bound = 0.0;  // pass iff value <= bound
  bool ok = true;
};

struct FeasibilityReport {
  bool feasible = true;
  // Largest value - bound over all entries; <= 0 iff feasible.
  double worst_violation = -std::numeric_limits<double>::infinity();
  std::vector<ResidualEntry> entries;
  // Caveats, e.g. a sampled (one-sided) cone-copositivity pass.
  std::vector<std::string> notes;
};

// Componentwise residual check of every constraint the program carries.
// Never throws on infeasible points; side conditions that cannot be
// evaluated (lower-level infeasibility, slack mismatch) are reported as
// failing entries.
FeasibilityReport feasible(const GenericCombinedProgram& gcp, const VectorXd& point,
                           const Tolerances& tol = {});

// Membership of (x, y) in the named sigma set.  Points with y outside the
// search box or lower-level infeasible are non-members.  Checker-backed
// kinds count only verified memberships (a sampled or undetermined verdict
// is reported as non-membership), so the answer is one-sided exactly where
// the underlying checker is.  GPHS uses distance <= gph_dist_tol to the
// solver's minimizer set.
bool sigma_membership(const ValueOracle& oracle, SigmaKind kind, const VectorXd& x,
                      const VectorXd& y, const SocOptions& opt = {},
                      double gph_dist_tol = 1e-6);
// Convenience overload solving the lower level without a shared memo.
bool sigma_membership(const BilevelProblem& prob, SigmaKind kind, const VectorXd& x,
                      const VectorXd& y, const SocOptions& opt = {},
                      double gph_dist_tol = 1e-6);

}  // namespace bilevel
