#pragma once

#include "bilevel/lower.hpp"

namespace bilevel {

// Families of second-order optimality conditions on the lower level, all
// asking for nonnegative curvature of a (weighted) Lagrangian Hessian over a
// set of critical directions:
//   Unconstrained: hessian of f alone, whole space, no multipliers.
//   Basic:   for every critical direction some KKT multiplier works.
//   Weak:    one KKT multiplier works on the critical subspace.
//   Strong:  one KKT multiplier works on the whole critical cone.
//   FritzJohn: like Basic but over the normalized Fritz John multipliers,
//              which exist even where KKT multipliers do not.
enum class SocKind { Unconstrained, Basic, Weak, Strong, FritzJohn };

// Verdicts are one-sided where the search is not exhaustive: Yes/No are only
// reported with a certificate (see SocVerdict::exact), everything else is
// Undetermined.  NotApplicable marks points where the condition's multiplier
// set is empty or the point is not stationary.
enum class SocStatus { Yes, No, Undetermined, NotApplicable };

struct SocOptions {
  int n_directions = 257;  // direction budget for per-direction checks
  int n_interior = 100;    // interior multiplier samples for exists-u checks
  int n_quad_starts = 64;  // multistart budget for cone minimization
  int max_rounds = 50;     // cutting-plane rounds for exists-u checks
  unsigned long long seed = 42;
  Tolerances tol;
};

struct SocVerdict {
  SocKind kind = SocKind::Unconstrained;
  SocStatus status = SocStatus::Undetermined;
  // True when the verdict is backed by an exhaustive certificate (exact eigen
  // decomposition, complete direction set, or an LP infeasibility proof); a
  // sampled "Yes" keeps exact == false.
  bool exact = false;
  // Most negative curvature value encountered while deciding.
  double min_curvature = 0.0;
  VectorXd witness_u;   // multiplier certifying Yes (Weak/Strong)
  double witness_u0 = 1.0;  // objective weight of the certifying multiplier
  VectorXd witness_d;   // direction certifying No
  std::string note;
};

// Minimum of d^T H d over unit-norm directions in the cone.  Exact on
// subspaces (reduced eigen decomposition), in dimension one, and on provably
// trivial cones; otherwise multistart projected gradient with exact == false.
// value == +infinity with an empty dir means the cone is {0}.
struct ConeQuadMin {
  double value = std::numeric_limits<double>::infinity();
  VectorXd dir;
  bool exact = false;
};

ConeQuadMin cone_quadratic_min(const MatrixXd& H, const PolyhedralCone& cone,
                               int n_starts, Rng& rng, const Tolerances& tol);

// Exact triviality test for a polyhedral cone via 2*dim bounded LPs.
bool cone_is_trivial(const PolyhedralCone& cone, double tol);

SocVerdict check_unconstrained_soc(const BilevelProblem& prob, const VectorXd& x,
                                   const VectorXd& y, const SocOptions& opt = {});
SocVerdict check_bsoc(const BilevelProblem& prob, const VectorXd& x,
                      const VectorXd& y, const SocOptions& opt = {});
SocVerdict check_wsoc(const BilevelProblem& prob, const VectorXd& x,
                      const VectorXd& y, const SocOptions& opt = {});
SocVerdict check_ssoc(const BilevelProblem& prob, const VectorXd& x,
                      const VectorXd& y, const SocOptions& opt = {});
SocVerdict check_fjsoc(const BilevelProblem& prob, const VectorXd& x,
                       const VectorXd& y, const SocOptions& opt = {});

// Squared-slack reformulation of the lower level: g_i(x,y) + z_i^2 = 0 turns
// the inequalities into equalities over (y, z).

// Lifts a KKT pair (y, u) to the slack space, z_i = sqrt(-g_i).  Validates
// feasibility, u >= 0, complementarity, and stationarity within tolerances.
struct SlackTriple {
  VectorXd y, z, u;
};
SlackTriple slack_lift(const BilevelProblem& prob, const VectorXd& x,
                       const VectorXd& y, const VectorXd& u,
                       const Tolerances& tol = {});

// Second-order condition of the lifted problem: the block Hessian
// diag(hess_yy L(u), 2 diag(u)) must be positive semidefinite on the slack
// critical subspace.  Exact (reduced eigen decomposition).
struct SlackSocResult {
  bool holds = false;
  double min_curvature = 0.0;
  VectorXd dir;  // violating (d, nu) direction when holds == false
};
SlackSocResult check_slack_soc(const BilevelProblem& prob, const VectorXd& x,
                               const VectorXd& y, const VectorXd& z,
                               const VectorXd& u, const Tolerances& tol = {});

// Projects a slack-space second-order point back to the inequality form.
// Requires the slack second-order condition (throws ValidationError when it
// fails); the result carries the clipped multiplier and a fresh weak
// second-order verdict at the projected point.
struct SlackProjection {
  VectorXd y, u;
  SocVerdict weak;
};
SlackProjection slack_project(const BilevelProblem& prob, const VectorXd& x,
                              const VectorXd& y, const VectorXd& z,
                              const VectorXd& u, const SocOptions& opt = {});

}  // namespace bilevel
