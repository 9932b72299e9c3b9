#pragma once

#include <string>
#include <vector>

#include "bilevel/reform.hpp"

namespace bilevel {

// Stationarity certification for the combined programs, based on the value
// function: M-/S-stationarity of the complementarity structure, the MPEC
// LICQ nondegeneracy test, and the second-order multiplier system of the
// Hessian-PSD program. Verdicts about infeasibility are always relative to
// the enumerated outer estimate of the value-function subdifferential (the
// true subdifferential may be smaller), hence REFUTED_OVER_ESTIMATE.
enum class StationarityKind { MStat, SStat, CpsocStat };

enum class StationarityStatus {
  Holds,                // verified multipliers attached, residual <= tol.kkt
  RefutedOverEstimate,  // every branch infeasible over the estimate's hull
  Undetermined,         // estimate unavailable or search inconclusive
};

const char* stationarity_kind_name(StationarityKind k);  // "M_STAT" / ...
const char* stationarity_status_name(StationarityStatus s);

// Multiplier certificate. Which blocks are populated depends on the kind:
// M/S-stationarity fills (mu, xi, lambda_g, lambda_u, lambda_H) plus the
// index sets and the branch; the second-order check fills (mu, xi, Omega,
// beta). Empty blocks are size zero.
struct StationarityCertificate {
  StationarityKind kind = StationarityKind::MStat;
  StationarityStatus status = StationarityStatus::Undetermined;

  double mu = 0.0;    // weight on the value-gap gradient term, >= 0
  VectorXd xi;        // element of the subdifferential estimate's hull used
                      // by the certificate; size 0 when mu == 0 (the result
                      // is then independent of the estimate entirely)
  VectorXd lambda_g;  // multipliers on the lower-level inequalities (size p)
  VectorXd lambda_u;  // multipliers on the u >= 0 bounds (size p)
  VectorXd lambda_H;  // multipliers on the explicit constraint rows, in row
                      // order; zero on rows whose normal cone is trivial
  MatrixXd Omega;     // PSD multiplier of the Hessian-PSD condition (m x m)
  VectorXd beta;      // multiplier on the lower-level stationarity gradient

  // Complementarity index sets at the point (0-based constraint indices):
  // I_g = {j : g_j active, u_j > 0}, I_u = {j : g_j inactive, u_j = 0},
  // I0 = {j : g_j active, u_j = 0} (the biactive set).
  std::vector<int> I_g, I_u, I0;
  // Case used per biactive index by a HOLDS certificate: 0 = lambda_g_j
  // pinned to zero, 1 = lambda_u_j pinned to zero, 2 = both nonnegative.
  // The S-variant always uses all-2. Empty when I0 is empty.
  std::vector<int> branch;

  // Infinity norm of the stationarity equation re-evaluated with the
  // attached multipliers (plus the trace condition for the second-order
  // kind); +infinity when no multipliers are attached.
  double residual = std::numeric_limits<double>::infinity();
  std::vector<std::string> notes;
};

// Outer estimate of the value-function subdifferential at x: the vertex list
// of co{ grad_x f(x,y') + grad_x g(x,y')^T u' } over the lower-level
// minimizers y' and the vertices u' of the multiplier set at (x,y').
// Vertices closer than tol.cluster (infinity norm) are merged. Throws
// ValidationError when the estimate is unavailable: lower level infeasible
// at x, a multiplier set empty (the estimate's hypothesis fails) or
// unbounded (no constraint qualification), or vertex enumeration incomplete.
std::vector<VectorXd> subdifferential_estimate_V(const BilevelProblem& prob,
                                                 const VectorXd& x,
                                                 const LowerOptions& lower_opt = {},
                                                 const Tolerances& tol = {});
// Overload reusing a memoizing value oracle's lower-level solves.
std::vector<VectorXd> subdifferential_estimate_V(const ValueOracle& oracle,
                                                 const VectorXd& x,
                                                 const Tolerances& tol = {});

// M-stationarity of `point` for the unpenalized explicit program: search for
// mu >= 0, an element xi of the subdifferential estimate's hull, and
// multipliers (lambda_g, lambda_u, lambda_H) with
//   0 = grad F + mu*(grad f - (xi, 0, ...)) + grad g^T lambda_g
//       - (0, ..., lambda_u, ...) + grad H^T lambda_H
// over the extended variables, lambda_H in the normal cone of the row
// targets, lambda_g_j = 0 off I_g u I0, lambda_u_j = 0 off I_u u I0, and per
// j in I0 one of the closed cases {lambda_g_j = 0}, {lambda_u_j = 0},
// {both >= 0} (their union is exactly the M-condition). One exact linear
// feasibility program per case combination, searching the entire hull of the
// estimate; first verified solution wins. When the estimate is unavailable
// only mu = 0 is testable: failure is then UNDETERMINED, never refuted.
// Throws ValidationError for membership programs, programs with side
// conditions, penalized programs, infeasible points, and |I0| > 10 (the
// case enumeration is capped at 3^10 combinations).
StationarityCertificate check_m_stationary(const GenericCombinedProgram& gcp,
                                           const VectorXd& point,
                                           const Tolerances& tol = {});

// S-stationarity: the single branch lambda_g_j >= 0, lambda_u_j >= 0 for all
// j in I0. S HOLDS implies M HOLDS (the S-branch is one of the M-cases).
StationarityCertificate check_s_stationary(const GenericCombinedProgram& gcp,
                                           const VectorXd& point,
                                           const Tolerances& tol = {});

// MPEC LICQ nondegeneracy at `point`: full column rank (threshold tol.rank)
// of the matrix whose columns are the extended gradients of the active
// lower-level inequalities, the unit vectors of the u-coordinates in
// I_u u I0, and the gradients of the explicit rows whose normal cone is
// nontrivial at the point (all equality rows, active inequality rows).
// Vacuously true when no columns apply. Preconditions as for
// check_m_stationary.
bool check_mpec_licq(const GenericCombinedProgram& gcp, const VectorXd& point,
                     const Tolerances& tol = {});

// Second-order stationarity certificate at (x, y) for the Hessian-PSD
// program of an inequality-free lower level: search for Omega PSD, mu >= 0,
// beta, and xi in the subdifferential estimate's hull with
//   0 = grad F + mu*(grad f - (xi, 0)) + grad(grad_y f)^T beta - DH*(Omega),
//   <hess_yy f, Omega> = 0,
// where DH*(Omega)_t = <d/dt hess_yy f, Omega> (third derivatives). The
// trace condition confines Omega to the Hessian's kernel, so the search runs
// over a reduced PSD block: exactly (a linear program) when the kernel has
// dimension <= 1, by alternating projection onto the affine equations and
// the cone otherwise (at most 10^4 iterations; non-convergence is
// UNDETERMINED, never a refutation). Limitations are honest: m > 3 returns
// UNDETERMINED, and REFUTED_OVER_ESTIMATE is only emitted from the exact
// linear path. Throws ValidationError when the lower level has inequality
// constraints or (x, y) is infeasible for the program (PSD condition
// included).
StationarityCertificate check_cpsoc_stationarity(const BilevelProblem& prob,
                                                 const VectorXd& x, const VectorXd& y,
                                                 const LowerOptions& lower_opt = {},
                                                 const Tolerances& tol = {});

}  // namespace bilevel
