#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "bilevel/reform.hpp"

namespace bilevel {

// Falsification-based calmness testing. Verdicts are one-sided: VIOLATED
// carries a re-verifiable witness; NOT_REFUTED only means the search failed
// to find one and never claims that calmness holds.

enum class CalmnessKind { Partial, Clarke };
enum class CalmnessStatus { Violated, NotRefuted };

const char* calmness_kind_name(CalmnessKind k);      // "PARTIAL" / "CLARKE"
const char* calmness_status_name(CalmnessStatus s);  // "VIOLATED" / "NOT_REFUTED"

// A verified improvement point. For partial calmness, `drop` is the decrease
// of the penalized objective relative to the candidate and `perturbation` is
// zero. For Clarke calmness, `perturbation` is the Euclidean norm of the
// minimal constraint-absorbing perturbation at the point and `drop` is
// -(F(w) - F(candidate) + mu_max * perturbation), positive for a violation.
// `radius` is the locality bound used for the search (infinity norm over the
// full combined-program vector); +infinity marks a witness recorded without a
// locality constraint (the per-mu canonical witness from a seed sequence).
struct CalmnessWitness {
  double mu = 0.0;
  double radius = 0.0;
  VectorXd point;
  double drop = 0.0;
  double perturbation = 0.0;
  bool from_seed = false;
};

struct CalmnessSearchMeta {
  std::vector<double> radii;
  int budget = 0;    // trial evaluations allowed per (mu, radius) cell
  long evals = 0;    // trial evaluations actually spent
  std::vector<std::string> notes;
};

struct CalmnessVerdict {
  CalmnessKind kind = CalmnessKind::Partial;
  CalmnessStatus status = CalmnessStatus::NotRefuted;
  std::vector<double> mu_tested;
  // One witness per (mu, radius) cell when found; VIOLATED iff every cell
  // has one (all witnesses re-verified through the feasibility oracle).
  std::vector<CalmnessWitness> witnesses;
  // Per-mu witnesses from the seed sequence at the analytic threshold index,
  // recorded without a locality constraint (radius = +infinity).
  std::vector<CalmnessWitness> canonical;
  CalmnessSearchMeta meta;
};

// Optional closed-form seed generator: full combined-program vectors to try
// for a given (mu, radius) cell, best candidates first. `radius` may be
// +infinity (the canonical per-mu pass). `center` is the packed candidate;
// generators may copy auxiliary blocks from it.
using SeedFn = std::function<std::vector<VectorXd>(double mu, double radius,
                                                   const VectorXd& center)>;

struct CalmnessOptions {
  std::vector<double> mu_list = {0.0, 1.0, 4.0, 10.0, 40.0, 100.0};
  std::vector<double> radii = {1e-1, 1e-2, 1e-3};
  int budget = 10000;       // trial evaluations per (mu, radius) cell
  double tol_drop = 1e-10;  // strict-improvement margin
  unsigned rng_seed = 42;
  SeedFn seeds;             // optional closed-form witness sequences
  Tolerances tol;
};

// Searches the penalized program near the candidate for strictly better
// feasible points. VIOLATED iff a verified witness exists for every mu in
// mu_list at every radius. Throws ValidationError when the candidate is
// infeasible for the (unpenalized) program or the option lists are empty.
CalmnessVerdict test_partial_calmness(const GenericCombinedProgram& gcp,
                                      const CandidatePoint& candidate,
                                      const CalmnessOptions& opt = {});

// Minimal perturbation that absorbs the violated perturbable constraints of
// `point`: the value-gap row, the complementarity pairs, and the explicit
// constraint rows (for membership programs the upper-level rows take the
// rows' place). Boxes, side conditions, and sigma-set membership are not
// perturbable; when `point` breaks one of them (or the lower level is
// infeasible at x), `defined` is false. `norm` is the Euclidean norm of the
// concatenated perturbation.
struct PerturbationVector {
  bool defined = false;
  double r1 = 0.0;  // value-gap shift: f - V + r1 <= 0
  VectorXd r2;      // lower-level constraint shifts: -g - r2 >= 0
  VectorXd r3;      // multiplier shifts: u + r3 >= 0
  VectorXd rows;    // per explicit row (membership kinds: per upper-level row)
  double norm = 0.0;
  std::vector<std::string> notes;
};

PerturbationVector absorbing_perturbation(const GenericCombinedProgram& gcp,
                                          const VectorXd& point,
                                          const Tolerances& tol = {});

struct ClarkeOptions {
  std::vector<double> eps_list = {1e-1, 1e-2, 1e-3};
  double mu_max = 100.0;
  int budget = 10000;
  double tol_drop = 1e-10;
  unsigned rng_seed = 42;
  SeedFn seeds;
  Tolerances tol;
};

// Searches for points w near the candidate whose minimal absorbing
// perturbation r(w) satisfies ||r(w)|| <= eps and
//   F(w) - F(candidate) + mu * ||r(w)|| < -tol_drop  for every mu <= mu_max
// (the left side is increasing in mu, so the certificate at mu_max covers
// all smaller mu). VIOLATED iff such a witness exists for every eps in
// eps_list. Expects the unpenalized program; throws ValidationError when the
// candidate is infeasible or the program carries a penalty weight.
CalmnessVerdict test_clarke_calmness(const GenericCombinedProgram& gcp,
                                     const CandidatePoint& candidate,
                                     const ClarkeOptions& opt = {});

// Evaluates the closed-form penalized objective of a bundled problem along
// its recorded witness sequence and confirms the strict decrease one index
// past the analytic threshold, cross-checking against the library's own
// numeric evaluation of the same point.
struct AnalyticWitnessReport {
  std::string id;
  double mu = 0.0;
  double threshold = 0.0;   // witness index beyond which the drop is strict
  int k = 0;                // ceil(threshold) + 1, the index actually checked
  double analytic_value = 0.0;  // closed-form penalized objective at index k
  double numeric_value = 0.0;   // library evaluation of the same point
  double reference = 0.0;       // penalized objective at the limit candidate
  double drop = 0.0;            // reference - analytic_value
  bool strict = false;          // drop > 1e-10
  double mismatch = 0.0;        // |analytic_value - numeric_value|
};

AnalyticWitnessReport analytic_witness_check(const std::string& id, double mu);

// Implication diagram between the programs' partial-calmness properties:
// calmness of the source program implies calmness of the target. Each edge
// is tested at each candidate with one-sided searches; "source NOT_REFUTED
// and target VIOLATED" is flagged as an inconsistency warning (a failure of
// the search on the source, not a disproof of the implication).
struct ImplicationCheck {
  std::string candidate;
  ReformKind source = ReformKind::VP;
  ReformKind target = ReformKind::VP;
  CalmnessStatus source_status = CalmnessStatus::NotRefuted;
  CalmnessStatus target_status = CalmnessStatus::NotRefuted;
  bool inconsistent = false;
};

struct ImplicationReport {
  std::vector<ImplicationCheck> checks;
  std::vector<std::string> warnings;
};

// Edges tested: VP -> CPFJ, CPFJ -> R-FJSOCP, CP -> R-BSOCP, and
// WSOCP <-> WSOCPZ (both directions). Candidates that cannot be packed or
// are infeasible for one side of an edge are skipped with a warning.
ImplicationReport check_implication_diagram(
    const BilevelProblem& prob, const std::vector<CandidatePoint>& candidates,
    const CalmnessOptions& opt = {});

// Seed generator built from a bundled problem's closed-form witness data
// (x = witness_x(k), y = witness_y(k), zero multiplier, direction block
// copied from the center). Returns an empty function when the id has no
// recorded data.
SeedFn analytic_seed_fn(const GenericCombinedProgram& gcp, const std::string& id);

}  // namespace bilevel
