#pragma once

#include "bilevel/cone.hpp"
#include "bilevel/problem.hpp"

#include <map>
#include <mutex>
#include <vector>

namespace bilevel {

struct LowerOptions {
  // Grid points per y dimension for the global scan; -1 picks 2001 when the
  // lower level has at most two variables and 201 otherwise.
  int grid_per_dim = -1;
  int polish_steps = 60;
  Tolerances tol;
};

struct LowerSolution {
  Eigen::VectorXd x;
  // Cluster representatives of the global minimizer set, best value first.
  std::vector<Eigen::VectorXd> minimizers;
  double value = std::numeric_limits<double>::infinity();
  bool feasible_found = false;
  // Some minimizer sits on the y search box; the box may be truncating the
  // true feasible set, so downstream consumers get warned.
  bool boundary_touching = false;
  std::vector<std::string> warnings;
};

// Global solve of the lower-level problem min_y f(x,y) s.t. g(x,y) <= 0,
// y in the declared y box, via dense grid scan plus Newton polishing of all
// near-optimal grid cells.  Supports up to three lower-level variables.
LowerSolution solve_lower(const BilevelProblem& prob, const Eigen::VectorXd& x,
                          const LowerOptions& opt = {});

// Memoizing wrapper around solve_lower keyed on quantized x.  Thread-safe.
class ValueOracle {
 public:
  explicit ValueOracle(const BilevelProblem& prob, LowerOptions opt = {});

  // V(x); +infinity when the lower level is infeasible at x.
  double value(const Eigen::VectorXd& x) const;
  // Full solution record (reference stays valid for the oracle's lifetime).
  const LowerSolution& solution(const Eigen::VectorXd& x) const;

  const BilevelProblem& problem() const { return prob_; }
  std::size_t memo_size() const;

 private:
  const BilevelProblem& prob_;
  LowerOptions opt_;
  mutable std::mutex mutex_;
  mutable std::map<std::vector<long long>, LowerSolution> memo_;
};

// Indices (0-based) of lower-level constraints active at (x,y) within
// tol.active.  Throws ValidationError if (x,y) is lower-level infeasible
// beyond tol.feas.
std::vector<int> active_set(const BilevelProblem& prob, const Eigen::VectorXd& x,
                            const Eigen::VectorXd& y, const Tolerances& tol = {});

// The set M(x,y) of KKT multipliers u >= 0 with grad_y f + grad_y g^T u = 0
// and u_i = 0 off the active set.
struct MultiplierSet {
  bool nonempty = false;
  // Minimal L1 violation of the stationarity system over admissible u;
  // nonempty iff residual is within tol.kkt.
  double residual = 0.0;
  Eigen::VectorXd representative;  // least-L1 multiplier when nonempty
  std::vector<Eigen::VectorXd> vertices;
  bool vertices_complete = false;  // enumeration covered every vertex
  bool bounded = true;
  std::vector<int> active;
};

MultiplierSet multiplier_set(const BilevelProblem& prob, const Eigen::VectorXd& x,
                             const Eigen::VectorXd& y, const Tolerances& tol = {});

// Multiplier-free critical cone: directions d with grad_y f . d <= 0 and
// grad_y g_j . d <= 0 for every active j.
PolyhedralCone critical_cone(const BilevelProblem& prob, const Eigen::VectorXd& x,
                             const Eigen::VectorXd& y, const Tolerances& tol = {});

// Critical cone shaped by a multiplier: active rows with u_j > tol.pos become
// equalities, the remaining active rows stay inequalities, and the objective
// row is dropped.
PolyhedralCone critical_cone(const BilevelProblem& prob, const Eigen::VectorXd& x,
                             const Eigen::VectorXd& y, const Eigen::VectorXd& u,
                             const Tolerances& tol = {});

// Critical subspace: null space of the active constraint gradients.
struct SubspaceResult {
  PolyhedralCone cone;      // equality-only cone
  Eigen::MatrixXd basis;    // orthonormal columns spanning it
};

SubspaceResult critical_subspace(const BilevelProblem& prob, const Eigen::VectorXd& x,
                                 const Eigen::VectorXd& y, const Tolerances& tol = {});

// Critical subspace of the squared-slack reformulation at (y,z):
// {(d,nu) : grad_y g_i . d + 2 z_i nu_i = 0 for all i}.
PolyhedralCone slack_critical_cone(const BilevelProblem& prob, const Eigen::VectorXd& x,
                                   const Eigen::VectorXd& y, const Eigen::VectorXd& z,
                                   const Tolerances& tol = {});

}  // namespace bilevel
