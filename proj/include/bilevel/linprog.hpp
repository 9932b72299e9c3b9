#pragma once

#include <vector>

#include "bilevel/common.hpp"

namespace bilevel {

// Small dense linear program:
//   minimize    c^T z
//   subject to  A_eq z = b_eq,  A_le z <= b_le,
//               z_j >= 0 where nonneg[j], z_j free otherwise.
// Intended for the toolkit's tiny systems (tens of variables); solved by a
// dense two-phase simplex with Bland's rule.
struct LinearProgram {
  VectorXd c;
  MatrixXd A_eq;
  VectorXd b_eq;
  MatrixXd A_le;
  VectorXd b_le;
  std::vector<bool> nonneg;

  int n_vars() const { return static_cast<int>(c.size()); }
  static LinearProgram make(int n) {
    LinearProgram lp;
    lp.c = VectorXd::Zero(n);
    lp.A_eq.resize(0, n);
    lp.b_eq.resize(0);
    lp.A_le.resize(0, n);
    lp.b_le.resize(0);
    lp.nonneg.assign(n, true);
    return lp;
  }
};

enum class LpStatus { Optimal, Infeasible, Unbounded };

struct LpSolution {
  LpStatus status = LpStatus::Infeasible;
  VectorXd z;
  double value = 0.0;
};

LpSolution solve_lp(const LinearProgram& lp);

// L1-minimal constraint violation: relaxes every row with residual variables
// and minimizes their sum (sign constraints stay hard). residual == 0 within
// tolerance means the system is feasible and z is a feasible point.
struct FeasibilityResult {
  double residual = 0.0;
  VectorXd z;
};
FeasibilityResult min_violation_point(const LinearProgram& lp);

// All vertices of {z >= 0 : A z = b} via support enumeration. Exact for
// small column counts; callers cap the size.
std::vector<VectorXd> enumerate_vertices_nonneg(const MatrixXd& A, const VectorXd& b,
                                                double tol);

// True iff {z >= 0 : A z = 0} = {0}, i.e. the feasible set of {z >= 0, Az = b}
// has no recession ray (is bounded).
bool nonneg_kernel_is_trivial(const MatrixXd& A, double tol);

}  // namespace bilevel
