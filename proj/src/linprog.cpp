#include "bilevel/linprog.hpp"

#include <algorithm>
#include <cmath>

namespace bilevel {

namespace {

constexpr double kPivotEps = 1e-9;

struct Tableau {
  MatrixXd T;              // (m+1) x (n+1): constraint rows, objective row; last column rhs
  std::vector<int> basis;  // basic column per constraint row
  int m = 0, n = 0;

  double& obj(int j) { return T(m, j); }
  double rhs(int i) const { return T(i, n); }
};

// Bland's rule simplex on a tableau whose objective row already holds reduced
// costs. Returns true when optimal, false when unbounded. `n_enter` limits
// which columns may enter (used to lock out phase-1 artificials).
bool run_simplex(Tableau& tb, int n_enter) {
  const int max_iter = 200000;
  for (int iter = 0; iter < max_iter; ++iter) {
    int enter = -1;
    for (int j = 0; j < n_enter; ++j) {
      if (tb.T(tb.m, j) < -kPivotEps) {
        enter = j;
        break;  // Bland: smallest eligible index
      }
    }
    if (enter < 0) return true;
    int leave = -1;
    double best = 0.0;
    for (int i = 0; i < tb.m; ++i) {
      if (tb.T(i, enter) > kPivotEps) {
        const double ratio = tb.T(i, tb.n) / tb.T(i, enter);
        if (leave < 0 || ratio < best - 1e-12 ||
            (std::abs(ratio - best) <= 1e-12 && tb.basis[i] < tb.basis[leave])) {
          leave = i;
          best = ratio;
        }
      }
    }
    if (leave < 0) return false;  // unbounded along `enter`
    tb.T.row(leave) /= tb.T(leave, enter);
    for (int i = 0; i <= tb.m; ++i) {
      if (i == leave) continue;
      const double f = tb.T(i, enter);
      if (f != 0.0) tb.T.row(i) -= f * tb.T.row(leave);
    }
    tb.basis[leave] = enter;
  }
  throw Error("simplex iteration limit exceeded");
}

}  // namespace

LpSolution solve_lp(const LinearProgram& lp) {
  const int n_orig = lp.n_vars();
  if (static_cast<int>(lp.nonneg.size()) != n_orig)
    throw ValidationError("LinearProgram: nonneg mask size mismatch");
  const int me = static_cast<int>(lp.b_eq.size());
  const int mi = static_cast<int>(lp.b_le.size());
  const int m = me + mi;

  // Standard-form columns: one per nonnegative variable, two (p - q) per free
  // variable, one slack per inequality row.
  std::vector<int> col_of(n_orig), neg_col_of(n_orig, -1);
  int n_std = 0;
  for (int j = 0; j < n_orig; ++j) {
    col_of[j] = n_std++;
    if (!lp.nonneg[j]) neg_col_of[j] = n_std++;
  }
  const int slack0 = n_std;
  n_std += mi;

  MatrixXd A = MatrixXd::Zero(m, n_std);
  VectorXd b(m);
  VectorXd c = VectorXd::Zero(n_std);
  for (int j = 0; j < n_orig; ++j) {
    c[col_of[j]] = lp.c[j];
    if (neg_col_of[j] >= 0) c[neg_col_of[j]] = -lp.c[j];
  }
  for (int i = 0; i < me; ++i) {
    for (int j = 0; j < n_orig; ++j) {
      A(i, col_of[j]) = lp.A_eq(i, j);
      if (neg_col_of[j] >= 0) A(i, neg_col_of[j]) = -lp.A_eq(i, j);
    }
    b[i] = lp.b_eq[i];
  }
  for (int i = 0; i < mi; ++i) {
    for (int j = 0; j < n_orig; ++j) {
      A(me + i, col_of[j]) = lp.A_le(i, j);
      if (neg_col_of[j] >= 0) A(me + i, neg_col_of[j]) = -lp.A_le(i, j);
    }
    A(me + i, slack0 + i) = 1.0;
    b[me + i] = lp.b_le[i];
  }
  for (int i = 0; i < m; ++i) {
    if (b[i] < 0.0) {
      A.row(i) = -A.row(i);
      b[i] = -b[i];
    }
  }

  // Phase 1: artificial basis, minimize the artificial sum.
  Tableau tb;
  tb.m = m;
  tb.n = n_std + m;
  tb.T = MatrixXd::Zero(m + 1, tb.n + 1);
  tb.T.block(0, 0, m, n_std) = A;
  for (int i = 0; i < m; ++i) {
    tb.T(i, n_std + i) = 1.0;
    tb.T(i, tb.n) = b[i];
  }
  tb.basis.resize(m);
  for (int i = 0; i < m; ++i) tb.basis[i] = n_std + i;
  for (int j = 0; j < n_std; ++j) tb.T(m, j) = -A.col(j).sum();
  tb.T(m, tb.n) = -b.sum();

  if (!run_simplex(tb, n_std))
    throw Error("phase-1 objective unbounded (cannot happen)");
  const double phase1 = -tb.T(m, tb.n);
  if (phase1 > 1e-8 * (1.0 + b.lpNorm<Eigen::Infinity>()))
    return {LpStatus::Infeasible, VectorXd(), 0.0};

  // Drive remaining artificials out of the basis; redundant rows get removed.
  std::vector<int> drop_rows;
  for (int i = 0; i < m; ++i) {
    if (tb.basis[i] < n_std) continue;
    int piv = -1;
    for (int j = 0; j < n_std; ++j) {
      if (std::abs(tb.T(i, j)) > kPivotEps) {
        piv = j;
        break;
      }
    }
    if (piv < 0) {
      drop_rows.push_back(i);
      continue;
    }
    tb.T.row(i) /= tb.T(i, piv);
    for (int r = 0; r <= tb.m; ++r) {
      if (r == i) continue;
      const double f = tb.T(r, piv);
      if (f != 0.0) tb.T.row(r) -= f * tb.T.row(i);
    }
    tb.basis[i] = piv;
  }

  // Rebuild a clean phase-2 tableau without artificial columns/redundant rows.
  const int m2 = m - static_cast<int>(drop_rows.size());
  Tableau t2;
  t2.m = m2;
  t2.n = n_std;
  t2.T = MatrixXd::Zero(m2 + 1, n_std + 1);
  t2.basis.resize(m2);
  {
    int r2 = 0;
    for (int i = 0; i < m; ++i) {
      if (std::find(drop_rows.begin(), drop_rows.end(), i) != drop_rows.end()) continue;
      t2.T.block(r2, 0, 1, n_std) = tb.T.block(i, 0, 1, n_std);
      t2.T(r2, n_std) = tb.T(i, tb.n);
      t2.basis[r2] = tb.basis[i];
      ++r2;
    }
  }
  for (int j = 0; j < n_std; ++j) t2.T(m2, j) = c[j];
  t2.T(m2, n_std) = 0.0;
  for (int i = 0; i < m2; ++i) {
    const double cb = c[t2.basis[i]];
    if (cb != 0.0) t2.T.row(m2) -= cb * t2.T.row(i);
  }

  if (!run_simplex(t2, n_std)) return {LpStatus::Unbounded, VectorXd(), 0.0};

  VectorXd z_std = VectorXd::Zero(n_std);
  for (int i = 0; i < m2; ++i) z_std[t2.basis[i]] = t2.T(i, n_std);
  VectorXd z(n_orig);
  for (int j = 0; j < n_orig; ++j) {
    z[j] = z_std[col_of[j]];
    if (neg_col_of[j] >= 0) z[j] -= z_std[neg_col_of[j]];
  }
  return {LpStatus::Optimal, z, lp.c.dot(z)};
}

FeasibilityResult min_violation_point(const LinearProgram& lp) {
  const int n = lp.n_vars();
  const int me = static_cast<int>(lp.b_eq.size());
  const int mi = static_cast<int>(lp.b_le.size());
  // Augment: equality rows get signed residual pairs, inequality rows get a
  // one-sided residual; minimize the total.
  LinearProgram aug = LinearProgram::make(n + 2 * me + mi);
  for (int j = 0; j < n; ++j) aug.nonneg[j] = lp.nonneg[j];
  aug.c.setZero();
  for (int k = n; k < aug.n_vars(); ++k) aug.c[k] = 1.0;
  aug.A_eq = MatrixXd::Zero(me, aug.n_vars());
  aug.b_eq = lp.b_eq;
  for (int i = 0; i < me; ++i) {
    aug.A_eq.block(i, 0, 1, n) = lp.A_eq.row(i);
    aug.A_eq(i, n + 2 * i) = 1.0;
    aug.A_eq(i, n + 2 * i + 1) = -1.0;
  }
  aug.A_le = MatrixXd::Zero(mi, aug.n_vars());
  aug.b_le = lp.b_le;
  for (int i = 0; i < mi; ++i) {
    aug.A_le.block(i, 0, 1, n) = lp.A_le.row(i);
    aug.A_le(i, n + 2 * me + i) = -1.0;
  }
  LpSolution sol = solve_lp(aug);
  if (sol.status != LpStatus::Optimal)
    throw Error("residual minimization did not solve");
  return {sol.value, sol.z.head(n)};
}

std::vector<VectorXd> enumerate_vertices_nonneg(const MatrixXd& A, const VectorXd& b,
                                                double tol) {
  const int n = static_cast<int>(A.cols());
  const int m = static_cast<int>(A.rows());
  if (n > 20) throw ValidationError("vertex enumeration limited to 20 columns");
  std::vector<VectorXd> out;
  auto push_unique = [&](const VectorXd& v) {
    for (const auto& w : out)
      if ((w - v).lpNorm<Eigen::Infinity>() <= 1e-9) return;
    out.push_back(v);
  };
  const double bscale = 1.0 + b.lpNorm<Eigen::Infinity>();
  const int max_support = std::min(n, m);
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    const int k = __builtin_popcount(mask);
    if (k > max_support) continue;
    MatrixXd As(m, k);
    std::vector<int> idx;
    for (int j = 0; j < n; ++j)
      if (mask & (1u << j)) {
        As.col(static_cast<int>(idx.size())) = A.col(j);
        idx.push_back(j);
      }
    VectorXd zs;
    if (k > 0) {
      Eigen::ColPivHouseholderQR<MatrixXd> qr(As);
      qr.setThreshold(1e-10);
      if (qr.rank() < k) continue;  // dependent support cannot be a vertex
      zs = qr.solve(b);
    }
    VectorXd z = VectorXd::Zero(n);
    bool ok = true;
    for (int t = 0; t < k; ++t) {
      if (zs[t] < -tol) {
        ok = false;
        break;
      }
      z[idx[t]] = std::max(0.0, zs[t]);
    }
    if (!ok) continue;
    if ((A * z - b).lpNorm<Eigen::Infinity>() > tol * bscale) continue;
    push_unique(z);
  }
  return out;
}

bool nonneg_kernel_is_trivial(const MatrixXd& A, double tol) {
  const int n = static_cast<int>(A.cols());
  if (n == 0) return true;
  // max 1^T z subject to A z = 0, 0 <= z <= 1: positive optimum exposes a ray.
  LinearProgram lp = LinearProgram::make(n);
  lp.c = -VectorXd::Ones(n);
  lp.A_eq = A;
  lp.b_eq = VectorXd::Zero(A.rows());
  lp.A_le = MatrixXd::Identity(n, n);
  lp.b_le = VectorXd::Ones(n);
  LpSolution sol = solve_lp(lp);
  if (sol.status != LpStatus::Optimal) throw Error("ray detection LP did not solve");
  return -sol.value <= tol;
}

}  // namespace bilevel
