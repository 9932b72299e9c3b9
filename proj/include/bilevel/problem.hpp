#pragma once

#include <optional>
#include <string>
#include <vector>

#include "bilevel/expr.hpp"

namespace bilevel {

struct Box {
  double lo = 0.0;
  double hi = 0.0;
};

// A named point bundled with a problem file; blocks beyond (x, y) are
// optional and sized 0 when absent.
struct CandidatePoint {
  std::string name;
  VectorXd x, y;
  VectorXd u;
  VectorXd d;
  VectorXd z;
  VectorXd lambda;
  std::optional<double> u0;
};

// Two-level program data:
//   upper: minimize F(x, y) over x in x_box subject to G(x, y) <= 0 and
//          y solving the lower level,
//   lower: minimize f(x, y) over y in y_box subject to g(x, y) <= 0.
// Expressions live over the shared table [x1..xn, y1..ym]. Instances are
// immutable after construction and safe to share across threads.
struct BilevelProblem {
  int n = 0, m = 0, p = 0, q = 0;
  Expr F, f;
  std::vector<Expr> g, G;
  std::vector<Box> x_box, y_box;
  std::vector<CandidatePoint> candidates;
  VarTable vars;

  // Symbolic derivative caches, built once at construction.
  std::vector<Expr> f_dy, f_dx;                       // m, n entries
  std::vector<std::vector<Expr>> f_dyy;               // m x m
  std::vector<std::vector<Expr>> g_dy, g_dx;          // p x m, p x n
  std::vector<std::vector<std::vector<Expr>>> g_dyy;  // p x (m x m)

  VectorXd join(const VectorXd& x, const VectorXd& y) const;

  double eval_F(const VectorXd& x, const VectorXd& y) const;
  double eval_f(const VectorXd& x, const VectorXd& y) const;
  double eval_g(int i, const VectorXd& x, const VectorXd& y) const;
  double eval_G(int j, const VectorXd& x, const VectorXd& y) const;
  VectorXd eval_g_all(const VectorXd& x, const VectorXd& y) const;  // size p
  VectorXd eval_G_all(const VectorXd& x, const VectorXd& y) const;  // size q

  VectorXd grad_y_f(const VectorXd& x, const VectorXd& y) const;
  VectorXd grad_x_f(const VectorXd& x, const VectorXd& y) const;
  MatrixXd jac_y_g(const VectorXd& x, const VectorXd& y) const;  // p x m
  MatrixXd jac_x_g(const VectorXd& x, const VectorXd& y) const;  // p x n
  MatrixXd hess_yy_f(const VectorXd& x, const VectorXd& y) const;
  MatrixXd hess_yy_g(int i, const VectorXd& x, const VectorXd& y) const;

  // Lower-level Lagrangian f + u^T g and its weighted (Fritz John) variant
  // u0 f + u^T g; both with y-Hessians assembled from the caches.
  double lagrangian(const VectorXd& x, const VectorXd& y, const VectorXd& u) const;
  double generalized_lagrangian(const VectorXd& x, const VectorXd& y, double u0,
                                const VectorXd& u) const;
  VectorXd grad_y_lagrangian(const VectorXd& x, const VectorXd& y,
                             const VectorXd& u) const;
  MatrixXd hess_yy_lagrangian(const VectorXd& x, const VectorXd& y,
                              const VectorXd& u) const;
  MatrixXd hess_yy_generalized(const VectorXd& x, const VectorXd& y, double u0,
                               const VectorXd& u) const;

  bool lower_feasible(const VectorXd& x, const VectorXd& y, double tol) const;
  bool in_x_box(const VectorXd& x, double tol = 0.0) const;
  bool in_y_box(const VectorXd& y, double tol = 0.0) const;

  const CandidatePoint* find_candidate(const std::string& name) const;
};

// Construction validates dimensions, bounds, and expression variables; all
// problems come from JSON (file, text, or parsed document).
BilevelProblem load_problem(const std::string& path);
BilevelProblem problem_from_json_text(const std::string& text,
                                      const std::string& origin = "<memory>");

// Assembles the derivative caches; used by both JSON loading and
// programmatic construction (instance generators).
void finalize_problem(BilevelProblem& prob);

}  // namespace bilevel
