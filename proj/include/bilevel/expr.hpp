#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "bilevel/common.hpp"

namespace bilevel {

namespace detail {
struct Node;
}
using NodePtr = std::shared_ptr<const detail::Node>;

// Shared, ordered list of variable names. Every Expr belonging to the same
// problem points at the same table; variable indices refer to it.
using VarTable = std::shared_ptr<const std::vector<std::string>>;

VarTable make_var_table(std::vector<std::string> names);

// Flat postfix program for fast repeated evaluation (grid scans, searches).
class CompiledExpr {
 public:
  CompiledExpr() = default;
  double eval(const double* vars, int n_vars) const;
  double eval(const VectorXd& values) const {
    return eval(values.data(), static_cast<int>(values.size()));
  }

 private:
  friend class Expr;
  enum class Op : std::uint8_t {
    PushConst, PushVar, Neg, Add, Sub, Mul, Div, IntPow, Exp, Log, Sin, Cos, Sqrt
  };
  struct Ins {
    Op op;
    std::int32_t arg = 0;  // variable index or integer exponent
    double c = 0.0;        // constant payload
  };
  std::vector<Ins> prog_;
  int max_stack_ = 0;
  int n_vars_ = 0;
};

// Immutable scalar expression over a fixed variable table. Construction
// applies constant folding and 0/1 identities, nothing more.
class Expr {
 public:
  Expr();  // the constant 0
  static Expr constant(double v);
  static Expr variable(int index, VarTable table);

  // values[i] binds table()[i]; every variable the expression uses must be
  // covered. The map overload binds by name and rejects missing names.
  double eval(const VectorXd& values) const;
  double eval(const std::map<std::string, double>& env) const;

  Expr diff(int var, int order = 1) const;
  Expr diff(const std::string& var, int order = 1) const;

  bool depends_on(int var) const;
  bool is_constant() const;
  double constant_value() const;  // requires is_constant()

  std::string to_string() const;
  CompiledExpr compile() const;

  const VarTable& table() const { return table_; }

  // Rebuild this expression over a different table; index_map[i] gives the
  // new index of old variable i. Used when embedding problem expressions
  // into a combined program with extra variable blocks.
  Expr rebased(VarTable new_table, const std::vector<int>& index_map) const;

  friend Expr operator+(const Expr& a, const Expr& b);
  friend Expr operator-(const Expr& a, const Expr& b);
  friend Expr operator*(const Expr& a, const Expr& b);
  friend Expr operator/(const Expr& a, const Expr& b);
  friend Expr operator-(const Expr& a);
  friend Expr pow(const Expr& a, int k);
  friend Expr exp(const Expr& a);
  friend Expr log(const Expr& a);
  friend Expr sin(const Expr& a);
  friend Expr cos(const Expr& a);
  friend Expr sqrt(const Expr& a);
  friend Expr parse_expr(const std::string& src, VarTable table);

 private:
  Expr(NodePtr node, VarTable table);
  static VarTable merge_tables(const Expr& a, const Expr& b);
  NodePtr node_;
  VarTable table_;  // null for pure constants
};

inline Expr operator+(const Expr& a, double b) { return a + Expr::constant(b); }
inline Expr operator+(double a, const Expr& b) { return Expr::constant(a) + b; }
inline Expr operator-(const Expr& a, double b) { return a - Expr::constant(b); }
inline Expr operator-(double a, const Expr& b) { return Expr::constant(a) - b; }
inline Expr operator*(const Expr& a, double b) { return a * Expr::constant(b); }
inline Expr operator*(double a, const Expr& b) { return Expr::constant(a) * b; }
inline Expr operator/(const Expr& a, double b) { return a / Expr::constant(b); }
inline Expr operator/(double a, const Expr& b) { return Expr::constant(a) / b; }

// Parse source text over the given variables (order defines indices).
// Grammar: + - * / ^ with standard precedence, ^ right-associative and
// binding tighter than unary minus; exp/log/sin/cos/sqrt calls; numeric
// literals including scientific notation; identifiers [a-zA-Z][a-zA-Z0-9_]*.
Expr parse_expr(const std::string& src, const std::vector<std::string>& variables);
Expr parse_expr(const std::string& src, VarTable table);

// Symbolic derivative containers over a subset of variable indices.
std::vector<Expr> gradient(const Expr& e, const std::vector<int>& vars);
std::vector<std::vector<Expr>> hessian(const Expr& e, const std::vector<int>& vars);
std::vector<std::vector<std::vector<Expr>>> third_tensor(const Expr& e,
                                                         const std::vector<int>& vars);

// Evaluate a vector/matrix of expressions at a point.
VectorXd eval_vector(const std::vector<Expr>& v, const VectorXd& at);
MatrixXd eval_matrix(const std::vector<std::vector<Expr>>& m, const VectorXd& at);

}  // namespace bilevel
