#include "bilevel/expr.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>

namespace bilevel {

namespace detail {

enum class Kind : std::uint8_t {
  Const, Var, Neg, Add, Sub, Mul, Div, IntPow, Exp, Log, Sin, Cos, Sqrt
};

struct Node {
  Kind kind;
  double value = 0.0;  // Const
  int var = -1;        // Var
  int exponent = 0;    // IntPow
  NodePtr a, b;
};

namespace {

NodePtr mk_raw(Kind k, NodePtr a = nullptr, NodePtr b = nullptr) {
  auto n = std::make_shared<Node>();
  n->kind = k;
  n->a = std::move(a);
  n->b = std::move(b);
  return n;
}

NodePtr mk_const(double v) {
  auto n = std::make_shared<Node>();
  n->kind = Kind::Const;
  n->value = v;
  return n;
}

NodePtr mk_var(int idx) {
  auto n = std::make_shared<Node>();
  n->kind = Kind::Var;
  n->var = idx;
  return n;
}

bool is_const(const NodePtr& n, double v) {
  return n->kind == Kind::Const && n->value == v;
}

NodePtr mk_neg(NodePtr a) {
  if (a->kind == Kind::Const) return mk_const(-a->value);
  if (a->kind == Kind::Neg) return a->a;
  return mk_raw(Kind::Neg, std::move(a));
}

NodePtr mk_add(NodePtr a, NodePtr b) {
  if (a->kind == Kind::Const && b->kind == Kind::Const)
    return mk_const(a->value + b->value);
  if (is_const(a, 0.0)) return b;
  if (is_const(b, 0.0)) return a;
  return mk_raw(Kind::Add, std::move(a), std::move(b));
}

NodePtr mk_sub(NodePtr a, NodePtr b) {
  if (a->kind == Kind::Const && b->kind == Kind::Const)
    return mk_const(a->value - b->value);
  if (is_const(b, 0.0)) return a;
  if (is_const(a, 0.0)) return mk_neg(std::move(b));
  return mk_raw(Kind::Sub, std::move(a), std::move(b));
}

NodePtr mk_mul(NodePtr a, NodePtr b) {
  if (a->kind == Kind::Const && b->kind == Kind::Const)
    return mk_const(a->value * b->value);
  if (is_const(a, 0.0) || is_const(b, 0.0)) return mk_const(0.0);
  if (is_const(a, 1.0)) return b;
  if (is_const(b, 1.0)) return a;
  return mk_raw(Kind::Mul, std::move(a), std::move(b));
}

NodePtr mk_div(NodePtr a, NodePtr b) {
  // Never fold a zero denominator away: evaluation must raise the error.
  if (b->kind == Kind::Const && b->value == 0.0)
    return mk_raw(Kind::Div, std::move(a), std::move(b));
  if (a->kind == Kind::Const && b->kind == Kind::Const)
    return mk_const(a->value / b->value);
  if (is_const(b, 1.0)) return a;
  if (is_const(a, 0.0)) return mk_const(0.0);
  return mk_raw(Kind::Div, std::move(a), std::move(b));
}

NodePtr mk_ipow(NodePtr a, int k) {
  if (k == 0) return mk_const(1.0);
  if (k == 1) return a;
  // Fold constants, except 0^negative which must raise at evaluation time.
  if (a->kind == Kind::Const && !(a->value == 0.0 && k < 0))
    return mk_const(std::pow(a->value, k));
  auto n = std::make_shared<Node>();
  n->kind = Kind::IntPow;
  n->a = std::move(a);
  n->exponent = k;
  return n;
}

NodePtr mk_fun(Kind k, NodePtr a) {
  if (a->kind == Kind::Const) {
    const double v = a->value;
    switch (k) {
      case Kind::Exp: return mk_const(std::exp(v));
      case Kind::Log:
        if (v > 0.0) return mk_const(std::log(v));
        break;  // out of domain: keep the node so eval reports it
      case Kind::Sin: return mk_const(std::sin(v));
      case Kind::Cos: return mk_const(std::cos(v));
      case Kind::Sqrt:
        if (v >= 0.0) return mk_const(std::sqrt(v));
        break;
      default: break;
    }
  }
  return mk_raw(k, std::move(a));
}

double eval_node(const Node* n, const double* vars, int n_vars) {
  switch (n->kind) {
    case Kind::Const: return n->value;
    case Kind::Var:
      if (n->var < 0 || n->var >= n_vars)
        throw DomainError("evaluation point does not cover variable index " +
                          std::to_string(n->var));
      return vars[n->var];
    case Kind::Neg: return -eval_node(n->a.get(), vars, n_vars);
    case Kind::Add:
      return eval_node(n->a.get(), vars, n_vars) + eval_node(n->b.get(), vars, n_vars);
    case Kind::Sub:
      return eval_node(n->a.get(), vars, n_vars) - eval_node(n->b.get(), vars, n_vars);
    case Kind::Mul:
      return eval_node(n->a.get(), vars, n_vars) * eval_node(n->b.get(), vars, n_vars);
    case Kind::Div: {
      const double den = eval_node(n->b.get(), vars, n_vars);
      if (den == 0.0) throw DomainError("division by zero");
      return eval_node(n->a.get(), vars, n_vars) / den;
    }
    case Kind::IntPow: {
      const double base = eval_node(n->a.get(), vars, n_vars);
      if (base == 0.0 && n->exponent < 0)
        throw DomainError("zero raised to a negative power");
      return std::pow(base, n->exponent);
    }
    case Kind::Exp: return std::exp(eval_node(n->a.get(), vars, n_vars));
    case Kind::Log: {
      const double v = eval_node(n->a.get(), vars, n_vars);
      if (v <= 0.0) throw DomainError("log of a non-positive value");
      return std::log(v);
    }
    case Kind::Sin: return std::sin(eval_node(n->a.get(), vars, n_vars));
    case Kind::Cos: return std::cos(eval_node(n->a.get(), vars, n_vars));
    case Kind::Sqrt: {
      const double v = eval_node(n->a.get(), vars, n_vars);
      if (v < 0.0) throw DomainError("sqrt of a negative value");
      return std::sqrt(v);
    }
  }
  throw Error("corrupt expression node");
}

NodePtr diff_node(const NodePtr& n, int var) {
  switch (n->kind) {
    case Kind::Const: return mk_const(0.0);
    case Kind::Var: return mk_const(n->var == var ? 1.0 : 0.0);
    case Kind::Neg: return mk_neg(diff_node(n->a, var));
    case Kind::Add: return mk_add(diff_node(n->a, var), diff_node(n->b, var));
    case Kind::Sub: return mk_sub(diff_node(n->a, var), diff_node(n->b, var));
    case Kind::Mul:
      return mk_add(mk_mul(diff_node(n->a, var), n->b),
                    mk_mul(n->a, diff_node(n->b, var)));
    case Kind::Div:
      return mk_div(mk_sub(mk_mul(diff_node(n->a, var), n->b),
                           mk_mul(n->a, diff_node(n->b, var))),
                    mk_ipow(n->b, 2));
    case Kind::IntPow:
      return mk_mul(mk_mul(mk_const(n->exponent), mk_ipow(n->a, n->exponent - 1)),
                    diff_node(n->a, var));
    case Kind::Exp: return mk_mul(mk_fun(Kind::Exp, n->a), diff_node(n->a, var));
    case Kind::Log: return mk_div(diff_node(n->a, var), n->a);
    case Kind::Sin: return mk_mul(mk_fun(Kind::Cos, n->a), diff_node(n->a, var));
    case Kind::Cos:
      return mk_neg(mk_mul(mk_fun(Kind::Sin, n->a), diff_node(n->a, var)));
    case Kind::Sqrt:
      return mk_div(diff_node(n->a, var),
                    mk_mul(mk_const(2.0), mk_fun(Kind::Sqrt, n->a)));
  }
  throw Error("corrupt expression node");
}

bool depends_node(const Node* n, int var) {
  switch (n->kind) {
    case Kind::Const: return false;
    case Kind::Var: return n->var == var;
    default:
      if (n->a && depends_node(n->a.get(), var)) return true;
      if (n->b && depends_node(n->b.get(), var)) return true;
      return false;
  }
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Fully parenthesized printing: compact enough to read, trivially
// round-trippable through the parser.
std::string print_node(const Node* n, const std::vector<std::string>* names) {
  auto operand = [&](const Node* c) {
    std::string s = print_node(c, names);
    if (c->kind == Kind::Const || c->kind == Kind::Var) return s;
    if (c->kind == Kind::Exp || c->kind == Kind::Log || c->kind == Kind::Sin ||
        c->kind == Kind::Cos || c->kind == Kind::Sqrt)
      return s;
    return "(" + s + ")";
  };
  switch (n->kind) {
    case Kind::Const: return fmt_double(n->value);
    case Kind::Var:
      if (names && n->var < static_cast<int>(names->size()))
        return (*names)[n->var];
      return "v" + std::to_string(n->var);
    case Kind::Neg: return "-" + operand(n->a.get());
    case Kind::Add:
      return operand(n->a.get()) + " + " + operand(n->b.get());
    case Kind::Sub:
      return operand(n->a.get()) + " - " + operand(n->b.get());
    case Kind::Mul:
      return operand(n->a.get()) + "*" + operand(n->b.get());
    case Kind::Div:
      return operand(n->a.get()) + "/" + operand(n->b.get());
    case Kind::IntPow:
      return operand(n->a.get()) + "^" + std::to_string(n->exponent);
    case Kind::Exp: return "exp(" + print_node(n->a.get(), names) + ")";
    case Kind::Log: return "log(" + print_node(n->a.get(), names) + ")";
    case Kind::Sin: return "sin(" + print_node(n->a.get(), names) + ")";
    case Kind::Cos: return "cos(" + print_node(n->a.get(), names) + ")";
    case Kind::Sqrt: return "sqrt(" + print_node(n->a.get(), names) + ")";
  }
  throw Error("corrupt expression node");
}

NodePtr rebase_node(const NodePtr& n, const std::vector<int>& index_map) {
  switch (n->kind) {
    case Kind::Const: return n;
    case Kind::Var: {
      if (n->var < 0 || n->var >= static_cast<int>(index_map.size()))
        throw ValidationError("rebase: variable index out of range");
      return mk_var(index_map[n->var]);
    }
    case Kind::Neg: return mk_neg(rebase_node(n->a, index_map));
    case Kind::Add:
      return mk_add(rebase_node(n->a, index_map), rebase_node(n->b, index_map));
    case Kind::Sub:
      return mk_sub(rebase_node(n->a, index_map), rebase_node(n->b, index_map));
    case Kind::Mul:
      return mk_mul(rebase_node(n->a, index_map), rebase_node(n->b, index_map));
    case Kind::Div:
      return mk_div(rebase_node(n->a, index_map), rebase_node(n->b, index_map));
    case Kind::IntPow:
      return mk_ipow(rebase_node(n->a, index_map), n->exponent);
    case Kind::Exp: return mk_fun(Kind::Exp, rebase_node(n->a, index_map));
    case Kind::Log: return mk_fun(Kind::Log, rebase_node(n->a, index_map));
    case Kind::Sin: return mk_fun(Kind::Sin, rebase_node(n->a, index_map));
    case Kind::Cos: return mk_fun(Kind::Cos, rebase_node(n->a, index_map));
    case Kind::Sqrt: return mk_fun(Kind::Sqrt, rebase_node(n->a, index_map));
  }
  throw Error("corrupt expression node");
}

}  // namespace
}  // namespace detail

using detail::Kind;
using detail::Node;

VarTable make_var_table(std::vector<std::string> names) {
  return std::make_shared<const std::vector<std::string>>(std::move(names));
}

Expr::Expr() : node_(detail::mk_const(0.0)) {}

Expr::Expr(NodePtr node, VarTable table)
    : node_(std::move(node)), table_(std::move(table)) {}

Expr Expr::constant(double v) { return Expr(detail::mk_const(v), nullptr); }

Expr Expr::variable(int index, VarTable table) {
  if (!table || index < 0 || index >= static_cast<int>(table->size()))
    throw ValidationError("variable index outside the table");
  return Expr(detail::mk_var(index), std::move(table));
}

VarTable Expr::merge_tables(const Expr& a, const Expr& b) {
  if (!a.table_) return b.table_;
  if (!b.table_) return a.table_;
  if (a.table_ == b.table_ || *a.table_ == *b.table_) return a.table_;
  throw ValidationError("cannot combine expressions over different variable tables");
}

double Expr::eval(const VectorXd& values) const {
  return detail::eval_node(node_.get(), values.data(),
                           static_cast<int>(values.size()));
}

double Expr::eval(const std::map<std::string, double>& env) const {
  const int n = table_ ? static_cast<int>(table_->size()) : 0;
  VectorXd v(n);
  for (int i = 0; i < n; ++i) {
    auto it = env.find((*table_)[i]);
    if (it == env.end()) {
      if (depends_on(i))
        throw DomainError("environment does not bind variable '" + (*table_)[i] + "'");
      v[i] = 0.0;
    } else {
      v[i] = it->second;
    }
  }
  return eval(v);
}

Expr Expr::diff(int var, int order) const {
  if (order < 1) throw ValidationError("derivative order must be >= 1");
  NodePtr n = node_;
  for (int i = 0; i < order; ++i) n = detail::diff_node(n, var);
  return Expr(n, table_);
}

Expr Expr::diff(const std::string& var, int order) const {
  if (!table_) {
    // Constant expression: derivative is 0 regardless of the name.
    return Expr::constant(0.0);
  }
  for (int i = 0; i < static_cast<int>(table_->size()); ++i)
    if ((*table_)[i] == var) return diff(i, order);
  throw ValidationError("unknown variable '" + var + "'");
}

bool Expr::depends_on(int var) const {
  return detail::depends_node(node_.get(), var);
}

bool Expr::is_constant() const { return node_->kind == Kind::Const; }

double Expr::constant_value() const {
  if (!is_constant()) throw ValidationError("expression is not a constant");
  return node_->value;
}

std::string Expr::to_string() const {
  return detail::print_node(node_.get(), table_ ? table_.get() : nullptr);
}

Expr Expr::rebased(VarTable new_table, const std::vector<int>& index_map) const {
  for (int idx : index_map)
    if (idx < 0 || !new_table || idx >= static_cast<int>(new_table->size()))
      throw ValidationError("rebase: mapped index outside the new table");
  return Expr(detail::rebase_node(node_, index_map), std::move(new_table));
}

Expr operator+(const Expr& a, const Expr& b) {
  return Expr(detail::mk_add(a.node_, b.node_), Expr::merge_tables(a, b));
}
Expr operator-(const Expr& a, const Expr& b) {
  return Expr(detail::mk_sub(a.node_, b.node_), Expr::merge_tables(a, b));
}
Expr operator*(const Expr& a, const Expr& b) {
  return Expr(detail::mk_mul(a.node_, b.node_), Expr::merge_tables(a, b));
}
Expr operator/(const Expr& a, const Expr& b) {
  return Expr(detail::mk_div(a.node_, b.node_), Expr::merge_tables(a, b));
}
Expr operator-(const Expr& a) { return Expr(detail::mk_neg(a.node_), a.table_); }
Expr pow(const Expr& a, int k) { return Expr(detail::mk_ipow(a.node_, k), a.table_); }
Expr exp(const Expr& a) { return Expr(detail::mk_fun(Kind::Exp, a.node_), a.table_); }
Expr log(const Expr& a) { return Expr(detail::mk_fun(Kind::Log, a.node_), a.table_); }
Expr sin(const Expr& a) { return Expr(detail::mk_fun(Kind::Sin, a.node_), a.table_); }
Expr cos(const Expr& a) { return Expr(detail::mk_fun(Kind::Cos, a.node_), a.table_); }
Expr sqrt(const Expr& a) { return Expr(detail::mk_fun(Kind::Sqrt, a.node_), a.table_); }

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

namespace {

struct Parser {
  const std::string& src;
  VarTable table;
  std::size_t pos = 0;

  void skip_ws() {
    while (pos < src.size() && std::isspace(static_cast<unsigned char>(src[pos]))) ++pos;
  }

  bool eat(char c) {
    skip_ws();
    if (pos < src.size() && src[pos] == c) {
      ++pos;
      return true;
    }
    return false;
  }

  char peek() {
    skip_ws();
    return pos < src.size() ? src[pos] : '\0';
  }

  [[noreturn]] void fail(const std::string& msg) { throw ParseError(msg, pos); }

  NodePtr parse_expr_rule() {
    NodePtr t = parse_term();
    for (;;) {
      if (eat('+')) t = detail::mk_add(t, parse_term());
      else if (eat('-')) t = detail::mk_sub(t, parse_term());
      else return t;
    }
  }

  NodePtr parse_term() {
    NodePtr f = parse_factor();
    for (;;) {
      if (eat('*')) f = detail::mk_mul(f, parse_factor());
      else if (eat('/')) f = detail::mk_div(f, parse_factor());
      else return f;
    }
  }

  // '^' binds tighter than unary minus: -x^2 parses as -(x^2).
  NodePtr parse_factor() {
    if (eat('-')) return detail::mk_neg(parse_factor());
    return parse_power();
  }

  NodePtr parse_power() {
    NodePtr base = parse_atom();
    if (!eat('^')) return base;
    NodePtr expo = parse_factor();  // right-associative; allows x^-2, x^2^3
    if (expo->kind == Kind::Const) {
      const double v = expo->value;
      const double r = std::round(v);
      if (std::abs(v - r) <= 1e-9 && std::abs(r) <= 64.0)
        return detail::mk_ipow(base, static_cast<int>(r));
      // Fractional constant exponent: route through exp/log so the domain
      // requirement (positive base) is explicit at evaluation time.
      return detail::mk_fun(Kind::Exp, detail::mk_mul(expo, detail::mk_fun(Kind::Log, base)));
    }
    return detail::mk_fun(Kind::Exp, detail::mk_mul(expo, detail::mk_fun(Kind::Log, base)));
  }

  NodePtr parse_atom() {
    skip_ws();
    if (pos >= src.size()) fail("unexpected end of input");
    const char c = src[pos];
    if (c == '(') {
      ++pos;
      NodePtr e = parse_expr_rule();
      if (!eat(')')) fail("expected ')'");
      return e;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return parse_number();
    if (std::isalpha(static_cast<unsigned char>(c))) return parse_ident();
    fail(std::string("unexpected character '") + c + "'");
  }

  NodePtr parse_number() {
    const char* begin = src.c_str() + pos;
    char* end = nullptr;
    const double v = std::strtod(begin, &end);
    if (end == begin) fail("malformed number");
    pos += static_cast<std::size_t>(end - begin);
    return detail::mk_const(v);
  }

  NodePtr parse_ident() {
    const std::size_t start = pos;
    while (pos < src.size() &&
           (std::isalnum(static_cast<unsigned char>(src[pos])) || src[pos] == '_'))
      ++pos;
    const std::string name = src.substr(start, pos - start);
    const bool is_fun = name == "exp" || name == "log" || name == "sin" ||
                        name == "cos" || name == "sqrt";
    if (is_fun && peek() == '(') {
      ++pos;  // consume '('
      NodePtr arg = parse_expr_rule();
      if (!eat(')')) fail("expected ')' closing " + name);
      if (name == "exp") return detail::mk_fun(Kind::Exp, arg);
      if (name == "log") return detail::mk_fun(Kind::Log, arg);
      if (name == "sin") return detail::mk_fun(Kind::Sin, arg);
      if (name == "cos") return detail::mk_fun(Kind::Cos, arg);
      return detail::mk_fun(Kind::Sqrt, arg);
    }
    for (int i = 0; i < static_cast<int>(table->size()); ++i)
      if ((*table)[i] == name) return detail::mk_var(i);
    pos = start;
    fail("unknown identifier '" + name + "'");
  }
};

}  // namespace

Expr parse_expr(const std::string& src, VarTable table) {
  Parser p{src, table};
  NodePtr root = p.parse_expr_rule();
  p.skip_ws();
  if (p.pos != src.size())
    throw ParseError("trailing input after expression", p.pos);
  // Constants carry no table so they can combine with anything later.
  if (root->kind == Kind::Const) return Expr::constant(root->value);
  return Expr(std::move(root), std::move(table));
}

Expr parse_expr(const std::string& src, const std::vector<std::string>& variables) {
  return parse_expr(src, make_var_table(variables));
}

// ---------------------------------------------------------------------------
// Derivative containers
// ---------------------------------------------------------------------------

std::vector<Expr> gradient(const Expr& e, const std::vector<int>& vars) {
  std::vector<Expr> out;
  out.reserve(vars.size());
  for (int v : vars) out.push_back(e.diff(v));
  return out;
}

std::vector<std::vector<Expr>> hessian(const Expr& e, const std::vector<int>& vars) {
  const int k = static_cast<int>(vars.size());
  std::vector<std::vector<Expr>> h(k, std::vector<Expr>(k));
  for (int i = 0; i < k; ++i) {
    const Expr di = e.diff(vars[i]);
    for (int j = i; j < k; ++j) {
      h[i][j] = di.diff(vars[j]);
      if (j != i) h[j][i] = h[i][j];  // symmetric by construction
    }
  }
  return h;
}

std::vector<std::vector<std::vector<Expr>>> third_tensor(const Expr& e,
                                                         const std::vector<int>& vars) {
  const int k = static_cast<int>(vars.size());
  auto h = hessian(e, vars);
  std::vector<std::vector<std::vector<Expr>>> t(
      k, std::vector<std::vector<Expr>>(k, std::vector<Expr>(k)));
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j)
      for (int l = 0; l < k; ++l) t[i][j][l] = h[i][j].diff(vars[l]);
  return t;
}

VectorXd eval_vector(const std::vector<Expr>& v, const VectorXd& at) {
  VectorXd out(static_cast<int>(v.size()));
  for (int i = 0; i < out.size(); ++i) out[i] = v[i].eval(at);
  return out;
}

MatrixXd eval_matrix(const std::vector<std::vector<Expr>>& m, const VectorXd& at) {
  const int r = static_cast<int>(m.size());
  const int c = r ? static_cast<int>(m[0].size()) : 0;
  MatrixXd out(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out(i, j) = m[i][j].eval(at);
  return out;
}

// ---------------------------------------------------------------------------
// Compilation to a postfix tape
// ---------------------------------------------------------------------------

CompiledExpr Expr::compile() const {
  CompiledExpr ce;
  ce.n_vars_ = table_ ? static_cast<int>(table_->size()) : 0;
  // Post-order walk without recursion limits worth worrying about here.
  struct Frame { const Node* n; bool expanded; };
  std::vector<Frame> stack{{node_.get(), false}};
  std::vector<const Node*> order;
  while (!stack.empty()) {
    auto [n, expanded] = stack.back();
    stack.pop_back();
    if (expanded) {
      order.push_back(n);
      continue;
    }
    stack.push_back({n, true});
    if (n->b) stack.push_back({n->b.get(), false});
    if (n->a) stack.push_back({n->a.get(), false});
  }
  int depth = 0;
  for (const Node* n : order) {
    CompiledExpr::Ins ins;
    switch (n->kind) {
      case Kind::Const: ins.op = CompiledExpr::Op::PushConst; ins.c = n->value; ++depth; break;
      case Kind::Var: ins.op = CompiledExpr::Op::PushVar; ins.arg = n->var; ++depth; break;
      case Kind::Neg: ins.op = CompiledExpr::Op::Neg; break;
      case Kind::Add: ins.op = CompiledExpr::Op::Add; --depth; break;
      case Kind::Sub: ins.op = CompiledExpr::Op::Sub; --depth; break;
      case Kind::Mul: ins.op = CompiledExpr::Op::Mul; --depth; break;
      case Kind::Div: ins.op = CompiledExpr::Op::Div; --depth; break;
      case Kind::IntPow: ins.op = CompiledExpr::Op::IntPow; ins.arg = n->exponent; break;
      case Kind::Exp: ins.op = CompiledExpr::Op::Exp; break;
      case Kind::Log: ins.op = CompiledExpr::Op::Log; break;
      case Kind::Sin: ins.op = CompiledExpr::Op::Sin; break;
      case Kind::Cos: ins.op = CompiledExpr::Op::Cos; break;
      case Kind::Sqrt: ins.op = CompiledExpr::Op::Sqrt; break;
    }
    ce.max_stack_ = std::max(ce.max_stack_, depth);
    ce.prog_.push_back(ins);
  }
  return ce;
}

double CompiledExpr::eval(const double* vars, int n_vars) const {
  double fixed[64];
  std::vector<double> heap;
  double* st = fixed;
  if (max_stack_ > 64) {
    heap.resize(max_stack_);
    st = heap.data();
  }
  int top = 0;
  for (const Ins& ins : prog_) {
    switch (ins.op) {
      case Op::PushConst: st[top++] = ins.c; break;
      case Op::PushVar:
        if (ins.arg >= n_vars)
          throw DomainError("evaluation point does not cover variable index " +
                            std::to_string(ins.arg));
        st[top++] = vars[ins.arg];
        break;
      case Op::Neg: st[top - 1] = -st[top - 1]; break;
      case Op::Add: st[top - 2] += st[top - 1]; --top; break;
      case Op::Sub: st[top - 2] -= st[top - 1]; --top; break;
      case Op::Mul: st[top - 2] *= st[top - 1]; --top; break;
      case Op::Div:
        if (st[top - 1] == 0.0) throw DomainError("division by zero");
        st[top - 2] /= st[top - 1];
        --top;
        break;
      case Op::IntPow:
        if (st[top - 1] == 0.0 && ins.arg < 0)
          throw DomainError("zero raised to a negative power");
        st[top - 1] = std::pow(st[top - 1], ins.arg);
        break;
      case Op::Exp: st[top - 1] = std::exp(st[top - 1]); break;
      case Op::Log:
        if (st[top - 1] <= 0.0) throw DomainError("log of a non-positive value");
        st[top - 1] = std::log(st[top - 1]);
        break;
      case Op::Sin: st[top - 1] = std::sin(st[top - 1]); break;
      case Op::Cos: st[top - 1] = std::cos(st[top - 1]); break;
      case Op::Sqrt:
        if (st[top - 1] < 0.0) throw DomainError("sqrt of a negative value");
        st[top - 1] = std::sqrt(st[top - 1]);
        break;
    }
  }
  return st[top - 1];
}

}  // namespace bilevel
