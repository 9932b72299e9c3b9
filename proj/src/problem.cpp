#include "bilevel/problem.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <sstream>

namespace bilevel {

using nlohmann::json;

VectorXd BilevelProblem::join(const VectorXd& x, const VectorXd& y) const {
  if (x.size() != n || y.size() != m)
    throw ValidationError("point dimensions do not match the problem");
  VectorXd xy(n + m);
  xy.head(n) = x;
  xy.tail(m) = y;
  return xy;
}

double BilevelProblem::eval_F(const VectorXd& x, const VectorXd& y) const {
  return F.eval(join(x, y));
}
double BilevelProblem::eval_f(const VectorXd& x, const VectorXd& y) const {
  return f.eval(join(x, y));
}
double BilevelProblem::eval_g(int i, const VectorXd& x, const VectorXd& y) const {
  return g.at(i).eval(join(x, y));
}
double BilevelProblem::eval_G(int j, const VectorXd& x, const VectorXd& y) const {
  return G.at(j).eval(join(x, y));
}

VectorXd BilevelProblem::eval_g_all(const VectorXd& x, const VectorXd& y) const {
  const VectorXd xy = join(x, y);
  VectorXd out(p);
  for (int i = 0; i < p; ++i) out[i] = g[i].eval(xy);
  return out;
}

VectorXd BilevelProblem::eval_G_all(const VectorXd& x, const VectorXd& y) const {
  const VectorXd xy = join(x, y);
  VectorXd out(q);
  for (int j = 0; j < q; ++j) out[j] = G[j].eval(xy);
  return out;
}

VectorXd BilevelProblem::grad_y_f(const VectorXd& x, const VectorXd& y) const {
  const VectorXd xy = join(x, y);
  VectorXd out(m);
  for (int k = 0; k < m; ++k) out[k] = f_dy[k].eval(xy);
  return out;
}

VectorXd BilevelProblem::grad_x_f(const VectorXd& x, const VectorXd& y) const {
  const VectorXd xy = join(x, y);
  VectorXd out(n);
  for (int k = 0; k < n; ++k) out[k] = f_dx[k].eval(xy);
  return out;
}

MatrixXd BilevelProblem::jac_y_g(const VectorXd& x, const VectorXd& y) const {
  const VectorXd xy = join(x, y);
  MatrixXd out(p, m);
  for (int i = 0; i < p; ++i)
    for (int k = 0; k < m; ++k) out(i, k) = g_dy[i][k].eval(xy);
  return out;
}

MatrixXd BilevelProblem::jac_x_g(const VectorXd& x, const VectorXd& y) const {
  const VectorXd xy = join(x, y);
  MatrixXd out(p, n);
  for (int i = 0; i < p; ++i)
    for (int k = 0; k < n; ++k) out(i, k) = g_dx[i][k].eval(xy);
  return out;
}

MatrixXd BilevelProblem::hess_yy_f(const VectorXd& x, const VectorXd& y) const {
  return eval_matrix(f_dyy, join(x, y));
}

MatrixXd BilevelProblem::hess_yy_g(int i, const VectorXd& x, const VectorXd& y) const {
  return eval_matrix(g_dyy.at(i), join(x, y));
}

double BilevelProblem::lagrangian(const VectorXd& x, const VectorXd& y,
                                  const VectorXd& u) const {
  if (u.size() != p) throw ValidationError("multiplier dimension mismatch");
  double v = eval_f(x, y);
  for (int i = 0; i < p; ++i) v += u[i] * eval_g(i, x, y);
  return v;
}

double BilevelProblem::generalized_lagrangian(const VectorXd& x, const VectorXd& y,
                                              double u0, const VectorXd& u) const {
  if (u.size() != p) throw ValidationError("multiplier dimension mismatch");
  double v = u0 * eval_f(x, y);
  for (int i = 0; i < p; ++i) v += u[i] * eval_g(i, x, y);
  return v;
}

VectorXd BilevelProblem::grad_y_lagrangian(const VectorXd& x, const VectorXd& y,
                                           const VectorXd& u) const {
  if (u.size() != p) throw ValidationError("multiplier dimension mismatch");
  VectorXd out = grad_y_f(x, y);
  if (p > 0) out += jac_y_g(x, y).transpose() * u;
  return out;
}

MatrixXd BilevelProblem::hess_yy_lagrangian(const VectorXd& x, const VectorXd& y,
                                            const VectorXd& u) const {
  return hess_yy_generalized(x, y, 1.0, u);
}

MatrixXd BilevelProblem::hess_yy_generalized(const VectorXd& x, const VectorXd& y,
                                             double u0, const VectorXd& u) const {
  if (u.size() != p) throw ValidationError("multiplier dimension mismatch");
  MatrixXd H = u0 * hess_yy_f(x, y);
  for (int i = 0; i < p; ++i)
    if (u[i] != 0.0) H += u[i] * hess_yy_g(i, x, y);
  return H;
}

bool BilevelProblem::lower_feasible(const VectorXd& x, const VectorXd& y,
                                    double tol) const {
  for (int i = 0; i < p; ++i)
    if (eval_g(i, x, y) > tol) return false;
  return true;
}

bool BilevelProblem::in_x_box(const VectorXd& x, double tol) const {
  for (int i = 0; i < n; ++i)
    if (x[i] < x_box[i].lo - tol || x[i] > x_box[i].hi + tol) return false;
  return true;
}

bool BilevelProblem::in_y_box(const VectorXd& y, double tol) const {
  for (int k = 0; k < m; ++k)
    if (y[k] < y_box[k].lo - tol || y[k] > y_box[k].hi + tol) return false;
  return true;
}

const CandidatePoint* BilevelProblem::find_candidate(const std::string& name) const {
  for (const auto& c : candidates)
    if (c.name == name) return &c;
  return nullptr;
}

void finalize_problem(BilevelProblem& prob) {
  if (!prob.vars) {
    // Problems assembled in code may lack a shared table; adopt the upper
    // objective's table (all expressions must index (x, y) identically) or
    // synthesize canonical names.
    if (prob.F.table()) {
      prob.vars = prob.F.table();
    } else {
      std::vector<std::string> names;
      for (int k = 0; k < prob.n; ++k) names.push_back("x" + std::to_string(k + 1));
      for (int k = 0; k < prob.m; ++k) names.push_back("y" + std::to_string(k + 1));
      prob.vars = make_var_table(std::move(names));
    }
  }
  std::vector<int> yi(prob.m), xi(prob.n);
  for (int k = 0; k < prob.m; ++k) yi[k] = prob.n + k;
  for (int k = 0; k < prob.n; ++k) xi[k] = k;
  prob.f_dy = gradient(prob.f, yi);
  prob.f_dx = gradient(prob.f, xi);
  prob.f_dyy = hessian(prob.f, yi);
  prob.g_dy.clear();
  prob.g_dx.clear();
  prob.g_dyy.clear();
  for (const Expr& gi : prob.g) {
    prob.g_dy.push_back(gradient(gi, yi));
    prob.g_dx.push_back(gradient(gi, xi));
    prob.g_dyy.push_back(hessian(gi, yi));
  }
}

namespace {

VectorXd read_vector(const json& j, const std::string& key, int expect,
                     const std::string& where) {
  if (!j.contains(key)) throw ValidationError(where + ": missing '" + key + "'");
  const auto& arr = j.at(key);
  if (!arr.is_array() || static_cast<int>(arr.size()) != expect)
    throw ValidationError(where + ": '" + key + "' must be an array of length " +
                          std::to_string(expect));
  VectorXd v(expect);
  for (int i = 0; i < expect; ++i) {
    if (!arr[i].is_number())
      throw ValidationError(where + ": '" + key + "' entries must be numbers");
    v[i] = arr[i].get<double>();
  }
  return v;
}

std::vector<Box> read_boxes(const json& j, const std::string& key, int expect,
                            const std::string& where) {
  if (!j.contains(key)) throw ValidationError(where + ": missing '" + key + "'");
  const auto& arr = j.at(key);
  if (!arr.is_array() || static_cast<int>(arr.size()) != expect)
    throw ValidationError(where + ": '" + key + "' must list " + std::to_string(expect) +
                          " [lo, hi] pairs");
  std::vector<Box> out(expect);
  for (int i = 0; i < expect; ++i) {
    const auto& pr = arr[i];
    if (!pr.is_array() || pr.size() != 2 || !pr[0].is_number() || !pr[1].is_number())
      throw ValidationError(where + ": '" + key + "' entry " + std::to_string(i) +
                            " must be [lo, hi]");
    out[i].lo = pr[0].get<double>();
    out[i].hi = pr[1].get<double>();
    if (!std::isfinite(out[i].lo) || !std::isfinite(out[i].hi) || out[i].lo > out[i].hi)
      throw ValidationError(where + ": '" + key + "' entry " + std::to_string(i) +
                            " must satisfy finite lo <= hi");
  }
  return out;
}

Expr parse_in_context(const std::string& src, const VarTable& table,
                      const std::string& what, const std::string& where) {
  try {
    return parse_expr(src, table);
  } catch (const ParseError& pe) {
    throw ValidationError(where + ": while parsing " + what + ": " + pe.what());
  }
}

BilevelProblem from_json(const json& j, const std::string& where) {
  BilevelProblem prob;
  for (const char* key : {"n", "m", "p", "q"}) {
    if (!j.contains(key) || !j.at(key).is_number_integer())
      throw ValidationError(where + ": missing integer field '" + std::string(key) + "'");
  }
  prob.n = j.at("n").get<int>();
  prob.m = j.at("m").get<int>();
  prob.p = j.at("p").get<int>();
  prob.q = j.at("q").get<int>();
  if (prob.n < 1 || prob.m < 1 || prob.p < 0 || prob.q < 0)
    throw ValidationError(where + ": require n >= 1, m >= 1, p >= 0, q >= 0");

  std::vector<std::string> names;
  for (int i = 1; i <= prob.n; ++i) names.push_back("x" + std::to_string(i));
  for (int k = 1; k <= prob.m; ++k) names.push_back("y" + std::to_string(k));
  prob.vars = make_var_table(names);

  if (!j.contains("F") || !j.at("F").is_string())
    throw ValidationError(where + ": missing string field 'F'");
  if (!j.contains("f") || !j.at("f").is_string())
    throw ValidationError(where + ": missing string field 'f'");
  prob.F = parse_in_context(j.at("F").get<std::string>(), prob.vars, "F", where);
  prob.f = parse_in_context(j.at("f").get<std::string>(), prob.vars, "f", where);

  auto read_expr_list = [&](const char* key, int expect) {
    std::vector<Expr> out;
    if (!j.contains(key) || !j.at(key).is_array() ||
        static_cast<int>(j.at(key).size()) != expect)
      throw ValidationError(where + ": '" + std::string(key) + "' must list " +
                            std::to_string(expect) + " expression strings");
    int idx = 0;
    for (const auto& entry : j.at(key)) {
      if (!entry.is_string())
        throw ValidationError(where + ": '" + std::string(key) + "' entries must be strings");
      out.push_back(parse_in_context(entry.get<std::string>(), prob.vars,
                                     std::string(key) + "[" + std::to_string(idx) + "]",
                                     where));
      ++idx;
    }
    return out;
  };
  prob.g = read_expr_list("g", prob.p);
  prob.G = read_expr_list("G", prob.q);
  prob.x_box = read_boxes(j, "x_box", prob.n, where);
  prob.y_box = read_boxes(j, "y_box", prob.m, where);

  if (j.contains("candidates")) {
    if (!j.at("candidates").is_array())
      throw ValidationError(where + ": 'candidates' must be an array");
    for (const auto& cj : j.at("candidates")) {
      CandidatePoint c;
      c.name = cj.value("name", "candidate_" + std::to_string(prob.candidates.size()));
      const std::string cw = where + ": candidate '" + c.name + "'";
      c.x = read_vector(cj, "x", prob.n, cw);
      c.y = read_vector(cj, "y", prob.m, cw);
      if (cj.contains("u")) c.u = read_vector(cj, "u", prob.p, cw);
      if (cj.contains("d")) c.d = read_vector(cj, "d", prob.m, cw);
      if (cj.contains("z")) c.z = read_vector(cj, "z", prob.p, cw);
      if (cj.contains("lambda")) c.lambda = read_vector(cj, "lambda", prob.p, cw);
      if (cj.contains("u0")) {
        if (!cj.at("u0").is_number()) throw ValidationError(cw + ": 'u0' must be a number");
        c.u0 = cj.at("u0").get<double>();
      }
      prob.candidates.push_back(std::move(c));
    }
  }

  finalize_problem(prob);
  return prob;
}

}  // namespace

BilevelProblem problem_from_json_text(const std::string& text, const std::string& origin) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(origin + ": invalid JSON: " + e.what());
  }
  return from_json(j, origin);
}

BilevelProblem load_problem(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open problem file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return problem_from_json_text(ss.str(), path);
}

}  // namespace bilevel
