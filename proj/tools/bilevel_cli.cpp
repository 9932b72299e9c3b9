// Command-line front end for the bilevel toolkit. Every subcommand emits a
// JSON report with the envelope {command, inputs, config, results, warnings,
// errors}; --format table renders a human-readable summary instead, --out
// writes the JSON report to a file in either mode. Exit code 0 iff the
// errors array is empty.
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "bilevel/bundled.hpp"
#include "bilevel/calmness.hpp"
#include "bilevel/stationarity.hpp"

using namespace bilevel;
using ojson = nlohmann::ordered_json;

namespace {

int g_exit = 0;

// ---------------------------------------------------------------------------
// Formatting and parsing

std::string fnum(double v, int prec = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

std::string gnum(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

// JSON has no infinities; encode them as strings so reports stay valid.
ojson jnum(double v) {
  if (std::isfinite(v)) return v;
  return gnum(v);
}

ojson jvec(const VectorXd& v) {
  ojson a = ojson::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(jnum(v(i)));
  return a;
}

ojson jmat(const MatrixXd& M) {
  ojson rows = ojson::array();
  for (int i = 0; i < M.rows(); ++i) {
    ojson row = ojson::array();
    for (int j = 0; j < M.cols(); ++j) row.push_back(jnum(M(i, j)));
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string tuple_str(const VectorXd& v, int prec = 6) {
  std::string s = "(";
  for (int i = 0; i < v.size(); ++i) {
    if (i) s += ", ";
    s += fnum(v(i), prec);
  }
  return s + ")";
}

std::vector<double> parse_list(const std::string& text, const char* what) {
  std::vector<double> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) {
    try {
      std::size_t used = 0;
      const double v = std::stod(item, &used);
      while (used < item.size() && std::isspace(static_cast<unsigned char>(item[used])))
        ++used;
      if (used != item.size()) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::exception&) {
      throw ValidationError(std::string("cannot parse ") + what + " entry '" + item +
                            "' in '" + text + "'");
    }
  }
  if (out.empty())
    throw ValidationError(std::string("empty ") + what + " list '" + text + "'");
  return out;
}

VectorXd parse_vec(const std::string& text, const char* what) {
  const std::vector<double> vals = parse_list(text, what);
  VectorXd v(static_cast<int>(vals.size()));
  for (std::size_t i = 0; i < vals.size(); ++i) v(static_cast<int>(i)) = vals[i];
  return v;
}

ojson jtol(const Tolerances& t) {
  return ojson{{"feas", t.feas},     {"active", t.active},
               {"pos", t.pos},       {"rank", t.rank},
               {"kkt", t.kkt},       {"cone", t.cone},
               {"soc", t.soc},       {"drop", t.drop},
               {"value", t.value},   {"cluster", t.cluster},
               {"sigma", t.sigma},   {"memo_quantum", t.memo_quantum}};
}

// ---------------------------------------------------------------------------
// Problem loading: bundled id (with 3.1-style aliases) or a file path.

std::string normalize_problem_id(const std::string& spec) {
  std::string token = spec;
  if (token == "3.1") token = "example_3_1";
  if (token == "4.6") token = "example_4_6";
  if (token == "4.8") token = "example_4_8";
  for (const auto& id : bundled_problem_ids())
    if (id == token) return id;
  return "";
}

BilevelProblem load_any(const std::string& spec) {
  const std::string id = normalize_problem_id(spec);
  if (!id.empty()) return load_bundled(id);
  return load_problem(spec);
}

// ---------------------------------------------------------------------------
// Common flags and the report envelope

struct Common {
  std::string problem;
  std::string out;
  std::string format = "json";
  unsigned long long seed = 42;
  Tolerances tol;
};

void add_common(CLI::App* cmd, Common& c, bool with_problem) {
  if (with_problem)
    cmd->add_option("--problem", c.problem, "problem file path or bundled id")
        ->required();
  cmd->add_option("--seed", c.seed, "seed for randomized searches")
      ->capture_default_str();
  cmd->add_option("--out", c.out, "write the JSON report to this file");
  cmd->add_option("--format", c.format, "stdout rendering")
      ->check(CLI::IsMember({"json", "table"}))
      ->capture_default_str();
  cmd->add_option("--tol-feas", c.tol.feas)->capture_default_str();
  cmd->add_option("--tol-active", c.tol.active)->capture_default_str();
  cmd->add_option("--tol-pos", c.tol.pos)->capture_default_str();
  cmd->add_option("--tol-rank", c.tol.rank)->capture_default_str();
  cmd->add_option("--tol-kkt", c.tol.kkt)->capture_default_str();
  cmd->add_option("--tol-cone", c.tol.cone)->capture_default_str();
  cmd->add_option("--tol-soc", c.tol.soc)->capture_default_str();
  cmd->add_option("--tol-drop", c.tol.drop)->capture_default_str();
  cmd->add_option("--tol-value", c.tol.value)->capture_default_str();
  cmd->add_option("--tol-cluster", c.tol.cluster)->capture_default_str();
  cmd->add_option("--tol-sigma", c.tol.sigma)->capture_default_str();
}

using WorkFn = std::function<void(ojson& results, std::vector<std::string>& warnings,
                                  std::vector<std::string>& table)>;

void run_guarded(const Common& c, const std::string& command, const ojson& inputs,
                 ojson config, const WorkFn& work) {
  ojson results = ojson::object();
  std::vector<std::string> warnings, errors, table;
  try {
    work(results, warnings, table);
  } catch (const std::exception& ex) {
    errors.push_back(ex.what());
  }

  config["seed"] = c.seed;
  config["tolerances"] = jtol(c.tol);

  ojson report;
  report["command"] = command;
  report["inputs"] = inputs;
  report["config"] = std::move(config);
  report["results"] = std::move(results);
  report["warnings"] = warnings;
  report["errors"] = errors;

  if (!c.out.empty()) {
    std::ofstream out(c.out);
    if (!out) {
      errors.push_back("cannot open '" + c.out + "' for writing");
      report["errors"] = errors;
    } else {
      out << report.dump(2) << "\n";
    }
  }

  if (c.format == "table") {
    for (const auto& line : table) std::cout << line << "\n";
    for (const auto& w : warnings) std::cout << "warning: " << w << "\n";
    for (const auto& e : errors) std::cout << "error: " << e << "\n";
  } else {
    std::cout << report.dump(2) << "\n";
  }
  g_exit = errors.empty() ? 0 : 1;
}

// ---------------------------------------------------------------------------
// Grid specifications: a 1-parameter family of points in a boxed space,
// either along one coordinate (--axis) or along the all-ones direction
// (--tie, e.g. x1 = x2 = t).

std::vector<double> linspace(double a, double b, int n) {
  std::vector<double> out;
  if (n <= 1) {
    out.push_back(a);
    return out;
  }
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    out.push_back(a + (b - a) * static_cast<double>(i) / (n - 1));
  return out;
}

struct AxisSpec {
  // NaN marks "not given"; the box bound is used instead.
  double min = std::numeric_limits<double>::quiet_NaN();
  double max = std::numeric_limits<double>::quiet_NaN();
  int count = 101;
  int axis = 0;
  bool tie = false;
  std::string base;  // CSV base point; zeros when empty
};

struct GridPoints {
  std::vector<double> param;
  std::vector<VectorXd> pts;
  std::string desc;
};

GridPoints make_grid(const std::vector<Box>& box, const AxisSpec& a,
                     const char* space) {
  const int dim = static_cast<int>(box.size());
  if (!a.tie && (a.axis < 0 || a.axis >= dim))
    throw ValidationError(std::string(space) + " axis " + std::to_string(a.axis) +
                          " out of range for dimension " + std::to_string(dim));
  VectorXd base = VectorXd::Zero(dim);
  if (!a.base.empty()) {
    base = parse_vec(a.base, space);
    if (base.size() != dim)
      throw ValidationError(std::string(space) + " base point has length " +
                            std::to_string(base.size()) + "; expected " +
                            std::to_string(dim));
  }
  double lo, hi;
  if (a.tie) {
    lo = -std::numeric_limits<double>::infinity();
    hi = std::numeric_limits<double>::infinity();
    for (const Box& b : box) {
      lo = std::max(lo, b.lo);
      hi = std::min(hi, b.hi);
    }
  } else {
    lo = box[static_cast<std::size_t>(a.axis)].lo;
    hi = box[static_cast<std::size_t>(a.axis)].hi;
  }
  if (!std::isnan(a.min)) lo = a.min;
  if (!std::isnan(a.max)) hi = a.max;
  if (!(lo <= hi))
    throw ValidationError(std::string(space) + " grid range [" + gnum(lo) + ", " +
                          gnum(hi) + "] is empty");
  if (a.count < 1)
    throw ValidationError(std::string(space) + " grid count must be positive");

  GridPoints g;
  g.param = linspace(lo, hi, a.count);
  g.pts.reserve(g.param.size());
  for (double t : g.param) {
    VectorXd v = base;
    if (a.tie)
      v.array() += t;
    else
      v(a.axis) = t;
    g.pts.push_back(std::move(v));
  }
  g.desc = a.tie ? std::string(space) + " = base + t * ones"
                 : std::string(space) + "[" + std::to_string(a.axis) + "] = t";
  return g;
}

void add_x_axis_flags(CLI::App* cmd, AxisSpec& a) {
  cmd->add_option("--x-min", a.min, "grid start (default: box bound)");
  cmd->add_option("--x-max", a.max, "grid end (default: box bound)");
  cmd->add_option("--x-count", a.count, "grid points")->capture_default_str();
  cmd->add_option("--axis", a.axis, "x coordinate swept by the grid")
      ->capture_default_str();
  cmd->add_flag("--tie", a.tie, "sweep all x coordinates together (x = base + t*ones)");
  cmd->add_option("--x-base", a.base, "CSV base point (default zeros)");
}

void add_y_axis_flags(CLI::App* cmd, AxisSpec& a) {
  cmd->add_option("--y-min", a.min, "y grid start (default: box bound)");
  cmd->add_option("--y-max", a.max, "y grid end (default: box bound)");
  cmd->add_option("--y-count", a.count, "y grid points")->capture_default_str();
  cmd->add_option("--y-axis", a.axis, "y coordinate swept by the grid")
      ->capture_default_str();
  cmd->add_option("--y-base", a.base, "CSV base point (default zeros)");
}

ojson jgrid_axis(const GridPoints& g) {
  ojson out;
  out["desc"] = g.desc;
  out["count"] = g.param.size();
  out["values"] = ojson::array();
  for (double t : g.param) out["values"].push_back(t);
  return out;
}

// ---------------------------------------------------------------------------
// Point selection: a named candidate from the problem file or explicit blocks.

struct PointArgs {
  std::string name, xs, ys, us, ds;
  double u0 = std::numeric_limits<double>::quiet_NaN();  // NaN = not given
};

void add_point_flags(CLI::App* cmd, PointArgs& p) {
  cmd->add_option("--point", p.name, "named candidate from the problem file");
  cmd->add_option("--x", p.xs, "CSV x block");
  cmd->add_option("--y", p.ys, "CSV y block");
  cmd->add_option("--u", p.us, "CSV multiplier block");
  cmd->add_option("--d", p.ds, "CSV direction block");
  cmd->add_option("--u0", p.u0, "objective weight (Fritz John layouts)");
}

CandidatePoint resolve_point(const BilevelProblem& prob, const PointArgs& p) {
  if (!p.name.empty()) {
    const CandidatePoint* c = prob.find_candidate(p.name);
    if (!c) throw ValidationError("problem has no candidate named '" + p.name + "'");
    return *c;
  }
  if (p.xs.empty() || p.ys.empty())
    throw ValidationError("give --point NAME or both --x and --y");
  CandidatePoint out;
  out.name = "cli";
  out.x = parse_vec(p.xs, "x");
  out.y = parse_vec(p.ys, "y");
  if (!p.us.empty()) out.u = parse_vec(p.us, "u");
  if (!p.ds.empty()) out.d = parse_vec(p.ds, "d");
  if (!std::isnan(p.u0)) out.u0 = p.u0;
  return out;
}

ojson jpoint(const CandidatePoint& c) {
  ojson out;
  out["name"] = c.name;
  out["x"] = jvec(c.x);
  out["y"] = jvec(c.y);
  if (c.u.size()) out["u"] = jvec(c.u);
  if (c.d.size()) out["d"] = jvec(c.d);
  if (c.u0) out["u0"] = *c.u0;
  return out;
}

// ---------------------------------------------------------------------------
// Library record serialization

ojson jlower(const LowerSolution& sol) {
  ojson out;
  out["x"] = jvec(sol.x);
  out["feasible_found"] = sol.feasible_found;
  out["value"] = jnum(sol.value);
  out["boundary_touching"] = sol.boundary_touching;
  ojson mins = ojson::array();
  for (const auto& y : sol.minimizers) mins.push_back(jvec(y));
  out["minimizers"] = std::move(mins);
  return out;
}

const char* soc_kind_str(SocKind k) {
  switch (k) {
    case SocKind::Unconstrained: return "UNCONSTRAINED";
    case SocKind::Basic: return "BASIC";
    case SocKind::Weak: return "WEAK";
    case SocKind::Strong: return "STRONG";
    case SocKind::FritzJohn: return "FRITZ_JOHN";
  }
  return "?";
}

const char* soc_status_str(SocStatus s) {
  switch (s) {
    case SocStatus::Yes: return "YES";
    case SocStatus::No: return "NO";
    case SocStatus::Undetermined: return "UNDETERMINED";
    case SocStatus::NotApplicable: return "NOT_APPLICABLE";
  }
  return "?";
}

ojson jsoc(const SocVerdict& v) {
  ojson out;
  out["kind"] = soc_kind_str(v.kind);
  out["status"] = soc_status_str(v.status);
  out["exact"] = v.exact;
  out["min_curvature"] = jnum(v.min_curvature);
  if (v.witness_u.size()) {
    out["witness_u"] = jvec(v.witness_u);
    out["witness_u0"] = v.witness_u0;
  }
  if (v.witness_d.size()) out["witness_d"] = jvec(v.witness_d);
  if (!v.note.empty()) out["note"] = v.note;
  return out;
}

ojson jwitness(const CalmnessWitness& w) {
  ojson out;
  out["mu"] = w.mu;
  out["radius"] = jnum(w.radius);
  out["drop"] = w.drop;
  out["perturbation"] = w.perturbation;
  out["from_seed"] = w.from_seed;
  out["point"] = jvec(w.point);
  return out;
}

ojson jcalmness(const CalmnessVerdict& v) {
  ojson out;
  out["kind"] = calmness_kind_name(v.kind);
  out["status"] = calmness_status_name(v.status);
  out["mu_tested"] = v.mu_tested;
  ojson ws = ojson::array();
  for (const auto& w : v.witnesses) ws.push_back(jwitness(w));
  out["witnesses"] = std::move(ws);
  ojson cs = ojson::array();
  for (const auto& w : v.canonical) cs.push_back(jwitness(w));
  out["canonical"] = std::move(cs);
  out["meta"] = ojson{{"radii", v.meta.radii},
                      {"budget", v.meta.budget},
                      {"evals", v.meta.evals},
                      {"notes", v.meta.notes}};
  return out;
}

ojson jcert(const StationarityCertificate& cert, const GenericCombinedProgram* gcp) {
  ojson out;
  out["kind"] = stationarity_kind_name(cert.kind);
  out["status"] = stationarity_status_name(cert.status);
  out["mu"] = cert.mu;
  out["xi"] = jvec(cert.xi);
  out["lambda_g"] = jvec(cert.lambda_g);
  out["lambda_u"] = jvec(cert.lambda_u);
  if (gcp && cert.lambda_H.size() == static_cast<int>(gcp->rows.size())) {
    ojson rows = ojson::array();
    for (int r = 0; r < cert.lambda_H.size(); ++r)
      rows.push_back(ojson{{"row", gcp->rows[static_cast<std::size_t>(r)].label},
                           {"value", cert.lambda_H(r)}});
    out["lambda_H"] = std::move(rows);
  } else {
    out["lambda_H"] = jvec(cert.lambda_H);
  }
  if (cert.Omega.size()) out["Omega"] = jmat(cert.Omega);
  if (cert.beta.size()) out["beta"] = jvec(cert.beta);
  out["I_g"] = cert.I_g;
  out["I_u"] = cert.I_u;
  out["I0"] = cert.I0;
  out["branch"] = cert.branch;
  out["residual"] = jnum(cert.residual);
  out["notes"] = cert.notes;
  return out;
}

void cert_table_lines(const StationarityCertificate& cert,
                      const GenericCombinedProgram* gcp,
                      std::vector<std::string>& table) {
  table.push_back(std::string("status: ") + stationarity_status_name(cert.status));
  table.push_back("residual: " + gnum(cert.residual));
  if (cert.status == StationarityStatus::Holds) {
    table.push_back("mu: " + gnum(cert.mu));
    if (cert.xi.size()) table.push_back("xi: " + tuple_str(cert.xi));
    if (cert.lambda_g.size())
      table.push_back("lambda_g: " + tuple_str(cert.lambda_g));
    if (cert.lambda_u.size())
      table.push_back("lambda_u: " + tuple_str(cert.lambda_u));
    for (int r = 0; r < cert.lambda_H.size(); ++r) {
      const std::string label =
          gcp && r < static_cast<int>(gcp->rows.size())
              ? gcp->rows[static_cast<std::size_t>(r)].label
              : "row " + std::to_string(r);
      table.push_back("lambda_H[" + label + "]: " + gnum(cert.lambda_H(r)));
    }
    if (cert.Omega.size()) {
      table.push_back("Omega:");
      for (int i = 0; i < cert.Omega.rows(); ++i)
        table.push_back("  " + tuple_str(cert.Omega.row(i).transpose()));
    }
    if (cert.beta.size()) table.push_back("beta: " + tuple_str(cert.beta));
  }
  for (const auto& n : cert.notes) table.push_back("note: " + n);
}

// ---------------------------------------------------------------------------
// Sigma-set indicator matrices

std::vector<std::vector<int>> sigma_matrix(const ValueOracle& oracle, SigmaKind kind,
                                           const GridPoints& xg, const GridPoints& yg,
                                           const SocOptions& so, double gph_tol) {
  std::vector<std::vector<int>> M(xg.pts.size(), std::vector<int>(yg.pts.size(), 0));
  for (std::size_t i = 0; i < xg.pts.size(); ++i)
    for (std::size_t j = 0; j < yg.pts.size(); ++j)
      M[i][j] =
          sigma_membership(oracle, kind, xg.pts[i], yg.pts[j], so, gph_tol) ? 1 : 0;
  return M;
}

int count_members(const std::vector<std::vector<int>>& M) {
  int n = 0;
  for (const auto& row : M)
    for (int v : row) n += v;
  return n;
}

int count_mismatches(const std::vector<std::vector<int>>& A,
                     const std::vector<std::vector<int>>& B) {
  int n = 0;
  for (std::size_t i = 0; i < A.size(); ++i)
    for (std::size_t j = 0; j < A[i].size(); ++j) n += A[i][j] != B[i][j];
  return n;
}

ojson jindicator(const std::vector<std::vector<int>>& M) {
  ojson rows = ojson::array();
  for (const auto& row : M) rows.push_back(row);
  return rows;
}

void csv_lines(const GridPoints& xg, const GridPoints& yg,
               const std::vector<std::vector<int>>& M,
               std::vector<std::string>& table) {
  std::string header = "x\\y";
  for (double s : yg.param) header += "," + fnum(s);
  table.push_back(std::move(header));
  for (std::size_t i = 0; i < xg.param.size(); ++i) {
    std::string line = fnum(xg.param[i]);
    for (int v : M[i]) line += "," + std::to_string(v);
    table.push_back(std::move(line));
  }
}

// ---------------------------------------------------------------------------
// lower-solve

void register_lower_solve(CLI::App& app) {
  auto args = std::make_shared<Common>();
  auto xs = std::make_shared<std::string>();
  auto grid = std::make_shared<int>(-1);
  CLI::App* cmd = app.add_subcommand(
      "lower-solve", "globally solve the lower level at a fixed x");
  add_common(cmd, *args, true);
  cmd->add_option("--x", *xs, "CSV upper-level point")->required();
  cmd->add_option("--grid", *grid, "grid points per y dimension (-1 = auto)")
      ->capture_default_str();
  cmd->callback([args, xs, grid] {
    const ojson inputs{{"problem", args->problem}, {"x", *xs}};
    ojson config{{"grid_per_dim", *grid}};
    run_guarded(*args, "lower-solve", inputs, config,
                [&](ojson& results, std::vector<std::string>& warnings,
                    std::vector<std::string>& table) {
                  const BilevelProblem prob = load_any(args->problem);
                  const VectorXd x = parse_vec(*xs, "x");
                  LowerOptions lo;
                  lo.grid_per_dim = *grid;
                  lo.tol = args->tol;
                  const LowerSolution sol = solve_lower(prob, x, lo);
                  results = jlower(sol);
                  for (const auto& w : sol.warnings) warnings.push_back(w);
                  table.push_back("x: " + tuple_str(x));
                  table.push_back(std::string("feasible: ") +
                                  (sol.feasible_found ? "yes" : "no"));
                  table.push_back("value: " + fnum(sol.value));
                  table.push_back("minimizers:");
                  for (const auto& y : sol.minimizers)
                    table.push_back("  " + tuple_str(y));
                });
  });
}

// ---------------------------------------------------------------------------
// value-fn

void register_value_fn(CLI::App& app) {
  auto args = std::make_shared<Common>();
  auto axis = std::make_shared<AxisSpec>();
  auto grid = std::make_shared<int>(-1);
  CLI::App* cmd =
      app.add_subcommand("value-fn", "tabulate the lower-level value function");
  add_common(cmd, *args, true);
  add_x_axis_flags(cmd, *axis);
  cmd->add_option("--grid", *grid, "lower-solver grid points per y dimension")
      ->capture_default_str();
  cmd->callback([args, axis, grid] {
    const ojson inputs{{"problem", args->problem}};
    ojson config{{"grid_per_dim", *grid},
                 {"x_count", axis->count},
                 {"tie", axis->tie},
                 {"axis", axis->axis}};
    run_guarded(
        *args, "value-fn", inputs, config,
        [&](ojson& results, std::vector<std::string>& warnings,
            std::vector<std::string>& table) {
          const BilevelProblem prob = load_any(args->problem);
          LowerOptions lo;
          lo.grid_per_dim = *grid;
          lo.tol = args->tol;
          const ValueOracle oracle(prob, lo);
          const GridPoints xg = make_grid(prob.x_box, *axis, "x");
          results["axis"] = jgrid_axis(xg);
          ojson rows = ojson::array();
          int boundary = 0;
          table.push_back("t,V");
          for (std::size_t i = 0; i < xg.pts.size(); ++i) {
            const LowerSolution& sol = oracle.solution(xg.pts[i]);
            boundary += sol.boundary_touching ? 1 : 0;
            ojson row;
            row["t"] = xg.param[i];
            row["x"] = jvec(xg.pts[i]);
            row["V"] = jnum(sol.value);
            ojson mins = ojson::array();
            for (const auto& y : sol.minimizers) mins.push_back(jvec(y));
            row["minimizers"] = std::move(mins);
            rows.push_back(std::move(row));
            table.push_back(fnum(xg.param[i]) + "," + fnum(sol.value));
          }
          results["points"] = std::move(rows);
          if (boundary)
            warnings.push_back(std::to_string(boundary) + " of " +
                               std::to_string(xg.pts.size()) +
                               " grid points have boundary-touching minimizers");
        });
  });
}

// ---------------------------------------------------------------------------
// sigma

void register_sigma(CLI::App& app) {
  auto args = std::make_shared<Common>();
  auto kind = std::make_shared<std::string>();
  auto xaxis = std::make_shared<AxisSpec>();
  auto yaxis = std::make_shared<AxisSpec>();
  auto grid = std::make_shared<int>(-1);
  auto gph_tol = std::make_shared<double>(1e-6);
  CLI::App* cmd = app.add_subcommand(
      "sigma", "membership indicator grid of a stationarity set in (x, y)");
  add_common(cmd, *args, true);
  cmd->add_option("--kind", *kind, "KKT, BSOC, WSOC, SSOC, FJSOC, or GPHS")
      ->required();
  add_x_axis_flags(cmd, *xaxis);
  add_y_axis_flags(cmd, *yaxis);
  cmd->add_option("--grid", *grid, "lower-solver grid points per y dimension")
      ->capture_default_str();
  cmd->add_option("--gph-tol", *gph_tol,
                  "distance tolerance for solution-map membership")
      ->capture_default_str();
  cmd->callback([args, kind, xaxis, yaxis, grid, gph_tol] {
    const ojson inputs{{"problem", args->problem}, {"kind", *kind}};
    ojson config{{"grid_per_dim", *grid},
                 {"x_count", xaxis->count},
                 {"y_count", yaxis->count},
                 {"gph_tol", *gph_tol}};
    run_guarded(*args, "sigma", inputs, config,
                [&](ojson& results, std::vector<std::string>&,
                    std::vector<std::string>& table) {
                  const BilevelProblem prob = load_any(args->problem);
                  const SigmaKind sk = sigma_kind_from_name(*kind);
                  LowerOptions lo;
                  lo.grid_per_dim = *grid;
                  lo.tol = args->tol;
                  const ValueOracle oracle(prob, lo);
                  SocOptions so;
                  so.seed = args->seed;
                  so.tol = args->tol;
                  const GridPoints xg = make_grid(prob.x_box, *xaxis, "x");
                  const GridPoints yg = make_grid(prob.y_box, *yaxis, "y");
                  const auto M = sigma_matrix(oracle, sk, xg, yg, so, *gph_tol);
                  results["kind"] = sigma_kind_name(sk);
                  results["x_axis"] = jgrid_axis(xg);
                  results["y_axis"] = jgrid_axis(yg);
                  results["members"] = count_members(M);
                  results["matrix"] = jindicator(M);
                  csv_lines(xg, yg, M, table);
                });
  });
}

// ---------------------------------------------------------------------------
// check-soc

SocKind parse_soc_kind(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (s == "unconstrained") return SocKind::Unconstrained;
  if (s == "basic") return SocKind::Basic;
  if (s == "weak") return SocKind::Weak;
  if (s == "strong") return SocKind::Strong;
  if (s == "fj" || s == "fritzjohn" || s == "fritz-john") return SocKind::FritzJohn;
  throw ValidationError("unknown second-order condition '" + s +
                        "' (known: unconstrained, basic, weak, strong, fj)");
}

void register_check_soc(CLI::App& app) {
  auto args = std::make_shared<Common>();
  auto point = std::make_shared<PointArgs>();
  auto kind = std::make_shared<std::string>("weak");
  auto slack = std::make_shared<bool>(false);
  auto dirs = std::make_shared<int>(257);
  CLI::App* cmd = app.add_subcommand(
      "check-soc", "second-order optimality conditions at a lower-level point");
  add_common(cmd, *args, true);
  add_point_flags(cmd, *point);
  cmd->add_option("--kind", *kind, "unconstrained, basic, weak, strong, or fj")
      ->capture_default_str();
  cmd->add_flag("--slack", *slack,
                "also run the squared-slack lift / check / project round trip");
  cmd->add_option("--directions", *dirs, "direction budget for sampled checks")
      ->capture_default_str();
  cmd->callback([args, point, kind, slack, dirs] {
    const ojson inputs{{"problem", args->problem},
                       {"kind", *kind},
                       {"point", point->name.empty() ? "explicit" : point->name}};
    ojson config{{"directions", *dirs}, {"slack", *slack}};
    run_guarded(
        *args, "check-soc", inputs, config,
        [&](ojson& results, std::vector<std::string>&,
            std::vector<std::string>& table) {
          const BilevelProblem prob = load_any(args->problem);
          const CandidatePoint c = resolve_point(prob, *point);
          SocOptions so;
          so.seed = args->seed;
          so.tol = args->tol;
          so.n_directions = *dirs;
          const SocKind sk = parse_soc_kind(*kind);
          SocVerdict v;
          switch (sk) {
            case SocKind::Unconstrained:
              v = check_unconstrained_soc(prob, c.x, c.y, so);
              break;
            case SocKind::Basic: v = check_bsoc(prob, c.x, c.y, so); break;
            case SocKind::Weak: v = check_wsoc(prob, c.x, c.y, so); break;
            case SocKind::Strong: v = check_ssoc(prob, c.x, c.y, so); break;
            case SocKind::FritzJohn: v = check_fjsoc(prob, c.x, c.y, so); break;
          }
          results["point"] = jpoint(c);
          results["verdict"] = jsoc(v);
          table.push_back(std::string("kind: ") + soc_kind_str(v.kind));
          table.push_back(std::string("status: ") + soc_status_str(v.status) +
                          (v.exact ? " (exact)" : " (sampled)"));
          table.push_back("min curvature: " + gnum(v.min_curvature));
          if (!v.note.empty()) table.push_back("note: " + v.note);
          if (*slack) {
            VectorXd u = c.u;
            if (u.size() != prob.p)
              throw ValidationError(
                  "slack round trip needs a multiplier block of length " +
                  std::to_string(prob.p) + " (give --u or a candidate with one)");
            const SlackTriple lifted = slack_lift(prob, c.x, c.y, u, args->tol);
            const SlackSocResult soc =
                check_slack_soc(prob, c.x, lifted.y, lifted.z, lifted.u, args->tol);
            ojson sj;
            sj["z"] = jvec(lifted.z);
            sj["second_order_holds"] = soc.holds;
            sj["min_curvature"] = jnum(soc.min_curvature);
            table.push_back(std::string("slack lift: z = ") + tuple_str(lifted.z));
            table.push_back(std::string("slack second order: ") +
                            (soc.holds ? "holds" : "fails") + " (min curvature " +
                            gnum(soc.min_curvature) + ")");
            if (soc.holds) {
              const SlackProjection proj =
                  slack_project(prob, c.x, lifted.y, lifted.z, lifted.u, so);
              sj["projected_u"] = jvec(proj.u);
              sj["projected_weak"] = jsoc(proj.weak);
              table.push_back(std::string("projected weak verdict: ") +
                              soc_status_str(proj.weak.status));
            }
            results["slack"] = std::move(sj);
          }
        });
  });
}

// ---------------------------------------------------------------------------
// calmness

void register_calmness(CLI::App& app) {
  auto args = std::make_shared<Common>();
  auto point = std::make_shared<PointArgs>();
  auto reform = std::make_shared<std::string>("CP");
  auto mu = std::make_shared<std::string>();
  auto radii = std::make_shared<std::string>();
  auto budget = std::make_shared<int>(10000);
  auto clarke = std::make_shared<bool>(false);
  auto mu_max = std::make_shared<double>(100.0);
  auto no_seeds = std::make_shared<bool>(false);
  auto grid = std::make_shared<int>(-1);
  CLI::App* cmd = app.add_subcommand(
      "calmness", "one-sided partial/Clarke calmness test of a reformulation");
  add_common(cmd, *args, true);
  add_point_flags(cmd, *point);
  cmd->add_option("--reform", *reform, "reformulation kind")->capture_default_str();
  cmd->add_option("--mu", *mu, "CSV penalty weights (default library list)");
  cmd->add_option("--radii", *radii,
                  "CSV locality radii (Clarke: perturbation budgets)");
  cmd->add_option("--budget", *budget, "trial evaluations per (mu, radius) cell")
      ->capture_default_str();
  cmd->add_flag("--clarke", *clarke, "test Clarke calmness instead of partial");
  cmd->add_option("--mu-max", *mu_max, "penalty cap for the Clarke test")
      ->capture_default_str();
  cmd->add_flag("--no-seeds", *no_seeds,
                "disable closed-form witness seeds for bundled problems");
  cmd->add_option("--grid", *grid, "lower-solver grid points per y dimension")
      ->capture_default_str();
  cmd->callback([args, point, reform, mu, radii, budget, clarke, mu_max, no_seeds,
                 grid] {
    const ojson inputs{{"problem", args->problem},
                       {"reform", *reform},
                       {"point", point->name.empty() ? "explicit" : point->name},
                       {"clarke", *clarke}};
    ojson config{{"budget", *budget}, {"grid_per_dim", *grid}};
    run_guarded(
        *args, "calmness", inputs, config,
        [&](ojson& results, std::vector<std::string>& warnings,
            std::vector<std::string>& table) {
          const BilevelProblem prob = load_any(args->problem);
          const ReformKind kind = reform_kind_from_name(*reform);
          LowerOptions lo;
          lo.grid_per_dim = *grid;
          lo.tol = args->tol;
          const GenericCombinedProgram gcp = is_membership_kind(kind)
                                                 ? build_membership(prob, kind, lo)
                                                 : build(prob, kind, lo);
          const CandidatePoint c = resolve_point(prob, *point);
          const std::string id = normalize_problem_id(args->problem);
          CalmnessVerdict v;
          if (*clarke) {
            ClarkeOptions co;
            if (!radii->empty()) co.eps_list = parse_list(*radii, "radii");
            co.mu_max = *mu_max;
            co.budget = *budget;
            co.tol_drop = args->tol.drop;
            co.rng_seed = static_cast<unsigned>(args->seed);
            co.tol = args->tol;
            if (!*no_seeds && !id.empty()) co.seeds = analytic_seed_fn(gcp, id);
            v = test_clarke_calmness(gcp, c, co);
          } else {
            CalmnessOptions co;
            if (!mu->empty()) co.mu_list = parse_list(*mu, "mu");
            if (!radii->empty()) co.radii = parse_list(*radii, "radii");
            co.budget = *budget;
            co.tol_drop = args->tol.drop;
            co.rng_seed = static_cast<unsigned>(args->seed);
            co.tol = args->tol;
            if (!*no_seeds && !id.empty()) co.seeds = analytic_seed_fn(gcp, id);
            v = test_partial_calmness(gcp, c, co);
          }
          results["program"] = reform_kind_name(kind);
          results["candidate"] = jpoint(c);
          results["verdict"] = jcalmness(v);
          for (const auto& n : v.meta.notes) warnings.push_back(n);
          table.push_back(std::string("kind: ") + calmness_kind_name(v.kind));
          table.push_back(std::string("status: ") + calmness_status_name(v.status));
          std::string mus = "mu tested:";
          for (double m : v.mu_tested) mus += " " + gnum(m);
          table.push_back(std::move(mus));
          table.push_back("witnesses: " + std::to_string(v.witnesses.size()));
          for (const auto& w : v.witnesses)
            table.push_back("  mu=" + gnum(w.mu) + " r=" + gnum(w.radius) +
                            " drop=" + gnum(w.drop) +
                            (w.from_seed ? " (seed)" : ""));
          for (const auto& w : v.canonical)
            table.push_back("  canonical mu=" + gnum(w.mu) +
                            " drop=" + gnum(w.drop) + " at " +
                            tuple_str(w.point, 4));
        });
  });
}

// ---------------------------------------------------------------------------
// stationarity

void register_stationarity(CLI::App& app) {
  auto args = std::make_shared<Common>();
  auto point = std::make_shared<PointArgs>();
  auto reform = std::make_shared<std::string>("CP");
  auto check = std::make_shared<std::string>();
  auto grid = std::make_shared<int>(-1);
  CLI::App* cmd = app.add_subcommand(
      "stationarity", "stationarity certificates and nondegeneracy tests");
  add_common(cmd, *args, true);
  add_point_flags(cmd, *point);
  cmd->add_option("--reform", *reform, "reformulation kind (ignored for cpsoc)")
      ->capture_default_str();
  cmd->add_option("--check", *check, "m, s, licq, or cpsoc")->required();
  cmd->add_option("--grid", *grid, "lower-solver grid points per y dimension")
      ->capture_default_str();
  cmd->callback([args, point, reform, check, grid] {
    const ojson inputs{{"problem", args->problem},
                       {"reform", *reform},
                       {"check", *check},
                       {"point", point->name.empty() ? "explicit" : point->name}};
    ojson config{{"grid_per_dim", *grid}};
    run_guarded(
        *args, "stationarity", inputs, config,
        [&](ojson& results, std::vector<std::string>&,
            std::vector<std::string>& table) {
          const BilevelProblem prob = load_any(args->problem);
          const CandidatePoint c = resolve_point(prob, *point);
          std::string what = *check;
          std::transform(what.begin(), what.end(), what.begin(), [](unsigned char ch) {
            return static_cast<char>(std::tolower(ch));
          });
          LowerOptions lo;
          lo.grid_per_dim = *grid;
          lo.tol = args->tol;
          results["candidate"] = jpoint(c);
          table.push_back("check: " + what);
          if (what == "cpsoc") {
            const StationarityCertificate cert =
                check_cpsoc_stationarity(prob, c.x, c.y, lo, args->tol);
            results["certificate"] = jcert(cert, nullptr);
            cert_table_lines(cert, nullptr, table);
            return;
          }
          const ReformKind kind = reform_kind_from_name(*reform);
          const GenericCombinedProgram gcp = is_membership_kind(kind)
                                                 ? build_membership(prob, kind, lo)
                                                 : build(prob, kind, lo);
          const VectorXd w = gcp.pack(c);
          results["program"] = reform_kind_name(kind);
          if (what == "licq") {
            const bool ok = check_mpec_licq(gcp, w, args->tol);
            results["licq"] = ok;
            table.push_back(std::string("LICQ: ") + (ok ? "true" : "false"));
            return;
          }
          StationarityCertificate cert;
          if (what == "m")
            cert = check_m_stationary(gcp, w, args->tol);
          else if (what == "s")
            cert = check_s_stationary(gcp, w, args->tol);
          else
            throw ValidationError("unknown check '" + *check +
                                  "' (known: m, s, licq, cpsoc)");
          results["certificate"] = jcert(cert, &gcp);
          cert_table_lines(cert, &gcp, table);
        });
  });
}

// ---------------------------------------------------------------------------
// table1: per-example verdicts for the value-gap removability of five
// reformulations, combining grid set-equality with one-sided searches.

struct Table1Cell {
  std::string verdict;
  ojson detail;
};

Table1Cell calmness_cell(const GenericCombinedProgram& gcp, const CandidatePoint& c,
                         const CalmnessOptions& co) {
  const CalmnessVerdict v = test_partial_calmness(gcp, c, co);
  Table1Cell cell;
  cell.verdict = v.status == CalmnessStatus::Violated ? "No" : "Yes";
  cell.detail = ojson{{"program", reform_kind_name(gcp.kind)},
                      {"search_status", calmness_status_name(v.status)},
                      {"witnesses", v.witnesses.size()},
                      {"evals", v.meta.evals}};
  if (v.status != CalmnessStatus::Violated)
    cell.detail["note"] =
        "the search is one-sided: NOT_REFUTED reports only that no local "
        "improvement was found within the budget";
  return cell;
}

Table1Cell removability_cell(const GenericCombinedProgram& gcp,
                             const CandidatePoint& c, const CalmnessOptions& base,
                             int grid_mismatches, const char* set_name) {
  CalmnessOptions ro = base;
  ro.mu_list = {0.0};
  ro.seeds = SeedFn();
  const CalmnessVerdict v = test_partial_calmness(gcp, c, ro);
  Table1Cell cell;
  const bool equal = grid_mismatches == 0;
  const bool not_refuted = v.status == CalmnessStatus::NotRefuted;
  cell.verdict = (equal && not_refuted) ? "Yes" : "No";
  cell.detail = ojson{{"program", reform_kind_name(gcp.kind)},
                      {"sigma_set", set_name},
                      {"grid_mismatches", grid_mismatches},
                      {"search_status", calmness_status_name(v.status)},
                      {"evals", v.meta.evals},
                      {"note",
                       "Yes = the indicator grid of the set equals the "
                       "solution-map graph and the mu = 0 search found no local "
                       "improvement; the positive direction is one-sided"}};
  return cell;
}

void register_table1(CLI::App& app) {
  auto args = std::make_shared<Common>();
  auto grid = std::make_shared<int>(101);
  auto budget = std::make_shared<int>(4000);
  auto mu = std::make_shared<std::string>("0,4,40,100");
  auto gph_tol = std::make_shared<double>(1e-6);
  CLI::App* cmd = app.add_subcommand(
      "table1",
      "verdict matrix for the bundled examples across five reformulations");
  add_common(cmd, *args, false);
  cmd->add_option("--grid", *grid, "indicator grid points per axis")
      ->capture_default_str();
  cmd->add_option("--budget", *budget, "search budget per (mu, radius) cell")
      ->capture_default_str();
  cmd->add_option("--mu", *mu, "CSV penalty weights for the first-order column")
      ->capture_default_str();
  cmd->add_option("--gph-tol", *gph_tol,
                  "distance tolerance for solution-map membership")
      ->capture_default_str();
  cmd->callback([args, grid, budget, mu, gph_tol] {
    const ojson inputs = ojson::object();
    ojson config{{"grid", *grid},
                 {"budget", *budget},
                 {"mu", *mu},
                 {"gph_tol", *gph_tol},
                 {"direction_block",
                  "the relaxed second-order column packs the candidate's "
                  "direction block, defaulting to all-ones when absent"}};
    run_guarded(
        *args, "table1", inputs, config,
        [&](ojson& results, std::vector<std::string>&,
            std::vector<std::string>& table) {
          const char* columns[] = {"CP", "SOCP-B", "SOCP-S", "SOCCP", "WSOCP"};
          ojson rows = ojson::array();
          std::vector<std::array<std::string, 5>> cells_text;
          for (const std::string id : {"example_4_6", "example_4_8"}) {
            const BilevelProblem prob = load_bundled(id);
            LowerOptions lo;
            lo.tol = args->tol;
            const ValueOracle oracle(prob, lo);
            SocOptions so;
            so.seed = args->seed;
            so.tol = args->tol;

            AxisSpec xs;
            xs.count = *grid;
            if (id == "example_4_6") {
              xs.tie = true;
              xs.min = -0.5;
              xs.max = 0.5;
            }
            AxisSpec ys;
            ys.count = *grid;
            const GridPoints xg = make_grid(prob.x_box, xs, "x");
            const GridPoints yg = make_grid(prob.y_box, ys, "y");

            const auto gph = sigma_matrix(oracle, SigmaKind::GPHS, xg, yg, so, *gph_tol);
            const auto bsoc = sigma_matrix(oracle, SigmaKind::BSOC, xg, yg, so, *gph_tol);
            const auto ssoc = sigma_matrix(oracle, SigmaKind::SSOC, xg, yg, so, *gph_tol);
            const auto wsoc = sigma_matrix(oracle, SigmaKind::WSOC, xg, yg, so, *gph_tol);
            const int mis_bsoc = count_mismatches(bsoc, gph);
            const int mis_ssoc = count_mismatches(ssoc, gph);
            const int mis_wsoc = count_mismatches(wsoc, gph);

            const CandidatePoint* cand = prob.find_candidate("origin");
            if (!cand) throw ValidationError(id + " has no 'origin' candidate");

            CalmnessOptions co;
            co.mu_list = parse_list(*mu, "mu");
            co.budget = *budget;
            co.tol_drop = args->tol.drop;
            co.rng_seed = static_cast<unsigned>(args->seed);
            co.tol = args->tol;

            const GenericCombinedProgram cp = build(prob, ReformKind::CP, lo);
            CalmnessOptions cp_opt = co;
            cp_opt.seeds = analytic_seed_fn(cp, id);
            const Table1Cell c_cp = calmness_cell(cp, *cand, cp_opt);

            const Table1Cell c_b = removability_cell(
                build_membership(prob, ReformKind::SOCP_B, lo), *cand, co,
                mis_bsoc, "BSOC");
            const Table1Cell c_s = removability_cell(
                build_membership(prob, ReformKind::SOCP_S, lo), *cand, co,
                mis_ssoc, "SSOC");

            CandidatePoint with_d = *cand;
            if (with_d.d.size() == 0) with_d.d = VectorXd::Ones(prob.m);
            const Table1Cell c_rb =
                removability_cell(build(prob, ReformKind::R_BSOCP, lo), with_d, co,
                                  mis_bsoc, "BSOC");

            const Table1Cell c_w = removability_cell(
                build(prob, ReformKind::WSOCP, lo), *cand, co, mis_wsoc, "WSOC");

            ojson row;
            row["example"] = id;
            row["cells"] = ojson{{"CP", c_cp.detail},
                                 {"SOCP-B", c_b.detail},
                                 {"SOCP-S", c_s.detail},
                                 {"SOCCP", c_rb.detail},
                                 {"WSOCP", c_w.detail}};
            row["verdicts"] = ojson{{"CP", c_cp.verdict},
                                    {"SOCP-B", c_b.verdict},
                                    {"SOCP-S", c_s.verdict},
                                    {"SOCCP", c_rb.verdict},
                                    {"WSOCP", c_w.verdict}};
            rows.push_back(std::move(row));
            cells_text.push_back({c_cp.verdict, c_b.verdict, c_s.verdict,
                                  c_rb.verdict, c_w.verdict});
          }
          results["columns"] = ojson::array({"CP", "SOCP-B", "SOCP-S", "SOCCP", "WSOCP"});
          results["rows"] = std::move(rows);

          char line[160];
          std::snprintf(line, sizeof line, "%-13s %-5s %-7s %-7s %-7s %-5s",
                        "problem", columns[0], columns[1], columns[2], columns[3],
                        columns[4]);
          table.push_back(line);
          const char* ids[] = {"example_4_6", "example_4_8"};
          for (std::size_t r = 0; r < cells_text.size(); ++r) {
            std::snprintf(line, sizeof line, "%-13s %-5s %-7s %-7s %-7s %-5s",
                          ids[r], cells_text[r][0].c_str(), cells_text[r][1].c_str(),
                          cells_text[r][2].c_str(), cells_text[r][3].c_str(),
                          cells_text[r][4].c_str());
            table.push_back(line);
          }
        });
  });
}

// ---------------------------------------------------------------------------
// example: full walkthrough of one bundled problem

void register_example(CLI::App& app) {
  auto args = std::make_shared<Common>();
  auto id_arg = std::make_shared<std::string>();
  auto grid = std::make_shared<int>(41);
  auto budget = std::make_shared<int>(4000);
  CLI::App* cmd = app.add_subcommand(
      "example", "full walkthrough of a bundled problem");
  add_common(cmd, *args, false);
  cmd->add_option("--id", *id_arg, "bundled problem id (example_3_1, 3.1, ...)")
      ->required();
  cmd->add_option("--grid", *grid, "grid points per axis")->capture_default_str();
  cmd->add_option("--budget", *budget, "calmness search budget per cell")
      ->capture_default_str();
  cmd->callback([args, id_arg, grid, budget] {
    const ojson inputs{{"id", *id_arg}};
    ojson config{{"grid", *grid}, {"budget", *budget}};
    run_guarded(
        *args, "example", inputs, config,
        [&](ojson& results, std::vector<std::string>& warnings,
            std::vector<std::string>& table) {
          const std::string id = normalize_problem_id(*id_arg);
          if (id.empty())
            throw ValidationError("unknown bundled problem '" + *id_arg + "'");
          const BilevelProblem prob = load_bundled(id);
          LowerOptions lo;
          lo.tol = args->tol;
          const ValueOracle oracle(prob, lo);
          results["id"] = id;
          table.push_back("== " + id + " walkthrough ==");

          // Value function against the recorded closed form.
          AxisSpec xs;
          xs.count = *grid;
          if (id == "example_4_6") {
            xs.tie = true;
            xs.min = -0.5;
            xs.max = 0.5;
          }
          const GridPoints xg = make_grid(prob.x_box, xs, "x");
          const AnalyticProblemData* ref = analytic_data(id);
          double max_err = 0.0;
          ojson vrows = ojson::array();
          for (std::size_t i = 0; i < xg.pts.size(); ++i) {
            const double v = oracle.value(xg.pts[i]);
            ojson row{{"t", xg.param[i]}, {"V", jnum(v)}};
            if (ref) {
              const double closed = ref->value_fn(xg.pts[i]);
              row["closed_form"] = closed;
              max_err = std::max(max_err, std::abs(v - closed));
            }
            vrows.push_back(std::move(row));
          }
          results["value_function"] =
              ojson{{"axis", jgrid_axis(xg)},
                    {"rows", std::move(vrows)},
                    {"max_abs_error", ref ? jnum(max_err) : ojson(nullptr)}};
          table.push_back("value function: " + std::to_string(xg.pts.size()) +
                          " points, max abs error vs closed form: " +
                          gnum(max_err));

          // Stationarity-set indicator grids.
          AxisSpec ys;
          ys.count = *grid;
          const GridPoints yg = make_grid(prob.y_box, ys, "y");
          SocOptions so;
          so.seed = args->seed;
          so.tol = args->tol;
          const SigmaKind kinds[] = {SigmaKind::GPHS, SigmaKind::KKT,
                                     SigmaKind::BSOC, SigmaKind::WSOC,
                                     SigmaKind::SSOC, SigmaKind::FJSOC};
          ojson sets = ojson::object();
          std::vector<std::vector<int>> gph;
          table.push_back("sigma sets on a " + std::to_string(xg.pts.size()) + "x" +
                          std::to_string(yg.pts.size()) + " grid:");
          for (SigmaKind sk : kinds) {
            auto M = sigma_matrix(oracle, sk, xg, yg, so, 1e-6);
            const int members = count_members(M);
            ojson entry{{"members", members}, {"matrix", jindicator(M)}};
            if (sk == SigmaKind::GPHS)
              gph = M;
            else
              entry["mismatches_vs_gphS"] = count_mismatches(M, gph);
            table.push_back(std::string("  ") + sigma_kind_name(sk) + ": " +
                            std::to_string(members) + " members" +
                            (sk == SigmaKind::GPHS
                                 ? ""
                                 : ", " + std::to_string(count_mismatches(M, gph)) +
                                       " mismatches vs GPHS"));
            sets[sigma_kind_name(sk)] = std::move(entry);
          }
          results["sigma_sets"] = std::move(sets);

          // Partial calmness of the first-order program at the candidate.
          const CandidatePoint* cand = prob.find_candidate("origin");
          if (!cand) throw ValidationError(id + " has no 'origin' candidate");
          const GenericCombinedProgram cp = build(prob, ReformKind::CP, lo);
          CalmnessOptions co;
          co.mu_list = {0.0, 4.0, 40.0, 100.0};
          co.budget = *budget;
          co.tol_drop = args->tol.drop;
          co.rng_seed = static_cast<unsigned>(args->seed);
          co.tol = args->tol;
          co.seeds = analytic_seed_fn(cp, id);
          const CalmnessVerdict calm = test_partial_calmness(cp, *cand, co);
          results["calmness"] = jcalmness(calm);
          table.push_back(std::string("partial calmness of CP at origin: ") +
                          calmness_status_name(calm.status) + " (" +
                          std::to_string(calm.witnesses.size()) + " witnesses)");

          // Stationarity certificates.
          ojson stat = ojson::object();
          const VectorXd w_cp = cp.pack(*cand);
          const StationarityCertificate m_cert = check_m_stationary(cp, w_cp, args->tol);
          stat["CP_M"] = jcert(m_cert, &cp);
          table.push_back(std::string("M-stationarity of CP at origin: ") +
                          stationarity_status_name(m_cert.status));
          if (id == "example_4_6") {
            const GenericCombinedProgram rb = build(prob, ReformKind::R_BSOCP, lo);
            const StationarityCertificate s_cert =
                check_s_stationary(rb, rb.pack(*cand), args->tol);
            stat["R-BSOCP_S"] = jcert(s_cert, &rb);
            table.push_back(
                std::string("S-stationarity of R-BSOCP at origin: ") +
                stationarity_status_name(s_cert.status));
          }
          if (prob.p == 0) {
            const StationarityCertificate so_cert =
                check_cpsoc_stationarity(prob, cand->x, cand->y, lo, args->tol);
            stat["CPSOC"] = jcert(so_cert, nullptr);
            table.push_back(std::string("second-order certificate at origin: ") +
                            stationarity_status_name(so_cert.status));
          }
          results["stationarity"] = std::move(stat);

          // Squared-slack round trip at each candidate (constrained examples).
          if (prob.p > 0 && id == "example_4_6") {
            ojson trips = ojson::array();
            for (const CandidatePoint& c : prob.candidates) {
              if (c.u.size() != prob.p) continue;
              const SlackTriple lifted = slack_lift(prob, c.x, c.y, c.u, args->tol);
              const SlackSocResult soc =
                  check_slack_soc(prob, c.x, lifted.y, lifted.z, lifted.u, args->tol);
              ojson trip{{"candidate", c.name},
                         {"z", jvec(lifted.z)},
                         {"second_order_holds", soc.holds}};
              std::string line = "slack round trip at " + c.name + ": lift ok, " +
                                 (soc.holds ? "second order holds" : "second order fails");
              if (soc.holds) {
                const SlackProjection proj =
                    slack_project(prob, c.x, lifted.y, lifted.z, lifted.u, so);
                trip["projected_u"] = jvec(proj.u);
                trip["projected_weak"] = jsoc(proj.weak);
                line += std::string(", projected weak verdict ") +
                        soc_status_str(proj.weak.status);
              }
              trips.push_back(std::move(trip));
              table.push_back(std::move(line));
            }
            results["slack_roundtrip"] = std::move(trips);
          }
          (void)warnings;
        });
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "bilevel toolkit: lower-level solves, single-level reformulations, "
      "calmness searches, and stationarity certificates"};
  app.require_subcommand(1);
  register_lower_solve(app);
  register_value_fn(app);
  register_sigma(app);
  register_check_soc(app);
  register_calmness(app);
  register_stationarity(app);
  register_table1(app);
  register_example(app);
  CLI11_PARSE(app, argc, argv);
  return g_exit;
}
