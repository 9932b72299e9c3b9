#include "bilevel/lower.hpp"

#include "bilevel/linprog.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>

namespace bilevel {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct LowerTapes {
  CompiledExpr f;
  std::vector<CompiledExpr> g;
};

LowerTapes make_tapes(const BilevelProblem& prob) {
  LowerTapes t;
  t.f = prob.f.compile();
  t.g.reserve(prob.g.size());
  for (const auto& gi : prob.g) t.g.push_back(gi.compile());
  return t;
}

// Evaluates f at (x,y) through the compiled tape; +inf when y is infeasible
// or the expression leaves its domain.
double tape_value(const LowerTapes& tapes, std::vector<double>& xy, int n,
                  const Eigen::VectorXd& y, double feas_tol) {
  for (int i = 0; i < y.size(); ++i) xy[n + i] = y(i);
  const int total = static_cast<int>(xy.size());
  try {
    for (const auto& gi : tapes.g) {
      if (gi.eval(xy.data(), total) > feas_tol) return kInf;
    }
    return tapes.f.eval(xy.data(), total);
  } catch (const DomainError&) {
    return kInf;
  }
}

void clip_into_box(const std::vector<Box>& box, Eigen::VectorXd& y) {
  for (int i = 0; i < y.size(); ++i) {
    y(i) = std::min(box[i].hi, std::max(box[i].lo, y(i)));
  }
}

double box_scale(const std::vector<Box>& box) {
  double s = 0.0;
  for (const auto& b : box) s = std::max(s, b.hi - b.lo);
  return s > 0.0 ? s : 1.0;
}

// Least-squares multiplier estimate for the rows in A: min_u ||grad + J^T u||.
Eigen::VectorXd lsq_multiplier(const Eigen::MatrixXd& J_active,
                               const Eigen::VectorXd& grad) {
  if (J_active.rows() == 0) return Eigen::VectorXd(0);
  return J_active.transpose()
      .colPivHouseholderQr()
      .solve(-grad)
      .eval();
}

// KKT residual used as the polishing merit: stationarity with the
// least-squares multiplier plus violation of the currently-active rows.
double polish_merit(const BilevelProblem& prob, const Eigen::VectorXd& x,
                    const Eigen::VectorXd& y, const std::vector<int>& active) {
  const Eigen::VectorXd grad = prob.grad_y_f(x, y);
  if (active.empty()) return grad.squaredNorm();
  const Eigen::MatrixXd J = prob.jac_y_g(x, y);
  Eigen::MatrixXd Ja(active.size(), prob.m);
  for (std::size_t k = 0; k < active.size(); ++k) Ja.row(k) = J.row(active[k]);
  const Eigen::VectorXd u = lsq_multiplier(Ja, grad);
  const Eigen::VectorXd gv = prob.eval_g_all(x, y);
  double r = (grad + Ja.transpose() * u).squaredNorm();
  for (int idx : active) r += gv(idx) * gv(idx);
  return r;
}

// Newton polish of a near-optimal start.  Unconstrained steps minimize f
// directly; once constraints go active the step solves the KKT system of the
// locally-active rows and the merit switches to the KKT residual.
Eigen::VectorXd polish_start(const BilevelProblem& prob, const LowerTapes& tapes,
                             std::vector<double>& xy, const Eigen::VectorXd& x,
                             Eigen::VectorXd y, const LowerOptions& opt) {
  const int m = prob.m;
  const double scale = box_scale(prob.y_box);
  const double act_tol = std::max(opt.tol.active, 1e-7);

  for (int iter = 0; iter < opt.polish_steps; ++iter) {
    Eigen::VectorXd gv = prob.eval_g_all(x, y);
    std::vector<int> active;
    for (int i = 0; i < prob.p; ++i) {
      if (gv(i) >= -act_tol) active.push_back(i);
    }
    const Eigen::VectorXd grad = prob.grad_y_f(x, y);

    Eigen::VectorXd dy(m);
    bool kkt_mode = !active.empty();
    if (!kkt_mode) {
      Eigen::MatrixXd H = prob.hess_yy_f(x, y);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H);
      const double lam_min = es.eigenvalues().minCoeff();
      const double damp = lam_min < 1e-8 ? (1e-8 - lam_min) : 0.0;
      H.diagonal().array() += damp;
      dy = H.ldlt().solve(-grad);
    } else {
      const int a = static_cast<int>(active.size());
      const Eigen::MatrixXd J = prob.jac_y_g(x, y);
      Eigen::MatrixXd Ja(a, m);
      Eigen::VectorXd ga(a);
      for (int k = 0; k < a; ++k) {
        Ja.row(k) = J.row(active[k]);
        ga(k) = gv(active[k]);
      }
      const Eigen::VectorXd u = lsq_multiplier(Ja, grad);
      Eigen::MatrixXd W = prob.hess_yy_f(x, y);
      for (int k = 0; k < a; ++k) {
        W += u(k) * prob.hess_yy_g(active[k], x, y);
      }
      Eigen::MatrixXd K = Eigen::MatrixXd::Zero(m + a, m + a);
      K.topLeftCorner(m, m) = W + 1e-10 * Eigen::MatrixXd::Identity(m, m);
      K.topRightCorner(m, a) = Ja.transpose();
      K.bottomLeftCorner(a, m) = Ja;
      Eigen::VectorXd rhs(m + a);
      rhs.head(m) = -(grad + Ja.transpose() * u);
      rhs.tail(a) = -ga;
      const Eigen::VectorXd step = K.fullPivLu().solve(rhs);
      dy = step.head(m);
    }

    if (!dy.allFinite()) break;
    if (dy.norm() > scale) dy *= scale / dy.norm();

    const double base = kkt_mode
                            ? polish_merit(prob, x, y, active)
                            : tape_value(tapes, xy, prob.n, y, opt.tol.feas);
    // Near convergence f differences underflow while the gradient is still
    // informative, so ties in f fall back to comparing gradient norms.
    const double base_grad = kkt_mode ? 0.0 : grad.norm();
    double t = 1.0;
    bool moved = false;
    for (int bt = 0; bt < 30; ++bt, t *= 0.5) {
      Eigen::VectorXd trial = y + t * dy;
      clip_into_box(prob.y_box, trial);
      const double trial_score =
          kkt_mode ? polish_merit(prob, x, trial, active)
                   : tape_value(tapes, xy, prob.n, trial, opt.tol.feas);
      bool accept = trial_score < base;
      if (!accept && !kkt_mode && trial_score == base &&
          std::isfinite(trial_score)) {
        accept = prob.grad_y_f(x, trial).norm() < base_grad;
      }
      if (accept) {
        y = trial;
        moved = true;
        break;
      }
    }
    if (!moved || t * dy.norm() < 1e-14) break;
  }
  clip_into_box(prob.y_box, y);
  return y;
}

std::vector<long long> quantize_key(const Eigen::VectorXd& x, double quantum) {
  std::vector<long long> key(x.size());
  for (int i = 0; i < x.size(); ++i) {
    const double scaled = x(i) / quantum;
    const double clamped = std::min(9.0e18, std::max(-9.0e18, scaled));
    key[i] = std::llround(clamped);
  }
  return key;
}

}  // namespace

LowerSolution solve_lower(const BilevelProblem& prob, const Eigen::VectorXd& x,
                          const LowerOptions& opt) {
  if (x.size() != prob.n) {
    throw ValidationError("solve_lower: x has size " + std::to_string(x.size()) +
                          ", expected " + std::to_string(prob.n));
  }
  if (prob.m > 3) {
    throw ValidationError("solve_lower: grid solver supports at most 3 lower-level variables, got " +
                          std::to_string(prob.m));
  }

  LowerSolution sol;
  sol.x = x;

  const int grid = opt.grid_per_dim > 0 ? opt.grid_per_dim
                                        : (prob.m <= 2 ? 2001 : 201);
  const LowerTapes tapes = make_tapes(prob);
  std::vector<double> xy(prob.n + prob.m);
  for (int i = 0; i < prob.n; ++i) xy[i] = x(i);

  std::vector<Eigen::VectorXd> axes(prob.m);
  double h = 0.0;
  for (int d = 0; d < prob.m; ++d) {
    const Box& b = prob.y_box[d];
    axes[d] = Eigen::VectorXd::LinSpaced(grid, b.lo, b.hi);
    if (grid > 1) h = std::max(h, (b.hi - b.lo) / (grid - 1));
  }

  const auto for_each_grid_point = [&](auto&& visit) {
    Eigen::VectorXd y(prob.m);
    std::vector<int> idx(prob.m, 0);
    while (true) {
      for (int d = 0; d < prob.m; ++d) y(d) = axes[d](idx[d]);
      visit(y);
      int d = 0;
      for (; d < prob.m; ++d) {
        if (++idx[d] < grid) break;
        idx[d] = 0;
      }
      if (d == prob.m) break;
    }
  };

  // Pass 1: the best grid value.
  double best_grid = kInf;
  for_each_grid_point([&](const Eigen::VectorXd& y) {
    best_grid = std::min(best_grid, tape_value(tapes, xy, prob.n, y, opt.tol.feas));
  });

  if (!std::isfinite(best_grid)) {
    sol.warnings.push_back("no feasible grid point found; lower level treated as infeasible");
    return sol;
  }

  // Pass 2: collect polish starts.  Exact ties (tier A) are all kept so that
  // every global-minimizer branch survives; a wider band (tier B) is thinned
  // spatially to catch minimizers the grid resolves poorly.
  const double tie_tol = std::max(opt.tol.value * (1.0 + std::abs(best_grid)), 1e-12);
  const double band = 1e-3 * (1.0 + std::abs(best_grid));
  const double thin_radius = 8.0 * std::max(h, 1e-12);
  constexpr std::size_t kTierACap = 4096;
  constexpr std::size_t kTierBCap = 512;
  std::vector<Eigen::VectorXd> tier_a, tier_b;
  bool tier_a_overflow = false;
  for_each_grid_point([&](const Eigen::VectorXd& y) {
    const double v = tape_value(tapes, xy, prob.n, y, opt.tol.feas);
    if (v <= best_grid + tie_tol) {
      if (tier_a.size() < kTierACap) {
        tier_a.push_back(y);
      } else {
        tier_a_overflow = true;
      }
    } else if (v <= best_grid + band && tier_b.size() < kTierBCap) {
      for (const auto& kept : tier_b) {
        if ((kept - y).norm() < thin_radius) return;
      }
      tier_b.push_back(y);
    }
  });
  if (tier_a_overflow) {
    sol.warnings.push_back("minimizer plateau exceeds start cap; minimizer list may be incomplete");
  }

  // Polish every start.  Raw starts feed the value estimate (polishing can
  // park on a worse stationary point once rows go active) but only polished
  // points become minimizer representatives, so flat basins collapse to one
  // cluster instead of a band of near-tied grid nodes.
  std::vector<std::pair<double, Eigen::VectorXd>> polished, raw_starts;
  double best = kInf;
  const auto consider = [&](const Eigen::VectorXd& start) {
    const double raw = tape_value(tapes, xy, prob.n, start, opt.tol.feas);
    if (std::isfinite(raw)) {
      raw_starts.emplace_back(raw, start);
      best = std::min(best, raw);
    }
    const Eigen::VectorXd y = polish_start(prob, tapes, xy, x, start, opt);
    const double v = tape_value(tapes, xy, prob.n, y, opt.tol.feas);
    if (std::isfinite(v)) {
      polished.emplace_back(v, y);
      best = std::min(best, v);
    }
  };
  for (const auto& y : tier_a) consider(y);
  for (const auto& y : tier_b) consider(y);

  if (!std::isfinite(best)) {
    // Polishing can only have walked out of domain; fall back to raw grid.
    for (const auto& y : tier_a) polished.emplace_back(best_grid, y);
    best = best_grid;
    sol.warnings.push_back("polishing failed; reporting raw grid minimizers");
  }

  // Keep near-optimal points and cluster them.
  const double keep_tol = opt.tol.value * (1.0 + std::abs(best));
  const auto cluster_from = [&](std::vector<std::pair<double, Eigen::VectorXd>>& pool) {
    std::sort(pool.begin(), pool.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    for (const auto& [v, y] : pool) {
      if (v > best + keep_tol) break;
      bool fresh = true;
      for (const auto& rep : sol.minimizers) {
        if ((rep - y).norm() < opt.tol.cluster) {
          fresh = false;
          break;
        }
      }
      if (fresh) sol.minimizers.push_back(y);
    }
  };
  cluster_from(polished);
  if (sol.minimizers.empty()) cluster_from(raw_starts);

  sol.value = best;
  sol.feasible_found = true;
  for (const auto& y : sol.minimizers) {
    for (int d = 0; d < prob.m; ++d) {
      const Box& b = prob.y_box[d];
      const double edge_tol = 1e-9 * (1.0 + std::abs(b.hi) + std::abs(b.lo));
      if (y(d) - b.lo < edge_tol || b.hi - y(d) < edge_tol) {
        sol.boundary_touching = true;
      }
    }
  }
  if (sol.boundary_touching) {
    sol.warnings.push_back("a minimizer touches the y search box; box may truncate the feasible set");
  }
  return sol;
}

ValueOracle::ValueOracle(const BilevelProblem& prob, LowerOptions opt)
    : prob_(prob), opt_(std::move(opt)) {}

double ValueOracle::value(const Eigen::VectorXd& x) const {
  return solution(x).value;
}

const LowerSolution& ValueOracle::solution(const Eigen::VectorXd& x) const {
  std::lock_guard<std::mutex> lock(mutex_);
  auto key = quantize_key(x, opt_.tol.memo_quantum);
  auto it = memo_.find(key);
  if (it == memo_.end()) {
    it = memo_.emplace(std::move(key), solve_lower(prob_, x, opt_)).first;
  }
  return it->second;
}

std::size_t ValueOracle::memo_size() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return memo_.size();
}

std::vector<int> active_set(const BilevelProblem& prob, const Eigen::VectorXd& x,
                            const Eigen::VectorXd& y, const Tolerances& tol) {
  const Eigen::VectorXd gv = prob.eval_g_all(x, y);
  std::vector<int> active;
  for (int i = 0; i < prob.p; ++i) {
    if (gv(i) > tol.feas) {
      throw ValidationError("point is lower-level infeasible: constraint " +
                            std::to_string(i) + " evaluates to " +
                            std::to_string(gv(i)));
    }
    if (gv(i) >= -tol.active) active.push_back(i);
  }
  return active;
}

MultiplierSet multiplier_set(const BilevelProblem& prob, const Eigen::VectorXd& x,
                             const Eigen::VectorXd& y, const Tolerances& tol) {
  MultiplierSet out;
  out.active = active_set(prob, x, y, tol);
  const Eigen::VectorXd grad = prob.grad_y_f(x, y);
  const int a = static_cast<int>(out.active.size());
  const int m = prob.m;

  if (a == 0) {
    out.residual = grad.lpNorm<1>();
    out.nonempty = out.residual <= tol.kkt;
    out.vertices_complete = true;
    out.bounded = true;
    if (out.nonempty) {
      out.representative = Eigen::VectorXd::Zero(prob.p);
      out.vertices.push_back(Eigen::VectorXd::Zero(prob.p));
    }
    return out;
  }

  const Eigen::MatrixXd J = prob.jac_y_g(x, y);
  Eigen::MatrixXd Wt(m, a);  // columns are active constraint gradients
  for (int k = 0; k < a; ++k) Wt.col(k) = J.row(out.active[k]).transpose();
  const Eigen::VectorXd rhs = -grad;

  LinearProgram stationarity = LinearProgram::make(a);
  stationarity.A_eq = Wt;
  stationarity.b_eq = rhs;
  const FeasibilityResult feas = min_violation_point(stationarity);
  out.residual = feas.residual;
  out.nonempty = out.residual <= tol.kkt;
  if (!out.nonempty) return out;

  // Least-L1 representative: minimize sum(u) while pinning the violation at
  // its minimum.  Variables are [u, r+, r-] with Wt u + r+ - r- = rhs.
  {
    LinearProgram lp = LinearProgram::make(a + 2 * m);
    lp.A_eq = Eigen::MatrixXd::Zero(m, a + 2 * m);
    lp.A_eq.leftCols(a) = Wt;
    lp.A_eq.block(0, a, m, m) = Eigen::MatrixXd::Identity(m, m);
    lp.A_eq.block(0, a + m, m, m) = -Eigen::MatrixXd::Identity(m, m);
    lp.b_eq = rhs;
    lp.A_le = Eigen::MatrixXd::Zero(1, a + 2 * m);
    lp.A_le.rightCols(2 * m).setOnes();
    lp.b_le = Eigen::VectorXd::Constant(1, out.residual + 1e-12);
    lp.c = Eigen::VectorXd::Zero(a + 2 * m);
    lp.c.head(a).setOnes();
    const LpSolution rep = solve_lp(lp);
    out.representative = Eigen::VectorXd::Zero(prob.p);
    if (rep.status == LpStatus::Optimal) {
      for (int k = 0; k < a; ++k) out.representative(out.active[k]) = rep.z(k);
    } else {
      // Fall back to the violation-minimizing point itself.
      for (int k = 0; k < a; ++k) out.representative(out.active[k]) = feas.z(k);
    }
  }

  out.bounded = nonneg_kernel_is_trivial(Wt, tol.rank);
  if (a <= 6) {
    const auto verts =
        enumerate_vertices_nonneg(Wt, rhs, std::max(tol.kkt, tol.rank));
    for (const auto& v : verts) {
      Eigen::VectorXd full = Eigen::VectorXd::Zero(prob.p);
      for (int k = 0; k < a; ++k) full(out.active[k]) = v(k);
      out.vertices.push_back(std::move(full));
    }
    out.vertices_complete = true;
  }
  return out;
}

PolyhedralCone critical_cone(const BilevelProblem& prob, const Eigen::VectorXd& x,
                             const Eigen::VectorXd& y, const Tolerances& tol) {
  const std::vector<int> active = active_set(prob, x, y, tol);
  const Eigen::MatrixXd J = prob.jac_y_g(x, y);
  PolyhedralCone cone = PolyhedralCone::all(prob.m);
  cone.I = Eigen::MatrixXd(1 + active.size(), prob.m);
  cone.I.row(0) = prob.grad_y_f(x, y).transpose();
  for (std::size_t k = 0; k < active.size(); ++k) {
    cone.I.row(1 + k) = J.row(active[k]);
  }
  return cone;
}

PolyhedralCone critical_cone(const BilevelProblem& prob, const Eigen::VectorXd& x,
                             const Eigen::VectorXd& y, const Eigen::VectorXd& u,
                             const Tolerances& tol) {
  if (u.size() != prob.p) {
    throw ValidationError("critical_cone: multiplier has size " +
                          std::to_string(u.size()) + ", expected " +
                          std::to_string(prob.p));
  }
  const std::vector<int> active = active_set(prob, x, y, tol);
  const Eigen::MatrixXd J = prob.jac_y_g(x, y);
  std::vector<int> eq_rows, le_rows;
  for (int idx : active) {
    (u(idx) > tol.pos ? eq_rows : le_rows).push_back(idx);
  }
  PolyhedralCone cone = PolyhedralCone::all(prob.m);
  cone.E = Eigen::MatrixXd(eq_rows.size(), prob.m);
  cone.I = Eigen::MatrixXd(le_rows.size(), prob.m);
  for (std::size_t k = 0; k < eq_rows.size(); ++k) cone.E.row(k) = J.row(eq_rows[k]);
  for (std::size_t k = 0; k < le_rows.size(); ++k) cone.I.row(k) = J.row(le_rows[k]);
  return cone;
}

SubspaceResult critical_subspace(const BilevelProblem& prob, const Eigen::VectorXd& x,
                                 const Eigen::VectorXd& y, const Tolerances& tol) {
  const std::vector<int> active = active_set(prob, x, y, tol);
  const Eigen::MatrixXd J = prob.jac_y_g(x, y);
  Eigen::MatrixXd E(active.size(), prob.m);
  for (std::size_t k = 0; k < active.size(); ++k) E.row(k) = J.row(active[k]);
  SubspaceResult res;
  res.cone = PolyhedralCone::all(prob.m);
  res.cone.E = E;
  res.basis = null_space_basis(E, tol.rank, prob.m);
  return res;
}

PolyhedralCone slack_critical_cone(const BilevelProblem& prob, const Eigen::VectorXd& x,
                                   const Eigen::VectorXd& y, const Eigen::VectorXd& z,
                                   const Tolerances& tol) {
  if (z.size() != prob.p) {
    throw ValidationError("slack_critical_cone: z has size " +
                          std::to_string(z.size()) + ", expected " +
                          std::to_string(prob.p));
  }
  const Eigen::VectorXd gv = prob.eval_g_all(x, y);
  for (int i = 0; i < prob.p; ++i) {
    const double resid = std::abs(gv(i) + z(i) * z(i));
    if (resid > tol.active * (1.0 + std::abs(gv(i)))) {
      throw ValidationError("slack_critical_cone: g_" + std::to_string(i) +
                            " + z^2 = " + std::to_string(gv(i) + z(i) * z(i)) +
                            " is not zero within tolerance");
    }
  }
  const Eigen::MatrixXd J = prob.jac_y_g(x, y);
  PolyhedralCone cone = PolyhedralCone::all(prob.m + prob.p);
  cone.E = Eigen::MatrixXd::Zero(prob.p, prob.m + prob.p);
  for (int i = 0; i < prob.p; ++i) {
    cone.E.block(i, 0, 1, prob.m) = J.row(i);
    cone.E(i, prob.m + i) = 2.0 * z(i);
  }
  return cone;
}

}  // namespace bilevel
