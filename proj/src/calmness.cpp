#include "bilevel/calmness.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <utility>

#include "bilevel/bundled.hpp"

namespace bilevel {

namespace {

constexpr double kInfD = std::numeric_limits<double>::infinity();

// ---------------------------------------------------------------------------
// Trial-point assembly
// ---------------------------------------------------------------------------

enum class Mode { Raw, Stationary, Minimizer };

// Builds full combined-program vectors from upper/lower variable moves: the
// direction block is pinned to the center, slack blocks are re-lifted from
// (x, y), and multiplier blocks are either kept (raw) or recomputed by a
// branch-fixed Newton correction or from the multiplier polytope at a
// lower-level minimizer.
class Completer {
 public:
  Completer(const GenericCombinedProgram& gcp, const VectorXd& center,
            const Tolerances& tol)
      : gcp_(gcp), center_(center), tol_(tol) {
    const BilevelProblem& P = *gcp.problem;
    const GcpLayout& L = gcp.layout;
    center_u_ = VectorXd::Zero(P.p);
    if (L.has_u) {
      center_u_ = L.u_of(center);
      if (L.has_u0) {
        const double u0 = L.u0_of(center);
        if (u0 > tol.pos) center_u_ /= u0;  // back to first-order scale
      }
    } else if (L.has_lambda) {
      center_u_ = L.lambda_of(center);
    }
    const VectorXd cx = L.x_of(center), cy = L.y_of(center);
    if (P.p == 0) {
      branch_ok_ = true;
    } else if (P.lower_feasible(cx, cy, tol.feas)) {
      branch_ = active_set(P, cx, cy, tol);
      branch_ok_ = true;
    }
  }

  const VectorXd& center() const { return center_; }
  int problem_n() const { return gcp_.problem->n; }
  int problem_m() const { return gcp_.problem->m; }

  VectorXd assemble(const VectorXd& x, const VectorXd& y,
                    const std::optional<VectorXd>& u_kkt) const {
    const BilevelProblem& P = *gcp_.problem;
    const GcpLayout& L = gcp_.layout;
    VectorXd w = center_;
    w.head(P.n) = x;
    w.segment(P.n, P.m) = y;
    if (u_kkt) {
      if (L.has_u) {
        if (L.has_u0) {
          const double s = 1.0 + u_kkt->sum();
          w[L.u0_offset()] = 1.0 / s;
          w.segment(L.u_offset(), P.p) = *u_kkt / s;
        } else {
          w.segment(L.u_offset(), P.p) = *u_kkt;
        }
      }
      if (L.has_lambda) w.segment(L.lambda_offset(), P.p) = *u_kkt;
    }
    if (L.has_z) {
      for (int i = 0; i < P.p; ++i)
        w[L.z_offset() + i] = std::sqrt(std::max(0.0, -P.eval_g(i, x, y)));
    }
    return w;
  }

  // Newton correction of (y, u_A) on the center's active branch:
  // grad_y f + sum_A u_i grad_y g_i = 0 and g_A = 0.
  std::optional<std::pair<VectorXd, VectorXd>> stationarity_snap(
      const VectorXd& x, const VectorXd& y0) const {
    if (!branch_ok_) return std::nullopt;
    const BilevelProblem& P = *gcp_.problem;
    const int m = P.m, a = static_cast<int>(branch_.size());
    VectorXd y = y0;
    VectorXd uA(a);
    for (int i = 0; i < a; ++i) uA[i] = center_u_[branch_[i]];
    VectorXd u_full = VectorXd::Zero(P.p);
    for (int iter = 0; iter < 16; ++iter) {
      u_full.setZero();
      for (int i = 0; i < a; ++i) u_full[branch_[i]] = uA[i];
      VectorXd res(m + a);
      res.head(m) = P.grad_y_lagrangian(x, y, u_full);
      if (a > 0) {
        const VectorXd g = P.eval_g_all(x, y);
        for (int i = 0; i < a; ++i) res[m + i] = g[branch_[i]];
      }
      const double scale = 1.0 + y.lpNorm<Eigen::Infinity>() +
                           (a > 0 ? uA.lpNorm<Eigen::Infinity>() : 0.0);
      if (res.lpNorm<Eigen::Infinity>() <= 1e-12 * scale) {
        for (int i = 0; i < P.p; ++i)
          if (std::abs(u_full[i]) < 1e-14) u_full[i] = 0.0;
        return std::make_pair(y, u_full);
      }
      MatrixXd J = MatrixXd::Zero(m + a, m + a);
      J.topLeftCorner(m, m) = P.hess_yy_lagrangian(x, y, u_full);
      if (a > 0) {
        const MatrixXd Jg = P.jac_y_g(x, y);
        for (int i = 0; i < a; ++i) {
          J.block(0, m + i, m, 1) = Jg.row(branch_[i]).transpose();
          J.block(m + i, 0, 1, m) = Jg.row(branch_[i]);
        }
      }
      Eigen::FullPivLU<MatrixXd> lu(J);
      if (!lu.isInvertible()) return std::nullopt;
      const VectorXd step = lu.solve(res);
      y -= step.head(m);
      if (a > 0) uA -= step.tail(a);
    }
    return std::nullopt;
  }

  // Closest lower-level minimizer to the center's y block, with a
  // representative multiplier when the polytope is nonempty.
  std::optional<std::pair<VectorXd, std::optional<VectorXd>>> minimizer_snap(
      const VectorXd& x) const {
    const BilevelProblem& P = *gcp_.problem;
    const LowerSolution& sol = gcp_.oracle->solution(x);
    if (!sol.feasible_found || sol.minimizers.empty()) return std::nullopt;
    const VectorXd cy = gcp_.layout.y_of(center_);
    const VectorXd* best = nullptr;
    double best_dist = kInfD;
    for (const VectorXd& cand : sol.minimizers) {
      const double d = (cand - cy).lpNorm<Eigen::Infinity>();
      if (d < best_dist) {
        best_dist = d;
        best = &cand;
      }
    }
    std::optional<VectorXd> u;
    if (P.p > 0 && P.lower_feasible(x, *best, tol_.feas)) {
      const MultiplierSet ms = multiplier_set(P, x, *best, tol_);
      if (ms.nonempty) u = ms.representative;
    }
    return std::make_pair(*best, u);
  }

  VectorXd clamp_to_boxes(VectorXd xy) const {
    const BilevelProblem& P = *gcp_.problem;
    for (int i = 0; i < P.n; ++i)
      xy[i] = std::clamp(xy[i], P.x_box[i].lo, P.x_box[i].hi);
    for (int k = 0; k < P.m; ++k)
      xy[P.n + k] =
          std::clamp(xy[P.n + k], P.y_box[k].lo, P.y_box[k].hi);
    return xy;
  }

 private:
  const GenericCombinedProgram& gcp_;
  VectorXd center_;
  Tolerances tol_;
  VectorXd center_u_;
  std::vector<int> branch_;
  bool branch_ok_ = false;
};

// ---------------------------------------------------------------------------
// Local falsification search over one (mu, radius) cell
// ---------------------------------------------------------------------------

struct TrialScore {
  bool usable = false;   // satisfies the cell's hard constraints
  double drop = -kInfD;  // improvement measure; witness when > tol_drop
  double pert = 0.0;     // Clarke: norm of the absorbed perturbation
};

using ScoreFn = std::function<TrialScore(const VectorXd&)>;

struct CellOutcome {
  std::optional<CalmnessWitness> witness;
  long evals = 0;
};

std::vector<VectorXd> ray_directions(int n, int m) {
  std::vector<VectorXd> dirs;
  const int nm = n + m;
  for (int j = 0; j < nm; ++j) {
    VectorXd d = VectorXd::Zero(nm);
    d[j] = 1.0;
    dirs.push_back(d);
    dirs.push_back(-d);
  }
  if (n >= 2) {
    const int patterns = std::min(1 << n, 8);
    for (int bits = 0; bits < patterns; ++bits) {
      VectorXd d = VectorXd::Zero(nm);
      for (int j = 0; j < n; ++j) d[j] = (bits >> j) & 1 ? -1.0 : 1.0;
      dirs.push_back(d);
    }
  }
  if (n >= 1 && m >= 1) {
    for (double sx : {1.0, -1.0})
      for (double sy : {1.0, -1.0}) {
        VectorXd d(nm);
        d.head(n).setConstant(sx);
        d.tail(m).setConstant(sy);
        dirs.push_back(d);
      }
  }
  return dirs;
}

CellOutcome search_cell(const Completer& comp, double mu, double radius,
                        int budget, double tol_drop, const SeedFn& seeds,
                        Rng& rng, const ScoreFn& score) {
  CellOutcome out;
  const VectorXd& center = comp.center();

  struct Best {
    bool has = false;
    VectorXd xy;
    double drop = -kInfD;
  } best;

  // Stop conditions are funneled through one place so the budget is honest:
  // every scored trial counts.
  auto try_point = [&](const VectorXd& w, bool from_seed,
                       const VectorXd* xy) -> bool {
    if (out.evals >= budget) return true;
    ++out.evals;
    const TrialScore s = score(w);
    if (s.usable) {
      if (s.drop > tol_drop) {
        CalmnessWitness wit;
        wit.mu = mu;
        wit.radius = radius;
        wit.point = w;
        wit.drop = s.drop;
        wit.perturbation = s.pert;
        wit.from_seed = from_seed;
        out.witness = std::move(wit);
        return true;
      }
      if (xy != nullptr && s.drop > best.drop) {
        best.has = true;
        best.xy = *xy;
        best.drop = s.drop;
      }
    }
    return false;
  };

  if (seeds) {
    for (const VectorXd& w : seeds(mu, radius, center))
      if (try_point(w, true, nullptr)) return out;
  }

  const int n = comp.problem_n();
  const int m = comp.problem_m();
  const VectorXd center_xy = center.head(n + m);

  auto trial_modes = [&](const VectorXd& xy, bool with_min) -> bool {
    const VectorXd x = xy.head(n);
    const VectorXd y = xy.tail(m);
    if (try_point(comp.assemble(x, y, std::nullopt), false, &xy)) return true;
    if (auto s = comp.stationarity_snap(x, y)) {
      VectorXd xy2(n + m);
      xy2 << x, s->first;
      if (try_point(comp.assemble(x, s->first, s->second), false, &xy2))
        return true;
    }
    if (with_min) {
      if (auto ms = comp.minimizer_snap(x)) {
        VectorXd xy2(n + m);
        xy2 << x, ms->first;
        if (try_point(comp.assemble(x, ms->first, ms->second), false, &xy2))
          return true;
      }
    }
    return false;
  };

  static const double kSteps[] = {1.0,    0.7,    0.5,   0.35,   0.25,
                                  0.18,   0.125,  0.09,  0.0625, 0.044,
                                  0.031,  0.022,  0.016, 0.008,  0.004,
                                  0.002,  0.001};

  const std::vector<VectorXd> dirs = ray_directions(n, m);
  for (const VectorXd& dir : dirs) {
    for (const double frac : kSteps) {
      if (out.evals >= budget) return out;
      const VectorXd xy = comp.clamp_to_boxes(center_xy + (radius * frac) * dir);
      if ((xy - center_xy).lpNorm<Eigen::Infinity>() == 0.0) continue;
      if (trial_modes(xy, true)) return out;
    }
  }

  auto compass = [&]() -> bool {
    if (!best.has) return false;
    for (const double frac : {0.3, 0.1, 0.03, 0.01, 0.003}) {
      const double delta = radius * frac;
      bool improved = true;
      int rounds = 0;
      while (improved && rounds++ < 20) {
        improved = false;
        const double drop_before = best.drop;
        for (int j = 0; j < n + m && out.evals < budget; ++j) {
          for (const double sgn : {1.0, -1.0}) {
            VectorXd xy = best.xy;
            xy[j] += sgn * delta;
            xy = comp.clamp_to_boxes(xy);
            if ((xy - center_xy).lpNorm<Eigen::Infinity>() > radius) continue;
            if (trial_modes(xy, false)) return true;
          }
        }
        if (best.drop > drop_before) improved = true;
      }
      if (out.evals >= budget) break;
    }
    return false;
  };

  if (compass()) return out;

  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  long since_compass = 0;
  double best_at_compass = best.drop;
  while (out.evals < budget) {
    VectorXd xy = center_xy;
    for (int j = 0; j < n + m; ++j) xy[j] += radius * unif(rng);
    xy = comp.clamp_to_boxes(xy);
    if (trial_modes(xy, (since_compass % 3) == 0)) return out;
    ++since_compass;
    if (since_compass >= 250) {
      since_compass = 0;
      if (best.has && best.drop > best_at_compass) {
        best_at_compass = best.drop;
        if (compass()) return out;
      }
    }
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Names
// ---------------------------------------------------------------------------

const char* calmness_kind_name(CalmnessKind k) {
  return k == CalmnessKind::Partial ? "PARTIAL" : "CLARKE";
}

const char* calmness_status_name(CalmnessStatus s) {
  return s == CalmnessStatus::Violated ? "VIOLATED" : "NOT_REFUTED";
}

// ---------------------------------------------------------------------------
// Partial calmness
// ---------------------------------------------------------------------------

namespace {

void validate_search_options(const std::vector<double>& mu_list,
                             const std::vector<double>& radii, int budget) {
  if (mu_list.empty())
    throw ValidationError("calmness search needs at least one penalty weight");
  for (const double mu : mu_list)
    if (!(mu >= 0.0) || !std::isfinite(mu))
      throw ValidationError("penalty weights must be finite and nonnegative");
  if (radii.empty())
    throw ValidationError("calmness search needs at least one radius");
  for (const double r : radii)
    if (!(r > 0.0) || !std::isfinite(r))
      throw ValidationError("search radii must be finite and positive");
  if (budget <= 0) throw ValidationError("search budget must be positive");
}

void require_feasible_candidate(const GenericCombinedProgram& gcp,
                                const CandidatePoint& candidate,
                                const VectorXd& w0, const Tolerances& tol) {
  const FeasibilityReport rep = feasible(gcp, w0, tol);
  if (rep.feasible) return;
  std::string worst = "?";
  double v = -kInfD;
  for (const auto& e : rep.entries)
    if (!e.ok && e.value - e.bound > v) {
      v = e.value - e.bound;
      worst = e.name;
    }
  throw ValidationError("candidate '" + candidate.name +
                        "' is infeasible for the " +
                        reform_kind_name(gcp.kind) +
                        " program (worst entry: " + worst + ")");
}

}  // namespace

CalmnessVerdict test_partial_calmness(const GenericCombinedProgram& gcp,
                                      const CandidatePoint& candidate,
                                      const CalmnessOptions& opt) {
  validate_search_options(opt.mu_list, opt.radii, opt.budget);
  if (!gcp.has_value_gap)
    throw ValidationError(
        "partial calmness is tested on the unpenalized program");
  const VectorXd w0 = gcp.pack(candidate);
  require_feasible_candidate(gcp, candidate, w0, opt.tol);

  CalmnessVerdict verdict;
  verdict.kind = CalmnessKind::Partial;
  verdict.mu_tested = opt.mu_list;
  verdict.meta.radii = opt.radii;
  verdict.meta.budget = opt.budget;
  if (*std::max_element(opt.mu_list.begin(), opt.mu_list.end()) < 100.0)
    verdict.meta.notes.push_back(
        "largest penalty tested is below 100; the verdict refutes only the "
        "weights listed");

  const Completer comp(gcp, w0, opt.tol);
  Rng rng(opt.rng_seed);

  std::vector<GenericCombinedProgram> pens;
  pens.reserve(opt.mu_list.size());
  std::vector<double> refs;
  for (const double mu : opt.mu_list) {
    pens.push_back(penalize(gcp, mu));
    refs.push_back(pens.back().objective_value(w0));
  }

  bool all_cells = true;
  for (std::size_t i = 0; i < opt.mu_list.size(); ++i) {
    const double mu = opt.mu_list[i];
    const GenericCombinedProgram& pen = pens[i];
    const double ref = refs[i];

    auto score_in = [&](double radius) {
      return [&, radius](const VectorXd& w) -> TrialScore {
        TrialScore s;
        if (std::isfinite(radius) &&
            (w - w0).lpNorm<Eigen::Infinity>() > radius * (1.0 + 1e-12))
          return s;
        const FeasibilityReport rep = feasible(pen, w, opt.tol);
        if (!rep.feasible) return s;
        s.usable = true;
        s.drop = ref - pen.objective_value(w);
        return s;
      };
    };

    // Canonical per-mu witness: the first verified seed with no locality
    // constraint (the seed generators put the analytic threshold index
    // first).
    if (opt.seeds) {
      const auto sc = score_in(kInfD);
      for (const VectorXd& w : opt.seeds(mu, kInfD, w0)) {
        ++verdict.meta.evals;
        const TrialScore s = sc(w);
        if (s.usable && s.drop > opt.tol_drop) {
          CalmnessWitness wit;
          wit.mu = mu;
          wit.radius = kInfD;
          wit.point = w;
          wit.drop = s.drop;
          wit.from_seed = true;
          verdict.canonical.push_back(std::move(wit));
          break;
        }
      }
    }

    for (const double radius : opt.radii) {
      CellOutcome cell = search_cell(comp, mu, radius, opt.budget,
                                     opt.tol_drop, opt.seeds, rng,
                                     score_in(radius));
      verdict.meta.evals += cell.evals;
      if (cell.witness)
        verdict.witnesses.push_back(std::move(*cell.witness));
      else
        all_cells = false;
    }
  }

  // Re-verify every stored witness through the feasibility oracle before
  // emitting a VIOLATED verdict.
  auto reverify = [&](const CalmnessWitness& wit) -> bool {
    const std::size_t idx = static_cast<std::size_t>(
        std::find(opt.mu_list.begin(), opt.mu_list.end(), wit.mu) -
        opt.mu_list.begin());
    if (idx >= pens.size()) return false;
    const FeasibilityReport rep = feasible(pens[idx], wit.point, opt.tol);
    if (!rep.feasible) return false;
    const double drop = refs[idx] - pens[idx].objective_value(wit.point);
    return drop > opt.tol_drop;
  };
  for (const CalmnessWitness& wit : verdict.witnesses)
    if (!reverify(wit)) {
      all_cells = false;
      verdict.meta.notes.push_back(
          "a stored witness failed re-verification; verdict demoted");
      break;
    }
  for (const CalmnessWitness& wit : verdict.canonical)
    if (!reverify(wit))
      verdict.meta.notes.push_back(
          "a canonical seed witness failed re-verification");

  const std::size_t cells = opt.mu_list.size() * opt.radii.size();
  verdict.status = (all_cells && verdict.witnesses.size() == cells)
                       ? CalmnessStatus::Violated
                       : CalmnessStatus::NotRefuted;
  return verdict;
}

// ---------------------------------------------------------------------------
// Clarke calmness
// ---------------------------------------------------------------------------

PerturbationVector absorbing_perturbation(const GenericCombinedProgram& gcp,
                                          const VectorXd& point,
                                          const Tolerances& tol) {
  PerturbationVector out;
  const FeasibilityReport rep = feasible(gcp, point, tol);

  // Hard (non-perturbable) parts: boxes, side conditions, sigma membership.
  static const char* kSideNames[] = {"hessian_psd", "cone_copositive",
                                     "subspace_copositive",
                                     "slack_subspace_psd"};
  for (const ResidualEntry& e : rep.entries) {
    const bool is_box = e.name.rfind("x_box[", 0) == 0 ||
                        e.name.rfind("y_box[", 0) == 0;
    const bool is_sigma = e.name.rfind("sigma[", 0) == 0;
    bool is_side = false;
    for (const char* s : kSideNames) is_side = is_side || e.name == s;
    if ((is_box || is_sigma || is_side) && !e.ok) {
      out.notes.push_back("non-perturbable constraint violated: " + e.name);
      return out;
    }
    if (e.name == "value_gap" && !std::isfinite(e.value)) {
      out.notes.push_back("lower level infeasible at x; gap not absorbable");
      return out;
    }
  }

  const BilevelProblem& P = *gcp.problem;
  const GcpLayout& L = gcp.layout;
  const VectorXd x = L.x_of(point);
  const VectorXd y = L.y_of(point);

  double sq = 0.0;
  if (gcp.has_value_gap) {
    const double gap = gcp.value_gap(point);
    out.r1 = -std::max(0.0, gap);
    sq += out.r1 * out.r1;
  }

  if (gcp.complementarity) {
    const VectorXd g = P.eval_g_all(x, y);
    const VectorXd u = L.u_of(point);
    out.r2 = VectorXd::Zero(P.p);
    out.r3 = VectorXd::Zero(P.p);
    for (int i = 0; i < P.p; ++i) {
      // Minimal shift onto the complementarity set: either force the
      // constraint side to zero or the multiplier side to zero.
      const double ca2 = g[i] * g[i] +
                         std::max(0.0, -u[i]) * std::max(0.0, -u[i]);
      const double cb2 = std::max(0.0, g[i]) * std::max(0.0, g[i]) +
                         u[i] * u[i];
      if (ca2 <= cb2) {
        out.r2[i] = -g[i];
        out.r3[i] = std::max(0.0, -u[i]);
      } else {
        out.r2[i] = std::min(0.0, -g[i]);
        out.r3[i] = -u[i];
      }
      sq += out.r2[i] * out.r2[i] + out.r3[i] * out.r3[i];
    }
  }

  if (!gcp.rows.empty()) {
    out.rows = VectorXd::Zero(static_cast<int>(gcp.rows.size()));
    for (std::size_t k = 0; k < gcp.rows.size(); ++k) {
      const double h = gcp.rows[k].h_c.eval(point);
      out.rows[static_cast<int>(k)] =
          gcp.rows[k].target == ConeFactor::Zero ? -h : -std::max(0.0, h);
      sq += out.rows[static_cast<int>(k)] * out.rows[static_cast<int>(k)];
    }
  } else if (P.q > 0) {
    // Membership programs carry the upper-level rows outside `rows`.
    const VectorXd G = P.eval_G_all(x, y);
    out.rows = VectorXd::Zero(P.q);
    for (int j = 0; j < P.q; ++j) {
      out.rows[j] = -std::max(0.0, G[j]);
      sq += out.rows[j] * out.rows[j];
    }
  }

  out.defined = true;
  out.norm = std::sqrt(sq);
  return out;
}

CalmnessVerdict test_clarke_calmness(const GenericCombinedProgram& gcp,
                                     const CandidatePoint& candidate,
                                     const ClarkeOptions& opt) {
  validate_search_options({opt.mu_max}, opt.eps_list, opt.budget);
  if (gcp.mu != 0.0)
    throw ValidationError(
        "Clarke calmness is tested on the unpenalized program");
  const VectorXd w0 = gcp.pack(candidate);
  require_feasible_candidate(gcp, candidate, w0, opt.tol);

  CalmnessVerdict verdict;
  verdict.kind = CalmnessKind::Clarke;
  verdict.mu_tested = {opt.mu_max};
  verdict.meta.radii = opt.eps_list;
  verdict.meta.budget = opt.budget;
  verdict.meta.notes.push_back(
      "penalized excess is nondecreasing in the penalty weight, so the "
      "certificate at the largest weight covers all smaller weights");

  const double f_bar = gcp.objective_c.eval(w0);
  const Completer comp(gcp, w0, opt.tol);
  Rng rng(opt.rng_seed);

  bool all_cells = true;
  for (const double eps : opt.eps_list) {
    auto score = [&](const VectorXd& w) -> TrialScore {
      TrialScore s;
      if ((w - w0).lpNorm<Eigen::Infinity>() > eps * (1.0 + 1e-12)) return s;
      const PerturbationVector pv = absorbing_perturbation(gcp, w, opt.tol);
      if (!pv.defined || pv.norm > eps) return s;
      s.usable = true;
      s.pert = pv.norm;
      s.drop = f_bar - gcp.objective_c.eval(w) - opt.mu_max * pv.norm;
      return s;
    };
    CellOutcome cell = search_cell(comp, opt.mu_max, eps, opt.budget,
                                   opt.tol_drop, opt.seeds, rng, score);
    verdict.meta.evals += cell.evals;
    if (cell.witness)
      verdict.witnesses.push_back(std::move(*cell.witness));
    else
      all_cells = false;
  }

  // Re-verification through the perturbation oracle.
  for (const CalmnessWitness& wit : verdict.witnesses) {
    const PerturbationVector pv =
        absorbing_perturbation(gcp, wit.point, opt.tol);
    const bool ok = pv.defined && pv.norm <= wit.radius &&
                    f_bar - gcp.objective_c.eval(wit.point) -
                            opt.mu_max * pv.norm >
                        opt.tol_drop;
    if (!ok) {
      all_cells = false;
      verdict.meta.notes.push_back(
          "a stored witness failed re-verification; verdict demoted");
      break;
    }
  }

  verdict.status =
      (all_cells && verdict.witnesses.size() == opt.eps_list.size())
          ? CalmnessStatus::Violated
          : CalmnessStatus::NotRefuted;
  return verdict;
}

// ---------------------------------------------------------------------------
// Closed-form witness sequences
// ---------------------------------------------------------------------------

AnalyticWitnessReport analytic_witness_check(const std::string& id,
                                             double mu) {
  if (!(mu >= 0.0) || !std::isfinite(mu))
    throw ValidationError("penalty weight must be finite and nonnegative");
  const AnalyticProblemData* data = analytic_data(id);
  if (data == nullptr)
    throw ValidationError("no closed-form reference data for '" + id + "'");

  AnalyticWitnessReport rep;
  rep.id = id;
  rep.mu = mu;
  rep.threshold = data->calmness_threshold(mu);
  rep.k = static_cast<int>(std::ceil(rep.threshold)) + 1;
  rep.analytic_value = data->penalized_value(mu, rep.k);
  rep.reference = data->reference_value;
  rep.drop = rep.reference - rep.analytic_value;
  rep.strict = rep.drop > 1e-10;

  const BilevelProblem prob = load_bundled(id);
  const GenericCombinedProgram gcp = build(prob, ReformKind::CP);
  const GenericCombinedProgram pen = penalize(gcp, mu);
  CandidatePoint c;
  c.name = "analytic-witness";
  c.x = data->witness_x(rep.k);
  c.y = data->witness_y(rep.k);
  if (prob.p > 0) c.u = VectorXd::Zero(prob.p);
  rep.numeric_value = pen.objective_value(gcp.pack(c));
  rep.mismatch = std::abs(rep.analytic_value - rep.numeric_value);
  return rep;
}

SeedFn analytic_seed_fn(const GenericCombinedProgram& gcp,
                        const std::string& id) {
  const AnalyticProblemData* data = analytic_data(id);
  if (data == nullptr) return SeedFn();
  return [gcp, data](double mu, double radius,
                     const VectorXd& center) -> std::vector<VectorXd> {
    std::vector<VectorXd> out;
    const double thr = std::max(0.0, data->calmness_threshold(mu));
    long k0 = static_cast<long>(std::ceil(thr)) + 1;
    if (std::isfinite(radius) && radius > 0.0) {
      k0 = std::max(k0, static_cast<long>(std::ceil(1.0 / radius)));
      while (static_cast<double>(k0) * radius < 1.0) ++k0;
    }
    const BilevelProblem& P = *gcp.problem;
    for (const long k : {k0, k0 + 1, 2 * k0, 4 * k0, 10 * k0}) {
      if (k > std::numeric_limits<int>::max() / 2) continue;
      CandidatePoint c;
      c.name = "seed";
      c.x = data->witness_x(static_cast<int>(k));
      c.y = data->witness_y(static_cast<int>(k));
      if (P.p > 0) c.u = VectorXd::Zero(P.p);
      VectorXd w = gcp.pack(c);
      if (gcp.layout.has_d)
        w.segment(gcp.layout.d_offset(), P.m) =
            center.segment(gcp.layout.d_offset(), P.m);
      out.push_back(std::move(w));
    }
    return out;
  };
}

// ---------------------------------------------------------------------------
// Implication diagram
// ---------------------------------------------------------------------------

ImplicationReport check_implication_diagram(
    const BilevelProblem& prob, const std::vector<CandidatePoint>& candidates,
    const CalmnessOptions& opt) {
  static const std::pair<ReformKind, ReformKind> kEdges[] = {
      {ReformKind::VP, ReformKind::CPFJ},
      {ReformKind::CPFJ, ReformKind::R_FJSOCP},
      {ReformKind::CP, ReformKind::R_BSOCP},
      {ReformKind::WSOCP, ReformKind::WSOCPZ},
      {ReformKind::WSOCPZ, ReformKind::WSOCP},
  };

  ImplicationReport report;
  if (candidates.empty()) return report;

  // Build each program once; an edge whose programs cannot be built for this
  // problem is skipped with a warning.
  std::map<ReformKind, GenericCombinedProgram> programs;
  auto program_for = [&](ReformKind kind) -> const GenericCombinedProgram* {
    auto it = programs.find(kind);
    if (it != programs.end()) return &it->second;
    try {
      auto [pos, inserted] = programs.emplace(kind, build(prob, kind));
      return &pos->second;
    } catch (const ValidationError& e) {
      report.warnings.push_back(std::string("cannot build ") +
                                reform_kind_name(kind) + ": " + e.what());
      return nullptr;
    }
  };

  std::map<std::pair<ReformKind, std::string>, CalmnessStatus> cache;
  auto status_for = [&](const GenericCombinedProgram& g,
                        const CandidatePoint& c)
      -> std::optional<CalmnessStatus> {
    const auto key = std::make_pair(g.kind, c.name);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    try {
      const CalmnessVerdict v = test_partial_calmness(g, c, opt);
      cache[key] = v.status;
      return v.status;
    } catch (const ValidationError& e) {
      report.warnings.push_back("skipped " +
                                std::string(reform_kind_name(g.kind)) +
                                " at '" + c.name + "': " + e.what());
      return std::nullopt;
    }
  };

  for (const CandidatePoint& c : candidates) {
    for (const auto& [src, tgt] : kEdges) {
      const GenericCombinedProgram* gs = program_for(src);
      const GenericCombinedProgram* gt = program_for(tgt);
      if (gs == nullptr || gt == nullptr) continue;
      const auto ss = status_for(*gs, c);
      const auto ts = status_for(*gt, c);
      if (!ss || !ts) continue;
      ImplicationCheck check;
      check.candidate = c.name;
      check.source = src;
      check.target = tgt;
      check.source_status = *ss;
      check.target_status = *ts;
      check.inconsistent = (*ss == CalmnessStatus::NotRefuted &&
                            *ts == CalmnessStatus::Violated);
      if (check.inconsistent)
        report.warnings.push_back(
            std::string("one-sided inconsistency at '") + c.name + "': " +
            reform_kind_name(src) + " NOT_REFUTED but " +
            reform_kind_name(tgt) +
            " VIOLATED (search failure on the source, not a disproof)");
      report.checks.push_back(std::move(check));
    }
  }
  return report;
}

}  // namespace bilevel
