#include "doctest.h"

#include <cmath>
#include <limits>

#include "bilevel/bundled.hpp"
#include "bilevel/stationarity.hpp"

using namespace bilevel;

namespace {

VectorXd vec(std::initializer_list<double> vals) {
  VectorXd v(static_cast<int>(vals.size()));
  int i = 0;
  for (double x : vals) v(i++) = x;
  return v;
}

CandidatePoint named(const BilevelProblem& prob, const std::string& name) {
  for (const auto& c : prob.candidates)
    if (c.name == name) return c;
  REQUIRE(false);
  return {};
}

BilevelProblem inline_problem(const std::string& text) {
  return problem_from_json_text(text, "inline");
}

bool has_note(const StationarityCertificate& cert, const std::string& needle) {
  for (const auto& n : cert.notes)
    if (n.find(needle) != std::string::npos) return true;
  return false;
}

int row_index(const GenericCombinedProgram& gcp, const std::string& label) {
  for (std::size_t r = 0; r < gcp.rows.size(); ++r)
    if (gcp.rows[r].label == label) return static_cast<int>(r);
  REQUIRE(false);
  return -1;
}

// Independent re-evaluation of the stationarity equation from the
// certificate's multipliers; must reproduce cert.residual for HOLDS.
double recompute_residual(const GenericCombinedProgram& gcp, const VectorXd& w,
                          const StationarityCertificate& cert) {
  const auto egrad = [&](const Expr& e) {
    VectorXd g(w.size());
    for (int t = 0; t < w.size(); ++t) g[t] = e.diff(t).eval(w);
    return g;
  };
  const GcpLayout& L = gcp.layout;
  VectorXd E = egrad(gcp.objective) + cert.mu * egrad(gcp.f_ext);
  if (cert.xi.size() > 0) E.head(L.n) -= cert.mu * cert.xi;
  for (int j = 0; j < cert.lambda_g.size(); ++j) {
    E += cert.lambda_g[j] * egrad(gcp.g_ext[static_cast<std::size_t>(j)]);
    E(L.u_offset() + j) -= cert.lambda_u[j];
  }
  for (int r = 0; r < cert.lambda_H.size(); ++r)
    E += cert.lambda_H[r] * egrad(gcp.rows[static_cast<std::size_t>(r)].h);
  return E.lpNorm<Eigen::Infinity>();
}

const double kSqrt2 = 1.4142135623730951;

}  // namespace

TEST_CASE("subdifferential estimate reproduces the closed forms") {
  const BilevelProblem p31 = load_bundled("example_3_1");

  SUBCASE("unconstrained lower level, single minimizer") {
    const auto est = subdifferential_estimate_V(p31, vec({0.0}));
    REQUIRE(est.size() == 1);
    CHECK(std::abs(est[0][0]) <= 1e-10);
  }

  SUBCASE("two symmetric minimizers collapse to one vertex") {
    // at x = 1 the minimizers are +-1 and d/dx f = -y^2/2 = -1/2 at both
    const auto est = subdifferential_estimate_V(p31, vec({1.0}));
    REQUIRE(est.size() == 1);
    CHECK(est[0][0] == doctest::Approx(-0.5).epsilon(1e-9));
  }

  SUBCASE("oracle overload shares the answer") {
    ValueOracle oracle(p31);
    const auto a = subdifferential_estimate_V(oracle, vec({1.0}));
    const auto b = subdifferential_estimate_V(p31, vec({1.0}));
    REQUIRE(a.size() == b.size());
    CHECK((a[0] - b[0]).norm() <= 1e-12);
  }

  SUBCASE("constrained example with a trivial multiplier set") {
    const BilevelProblem p46 = load_bundled("example_4_6");
    const auto est = subdifferential_estimate_V(p46, vec({0.0, 0.0}));
    REQUIRE(est.size() == 1);
    CHECK(est[0].norm() <= 1e-10);
  }

  SUBCASE("dimension mismatch and infeasible lower level throw") {
    CHECK_THROWS_AS((void)subdifferential_estimate_V(p31, vec({0.0, 0.0})),
                    ValidationError);
    const BilevelProblem infeas = inline_problem(R"({
      "n": 1, "m": 1, "p": 1, "q": 0,
      "F": "x1", "f": "y1^2",
      "g": ["y1^2 + 1"], "G": [],
      "x_box": [[-1, 1]], "y_box": [[-1, 1]]
    })");
    CHECK_THROWS_WITH_AS((void)subdifferential_estimate_V(infeas, vec({0.0})),
                         doctest::Contains("infeasible"), ValidationError);
  }

  SUBCASE("unbounded multiplier set makes the estimate unavailable") {
    const BilevelProblem pinch = inline_problem(R"({
      "n": 1, "m": 1, "p": 2, "q": 0,
      "F": "x1^2 + y1^2", "f": "y1^2",
      "g": ["y1", "-y1"], "G": [],
      "x_box": [[-1, 1]], "y_box": [[-1, 1]]
    })");
    CHECK_THROWS_WITH_AS((void)subdifferential_estimate_V(pinch, vec({0.0})),
                         doctest::Contains("unbounded"), ValidationError);
  }
}

TEST_CASE("the first-order program is refuted at the two-dimensional origin") {
  const BilevelProblem prob = load_bundled("example_4_6");
  const GenericCombinedProgram cp = build(prob, ReformKind::CP);
  const VectorXd w = cp.pack(named(prob, "origin"));

  const StationarityCertificate mc = check_m_stationary(cp, w);
  CHECK(mc.kind == StationarityKind::MStat);
  CHECK(mc.status == StationarityStatus::RefutedOverEstimate);
  CHECK(std::string(stationarity_status_name(mc.status)) == "REFUTED_OVER_ESTIMATE");
  REQUIRE(mc.I0.size() == 1);
  CHECK(mc.I0[0] == 0);
  REQUIRE(mc.I_u.size() == 1);
  CHECK(mc.I_u[0] == 1);
  CHECK(mc.I_g.empty());
  CHECK(std::isinf(mc.residual));
  CHECK(has_note(mc, "relative to the enumerated estimate"));

  const StationarityCertificate sc = check_s_stationary(cp, w);
  CHECK(sc.status == StationarityStatus::RefutedOverEstimate);
}

TEST_CASE("the first-order program is refuted at the one-dimensional optimum") {
  const BilevelProblem prob = load_bundled("example_3_1");
  const GenericCombinedProgram cp = build(prob, ReformKind::CP);

  // the bilevel optimum itself: the value-gap gradient term cancels by the
  // envelope property and the stationarity-row gradient vanishes, so the
  // x-equation is -1 = 0 for every branch; M-stationarity fails exactly
  // because the program is not partially calm there
  const VectorXd origin = cp.pack(named(prob, "origin"));
  const StationarityCertificate at_opt = check_m_stationary(cp, origin);
  CHECK(at_opt.status == StationarityStatus::RefutedOverEstimate);
  CHECK(at_opt.I0.empty());  // unconstrained lower level

  // a non-optimal feasible point fails through the y-equation instead
  const VectorXd interior = cp.pack(named(prob, "interior"));
  const StationarityCertificate at_int = check_m_stationary(cp, interior);
  CHECK(at_int.status == StationarityStatus::RefutedOverEstimate);
}

TEST_CASE("M-stationarity holds at the corner while S-stationarity fails") {
  const BilevelProblem prob = load_bundled("example_4_6");
  const GenericCombinedProgram cp = build(prob, ReformKind::CP);
  const VectorXd w = cp.pack(named(prob, "corner"));

  const StationarityCertificate mc = check_m_stationary(cp, w);
  REQUIRE(mc.status == StationarityStatus::Holds);
  CHECK(mc.residual <= 1e-8);
  REQUIRE(mc.I_u.size() == 1);
  CHECK(mc.I_u[0] == 0);
  REQUIRE(mc.I0.size() == 1);
  CHECK(mc.I0[0] == 1);
  // the all-nonnegative case is infeasible (the y-equation forces a negative
  // multiplier), so the M-certificate lives on a complementary case
  REQUIRE(mc.branch.size() == 1);
  CHECK(mc.branch[0] != 2);
  // multiplier of the lower-level stationarity row is forced to -1/sqrt(2)
  // when the biactive inequality multiplier is pinned
  const int stat = row_index(cp, "stationarity[0]");
  if (mc.branch[0] == 0) CHECK(mc.lambda_H[stat] == doctest::Approx(-0.5 * kSqrt2).epsilon(1e-9));
  CHECK(mc.lambda_g[0] == 0.0);  // pinned off I_g u I0
  CHECK(recompute_residual(cp, w, mc) <= 1e-8);

  const StationarityCertificate sc = check_s_stationary(cp, w);
  CHECK(sc.status == StationarityStatus::RefutedOverEstimate);

  // determinism of the case search
  const StationarityCertificate mc2 = check_m_stationary(cp, w);
  CHECK(mc2.branch == mc.branch);
  CHECK(mc2.residual == mc.residual);
}

TEST_CASE("S-stationarity of the relaxed second-order program at the origin") {
  const BilevelProblem prob = load_bundled("example_4_6");
  const GenericCombinedProgram rb = build(prob, ReformKind::R_BSOCP);
  const VectorXd w = rb.pack(named(prob, "origin"));  // carries d = 1

  const StationarityCertificate sc = check_s_stationary(rb, w);
  REQUIRE(sc.status == StationarityStatus::Holds);
  CHECK(sc.kind == StationarityKind::SStat);
  CHECK(sc.residual <= 1e-8);
  REQUIRE(sc.branch.size() == 1);
  CHECK(sc.branch[0] == 2);

  // the certificate is carried by the curvature row alone: its gradient in x
  // is (1, 1) and the upper objective's is (-1, -1)
  const int curv = row_index(rb, "curvature");
  CHECK(sc.lambda_H[curv] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(sc.lambda_g.lpNorm<Eigen::Infinity>() <= 1e-10);
  // inactive upper-level rows carry no multiplier
  for (int j = 0; j < 4; ++j)
    CHECK(sc.lambda_H[row_index(rb, "G[" + std::to_string(j) + "]")] == 0.0);

  // mu = 0 certificates are independent of the subdifferential estimate
  CHECK(sc.mu <= 1e-12);
  CHECK(sc.xi.size() == 0);
  CHECK(has_note(sc, "independent of the subdifferential estimate"));
  CHECK(recompute_residual(rb, w, sc) <= 1e-8);

  // S holds implies M holds, and the M-search tries the S-case first
  const StationarityCertificate mc = check_m_stationary(rb, w);
  REQUIRE(mc.status == StationarityStatus::Holds);
  CHECK(mc.branch == std::vector<int>{2});
}

TEST_CASE("trivial program with no constraint rows") {
  const BilevelProblem prob = inline_problem(R"({
    "n": 1, "m": 1, "p": 0, "q": 0,
    "F": "x1^2 + y1^2", "f": "(y1 - x1)^2",
    "g": [], "G": [],
    "x_box": [[-1, 1]], "y_box": [[-1, 1]]
  })");
  const GenericCombinedProgram vp = build(prob, ReformKind::VP);
  REQUIRE(vp.rows.empty());
  const VectorXd w = vec({0.0, 0.0});

  const StationarityCertificate mc = check_m_stationary(vp, w);
  CHECK(mc.status == StationarityStatus::Holds);
  CHECK(mc.residual <= 1e-10);
  CHECK(mc.lambda_g.size() == 0);
  CHECK(mc.lambda_H.size() == 0);
  CHECK(mc.branch.empty());
  CHECK(mc.I0.empty());

  const StationarityCertificate sc = check_s_stationary(vp, w);
  CHECK(sc.status == StationarityStatus::Holds);

  CHECK(check_mpec_licq(vp, w));  // vacuously nondegenerate
}

TEST_CASE("stationarity checks reject ineligible inputs") {
  const BilevelProblem p46 = load_bundled("example_4_6");
  const BilevelProblem p31 = load_bundled("example_3_1");

  SUBCASE("membership programs") {
    const GenericCombinedProgram kk = build_membership(p46, ReformKind::KKTCP);
    const VectorXd w = kk.pack(named(p46, "origin"));
    CHECK_THROWS_WITH_AS((void)check_m_stationary(kk, w),
                         doctest::Contains("membership"), ValidationError);
    CHECK_THROWS_AS((void)check_mpec_licq(kk, w), ValidationError);
  }

  SUBCASE("side-condition programs") {
    const GenericCombinedProgram ws = build(p46, ReformKind::WSOCP);
    const VectorXd w = ws.pack(named(p46, "origin"));
    CHECK_THROWS_WITH_AS((void)check_s_stationary(ws, w),
                         doctest::Contains("side condition"), ValidationError);
  }

  SUBCASE("penalized programs") {
    const GenericCombinedProgram cp = build(p31, ReformKind::CP);
    const GenericCombinedProgram pen = penalize(cp, 4.0);
    const VectorXd w = pen.pack(named(p31, "origin"));
    CHECK_THROWS_WITH_AS((void)check_m_stationary(pen, w),
                         doctest::Contains("unpenalized"), ValidationError);
  }

  SUBCASE("infeasible points") {
    const GenericCombinedProgram cp = build(p31, ReformKind::CP);
    CandidatePoint c;
    c.x = vec({0.0});
    c.y = vec({0.5});  // not a lower-level minimizer at x = 0
    CHECK_THROWS_WITH_AS((void)check_m_stationary(cp, cp.pack(c)),
                         doctest::Contains("infeasible"), ValidationError);
  }

  SUBCASE("biactive set beyond the enumeration cap") {
    std::string g_rows = "[";
    for (int j = 0; j < 11; ++j) g_rows += std::string(j ? "," : "") + "\"-y1\"";
    g_rows += "]";
    const BilevelProblem wide = inline_problem(std::string(R"({
      "n": 1, "m": 1, "p": 11, "q": 0,
      "F": "x1^2 + y1^2", "f": "y1^2",
      "g": )") + g_rows + R"(, "G": [],
      "x_box": [[-1, 1]], "y_box": [[0, 1]]
    })");
    const GenericCombinedProgram cp = build(wide, ReformKind::CP);
    CandidatePoint c;
    c.x = vec({0.0});
    c.y = vec({0.0});
    c.u = VectorXd::Zero(11);
    CHECK_THROWS_WITH_AS((void)check_m_stationary(cp, cp.pack(c)),
                         doctest::Contains("biactive"), ValidationError);
  }
}

TEST_CASE("degradation without a subdifferential estimate is honest") {
  // the pinched feasible set y = 0 written with two opposing inequalities has
  // an unbounded multiplier set, so the estimate is unavailable and only the
  // mu = 0 system can be decided
  const std::string base = R"({
    "n": 1, "m": 1, "p": 2, "q": 0,
    "F": ")";
  const std::string tail = R"(", "f": "y1^2",
    "g": ["y1", "-y1"], "G": [],
    "x_box": [[-1, 1]], "y_box": [[-1, 1]]
  })";
  CandidatePoint c;
  c.x = vec({0.0});
  c.y = vec({0.0});
  c.u = vec({0.0, 0.0});

  SUBCASE("mu = 0 system feasible: HOLDS independently of the estimate") {
    const BilevelProblem prob = inline_problem(base + "x1^2 + y1^2" + tail);
    const GenericCombinedProgram cp = build(prob, ReformKind::CP);
    const StationarityCertificate mc = check_m_stationary(cp, cp.pack(c));
    REQUIRE(mc.status == StationarityStatus::Holds);
    CHECK(mc.mu == 0.0);
    CHECK(mc.xi.size() == 0);
    CHECK(has_note(mc, "only the mu = 0 system is testable"));
    CHECK((mc.I0 == std::vector<int>{0, 1}));
  }

  SUBCASE("mu = 0 system infeasible: UNDETERMINED, not refuted") {
    const BilevelProblem prob = inline_problem(base + "x1 + y1^2" + tail);
    const GenericCombinedProgram cp = build(prob, ReformKind::CP);
    const StationarityCertificate mc = check_m_stationary(cp, cp.pack(c));
    CHECK(mc.status == StationarityStatus::Undetermined);
    CHECK(has_note(mc, "cannot be tested without"));
  }
}

TEST_CASE("MPEC LICQ rank test") {
  const BilevelProblem p46 = load_bundled("example_4_6");

  SUBCASE("one active gradient column is independent") {
    const GenericCombinedProgram vp = build(p46, ReformKind::VP);
    const VectorXd w = vp.pack(named(p46, "origin"));
    CHECK(check_mpec_licq(vp, w));
  }

  SUBCASE("the relaxed second-order program is degenerate at the origin") {
    // the direction rows u_j * (grad g_j . d) vanish identically on u = 0 and
    // their gradients duplicate the u-bound unit columns
    const GenericCombinedProgram rb = build(p46, ReformKind::R_BSOCP);
    const VectorXd w = rb.pack(named(p46, "origin"));
    CHECK_FALSE(check_mpec_licq(rb, w));
  }

  SUBCASE("duplicated rows are degenerate") {
    GenericCombinedProgram vp = build(p46, ReformKind::VP);
    vp.rows.push_back(vp.rows[0]);
    const VectorXd w = vp.pack(named(p46, "origin"));
    CHECK_FALSE(check_mpec_licq(vp, w));
  }

  SUBCASE("invariant under positive row rescaling") {
    Rng rng(42);
    std::uniform_real_distribution<double> scale(0.1, 10.0);
    for (ReformKind kind : {ReformKind::VP, ReformKind::R_BSOCP}) {
      const GenericCombinedProgram gcp = build(p46, kind);
      const VectorXd w = gcp.pack(named(p46, "origin"));
      const bool expected = check_mpec_licq(gcp, w);
      for (int trial = 0; trial < 20; ++trial) {
        GenericCombinedProgram scaled = gcp;
        for (auto& row : scaled.rows) {
          row.h = Expr::constant(scale(rng)) * row.h;
          row.h_c = row.h.compile();
        }
        CHECK(check_mpec_licq(scaled, w) == expected);
      }
    }
  }
}

TEST_CASE("second-order certificate at the one-dimensional optimum") {
  const BilevelProblem prob = load_bundled("example_3_1");
  const StationarityCertificate cert =
      check_cpsoc_stationarity(prob, vec({0.0}), vec({0.0}));

  REQUIRE(cert.status == StationarityStatus::Holds);
  CHECK(cert.kind == StationarityKind::CpsocStat);
  CHECK(std::string(stationarity_kind_name(cert.kind)) == "CPSOC_STAT");
  CHECK(cert.residual <= 1e-8);
  // the Hessian vanishes at the origin, its kernel is everything, and the
  // x-equation -1 + Omega = 0 forces the matrix multiplier to 1
  REQUIRE(cert.Omega.rows() == 1);
  CHECK(cert.Omega(0, 0) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(cert.beta.lpNorm<Eigen::Infinity>() <= 1e-10);
  CHECK(cert.mu <= 1e-12);
  CHECK(cert.xi.size() == 0);
  CHECK(has_note(cert, "kernel dimension 1"));
  // trace condition against the true Hessian
  const MatrixXd H = prob.hess_yy_f(vec({0.0}), vec({0.0}));
  CHECK(std::abs((H.cwiseProduct(cert.Omega)).sum()) <= 1e-12);
}

TEST_CASE("second-order trivial, refuted, and unsupported cases") {
  SUBCASE("positive-definite Hessian with vanishing gradients holds with zero") {
    const BilevelProblem prob = inline_problem(R"({
      "n": 1, "m": 1, "p": 0, "q": 0,
      "F": "x1^2 + y1^2", "f": "y1^2/2",
      "g": [], "G": [],
      "x_box": [[-1, 1]], "y_box": [[-1, 1]]
    })");
    const StationarityCertificate cert =
        check_cpsoc_stationarity(prob, vec({0.0}), vec({0.0}));
    REQUIRE(cert.status == StationarityStatus::Holds);
    CHECK(cert.Omega.lpNorm<Eigen::Infinity>() <= 1e-12);  // kernel is trivial
    CHECK(cert.beta.lpNorm<Eigen::Infinity>() <= 1e-10);
    CHECK(cert.residual <= 1e-10);
    CHECK(has_note(cert, "kernel dimension 0"));
  }

  SUBCASE("generic upper gradient with a trivial kernel is refuted") {
    const BilevelProblem prob = inline_problem(R"({
      "n": 1, "m": 1, "p": 0, "q": 0,
      "F": "x1 + y1^2", "f": "y1^2/2",
      "g": [], "G": [],
      "x_box": [[-1, 1]], "y_box": [[-1, 1]]
    })");
    const StationarityCertificate cert =
        check_cpsoc_stationarity(prob, vec({0.0}), vec({0.0}));
    CHECK(cert.status == StationarityStatus::RefutedOverEstimate);
    CHECK(has_note(cert, "relative to the enumerated estimate"));
  }

  SUBCASE("lower-level inequality constraints are rejected") {
    const BilevelProblem p46 = load_bundled("example_4_6");
    CHECK_THROWS_AS(
        (void)check_cpsoc_stationarity(p46, vec({0.0, 0.0}), vec({0.0})),
        ValidationError);
  }

  SUBCASE("more than three lower-level variables is undetermined") {
    const BilevelProblem wide = inline_problem(R"({
      "n": 1, "m": 4, "p": 0, "q": 0,
      "F": "x1", "f": "y1^2 + y2^2 + y3^2 + y4^2",
      "g": [], "G": [],
      "x_box": [[-1, 1]],
      "y_box": [[-1, 1], [-1, 1], [-1, 1], [-1, 1]]
    })");
    const StationarityCertificate cert =
        check_cpsoc_stationarity(wide, vec({0.0}), vec({0.0, 0.0, 0.0, 0.0}));
    CHECK(cert.status == StationarityStatus::Undetermined);
    CHECK(has_note(cert, "at most three"));
  }

  SUBCASE("infeasible points throw") {
    const BilevelProblem p31 = load_bundled("example_3_1");
    CHECK_THROWS_WITH_AS(
        (void)check_cpsoc_stationarity(p31, vec({0.0}), vec({0.5})),
        doctest::Contains("infeasible"), ValidationError);
  }
}

TEST_CASE("second-order search over a two-dimensional kernel") {
  // both lower-level Hessian eigenvalues vanish at the origin, so the matrix
  // multiplier ranges over full 2x2 PSD matrices and the search needs the
  // alternating-projection path; the x-equation pins trace(Omega) = 1
  const BilevelProblem prob = inline_problem(R"({
    "n": 1, "m": 2, "p": 0, "q": 0,
    "F": "(x1 - 0.5)^2 + y1^2 + y2^2",
    "f": "y1^4/4 + y2^4/4 - x1*(y1^2 + y2^2)/2",
    "g": [], "G": [],
    "x_box": [[-1, 1]], "y_box": [[-1, 1], [-1, 1]]
  })");
  LowerOptions opt;
  opt.grid_per_dim = 401;
  const StationarityCertificate cert =
      check_cpsoc_stationarity(prob, vec({0.0}), vec({0.0, 0.0}), opt);

  REQUIRE(cert.status == StationarityStatus::Holds);
  CHECK(has_note(cert, "kernel dimension 2"));
  CHECK(cert.residual <= 1e-8);
  REQUIRE(cert.Omega.rows() == 2);
  CHECK(cert.Omega.trace() == doctest::Approx(1.0).epsilon(1e-8));
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(cert.Omega);
  CHECK(es.eigenvalues().minCoeff() >= -1e-10);
  const MatrixXd H = prob.hess_yy_f(vec({0.0}), vec({0.0, 0.0}));
  CHECK(std::abs((H.cwiseProduct(cert.Omega)).sum()) <= 1e-10);
}
