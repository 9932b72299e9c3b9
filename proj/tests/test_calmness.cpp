#include "doctest.h"

#include <cmath>
#include <limits>

#include "bilevel/bundled.hpp"
#include "bilevel/calmness.hpp"

using namespace bilevel;

namespace {

const double kInf = std::numeric_limits<double>::infinity();

CandidatePoint named(const BilevelProblem& prob, const std::string& name) {
  for (const auto& c : prob.candidates)
    if (c.name == name) return c;
  REQUIRE(false);
  return {};
}

}  // namespace

TEST_CASE("closed-form witness sequences reproduce the exact drops") {
  struct Row {
    const char* id;
    double mu, threshold, drop;
    int k;
    double reference;
  };
  // drop = reference - penalized(k) at the first index past the threshold
  const Row rows[] = {
      {"example_3_1", 0.0, 1.0, 0.25, 2, 0.25},
      {"example_3_1", 4.0, 2.0, 1.0 / 9.0, 3, 0.25},
      {"example_3_1", 10.0, 3.5, 0.06, 5, 0.25},
      {"example_4_6", 10.0, 5.0, 1.0 / 18.0, 6, 0.0},
      {"example_4_8", 0.0, 1.0, 0.25, 2, 0.25},
      {"example_4_8", 4.0, 3.0, 1.0 / 16.0, 4, 0.25},
  };
  for (const Row& row : rows) {
    CAPTURE(row.id);
    CAPTURE(row.mu);
    const AnalyticWitnessReport rep = analytic_witness_check(row.id, row.mu);
    CHECK(rep.k == row.k);
    CHECK(rep.threshold == doctest::Approx(row.threshold));
    CHECK(rep.reference == doctest::Approx(row.reference));
    CHECK(std::abs(rep.drop - row.drop) < 1e-12);
    CHECK(rep.strict);
    // the numeric value function (grid + polish) must agree with the
    // closed-form penalized value at the witness
    CHECK(rep.mismatch <= 1e-10);
  }
  CHECK_THROWS_AS(analytic_witness_check("nope", 1.0), ValidationError);
  CHECK_THROWS_AS(analytic_witness_check("example_3_1", -1.0), ValidationError);
}

TEST_CASE("partial calmness of the stationarity reformulation is refuted "
          "with seeded witnesses") {
  const BilevelProblem prob = load_bundled("example_3_1");
  const GenericCombinedProgram gcp = build(prob, ReformKind::CP);
  CalmnessOptions opt;
  opt.mu_list = {0.0, 4.0, 40.0, 100.0};
  opt.seeds = analytic_seed_fn(gcp, "example_3_1");
  const CandidatePoint origin = named(prob, "origin");

  const CalmnessVerdict v = test_partial_calmness(gcp, origin, opt);
  CHECK(v.status == CalmnessStatus::Violated);
  CHECK(v.kind == CalmnessKind::Partial);
  CHECK(std::string(calmness_status_name(v.status)) == "VIOLATED");
  CHECK(v.witnesses.size() == opt.mu_list.size() * opt.radii.size());

  // canonical witnesses sit at x = 1/k for the first index past the
  // threshold 1 + mu/4, with drop (k - (1 + mu/4)) / k^2
  REQUIRE(v.canonical.size() == opt.mu_list.size());
  const int ks[] = {2, 3, 12, 27};
  for (std::size_t i = 0; i < opt.mu_list.size(); ++i) {
    const double mu = opt.mu_list[i];
    const int k = ks[i];
    CAPTURE(mu);
    const CalmnessWitness& wit = v.canonical[i];
    CHECK(wit.mu == mu);
    CHECK(wit.radius == kInf);
    CHECK(wit.from_seed);
    CHECK(wit.point[0] == doctest::Approx(1.0 / k).epsilon(1e-14));
    CHECK(wit.point[1] == 0.0);
    const double expected = 1.0 / k - (1.0 + mu / 4.0) / double(k * k);
    CHECK(std::abs(wit.drop - expected) <= 1e-10);
  }

  // every cell witness re-verifies from scratch and respects its ball
  const VectorXd w0 = gcp.pack(origin);
  for (const CalmnessWitness& wit : v.witnesses) {
    CAPTURE(wit.mu);
    CAPTURE(wit.radius);
    CHECK(wit.from_seed);
    CHECK((wit.point - w0).lpNorm<Eigen::Infinity>() <=
          wit.radius * (1.0 + 1e-12));
    const GenericCombinedProgram pen = penalize(gcp, wit.mu);
    CHECK(feasible(pen, wit.point).feasible);
    const double drop =
        pen.objective_value(w0) - pen.objective_value(wit.point);
    CHECK(drop > 1e-10);
    CHECK(std::abs(drop - wit.drop) < 1e-12);
  }
  CHECK(v.meta.evals >= long(v.witnesses.size()));
}

TEST_CASE("partial calmness violation is found by the generic search "
          "without seeds") {
  const BilevelProblem prob = load_bundled("example_3_1");
  const GenericCombinedProgram gcp = build(prob, ReformKind::CP);
  CalmnessOptions opt;
  opt.mu_list = {0.0, 4.0, 100.0};
  opt.radii = {1e-1, 1e-2};
  opt.budget = 3000;

  const CalmnessVerdict v =
      test_partial_calmness(gcp, named(prob, "origin"), opt);
  CHECK(v.status == CalmnessStatus::Violated);
  CHECK(v.witnesses.size() == 6);
  CHECK(v.canonical.empty());
  for (const CalmnessWitness& wit : v.witnesses) {
    CHECK_FALSE(wit.from_seed);
    CHECK(wit.drop > 1e-10);
    // all witnesses follow the violating ray: x > 0, lower solution branch
    CHECK(wit.point[0] > 0.0);
  }
}

TEST_CASE("partial calmness refutation on the first constrained example") {
  const BilevelProblem prob = load_bundled("example_4_6");
  const GenericCombinedProgram gcp = build(prob, ReformKind::CP);
  CalmnessOptions opt;
  opt.mu_list = {0.0, 10.0, 100.0};
  opt.seeds = analytic_seed_fn(gcp, "example_4_6");

  const CalmnessVerdict v =
      test_partial_calmness(gcp, named(prob, "origin"), opt);
  CHECK(v.status == CalmnessStatus::Violated);
  REQUIRE(v.canonical.size() == 3);
  // mu = 10: threshold mu/2 = 5, witness index k = 6, drop (2k - mu) / k^2
  CHECK(v.canonical[1].mu == 10.0);
  CHECK(std::abs(v.canonical[1].drop - 1.0 / 18.0) <= 1e-10);
  CHECK(v.canonical[1].point[0] == doctest::Approx(1.0 / 6.0));
  CHECK(v.canonical[1].point[1] == doctest::Approx(1.0 / 6.0));
  CHECK(v.canonical[1].point[2] == 0.0);  // y stays at the pinch value
}

TEST_CASE("partial calmness refutation on the second constrained example") {
  const BilevelProblem prob = load_bundled("example_4_8");
  const GenericCombinedProgram gcp = build(prob, ReformKind::CP);
  CalmnessOptions opt;
  opt.mu_list = {0.0, 4.0};
  opt.radii = {1e-1, 1e-2};
  opt.seeds = analytic_seed_fn(gcp, "example_4_8");

  const CalmnessVerdict v =
      test_partial_calmness(gcp, named(prob, "origin"), opt);
  CHECK(v.status == CalmnessStatus::Violated);
  REQUIRE(v.canonical.size() == 2);
  CHECK(std::abs(v.canonical[0].drop - 0.25) <= 1e-10);      // k = 2
  CHECK(std::abs(v.canonical[1].drop - 1.0 / 16.0) <= 1e-10);  // k = 4
}

TEST_CASE("second-order reformulations are not refuted where the "
          "stationarity one is") {
  SUBCASE("hessian-condition program on the unconstrained example") {
    const BilevelProblem prob = load_bundled("example_3_1");
    const GenericCombinedProgram gcp = build(prob, ReformKind::CPSOC);
    CalmnessOptions opt;
    opt.mu_list = {0.0};
    opt.radii = {1e-1, 1e-2};
    opt.budget = 800;
    const CalmnessVerdict v =
        test_partial_calmness(gcp, named(prob, "origin"), opt);
    CHECK(v.status == CalmnessStatus::NotRefuted);
    CHECK(v.witnesses.empty());
    CHECK(v.meta.evals >= 2 * 800);  // NOT_REFUTED cells burn their budget
  }

  SUBCASE("basic second-order membership program on the unconstrained "
          "example") {
    const BilevelProblem prob = load_bundled("example_3_1");
    const GenericCombinedProgram gcp =
        build_membership(prob, ReformKind::SOCP_B);
    CalmnessOptions opt;
    opt.mu_list = {0.0};
    opt.radii = {1e-1};
    opt.budget = 300;
    const CalmnessVerdict v =
        test_partial_calmness(gcp, named(prob, "origin"), opt);
    CHECK(v.status == CalmnessStatus::NotRefuted);
    CHECK(v.witnesses.empty());
  }

  SUBCASE("directional program at a nonzero direction on the first "
          "constrained example") {
    const BilevelProblem prob = load_bundled("example_4_6");
    const GenericCombinedProgram gcp = build(prob, ReformKind::R_BSOCP);
    CalmnessOptions opt;
    opt.mu_list = {0.0, 10.0};
    opt.radii = {1e-1, 1e-2};
    opt.budget = 1500;
    const CalmnessVerdict v =
        test_partial_calmness(gcp, named(prob, "origin"), opt);
    CHECK(v.status == CalmnessStatus::NotRefuted);
    CHECK(v.witnesses.empty());
  }

  SUBCASE("strong second-order membership program on the first constrained "
          "example") {
    const BilevelProblem prob = load_bundled("example_4_6");
    const GenericCombinedProgram gcp =
        build_membership(prob, ReformKind::SOCP_S);
    CalmnessOptions opt;
    opt.mu_list = {0.0, 10.0};
    opt.radii = {1e-1};
    opt.budget = 400;
    const CalmnessVerdict v =
        test_partial_calmness(gcp, named(prob, "origin"), opt);
    CHECK(v.status == CalmnessStatus::NotRefuted);
    CHECK(v.witnesses.empty());
  }

  SUBCASE("weak second-order programs on the second constrained example") {
    const BilevelProblem prob = load_bundled("example_4_8");
    for (const ReformKind kind : {ReformKind::WSOCP, ReformKind::WSOCPZ}) {
      CAPTURE(reform_kind_name(kind));
      const GenericCombinedProgram gcp = build(prob, kind);
      CalmnessOptions opt;
      opt.mu_list = {0.0, 4.0};
      opt.radii = {1e-1, 1e-2};
      opt.budget = 800;
      const CalmnessVerdict v =
          test_partial_calmness(gcp, named(prob, "origin"), opt);
      CHECK(v.status == CalmnessStatus::NotRefuted);
      CHECK(v.witnesses.empty());
    }
  }
}

TEST_CASE("weak second-order program IS refuted on the first constrained "
          "example") {
  // at the pinch point the active gradient kills the critical subspace, so
  // the weak condition holds vacuously along the violating ray
  const BilevelProblem prob = load_bundled("example_4_6");
  for (const ReformKind kind : {ReformKind::WSOCP, ReformKind::WSOCPZ}) {
    CAPTURE(reform_kind_name(kind));
    const GenericCombinedProgram gcp = build(prob, kind);
    CalmnessOptions opt;
    opt.mu_list = {0.0, 10.0};
    opt.radii = {1e-1};
    opt.budget = 2000;
    const CalmnessVerdict v =
        test_partial_calmness(gcp, named(prob, "origin"), opt);
    CHECK(v.status == CalmnessStatus::Violated);
  }
}

TEST_CASE("perturbation absorption computes minimal residual shifts") {
  SUBCASE("value-gap shift only") {
    const BilevelProblem prob = load_bundled("example_3_1");
    const GenericCombinedProgram gcp = build(prob, ReformKind::VP);
    VectorXd w(2);
    w << 0.25, 0.0;
    const PerturbationVector pv = absorbing_perturbation(gcp, w);
    CHECK(pv.defined);
    // f - V = 0 - (-x^2/4) at x = 1/4
    CHECK(pv.r1 == doctest::Approx(-0.015625));
    CHECK(pv.norm == doctest::Approx(0.015625));
  }

  SUBCASE("complementarity pairs pick the cheaper branch") {
    const BilevelProblem prob = load_bundled("example_4_6");
    const GenericCombinedProgram gcp = build(prob, ReformKind::CP);
    VectorXd w(5);
    w << 0.0, 0.0, 0.0, -0.3, 0.2;
    const PerturbationVector pv = absorbing_perturbation(gcp, w);
    CHECK(pv.defined);
    CHECK(pv.r1 == 0.0);
    // pair 0: g = 0 active, u = -0.3 lifted to zero -> shift 0.3
    CHECK(pv.r3[0] == doctest::Approx(0.3));
    CHECK(pv.r2[0] == 0.0);
    // pair 1: g = -sqrt(2) stays, u = 0.2 zeroed out -> shift 0.2
    CHECK(pv.r3[1] == doctest::Approx(-0.2));
    CHECK(pv.r2[1] == 0.0);
    // stationarity row: -(-u1) - u2 shifted by 0.5
    REQUIRE(pv.rows.size() == 5);
    CHECK(pv.rows[0] == doctest::Approx(-0.5));
    CHECK(pv.norm == doctest::Approx(std::sqrt(0.38)));
  }

  SUBCASE("boxes are not perturbable") {
    const BilevelProblem prob = load_bundled("example_4_6");
    const GenericCombinedProgram gcp = build(prob, ReformKind::CP);
    VectorXd w(5);
    w << 0.0, 0.0, 1.7, 0.0, 0.0;  // y above its box
    const PerturbationVector pv = absorbing_perturbation(gcp, w);
    CHECK_FALSE(pv.defined);
    REQUIRE(!pv.notes.empty());
    CHECK(pv.notes[0].find("y_box") != std::string::npos);
  }

  SUBCASE("an infinite value function is not absorbable") {
    BilevelProblem prob;
    prob.n = 1;
    prob.m = 1;
    prob.p = 1;
    prob.q = 0;
    prob.F = parse_expr("x1 + y1", {"x1", "y1"});
    prob.f = parse_expr("y1", {"x1", "y1"});
    prob.g = {parse_expr("y1*y1 + 1", {"x1", "y1"})};
    prob.x_box = {{-1.0, 1.0}};
    prob.y_box = {{-1.0, 1.0}};
    finalize_problem(prob);
    const GenericCombinedProgram gcp = build(prob, ReformKind::CP);
    VectorXd w(3);
    w << 0.0, 0.0, 0.0;
    const PerturbationVector pv = absorbing_perturbation(gcp, w);
    CHECK_FALSE(pv.defined);
  }
}

TEST_CASE("Clarke calmness is refuted for the value-function program on "
          "the unconstrained example") {
  const BilevelProblem prob = load_bundled("example_3_1");
  const GenericCombinedProgram gcp = build(prob, ReformKind::VP);
  ClarkeOptions opt;
  opt.budget = 2000;
  const CalmnessVerdict v =
      test_clarke_calmness(gcp, named(prob, "origin"), opt);
  CHECK(v.status == CalmnessStatus::Violated);
  CHECK(v.kind == CalmnessKind::Clarke);
  CHECK(v.mu_tested == std::vector<double>{100.0});
  CHECK(v.witnesses.size() == opt.eps_list.size());
  const VectorXd w0 = gcp.pack(named(prob, "origin"));
  for (std::size_t i = 0; i < v.witnesses.size(); ++i) {
    const CalmnessWitness& wit = v.witnesses[i];
    const double eps = opt.eps_list[i];
    CHECK(wit.radius == eps);
    CHECK((wit.point - w0).lpNorm<Eigen::Infinity>() <= eps * (1.0 + 1e-12));
    CHECK(wit.perturbation <= eps);
    CHECK(wit.perturbation > 0.0);  // the gap really is absorbed, not free
    CHECK(wit.drop > 1e-10);
  }
}

TEST_CASE("Clarke calmness is refuted for the stationarity program on the "
          "unconstrained example") {
  const BilevelProblem prob = load_bundled("example_3_1");
  const GenericCombinedProgram gcp = build(prob, ReformKind::CP);
  ClarkeOptions opt;
  opt.budget = 2000;
  const CalmnessVerdict v =
      test_clarke_calmness(gcp, named(prob, "origin"), opt);
  CHECK(v.status == CalmnessStatus::Violated);
}

TEST_CASE("Clarke calmness holds trivially at a strict global minimizer") {
  BilevelProblem prob;
  prob.n = 1;
  prob.m = 1;
  prob.p = 0;
  prob.q = 0;
  prob.F = parse_expr("x1*x1 + y1*y1", {"x1", "y1"});
  prob.f = parse_expr("y1*y1", {"x1", "y1"});
  prob.x_box = {{-1.0, 1.0}};
  prob.y_box = {{-1.0, 1.0}};
  finalize_problem(prob);
  const GenericCombinedProgram gcp = build(prob, ReformKind::CP);
  CandidatePoint c;
  c.name = "min";
  c.x = VectorXd::Zero(1);
  c.y = VectorXd::Zero(1);
  ClarkeOptions opt;
  opt.budget = 500;
  const CalmnessVerdict v = test_clarke_calmness(gcp, c, opt);
  CHECK(v.status == CalmnessStatus::NotRefuted);
  CHECK(v.witnesses.empty());

  // the Clarke test refuses penalized programs
  const GenericCombinedProgram pen = penalize(gcp, 2.0);
  CHECK_THROWS_AS(test_clarke_calmness(pen, c, opt), ValidationError);
}

TEST_CASE("witness drops are monotone in the penalty weight") {
  const BilevelProblem prob = load_bundled("example_3_1");
  const GenericCombinedProgram gcp = build(prob, ReformKind::CP);
  CalmnessOptions opt;
  opt.mu_list = {0.0};
  opt.radii = {1e-1};
  opt.seeds = analytic_seed_fn(gcp, "example_3_1");
  const CalmnessVerdict v =
      test_partial_calmness(gcp, named(prob, "origin"), opt);
  REQUIRE(!v.witnesses.empty());
  const VectorXd w = v.witnesses[0].point;
  const VectorXd w0 = gcp.pack(named(prob, "origin"));
  double prev = kInf;
  for (const double mu : {0.0, 4.0, 40.0, 100.0}) {
    const GenericCombinedProgram pen = penalize(gcp, mu);
    const double drop = pen.objective_value(w0) - pen.objective_value(w);
    CHECK(drop <= prev + 1e-15);
    prev = drop;
  }
}

TEST_CASE("witnesses transfer along the nested membership sets") {
  // a witness against a smaller member set stays a witness for any larger
  // one: the weak second-order set sits inside the first-order set
  const BilevelProblem prob = load_bundled("example_4_6");
  const GenericCombinedProgram wsoc =
      build_membership(prob, ReformKind::SOCP_W);
  CalmnessOptions opt;
  opt.mu_list = {0.0, 10.0};
  opt.radii = {1e-1};
  opt.budget = 500;
  const CalmnessVerdict v =
      test_partial_calmness(wsoc, named(prob, "origin"), opt);
  CHECK(v.status == CalmnessStatus::Violated);

  const GenericCombinedProgram kkt =
      build_membership(prob, ReformKind::KKTCP);
  const VectorXd w0 = wsoc.pack(named(prob, "origin"));
  for (const CalmnessWitness& wit : v.witnesses) {
    const VectorXd x = wit.point.head(2);
    const VectorXd y = wit.point.tail(1);
    CHECK(sigma_membership(prob, SigmaKind::KKT, x, y));
    const GenericCombinedProgram pen_kkt = penalize(kkt, wit.mu);
    CHECK(feasible(pen_kkt, wit.point).feasible);
    const double drop_kkt =
        pen_kkt.objective_value(w0) - pen_kkt.objective_value(wit.point);
    CHECK(drop_kkt == doctest::Approx(wit.drop).epsilon(1e-12));
    // the chain is strict here: the violating branch fails the Fritz-John
    // second-order condition, so it cannot serve against that program
    CHECK_FALSE(sigma_membership(prob, SigmaKind::FJSOC, x, y));
  }
}

TEST_CASE("implication diagram stays consistent on the first constrained "
          "example") {
  const BilevelProblem prob = load_bundled("example_4_6");
  CalmnessOptions opt;
  opt.mu_list = {0.0, 10.0};
  opt.radii = {1e-1};
  opt.budget = 600;
  const ImplicationReport rep =
      check_implication_diagram(prob, {named(prob, "origin")}, opt);
  CHECK(rep.checks.size() == 5);
  for (const ImplicationCheck& c : rep.checks) {
    CAPTURE(reform_kind_name(c.source));
    CAPTURE(reform_kind_name(c.target));
    CHECK_FALSE(c.inconsistent);
  }
  // the stationarity edge pairs a violated source with an unrefuted
  // directional target, which the one-sided semantics allows
  bool saw_cp_edge = false;
  for (const ImplicationCheck& c : rep.checks)
    if (c.source == ReformKind::CP && c.target == ReformKind::R_BSOCP) {
      saw_cp_edge = true;
      CHECK(c.source_status == CalmnessStatus::Violated);
      CHECK(c.target_status == CalmnessStatus::NotRefuted);
    }
  CHECK(saw_cp_edge);

  const ImplicationReport empty = check_implication_diagram(prob, {}, opt);
  CHECK(empty.checks.empty());
  CHECK(empty.warnings.empty());
}

TEST_CASE("calmness search rejects malformed inputs") {
  const BilevelProblem prob = load_bundled("example_3_1");
  const GenericCombinedProgram gcp = build(prob, ReformKind::CP);
  const CandidatePoint origin = named(prob, "origin");

  CalmnessOptions opt;
  opt.mu_list = {};
  CHECK_THROWS_AS(test_partial_calmness(gcp, origin, opt), ValidationError);
  opt = {};
  opt.radii = {0.0};
  CHECK_THROWS_AS(test_partial_calmness(gcp, origin, opt), ValidationError);
  opt = {};
  opt.budget = 0;
  CHECK_THROWS_AS(test_partial_calmness(gcp, origin, opt), ValidationError);
  opt = {};
  opt.mu_list = {-1.0};
  CHECK_THROWS_AS(test_partial_calmness(gcp, origin, opt), ValidationError);

  // infeasible candidates are reported, not searched
  CandidatePoint bad;
  bad.name = "outside";
  bad.x = VectorXd::Constant(1, 2.0);
  bad.y = VectorXd::Zero(1);
  CHECK_THROWS_WITH_AS(test_partial_calmness(gcp, bad, {}),
                       doctest::Contains("infeasible"), ValidationError);

  // the partial test wants the unpenalized program
  const GenericCombinedProgram pen = penalize(gcp, 1.0);
  CHECK_THROWS_AS(test_partial_calmness(pen, origin, {}), ValidationError);

  // unknown ids yield an empty seed generator rather than throwing
  CHECK_FALSE(static_cast<bool>(analytic_seed_fn(gcp, "nope")));

  // a penalty list capped below 100 is flagged in the notes
  CalmnessOptions low;
  low.mu_list = {0.0, 4.0};
  low.radii = {1e-1};
  low.seeds = analytic_seed_fn(gcp, "example_3_1");
  const CalmnessVerdict v = test_partial_calmness(gcp, origin, low);
  bool noted = false;
  for (const auto& note : v.meta.notes)
    noted = noted || note.find("below 100") != std::string::npos;
  CHECK(noted);
}
