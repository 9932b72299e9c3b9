#include "doctest.h"

#include <cmath>

#include "bilevel/bundled.hpp"
#include "bilevel/reform.hpp"

using namespace bilevel;

namespace {

VectorXd vec(std::initializer_list<double> v) {
  VectorXd out(static_cast<int>(v.size()));
  int i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

const ConstraintRow& row_named(const GenericCombinedProgram& gcp,
                               const std::string& label) {
  for (const auto& r : gcp.rows)
    if (r.label == label) return r;
  throw std::runtime_error("no row labeled " + label);
}

const ResidualEntry& entry_named(const FeasibilityReport& rep,
                                 const std::string& name) {
  for (const auto& e : rep.entries)
    if (e.name == name) return e;
  throw std::runtime_error("no residual entry named " + name);
}

int count_target(const GenericCombinedProgram& gcp, ConeFactor t) {
  int c = 0;
  for (const auto& r : gcp.rows)
    if (r.target == t) ++c;
  return c;
}

}  // namespace

TEST_CASE("kind names round-trip and classify") {
  const ReformKind all[] = {
      ReformKind::VP,       ReformKind::CP,     ReformKind::CPFJ,
      ReformKind::KKTCP,    ReformKind::CPSOC,  ReformKind::FJSOCP,
      ReformKind::R_FJSOCP, ReformKind::R_BSOCP, ReformKind::SSOCP,
      ReformKind::WSOCP,    ReformKind::WSOCPZ, ReformKind::SOCP_B,
      ReformKind::SOCP_W,   ReformKind::SOCP_S};
  for (ReformKind k : all) CHECK(reform_kind_from_name(reform_kind_name(k)) == k);

  CHECK(reform_kind_from_name("r-bsocp") == ReformKind::R_BSOCP);
  CHECK(reform_kind_from_name("R_FJSOCP") == ReformKind::R_FJSOCP);
  CHECK(reform_kind_from_name("socp-b") == ReformKind::SOCP_B);
  CHECK_THROWS_WITH_AS(reform_kind_from_name("bogus"),
                       doctest::Contains("unknown reformulation kind"),
                       ValidationError);

  CHECK(is_membership_kind(ReformKind::KKTCP));
  CHECK(is_membership_kind(ReformKind::FJSOCP));
  CHECK(is_membership_kind(ReformKind::SOCP_W));
  CHECK_FALSE(is_membership_kind(ReformKind::CP));
  CHECK_FALSE(is_membership_kind(ReformKind::WSOCPZ));

  CHECK(sigma_kind_from_name("gphs") == SigmaKind::GPHS);
  CHECK(std::string(sigma_kind_name(SigmaKind::FJSOC)) == "FJSOC");
  CHECK_THROWS_AS(sigma_kind_from_name("nope"), ValidationError);
}

TEST_CASE("layouts and candidate packing") {
  const BilevelProblem e46 = load_bundled("example_4_6");

  SUBCASE("relaxed Fritz John layout") {
    const auto gcp = build(e46, ReformKind::R_FJSOCP);
    const GcpLayout& L = gcp.layout;
    CHECK(L.total() == 7);  // x(2), y(1), u0(1), u(2), d(1)
    CHECK(L.u0_offset() == 3);
    CHECK(L.u_offset() == 4);
    CHECK(L.d_offset() == 6);
    CHECK(static_cast<int>(gcp.vars->size()) == 7);
    CHECK((*gcp.vars)[3] == "u0");
    CHECK((*gcp.vars)[6] == "d1");
    const VectorXd w = vec({0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7});
    CHECK(L.x_of(w).isApprox(vec({0.1, 0.2})));
    CHECK(L.y_of(w)[0] == doctest::Approx(0.3));
    CHECK(L.u0_of(w) == doctest::Approx(0.4));
    CHECK(L.u_of(w).isApprox(vec({0.5, 0.6})));
    CHECK(L.d_of(w)[0] == doctest::Approx(0.7));
  }

  SUBCASE("block extraction") {
    const auto gcp = build(e46, ReformKind::R_BSOCP);
    const VectorXd w = vec({0.1, 0.2, 0.3, 0.4, 0.5, 0.6});
    CHECK(gcp.layout.x_of(w).isApprox(vec({0.1, 0.2})));
    CHECK(gcp.layout.y_of(w)[0] == doctest::Approx(0.3));
    CHECK(gcp.layout.u_of(w).isApprox(vec({0.4, 0.5})));
    CHECK(gcp.layout.d_of(w)[0] == doctest::Approx(0.6));
    CHECK_THROWS_AS(gcp.layout.z_of(w), ValidationError);
    CHECK_THROWS_AS(gcp.layout.x_of(vec({1.0, 2.0})), ValidationError);
  }

  SUBCASE("packing the bundled origin candidate") {
    const auto gcp = build(e46, ReformKind::R_BSOCP);
    const CandidatePoint* c = e46.find_candidate("origin");
    REQUIRE(c != nullptr);
    const VectorXd w = gcp.pack(*c);
    CHECK(w.isApprox(vec({0, 0, 0, 0, 0, 1})));  // d = 1 from the file
  }

  SUBCASE("Fritz John embedding when u0 is absent") {
    const auto gcp = build(e46, ReformKind::CPFJ);
    CandidatePoint c;
    c.name = "kkt";
    c.x = vec({0, 0});
    c.y = vec({0});
    c.u = vec({2, 3});
    const VectorXd w = gcp.pack(c);
    CHECK(w[gcp.layout.u0_offset()] == doctest::Approx(1.0 / 6.0));
    CHECK(gcp.layout.u_of(w).isApprox(vec({2.0 / 6.0, 3.0 / 6.0})));
    // sums to one on the Fritz John simplex
    CHECK(w[gcp.layout.u0_offset()] + gcp.layout.u_of(w).sum() ==
          doctest::Approx(1.0));

    c.u0 = 0.25;  // explicit weight is taken verbatim
    const VectorXd w2 = gcp.pack(c);
    CHECK(w2[gcp.layout.u0_offset()] == doctest::Approx(0.25));
    CHECK(gcp.layout.u_of(w2).isApprox(vec({2, 3})));
  }

  SUBCASE("slack lifting when z and lambda are absent") {
    const BilevelProblem e48 = load_bundled("example_4_8");
    const auto gcp = build(e48, ReformKind::WSOCPZ);
    const CandidatePoint* c = e48.find_candidate("origin");
    REQUIRE(c != nullptr);
    const VectorXd w = gcp.pack(*c);
    // g = (-y-1, y-1) = (-1, -1) at the origin, so z_i = 1
    CHECK(gcp.layout.z_of(w).isApprox(vec({1, 1})));
    CHECK(gcp.layout.lambda_of(w).isApprox(vec({0, 0})));
  }

  SUBCASE("packing errors") {
    const auto gcp = build(e46, ReformKind::CP);
    CandidatePoint c;
    c.name = "bad";
    c.x = vec({0});  // needs length 2
    c.y = vec({0});
    CHECK_THROWS_WITH_AS(gcp.pack(c), doctest::Contains("x block"), ValidationError);
    c.x = vec({0, 0});
    c.u = vec({1});  // needs length 2
    CHECK_THROWS_WITH_AS(gcp.pack(c), doctest::Contains("u block"), ValidationError);
    c.u = VectorXd();  // u required when p > 0
    CHECK_THROWS_AS(gcp.pack(c), ValidationError);
  }
}

TEST_CASE("constraint rows match the closed forms") {
  const BilevelProblem e46 = load_bundled("example_4_6");
  const BilevelProblem e31 = load_bundled("example_3_1");

  SUBCASE("KKT combined program rows") {
    const auto gcp = build(e46, ReformKind::CP);
    REQUIRE(gcp.rows.size() == 5);  // 1 stationarity + 4 upper constraints
    CHECK(count_target(gcp, ConeFactor::Zero) == 1);
    CHECK(count_target(gcp, ConeFactor::NonPos) == 4);
    CHECK(gcp.complementarity);
    CHECK(gcp.side == SideCondition::None);
    CHECK(gcp.has_value_gap);

    // stationarity = y^3 - (x1+x2) y - u1 + u2 on the extended vector
    const auto& st = row_named(gcp, "stationarity[0]");
    for (const VectorXd& w :
         {vec({0.3, -0.1, 0.7, 0.2, 0.9}), vec({1, 1, 0.5, 0, 0}),
          vec({-0.4, 0.8, 1.1, 2.5, 0.3})}) {
      const double x12 = w[0] + w[1], y = w[2], u1 = w[3], u2 = w[4];
      CHECK(st.h_c.eval(w) ==
            doctest::Approx(y * y * y - x12 * y - u1 + u2).epsilon(1e-14));
    }
  }

  SUBCASE("relaxed basic second-order rows") {
    const auto gcp = build(e46, ReformKind::R_BSOCP);
    REQUIRE(gcp.rows.size() == 8);  // 1 stat + 2 direction + 1 curvature + 4 upper
    CHECK(count_target(gcp, ConeFactor::Zero) == 3);
    CHECK(count_target(gcp, ConeFactor::NonPos) == 5);

    const VectorXd w = vec({0.3, 0.2, 0.7, 1.3, 0.4, -0.8});
    const double y = 0.7, u1 = 1.3, u2 = 0.4, d = -0.8, x12 = 0.5;
    CHECK(row_named(gcp, "direction[g0]").h_c.eval(w) ==
          doctest::Approx(-u1 * d).epsilon(1e-14));
    CHECK(row_named(gcp, "direction[g1]").h_c.eval(w) ==
          doctest::Approx(u2 * d).epsilon(1e-14));
    CHECK(row_named(gcp, "curvature").h_c.eval(w) ==
          doctest::Approx(-(3 * y * y - x12) * d * d).epsilon(1e-14));
    CHECK(row_named(gcp, "curvature").target == ConeFactor::NonPos);
    CHECK(row_named(gcp, "direction[g0]").target == ConeFactor::Zero);
  }

  SUBCASE("relaxed Fritz John rows") {
    const auto gcp = build(e46, ReformKind::R_FJSOCP);
    REQUIRE(gcp.rows.size() == 11);  // 1+1 zero rows, 1+1+1+2+4 nonpositive rows
    CHECK(count_target(gcp, ConeFactor::Zero) == 2);
    CHECK(count_target(gcp, ConeFactor::NonPos) == 9);

    const VectorXd w = vec({0.2, 0.1, 0.5, 0.6, 0.3, 0.1, 1.4});
    const double y = 0.5, u0 = 0.6, u1 = 0.3, u2 = 0.1, d = 1.4, x12 = 0.3;
    CHECK(row_named(gcp, "stationarity[0]").h_c.eval(w) ==
          doctest::Approx(u0 * (y * y * y - x12 * y) - u1 + u2).epsilon(1e-14));
    CHECK(row_named(gcp, "normalization").h_c.eval(w) ==
          doctest::Approx(u0 + u1 + u2 - 1.0).epsilon(1e-14));
    CHECK(row_named(gcp, "fj_weight").h_c.eval(w) == doctest::Approx(-u0));
    CHECK(row_named(gcp, "descent[f]").h_c.eval(w) ==
          doctest::Approx((y * y * y - x12 * y) * d).epsilon(1e-14));
    CHECK(row_named(gcp, "descent[g0]").h_c.eval(w) ==
          doctest::Approx(-u1 * d).epsilon(1e-14));
    CHECK(row_named(gcp, "curvature").h_c.eval(w) ==
          doctest::Approx(-u0 * (3 * y * y - x12) * d * d).epsilon(1e-14));
  }

  SUBCASE("squared-slack rows") {
    const BilevelProblem e48 = load_bundled("example_4_8");
    const auto gcp = build(e48, ReformKind::WSOCPZ);
    REQUIRE(gcp.rows.size() == 7);  // 1 stat + 2 slack eq + 2 slack comp + 2 upper
    CHECK_FALSE(gcp.complementarity);
    CHECK(gcp.side == SideCondition::SlackSubspacePsd);
    CHECK(gcp.layout.total() == 6);  // x(1), y(1), z(2), lambda(2)

    const VectorXd w = vec({0.4, 0.9, 0.3, 1.2, -0.7, 0.5});
    const double x = 0.4, y = 0.9, z1 = 0.3, z2 = 1.2, l1 = -0.7, l2 = 0.5;
    CHECK(row_named(gcp, "stationarity[0]").h_c.eval(w) ==
          doctest::Approx(2 * y * y * y - 2 * x * y - l1 + l2).epsilon(1e-14));
    CHECK(row_named(gcp, "slack_feas[0]").h_c.eval(w) ==
          doctest::Approx(-y - 1 + z1 * z1).epsilon(1e-14));
    CHECK(row_named(gcp, "slack_feas[1]").h_c.eval(w) ==
          doctest::Approx(y - 1 + z2 * z2).epsilon(1e-14));
    CHECK(row_named(gcp, "slack_comp[0]").h_c.eval(w) ==
          doctest::Approx(l1 * z1).epsilon(1e-14));
    CHECK(row_named(gcp, "slack_comp[1]").h_c.eval(w) ==
          doctest::Approx(l2 * z2).epsilon(1e-14));
  }

  SUBCASE("unconstrained lower level reduces to stationarity rows") {
    const auto gcp = build(e31, ReformKind::CP);
    REQUIRE(gcp.rows.size() == 1);  // p = 0, q = 0
    const VectorXd w = vec({0.6, 0.8});
    CHECK(gcp.rows[0].h_c.eval(w) ==
          doctest::Approx(0.8 * 0.8 * 0.8 - 0.6 * 0.8).epsilon(1e-14));
    CHECK(gcp.rows[0].target == ConeFactor::Zero);
  }

  SUBCASE("value program rows") {
    const auto gcp = build(e46, ReformKind::VP);
    REQUIRE(gcp.rows.size() == 6);  // 2 lower constraints + 4 upper
    CHECK(count_target(gcp, ConeFactor::NonPos) == 6);
    CHECK_FALSE(gcp.complementarity);
    const VectorXd w = vec({0.1, 0.2, 0.9});
    CHECK(row_named(gcp, "g[0]").h_c.eval(w) == doctest::Approx(-0.9));
    CHECK(row_named(gcp, "g[1]").h_c.eval(w) ==
          doctest::Approx(0.9 - std::sqrt(2.0)).epsilon(1e-14));
  }

  SUBCASE("builder errors") {
    CHECK_THROWS_WITH_AS(build(e46, ReformKind::KKTCP),
                         doctest::Contains("membership-only"), ValidationError);
    CHECK_THROWS_WITH_AS(build(e46, ReformKind::CPSOC), doctest::Contains("p = 0"),
                         ValidationError);
    CHECK_THROWS_WITH_AS(build_membership(e46, ReformKind::CP),
                         doctest::Contains("explicit rows"), ValidationError);
    CHECK_NOTHROW(build(e31, ReformKind::CPSOC));
  }
}

TEST_CASE("penalization reproduces the closed-form objectives") {
  const BilevelProblem e31 = load_bundled("example_3_1");
  const BilevelProblem e46 = load_bundled("example_4_6");

  SUBCASE("quartic example sequence") {
    const auto gcp = build(e31, ReformKind::CP);
    for (double mu : {0.0, 4.0, 10.0}) {
      const auto pen = penalize(gcp, mu);
      CHECK_FALSE(pen.has_value_gap);
      CHECK(pen.mu == mu);
      CHECK(pen.rows.size() == gcp.rows.size());
      for (int k : {2, 3, 7}) {
        const double xk = 1.0 / k;
        const VectorXd w = vec({xk, 0.0});
        const double expected =
            1.0 / (k * k) - 1.0 / k + 0.25 + 0.25 * mu / (k * k);
        CHECK(pen.objective_value(w) == doctest::Approx(expected).epsilon(1e-8));
      }
    }
  }

  SUBCASE("zero weight evaluates the bare upper objective") {
    const auto pen = penalize(build(e31, ReformKind::VP), 0.0);
    const VectorXd w = vec({0.37, -0.21});
    CHECK(pen.objective_value(w) ==
          doctest::Approx(e31.eval_F(vec({0.37}), vec({-0.21}))).epsilon(1e-14));
  }

  SUBCASE("two-variable example sequence") {
    const auto gcp = build(e46, ReformKind::CP);
    for (double mu : {0.0, 4.0, 10.0}) {
      const auto pen = penalize(gcp, mu);
      for (int k : {2, 5, 9}) {
        const VectorXd w = vec({1.0 / k, 1.0 / k, 0.0, 0.0, 0.0});
        const double expected = -2.0 / k + mu / (k * k);
        CHECK(pen.objective_value(w) == doctest::Approx(expected).epsilon(1e-8));
      }
    }
  }

  SUBCASE("errors and oracle sharing") {
    const auto gcp = build(e31, ReformKind::VP);
    CHECK_THROWS_WITH_AS(penalize(gcp, -1.0), doctest::Contains("nonnegative"),
                         ValidationError);
    const auto pen = penalize(gcp, 2.0);
    CHECK_THROWS_WITH_AS(penalize(pen, 1.0), doctest::Contains("no active value gap"),
                         ValidationError);
    CHECK(pen.oracle.get() == gcp.oracle.get());
    CHECK(pen.problem.get() == gcp.problem.get());
  }
}

TEST_CASE("feasibility reports") {
  const BilevelProblem e31 = load_bundled("example_3_1");
  const BilevelProblem e46 = load_bundled("example_4_6");
  const BilevelProblem e48 = load_bundled("example_4_8");

  SUBCASE("value program separates minimizers from stationary points") {
    const auto gcp = build(e31, ReformKind::VP);
    const auto ok = feasible(gcp, vec({0.0, 0.0}));
    CHECK(ok.feasible);
    CHECK(ok.worst_violation <= 0.0);

    // y = 0 is a local max of the lower level at x = 0.25; the gap is
    // f - V = 0 - (-0.25^2 / 4)
    const auto bad = feasible(gcp, vec({0.25, 0.0}));
    CHECK_FALSE(bad.feasible);
    const auto& gap = entry_named(bad, "value_gap");
    CHECK_FALSE(gap.ok);
    CHECK(gap.value == doctest::Approx(0.015625).epsilon(1e-6));

    const auto interior = feasible(gcp, vec({0.25, 0.5}));
    CHECK(interior.feasible);

    // outside the x box
    const auto outside = feasible(gcp, vec({1.5, 0.0}));
    CHECK_FALSE(outside.feasible);
    CHECK_FALSE(entry_named(outside, "x_box[0]").ok);
    CHECK(entry_named(outside, "x_box[0]").value == doctest::Approx(0.5));
  }

  SUBCASE("KKT combined program on the two-variable example") {
    const auto gcp = build(e46, ReformKind::CP);
    const VectorXd origin = gcp.pack(*e46.find_candidate("origin"));
    CHECK(feasible(gcp, origin).feasible);

    const VectorXd corner = gcp.pack(*e46.find_candidate("corner"));
    CHECK(feasible(gcp, corner).feasible);

    // negative multiplier trips the sign entry
    VectorXd w = origin;
    w[gcp.layout.u_offset()] = -0.1;
    const auto rep = feasible(gcp, w);
    CHECK_FALSE(rep.feasible);
    CHECK_FALSE(entry_named(rep, "u[0]").ok);

    // KKT holds at y = 0 for x1 + x2 > 0 but the value gap does not
    const auto rep2 = feasible(gcp, vec({0.5, 0.5, 0.0, 0.0, 0.0}));
    CHECK_FALSE(rep2.feasible);
    CHECK(entry_named(rep2, "stationarity[0]").ok);
    CHECK(entry_named(rep2, "comp[0]").ok);
    const auto& gap = entry_named(rep2, "value_gap");
    CHECK_FALSE(gap.ok);
    CHECK(gap.value == doctest::Approx(0.25).epsilon(1e-6));
  }

  SUBCASE("relaxed basic second-order program accepts the nonzero direction") {
    const auto gcp = build(e46, ReformKind::R_BSOCP);
    const VectorXd origin = gcp.pack(*e46.find_candidate("origin"));
    CHECK(gcp.layout.d_of(origin)[0] == 1.0);
    CHECK(feasible(gcp, origin).feasible);

    // at y = 0, x1 + x2 = 1 the curvature row is +d^2 > 0
    const auto rep = feasible(gcp, vec({0.5, 0.5, 0.0, 0.0, 0.0, 1.0}));
    CHECK_FALSE(rep.feasible);
    const auto& curv = entry_named(rep, "curvature");
    CHECK_FALSE(curv.ok);
    CHECK(curv.value == doctest::Approx(1.0).epsilon(1e-9));
  }

  SUBCASE("Fritz John combined program at the origin") {
    const auto gcp = build(e46, ReformKind::CPFJ);
    const VectorXd w = gcp.pack(*e46.find_candidate("origin"));
    CHECK(gcp.layout.u0_of(w) == doctest::Approx(1.0));
    CHECK(feasible(gcp, w).feasible);

    // breaking the simplex normalization
    VectorXd w2 = w;
    w2[gcp.layout.u0_offset()] = 0.5;
    const auto rep = feasible(gcp, w2);
    CHECK_FALSE(rep.feasible);
    CHECK_FALSE(entry_named(rep, "normalization").ok);
  }

  SUBCASE("squared-slack program checks the lifted second-order condition") {
    const auto gcp = build(e48, ReformKind::WSOCPZ);
    const VectorXd origin = gcp.pack(*e48.find_candidate("origin"));
    const auto rep = feasible(gcp, origin);
    CHECK(rep.feasible);
    CHECK(entry_named(rep, "slack_subspace_psd").ok);

    // saddle: x = 0.3, y = 0 is stationary with lambda = 0 but the slack
    // Hessian has curvature -2x on the slack subspace
    const VectorXd saddle = vec({0.3, 0.0, 1.0, 1.0, 0.0, 0.0});
    const auto bad = feasible(gcp, saddle);
    CHECK_FALSE(bad.feasible);
    CHECK_FALSE(entry_named(bad, "slack_subspace_psd").ok);
    CHECK_FALSE(entry_named(bad, "value_gap").ok);
    CHECK(entry_named(bad, "stationarity[0]").ok);

    // inconsistent z is reported, not thrown
    const VectorXd broken = vec({0.3, 0.0, 2.0, 1.0, 0.0, 0.0});
    const auto rep2 = feasible(gcp, broken);
    CHECK_FALSE(rep2.feasible);
    CHECK_FALSE(entry_named(rep2, "slack_feas[0]").ok);
    CHECK_FALSE(entry_named(rep2, "slack_subspace_psd").ok);
    REQUIRE(!rep2.notes.empty());
  }

  SUBCASE("copositivity side conditions") {
    const auto ssocp = build(e46, ReformKind::SSOCP);
    const VectorXd origin = ssocp.pack(*e46.find_candidate("origin"));
    const auto rep = feasible(ssocp, origin);
    CHECK(rep.feasible);
    CHECK(entry_named(rep, "cone_copositive").ok);

    const auto wsocp = build(e48, ReformKind::WSOCP);
    // x = 0.5, y = 0: unconstrained stationary point with hess f = -1
    const auto bad = feasible(wsocp, vec({0.5, 0.0, 0.0, 0.0}));
    CHECK_FALSE(bad.feasible);
    const auto& sub = entry_named(bad, "subspace_copositive");
    CHECK_FALSE(sub.ok);
    CHECK(sub.value == doctest::Approx(1.0).epsilon(1e-9));

    const auto ssocp48 = build(e48, ReformKind::SSOCP);
    const auto bad2 = feasible(ssocp48, vec({0.5, 0.0, 0.0, 0.0}));
    CHECK_FALSE(entry_named(bad2, "cone_copositive").ok);
  }

  SUBCASE("Hessian side condition on the unconstrained example") {
    const auto gcp = build(e31, ReformKind::CPSOC);
    CHECK(feasible(gcp, vec({0.0, 0.0})).feasible);
    CHECK(feasible(gcp, vec({0.25, 0.5})).feasible);
    // stationary local max: hess = 3 y^2 - x = -0.25
    const auto rep = feasible(gcp, vec({0.25, 0.0}));
    CHECK_FALSE(rep.feasible);
    const auto& h = entry_named(rep, "hessian_psd");
    CHECK_FALSE(h.ok);
    CHECK(h.value == doctest::Approx(0.25).epsilon(1e-9));
  }

  SUBCASE("membership programs") {
    const auto kktcp = build_membership(e46, ReformKind::KKTCP);
    CHECK(kktcp.rows.empty());
    REQUIRE(kktcp.sigma.has_value());
    CHECK(*kktcp.sigma == SigmaKind::KKT);

    const auto at_origin = feasible(kktcp, vec({0.0, 0.0, 0.0}));
    CHECK(at_origin.feasible);
    // 3 box rows + value_gap + sigma + 4 upper-level rows
    CHECK(at_origin.entries.size() == 9);

    // y = 0 stays a KKT point for x1 + x2 > 0, so only the gap fails
    const auto rep = feasible(kktcp, vec({0.5, 0.5, 0.0}));
    CHECK_FALSE(rep.feasible);
    CHECK(entry_named(rep, "sigma[KKT]").ok);
    CHECK_FALSE(entry_named(rep, "value_gap").ok);

    // the strong second-order membership also rejects the point itself
    const auto socps = build_membership(e46, ReformKind::SOCP_S);
    const auto rep2 = feasible(socps, vec({0.5, 0.5, 0.0}));
    CHECK_FALSE(rep2.feasible);
    CHECK_FALSE(entry_named(rep2, "sigma[SSOC]").ok);

    CHECK_THROWS_AS(feasible(kktcp, vec({0.0, 0.0})), ValidationError);
  }
}

TEST_CASE("sigma set membership on the two-variable example") {
  const BilevelProblem e46 = load_bundled("example_4_6");
  LowerOptions lopt;
  const ValueOracle oracle(e46, lopt);
  const VectorXd x = vec({0.3, 0.3});
  const double root = std::sqrt(0.6);

  SUBCASE("pointwise classification") {
    // y = 0: KKT point, local max of the lower level
    CHECK(sigma_membership(oracle, SigmaKind::KKT, x, vec({0.0})));
    CHECK_FALSE(sigma_membership(oracle, SigmaKind::GPHS, x, vec({0.0})));
    CHECK_FALSE(sigma_membership(oracle, SigmaKind::SSOC, x, vec({0.0})));
    CHECK_FALSE(sigma_membership(oracle, SigmaKind::FJSOC, x, vec({0.0})));

    // y = sqrt(x1 + x2): the global minimizer
    CHECK(sigma_membership(oracle, SigmaKind::KKT, x, vec({root})));
    CHECK(sigma_membership(oracle, SigmaKind::GPHS, x, vec({root})));
    CHECK(sigma_membership(oracle, SigmaKind::SSOC, x, vec({root})));
    CHECK(sigma_membership(oracle, SigmaKind::BSOC, x, vec({root})));
    CHECK(sigma_membership(oracle, SigmaKind::WSOC, x, vec({root})));
    CHECK(sigma_membership(oracle, SigmaKind::FJSOC, x, vec({root})));

    // y = 0.4: not stationary
    CHECK_FALSE(sigma_membership(oracle, SigmaKind::KKT, x, vec({0.4})));
    CHECK_FALSE(sigma_membership(oracle, SigmaKind::GPHS, x, vec({0.4})));

    // outside the search box
    CHECK_FALSE(sigma_membership(oracle, SigmaKind::KKT, x, vec({-0.1})));
    CHECK_FALSE(sigma_membership(oracle, SigmaKind::GPHS, x, vec({1.5})));

    // boundary minimizer at the top corner
    const VectorXd ones = vec({1.0, 1.0});
    const VectorXd top = vec({std::sqrt(2.0)});
    CHECK(sigma_membership(oracle, SigmaKind::KKT, ones, top));
    CHECK(sigma_membership(oracle, SigmaKind::GPHS, ones, top));
    CHECK(sigma_membership(oracle, SigmaKind::SSOC, ones, top));

    CHECK_THROWS_AS(
        sigma_membership(oracle, SigmaKind::KKT, vec({0.0}), vec({0.0})),
        ValidationError);
  }

  SUBCASE("problem overload agrees with the oracle overload") {
    for (const VectorXd& y : {vec({0.0}), vec({root}), vec({0.4})}) {
      CHECK(sigma_membership(e46, SigmaKind::KKT, x, y) ==
            sigma_membership(oracle, SigmaKind::KKT, x, y));
      CHECK(sigma_membership(e46, SigmaKind::GPHS, x, y) ==
            sigma_membership(oracle, SigmaKind::GPHS, x, y));
    }
  }

  SUBCASE("inclusion chain and set equality on a grid") {
    int members_gph = 0, members_ssoc = 0, members_kkt = 0;
    for (double s : {-0.5, -0.2, 0.0, 0.2, 0.5, 0.9}) {
      const VectorXd xs = vec({s, s});
      const double ymin = 2.0 * s > 0 ? std::sqrt(2.0 * s) : 0.0;
      for (double y :
           {0.0, 0.2, ymin, 1.0, std::sqrt(2.0)}) {
        const VectorXd yv = vec({y});
        const bool in_gph = sigma_membership(oracle, SigmaKind::GPHS, xs, yv);
        const bool in_ssoc = sigma_membership(oracle, SigmaKind::SSOC, xs, yv);
        const bool in_kkt = sigma_membership(oracle, SigmaKind::KKT, xs, yv);
        const bool in_bsoc = sigma_membership(oracle, SigmaKind::BSOC, xs, yv);
        const bool in_wsoc = sigma_membership(oracle, SigmaKind::WSOC, xs, yv);
        members_gph += in_gph;
        members_ssoc += in_ssoc;
        members_kkt += in_kkt;
        // gph S within the second-order set within the KKT set
        if (in_gph) CHECK(in_ssoc);
        if (in_ssoc) CHECK(in_kkt);
        if (in_ssoc) CHECK(in_bsoc);
        if (in_ssoc) CHECK(in_wsoc);
        // for this example the strong second-order set IS the solution graph
        CHECK(in_ssoc == in_gph);
      }
    }
    // the grid actually separates the three sets
    CHECK(members_gph >= 8);
    CHECK(members_kkt > members_gph);
  }
}

TEST_CASE("weak second-order set equals the solution graph on the third example") {
  const BilevelProblem e48 = load_bundled("example_4_8");
  LowerOptions lopt;
  const ValueOracle oracle(e48, lopt);
  int checked = 0, members = 0;
  for (double xv : {-0.5, 0.0, 0.3, 0.7, 1.0}) {
    const VectorXd x = vec({xv});
    const double r = xv > 0 ? std::sqrt(xv) : 0.0;
    for (double y : {0.0, r, -r, 0.5, -0.5, 1.0, -1.0}) {
      const VectorXd yv = vec({y});
      const bool in_gph = sigma_membership(oracle, SigmaKind::GPHS, x, yv);
      const bool in_wsoc = sigma_membership(oracle, SigmaKind::WSOC, x, yv);
      CHECK(in_gph == in_wsoc);
      ++checked;
      members += in_gph;
    }
  }
  CHECK(checked == 35);
  CHECK(members >= 8);  // both branches of the root locus show up
}

TEST_CASE("relaxed cone rows are sound on sampled critical directions") {
  // Inline instance with a nondegenerate multiplier: f = y1 + y2^2,
  // g = (-y1, -y2); at y = 0 the unique multiplier is u = (1, 0).
  BilevelProblem prob;
  prob.n = 1;
  prob.m = 2;
  prob.p = 2;
  prob.q = 0;
  const std::vector<std::string> names = {"x1", "y1", "y2"};
  prob.F = parse_expr("x1^2 + y1^2 + y2^2", names);
  prob.f = parse_expr("y1 + y2^2", names);
  prob.g.push_back(parse_expr("-y1", names));
  prob.g.push_back(parse_expr("-y2", names));
  prob.x_box = {{-1, 1}};
  prob.y_box = {{-1, 1}, {-1, 1}};
  finalize_problem(prob);

  const VectorXd x = vec({0.0});
  const VectorXd y = vec({0.0, 0.0});
  const MultiplierSet ms = multiplier_set(prob, x, y);
  REQUIRE(ms.nonempty);
  const VectorXd u = ms.representative;
  CHECK(u.isApprox(vec({1.0, 0.0}), 1e-9));

  const VectorXd gf = prob.grad_y_f(x, y);
  const MatrixXd Jg = prob.jac_y_g(x, y);

  SUBCASE("every critical direction satisfies the relaxed rows") {
    const PolyhedralCone cone = critical_cone(prob, x, y);
    Rng rng(7);
    const auto dirs = sample_cone_directions(cone, 1000, rng, Tolerances{}.cone);
    REQUIRE(!dirs.empty());
    std::vector<VectorXd> mults = {u};
    for (const auto& v : ms.vertices) mults.push_back(v);
    for (const VectorXd& d : dirs) {
      CHECK(gf.dot(d) <= 1e-9);
      for (const VectorXd& um : mults)
        for (int j = 0; j < prob.p; ++j)
          CHECK(um[j] * Jg.row(j).dot(d) <= 1e-9);
    }
  }

  SUBCASE("inequality and equality forms of the relaxed set coincide") {
    // {d : grad f . d <= 0, u_j grad g_j . d <= 0} = {d : u_j grad g_j . d = 0}
    PolyhedralCone ineq = PolyhedralCone::all(prob.m);
    MatrixXd I(prob.p + 1, prob.m);
    I.row(0) = gf.transpose();
    for (int j = 0; j < prob.p; ++j) I.row(j + 1) = u[j] * Jg.row(j);
    ineq.I = I;

    PolyhedralCone eq = PolyhedralCone::all(prob.m);
    MatrixXd E(prob.p, prob.m);
    for (int j = 0; j < prob.p; ++j) E.row(j) = u[j] * Jg.row(j);
    eq.E = E;

    Rng rng(11);
    const auto from_ineq = sample_cone_directions(ineq, 500, rng, 1e-10);
    const auto from_eq = sample_cone_directions(eq, 500, rng, 1e-10);
    REQUIRE(!from_ineq.empty());
    REQUIRE(!from_eq.empty());
    for (const VectorXd& d : from_ineq) CHECK(eq.contains(d, 1e-8));
    for (const VectorXd& d : from_eq) CHECK(ineq.contains(d, 1e-8));
  }
}

TEST_CASE("penalized objective dominates the plain objective on the gap-feasible set") {
  const BilevelProblem e46 = load_bundled("example_4_6");
  const auto gcp = build(e46, ReformKind::CP);
  const auto pen = penalize(gcp, 7.0);
  for (const char* name : {"origin", "corner"}) {
    const VectorXd w = gcp.pack(*e46.find_candidate(name));
    REQUIRE(feasible(gcp, w).feasible);
    CHECK(gcp.value_gap(w) >= -1e-8);
    CHECK(gcp.value_gap(w) <= 1e-8);
    const double F = gcp.objective_value(w);
    CHECK(pen.objective_value(w) >= F - 7.0 * 1e-8);
    CHECK(pen.objective_value(w) == doctest::Approx(F).epsilon(1e-7));
  }
}

TEST_CASE("value gap is infinite when the lower level is infeasible") {
  BilevelProblem prob;
  prob.n = 1;
  prob.m = 1;
  prob.p = 1;
  prob.q = 0;
  const std::vector<std::string> names = {"x1", "y1"};
  prob.F = parse_expr("x1 + y1", names);
  prob.f = parse_expr("y1^2", names);
  prob.g.push_back(parse_expr("y1^2 + 1", names));  // never satisfiable
  prob.x_box = {{-1, 1}};
  prob.y_box = {{-1, 1}};
  finalize_problem(prob);

  const auto gcp = build(prob, ReformKind::VP);
  const VectorXd w = vec({0.0, 0.0});
  CHECK(std::isinf(gcp.value_gap(w)));
  const auto rep = feasible(gcp, w);
  CHECK_FALSE(rep.feasible);
  CHECK_FALSE(entry_named(rep, "value_gap").ok);
  REQUIRE(!rep.notes.empty());
  CHECK(std::isinf(penalize(gcp, 1.0).objective_value(w)));
}
