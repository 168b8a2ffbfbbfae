#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <vector>

#include "doctest.h"
#include "mdpcf/diversity.hpp"
#include "mdpcf/encoding.hpp"
#include "mdpcf/reachability.hpp"
#include "support.hpp"

using namespace mdpcf;
using namespace mdpcf::testing;

namespace {

SynthesisQuery loan_query(double gamma) {
  SynthesisQuery q;
  q.mdp = loan_mdp();
  q.sigma = impatient_strategy();
  q.target = kRejected;
  q.gamma = gamma;
  return q;
}

/// Same strategy except the first move becomes the consultation branch; the
/// only changed row has disjoint support, so the change mass is exactly one.
Strategy consult_first_strategy() {
  Strategy s = impatient_strategy();
  s.choices[kS0] = Distribution({{kConsult, 1.0}});
  return s;
}

Strategy error_row_strategy() {
  Strategy s = impatient_strategy();
  s.choices[kError] = Distribution({{kConsult, 0.9}, {kQuit, 0.1}});
  return s;
}

bool same_rows(const Mdp& m, const Strategy& a, const Strategy& b) {
  for (int s = 0; s < m.num_states(); ++s) {
    if (!(a.row(s) == b.row(s))) return false;
  }
  return true;
}

constexpr double kPerturbation = 1e-4;

}  // namespace

TEST_CASE("change mass sums rows instead of averaging them") {
  const Mdp m = loan_mdp();
  const Strategy sigma = impatient_strategy();
  const Strategy patient = patient_rework_strategy();

  CHECK(raw_change_mass(m, sigma, patient) == doctest::Approx(0.56).epsilon(1e-12));
  CHECK(raw_change_mass(m, sigma, sigma) == 0.0);
  CHECK(raw_change_mass(m, sigma, consult_first_strategy()) ==
        doctest::Approx(1.0).epsilon(1e-12));

  // The averaged criterion divides by the number of decision states (four).
  const DistanceBreakdown d = strategy_distance(m, sigma, patient, {});
  CHECK(d.d1 == doctest::Approx(0.14).epsilon(1e-12));
}

TEST_CASE("determinant of the inverse-distance matrix on known inputs") {
  const Mdp m = loan_mdp();
  const Strategy sigma = impatient_strategy();
  const Strategy patient = patient_rework_strategy();
  const Strategy consult = consult_first_strategy();

  SUBCASE("a single strategy gives the perturbed diagonal") {
    CHECK(diversity_determinant(m, {sigma}, kPerturbation) ==
          doctest::Approx(1.0 + kPerturbation).epsilon(1e-15));
  }

  SUBCASE("two identical strategies are held apart only by the perturbation") {
    const double expected = (1.0 + kPerturbation) * (1.0 + kPerturbation) - 1.0;
    CHECK(diversity_determinant(m, {patient, patient}, kPerturbation) ==
          doctest::Approx(expected).epsilon(1e-12));
  }

  SUBCASE("two strategies one change-mass apart") {
    const double expected =
        (1.0 + kPerturbation) * (1.0 + kPerturbation) - 0.25;
    CHECK(diversity_determinant(m, {sigma, consult}, kPerturbation) ==
          doctest::Approx(expected).epsilon(1e-12));
  }

  SUBCASE("reordering the strategies does not change the determinant") {
    const double a = diversity_determinant(m, {sigma, patient, consult}, kPerturbation);
    const double b = diversity_determinant(m, {consult, sigma, patient}, kPerturbation);
    const double c = diversity_determinant(m, {patient, consult, sigma}, kPerturbation);
    CHECK(a == doctest::Approx(b).epsilon(1e-12));
    CHECK(a == doctest::Approx(c).epsilon(1e-12));
  }

  SUBCASE("spreading strategies increases the determinant") {
    const double close = diversity_determinant(m, {sigma, sigma}, kPerturbation);
    const double far = diversity_determinant(m, {sigma, consult}, kPerturbation);
    CHECK(far > close);
  }

  CHECK_THROWS_AS(diversity_determinant(m, {}, kPerturbation), ModelError);
}

TEST_CASE("novelty counts changed pairs no earlier member touched") {
  const Mdp m = loan_mdp();
  const Strategy sigma = impatient_strategy();
  const Strategy patient = patient_rework_strategy();
  const Strategy error_row = error_row_strategy();

  CHECK(novel_fraction(m, sigma, patient, {}) == 1.0);
  CHECK(novel_fraction(m, sigma, patient, {patient}) == 0.0);
  CHECK(novel_fraction(m, sigma, patient, {error_row}) == 1.0);
  CHECK(novel_fraction(m, sigma, sigma, {patient}) == 0.0);

  // Candidate changes both the error row and the rework row (four pairs);
  // a previous member already changed the error row (two of them).
  Strategy both = patient;
  both.choices[kError] = Distribution({{kConsult, 0.9}, {kQuit, 0.1}});
  CHECK(novel_fraction(m, sigma, both, {error_row}) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("configuration validation rejects out-of-range settings") {
  DiversityConfig bad;
  bad.count = 0;
  CHECK_THROWS_AS(bad.validate(), ModelError);
  bad = DiversityConfig{};
  bad.perturbation = 0.0;
  CHECK_THROWS_AS(bad.validate(), ModelError);
  bad = DiversityConfig{};
  bad.lambda = -1.0;
  CHECK_THROWS_AS(bad.validate(), ModelError);
}

TEST_CASE("a single-member set reproduces the plain synthesis result") {
  SynthesisQuery q = loan_query(0.2);
  // The member objective must use the configured base coefficients, not the
  // ones carried by the query.
  q.distances.r0 = 7.0;
  q.distances.r1 = 7.0;
  q.distances.rinf = 7.0;

  DiversityConfig dcfg;
  dcfg.count = 1;
  SolverConfig scfg;
  scfg.starts = 6;
  scfg.certify = false;

  const DiverseSet ds = diverse_synthesize(q, dcfg, scfg);
  REQUIRE(ds.members.size() == 1);

  SynthesisQuery plain = loan_query(0.2);
  const SynthesisResult direct = solve(plain, scfg);
  CHECK(same_rows(q.mdp, ds.members[0].strategy, direct.strategy));
  CHECK(ds.members[0].distance.combined == direct.distance.combined);

  const DistanceBreakdown recomputed =
      strategy_distance(q.mdp, q.sigma, ds.members[0].strategy, dcfg.base);
  CHECK(ds.members[0].distance.combined == recomputed.combined);

  REQUIRE(ds.determinant_trace.size() == 1);
  CHECK(ds.determinant_trace[0] ==
        doctest::Approx(1.0 + kPerturbation).epsilon(1e-15));
  REQUIRE(ds.novel_fractions.size() == 1);
  CHECK(ds.novel_fractions[0] == 1.0);
  REQUIRE(ds.pairwise.size() == 1);
  CHECK(ds.pairwise[0][0] == 1.0 + kPerturbation);
}

TEST_CASE("zero spread weight collapses every member onto the first") {
  const SynthesisQuery q = loan_query(0.2);
  DiversityConfig dcfg;
  dcfg.count = 3;
  dcfg.lambda = 0.0;
  SolverConfig scfg;
  scfg.starts = 6;
  scfg.certify = false;

  const DiverseSet ds = diverse_synthesize(q, dcfg, scfg);
  REQUIRE(ds.members.size() == 3);
  for (size_t i = 0; i < ds.members.size(); ++i) {
    CHECK(strategy_reach_probability(q.mdp, ds.members[i].strategy, q.target) <=
          q.gamma + 1e-9);
    for (size_t j = i + 1; j < ds.members.size(); ++j) {
      CHECK(raw_change_mass(q.mdp, ds.members[i].strategy,
                            ds.members[j].strategy) <= 1e-5);
    }
  }
}

TEST_CASE("a three-member set keeps every member feasible and reports its spread") {
  const SynthesisQuery q = loan_query(0.2);
  DiversityConfig dcfg;
  SolverConfig scfg;
  scfg.starts = 8;
  scfg.certify = false;

  const DiverseSet ds = diverse_synthesize(q, dcfg, scfg);
  CHECK(ds.status != SolveStatus::Infeasible);
  CHECK(ds.status != SolveStatus::Timeout);
  REQUIRE(ds.members.size() == 3);
  CHECK(ds.min_reach == doctest::Approx(0.02).epsilon(1e-12));

  for (const SynthesisResult& member : ds.members) {
    CHECK(member.reach_after <= q.gamma + 1e-7);
    CHECK(strategy_reach_probability(q.mdp, member.strategy, q.target) <=
          q.gamma + 1e-9);
  }

  // The first member is exactly the plain synthesis result.
  const SynthesisResult direct = solve(q, scfg);
  CHECK(same_rows(q.mdp, ds.members[0].strategy, direct.strategy));

  REQUIRE(ds.pairwise.size() == 3);
  for (size_t i = 0; i < 3; ++i) {
    REQUIRE(ds.pairwise[i].size() == 3);
    CHECK(ds.pairwise[i][i] == 1.0 + kPerturbation);
    for (size_t j = 0; j < 3; ++j) {
      CHECK(ds.pairwise[i][j] == ds.pairwise[j][i]);
      if (i != j) {
        CHECK(ds.pairwise[i][j] > 0.0);
        CHECK(ds.pairwise[i][j] <= 1.0);
        const double expected =
            1.0 / (1.0 + raw_change_mass(q.mdp, ds.members[i].strategy,
                                         ds.members[j].strategy));
        CHECK(ds.pairwise[i][j] == doctest::Approx(expected).epsilon(1e-12));
      }
    }
  }

  REQUIRE(ds.determinant_trace.size() == 3);
  CHECK(ds.determinant_trace[0] ==
        doctest::Approx(1.0 + kPerturbation).epsilon(1e-15));
  for (double det : ds.determinant_trace) CHECK(std::isfinite(det));
  std::vector<Strategy> all;
  for (const SynthesisResult& member : ds.members) all.push_back(member.strategy);
  CHECK(ds.determinant_trace.back() ==
        doctest::Approx(diversity_determinant(q.mdp, all, dcfg.perturbation))
            .epsilon(1e-12));

  REQUIRE(ds.novel_fractions.size() == 3);
  CHECK(ds.novel_fractions[0] == 1.0);
  for (double f : ds.novel_fractions) {
    CHECK(f >= 0.0);
    CHECK(f <= 1.0);
  }
}

TEST_CASE("an unreachable bound yields an empty set with the certificate") {
  const SynthesisQuery q = loan_query(0.01);
  const DiverseSet ds = diverse_synthesize(q, DiversityConfig{}, SolverConfig{});
  CHECK(ds.status == SolveStatus::Infeasible);
  CHECK(ds.members.empty());
  CHECK(ds.determinant_trace.empty());
  CHECK(ds.novel_fractions.empty());
  CHECK(ds.min_reach == doctest::Approx(0.02).epsilon(1e-12));
}

TEST_CASE("a slack bound still produces feasible spread-out members") {
  const SynthesisQuery q = loan_query(0.5);
  DiversityConfig dcfg;
  SolverConfig scfg;
  scfg.starts = 4;
  scfg.certify = false;

  const DiverseSet ds = diverse_synthesize(q, dcfg, scfg);
  REQUIRE(ds.members.size() == 3);
  CHECK(ds.members[0].status == SolveStatus::Trivial);
  CHECK(same_rows(q.mdp, ds.members[0].strategy, q.sigma));
  for (const SynthesisResult& member : ds.members) {
    CHECK(strategy_reach_probability(q.mdp, member.strategy, q.target) <=
          q.gamma + 1e-9);
  }
}
