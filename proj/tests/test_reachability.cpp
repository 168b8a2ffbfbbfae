#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "mdpcf/reachability.hpp"
#include "support.hpp"

using namespace mdpcf;
using namespace mdpcf::testing;

namespace {

// Hand-solved reaching probabilities toward Rejected under the impatient
// strategy, by backward substitution on the induced chain:
//   p(Resubmit) = 0.2
//   p(Rework)   = 0.3 * 0.2 + 0.7          = 0.76
//   p(Applic.)  = 0.5 * 0.76               = 0.38
//   p(Applic.+) = 0.1 * 0.76               = 0.076
//   p(Consult.) = 1, p(Error) = 1
//   p(s0)       = 0.95 * 0.38 + 0.05 * 1   = 0.411
constexpr double kImpatientReach = 0.411;

// Same solve when the Rework row moves to Quit 0.14 / Submit 0.86:
//   p(Rework) = 0.86 * 0.2 + 0.14 = 0.312
//   p(s0)     = 0.95 * 0.5 * 0.312 + 0.05 = 0.1982
constexpr double kPatientReach = 0.1982;

// Minimum over strategies: Consult from s0, Apply after Consultation,
// Submit at Rework gives 0.1 * 0.2 = 0.02 through Application+.
constexpr double kMinReach = 0.02;

}  // namespace

TEST_CASE("reach set of the loan example") {
  Mdp m = loan_mdp();
  ReachAnalysis r = reach_set(m, kRejected);
  CHECK(r.target == kRejected);
  // Every state except Granted can still reach Rejected.
  std::vector<int> expected_zero = {kGranted};
  CHECK(r.zero == expected_zero);
  CHECK(r.reach.size() == 8);
  for (int s : r.reach) CHECK(r.in_reach[static_cast<size_t>(s)]);

  // Granted is reached from everywhere except the absorbing Rejected.
  ReachAnalysis g = reach_set(m, kGranted);
  std::vector<int> expected_zero_g = {kRejected};
  CHECK(g.zero == expected_zero_g);

  CHECK_THROWS_AS(reach_set(m, 99), ModelError);
}

TEST_CASE("exact reaching probability under the impatient strategy") {
  Mdp m = loan_mdp();
  Dtmc chain = induce_dtmc(m, impatient_strategy());
  ReachValues vals = reach_probability(chain, kRejected);
  CHECK(vals.values[kS0] == doctest::Approx(kImpatientReach).epsilon(1e-9));
  CHECK(vals.values[kRejected] == 1.0);
  CHECK(vals.values[kGranted] == 0.0);
  CHECK(vals.values[kError] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(vals.values[kRework] == doctest::Approx(0.76).epsilon(1e-12));
  CHECK(vals.residual <= 1e-8);

  CHECK(strategy_reach_probability(m, impatient_strategy(), kRejected) ==
        doctest::Approx(kImpatientReach).epsilon(1e-9));
}

TEST_CASE("exact reaching probability under the patient counterfactual") {
  Mdp m = loan_mdp();
  CHECK(strategy_reach_probability(m, patient_rework_strategy(), kRejected) ==
        doctest::Approx(kPatientReach).epsilon(1e-9));
}

TEST_CASE("value iteration agrees with the linear solve") {
  Mdp m = loan_mdp();
  Dtmc chain = induce_dtmc(m, impatient_strategy());
  ReachValues exact = reach_probability(chain, kRejected);
  ReachValues iterated = reach_probability_value_iteration(chain, kRejected);
  for (int s = 0; s < chain.num_states(); ++s) {
    CHECK(std::abs(exact.values[static_cast<size_t>(s)] -
                   iterated.values[static_cast<size_t>(s)]) < 1e-7);
  }
  CHECK(iterated.residual <= kValueIterationTolerance);
}

TEST_CASE("reaching the initial state itself is certain") {
  Mdp m = loan_mdp();
  Dtmc chain = induce_dtmc(m, impatient_strategy());
  CHECK(reach_probability(chain, kS0).values[kS0] == 1.0);
}

TEST_CASE("absorbing chains and unreachable targets") {
  // Two-state chain: 0 -> 1 with probability one, both absorbing after.
  Dtmc chain;
  chain.initial = 0;
  chain.rows = {{{1, 1.0}}, {{1, 1.0}}};
  CHECK(reach_probability(chain, 1).values[0] == doctest::Approx(1.0));

  // Target unreachable from the initial state.
  Dtmc split;
  split.initial = 0;
  split.rows = {{{0, 1.0}}, {{1, 1.0}}};
  CHECK(reach_probability(split, 1).values[0] == 0.0);

  // Singular-looking case: state loops with probability one onto itself but
  // can structurally reach the target through elimination of dead rows.
  Dtmc loopy;
  loopy.initial = 0;
  loopy.rows = {{{0, 0.5}, {1, 0.5}}, {{1, 1.0}}};
  CHECK(reach_probability(loopy, 1).values[0] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("minimum reaching probability of the loan example") {
  Mdp m = loan_mdp();
  MinReachResult result = min_reach_probability(m, kRejected);
  CHECK(result.value == doctest::Approx(kMinReach).epsilon(1e-9));
  // The witness must realize its claimed value exactly.
  CHECK(strategy_reach_probability(m, result.witness, kRejected) ==
        doctest::Approx(result.value).epsilon(1e-12));
  // Witness rows are deterministic.
  for (int s = 0; s < m.num_states(); ++s) {
    CHECK(result.witness.row(s).support().size() == 1);
  }
  // Expected decisions: Consult at s0, Apply after Consultation, Submit at
  // Rework, Consult at Error.
  CHECK(result.witness.row(kS0).prob(kConsult) == 1.0);
  CHECK(result.witness.row(kConsultation).prob(kApply) == 1.0);
  CHECK(result.witness.row(kRework).prob(kSubmit) == 1.0);
  CHECK(result.witness.row(kError).prob(kConsult) == 1.0);
}

TEST_CASE("minimum reach from the target state is one") {
  Mdp m = loan_mdp();
  MinReachResult result = min_reach_probability(m, kS0);
  CHECK(result.value == 1.0);
}

TEST_CASE("minimum reach is a lower bound over random strategies") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    Mdp m = random_mdp(seed, {.min_states = 2, .max_states = 5, .max_actions = 3,
                              .max_decision_states = 5, .max_successors = 3});
    int target = static_cast<int>(seed) % m.num_states();
    MinReachResult lower = min_reach_probability(m, target);
    for (std::uint64_t probe = 0; probe < 5; ++probe) {
      Strategy sigma = random_interior_strategy(m, seed * 10 + probe);
      double p = strategy_reach_probability(m, sigma, target);
      CHECK(lower.value <= p + 1e-9);
    }
    // The witness value is achieved by an actual strategy, so it is also an
    // upper bound on the minimum.
    CHECK(strategy_reach_probability(m, lower.witness, target) ==
          doctest::Approx(lower.value).epsilon(1e-12));
  }
}

TEST_CASE("linear solve and value iteration agree on random chains") {
  for (std::uint64_t seed = 100; seed < 130; ++seed) {
    Mdp m = random_mdp(seed, {.min_states = 3, .max_states = 6, .max_actions = 3,
                              .max_decision_states = 6, .max_successors = 3});
    Strategy sigma = random_interior_strategy(m, seed);
    Dtmc chain = induce_dtmc(m, sigma);
    int target = static_cast<int>(seed) % m.num_states();
    ReachValues exact = reach_probability(chain, target);
    ReachValues iterated = reach_probability_value_iteration(chain, target);
    CHECK(exact.residual <= 1e-8);
    for (int s = 0; s < chain.num_states(); ++s) {
      CHECK(std::abs(exact.values[static_cast<size_t>(s)] -
                     iterated.values[static_cast<size_t>(s)]) < 1e-7);
    }
  }
}
