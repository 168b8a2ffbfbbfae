#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <string>

#include "doctest.h"
#include "mdpcf/explain.hpp"
#include "mdpcf/reachability.hpp"
#include "support.hpp"

using namespace mdpcf;
using namespace mdpcf::testing;

namespace {

SynthesisResult loan_result(Strategy strategy, SolveStatus status) {
  SynthesisResult r;
  r.status = status;
  r.strategy = std::move(strategy);
  r.reach_before = 0.411;
  r.reach_after = 0.1982;
  return r;
}

/// Three actions in one decision state, with labels in the style of event
/// logs (punctuation, spaces, hash suffixes).
Mdp punctuated_mdp() {
  Mdp m;
  m.state_labels = {"q27: Nabellen offer.#0", "done"};
  m.action_labels = {"O_SELECTED#1", "W_Valideren aanvraag", "skip.step"};
  m.initial = 0;
  m.transitions.resize(2);
  for (int a = 0; a < 3; ++a) {
    m.transitions[0].push_back(Transition{a, Distribution({{1, 1.0}})});
  }
  m.transitions[1].push_back(Transition{0, Distribution({{1, 1.0}})});
  m.validate();
  return m;
}

}  // namespace

TEST_CASE("the running example renders the exact recourse block") {
  const Mdp m = loan_mdp();
  const Strategy sigma = impatient_strategy();
  const SynthesisResult r =
      loan_result(patient_rework_strategy(), SolveStatus::Optimal);

  const std::string expected =
      "State `Rejected' is reached with probability 0.41.\n"
      "You can reach `Rejected' with probability 0.20 as follows:\n"
      " In state `Rework'\n"
      "  increase probability of action `Submit' to 0.86\n"
      "  decrease probability of action `Quit' to 0.14\n";
  CHECK(render(m, sigma, r, kRejected) == expected);

  const Explanation e = make_explanation(m, sigma, r, kRejected);
  REQUIRE(e.edits.size() == 1);
  CHECK(e.edits[0].state == kRework);
  CHECK(e.edits[0].state_label == "Rework");
  REQUIRE(e.edits[0].actions.size() == 2);
  CHECK(e.edits[0].actions[0].action == kSubmit);
  CHECK(e.edits[0].actions[0].increase);
  CHECK(e.edits[0].actions[0].probability == doctest::Approx(0.86).epsilon(1e-12));
  CHECK(e.edits[0].actions[1].action == kQuit);
  CHECK_FALSE(e.edits[0].actions[1].increase);
  CHECK(e.edits[0].actions[1].probability == doctest::Approx(0.14).epsilon(1e-12));
}

TEST_CASE("rendering is deterministic") {
  const Mdp m = loan_mdp();
  const Strategy sigma = impatient_strategy();
  const SynthesisResult r =
      loan_result(patient_rework_strategy(), SolveStatus::SubOptimal);
  CHECK(render(m, sigma, r, kRejected) == render(m, sigma, r, kRejected));
}

TEST_CASE("a result needing no changes renders the short form") {
  const Mdp m = loan_mdp();
  const Strategy sigma = impatient_strategy();
  SynthesisResult r = loan_result(sigma, SolveStatus::Trivial);
  r.reach_after = r.reach_before;

  const std::string expected =
      "State `Rejected' is reached with probability 0.41.\n"
      "No changes required.\n";
  CHECK(render(m, sigma, r, kRejected) == expected);
}

TEST_CASE("results without a strategy cannot be explained") {
  const Mdp m = loan_mdp();
  const Strategy sigma = impatient_strategy();
  SynthesisResult infeasible;
  infeasible.status = SolveStatus::Infeasible;
  CHECK_THROWS_AS(render(m, sigma, infeasible, kRejected), ModelError);
  CHECK_THROWS_AS(render(m, sigma, loan_result(sigma, SolveStatus::Trivial), 99),
                  ModelError);
}

TEST_CASE("states appear in ascending order and zeros print short") {
  const Mdp m = loan_mdp();
  const Strategy sigma = impatient_strategy();
  Strategy changed = patient_rework_strategy();
  changed.choices[kConsultation] = Distribution({{kApply, 1.0}});
  const SynthesisResult r = loan_result(changed, SolveStatus::SubOptimal);

  const std::string expected =
      "State `Rejected' is reached with probability 0.41.\n"
      "You can reach `Rejected' with probability 0.20 as follows:\n"
      " In state `Consultation'\n"
      "  increase probability of action `Apply' to 1.00\n"
      "  decrease probability of action `Quit' to 0.0\n"
      " In state `Rework'\n"
      "  increase probability of action `Submit' to 0.86\n"
      "  decrease probability of action `Quit' to 0.14\n";
  CHECK(render(m, sigma, r, kRejected) == expected);
}

TEST_CASE("labels with punctuation pass through verbatim") {
  const Mdp m = punctuated_mdp();
  Strategy sigma;
  sigma.choices = {Distribution({{0, 1.0}}), Distribution({{0, 1.0}})};
  Strategy moved;
  moved.choices = {Distribution({{1, 0.4}, {2, 0.6}}), Distribution({{0, 1.0}})};

  SynthesisResult r;
  r.status = SolveStatus::SubOptimal;
  r.strategy = moved;
  r.reach_before = 0.9;
  r.reach_after = 0.05;

  const std::string expected =
      "State `done' is reached with probability 0.90.\n"
      "You can reach `done' with probability 0.05 as follows:\n"
      " In state `q27: Nabellen offer.#0'\n"
      "  increase probability of action `W_Valideren aanvraag' to 0.40\n"
      "  increase probability of action `skip.step' to 0.60\n"
      "  decrease probability of action `O_SELECTED#1' to 0.0\n";
  CHECK(render(m, sigma, r, 1) == expected);
}

TEST_CASE("the rendered numbers reproduce the stored probabilities") {
  const Mdp m = loan_mdp();
  const Strategy sigma = impatient_strategy();
  const SynthesisResult r =
      loan_result(patient_rework_strategy(), SolveStatus::Optimal);
  const std::string text = render(m, sigma, r, kRejected);

  double before = -1.0;
  double after = -1.0;
  REQUIRE(std::sscanf(text.c_str(),
                      "State `Rejected' is reached with probability %lf.\n"
                      "You can reach `Rejected' with probability %lf",
                      &before, &after) == 2);
  CHECK(std::abs(before - r.reach_before) <= 0.005);
  CHECK(std::abs(after - r.reach_after) <= 0.005);
}

TEST_CASE("explained states are exactly the rows the distance counts") {
  const Mdp m = loan_mdp();
  const Strategy sigma = impatient_strategy();

  SynthesisQuery q;
  q.mdp = m;
  q.sigma = sigma;
  q.target = kRejected;
  q.gamma = 0.2;
  SolverConfig scfg;
  scfg.starts = 8;
  scfg.certify = false;
  const SynthesisResult r = solve(q, scfg);
  REQUIRE(r.status != SolveStatus::Infeasible);

  const Explanation e = make_explanation(m, sigma, r, kRejected);
  CHECK(static_cast<int>(e.edits.size()) == r.distance.d0);
  for (size_t i = 1; i < e.edits.size(); ++i) {
    CHECK(e.edits[i - 1].state < e.edits[i].state);
  }
  for (const StateEdit& se : e.edits) {
    bool seen_decrease = false;
    for (const ActionEdit& ae : se.actions) {
      if (!ae.increase) seen_decrease = true;
      if (seen_decrease) CHECK_FALSE(ae.increase);
      CHECK(ae.probability ==
            doctest::Approx(r.strategy.row(se.state).prob(ae.action)).epsilon(1e-15));
    }
  }
}
