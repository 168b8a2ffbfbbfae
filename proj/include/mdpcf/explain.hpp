#pragma once

#include <string>
#include <vector>

#include "mdpcf/mdp_core.hpp"
#include "mdpcf/solver.hpp"

namespace mdpcf {

/// One action whose probability the recourse text asks to change.
struct ActionEdit {
  int action = 0;
  std::string action_label;
  bool increase = false;
  /// The new probability the action should be played with.
  double probability = 0.0;
};

/// All requested changes within one state: increases first, then decreases,
/// each in ascending action index.
struct StateEdit {
  int state = 0;
  std::string state_label;
  std::vector<ActionEdit> actions;
};

/// Structured recourse summary extracted from a synthesis result: which rows
/// to change and to what, plus the reachability before and after.
struct Explanation {
  std::string target_label;
  double before = 0.0;
  double after = 0.0;
  /// Ascending state index; exactly the states whose row moved beyond the
  /// change tolerance (the same set the d0 criterion counts).
  std::vector<StateEdit> edits;
};

/// Extracts the structured summary. Throws ModelError when the result does
/// not carry a strategy (infeasible or timed-out runs).
Explanation make_explanation(const Mdp& m, const Strategy& sigma,
                             const SynthesisResult& result, int target);

/// Renders the fixed recourse text block:
///   State `<target>' is reached with probability <before>.
///   You can reach `<target>' with probability <after> as follows:
///    In state `<label>'
///     increase|decrease probability of action `<label>' to <p>
/// With no edits the second line onward becomes "No changes required.".
/// Probabilities print with two decimals; an exact zero prints as "0.0".
std::string render(const Explanation& e);

std::string render(const Mdp& m, const Strategy& sigma, const SynthesisResult& result,
                   int target);

}  // namespace mdpcf
