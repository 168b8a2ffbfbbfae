#pragma once

#include "mdpcf/mdp_core.hpp"

/// Reachability probabilities for induced chains and the strategy-free
/// bounds used for feasibility classification.
namespace mdpcf {

/// Value iteration stops once the sup-norm residual drops below this bound.
inline constexpr double kValueIterationTolerance = 1e-10;
inline constexpr int kValueIterationMaxSweeps = 1000000;

/// States from which the target is reachable in the MDP graph under some
/// action sequence with positive probability (the target itself included).
struct ReachAnalysis {
  int target = -1;
  std::vector<char> in_reach;   // indexed by state
  std::vector<int> reach;       // ascending members of the reach set
  std::vector<int> zero;        // ascending states outside the reach set
};

ReachAnalysis reach_set(const Mdp& m, int target);

/// Reachability probabilities of every state in a chain.
struct ReachValues {
  std::vector<double> values;
  /// max over non-target states of |p(s) - sum_s' T(s,s') p(s')|.
  double residual = 0.0;
};

/// Exact probabilities of eventually reaching target from every state of
/// the chain. States that cannot reach the target get probability zero and
/// are eliminated before the sparse linear solve, which guarantees a unique
/// solution; the target itself gets probability one.
ReachValues reach_probability(const Dtmc& chain, int target);

/// Same values via fixed-point iteration (residual kValueIterationTolerance);
/// serves as an independent cross-check of the linear solve.
ReachValues reach_probability_value_iteration(const Dtmc& chain, int target);

/// Reaching probability from the initial state when playing sigma on m.
double strategy_reach_probability(const Mdp& m, const Strategy& sigma, int target);

/// Minimum over all strategies of the probability of reaching target from
/// the initial state, together with a deterministic witness strategy.
///
/// Computed by value iteration on the Bellman minimum equations followed by
/// exact policy evaluation, with greedy improvement until stable. Action
/// ties are broken toward the lowest action id.
struct MinReachResult {
  double value = 0.0;
  Strategy witness;
  std::vector<double> state_values;  // exact values under the witness
};

MinReachResult min_reach_probability(const Mdp& m, int target);

}  // namespace mdpcf
