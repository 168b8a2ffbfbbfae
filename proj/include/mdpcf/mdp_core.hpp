#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

/// Core model types for counterfactual strategy analysis on Markov decision
/// processes: sparse distributions, MDPs with partial transition functions,
/// memoryless strategies, induced Markov chains, and the strategy distance
/// measures built from per-state total variation.
namespace mdpcf {

/// Probability below which an entry is dropped from a sparse support.
inline constexpr double kZeroProbability = 0.0;

/// Tolerance on |sum - 1| within which a distribution is renormalized.
/// Larger deviations are rejected as construction errors.
inline constexpr double kDistributionSumTolerance = 1e-9;

/// Per-state total-variation change below which a state counts as unchanged
/// (used for the d0 norm, change sets, and rendering).
inline constexpr double kChangeTolerance = 1e-6;

/// Errors raised by model construction and validation.
class ModelError : public std::invalid_argument {
 public:
  explicit ModelError(const std::string& what) : std::invalid_argument(what) {}
};

/// Finite discrete probability distribution with sparse support.
///
/// The support is kept sorted by item id and contains no zero entries.
/// Construction validates nonnegativity and renormalizes when the total
/// mass deviates from one by at most kDistributionSumTolerance; larger
/// deviations throw ModelError.
class Distribution {
 public:
  Distribution() = default;

  /// Builds a distribution from (item, probability) pairs. Pairs may arrive
  /// in any order; duplicate items are rejected.
  explicit Distribution(std::vector<std::pair<int, double>> entries);

  /// Point mass on a single item.
  static Distribution dirac(int item);

  const std::vector<std::pair<int, double>>& support() const { return support_; }

  /// Probability of an item (zero when absent from the support).
  double prob(int item) const;

  bool operator==(const Distribution& other) const = default;

 private:
  std::vector<std::pair<int, double>> support_;
};

/// Total variation distance (1/2) * sum |mu1(x) - mu2(x)| over the union of
/// the two supports. Symmetric, in [0, 1].
double tv_distance(const Distribution& mu1, const Distribution& mu2);

/// One enabled action of a state together with its successor distribution.
struct Transition {
  int action = 0;
  Distribution successors;  // over state indices
};

/// Markov decision process with a partial transition function. Every state
/// must enable at least one action. States and actions are referred to by
/// dense indices; labels are carried for I/O and rendering.
struct Mdp {
  std::vector<std::string> state_labels;
  std::vector<std::string> action_labels;
  int initial = 0;
  /// transitions[s] lists the enabled actions of s, sorted by action id.
  std::vector<std::vector<Transition>> transitions;
  /// States whose strategy rows may be edited. Empty optional means every
  /// decision state is editable.
  std::optional<std::set<int>> controllable;

  int num_states() const { return static_cast<int>(state_labels.size()); }
  int num_actions() const { return static_cast<int>(action_labels.size()); }

  /// Enabled action ids of s, ascending.
  std::vector<int> enabled_actions(int s) const;

  /// The successor distribution of (s, a); throws if a is not enabled.
  const Distribution& successors(int s, int a) const;

  bool action_enabled(int s, int a) const;

  /// True when s has at least two enabled actions and, if a controllable
  /// mask is present, s is in it.
  bool state_controllable(int s) const;

  /// Structural consistency check: nonempty state set, valid initial state,
  /// every state with at least one action, action/state indices in range,
  /// rows sorted and duplicate-free. Throws ModelError on violation.
  void validate() const;

  /// Stable 64-bit fingerprint of the structure (labels, transitions with
  /// probability bit patterns, initial state, controllable mask). Used to
  /// key deterministic pseudo-random draws and to tag derived artifacts.
  std::uint64_t fingerprint() const;
};

/// Memoryless strategy: one action distribution per state. Rows must only
/// use enabled actions of the associated MDP; zero-probability actions are
/// absent from the support.
struct Strategy {
  std::vector<Distribution> choices;  // indexed by state

  const Distribution& row(int s) const { return choices.at(static_cast<size_t>(s)); }

  bool operator==(const Strategy& other) const = default;
};

/// Unvalidated strategy data as it arrives from files: per-state rows of
/// (action, probability) pairs, not necessarily normalized.
struct RawStrategy {
  std::vector<std::pair<int, std::vector<std::pair<int, double>>>> rows;
};

/// One rule violation found by validate_strategy.
struct StrategyViolation {
  int state = -1;
  std::string rule;    // e.g. "domain", "disabled-action", "normalization"
  std::string detail;
};

/// Checks raw strategy data against an MDP: the row domain must equal the
/// state set, rows must normalize within tolerance, probabilities must be
/// nonnegative, and only enabled actions may carry positive probability.
std::vector<StrategyViolation> validate_strategy(const Mdp& m, const RawStrategy& raw);

/// Same checks for an already-typed strategy (rows are normalized by
/// construction, so only domain and enabledness can fail).
std::vector<StrategyViolation> validate_strategy(const Mdp& m, const Strategy& sigma);

/// Builds a Strategy from raw data, throwing ModelError with the collected
/// violations when the data is invalid for m.
Strategy make_strategy(const Mdp& m, const RawStrategy& raw);

/// Discrete-time Markov chain with sparse rows (no explicit zeros).
struct Dtmc {
  int initial = 0;
  /// rows[s]: (successor, probability), sorted by successor, sum within
  /// kDistributionSumTolerance of one.
  std::vector<std::vector<std::pair<int, double>>> rows;

  int num_states() const { return static_cast<int>(rows.size()); }
  void validate() const;
};

/// Chain induced by playing sigma on m:
/// T(s, s') = sum_a sigma(s)(a) * T(s, a, s').
Dtmc induce_dtmc(const Mdp& m, const Strategy& sigma);

/// States with at least two enabled actions, ascending. These are the states
/// over which strategy distances are measured.
std::vector<int> decision_states(const Mdp& m);

/// Per-decision-state total variation between two strategies, aligned with
/// decision_states(m).
std::vector<double> distance_vector(const Mdp& m, const Strategy& sigma1,
                                    const Strategy& sigma2);

/// Weights of the combined strategy distance
/// d = r0 * d0 + r1 * d1 + rinf * dinf.
struct DistanceConfig {
  double r0 = 1.0;
  double r1 = 1.0;
  double rinf = 1.0;

  /// All weights must be nonnegative and at least one strictly positive.
  void validate() const;
};

/// Distance between two strategies, broken down by norm:
///   d0   - number of decision states whose change exceeds kChangeTolerance,
///   d1   - average per-decision-state change,
///   dinf - largest per-decision-state change.
struct DistanceBreakdown {
  int d0 = 0;
  double d1 = 0.0;
  double dinf = 0.0;
  double combined = 0.0;
  std::vector<double> per_state;  // aligned with decision_states(m)
};

DistanceBreakdown strategy_distance(const Mdp& m, const Strategy& sigma1,
                                    const Strategy& sigma2, const DistanceConfig& cfg);

}  // namespace mdpcf
