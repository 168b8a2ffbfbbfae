#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "mdpcf/encoding.hpp"
#include "mdpcf/mdp_core.hpp"
#include "mdpcf/reachability.hpp"

namespace mdpcf {

/// Slack for probability-threshold feasibility comparisons.
inline constexpr double kFeasibilityTolerance = 1e-9;

enum class SolveStatus { Optimal, SubOptimal, Infeasible, Timeout, Trivial };

std::string to_string(SolveStatus status);

struct SolverConfig {
  int starts = 16;
  std::uint64_t seed = 1;
  double time_limit_s = 1800.0;
  int max_outer_rounds = 12;
  int max_inner_steps = 60;
  double penalty_initial = 10.0;
  double penalty_growth = 5.0;
  double smoothing_initial = 0.1;
  double smoothing_final = 1e-4;
  /// Compare the solution against a full grid enumeration when the grid is
  /// small enough; agreement upgrades the status to Optimal.
  bool certify = true;
  double certify_step = 0.01;
  double certify_budget = 1.2e8;
  /// Agreement margin as a fraction of r0 + r1 + rinf.
  double certify_margin = 0.05;
};

struct SynthesisResult {
  SolveStatus status = SolveStatus::SubOptimal;
  Strategy strategy;
  DistanceBreakdown distance;
  double reach_before = 0.0;
  double reach_after = 0.0;
  /// Minimum reach probability over strategies that keep non-controllable
  /// rows fixed; certifies Infeasible verdicts.
  double min_reach = 0.0;
  double wall_time_s = 0.0;
  std::uint64_t seed = 0;
  int starts_used = 0;
  /// True when a grid enumeration corroborated the verdict.
  bool certified = false;
  /// Grid optimum minus returned distance when certification ran.
  double certificate_gap = std::numeric_limits<double>::quiet_NaN();
};

/// Copy of the model where every non-editable state keeps only the single
/// mixed row induced by sigma. Minimum reach on the copy is the true best
/// achievable by changing controllable decision rows only.
Mdp freeze_uncontrollable_rows(const Mdp& m, const Strategy& sigma);

/// Exact reach-probability evaluator for strategies that differ from a base
/// strategy only on editable rows (controllable decision states inside the
/// target's ancestor set). All other rows are eliminated from the linear
/// system once, so each evaluation solves a dense system with one row per
/// editable state.
class ReachEvaluator {
 public:
  ReachEvaluator(const Mdp& m, const Strategy& sigma, int target);

  const Mdp& model() const { return *model_; }
  int target() const { return target_; }
  const std::vector<int>& editable_states() const { return editable_; }
  const std::vector<int>& actions(int editable_index) const {
    return actions_[static_cast<size_t>(editable_index)];
  }
  int row_offset(int editable_index) const {
    return offsets_[static_cast<size_t>(editable_index)];
  }
  /// Total number of packed entries (sum of action counts).
  int dimension() const { return offsets_.back(); }

  /// Packed editable-row probabilities (state-major, actions ascending).
  std::vector<double> pack(const Strategy& sigma2) const;
  /// Full strategy from packed rows; other rows come from the base strategy.
  Strategy unpack(const std::vector<double>& x) const;

  /// Reach probability from the initial state under the packed rows.
  double value(const std::vector<double>& x) const;
  /// Reach probability plus its gradient with respect to the packed rows.
  double value_and_gradient(const std::vector<double>& x,
                            std::vector<double>& grad) const;

 private:
  struct Solved;
  Solved assemble_and_solve(const std::vector<double>& x) const;

  const Mdp* model_;
  Strategy base_;
  int target_ = 0;
  // 0 = editable, 1 = frozen inside the ancestor set, 2 = target, 3 = outside.
  int initial_kind_ = 3;
  int initial_index_ = 0;
  std::vector<double> initial_weights_;
  double initial_offset_ = 0.0;
  std::vector<int> editable_;
  std::vector<std::vector<int>> actions_;
  std::vector<int> offsets_;
  // Per packed entry: reduced Bellman row over editable states, constant
  // term, and the exact boolean reach structure used to drop states that
  // lose their path to the target.
  std::vector<std::vector<double>> row_coef_;
  std::vector<double> row_const_;
  std::vector<std::vector<char>> row_supp_;
  std::vector<char> row_hits_;
};

struct GridOracleOptions {
  double step = 0.01;
  /// Maximum number of grid points overall and per state row list.
  double budget = 2.5e8;
  double per_state_budget = 5e6;
  /// Known upper bound; subtrees that cannot beat it are pruned.
  double initial_bound = std::numeric_limits<double>::infinity();
  /// Stop at the first feasible point instead of minimizing.
  bool existence_only = false;
  double time_limit_s = std::numeric_limits<double>::infinity();
};

struct GridOracleResult {
  /// False when the grid exceeds the configured budgets.
  bool available = false;
  /// True when the enumeration ran to completion (or exited early by design).
  bool completed = false;
  bool feasible = false;
  double best_distance = std::numeric_limits<double>::infinity();
  Strategy best_strategy;
  double best_reach = std::numeric_limits<double>::quiet_NaN();
  std::uint64_t evaluations = 0;
};

/// Number of grid points for the query, or infinity past the row budget.
double grid_point_count(const SynthesisQuery& q, double step,
                        double per_state_budget = 5e6);

/// Exhaustive enumeration of per-state probability grids with branch and
/// bound pruning on the distance prefix. Exact within the grid: prunes only
/// subtrees whose distance already exceeds the incumbent (or the distance
/// budget when the query carries one).
GridOracleResult grid_oracle(const SynthesisQuery& q,
                             const GridOracleOptions& options = {});

/// Minimum-change counterfactual synthesis. Multi-start projected gradient
/// with penalty continuation, made exact by a feasibility line search toward
/// the minimum-reach witness, support-restricted re-optimization, and greedy
/// sparsification. When the query carries a distance budget the objective is
/// feasibility alone.
SynthesisResult solve(const SynthesisQuery& q, const SolverConfig& config = {});

}  // namespace mdpcf
