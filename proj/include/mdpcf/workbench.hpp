#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mdpcf/encoding.hpp"
#include "mdpcf/mdp_core.hpp"
#include "mdpcf/solver.hpp"

namespace mdpcf {

/// Event traces parsed from plain text: one trace per line, labels separated
/// by commas, everything after '#' ignored. Blank lines are skipped.
struct TraceLog {
  std::vector<std::vector<std::string>> traces;
  /// Distinct labels in first-occurrence order.
  std::vector<std::string> alphabet;
};

TraceLog parse_traces(const std::string& text, const std::string& origin = "<string>");
TraceLog load_traces(const std::string& path);

/// Settings for estimating a model from a trace log.
struct LearnConfig {
  /// States are the last-`history` event histories seen in the log.
  int history = 1;
  /// Additive smoothing over the observed successors of each row.
  double smoothing = 0.0;
  /// Traces with fewer events than this end in the absorbing state
  /// "negative"; longer ones end in "positive".
  int short_threshold = 15;

  void validate() const;
};

/// Frequency-estimated model: one state per observed history (plus "start"
/// and the terminal states), one action per event label, deterministic for a
/// given log. The event labels "start", "negative" and "positive" are
/// reserved and rejected.
Mdp learn_mdp(const TraceLog& log, const LearnConfig& cfg = {});

/// Independent symmetric Dirichlet(1) row for every decision state;
/// single-action rows are fixed. Deterministic per (model fingerprint, seed).
Strategy random_strategy(const Mdp& m, std::uint64_t seed);

struct LabeledStrategy {
  std::uint64_t seed = 0;
  Strategy strategy;
};

/// Strategies for seeds first_seed, first_seed + 1, ...
std::vector<LabeledStrategy> random_strategies(const Mdp& m, int count,
                                               std::uint64_t first_seed);

/// The benchmark bound grid: {0.0001} followed by 0.1, 0.2, ..., 1.0.
std::vector<double> default_gamma_grid();

struct SweepConfig {
  std::string model_name = "model";
  std::vector<double> gammas = default_gamma_grid();
  DistanceConfig distances{};
  SolverConfig solver{};
  /// Maximum number of concurrent runs; 1 runs sequentially with identical
  /// results.
  int jobs = 1;
  /// Reports every wall time as zero so output is byte-reproducible.
  bool fixed_timing = false;
};

struct BenchRun {
  std::string model;
  double gamma = 0.0;
  std::uint64_t strategy_seed = 0;
  SolveStatus status = SolveStatus::SubOptimal;
  double wall_time_s = 0.0;
  double distance_combined = 0.0;
  double reach_after = 0.0;
  /// Nonempty when the run raised an error instead of finishing.
  std::string error;
};

struct BenchAggregate {
  std::string model;
  int runs = 0;
  double mean_t = 0.0;
  double std_t = 0.0;
  double min_t = 0.0;
  double max_t = 0.0;
  /// Satisfied-without-change runs are folded into `optimal` here; the CSV
  /// rows keep the distinction.
  int optimal = 0;
  int infeasible = 0;
  int timeout = 0;
  int suboptimal = 0;
  int errors = 0;
};

struct BenchReport {
  std::vector<BenchRun> rows;
  std::vector<BenchAggregate> aggregates;

  /// Columns: model,gamma,strategy_seed,status,wall_time_s,
  /// distance_combined,reach_after.
  std::string to_csv() const;
  /// Fixed-width summary with mean/std/min/max times and status counts.
  std::string to_table() const;
};

/// Runs synthesis for every (strategy, gamma) pair. A run that throws is
/// recorded as an error row; the sweep itself always completes.
BenchReport gamma_sweep(const Mdp& m, int target,
                        const std::vector<LabeledStrategy>& strategies,
                        const SweepConfig& cfg);

/// Canonical result document: {"status","gamma","target","reach_before",
/// "reach_after","distance":{...},"strategy","wall_time_s","seed"} in that
/// key order; "strategy" is null when the result carries none.
std::string result_to_json(const Mdp& m, const SynthesisQuery& q,
                           const SynthesisResult& r, bool fixed_timing = false);

}  // namespace mdpcf
