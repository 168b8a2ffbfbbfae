#pragma once

#include <vector>

#include "mdpcf/encoding.hpp"
#include "mdpcf/mdp_core.hpp"
#include "mdpcf/solver.hpp"

namespace mdpcf {

/// Settings for growing a collection of alternative strategies that all meet
/// the reachability bound while staying spread out from one another.
struct DiversityConfig {
  /// Number of strategies to produce.
  int count = 3;
  /// Weight of the spread reward: each new member minimizes its distance to
  /// the input strategy minus lambda times the determinant of the inverse
  /// pairwise-distance matrix over the members so far plus the candidate.
  double lambda = 2.0;
  /// Added to the matrix diagonal so it stays invertible even when members
  /// coincide.
  double perturbation = 1e-4;
  /// Coefficients of the distance part of the member objective.
  DistanceConfig base{};

  void validate() const;
};

struct DiverseSet {
  /// Verdict of the underlying feasibility question. When it is Infeasible
  /// (or the first solve timed out) the member list is empty and min_reach
  /// carries the certificate.
  SolveStatus status = SolveStatus::SubOptimal;
  std::vector<SynthesisResult> members;
  /// Inverse pairwise-distance matrix over the final members: entry (i, j)
  /// is 1 / (1 + the raw change mass between members i and j), with
  /// 1 + perturbation on the diagonal.
  std::vector<std::vector<double>> pairwise;
  /// Determinant of the growing matrix after each member was added.
  std::vector<double> determinant_trace;
  /// Per member, the fraction of its changed state-action pairs that no
  /// earlier member changed.
  std::vector<double> novel_fractions;
  double min_reach = 0.0;
};

/// Sum over decision states of the total-variation change between two
/// strategies. Unlike the averaged criterion inside the combined distance,
/// this is the raw sum, which keeps each matrix entry below one.
double raw_change_mass(const Mdp& m, const Strategy& a, const Strategy& b);

/// Determinant of the inverse pairwise-distance matrix over the given
/// strategies, diagonal 1 + perturbation. Invariant under reordering.
double diversity_determinant(const Mdp& m, const std::vector<Strategy>& strategies,
                             double perturbation);

/// Fraction of the candidate's changed state-action pairs (relative to
/// sigma0, beyond the change tolerance) that none of the previous strategies
/// changed. Zero when the candidate changes nothing.
double novel_fraction(const Mdp& m, const Strategy& sigma0, const Strategy& candidate,
                      const std::vector<Strategy>& previous);

/// Iteratively builds `count` strategies. The first is the plain synthesis
/// result; each further one trades closeness to the input strategy against
/// spread from all earlier members.
DiverseSet diverse_synthesize(const SynthesisQuery& q, const DiversityConfig& dcfg,
                              const SolverConfig& scfg = {});

}  // namespace mdpcf
