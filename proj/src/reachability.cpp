#include "mdpcf/reachability.hpp"

#include <Eigen/Sparse>
#include <algorithm>
#include <cmath>
#include <deque>

namespace mdpcf {

namespace {

/// Backward closure of {target} along positive-probability edges. The edge
/// relation is supplied as a callback over (state, visit(successor)).
template <typename ForEachPredecessor>
std::vector<char> backward_closure(int n, int target, ForEachPredecessor&& preds_of) {
  std::vector<char> in(static_cast<size_t>(n), 0);
  std::deque<int> queue;
  in[static_cast<size_t>(target)] = 1;
  queue.push_back(target);
  while (!queue.empty()) {
    int s = queue.front();
    queue.pop_front();
    preds_of(s, [&](int pred) {
      if (!in[static_cast<size_t>(pred)]) {
        in[static_cast<size_t>(pred)] = 1;
        queue.push_back(pred);
      }
    });
  }
  return in;
}

double chain_residual(const Dtmc& chain, int target, const std::vector<double>& p) {
  double residual = 0.0;
  for (int s = 0; s < chain.num_states(); ++s) {
    if (s == target) continue;
    double expected = 0.0;
    for (const auto& [succ, q] : chain.rows[static_cast<size_t>(s)]) {
      expected += q * p[static_cast<size_t>(succ)];
    }
    residual = std::max(residual, std::abs(p[static_cast<size_t>(s)] - expected));
  }
  return residual;
}

/// Predecessor lists of a chain (built once per query).
std::vector<std::vector<int>> chain_predecessors(const Dtmc& chain) {
  std::vector<std::vector<int>> preds(static_cast<size_t>(chain.num_states()));
  for (int s = 0; s < chain.num_states(); ++s) {
    for (const auto& [succ, p] : chain.rows[static_cast<size_t>(s)]) {
      (void)p;
      preds[static_cast<size_t>(succ)].push_back(s);
    }
  }
  return preds;
}

void check_target(int n, int target) {
  if (target < 0 || target >= n) throw ModelError("target state out of range");
}

}  // namespace

ReachAnalysis reach_set(const Mdp& m, int target) {
  m.validate();
  check_target(m.num_states(), target);
  std::vector<std::vector<int>> preds(static_cast<size_t>(m.num_states()));
  for (int s = 0; s < m.num_states(); ++s) {
    for (const auto& t : m.transitions[static_cast<size_t>(s)]) {
      for (const auto& [succ, p] : t.successors.support()) {
        (void)p;
        preds[static_cast<size_t>(succ)].push_back(s);
      }
    }
  }
  ReachAnalysis out;
  out.target = target;
  out.in_reach = backward_closure(m.num_states(), target, [&](int s, auto&& visit) {
    for (int pred : preds[static_cast<size_t>(s)]) visit(pred);
  });
  for (int s = 0; s < m.num_states(); ++s) {
    (out.in_reach[static_cast<size_t>(s)] ? out.reach : out.zero).push_back(s);
  }
  return out;
}

ReachValues reach_probability(const Dtmc& chain, int target) {
  chain.validate();
  check_target(chain.num_states(), target);
  const int n = chain.num_states();
  auto preds = chain_predecessors(chain);
  auto can_reach = backward_closure(n, target, [&](int s, auto&& visit) {
    for (int pred : preds[static_cast<size_t>(s)]) visit(pred);
  });

  // Unknowns: states that can reach the target, excluding the target itself.
  std::vector<int> unknown;
  std::vector<int> index(static_cast<size_t>(n), -1);
  for (int s = 0; s < n; ++s) {
    if (s != target && can_reach[static_cast<size_t>(s)]) {
      index[static_cast<size_t>(s)] = static_cast<int>(unknown.size());
      unknown.push_back(s);
    }
  }

  ReachValues out;
  out.values.assign(static_cast<size_t>(n), 0.0);
  out.values[static_cast<size_t>(target)] = 1.0;

  if (!unknown.empty()) {
    const int k = static_cast<int>(unknown.size());
    std::vector<Eigen::Triplet<double>> triplets;
    Eigen::VectorXd b = Eigen::VectorXd::Zero(k);
    for (int i = 0; i < k; ++i) {
      int s = unknown[static_cast<size_t>(i)];
      triplets.emplace_back(i, i, 1.0);
      for (const auto& [succ, p] : chain.rows[static_cast<size_t>(s)]) {
        if (succ == target) {
          b(i) += p;
        } else if (int j = index[static_cast<size_t>(succ)]; j >= 0) {
          // setFromTriplets sums duplicates, so the self-loop entry stacks
          // with the unit diagonal added above.
          triplets.emplace_back(i, j, -p);
        }
      }
    }
    Eigen::SparseMatrix<double> a(k, k);
    a.setFromTriplets(triplets.begin(), triplets.end());
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    lu.compute(a);
    if (lu.info() != Eigen::Success) {
      throw ModelError("reachability system factorization failed");
    }
    Eigen::VectorXd p = lu.solve(b);
    for (int i = 0; i < k; ++i) {
      out.values[static_cast<size_t>(unknown[static_cast<size_t>(i)])] =
          std::clamp(p(i), 0.0, 1.0);
    }
  }
  out.residual = chain_residual(chain, target, out.values);
  return out;
}

ReachValues reach_probability_value_iteration(const Dtmc& chain, int target) {
  chain.validate();
  check_target(chain.num_states(), target);
  const int n = chain.num_states();
  ReachValues out;
  out.values.assign(static_cast<size_t>(n), 0.0);
  out.values[static_cast<size_t>(target)] = 1.0;
  std::vector<double> next(out.values);
  for (int sweep = 0; sweep < kValueIterationMaxSweeps; ++sweep) {
    double delta = 0.0;
    for (int s = 0; s < n; ++s) {
      if (s == target) continue;
      double value = 0.0;
      for (const auto& [succ, p] : chain.rows[static_cast<size_t>(s)]) {
        value += p * out.values[static_cast<size_t>(succ)];
      }
      delta = std::max(delta, std::abs(value - out.values[static_cast<size_t>(s)]));
      next[static_cast<size_t>(s)] = value;
    }
    out.values.swap(next);
    if (delta <= kValueIterationTolerance) break;
  }
  out.residual = chain_residual(chain, target, out.values);
  return out;
}

double strategy_reach_probability(const Mdp& m, const Strategy& sigma, int target) {
  Dtmc chain = induce_dtmc(m, sigma);
  return reach_probability(chain, target)
      .values[static_cast<size_t>(chain.initial)];
}

namespace {

/// States from which some strategy avoids the target forever: the largest
/// set A (target excluded) such that every member has an action whose
/// successors all stay in A. Min-reachability is exactly zero on A.
std::vector<char> avoidable_states(const Mdp& m, int target) {
  const int n = m.num_states();
  std::vector<char> in(static_cast<size_t>(n), 1);
  in[static_cast<size_t>(target)] = 0;
  bool changed = true;
  while (changed) {
    changed = false;
    for (int s = 0; s < n; ++s) {
      if (!in[static_cast<size_t>(s)]) continue;
      bool has_safe_action = false;
      for (const auto& t : m.transitions[static_cast<size_t>(s)]) {
        bool safe = true;
        for (const auto& [succ, p] : t.successors.support()) {
          (void)p;
          if (!in[static_cast<size_t>(succ)]) {
            safe = false;
            break;
          }
        }
        if (safe) {
          has_safe_action = true;
          break;
        }
      }
      if (!has_safe_action) {
        in[static_cast<size_t>(s)] = 0;
        changed = true;
      }
    }
  }
  return in;
}

/// Greedy action choice from state values: lowest expected successor value,
/// ties toward the lowest action id. States in the avoid set prefer the
/// lowest-id action that stays inside it.
Strategy extract_min_witness(const Mdp& m, int target, const std::vector<char>& avoid,
                             const std::vector<double>& values) {
  Strategy witness;
  witness.choices.resize(static_cast<size_t>(m.num_states()));
  for (int s = 0; s < m.num_states(); ++s) {
    const auto& row = m.transitions[static_cast<size_t>(s)];
    int best_action = -1;
    if (s != target && avoid[static_cast<size_t>(s)]) {
      for (const auto& t : row) {
        bool safe = true;
        for (const auto& [succ, p] : t.successors.support()) {
          (void)p;
          if (!avoid[static_cast<size_t>(succ)]) {
            safe = false;
            break;
          }
        }
        if (safe) {
          best_action = t.action;
          break;
        }
      }
    }
    if (best_action < 0) {
      double best_value = 0.0;
      for (const auto& t : row) {
        double value = 0.0;
        for (const auto& [succ, p] : t.successors.support()) {
          value += p * values[static_cast<size_t>(succ)];
        }
        if (best_action < 0 || value < best_value - 1e-12) {
          best_action = t.action;
          best_value = value;
        }
      }
    }
    witness.choices[static_cast<size_t>(s)] = Distribution::dirac(best_action);
  }
  return witness;
}

}  // namespace

MinReachResult min_reach_probability(const Mdp& m, int target) {
  m.validate();
  check_target(m.num_states(), target);
  const int n = m.num_states();
  auto avoid = avoidable_states(m, target);

  // Value iteration on v(s) = min_a sum_s' T(s,a,s') v(s'), from below.
  std::vector<double> v(static_cast<size_t>(n), 0.0);
  v[static_cast<size_t>(target)] = 1.0;
  for (int sweep = 0; sweep < kValueIterationMaxSweeps; ++sweep) {
    double delta = 0.0;
    for (int s = 0; s < n; ++s) {
      if (s == target || avoid[static_cast<size_t>(s)]) continue;
      double best = 2.0;
      for (const auto& t : m.transitions[static_cast<size_t>(s)]) {
        double value = 0.0;
        for (const auto& [succ, p] : t.successors.support()) {
          value += p * v[static_cast<size_t>(succ)];
        }
        best = std::min(best, value);
      }
      delta = std::max(delta, std::abs(best - v[static_cast<size_t>(s)]));
      v[static_cast<size_t>(s)] = best;
    }
    if (delta <= kValueIterationTolerance) break;
  }

  // Exact policy evaluation with greedy improvement until stable. This
  // resolves any near-tie the iteration left behind.
  MinReachResult out;
  out.witness = extract_min_witness(m, target, avoid, v);
  for (int round = 0; round < 100; ++round) {
    out.state_values =
        reach_probability(induce_dtmc(m, out.witness), target).values;
    Strategy improved = extract_min_witness(m, target, avoid, out.state_values);
    if (improved == out.witness) break;
    out.witness = improved;
  }
  out.state_values = reach_probability(induce_dtmc(m, out.witness), target).values;
  out.value = out.state_values[static_cast<size_t>(m.initial)];
  return out;
}

}  // namespace mdpcf
