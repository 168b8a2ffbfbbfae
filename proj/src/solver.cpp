#include "mdpcf/solver.hpp"

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "solver_internal.hpp"
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <utility>

namespace mdpcf {

namespace {

constexpr double kActiveProbability = 1e-14;
constexpr double kInfinity = std::numeric_limits<double>::infinity();

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double unit_from(std::uint64_t z) {
  return static_cast<double>(z >> 11) * 0x1.0p-53;
}

}  // namespace

std::string to_string(SolveStatus status) {
  switch (status) {
    case SolveStatus::Optimal: return "Optimal";
    case SolveStatus::SubOptimal: return "SubOptimal";
    case SolveStatus::Infeasible: return "Infeasible";
    case SolveStatus::Timeout: return "Timeout";
    case SolveStatus::Trivial: return "Trivial";
  }
  return "Unknown";
}

Mdp freeze_uncontrollable_rows(const Mdp& m, const Strategy& sigma) {
  if (!validate_strategy(m, sigma).empty()) {
    throw ModelError("strategy invalid for the model");
  }
  Dtmc chain = induce_dtmc(m, sigma);
  Mdp out;
  out.state_labels = m.state_labels;
  out.action_labels = m.action_labels;
  out.initial = m.initial;
  out.controllable = m.controllable;
  out.transitions.resize(static_cast<size_t>(m.num_states()));
  for (int s = 0; s < m.num_states(); ++s) {
    if (m.state_controllable(s)) {
      out.transitions[static_cast<size_t>(s)] = m.transitions[static_cast<size_t>(s)];
    } else {
      int action = m.transitions[static_cast<size_t>(s)].front().action;
      out.transitions[static_cast<size_t>(s)].push_back(
          Transition{action, Distribution(chain.rows[static_cast<size_t>(s)])});
    }
  }
  out.validate();
  return out;
}

// ---------------------------------------------------------------------------
// ReachEvaluator

struct ReachEvaluator::Solved {
  Eigen::MatrixXd matrix;
  Eigen::VectorXd p;
  std::vector<char> live;
  bool degraded = false;  // residual too large; use the full chain solve
};

ReachEvaluator::ReachEvaluator(const Mdp& m, const Strategy& sigma, int target)
    : model_(&m), base_(sigma), target_(target) {
  m.validate();
  if (target < 0 || target >= m.num_states()) {
    throw ModelError("target state out of range");
  }
  if (!validate_strategy(m, sigma).empty()) {
    throw ModelError("base strategy invalid for the model");
  }

  ReachAnalysis ancestors = reach_set(m, target);
  const int n = m.num_states();

  std::vector<int> editable_index(static_cast<size_t>(n), -1);
  for (int s : decision_states(m)) {
    if (s == target || !m.state_controllable(s)) continue;
    if (!ancestors.in_reach[static_cast<size_t>(s)]) continue;
    editable_index[static_cast<size_t>(s)] = static_cast<int>(editable_.size());
    editable_.push_back(s);
  }
  const int k = static_cast<int>(editable_.size());
  offsets_.assign(1, 0);
  for (int s : editable_) {
    actions_.push_back(m.enabled_actions(s));
    offsets_.push_back(offsets_.back() + static_cast<int>(actions_.back().size()));
  }

  // Frozen states inside the ancestor set are eliminated against the rows
  // they play under the base strategy.
  Dtmc chain = induce_dtmc(m, sigma);
  std::vector<int> frozen_index(static_cast<size_t>(n), -1);
  std::vector<int> frozen;
  for (int s : ancestors.reach) {
    if (s == target || editable_index[static_cast<size_t>(s)] >= 0) continue;
    frozen_index[static_cast<size_t>(s)] = static_cast<int>(frozen.size());
    frozen.push_back(s);
  }
  const int nf = static_cast<int>(frozen.size());

  Eigen::MatrixXd f_mat = Eigen::MatrixXd::Zero(std::max(nf, 1), std::max(k, 1));
  Eigen::VectorXd g_vec = Eigen::VectorXd::Zero(std::max(nf, 1));
  std::vector<char> frozen_hits(static_cast<size_t>(std::max(nf, 1)), 0);
  std::vector<std::vector<char>> frozen_to(
      static_cast<size_t>(k), std::vector<char>(static_cast<size_t>(std::max(nf, 1)), 0));
  if (nf > 0) {
    std::vector<Eigen::Triplet<double>> triplets;
    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(nf, k + 1);
    std::vector<std::vector<int>> preds(static_cast<size_t>(nf));
    for (int i = 0; i < nf; ++i) {
      int s = frozen[static_cast<size_t>(i)];
      triplets.emplace_back(i, i, 1.0);
      for (const auto& [succ, p] : chain.rows[static_cast<size_t>(s)]) {
        if (succ == target_) {
          rhs(i, k) += p;
          frozen_hits[static_cast<size_t>(i)] = 1;
        } else if (int fj = frozen_index[static_cast<size_t>(succ)]; fj >= 0) {
          triplets.emplace_back(i, fj, -p);
          preds[static_cast<size_t>(fj)].push_back(i);
        } else if (int ej = editable_index[static_cast<size_t>(succ)]; ej >= 0) {
          rhs(i, ej) += p;
          frozen_to[static_cast<size_t>(ej)][static_cast<size_t>(i)] = 1;
        }
      }
    }
    Eigen::SparseMatrix<double> a(nf, nf);
    a.setFromTriplets(triplets.begin(), triplets.end());
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    lu.compute(a);
    if (lu.info() != Eigen::Success) {
      throw ModelError("frozen-state elimination failed to factorize");
    }
    Eigen::MatrixXd solved = lu.solve(rhs);
    if (k > 0) f_mat.leftCols(k) = solved.leftCols(k);
    g_vec.head(nf) = solved.col(k);

    // Backward closures through frozen states: which frozen states have a
    // frozen-only path to the target, and to each editable state.
    auto closure = [&](std::vector<char>& flags) {
      std::vector<int> queue;
      for (int i = 0; i < nf; ++i) {
        if (flags[static_cast<size_t>(i)]) queue.push_back(i);
      }
      while (!queue.empty()) {
        int v = queue.back();
        queue.pop_back();
        for (int u : preds[static_cast<size_t>(v)]) {
          if (!flags[static_cast<size_t>(u)]) {
            flags[static_cast<size_t>(u)] = 1;
            queue.push_back(u);
          }
        }
      }
    };
    closure(frozen_hits);
    for (auto& flags : frozen_to) closure(flags);
  }

  const int dim = offsets_.back();
  row_coef_.assign(static_cast<size_t>(dim), std::vector<double>(static_cast<size_t>(k), 0.0));
  row_const_.assign(static_cast<size_t>(dim), 0.0);
  row_supp_.assign(static_cast<size_t>(dim), std::vector<char>(static_cast<size_t>(k), 0));
  row_hits_.assign(static_cast<size_t>(dim), 0);
  for (int i = 0; i < k; ++i) {
    const auto& acts = actions_[static_cast<size_t>(i)];
    for (size_t ai = 0; ai < acts.size(); ++ai) {
      const size_t e = static_cast<size_t>(offsets_[static_cast<size_t>(i)]) + ai;
      auto& coef = row_coef_[e];
      auto& supp = row_supp_[e];
      for (const auto& [succ, p] :
           m.successors(editable_[static_cast<size_t>(i)], acts[ai]).support()) {
        if (succ == target_) {
          row_const_[e] += p;
          row_hits_[e] = 1;
        } else if (int ej = editable_index[static_cast<size_t>(succ)]; ej >= 0) {
          coef[static_cast<size_t>(ej)] += p;
          supp[static_cast<size_t>(ej)] = 1;
        } else if (int fj = frozen_index[static_cast<size_t>(succ)]; fj >= 0) {
          row_const_[e] += p * g_vec(fj);
          for (int j = 0; j < k; ++j) {
            coef[static_cast<size_t>(j)] += p * f_mat(fj, j);
          }
          if (frozen_hits[static_cast<size_t>(fj)]) row_hits_[e] = 1;
          for (int j = 0; j < k; ++j) {
            if (frozen_to[static_cast<size_t>(j)][static_cast<size_t>(fj)]) {
              supp[static_cast<size_t>(j)] = 1;
            }
          }
        }
      }
    }
  }

  if (m.initial == target_) {
    initial_kind_ = 2;
  } else if (int ei = editable_index[static_cast<size_t>(m.initial)]; ei >= 0) {
    initial_kind_ = 0;
    initial_index_ = ei;
  } else if (int fi = frozen_index[static_cast<size_t>(m.initial)]; fi >= 0) {
    initial_kind_ = 1;
    initial_weights_.resize(static_cast<size_t>(k));
    for (int j = 0; j < k; ++j) initial_weights_[static_cast<size_t>(j)] = f_mat(fi, j);
    initial_offset_ = g_vec(fi);
  } else {
    initial_kind_ = 3;
  }
}

std::vector<double> ReachEvaluator::pack(const Strategy& sigma2) const {
  std::vector<double> x(static_cast<size_t>(dimension()), 0.0);
  for (size_t i = 0; i < editable_.size(); ++i) {
    const Distribution& row = sigma2.row(editable_[i]);
    const auto& acts = actions_[i];
    for (size_t ai = 0; ai < acts.size(); ++ai) {
      x[static_cast<size_t>(offsets_[i]) + ai] = row.prob(acts[ai]);
    }
  }
  return x;
}

Strategy ReachEvaluator::unpack(const std::vector<double>& x) const {
  Strategy out = base_;
  for (size_t i = 0; i < editable_.size(); ++i) {
    const auto& acts = actions_[i];
    std::vector<std::pair<int, double>> row;
    for (size_t ai = 0; ai < acts.size(); ++ai) {
      double p = x[static_cast<size_t>(offsets_[i]) + ai];
      if (p > kZeroProbability) row.emplace_back(acts[ai], p);
    }
    out.choices[static_cast<size_t>(editable_[i])] = Distribution(std::move(row));
  }
  return out;
}

ReachEvaluator::Solved ReachEvaluator::assemble_and_solve(
    const std::vector<double>& x) const {
  const int k = static_cast<int>(editable_.size());
  Solved sol;
  sol.live.assign(static_cast<size_t>(k), 0);

  // A state is live when one of its active actions reaches the target,
  // directly or through other live states.
  bool changed = true;
  while (changed) {
    changed = false;
    for (int i = 0; i < k; ++i) {
      if (sol.live[static_cast<size_t>(i)]) continue;
      const auto& acts = actions_[static_cast<size_t>(i)];
      bool live = false;
      for (size_t ai = 0; ai < acts.size() && !live; ++ai) {
        const size_t e = static_cast<size_t>(offsets_[static_cast<size_t>(i)]) + ai;
        if (x[e] <= kActiveProbability) continue;
        if (row_hits_[e]) {
          live = true;
          break;
        }
        const auto& supp = row_supp_[e];
        for (int j = 0; j < k; ++j) {
          if (supp[static_cast<size_t>(j)] && sol.live[static_cast<size_t>(j)]) {
            live = true;
            break;
          }
        }
      }
      if (live) {
        sol.live[static_cast<size_t>(i)] = 1;
        changed = true;
      }
    }
  }

  sol.matrix = Eigen::MatrixXd::Identity(k, k);
  Eigen::VectorXd c = Eigen::VectorXd::Zero(k);
  for (int i = 0; i < k; ++i) {
    if (!sol.live[static_cast<size_t>(i)]) continue;
    const auto& acts = actions_[static_cast<size_t>(i)];
    for (size_t ai = 0; ai < acts.size(); ++ai) {
      const size_t e = static_cast<size_t>(offsets_[static_cast<size_t>(i)]) + ai;
      const double w = x[e];
      if (w <= kActiveProbability) continue;
      c(i) += w * row_const_[e];
      const auto& coef = row_coef_[e];
      for (int j = 0; j < k; ++j) {
        sol.matrix(i, j) -= w * coef[static_cast<size_t>(j)];
      }
    }
  }
  for (int j = 0; j < k; ++j) {
    if (sol.live[static_cast<size_t>(j)]) continue;
    sol.matrix.col(j).setZero();
    sol.matrix.row(j).setZero();
    sol.matrix(j, j) = 1.0;
    c(j) = 0.0;
  }

  if (k > 0) {
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(sol.matrix);
    sol.p = lu.solve(c);
    if (!sol.p.allFinite() ||
        (sol.matrix * sol.p - c).cwiseAbs().maxCoeff() > 1e-9) {
      sol.degraded = true;
    }
  } else {
    sol.p = Eigen::VectorXd::Zero(0);
  }
  return sol;
}

double ReachEvaluator::value(const std::vector<double>& x) const {
  if (initial_kind_ == 2) return 1.0;
  if (initial_kind_ == 3) return 0.0;
  if (dimension() == 0) {
    return std::clamp(initial_offset_, 0.0, 1.0);
  }
  Solved sol = assemble_and_solve(x);
  if (sol.degraded) {
    return reach_probability(induce_dtmc(*model_, unpack(x)), target_)
        .values[static_cast<size_t>(model_->initial)];
  }
  double v;
  if (initial_kind_ == 0) {
    v = sol.p(initial_index_);
  } else {
    v = initial_offset_;
    for (size_t j = 0; j < initial_weights_.size(); ++j) {
      v += initial_weights_[j] * sol.p(static_cast<Eigen::Index>(j));
    }
  }
  return std::clamp(v, 0.0, 1.0);
}

double ReachEvaluator::value_and_gradient(const std::vector<double>& x,
                                          std::vector<double>& grad) const {
  grad.assign(static_cast<size_t>(dimension()), 0.0);
  if (initial_kind_ == 2) return 1.0;
  if (initial_kind_ == 3) return 0.0;
  if (dimension() == 0) return std::clamp(initial_offset_, 0.0, 1.0);

  const int k = static_cast<int>(editable_.size());
  Solved sol = assemble_and_solve(x);

  Eigen::VectorXd w = Eigen::VectorXd::Zero(k);
  double v;
  if (initial_kind_ == 0) {
    if (sol.live[static_cast<size_t>(initial_index_)]) w(initial_index_) = 1.0;
    v = sol.p(initial_index_);
  } else {
    v = initial_offset_;
    for (int j = 0; j < k; ++j) {
      v += initial_weights_[static_cast<size_t>(j)] * sol.p(j);
      if (sol.live[static_cast<size_t>(j)]) {
        w(j) = initial_weights_[static_cast<size_t>(j)];
      }
    }
  }

  Eigen::PartialPivLU<Eigen::MatrixXd> lu_t(sol.matrix.transpose());
  Eigen::VectorXd lambda = lu_t.solve(w);
  for (int i = 0; i < k; ++i) {
    if (!sol.live[static_cast<size_t>(i)]) continue;
    const auto& acts = actions_[static_cast<size_t>(i)];
    for (size_t ai = 0; ai < acts.size(); ++ai) {
      const size_t e = static_cast<size_t>(offsets_[static_cast<size_t>(i)]) + ai;
      double dot = row_const_[e];
      const auto& coef = row_coef_[e];
      for (int j = 0; j < k; ++j) {
        dot += coef[static_cast<size_t>(j)] * sol.p(j);
      }
      grad[e] = lambda(i) * dot;
    }
  }
  return std::clamp(v, 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Grid oracle

namespace {

double simplex_grid_rows(int steps, int parts) {
  // C(steps + parts - 1, parts - 1)
  double count = 1.0;
  for (int i = 1; i < parts; ++i) {
    count *= static_cast<double>(steps + i) / static_cast<double>(i);
  }
  return count;
}

struct GridRow {
  double delta = 0.0;
  std::vector<double> probs;
};

/// All probability rows with coordinates i/steps for one state, ordered by
/// distance from the base row.
std::vector<GridRow> state_grid_rows(int steps, const std::vector<double>& base) {
  std::vector<GridRow> rows;
  const int parts = static_cast<int>(base.size());
  std::vector<int> counts(static_cast<size_t>(parts), 0);
  std::function<void(int, int)> rec = [&](int pos, int remaining) {
    if (pos + 1 == parts) {
      counts[static_cast<size_t>(pos)] = remaining;
      GridRow row;
      row.probs.resize(static_cast<size_t>(parts));
      double delta = 0.0;
      for (int i = 0; i < parts; ++i) {
        row.probs[static_cast<size_t>(i)] =
            static_cast<double>(counts[static_cast<size_t>(i)]) /
            static_cast<double>(steps);
        delta += std::abs(row.probs[static_cast<size_t>(i)] -
                          base[static_cast<size_t>(i)]);
      }
      row.delta = 0.5 * delta;
      rows.push_back(std::move(row));
      return;
    }
    for (int c = 0; c <= remaining; ++c) {
      counts[static_cast<size_t>(pos)] = c;
      rec(pos + 1, remaining - c);
    }
  };
  rec(0, steps);
  std::stable_sort(rows.begin(), rows.end(),
                   [](const GridRow& a, const GridRow& b) { return a.delta < b.delta; });
  return rows;
}

int grid_steps(double step) {
  int steps = static_cast<int>(std::llround(1.0 / step));
  if (steps < 1 || std::abs(step * steps - 1.0) > 1e-9) {
    throw EncodingError("grid step must divide one");
  }
  return steps;
}

}  // namespace

double grid_point_count(const SynthesisQuery& q, double step, double per_state_budget) {
  q.validate();
  const int steps = grid_steps(step);
  ReachEvaluator eval(q.mdp, q.sigma, q.target);
  double total = 1.0;
  for (size_t i = 0; i < eval.editable_states().size(); ++i) {
    double rows = simplex_grid_rows(
        steps, static_cast<int>(eval.actions(static_cast<int>(i)).size()));
    if (rows > per_state_budget) return kInfinity;
    total *= rows;
    if (total > 1e18) return kInfinity;
  }
  return total;
}

GridOracleResult grid_oracle(const SynthesisQuery& q, const GridOracleOptions& options) {
  q.validate();
  GridOracleResult out;
  const auto start_time = Clock::now();
  const int steps = grid_steps(options.step);
  ReachEvaluator eval(q.mdp, q.sigma, q.target);
  const int k = static_cast<int>(eval.editable_states().size());
  const double denominator =
      static_cast<double>(decision_states(q.mdp).size());

  std::vector<std::vector<GridRow>> rows(static_cast<size_t>(k));
  double total = 1.0;
  std::vector<double> base = eval.pack(q.sigma);
  for (int i = 0; i < k; ++i) {
    const int parts = static_cast<int>(eval.actions(i).size());
    if (simplex_grid_rows(steps, parts) > options.per_state_budget) return out;
    std::vector<double> base_row(
        base.begin() + eval.row_offset(i),
        base.begin() + eval.row_offset(i) + parts);
    rows[static_cast<size_t>(i)] = state_grid_rows(steps, base_row);
    total *= static_cast<double>(rows[static_cast<size_t>(i)].size());
    if (total > options.budget) return out;
  }
  out.available = true;

  const double gamma = q.gamma;
  double prune_limit = options.initial_bound;
  if (q.epsilon) {
    prune_limit = std::min(prune_limit, *q.epsilon + kFeasibilityTolerance + 1e-12);
  }
  std::vector<double> x = base;
  bool aborted = false;

  std::function<bool(int, int, double, double)> descend =
      [&](int depth, int changed, double sum, double max_delta) -> bool {
    if (depth == k) {
      const double cost = static_cast<double>(changed) * q.distances.r0 +
                          (denominator > 0 ? sum / denominator : 0.0) * q.distances.r1 +
                          max_delta * q.distances.rinf;
      ++out.evaluations;
      if ((out.evaluations & 8191u) == 0 &&
          seconds_since(start_time) > options.time_limit_s) {
        aborted = true;
        return false;
      }
      double v = eval.value(x);
      if (v <= gamma + kFeasibilityTolerance &&
          (!q.epsilon || cost <= *q.epsilon + kFeasibilityTolerance)) {
        if (cost < out.best_distance) {
          out.best_distance = cost;
          out.best_strategy = eval.unpack(x);
          out.best_reach = v;
          out.feasible = true;
          if (!q.epsilon) prune_limit = std::min(prune_limit, cost);
        }
        if (options.existence_only) return false;
      }
      return true;
    }
    const auto& state_rows = rows[static_cast<size_t>(depth)];
    const int offset = eval.row_offset(depth);
    const int parts = static_cast<int>(eval.actions(depth).size());
    for (const GridRow& row : state_rows) {
      const int next_changed = changed + (row.delta > kChangeTolerance ? 1 : 0);
      const double next_sum = sum + row.delta;
      const double next_max = std::max(max_delta, row.delta);
      const double bound =
          static_cast<double>(next_changed) * q.distances.r0 +
          (denominator > 0 ? next_sum / denominator : 0.0) * q.distances.r1 +
          next_max * q.distances.rinf;
      if (bound >= prune_limit - 1e-12) break;  // rows are sorted by delta
      for (int a = 0; a < parts; ++a) {
        x[static_cast<size_t>(offset + a)] = row.probs[static_cast<size_t>(a)];
      }
      if (!descend(depth + 1, next_changed, next_sum, next_max)) return false;
    }
    // Restore the base row so shallower levels keep a consistent buffer.
    for (int a = 0; a < parts; ++a) {
      x[static_cast<size_t>(offset + a)] = base[static_cast<size_t>(offset + a)];
    }
    return true;
  };

  descend(0, 0, 0.0, 0.0);
  // An early unwind either found what an existence query asked for or hit
  // the deadline; only the deadline leaves the question unsettled.
  out.completed = !aborted;
  return out;
}

// ---------------------------------------------------------------------------
// Local search

namespace {

/// Euclidean projection of one row onto the probability simplex.
void project_simplex(double* x, int parts) {
  if (parts == 1) {
    x[0] = 1.0;
    return;
  }
  std::vector<double> u(x, x + parts);
  std::sort(u.begin(), u.end(), std::greater<double>());
  double css = 0.0;
  double theta = 0.0;
  for (int j = 0; j < parts; ++j) {
    css += u[static_cast<size_t>(j)];
    double t = (css - 1.0) / static_cast<double>(j + 1);
    if (u[static_cast<size_t>(j)] - t > 0.0) theta = t;
  }
  // theta comes from sums of potentially huge post-step entries, so the
  // clipped row can miss the simplex by about |x| * machine epsilon, which
  // is beyond what exact distribution constructions downstream tolerate.
  double total = 0.0;
  for (int i = 0; i < parts; ++i) {
    x[i] = std::max(x[i] - theta, 0.0);
    total += x[i];
  }
  if (total > 0.0) {
    for (int i = 0; i < parts; ++i) x[i] /= total;
  } else {
    for (int i = 0; i < parts; ++i) x[i] = 1.0 / static_cast<double>(parts);
  }
}

struct SmoothSettings {
  double r0 = 1.0;
  double r1 = 1.0;
  double rinf = 1.0;
  int decision_count = 1;
  double gamma = 0.0;
  double mu = 0.1;
  double rho = 10.0;
};

constexpr double kAbsSmoothing = 1e-9;

double smooth_abs(double v) {
  return std::sqrt(v * v + kAbsSmoothing * kAbsSmoothing) - kAbsSmoothing;
}

/// Smoothed combined distance plus the quadratic threshold penalty. The
/// change count is smoothed with delta / (delta + mu), the maximum with a
/// log-sum-exp at temperature mu.
double smooth_objective(const ReachEvaluator& eval, const std::vector<double>& base,
                        const std::vector<double>& x, const std::vector<char>& mask,
                        const SmoothSettings& s, const detail::ExtraTerm* extra,
                        std::vector<double>* grad) {
  const int k = static_cast<int>(eval.editable_states().size());
  std::vector<double> delta(static_cast<size_t>(k), 0.0);
  for (int i = 0; i < k; ++i) {
    const int offset = eval.row_offset(i);
    const int parts = static_cast<int>(eval.actions(i).size());
    double d = 0.0;
    for (int a = 0; a < parts; ++a) {
      d += smooth_abs(x[static_cast<size_t>(offset + a)] -
                      base[static_cast<size_t>(offset + a)]);
    }
    delta[static_cast<size_t>(i)] = 0.5 * d;
  }

  double d0 = 0.0;
  double d1 = 0.0;
  double max_delta = 0.0;
  for (double d : delta) {
    d0 += d / (d + s.mu);
    d1 += d;
    max_delta = std::max(max_delta, d);
  }
  d1 /= static_cast<double>(std::max(s.decision_count, 1));
  double lse = 0.0;
  double softmax_norm = 0.0;
  std::vector<double> softmax(static_cast<size_t>(k), 0.0);
  if (k > 0) {
    for (int i = 0; i < k; ++i) {
      softmax[static_cast<size_t>(i)] =
          std::exp((delta[static_cast<size_t>(i)] - max_delta) / s.mu);
      softmax_norm += softmax[static_cast<size_t>(i)];
    }
    lse = max_delta + s.mu * std::log(softmax_norm);
  }

  double p;
  std::vector<double> reach_grad;
  if (grad) {
    p = eval.value_and_gradient(x, reach_grad);
  } else {
    p = eval.value(x);
  }
  const double violation = std::max(0.0, p - s.gamma);
  const double f = s.r0 * d0 + s.r1 * d1 + s.rinf * lse + s.rho * violation * violation;

  if (grad) {
    grad->assign(x.size(), 0.0);
    for (int i = 0; i < k; ++i) {
      if (!mask[static_cast<size_t>(i)]) continue;
      const double di = delta[static_cast<size_t>(i)];
      double weight = s.r0 * s.mu / ((di + s.mu) * (di + s.mu)) +
                      s.r1 / static_cast<double>(std::max(s.decision_count, 1));
      if (k > 0 && softmax_norm > 0.0) {
        weight += s.rinf * softmax[static_cast<size_t>(i)] / softmax_norm;
      }
      const int offset = eval.row_offset(i);
      const int parts = static_cast<int>(eval.actions(i).size());
      for (int a = 0; a < parts; ++a) {
        const size_t e = static_cast<size_t>(offset + a);
        const double v = x[e] - base[e];
        const double abs_grad =
            0.5 * v / std::sqrt(v * v + kAbsSmoothing * kAbsSmoothing);
        (*grad)[e] = weight * abs_grad + 2.0 * s.rho * violation * reach_grad[e];
      }
    }
  }
  if (extra && extra->smooth) {
    const double addition = extra->smooth(x, grad);
    if (grad) {
      // Pinned rows stay pinned regardless of what the extra term wants.
      for (int i = 0; i < k; ++i) {
        if (mask[static_cast<size_t>(i)]) continue;
        const int offset = eval.row_offset(i);
        const int parts = static_cast<int>(eval.actions(i).size());
        for (int a = 0; a < parts; ++a) {
          (*grad)[static_cast<size_t>(offset + a)] = 0.0;
        }
      }
    }
    return f + addition;
  }
  return f;
}

void project_rows(const ReachEvaluator& eval, std::vector<double>& x,
                  const std::vector<char>& mask) {
  const int k = static_cast<int>(eval.editable_states().size());
  for (int i = 0; i < k; ++i) {
    if (!mask[static_cast<size_t>(i)]) continue;
    project_simplex(x.data() + eval.row_offset(i),
                    static_cast<int>(eval.actions(i).size()));
  }
}

/// Projected gradient descent with Armijo backtracking under smoothing and
/// penalty continuation. Returns false when the deadline interrupted it.
bool optimize_masked(const ReachEvaluator& eval, const std::vector<double>& base,
                     std::vector<double>& x, const std::vector<char>& mask,
                     const SolverConfig& cfg, const DistanceConfig& weights,
                     int decision_count, double gamma, int outer_rounds,
                     const detail::ExtraTerm* extra, Clock::time_point start_time) {
  SmoothSettings s;
  s.r0 = weights.r0;
  s.r1 = weights.r1;
  s.rinf = weights.rinf;
  s.decision_count = decision_count;
  s.gamma = gamma;

  project_rows(eval, x, mask);
  std::vector<double> grad;
  std::vector<double> candidate(x.size());
  for (int outer = 0; outer < outer_rounds; ++outer) {
    const double t = outer_rounds > 1
                         ? static_cast<double>(outer) / static_cast<double>(outer_rounds - 1)
                         : 1.0;
    s.mu = cfg.smoothing_initial *
           std::pow(cfg.smoothing_final / cfg.smoothing_initial, t);
    s.rho = cfg.penalty_initial * std::pow(cfg.penalty_growth, outer);
    double step = 1.0;
    for (int inner = 0; inner < cfg.max_inner_steps; ++inner) {
      if (seconds_since(start_time) > cfg.time_limit_s) return false;
      const double f = smooth_objective(eval, base, x, mask, s, extra, &grad);
      bool accepted = false;
      double move_sq = 0.0;
      while (step >= 1e-12) {
        for (size_t e = 0; e < x.size(); ++e) {
          candidate[e] = x[e] - step * grad[e];
        }
        project_rows(eval, candidate, mask);
        move_sq = 0.0;
        for (size_t e = 0; e < x.size(); ++e) {
          const double d = candidate[e] - x[e];
          move_sq += d * d;
        }
        const double f_try =
            smooth_objective(eval, base, candidate, mask, s, extra, nullptr);
        if (f_try <= f - 1e-4 * move_sq / std::max(step, 1e-18)) {
          accepted = true;
          break;
        }
        step *= 0.5;
      }
      if (!accepted) break;
      x.swap(candidate);
      step = std::min(step * 1.5, 4.0);
      if (std::sqrt(move_sq) <= 1e-11) break;
    }
  }
  return true;
}

std::vector<double> mix_rows(const std::vector<double>& from,
                             const std::vector<double>& to, double t,
                             const std::vector<char>& mask,
                             const ReachEvaluator& eval) {
  std::vector<double> out = from;
  const int k = static_cast<int>(eval.editable_states().size());
  for (int i = 0; i < k; ++i) {
    if (!mask[static_cast<size_t>(i)]) continue;
    const int offset = eval.row_offset(i);
    const int parts = static_cast<int>(eval.actions(i).size());
    for (int a = 0; a < parts; ++a) {
      const size_t e = static_cast<size_t>(offset + a);
      out[e] = (1.0 - t) * from[e] + t * to[e];
    }
  }
  return out;
}

/// Moves x toward the anchor until the exact reach value satisfies the
/// bound. Returns false when even the anchor itself does not.
bool bisect_to_feasible(const ReachEvaluator& eval, std::vector<double>& x,
                        const std::vector<double>& anchor,
                        const std::vector<char>& mask, double gamma) {
  if (eval.value(x) <= gamma + kFeasibilityTolerance) return true;
  std::vector<double> at_anchor = mix_rows(x, anchor, 1.0, mask, eval);
  if (eval.value(at_anchor) > gamma + kFeasibilityTolerance) return false;
  double lo = 0.0;
  double hi = 1.0;
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (eval.value(mix_rows(x, anchor, mid, mask, eval)) <= gamma) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  x = mix_rows(x, anchor, hi, mask, eval);
  return true;
}

/// Candidate filter used when the objective carries terms beyond the plain
/// distance; an empty function accepts everything.
using AcceptFn =
    std::function<bool(const std::vector<double>&, const std::vector<double>&)>;

/// Pulls x back toward the base rows as far as the bound allows; every step
/// of the mix shrinks all three distance norms (though not necessarily any
/// extra objective term, hence the filter).
void refine_toward_base(const ReachEvaluator& eval, std::vector<double>& x,
                        const std::vector<double>& base,
                        const std::vector<char>& mask, double gamma,
                        const AcceptFn& accept) {
  std::vector<double> refined;
  if (eval.value(mix_rows(x, base, 1.0, mask, eval)) <= gamma) {
    refined = mix_rows(x, base, 1.0, mask, eval);
  } else {
    if (eval.value(x) > gamma) return;
    double lo = 0.0;
    double hi = 1.0;
    for (int it = 0; it < 60; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (eval.value(mix_rows(x, base, mid, mask, eval)) <= gamma) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
    refined = mix_rows(x, base, lo, mask, eval);
  }
  if (!accept || accept(refined, x)) x = std::move(refined);
}

/// Zeroes stray near-zero weights and renormalizes each row. Keeping them
/// would be unsound: an arbitrarily small weight can change which states are
/// absorbing, so the exact reach value may differ wildly from the evaluator's
/// reading that treats such weights as inactive.
constexpr double kSnapProbability = 1e-9;

void snap_rows(const ReachEvaluator& eval, std::vector<double>& x,
               const std::vector<char>& mask) {
  const int k = static_cast<int>(eval.editable_states().size());
  for (int i = 0; i < k; ++i) {
    if (!mask[static_cast<size_t>(i)]) continue;
    const int offset = eval.row_offset(i);
    const int parts = static_cast<int>(eval.actions(i).size());
    double total = 0.0;
    for (int a = 0; a < parts; ++a) {
      const size_t e = static_cast<size_t>(offset + a);
      if (x[e] < kSnapProbability) x[e] = 0.0;
      total += x[e];
    }
    if (total <= 0.0) continue;
    for (int a = 0; a < parts; ++a) {
      x[static_cast<size_t>(offset + a)] /= total;
    }
  }
}

/// Reverts rows to the base wherever the bound stays satisfied, cheapest
/// rows first.
void sparsify_rows(const ReachEvaluator& eval, std::vector<double>& x,
                   const std::vector<double>& base, const std::vector<char>& mask,
                   double gamma, const AcceptFn& accept) {
  const int k = static_cast<int>(eval.editable_states().size());
  std::vector<std::pair<double, int>> order;
  for (int i = 0; i < k; ++i) {
    if (!mask[static_cast<size_t>(i)]) continue;
    const int offset = eval.row_offset(i);
    const int parts = static_cast<int>(eval.actions(i).size());
    double delta = 0.0;
    for (int a = 0; a < parts; ++a) {
      const size_t e = static_cast<size_t>(offset + a);
      delta += std::abs(x[e] - base[e]);
    }
    if (delta > 0.0) order.emplace_back(0.5 * delta, i);
  }
  std::sort(order.begin(), order.end());
  std::vector<double> previous;
  for (const auto& [delta, i] : order) {
    (void)delta;
    const int offset = eval.row_offset(i);
    const int parts = static_cast<int>(eval.actions(i).size());
    if (accept) previous = x;
    std::vector<double> saved(parts);
    for (int a = 0; a < parts; ++a) {
      const size_t e = static_cast<size_t>(offset + a);
      saved[static_cast<size_t>(a)] = x[e];
      x[e] = base[e];
    }
    if (eval.value(x) > gamma + kFeasibilityTolerance ||
        (accept && !accept(x, previous))) {
      for (int a = 0; a < parts; ++a) {
        x[static_cast<size_t>(offset + a)] = saved[static_cast<size_t>(a)];
      }
    }
  }
}

struct Candidate {
  bool valid = false;
  std::vector<double> x;
  Strategy strategy;
  DistanceBreakdown distance;
  double reach = 0.0;
  double composite = std::numeric_limits<double>::infinity();
};

/// Full finishing pipeline: enforce the bound, drop unnecessary changes,
/// shrink the remaining ones, and measure exactly.
Candidate finish(const ReachEvaluator& eval, const SynthesisQuery& q,
                 std::vector<double> x, const std::vector<double>& base,
                 const std::vector<double>& anchor, const std::vector<char>& mask,
                 const AcceptFn& accept, const detail::ExtraTerm* extra) {
  Candidate out;
  if (!bisect_to_feasible(eval, x, anchor, mask, q.gamma)) return out;
  sparsify_rows(eval, x, base, mask, q.gamma, accept);
  refine_toward_base(eval, x, base, mask, q.gamma, accept);
  sparsify_rows(eval, x, base, mask, q.gamma, accept);
  refine_toward_base(eval, x, base, mask, q.gamma, accept);
  snap_rows(eval, x, mask);
  // The exact chain solve is the arbiter: accept only once it confirms the
  // bound, retreating toward the known-feasible anchor if snapping moved it.
  for (int attempt = 0; attempt < 3; ++attempt) {
    Strategy strategy = eval.unpack(x);
    const double exact = strategy_reach_probability(q.mdp, strategy, q.target);
    if (exact <= q.gamma + kFeasibilityTolerance) {
      out.valid = true;
      out.x = std::move(x);
      out.strategy = std::move(strategy);
      out.distance = strategy_distance(q.mdp, q.sigma, out.strategy, q.distances);
      out.reach = exact;
      out.composite = out.distance.combined;
      if (extra && extra->exact) out.composite += extra->exact(out.strategy);
      return out;
    }
    if (!bisect_to_feasible(eval, x, anchor, mask, q.gamma)) return out;
    snap_rows(eval, x, mask);
  }
  return out;
}

std::vector<double> dirichlet_start(const ReachEvaluator& eval,
                                    const std::vector<double>& base,
                                    std::uint64_t seed, int start) {
  std::vector<double> x = base;
  const int k = static_cast<int>(eval.editable_states().size());
  for (int i = 0; i < k; ++i) {
    const int offset = eval.row_offset(i);
    const int parts = static_cast<int>(eval.actions(i).size());
    const std::uint64_t row_seed = splitmix64(
        splitmix64(seed ^ (static_cast<std::uint64_t>(start) + 1)) ^
        (static_cast<std::uint64_t>(eval.editable_states()[static_cast<size_t>(i)]) + 1));
    double total = 0.0;
    std::vector<double> draws(static_cast<size_t>(parts));
    for (int a = 0; a < parts; ++a) {
      const double u =
          unit_from(splitmix64(row_seed + static_cast<std::uint64_t>(a) + 1));
      draws[static_cast<size_t>(a)] = -std::log1p(-u) + 1e-12;
      total += draws[static_cast<size_t>(a)];
    }
    for (int a = 0; a < parts; ++a) {
      x[static_cast<size_t>(offset + a)] = draws[static_cast<size_t>(a)] / total;
    }
  }
  return x;
}

bool better(const Candidate& a, const Candidate& b) {
  if (!b.valid) return a.valid;
  if (!a.valid) return false;
  return a.composite < b.composite - 1e-15;
}

}  // namespace

SynthesisResult detail::solve_internal(const SynthesisQuery& q,
                                       const SolverConfig& config,
                                       const detail::ExtraTerm* extra) {
  q.validate();
  const auto start_time = Clock::now();
  const Mdp& m = q.mdp;

  SynthesisResult result;
  result.seed = config.seed;
  result.reach_before = strategy_reach_probability(m, q.sigma, q.target);
  result.strategy = q.sigma;
  result.reach_after = result.reach_before;
  result.distance = strategy_distance(m, q.sigma, q.sigma, q.distances);

  // Infeasible and timed-out runs deliver no strategy at all so that
  // downstream consumers (reports, explanations) cannot mistake the input
  // strategy for a synthesized one.
  auto finish_without_strategy = [&](SolveStatus status) -> SynthesisResult& {
    result.status = status;
    result.strategy = Strategy{};
    result.distance = DistanceBreakdown{};
    result.reach_after = result.reach_before;
    result.wall_time_s = seconds_since(start_time);
    return result;
  };

  Mdp frozen = freeze_uncontrollable_rows(m, q.sigma);
  MinReachResult min_reach = min_reach_probability(frozen, q.target);
  result.min_reach = min_reach.value;

  if (!extra && result.reach_before <= q.gamma + kFeasibilityTolerance) {
    result.status = SolveStatus::Trivial;
    result.wall_time_s = seconds_since(start_time);
    return result;
  }
  if (min_reach.value > q.gamma + kFeasibilityTolerance) {
    return finish_without_strategy(SolveStatus::Infeasible);
  }

  ReachEvaluator eval(m, q.sigma, q.target);
  const int k = static_cast<int>(eval.editable_states().size());
  const int decision_count = static_cast<int>(decision_states(m).size());
  const std::vector<double> base = eval.pack(q.sigma);
  const std::vector<double> anchor = eval.pack(min_reach.witness);
  const std::vector<char> full_mask(static_cast<size_t>(k), 1);

  AcceptFn accept;
  if (extra) {
    accept = [&](const std::vector<double>& candidate,
                 const std::vector<double>& current) {
      auto composite = [&](const std::vector<double>& x) {
        Strategy s = eval.unpack(x);
        double v = strategy_distance(m, q.sigma, s, q.distances).combined;
        if (extra->exact) v += extra->exact(s);
        return v;
      };
      return composite(candidate) <= composite(current) + 1e-12;
    };
  }

  Candidate best;
  bool timed_out = false;
  int starts_used = 0;
  for (int start = 0; start < config.starts; ++start) {
    if (seconds_since(start_time) > config.time_limit_s) {
      timed_out = true;
      break;
    }
    std::vector<double> x =
        start == 0 ? base : dirichlet_start(eval, base, config.seed, start);
    if (!optimize_masked(eval, base, x, full_mask, config, q.distances,
                         decision_count, q.gamma, config.max_outer_rounds, extra,
                         start_time)) {
      timed_out = true;
    }
    Candidate candidate = finish(eval, q, x, base, anchor, full_mask, accept, extra);
    if (better(candidate, best)) best = candidate;

    // Re-optimize restricted to subsets of the changed rows: single rows and
    // prefixes of the rows ordered by decreasing change.
    if (candidate.valid && !timed_out) {
      std::vector<std::pair<double, int>> changed;
      for (int i = 0; i < k; ++i) {
        const int offset = eval.row_offset(i);
        const int parts = static_cast<int>(eval.actions(i).size());
        double delta = 0.0;
        for (int a = 0; a < parts; ++a) {
          const size_t e = static_cast<size_t>(offset + a);
          delta += std::abs(candidate.x[e] - base[e]);
        }
        if (0.5 * delta > kChangeTolerance) changed.emplace_back(-0.5 * delta, i);
      }
      std::sort(changed.begin(), changed.end());
      std::vector<std::vector<char>> masks;
      for (size_t take = 1; take < changed.size() && take <= 4; ++take) {
        std::vector<char> mask(static_cast<size_t>(k), 0);
        for (size_t j = 0; j < take; ++j) {
          mask[static_cast<size_t>(changed[j].second)] = 1;
        }
        masks.push_back(std::move(mask));
      }
      for (size_t j = 0; j < changed.size() && j < 6; ++j) {
        std::vector<char> mask(static_cast<size_t>(k), 0);
        mask[static_cast<size_t>(changed[j].second)] = 1;
        masks.push_back(std::move(mask));
      }
      std::sort(masks.begin(), masks.end());
      masks.erase(std::unique(masks.begin(), masks.end()), masks.end());
      for (const auto& mask : masks) {
        if (seconds_since(start_time) > config.time_limit_s) {
          timed_out = true;
          break;
        }
        std::vector<double> warm = base;
        for (int i = 0; i < k; ++i) {
          if (!mask[static_cast<size_t>(i)]) continue;
          const int offset = eval.row_offset(i);
          const int parts = static_cast<int>(eval.actions(i).size());
          for (int a = 0; a < parts; ++a) {
            const size_t e = static_cast<size_t>(offset + a);
            warm[e] = candidate.x[e];
          }
        }
        if (!optimize_masked(eval, base, warm, mask, config, q.distances,
                             decision_count, q.gamma,
                             std::max(config.max_outer_rounds / 2, 4), extra,
                             start_time)) {
          timed_out = true;
        }
        Candidate restricted = finish(eval, q, warm, base, anchor, mask, accept, extra);
        if (better(restricted, best)) best = restricted;
      }
    }
    ++starts_used;
    if (timed_out) break;
  }
  result.starts_used = starts_used;

  if (!best.valid) {
    return finish_without_strategy(SolveStatus::Timeout);
  }

  result.strategy = best.strategy;
  result.distance = best.distance;
  result.reach_after = best.reach;

  const double weight_sum = q.distances.r0 + q.distances.r1 + q.distances.rinf;
  const double margin = config.certify_margin * weight_sum;

  if (q.epsilon) {
    if (best.distance.combined <= *q.epsilon + kFeasibilityTolerance) {
      result.status = SolveStatus::Optimal;
    } else if (extra) {
      result.status = SolveStatus::SubOptimal;
    } else if (config.certify &&
               grid_point_count(q, config.certify_step) <= config.certify_budget) {
      GridOracleOptions opts;
      opts.step = config.certify_step;
      opts.budget = config.certify_budget;
      opts.existence_only = true;
      opts.time_limit_s = config.time_limit_s - seconds_since(start_time);
      GridOracleResult oracle = grid_oracle(q, opts);
      result.certified = oracle.completed;
      if (oracle.feasible) {
        result.strategy = oracle.best_strategy;
        result.distance =
            strategy_distance(m, q.sigma, oracle.best_strategy, q.distances);
        result.reach_after =
            strategy_reach_probability(m, oracle.best_strategy, q.target);
        result.status = SolveStatus::Optimal;
      } else if (oracle.completed) {
        return finish_without_strategy(SolveStatus::Infeasible);
      } else {
        return finish_without_strategy(SolveStatus::Timeout);
      }
    } else {
      return finish_without_strategy(SolveStatus::Timeout);
    }
    result.wall_time_s = seconds_since(start_time);
    return result;
  }

  result.status = SolveStatus::SubOptimal;
  if (timed_out || extra) {
    result.wall_time_s = seconds_since(start_time);
    return result;
  }
  if (config.certify &&
      grid_point_count(q, config.certify_step) <= config.certify_budget) {
    GridOracleOptions opts;
    opts.step = config.certify_step;
    opts.budget = config.certify_budget;
    opts.initial_bound = best.distance.combined + margin;
    opts.time_limit_s = config.time_limit_s - seconds_since(start_time);
    GridOracleResult oracle = grid_oracle(q, opts);
    if (oracle.completed) {
      result.certified = true;
      if (oracle.feasible) {
        result.certificate_gap = oracle.best_distance - best.distance.combined;
        if (oracle.best_distance < best.distance.combined - 1e-12) {
          result.strategy = oracle.best_strategy;
          result.distance =
              strategy_distance(m, q.sigma, oracle.best_strategy, q.distances);
          result.reach_after =
              strategy_reach_probability(m, oracle.best_strategy, q.target);
        }
        if (std::abs(result.certificate_gap) <= margin) {
          result.status = SolveStatus::Optimal;
        }
      }
    }
  }
  result.wall_time_s = seconds_since(start_time);
  return result;
}

SynthesisResult solve(const SynthesisQuery& q, const SolverConfig& config) {
  return detail::solve_internal(q, config, nullptr);
}

}  // namespace mdpcf
