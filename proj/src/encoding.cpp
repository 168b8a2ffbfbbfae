#include "mdpcf/encoding.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "mdpcf/reachability.hpp"

namespace mdpcf {

namespace {

std::string fmt17(double v) {
  char buffer[64];
  std::snprintf(buffer, sizeof(buffer), "%.17g", v);
  return buffer;
}

std::string var_name(const VarRef& ref) {
  switch (ref.role) {
    case VarRole::ChoiceProb:
      return "p_s" + std::to_string(ref.state) + "_a" + std::to_string(ref.action);
    case VarRole::ReachProb:
      return "p_s" + std::to_string(ref.state);
    case VarRole::AbsSplit:
      return "dsa_s" + std::to_string(ref.state) + "_a" + std::to_string(ref.action);
    case VarRole::StateDelta:
      return "delta_s" + std::to_string(ref.state);
    case VarRole::ChangeIndicator:
      return "i_s" + std::to_string(ref.state);
    case VarRole::TotalChanged:
      return "D0";
    case VarRole::MeanDelta:
      return "D1";
    case VarRole::MaxDelta:
      return "Dinf";
  }
  return "?";
}

}  // namespace

void SynthesisQuery::validate() const {
  mdp.validate();
  if (target < 0 || target >= mdp.num_states()) {
    throw EncodingError("target state out of range");
  }
  if (!(gamma >= 0.0 && gamma <= 1.0)) {
    throw EncodingError("gamma must lie in [0, 1]");
  }
  try {
    distances.validate();
  } catch (const ModelError& e) {
    throw EncodingError(e.what());
  }
  if (epsilon && !(*epsilon > 0.0)) {
    throw EncodingError("epsilon must be positive");
  }
  auto violations = validate_strategy(mdp, sigma);
  if (!violations.empty()) {
    throw EncodingError("strategy invalid for the model (" +
                        std::to_string(violations.size()) + " violations)");
  }
}

int SynthesisProblem::index_of(const VarRef& ref) const {
  for (size_t i = 0; i < variables.size(); ++i) {
    if (variables[i].ref == ref) return static_cast<int>(i);
  }
  return -1;
}

const Variable& SynthesisProblem::variable(const VarRef& ref) const {
  int i = index_of(ref);
  if (i < 0) throw EncodingError("variable " + var_name(ref) + " not in problem");
  return variables[static_cast<size_t>(i)];
}

SynthesisProblem build_problem(const SynthesisQuery& q) {
  q.validate();
  if (q.target == q.mdp.initial && q.gamma < 1.0) {
    throw EncodingError(
        "target equals the initial state: reached with probability one under "
        "every strategy, no encoding exists for gamma < 1");
  }

  const Mdp& m = q.mdp;
  SynthesisProblem p;
  p.query = q;
  p.model_fingerprint = m.fingerprint();
  p.decision = decision_states(m);
  for (int s : p.decision) {
    if (m.state_controllable(s)) p.free_states.push_back(s);
  }
  ReachAnalysis reach = reach_set(m, q.target);
  p.reach = reach.reach;
  p.zero = reach.zero;

  // --- Variables (deterministic order; the export sorts by name anyway).
  std::map<VarRef, int> index;
  auto add_var = [&](VarRef ref, bool integer, double lo, double hi) {
    index[ref] = static_cast<int>(p.variables.size());
    p.variables.push_back(Variable{ref, var_name(ref), integer, lo, hi});
  };
  for (int s : p.free_states) {
    for (int a : m.enabled_actions(s)) {
      add_var({VarRole::ChoiceProb, s, a}, false, 0.0, 1.0);
    }
  }
  for (int s = 0; s < m.num_states(); ++s) {
    add_var({VarRole::ReachProb, s, -1}, false, 0.0, 1.0);
  }
  for (int s : p.free_states) {
    for (int a : m.enabled_actions(s)) {
      add_var({VarRole::AbsSplit, s, a}, false, 0.0, 1.0);
    }
  }
  for (int s : p.free_states) add_var({VarRole::StateDelta, s, -1}, false, 0.0, 1.0);
  for (int s : p.free_states) add_var({VarRole::ChangeIndicator, s, -1}, true, 0.0, 1.0);
  add_var({VarRole::TotalChanged, -1, -1}, false, 0.0,
          static_cast<double>(p.free_states.size()));
  add_var({VarRole::MeanDelta, -1, -1}, false, 0.0, 1.0);
  add_var({VarRole::MaxDelta, -1, -1}, false, 0.0, 1.0);

  auto idx = [&](VarRef ref) { return index.at(ref); };
  const int d0_idx = idx({VarRole::TotalChanged, -1, -1});
  const int d1_idx = idx({VarRole::MeanDelta, -1, -1});
  const int dinf_idx = idx({VarRole::MaxDelta, -1, -1});

  // --- Per-state linear constraints: simplex, absolute-value splits, the
  // per-state change, its indicator link, and the max-norm bound.
  for (int s : p.free_states) {
    LinearConstraint simplex;
    simplex.rel = Relation::Eq;
    simplex.rhs = 1.0;
    simplex.tag = "simplex s" + std::to_string(s);
    for (int a : m.enabled_actions(s)) {
      simplex.terms.emplace_back(idx({VarRole::ChoiceProb, s, a}), 1.0);
    }
    p.linear_constraints.push_back(std::move(simplex));

    for (int a : m.enabled_actions(s)) {
      const double base = q.sigma.row(s).prob(a);
      const int choice = idx({VarRole::ChoiceProb, s, a});
      const int split = idx({VarRole::AbsSplit, s, a});
      // base - p_sa <= dsa  and  p_sa - base <= dsa
      LinearConstraint lower;
      lower.rel = Relation::LessEq;
      lower.rhs = -base;
      lower.terms = {{choice, -1.0}, {split, -1.0}};
      lower.tag = "split- s" + std::to_string(s) + " a" + std::to_string(a);
      p.linear_constraints.push_back(std::move(lower));
      LinearConstraint upper;
      upper.rel = Relation::LessEq;
      upper.rhs = base;
      upper.terms = {{choice, 1.0}, {split, -1.0}};
      upper.tag = "split+ s" + std::to_string(s) + " a" + std::to_string(a);
      p.linear_constraints.push_back(std::move(upper));
    }

    LinearConstraint delta_def;
    delta_def.rel = Relation::Eq;
    delta_def.rhs = 0.0;
    delta_def.tag = "delta s" + std::to_string(s);
    delta_def.terms.emplace_back(idx({VarRole::StateDelta, s, -1}), 1.0);
    for (int a : m.enabled_actions(s)) {
      delta_def.terms.emplace_back(idx({VarRole::AbsSplit, s, a}), -0.5);
    }
    p.linear_constraints.push_back(std::move(delta_def));

    LinearConstraint link;
    link.rel = Relation::LessEq;
    link.rhs = 0.0;
    link.terms = {{idx({VarRole::StateDelta, s, -1}), 1.0},
                  {idx({VarRole::ChangeIndicator, s, -1}), -1.0}};
    link.tag = "indicator s" + std::to_string(s);
    p.linear_constraints.push_back(std::move(link));

    LinearConstraint max_bound;
    max_bound.rel = Relation::LessEq;
    max_bound.rhs = 0.0;
    max_bound.terms = {{idx({VarRole::StateDelta, s, -1}), 1.0}, {dinf_idx, -1.0}};
    max_bound.tag = "max s" + std::to_string(s);
    p.linear_constraints.push_back(std::move(max_bound));
  }

  // --- Norm aggregation.
  LinearConstraint d0_def;
  d0_def.rel = Relation::Eq;
  d0_def.rhs = 0.0;
  d0_def.tag = "count-norm";
  d0_def.terms.emplace_back(d0_idx, 1.0);
  for (int s : p.free_states) {
    d0_def.terms.emplace_back(idx({VarRole::ChangeIndicator, s, -1}), -1.0);
  }
  p.linear_constraints.push_back(std::move(d0_def));

  LinearConstraint d1_def;
  d1_def.rel = Relation::Eq;
  d1_def.rhs = 0.0;
  d1_def.tag = "mean-norm";
  d1_def.terms.emplace_back(d1_idx, 1.0);
  if (!p.decision.empty()) {
    const double inv = 1.0 / static_cast<double>(p.decision.size());
    for (int s : p.free_states) {
      d1_def.terms.emplace_back(idx({VarRole::StateDelta, s, -1}), -inv);
    }
  }
  p.linear_constraints.push_back(std::move(d1_def));

  // --- Reaching probability pinning and threshold.
  LinearConstraint target_eq;
  target_eq.rel = Relation::Eq;
  target_eq.rhs = 1.0;
  target_eq.terms = {{idx({VarRole::ReachProb, q.target, -1}), 1.0}};
  target_eq.tag = "target";
  p.linear_constraints.push_back(std::move(target_eq));

  for (int s : p.zero) {
    LinearConstraint zero_eq;
    zero_eq.rel = Relation::Eq;
    zero_eq.rhs = 0.0;
    zero_eq.terms = {{idx({VarRole::ReachProb, s, -1}), 1.0}};
    zero_eq.tag = "unreachable s" + std::to_string(s);
    p.linear_constraints.push_back(std::move(zero_eq));
  }

  LinearConstraint threshold;
  threshold.rel = Relation::LessEq;
  threshold.rhs = q.gamma;
  threshold.terms = {{idx({VarRole::ReachProb, m.initial, -1}), 1.0}};
  threshold.tag = "threshold";
  p.linear_constraints.push_back(std::move(threshold));

  // --- Bounded-distance mode trades the objective for a budget row.
  if (q.epsilon) {
    LinearConstraint budget;
    budget.rel = Relation::LessEq;
    budget.rhs = *q.epsilon;
    budget.tag = "distance-budget";
    if (q.distances.r0 != 0.0) budget.terms.emplace_back(d0_idx, q.distances.r0);
    if (q.distances.r1 != 0.0) budget.terms.emplace_back(d1_idx, q.distances.r1);
    if (q.distances.rinf != 0.0) budget.terms.emplace_back(dinf_idx, q.distances.rinf);
    p.linear_constraints.push_back(std::move(budget));
  } else {
    p.objective.terms = {{d0_idx, q.distances.r0},
                         {d1_idx, q.distances.r1},
                         {dinf_idx, q.distances.rinf}};
  }

  // --- One Bellman constraint per state that can reach the target (target
  // excluded). Rows of editable states are bilinear in (choice, successor);
  // all other rows enter linearly with their fixed action weights. Successor
  // terms for states that cannot reach the target vanish and are dropped.
  std::vector<char> editable(static_cast<size_t>(m.num_states()), 0);
  for (int s : p.free_states) editable[static_cast<size_t>(s)] = 1;
  for (int s : p.reach) {
    if (s == q.target) continue;
    QuadraticConstraint bellman;
    bellman.rel = Relation::Eq;
    bellman.rhs = 0.0;
    bellman.bellman_state = s;
    bellman.tag = "bellman s" + std::to_string(s);
    bellman.linear.emplace_back(idx({VarRole::ReachProb, s, -1}), -1.0);
    if (editable[static_cast<size_t>(s)]) {
      for (int a : m.enabled_actions(s)) {
        const int choice = idx({VarRole::ChoiceProb, s, a});
        for (const auto& [succ, prob] : m.successors(s, a).support()) {
          if (!reach.in_reach[static_cast<size_t>(succ)]) continue;
          int succ_var = idx({VarRole::ReachProb, succ, -1});
          int i = std::min(choice, succ_var);
          int j = std::max(choice, succ_var);
          bellman.quad.emplace_back(i, j, prob);
        }
      }
    } else {
      std::map<int, double> row;  // successor variable -> weight
      for (const auto& t : m.transitions[static_cast<size_t>(s)]) {
        double weight = 1.0;
        if (m.transitions[static_cast<size_t>(s)].size() >= 2) {
          weight = q.sigma.row(s).prob(t.action);  // frozen decision state
        }
        if (weight == 0.0) continue;
        for (const auto& [succ, prob] : t.successors.support()) {
          if (!reach.in_reach[static_cast<size_t>(succ)]) continue;
          row[idx({VarRole::ReachProb, succ, -1})] += weight * prob;
        }
      }
      for (const auto& [var, weight] : row) bellman.linear.emplace_back(var, weight);
    }
    p.quadratic_constraints.push_back(std::move(bellman));
  }

  return p;
}

ConstraintMatrix constraint_matrix(const SynthesisProblem& p, int s) {
  const QuadraticConstraint* bellman = nullptr;
  for (const auto& c : p.quadratic_constraints) {
    if (c.bellman_state == s) {
      bellman = &c;
      break;
    }
  }
  if (!bellman) {
    throw EncodingError("state " + std::to_string(s) + " has no Bellman constraint");
  }
  const int defined = p.index_of({VarRole::ReachProb, s, -1});
  std::vector<int> participating;
  auto note = [&](int var) {
    if (std::find(participating.begin(), participating.end(), var) ==
        participating.end()) {
      participating.push_back(var);
    }
  };
  // Both factors of a bilinear term participate, including the defined
  // variable itself when the state can loop back to itself. On the linear
  // side the defined variable only carries the -1 of the definition.
  for (const auto& [i, j, c] : bellman->quad) {
    (void)c;
    note(i);
    note(j);
  }
  for (const auto& [i, c] : bellman->linear) {
    (void)c;
    if (i != defined) note(i);
  }
  std::sort(participating.begin(), participating.end());

  ConstraintMatrix out;
  out.variable_indices = participating;
  const int n = out.size();
  out.dense.assign(static_cast<size_t>(n) * static_cast<size_t>(n), 0.0);
  auto pos = [&](int var) {
    return static_cast<int>(std::lower_bound(participating.begin(), participating.end(),
                                             var) -
                            participating.begin());
  };
  for (const auto& [i, j, c] : bellman->quad) {
    int a = pos(i), b = pos(j);
    if (a == b) {
      out.dense[static_cast<size_t>(a * n + a)] += c;
    } else {
      out.dense[static_cast<size_t>(a * n + b)] += 0.5 * c;
      out.dense[static_cast<size_t>(b * n + a)] += 0.5 * c;
    }
  }
  return out;
}

NonconvexityReport nonconvexity_report(const SynthesisProblem& p) {
  NonconvexityReport out;
  for (const auto& c : p.quadratic_constraints) {
    if (c.quad.empty()) continue;
    ConstraintMatrix q = constraint_matrix(p, c.bellman_state);
    const int n = q.size();
    Eigen::MatrixXd doubled(n, n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) doubled(i, j) = 2.0 * q.at(i, j);
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(doubled);
    if (solver.info() != Eigen::Success) {
      throw EncodingError("eigen decomposition failed for state " +
                          std::to_string(c.bellman_state));
    }
    NonconvexityReport::Entry entry;
    entry.state = c.bellman_state;
    entry.eigenvalues.assign(solver.eigenvalues().data(),
                             solver.eigenvalues().data() + n);
    std::sort(entry.eigenvalues.begin(), entry.eigenvalues.end());
    entry.has_negative = !entry.eigenvalues.empty() && entry.eigenvalues.front() < -1e-9;
    out.nonconvex = out.nonconvex || entry.has_negative;
    out.entries.push_back(std::move(entry));
  }
  return out;
}

Assignment assignment_for_strategy(const SynthesisProblem& p, const Strategy& sigma2) {
  const Mdp& m = p.query.mdp;
  auto violations = validate_strategy(m, sigma2);
  if (!violations.empty()) {
    throw EncodingError("strategy invalid for the model");
  }
  ReachValues reach = reach_probability(induce_dtmc(m, sigma2), p.query.target);

  Assignment x(p.variables.size(), 0.0);
  double delta_sum = 0.0;
  double delta_max = 0.0;
  double changed = 0.0;
  for (size_t i = 0; i < p.variables.size(); ++i) {
    const Variable& v = p.variables[i];
    switch (v.ref.role) {
      case VarRole::ChoiceProb:
        x[i] = sigma2.row(v.ref.state).prob(v.ref.action);
        break;
      case VarRole::ReachProb:
        x[i] = reach.values[static_cast<size_t>(v.ref.state)];
        break;
      case VarRole::AbsSplit:
        x[i] = std::abs(p.query.sigma.row(v.ref.state).prob(v.ref.action) -
                        sigma2.row(v.ref.state).prob(v.ref.action));
        break;
      case VarRole::StateDelta:
        x[i] = tv_distance(p.query.sigma.row(v.ref.state), sigma2.row(v.ref.state));
        delta_sum += x[i];
        delta_max = std::max(delta_max, x[i]);
        break;
      case VarRole::ChangeIndicator:
        // Minimal indicator: set exactly when the state changed at all.
        x[i] = tv_distance(p.query.sigma.row(v.ref.state), sigma2.row(v.ref.state)) > 0.0
                   ? 1.0
                   : 0.0;
        changed += x[i];
        break;
      default:
        break;
    }
  }
  x[static_cast<size_t>(p.index_of({VarRole::TotalChanged, -1, -1}))] = changed;
  x[static_cast<size_t>(p.index_of({VarRole::MeanDelta, -1, -1}))] =
      p.decision.empty() ? 0.0 : delta_sum / static_cast<double>(p.decision.size());
  x[static_cast<size_t>(p.index_of({VarRole::MaxDelta, -1, -1}))] = delta_max;
  return x;
}

ValidationReport validate_solution(const SynthesisProblem& p, const Assignment& x,
                                   double tolerance) {
  ValidationReport report;
  if (x.size() != p.variables.size()) {
    report.violations.push_back(
        {"assignment size " + std::to_string(x.size()) + " does not match variable count",
         static_cast<double>(p.variables.size())});
    return report;
  }

  for (size_t i = 0; i < p.variables.size(); ++i) {
    const Variable& v = p.variables[i];
    if (x[i] < v.lower - tolerance || x[i] > v.upper + tolerance) {
      report.violations.push_back(
          {"domain of " + v.name, std::max(v.lower - x[i], x[i] - v.upper)});
    }
    if (v.integer && std::abs(x[i] - std::round(x[i])) > 1e-6) {
      report.violations.push_back(
          {"integrality of " + v.name, std::abs(x[i] - std::round(x[i]))});
    }
  }

  auto check_row = [&](double lhs, Relation rel, double rhs, const std::string& tag) {
    double slack = rel == Relation::Eq ? std::abs(lhs - rhs) : lhs - rhs;
    if (slack > tolerance) report.violations.push_back({tag, slack});
  };
  for (const auto& c : p.linear_constraints) {
    double lhs = 0.0;
    for (const auto& [i, coef] : c.terms) lhs += coef * x[static_cast<size_t>(i)];
    check_row(lhs, c.rel, c.rhs, c.tag);
  }
  for (const auto& c : p.quadratic_constraints) {
    double lhs = 0.0;
    for (const auto& [i, j, coef] : c.quad) {
      lhs += coef * x[static_cast<size_t>(i)] * x[static_cast<size_t>(j)];
    }
    for (const auto& [i, coef] : c.linear) lhs += coef * x[static_cast<size_t>(i)];
    check_row(lhs, c.rel, c.rhs, c.tag);
  }

  // Re-derive the strategy from the choice variables and recompute the
  // reaching probability and distance norms independently.
  const Mdp& m = p.query.mdp;
  Strategy sigma2 = p.query.sigma;
  bool extracted = true;
  for (int s : p.free_states) {
    std::vector<std::pair<int, double>> row;
    double sum = 0.0;
    for (int a : m.enabled_actions(s)) {
      double value =
          std::max(0.0, x[static_cast<size_t>(p.index_of({VarRole::ChoiceProb, s, a}))]);
      row.emplace_back(a, value);
      sum += value;
    }
    if (std::abs(sum - 1.0) > 1e-6 || sum <= 0.0) {
      extracted = false;
      break;
    }
    for (auto& [a, value] : row) value /= sum;
    sigma2.choices[static_cast<size_t>(s)] = Distribution(row);
  }
  report.strategy_extracted = extracted;
  if (!extracted) {
    report.violations.push_back({"choice rows do not form distributions", 0.0});
    return report;
  }

  report.reach_recomputed = strategy_reach_probability(m, sigma2, p.query.target);
  double reported_reach =
      x[static_cast<size_t>(p.index_of({VarRole::ReachProb, m.initial, -1}))];
  if (std::abs(report.reach_recomputed - reported_reach) > kConstraintTolerance) {
    report.violations.push_back(
        {"reach recomputation", std::abs(report.reach_recomputed - reported_reach)});
  }

  report.distance_recomputed =
      strategy_distance(m, p.query.sigma, sigma2, p.query.distances);
  // Tight per-state changes against the assignment's delta variables.
  const auto& decision = p.decision;
  for (size_t k = 0; k < decision.size(); ++k) {
    int s = decision[k];
    int delta_idx = p.index_of({VarRole::StateDelta, s, -1});
    double assigned = delta_idx >= 0 ? x[static_cast<size_t>(delta_idx)] : 0.0;
    if (std::abs(assigned - report.distance_recomputed.per_state[k]) > 1e-6) {
      report.violations.push_back(
          {"delta recomputation s" + std::to_string(s),
           std::abs(assigned - report.distance_recomputed.per_state[k])});
    }
  }
  double d1_assigned = x[static_cast<size_t>(p.index_of({VarRole::MeanDelta, -1, -1}))];
  if (std::abs(d1_assigned - report.distance_recomputed.d1) > 1e-6) {
    report.violations.push_back(
        {"mean-norm recomputation", std::abs(d1_assigned - report.distance_recomputed.d1)});
  }
  double dinf_assigned = x[static_cast<size_t>(p.index_of({VarRole::MaxDelta, -1, -1}))];
  if (std::abs(dinf_assigned - report.distance_recomputed.dinf) > 1e-6) {
    report.violations.push_back({"max-norm recomputation",
                                 std::abs(dinf_assigned - report.distance_recomputed.dinf)});
  }

  report.objective_assignment = 0.0;
  for (const auto& [i, coef] : p.objective.terms) {
    report.objective_assignment += coef * x[static_cast<size_t>(i)];
  }
  report.objective_recomputed = report.distance_recomputed.combined;

  report.ok = report.violations.empty();
  return report;
}

// ---------------------------------------------------------------------------
// Text export / parse.

namespace {

void append_terms(std::string& out, const std::vector<std::pair<std::string, double>>& terms) {
  if (terms.empty()) {
    out += "0";
    return;
  }
  for (size_t i = 0; i < terms.size(); ++i) {
    const auto& [name, coef] = terms[i];
    if (i == 0) {
      out += fmt17(coef) + "*" + name;
    } else if (coef < 0.0) {
      out += " - " + fmt17(-coef) + "*" + name;
    } else {
      out += " + " + fmt17(coef) + "*" + name;
    }
  }
}

std::vector<std::string> tokenize(const std::string& line) {
  std::vector<std::string> tokens;
  std::istringstream in(line);
  std::string token;
  while (in >> token) tokens.push_back(token);
  return tokens;
}

}  // namespace

std::string export_problem(const SynthesisProblem& p) {
  std::string out = "miqcqp 1\n";

  std::vector<const Variable*> sorted;
  for (const auto& v : p.variables) sorted.push_back(&v);
  std::sort(sorted.begin(), sorted.end(),
            [](const Variable* a, const Variable* b) { return a->name < b->name; });
  for (const Variable* v : sorted) {
    out += "var " + v->name + (v->integer ? " int " : " real ") + fmt17(v->lower) + " " +
           fmt17(v->upper) + "\n";
  }

  auto named = [&](const std::vector<std::pair<int, double>>& terms) {
    std::vector<std::pair<std::string, double>> out_terms;
    for (const auto& [i, coef] : terms) {
      out_terms.emplace_back(p.variables[static_cast<size_t>(i)].name, coef);
    }
    return out_terms;
  };

  out += "min ";
  append_terms(out, named(p.objective.terms));
  out += "\n";

  auto rel_token = [](Relation rel) { return rel == Relation::Eq ? "=" : "<="; };
  for (const auto& c : p.linear_constraints) {
    out += std::string("lin ") + rel_token(c.rel) + " " + fmt17(c.rhs) + " : ";
    append_terms(out, named(c.terms));
    out += "\n";
  }
  for (const auto& c : p.quadratic_constraints) {
    out += std::string("quad ") + rel_token(c.rel) + " " + fmt17(c.rhs) + " : ";
    std::vector<std::pair<std::string, double>> quad_terms;
    for (const auto& [i, j, coef] : c.quad) {
      quad_terms.emplace_back(p.variables[static_cast<size_t>(i)].name + "*" +
                                  p.variables[static_cast<size_t>(j)].name,
                              coef);
    }
    append_terms(out, quad_terms);
    out += " | ";
    append_terms(out, named(c.linear));
    out += "\n";
  }
  return out;
}

namespace {

struct TermParser {
  const std::map<std::string, int>& index;

  /// Parses "coef*name[*name]" sequences joined by "+"/"-" tokens; "0" alone
  /// denotes the empty list. Products are returned with name2 == -1 for
  /// plain linear terms.
  struct ParsedTerm {
    int var1 = -1;
    int var2 = -1;
    double coef = 0.0;
  };

  std::vector<ParsedTerm> parse(const std::vector<std::string>& tokens, size_t begin,
                                size_t end) const {
    std::vector<ParsedTerm> out;
    if (end - begin == 1 && tokens[begin] == "0") return out;
    double sign = 1.0;
    for (size_t pos = begin; pos < end; ++pos) {
      const std::string& token = tokens[pos];
      if (token == "+") {
        sign = 1.0;
        continue;
      }
      if (token == "-") {
        sign = -1.0;
        continue;
      }
      size_t star = token.find('*');
      if (star == std::string::npos) {
        throw EncodingError("malformed term '" + token + "'");
      }
      ParsedTerm term;
      term.coef = sign * std::strtod(token.substr(0, star).c_str(), nullptr);
      std::string rest = token.substr(star + 1);
      size_t star2 = rest.find('*');
      auto lookup = [&](const std::string& name) {
        auto it = index.find(name);
        if (it == index.end()) throw EncodingError("unknown variable '" + name + "'");
        return it->second;
      };
      if (star2 == std::string::npos) {
        term.var1 = lookup(rest);
      } else {
        term.var1 = lookup(rest.substr(0, star2));
        term.var2 = lookup(rest.substr(star2 + 1));
      }
      out.push_back(term);
      sign = 1.0;
    }
    return out;
  }
};

Relation parse_rel(const std::string& token) {
  if (token == "=") return Relation::Eq;
  if (token == "<=") return Relation::LessEq;
  throw EncodingError("unknown relation '" + token + "'");
}

}  // namespace

SynthesisProblem parse_problem(const std::string& text) {
  SynthesisProblem p;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "miqcqp 1") {
    throw EncodingError("missing 'miqcqp 1' header");
  }
  std::map<std::string, int> index;
  bool objective_seen = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto tokens = tokenize(line);
    if (tokens.empty()) continue;
    TermParser terms{index};
    if (tokens[0] == "var") {
      if (tokens.size() != 5) throw EncodingError("malformed var line: " + line);
      Variable v;
      v.name = tokens[1];
      if (tokens[2] == "int") {
        v.integer = true;
      } else if (tokens[2] != "real") {
        throw EncodingError("unknown variable kind '" + tokens[2] + "'");
      }
      v.lower = std::strtod(tokens[3].c_str(), nullptr);
      v.upper = std::strtod(tokens[4].c_str(), nullptr);
      index[v.name] = static_cast<int>(p.variables.size());
      p.variables.push_back(std::move(v));
    } else if (tokens[0] == "min") {
      objective_seen = true;
      for (const auto& t : terms.parse(tokens, 1, tokens.size())) {
        if (t.var2 >= 0) throw EncodingError("quadratic objective term not supported");
        p.objective.terms.emplace_back(t.var1, t.coef);
      }
    } else if (tokens[0] == "lin") {
      if (tokens.size() < 4 || tokens[3] != ":") {
        throw EncodingError("malformed lin line: " + line);
      }
      LinearConstraint c;
      c.rel = parse_rel(tokens[1]);
      c.rhs = std::strtod(tokens[2].c_str(), nullptr);
      for (const auto& t : terms.parse(tokens, 4, tokens.size())) {
        if (t.var2 >= 0) throw EncodingError("quadratic term in lin row: " + line);
        c.terms.emplace_back(t.var1, t.coef);
      }
      p.linear_constraints.push_back(std::move(c));
    } else if (tokens[0] == "quad") {
      if (tokens.size() < 4 || tokens[3] != ":") {
        throw EncodingError("malformed quad line: " + line);
      }
      auto bar = std::find(tokens.begin(), tokens.end(), "|");
      if (bar == tokens.end()) throw EncodingError("quad row missing '|': " + line);
      size_t bar_pos = static_cast<size_t>(bar - tokens.begin());
      QuadraticConstraint c;
      c.rel = parse_rel(tokens[1]);
      c.rhs = std::strtod(tokens[2].c_str(), nullptr);
      for (const auto& t : terms.parse(tokens, 4, bar_pos)) {
        if (t.var2 < 0) throw EncodingError("linear term in quad section: " + line);
        c.quad.emplace_back(std::min(t.var1, t.var2), std::max(t.var1, t.var2), t.coef);
      }
      for (const auto& t : terms.parse(tokens, bar_pos + 1, tokens.size())) {
        if (t.var2 >= 0) throw EncodingError("quadratic term in linear section: " + line);
        c.linear.emplace_back(t.var1, t.coef);
      }
      p.quadratic_constraints.push_back(std::move(c));
    } else {
      throw EncodingError("unknown line kind: " + line);
    }
  }
  if (!objective_seen) throw EncodingError("missing objective line");
  return p;
}

bool structurally_equal(const SynthesisProblem& a, const SynthesisProblem& b) {
  return export_problem(a) == export_problem(b);
}

}  // namespace mdpcf
