#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "mdpcf/mdp_core.hpp"

/// Mixed-integer quadratically constrained encoding of the counterfactual
/// strategy synthesis problem: find a strategy sigma' minimizing
/// r0*D0 + r1*D1 + rinf*Dinf subject to the reaching probability of the
/// target staying at or below gamma.
namespace mdpcf {

/// Slack allowed on the reaching-probability constraint when accepting
/// solutions and validating assignments.
inline constexpr double kConstraintTolerance = 1e-7;

class EncodingError : public std::invalid_argument {
 public:
  explicit EncodingError(const std::string& what) : std::invalid_argument(what) {}
};

/// A synthesis instance: model, baseline strategy, target, probability
/// bound, distance weights, and optionally a distance budget (bounded- rather
/// than minimal-distance mode).
struct SynthesisQuery {
  Mdp mdp;
  Strategy sigma;
  int target = -1;
  double gamma = 0.0;
  DistanceConfig distances;
  std::optional<double> epsilon;

  /// Throws EncodingError on out-of-range target/gamma, invalid weights,
  /// nonpositive epsilon, or a strategy invalid for the model.
  void validate() const;
};

/// Roles of the decision variables.
enum class VarRole {
  ChoiceProb,       // p_s_a: probability sigma'(s)(a), per editable state
  ReachProb,        // p_s: reaching probability from s
  AbsSplit,         // dsa_s_a: |sigma(s)(a) - p_s_a| upper envelope
  StateDelta,       // delta_s: per-state total variation
  ChangeIndicator,  // i_s: binary, 1 when state s changed
  TotalChanged,     // D0
  MeanDelta,        // D1
  MaxDelta,         // Dinf
};

struct VarRef {
  VarRole role = VarRole::ReachProb;
  int state = -1;
  int action = -1;

  auto operator<=>(const VarRef&) const = default;
};

struct Variable {
  VarRef ref;
  std::string name;
  bool integer = false;
  double lower = 0.0;
  double upper = 1.0;
};

enum class Relation { LessEq, Eq };

struct LinearConstraint {
  std::vector<std::pair<int, double>> terms;  // (variable index, coefficient)
  Relation rel = Relation::Eq;
  double rhs = 0.0;
  std::string tag;
};

/// Quadratic constraint sum c*x_i*x_j + sum c*x_k <rel> rhs. The encoding
/// stores one per Bellman state; for states without editable rows the
/// quadratic part is empty and the constraint is effectively linear.
struct QuadraticConstraint {
  std::vector<std::tuple<int, int, double>> quad;  // (i, j, coefficient), i <= j
  std::vector<std::pair<int, double>> linear;
  Relation rel = Relation::Eq;
  double rhs = 0.0;
  int bellman_state = -1;
  std::string tag;
};

struct Objective {
  /// Linear objective terms to minimize; empty in bounded-distance mode,
  /// where the objective is the constant zero.
  std::vector<std::pair<int, double>> terms;
};

struct SynthesisProblem {
  SynthesisQuery query;          // carried for validation and solving
  std::uint64_t model_fingerprint = 0;
  std::vector<Variable> variables;
  std::vector<LinearConstraint> linear_constraints;
  std::vector<QuadraticConstraint> quadratic_constraints;
  Objective objective;
  /// Decision states (two or more actions), ascending.
  std::vector<int> decision;
  /// Decision states whose rows are editable (controllable mask applied);
  /// only these own ChoiceProb/AbsSplit/StateDelta/ChangeIndicator variables.
  std::vector<int> free_states;
  /// Reach set of the target, and the Bellman states reach\{target}.
  std::vector<int> reach;
  std::vector<int> zero;

  int index_of(const VarRef& ref) const;  // -1 when absent
  const Variable& variable(const VarRef& ref) const;
};

/// Builds the full encoding. Errors: invalid query; target equal to the
/// initial state with gamma < 1 (no strategy can help).
SynthesisProblem build_problem(const SynthesisQuery& q);

/// Symmetric matrix of the Bellman constraint of state s, over the
/// variables participating on its right-hand side (choice variables and
/// successor reaching probabilities, in problem variable order). Each
/// product coefficient c contributes c/2 on both sides of the diagonal.
/// Returns the participating variable indices alongside the dense matrix.
struct ConstraintMatrix {
  std::vector<int> variable_indices;
  std::vector<double> dense;  // row-major, size n*n
  int size() const { return static_cast<int>(variable_indices.size()); }
  double at(int i, int j) const { return dense[static_cast<size_t>(i * size() + j)]; }
};

ConstraintMatrix constraint_matrix(const SynthesisProblem& p, int s);

/// Eigenvalue report over the doubled Bellman matrices (2*Q). A problem is
/// nonconvex whenever some doubled matrix has a negative eigenvalue.
struct NonconvexityReport {
  struct Entry {
    int state = -1;
    std::vector<double> eigenvalues;  // ascending, of 2*Q
    bool has_negative = false;
  };
  std::vector<Entry> entries;  // one per Bellman state with nonempty Q
  bool nonconvex = false;
};

NonconvexityReport nonconvexity_report(const SynthesisProblem& p);

/// Variable assignment indexed like SynthesisProblem::variables.
using Assignment = std::vector<double>;

/// Assignment induced by an explicit strategy: choice probabilities from
/// sigma', reaching probabilities from the exact linear solve, split and
/// norm variables tight, indicators minimal.
Assignment assignment_for_strategy(const SynthesisProblem& p, const Strategy& sigma2);

/// Validation of an assignment against the problem: constraint residuals,
/// variable domains, and an independent recomputation of the distance norms
/// and the reaching probability from the strategy the assignment encodes.
struct ValidationReport {
  struct Violation {
    std::string what;
    double amount = 0.0;
  };
  std::vector<Violation> violations;
  bool strategy_extracted = false;
  double reach_recomputed = 0.0;
  DistanceBreakdown distance_recomputed;
  double objective_assignment = 0.0;
  double objective_recomputed = 0.0;
  bool ok = false;
};

ValidationReport validate_solution(const SynthesisProblem& p, const Assignment& x,
                                   double tolerance = kConstraintTolerance);

/// Plain-text problem export:
///   line 1: "miqcqp 1"
///   "var <name> <real|int> <lo> <hi>"      one per variable, sorted by name
///   "min <coef>*<name> [+|- ...]"          or "min 0" for constant objectives
///   "lin <rel> <rhs> : <terms>"            linear rows in declaration order
///   "quad <rel> <rhs> : <quad terms> | <linear terms>"
/// Reals are printed with 17 significant digits, so the text is byte-stable
/// and round-trips exactly.
std::string export_problem(const SynthesisProblem& p);

/// Parses the text format back into a problem (structure only: variables,
/// constraints, objective; no query metadata). Throws EncodingError on
/// malformed input.
SynthesisProblem parse_problem(const std::string& text);

/// Structural equality: identical export text.
bool structurally_equal(const SynthesisProblem& a, const SynthesisProblem& b);

}  // namespace mdpcf
