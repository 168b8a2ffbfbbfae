#include "mdpcf/diversity.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <set>
#include <utility>

#include "solver_internal.hpp"

namespace mdpcf {

void DiversityConfig::validate() const {
  if (count < 1) {
    throw ModelError("diversity count must be at least one");
  }
  if (!(lambda >= 0.0)) {
    throw ModelError("diversity lambda must be nonnegative");
  }
  if (!(perturbation > 0.0)) {
    throw ModelError("diversity perturbation must be positive");
  }
  base.validate();
}

double raw_change_mass(const Mdp& m, const Strategy& a, const Strategy& b) {
  double total = 0.0;
  for (double v : distance_vector(m, a, b)) total += v;
  return total;
}

namespace {

Eigen::MatrixXd inverse_distance_matrix(const Mdp& m,
                                        const std::vector<Strategy>& strategies,
                                        double perturbation) {
  const int n = static_cast<int>(strategies.size());
  Eigen::MatrixXd d(n, n);
  for (int i = 0; i < n; ++i) {
    d(i, i) = 1.0 + perturbation;
    for (int j = i + 1; j < n; ++j) {
      const double v =
          1.0 / (1.0 + raw_change_mass(m, strategies[static_cast<size_t>(i)],
                                       strategies[static_cast<size_t>(j)]));
      d(i, j) = v;
      d(j, i) = v;
    }
  }
  return d;
}

std::set<std::pair<int, int>> changed_pairs(const Mdp& m, const Strategy& sigma0,
                                            const Strategy& s) {
  std::set<std::pair<int, int>> out;
  for (int st = 0; st < m.num_states(); ++st) {
    for (int a : m.enabled_actions(st)) {
      if (std::abs(s.row(st).prob(a) - sigma0.row(st).prob(a)) > kChangeTolerance) {
        out.emplace(st, a);
      }
    }
  }
  return out;
}

constexpr double kAbsSmoothing = 1e-9;

}  // namespace

double diversity_determinant(const Mdp& m, const std::vector<Strategy>& strategies,
                             double perturbation) {
  if (strategies.empty()) {
    throw ModelError("diversity determinant needs at least one strategy");
  }
  return inverse_distance_matrix(m, strategies, perturbation).determinant();
}

double novel_fraction(const Mdp& m, const Strategy& sigma0, const Strategy& candidate,
                      const std::vector<Strategy>& previous) {
  const std::set<std::pair<int, int>> changed = changed_pairs(m, sigma0, candidate);
  if (changed.empty()) return 0.0;
  std::set<std::pair<int, int>> seen;
  for (const Strategy& p : previous) {
    std::set<std::pair<int, int>> cp = changed_pairs(m, sigma0, p);
    seen.insert(cp.begin(), cp.end());
  }
  int novel = 0;
  for (const auto& pair : changed) {
    if (!seen.count(pair)) ++novel;
  }
  return static_cast<double>(novel) / static_cast<double>(changed.size());
}

DiverseSet diverse_synthesize(const SynthesisQuery& q, const DiversityConfig& dcfg,
                              const SolverConfig& scfg) {
  dcfg.validate();
  SynthesisQuery query = q;
  query.distances = dcfg.base;
  query.validate();

  DiverseSet out;
  SynthesisResult first = solve(query, scfg);
  out.min_reach = first.min_reach;
  out.status = first.status;
  if (first.status == SolveStatus::Infeasible ||
      first.status == SolveStatus::Timeout) {
    return out;
  }

  const Mdp& m = query.mdp;
  out.members.push_back(first);
  std::vector<Strategy> strategies{first.strategy};
  out.determinant_trace.push_back(
      diversity_determinant(m, strategies, dcfg.perturbation));
  out.novel_fractions.push_back(novel_fraction(m, query.sigma, first.strategy, {}));

  ReachEvaluator eval(m, query.sigma, query.target);
  const double corner = 1.0 + dcfg.perturbation;

  for (int member = 2; member <= dcfg.count; ++member) {
    const int fixed = static_cast<int>(strategies.size());
    const Eigen::MatrixXd block =
        inverse_distance_matrix(m, strategies, dcfg.perturbation);
    const Eigen::MatrixXd block_inv = block.inverse();
    const double block_det = block.determinant();

    // Members only differ from the input strategy on the adjustable rows, so
    // the change mass against a candidate splits into the packed part and a
    // constant remainder (normally zero, computed for robustness).
    std::vector<std::vector<double>> packed;
    std::vector<double> remainder;
    const std::vector<double> base_pack = eval.pack(query.sigma);
    for (const Strategy& s : strategies) {
      std::vector<double> p = eval.pack(s);
      double editable_mass = 0.0;
      for (size_t i = 0; i < eval.editable_states().size(); ++i) {
        const int offset = eval.row_offset(static_cast<int>(i));
        const int parts =
            static_cast<int>(eval.actions(static_cast<int>(i)).size());
        double row = 0.0;
        for (int a = 0; a < parts; ++a) {
          row += std::abs(p[static_cast<size_t>(offset + a)] -
                          base_pack[static_cast<size_t>(offset + a)]);
        }
        editable_mass += 0.5 * row;
      }
      remainder.push_back(raw_change_mass(m, s, query.sigma) - editable_mass);
      packed.push_back(std::move(p));
    }

    const double lambda = dcfg.lambda;
    detail::ExtraTerm extra;
    extra.smooth = [fixed, packed, remainder, block_inv, block_det, corner,
                    lambda](const std::vector<double>& x,
                            std::vector<double>* grad) -> double {
      Eigen::VectorXd v(fixed);
      std::vector<double> deltas(static_cast<size_t>(fixed), 0.0);
      std::vector<std::vector<double>> slopes(
          static_cast<size_t>(fixed), std::vector<double>(x.size(), 0.0));
      for (int i = 0; i < fixed; ++i) {
        double delta = remainder[static_cast<size_t>(i)];
        const auto& p = packed[static_cast<size_t>(i)];
        for (size_t e = 0; e < x.size(); ++e) {
          const double diff = x[e] - p[e];
          const double root =
              std::sqrt(diff * diff + kAbsSmoothing * kAbsSmoothing);
          delta += 0.5 * (root - kAbsSmoothing);
          slopes[static_cast<size_t>(i)][e] = 0.5 * diff / root;
        }
        deltas[static_cast<size_t>(i)] = delta;
        v(i) = 1.0 / (1.0 + delta);
      }
      const Eigen::VectorXd solved = block_inv * v;
      const double det = block_det * (corner - v.dot(solved));
      if (grad) {
        for (int i = 0; i < fixed; ++i) {
          // d(det)/d(delta_i) via the varying row and column of the matrix.
          const double dv = -2.0 * block_det * solved(i);
          const double dd =
              dv * (-1.0 / ((1.0 + deltas[static_cast<size_t>(i)]) *
                            (1.0 + deltas[static_cast<size_t>(i)])));
          for (size_t e = 0; e < x.size(); ++e) {
            (*grad)[e] += -lambda * dd * slopes[static_cast<size_t>(i)][e];
          }
        }
      }
      return -lambda * det;
    };
    const double perturbation = dcfg.perturbation;
    extra.exact = [&m, strategies, lambda, perturbation](const Strategy& s) {
      std::vector<Strategy> with = strategies;
      with.push_back(s);
      return -lambda * diversity_determinant(m, with, perturbation);
    };

    SynthesisResult r = detail::solve_internal(query, scfg, &extra);
    if (r.status == SolveStatus::Timeout) break;
    out.members.push_back(r);
    out.novel_fractions.push_back(
        novel_fraction(m, query.sigma, r.strategy, strategies));
    strategies.push_back(r.strategy);
    out.determinant_trace.push_back(
        diversity_determinant(m, strategies, dcfg.perturbation));
  }

  const Eigen::MatrixXd final_matrix =
      inverse_distance_matrix(m, strategies, dcfg.perturbation);
  const int n = static_cast<int>(strategies.size());
  out.pairwise.assign(static_cast<size_t>(n), std::vector<double>(static_cast<size_t>(n), 0.0));
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      out.pairwise[static_cast<size_t>(i)][static_cast<size_t>(j)] = final_matrix(i, j);
    }
  }
  return out;
}

}  // namespace mdpcf
