#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "mdpcf/mdp_core.hpp"

/// Shared fixtures and generators for the test suites.
namespace mdpcf::testing {

// Loan-process example used throughout the suites. State indices:
//   0 s0, 1 Application, 2 Error, 3 Consultation, 4 Application+,
//   5 Rework, 6 Resubmit, 7 Granted, 8 Rejected
// Action indices:
//   0 Apply, 1 Consult, 2 Quit, 3 Submit, 4 Provider
enum LoanState {
  kS0 = 0,
  kApplication = 1,
  kError = 2,
  kConsultation = 3,
  kApplicationPlus = 4,
  kRework = 5,
  kResubmit = 6,
  kGranted = 7,
  kRejected = 8,
};

enum LoanAction {
  kApply = 0,
  kConsult = 1,
  kQuit = 2,
  kSubmit = 3,
  kProvider = 4,
};

inline Mdp loan_mdp() {
  Mdp m;
  m.state_labels = {"s0",           "Application", "Error",    "Consultation",
                    "Application+", "Rework",      "Resubmit", "Granted",
                    "Rejected"};
  m.action_labels = {"Apply", "Consult", "Quit", "Submit", "Provider"};
  m.initial = kS0;
  m.transitions.resize(9);
  auto add = [&m](int s, int a, std::vector<std::pair<int, double>> to) {
    m.transitions[static_cast<size_t>(s)].push_back(
        Transition{a, Distribution(std::move(to))});
  };
  add(kS0, kApply, {{kApplication, 0.95}, {kError, 0.05}});
  add(kS0, kConsult, {{kConsultation, 1.0}});
  add(kApplication, kProvider, {{kGranted, 0.5}, {kRework, 0.5}});
  add(kError, kConsult, {{kConsultation, 1.0}});
  add(kError, kQuit, {{kRejected, 1.0}});
  add(kConsultation, kApply, {{kApplicationPlus, 1.0}});
  add(kConsultation, kQuit, {{kRejected, 1.0}});
  add(kApplicationPlus, kProvider, {{kGranted, 0.9}, {kRework, 0.1}});
  add(kRework, kQuit, {{kRejected, 1.0}});
  add(kRework, kSubmit, {{kResubmit, 1.0}});
  add(kResubmit, kProvider, {{kGranted, 0.8}, {kRejected, 0.2}});
  add(kGranted, kProvider, {{kGranted, 1.0}});
  add(kRejected, kProvider, {{kRejected, 1.0}});
  m.validate();
  return m;
}

/// Impatient user behavior: quits from Consultation and mostly from Rework.
inline Strategy impatient_strategy() {
  Strategy sigma;
  sigma.choices.resize(9);
  auto set = [&sigma](int s, std::vector<std::pair<int, double>> row) {
    sigma.choices[static_cast<size_t>(s)] = Distribution(std::move(row));
  };
  set(kS0, {{kApply, 1.0}});
  set(kApplication, {{kProvider, 1.0}});
  set(kError, {{kConsult, 0.2}, {kQuit, 0.8}});
  set(kConsultation, {{kQuit, 1.0}});
  set(kApplicationPlus, {{kProvider, 1.0}});
  set(kRework, {{kQuit, 0.7}, {kSubmit, 0.3}});
  set(kResubmit, {{kProvider, 1.0}});
  set(kGranted, {{kProvider, 1.0}});
  set(kRejected, {{kProvider, 1.0}});
  return sigma;
}

/// Counterfactual of the impatient behavior: only the Rework row changes,
/// to mostly resubmitting instead of quitting.
inline Strategy patient_rework_strategy() {
  Strategy sigma = impatient_strategy();
  sigma.choices[kRework] = Distribution({{kQuit, 0.14}, {kSubmit, 0.86}});
  return sigma;
}

/// Small random MDPs for property suites. Every state enables between one
/// and max_actions actions with one to three successors each; successor
/// probabilities are normalized uniforms. The generator is deterministic
/// per seed (mt19937_64 with explicit uniform draws).
struct RandomModelOptions {
  int min_states = 2;
  int max_states = 4;
  int max_actions = 3;
  int max_decision_states = 3;
  int max_successors = 3;
};

inline double unit_draw(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline int int_draw(std::mt19937_64& rng, int lo, int hi) {
  return lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1));
}

/// One uniform in [0, 1) derived from a standalone seed.
inline double unit_draw_for(std::uint64_t seed) {
  std::mt19937_64 rng(seed * 0x9e3779b97f4a7c15ULL + 1);
  return unit_draw(rng);
}

inline Mdp random_mdp(std::uint64_t seed, const RandomModelOptions& opt = {}) {
  std::mt19937_64 rng(seed);
  Mdp m;
  const int n = int_draw(rng, opt.min_states, opt.max_states);
  for (int s = 0; s < n; ++s) m.state_labels.push_back("q" + std::to_string(s));
  for (int a = 0; a < opt.max_actions; ++a) {
    m.action_labels.push_back("act" + std::to_string(a));
  }
  m.initial = 0;
  m.transitions.resize(static_cast<size_t>(n));
  int decision_budget = opt.max_decision_states;
  for (int s = 0; s < n; ++s) {
    int actions = int_draw(rng, 1, opt.max_actions);
    if (actions >= 2) {
      if (decision_budget == 0) actions = 1;
      else --decision_budget;
    }
    for (int a = 0; a < actions; ++a) {
      int succ_count = int_draw(rng, 1, std::min(opt.max_successors, n));
      std::vector<int> succs;
      while (static_cast<int>(succs.size()) < succ_count) {
        int candidate = int_draw(rng, 0, n - 1);
        if (std::find(succs.begin(), succs.end(), candidate) == succs.end()) {
          succs.push_back(candidate);
        }
      }
      std::vector<std::pair<int, double>> entries;
      double total = 0.0;
      std::vector<double> weights;
      for (size_t i = 0; i < succs.size(); ++i) {
        double w = 0.05 + unit_draw(rng);
        weights.push_back(w);
        total += w;
      }
      for (size_t i = 0; i < succs.size(); ++i) {
        entries.emplace_back(succs[i], weights[i] / total);
      }
      m.transitions[static_cast<size_t>(s)].push_back(
          Transition{a, Distribution(std::move(entries))});
    }
  }
  m.validate();
  return m;
}

/// Interior random strategy: positive probability on every enabled action.
inline Strategy random_interior_strategy(const Mdp& m, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  Strategy sigma;
  sigma.choices.resize(static_cast<size_t>(m.num_states()));
  for (int s = 0; s < m.num_states(); ++s) {
    std::vector<std::pair<int, double>> row;
    double total = 0.0;
    std::vector<double> weights;
    for (const auto& t : m.transitions[static_cast<size_t>(s)]) {
      double w = 0.1 + unit_draw(rng);
      weights.push_back(w);
      total += w;
      row.emplace_back(t.action, 0.0);
    }
    for (size_t i = 0; i < row.size(); ++i) row[i].second = weights[i] / total;
    sigma.choices[static_cast<size_t>(s)] = Distribution(std::move(row));
  }
  return sigma;
}

}  // namespace mdpcf::testing
