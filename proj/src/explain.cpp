#include "mdpcf/explain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace mdpcf {

namespace {

std::string format_probability(double p) {
  if (p == 0.0) return "0.0";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", p);
  return buf;
}

}  // namespace

Explanation make_explanation(const Mdp& m, const Strategy& sigma,
                             const SynthesisResult& result, int target) {
  if (target < 0 || target >= m.num_states()) {
    throw ModelError("explanation target state is out of range");
  }
  if (result.strategy.choices.size() != static_cast<size_t>(m.num_states())) {
    throw ModelError("result carries no strategy to explain");
  }

  Explanation e;
  e.target_label = m.state_labels[static_cast<size_t>(target)];
  e.before = result.reach_before;
  e.after = result.reach_after;

  for (int s = 0; s < m.num_states(); ++s) {
    std::vector<ActionEdit> increases;
    std::vector<ActionEdit> decreases;
    double mass = 0.0;
    for (int a : m.enabled_actions(s)) {
      const double now = result.strategy.row(s).prob(a);
      const double was = sigma.row(s).prob(a);
      mass += std::abs(now - was);
      ActionEdit edit;
      edit.action = a;
      edit.action_label = m.action_labels[static_cast<size_t>(a)];
      edit.probability = now;
      if (now - was > kChangeTolerance) {
        edit.increase = true;
        increases.push_back(std::move(edit));
      } else if (was - now > kChangeTolerance) {
        edit.increase = false;
        decreases.push_back(std::move(edit));
      }
    }
    if (0.5 * mass <= kChangeTolerance) continue;

    const auto by_action = [](const ActionEdit& a, const ActionEdit& b) {
      return a.action < b.action;
    };
    std::sort(increases.begin(), increases.end(), by_action);
    std::sort(decreases.begin(), decreases.end(), by_action);

    StateEdit se;
    se.state = s;
    se.state_label = m.state_labels[static_cast<size_t>(s)];
    se.actions = std::move(increases);
    se.actions.insert(se.actions.end(), decreases.begin(), decreases.end());
    e.edits.push_back(std::move(se));
  }
  return e;
}

std::string render(const Explanation& e) {
  std::string out;
  out += "State `" + e.target_label + "' is reached with probability " +
         format_probability(e.before) + ".\n";
  if (e.edits.empty()) {
    out += "No changes required.\n";
    return out;
  }
  out += "You can reach `" + e.target_label + "' with probability " +
         format_probability(e.after) + " as follows:\n";
  for (const StateEdit& se : e.edits) {
    out += " In state `" + se.state_label + "'\n";
    for (const ActionEdit& ae : se.actions) {
      out += std::string("  ") + (ae.increase ? "increase" : "decrease") +
             " probability of action `" + ae.action_label + "' to " +
             format_probability(ae.probability) + "\n";
    }
  }
  return out;
}

std::string render(const Mdp& m, const Strategy& sigma, const SynthesisResult& result,
                   int target) {
  return render(make_explanation(m, sigma, result, target));
}

}  // namespace mdpcf
