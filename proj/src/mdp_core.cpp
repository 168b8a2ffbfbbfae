#include "mdpcf/mdp_core.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace mdpcf {

namespace {

// Probabilities this far below zero are treated as arithmetic noise and
// clamped; anything lower is a genuine sign error.
constexpr double kNegativeNoise = -1e-12;

std::string join_violations(const std::vector<StrategyViolation>& violations) {
  std::ostringstream out;
  out << "invalid strategy:";
  for (const auto& v : violations) {
    out << " [state " << v.state << " " << v.rule << ": " << v.detail << "]";
  }
  return out.str();
}

}  // namespace

Distribution::Distribution(std::vector<std::pair<int, double>> entries) {
  std::sort(entries.begin(), entries.end());
  double sum = 0.0;
  for (size_t i = 0; i < entries.size(); ++i) {
    auto& [item, p] = entries[i];
    if (i > 0 && entries[i - 1].first == item) {
      throw ModelError("duplicate item " + std::to_string(item) + " in distribution");
    }
    if (p < kNegativeNoise) {
      throw ModelError("negative probability " + std::to_string(p) + " for item " +
                       std::to_string(item));
    }
    if (p < 0.0) p = 0.0;
    sum += p;
  }
  if (std::abs(sum - 1.0) > kDistributionSumTolerance) {
    throw ModelError("distribution mass " + std::to_string(sum) +
                     " deviates from one beyond tolerance");
  }
  support_.reserve(entries.size());
  for (const auto& [item, p] : entries) {
    if (p > kZeroProbability) support_.emplace_back(item, p / sum);
  }
  if (support_.empty()) {
    throw ModelError("distribution with empty support");
  }
}

Distribution Distribution::dirac(int item) {
  Distribution d;
  d.support_.emplace_back(item, 1.0);
  return d;
}

double Distribution::prob(int item) const {
  auto it = std::lower_bound(support_.begin(), support_.end(),
                             std::make_pair(item, -1.0));
  if (it != support_.end() && it->first == item) return it->second;
  return 0.0;
}

double tv_distance(const Distribution& mu1, const Distribution& mu2) {
  const auto& a = mu1.support();
  const auto& b = mu2.support();
  double total = 0.0;
  size_t i = 0, j = 0;
  while (i < a.size() || j < b.size()) {
    if (j == b.size() || (i < a.size() && a[i].first < b[j].first)) {
      total += a[i].second;
      ++i;
    } else if (i == a.size() || b[j].first < a[i].first) {
      total += b[j].second;
      ++j;
    } else {
      total += std::abs(a[i].second - b[j].second);
      ++i;
      ++j;
    }
  }
  return 0.5 * total;
}

std::vector<int> Mdp::enabled_actions(int s) const {
  std::vector<int> out;
  for (const auto& t : transitions.at(static_cast<size_t>(s))) out.push_back(t.action);
  return out;
}

const Distribution& Mdp::successors(int s, int a) const {
  for (const auto& t : transitions.at(static_cast<size_t>(s))) {
    if (t.action == a) return t.successors;
  }
  throw ModelError("action " + std::to_string(a) + " not enabled in state " +
                   std::to_string(s));
}

bool Mdp::action_enabled(int s, int a) const {
  for (const auto& t : transitions.at(static_cast<size_t>(s))) {
    if (t.action == a) return true;
  }
  return false;
}

bool Mdp::state_controllable(int s) const {
  if (transitions.at(static_cast<size_t>(s)).size() < 2) return false;
  return !controllable || controllable->count(s) > 0;
}

void Mdp::validate() const {
  const int n = num_states();
  if (n == 0) throw ModelError("empty state set");
  if (initial < 0 || initial >= n) throw ModelError("initial state out of range");
  if (transitions.size() != static_cast<size_t>(n)) {
    throw ModelError("transition table size does not match state set");
  }
  for (int s = 0; s < n; ++s) {
    const auto& row = transitions[static_cast<size_t>(s)];
    if (row.empty()) {
      throw ModelError("state " + std::to_string(s) + " enables no action");
    }
    int prev = -1;
    for (const auto& t : row) {
      if (t.action < 0 || t.action >= num_actions()) {
        throw ModelError("action id out of range in state " + std::to_string(s));
      }
      if (t.action <= prev) {
        throw ModelError("unsorted or duplicate action in state " + std::to_string(s));
      }
      prev = t.action;
      for (const auto& [succ, p] : t.successors.support()) {
        (void)p;
        if (succ < 0 || succ >= n) {
          throw ModelError("successor out of range in state " + std::to_string(s));
        }
      }
    }
  }
  if (controllable) {
    for (int s : *controllable) {
      if (s < 0 || s >= n) throw ModelError("controllable state out of range");
    }
  }
}

namespace {

inline std::uint64_t fnv1a(std::uint64_t h, const void* data, size_t len) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < len; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a_str(std::uint64_t h, const std::string& s) {
  h = fnv1a(h, s.data(), s.size());
  return fnv1a(h, "\x1f", 1);
}

inline std::uint64_t fnv1a_u64(std::uint64_t h, std::uint64_t v) {
  return fnv1a(h, &v, sizeof(v));
}

inline std::uint64_t fnv1a_double(std::uint64_t h, double v) {
  std::uint64_t bits;
  static_assert(sizeof(bits) == sizeof(v));
  std::memcpy(&bits, &v, sizeof(bits));
  return fnv1a_u64(h, bits);
}

}  // namespace

std::uint64_t Mdp::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  h = fnv1a_u64(h, static_cast<std::uint64_t>(num_states()));
  h = fnv1a_u64(h, static_cast<std::uint64_t>(num_actions()));
  h = fnv1a_u64(h, static_cast<std::uint64_t>(initial));
  for (const auto& label : state_labels) h = fnv1a_str(h, label);
  for (const auto& label : action_labels) h = fnv1a_str(h, label);
  for (const auto& row : transitions) {
    h = fnv1a_u64(h, static_cast<std::uint64_t>(row.size()));
    for (const auto& t : row) {
      h = fnv1a_u64(h, static_cast<std::uint64_t>(t.action));
      for (const auto& [succ, p] : t.successors.support()) {
        h = fnv1a_u64(h, static_cast<std::uint64_t>(succ));
        h = fnv1a_double(h, p);
      }
    }
  }
  h = fnv1a_u64(h, controllable ? 1 : 0);
  if (controllable) {
    for (int s : *controllable) h = fnv1a_u64(h, static_cast<std::uint64_t>(s));
  }
  return h;
}

std::vector<StrategyViolation> validate_strategy(const Mdp& m, const RawStrategy& raw) {
  std::vector<StrategyViolation> out;
  std::vector<char> seen(static_cast<size_t>(m.num_states()), 0);
  for (const auto& [s, row] : raw.rows) {
    if (s < 0 || s >= m.num_states()) {
      out.push_back({s, "domain", "state not in the model"});
      continue;
    }
    if (seen[static_cast<size_t>(s)]) {
      out.push_back({s, "domain", "duplicate row for state"});
      continue;
    }
    seen[static_cast<size_t>(s)] = 1;
    double sum = 0.0;
    std::set<int> used;
    for (const auto& [a, p] : row) {
      if (p < 0.0) {
        out.push_back({s, "negative-probability",
                       "action " + std::to_string(a) + " has probability " +
                           std::to_string(p)});
      }
      if (!used.insert(a).second) {
        out.push_back({s, "domain", "duplicate action " + std::to_string(a)});
      }
      if (p > kZeroProbability && !m.action_enabled(s, a)) {
        out.push_back({s, "disabled-action",
                       "positive probability on action " + std::to_string(a)});
      }
      sum += p;
    }
    if (std::abs(sum - 1.0) > kDistributionSumTolerance) {
      out.push_back({s, "normalization",
                     "row mass " + std::to_string(sum) + " deviates from one"});
    }
  }
  for (int s = 0; s < m.num_states(); ++s) {
    if (!seen[static_cast<size_t>(s)]) {
      out.push_back({s, "domain", "missing row for state"});
    }
  }
  return out;
}

std::vector<StrategyViolation> validate_strategy(const Mdp& m, const Strategy& sigma) {
  std::vector<StrategyViolation> out;
  if (sigma.choices.size() != static_cast<size_t>(m.num_states())) {
    out.push_back({-1, "domain", "row count " + std::to_string(sigma.choices.size()) +
                                     " does not match state count"});
    return out;
  }
  for (int s = 0; s < m.num_states(); ++s) {
    for (const auto& [a, p] : sigma.row(s).support()) {
      (void)p;
      if (!m.action_enabled(s, a)) {
        out.push_back({s, "disabled-action",
                       "positive probability on action " + std::to_string(a)});
      }
    }
  }
  return out;
}

Strategy make_strategy(const Mdp& m, const RawStrategy& raw) {
  auto violations = validate_strategy(m, raw);
  if (!violations.empty()) throw ModelError(join_violations(violations));
  Strategy sigma;
  sigma.choices.resize(static_cast<size_t>(m.num_states()));
  for (const auto& [s, row] : raw.rows) {
    sigma.choices[static_cast<size_t>(s)] = Distribution(row);
  }
  return sigma;
}

void Dtmc::validate() const {
  const int n = num_states();
  if (n == 0) throw ModelError("empty chain");
  if (initial < 0 || initial >= n) throw ModelError("initial state out of range");
  for (int s = 0; s < n; ++s) {
    double sum = 0.0;
    int prev = -1;
    for (const auto& [succ, p] : rows[static_cast<size_t>(s)]) {
      if (succ <= prev) throw ModelError("unsorted or duplicate successor in chain row");
      prev = succ;
      if (succ < 0 || succ >= n) throw ModelError("successor out of range in chain row");
      if (p <= 0.0) throw ModelError("nonpositive probability stored in chain row");
      sum += p;
    }
    if (std::abs(sum - 1.0) > kDistributionSumTolerance) {
      throw ModelError("chain row " + std::to_string(s) + " mass deviates from one");
    }
  }
}

Dtmc induce_dtmc(const Mdp& m, const Strategy& sigma) {
  auto violations = validate_strategy(m, sigma);
  if (!violations.empty()) throw ModelError(join_violations(violations));
  Dtmc chain;
  chain.initial = m.initial;
  chain.rows.resize(static_cast<size_t>(m.num_states()));
  std::vector<double> dense(static_cast<size_t>(m.num_states()), 0.0);
  for (int s = 0; s < m.num_states(); ++s) {
    std::fill(dense.begin(), dense.end(), 0.0);
    for (const auto& [a, pa] : sigma.row(s).support()) {
      for (const auto& [succ, p] : m.successors(s, a).support()) {
        dense[static_cast<size_t>(succ)] += pa * p;
      }
    }
    auto& row = chain.rows[static_cast<size_t>(s)];
    for (int succ = 0; succ < m.num_states(); ++succ) {
      if (dense[static_cast<size_t>(succ)] > 0.0) {
        row.emplace_back(succ, dense[static_cast<size_t>(succ)]);
      }
    }
  }
  chain.validate();
  return chain;
}

std::vector<int> decision_states(const Mdp& m) {
  std::vector<int> out;
  for (int s = 0; s < m.num_states(); ++s) {
    if (m.transitions[static_cast<size_t>(s)].size() >= 2) out.push_back(s);
  }
  return out;
}

std::vector<double> distance_vector(const Mdp& m, const Strategy& sigma1,
                                    const Strategy& sigma2) {
  for (const Strategy* sigma : {&sigma1, &sigma2}) {
    auto violations = validate_strategy(m, *sigma);
    if (!violations.empty()) throw ModelError(join_violations(violations));
  }
  std::vector<double> out;
  for (int s : decision_states(m)) {
    out.push_back(tv_distance(sigma1.row(s), sigma2.row(s)));
  }
  return out;
}

void DistanceConfig::validate() const {
  if (r0 < 0.0 || r1 < 0.0 || rinf < 0.0) {
    throw ModelError("distance weights must be nonnegative");
  }
  if (r0 == 0.0 && r1 == 0.0 && rinf == 0.0) {
    throw ModelError("at least one distance weight must be positive");
  }
}

DistanceBreakdown strategy_distance(const Mdp& m, const Strategy& sigma1,
                                    const Strategy& sigma2,
                                    const DistanceConfig& cfg) {
  cfg.validate();
  DistanceBreakdown out;
  out.per_state = distance_vector(m, sigma1, sigma2);
  double sum = 0.0;
  for (double delta : out.per_state) {
    if (delta > kChangeTolerance) ++out.d0;
    sum += delta;
    out.dinf = std::max(out.dinf, delta);
  }
  out.d1 = out.per_state.empty() ? 0.0 : sum / static_cast<double>(out.per_state.size());
  out.combined = cfg.r0 * out.d0 + cfg.r1 * out.d1 + cfg.rinf * out.dinf;
  return out;
}

}  // namespace mdpcf
