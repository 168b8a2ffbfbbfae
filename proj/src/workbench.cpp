#include "mdpcf/workbench.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <deque>
#include <future>
#include <map>
#include <random>
#include <sstream>
#include <thread>
#include <utility>

#include "json.hpp"
#include "mdpcf/json_io.hpp"
#include "mdpcf/reachability.hpp"

namespace mdpcf {

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r");
  size_t e = s.find_last_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, e - b + 1);
}

/// Shortest decimal form that parses back to the same double; plain decimal
/// notation for human-scale magnitudes, scientific otherwise.
std::string shortest(double v) {
  char buf[512];
  const double a = std::abs(v);
  const auto fmt = (v != 0.0 && (a < 1e-4 || a >= 1e16))
                       ? std::chars_format::general
                       : std::chars_format::fixed;
  const auto res = std::to_chars(buf, buf + sizeof(buf), v, fmt);
  return std::string(buf, res.ptr);
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double unit_from(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

const char* const kStartLabel = "start";
const char* const kShortTerminal = "negative";
const char* const kLongTerminal = "positive";

}  // namespace

TraceLog parse_traces(const std::string& text, const std::string& origin) {
  TraceLog log;
  std::map<std::string, int> seen;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;

    std::vector<std::string> trace;
    std::stringstream fields(line);
    std::string field;
    while (std::getline(fields, field, ',')) {
      const std::string label = trim(field);
      if (label.empty()) {
        throw IoError(origin + ":" + std::to_string(line_no) +
                      ": empty event label");
      }
      if (!seen.count(label)) {
        seen.emplace(label, static_cast<int>(log.alphabet.size()));
        log.alphabet.push_back(label);
      }
      trace.push_back(label);
    }
    log.traces.push_back(std::move(trace));
  }
  if (log.traces.empty()) {
    throw IoError(origin + ": no traces found");
  }
  return log;
}

TraceLog load_traces(const std::string& path) {
  return parse_traces(read_text_file(path), path);
}

void LearnConfig::validate() const {
  if (history < 1) throw ModelError("history length must be at least one");
  if (!(smoothing >= 0.0)) throw ModelError("smoothing must be nonnegative");
  if (short_threshold < 0) throw ModelError("length threshold must be nonnegative");
}

Mdp learn_mdp(const TraceLog& log, const LearnConfig& cfg) {
  cfg.validate();
  if (log.traces.empty()) throw ModelError("cannot learn from an empty log");
  for (const std::string& label : log.alphabet) {
    if (label == kStartLabel || label == kShortTerminal || label == kLongTerminal) {
      throw ModelError("event label '" + label + "' is reserved");
    }
  }

  std::map<std::string, int> state_ids;
  std::vector<std::string> state_labels;
  const auto state_id = [&](const std::string& label) {
    auto it = state_ids.find(label);
    if (it != state_ids.end()) return it->second;
    const int id = static_cast<int>(state_labels.size());
    state_ids.emplace(label, id);
    state_labels.push_back(label);
    return id;
  };
  std::map<std::string, int> action_ids;
  std::vector<std::string> action_labels;
  const auto action_id = [&](const std::string& label) {
    auto it = action_ids.find(label);
    if (it != action_ids.end()) return it->second;
    const int id = static_cast<int>(action_labels.size());
    action_ids.emplace(label, id);
    action_labels.push_back(label);
    return id;
  };

  const int start = state_id(kStartLabel);
  std::map<std::pair<int, int>, std::map<int, long long>> counts;

  for (const auto& trace : log.traces) {
    if (trace.empty()) throw ModelError("traces must contain at least one event");
    int current = start;
    std::deque<std::string> window;
    for (const std::string& event : trace) {
      const int a = action_id(event);
      window.push_back(event);
      if (static_cast<int>(window.size()) > cfg.history) window.pop_front();
      std::string key = window.front();
      for (size_t i = 1; i < window.size(); ++i) key += "," + window[i];
      const int next = state_id(key);
      ++counts[{current, a}][next];
      current = next;
    }
    const char* terminal_label =
        static_cast<int>(trace.size()) < cfg.short_threshold ? kShortTerminal
                                                             : kLongTerminal;
    const int terminal_action = action_id(terminal_label);
    const int terminal = state_id(terminal_label);
    ++counts[{current, terminal_action}][terminal];
    counts[{terminal, terminal_action}][terminal] = 1;
  }

  Mdp m;
  m.state_labels = state_labels;
  m.action_labels = action_labels;
  m.initial = start;
  m.transitions.resize(state_labels.size());
  for (const auto& [key, successors] : counts) {
    long long total = 0;
    for (const auto& [next, c] : successors) total += c;
    const double denom = static_cast<double>(total) +
                         cfg.smoothing * static_cast<double>(successors.size());
    std::vector<std::pair<int, double>> to;
    for (const auto& [next, c] : successors) {
      to.emplace_back(next, (static_cast<double>(c) + cfg.smoothing) / denom);
    }
    m.transitions[static_cast<size_t>(key.first)].push_back(
        Transition{key.second, Distribution(std::move(to))});
  }
  m.validate();
  return m;
}

Strategy random_strategy(const Mdp& m, std::uint64_t seed) {
  const std::uint64_t mix = splitmix64(m.fingerprint() ^ splitmix64(seed));
  Strategy s;
  s.choices.resize(static_cast<size_t>(m.num_states()));
  for (int st = 0; st < m.num_states(); ++st) {
    const std::vector<int> actions = m.enabled_actions(st);
    if (actions.size() == 1) {
      s.choices[static_cast<size_t>(st)] = Distribution({{actions[0], 1.0}});
      continue;
    }
    std::mt19937_64 rng(splitmix64(mix ^ (static_cast<std::uint64_t>(st) + 1)));
    std::vector<double> draws(actions.size());
    double total = 0.0;
    for (double& d : draws) {
      d = -std::log1p(-unit_from(rng)) + 1e-12;
      total += d;
    }
    std::vector<std::pair<int, double>> row;
    for (size_t i = 0; i < actions.size(); ++i) {
      row.emplace_back(actions[i], draws[i] / total);
    }
    s.choices[static_cast<size_t>(st)] = Distribution(std::move(row));
  }
  return s;
}

std::vector<LabeledStrategy> random_strategies(const Mdp& m, int count,
                                               std::uint64_t first_seed) {
  std::vector<LabeledStrategy> out;
  for (int i = 0; i < count; ++i) {
    const std::uint64_t seed = first_seed + static_cast<std::uint64_t>(i);
    out.push_back(LabeledStrategy{seed, random_strategy(m, seed)});
  }
  return out;
}

std::vector<double> default_gamma_grid() {
  std::vector<double> grid{0.0001};
  for (int i = 1; i <= 10; ++i) grid.push_back(static_cast<double>(i) / 10.0);
  return grid;
}

BenchReport gamma_sweep(const Mdp& m, int target,
                        const std::vector<LabeledStrategy>& strategies,
                        const SweepConfig& cfg) {
  if (target < 0 || target >= m.num_states()) {
    throw ModelError("sweep target state is out of range");
  }
  if (strategies.empty()) throw ModelError("sweep needs at least one strategy");
  if (cfg.gammas.empty()) throw ModelError("sweep needs at least one bound");

  const size_t per_strategy = cfg.gammas.size();
  const size_t total = strategies.size() * per_strategy;
  BenchReport report;
  report.rows.resize(total);

  const auto run_one = [&](size_t index) {
    const size_t si = index / per_strategy;
    const size_t gi = index % per_strategy;
    BenchRun& row = report.rows[index];
    row.model = cfg.model_name;
    row.gamma = cfg.gammas[gi];
    row.strategy_seed = strategies[si].seed;
    try {
      SynthesisQuery q;
      q.mdp = m;
      q.sigma = strategies[si].strategy;
      q.target = target;
      q.gamma = cfg.gammas[gi];
      q.distances = cfg.distances;
      const SynthesisResult r = solve(q, cfg.solver);
      row.status = r.status;
      row.wall_time_s = r.wall_time_s;
      row.distance_combined = r.distance.combined;
      row.reach_after = r.reach_after;
    } catch (const std::exception& e) {
      row.error = e.what();
    }
  };

  const int jobs = std::max(1, cfg.jobs);
  if (jobs == 1) {
    for (size_t i = 0; i < total; ++i) run_one(i);
  } else {
    std::atomic<size_t> next{0};
    std::vector<std::future<void>> workers;
    const int worker_count = std::min<int>(jobs, static_cast<int>(total));
    for (int w = 0; w < worker_count; ++w) {
      workers.push_back(std::async(std::launch::async, [&] {
        for (size_t i = next.fetch_add(1); i < total; i = next.fetch_add(1)) {
          run_one(i);
        }
      }));
    }
    for (auto& f : workers) f.get();
  }

  if (cfg.fixed_timing) {
    for (BenchRun& row : report.rows) row.wall_time_s = 0.0;
  }

  BenchAggregate agg;
  agg.model = cfg.model_name;
  agg.runs = static_cast<int>(total);
  agg.min_t = report.rows.empty() ? 0.0 : report.rows[0].wall_time_s;
  agg.max_t = agg.min_t;
  double sum = 0.0;
  for (const BenchRun& row : report.rows) {
    sum += row.wall_time_s;
    agg.min_t = std::min(agg.min_t, row.wall_time_s);
    agg.max_t = std::max(agg.max_t, row.wall_time_s);
    if (!row.error.empty()) {
      ++agg.errors;
      continue;
    }
    switch (row.status) {
      case SolveStatus::Optimal:
      case SolveStatus::Trivial:
        ++agg.optimal;
        break;
      case SolveStatus::Infeasible:
        ++agg.infeasible;
        break;
      case SolveStatus::Timeout:
        ++agg.timeout;
        break;
      case SolveStatus::SubOptimal:
        ++agg.suboptimal;
        break;
    }
  }
  agg.mean_t = sum / static_cast<double>(total);
  double var = 0.0;
  for (const BenchRun& row : report.rows) {
    const double d = row.wall_time_s - agg.mean_t;
    var += d * d;
  }
  agg.std_t = std::sqrt(var / static_cast<double>(total));
  report.aggregates.push_back(std::move(agg));
  return report;
}

std::string BenchReport::to_csv() const {
  std::string out =
      "model,gamma,strategy_seed,status,wall_time_s,distance_combined,"
      "reach_after\n";
  char buf[64];
  for (const BenchRun& row : rows) {
    out += row.model;
    out += ',';
    out += shortest(row.gamma);
    out += ',';
    out += std::to_string(row.strategy_seed);
    out += ',';
    out += row.error.empty() ? to_string(row.status) : std::string("Error");
    out += ',';
    std::snprintf(buf, sizeof(buf), "%.6f", row.wall_time_s);
    out += buf;
    out += ',';
    out += shortest(row.distance_combined);
    out += ',';
    out += shortest(row.reach_after);
    out += '\n';
  }
  return out;
}

std::string BenchReport::to_table() const {
  std::string out =
      "model             runs   mean(t)    std(t)    min(t)    max(t)  "
      "Opt.  Inf.  T.O.  Sub.O.\n";
  char buf[160];
  for (const BenchAggregate& a : aggregates) {
    std::snprintf(buf, sizeof(buf),
                  "%-16s %5d %9.4f %9.4f %9.4f %9.4f %5d %5d %5d %7d\n",
                  a.model.c_str(), a.runs, a.mean_t, a.std_t, a.min_t, a.max_t,
                  a.optimal, a.infeasible, a.timeout, a.suboptimal);
    out += buf;
  }
  return out;
}

std::string result_to_json(const Mdp& m, const SynthesisQuery& q,
                           const SynthesisResult& r, bool fixed_timing) {
  nlohmann::ordered_json j;
  j["status"] = to_string(r.status);
  j["gamma"] = q.gamma;
  j["target"] = m.state_labels.at(static_cast<size_t>(q.target));
  j["reach_before"] = r.reach_before;
  j["reach_after"] = r.reach_after;
  nlohmann::ordered_json d;
  d["d0"] = r.distance.d0;
  d["d1"] = r.distance.d1;
  d["dinf"] = r.distance.dinf;
  d["combined"] = r.distance.combined;
  j["distance"] = std::move(d);
  if (r.strategy.choices.empty()) {
    j["strategy"] = nullptr;
  } else {
    j["strategy"] = nlohmann::ordered_json::parse(strategy_to_json(r.strategy));
  }
  j["wall_time_s"] = fixed_timing ? 0.0 : r.wall_time_s;
  j["seed"] = r.seed;
  return j.dump(2) + "\n";
}

}  // namespace mdpcf
