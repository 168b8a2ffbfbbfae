#include <charconv>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mdpcf/diversity.hpp"
#include "mdpcf/encoding.hpp"
#include "mdpcf/explain.hpp"
#include "mdpcf/json_io.hpp"
#include "mdpcf/reachability.hpp"
#include "mdpcf/solver.hpp"
#include "mdpcf/workbench.hpp"

namespace {

using namespace mdpcf;

/// Shortest decimal form that parses back to the same double; plain decimal
/// notation for human-scale magnitudes.
std::string shortest(double v) {
  char buf[512];
  const double a = std::abs(v);
  const auto fmt = (v != 0.0 && (a < 1e-4 || a >= 1e16))
                       ? std::chars_format::general
                       : std::chars_format::fixed;
  const auto res = std::to_chars(buf, buf + sizeof(buf), v, fmt);
  return std::string(buf, res.ptr);
}

/// Accepts a state label first, an in-range numeric index second.
int resolve_state(const Mdp& m, const std::string& token) {
  for (int s = 0; s < m.num_states(); ++s) {
    if (m.state_labels[static_cast<size_t>(s)] == token) return s;
  }
  int value = -1;
  const auto res =
      std::from_chars(token.data(), token.data() + token.size(), value);
  if (res.ec == std::errc() && res.ptr == token.data() + token.size() &&
      value >= 0 && value < m.num_states()) {
    return value;
  }
  throw IoError("unknown state '" + token + "'");
}

void emit(const std::string& out_path, const std::string& content) {
  if (out_path.empty()) {
    std::fwrite(content.data(), 1, content.size(), stdout);
  } else {
    write_text_file(out_path, content);
  }
}

int exit_code_for(SolveStatus status) {
  switch (status) {
    case SolveStatus::Optimal:
    case SolveStatus::SubOptimal:
    case SolveStatus::Trivial:
      return 0;
    case SolveStatus::Infeasible:
      return 2;
    case SolveStatus::Timeout:
      return 3;
  }
  return 1;
}

std::string path_stem(const std::string& path) {
  const size_t slash = path.find_last_of("/\\");
  std::string name = slash == std::string::npos ? path : path.substr(slash + 1);
  const size_t dot = name.find_last_of('.');
  if (dot != std::string::npos && dot > 0) name.resize(dot);
  return name;
}

std::string summary_text(const Mdp& m, const SynthesisQuery& q,
                         const SynthesisResult& r) {
  std::string out = "status: " + to_string(r.status) + "\n";
  out += "target: " + m.state_labels[static_cast<size_t>(q.target)] + "\n";
  out += "gamma: " + shortest(q.gamma) + "\n";
  out += "minimum reach: " + shortest(r.min_reach) + "\n";
  out += "reach: " + shortest(r.reach_after) + " (was " +
         shortest(r.reach_before) + ")\n";
  out += "distance: d0=" + std::to_string(r.distance.d0) +
         " d1=" + shortest(r.distance.d1) + " dinf=" + shortest(r.distance.dinf) +
         " combined=" + shortest(r.distance.combined) + "\n";
  return out;
}

struct SolveFlags {
  std::string model;
  std::string strategy;
  std::string target;
  std::string out;
  std::string format = "json";
  double gamma = 0.0;
  double epsilon = 0.0;
  double r0 = 1.0;
  double r1 = 1.0;
  double rinf = 1.0;
  double time_limit = SolverConfig{}.time_limit_s;
  double lambda = 2.0;
  int count = 3;
  int seed = 1;
  int starts = SolverConfig{}.starts;
  bool fixed_timing = false;

  SolverConfig solver_config() const {
    SolverConfig cfg;
    cfg.seed = static_cast<std::uint64_t>(seed);
    cfg.starts = starts;
    cfg.time_limit_s = time_limit;
    return cfg;
  }
  DistanceConfig distance_config() const { return DistanceConfig{r0, r1, rinf}; }
};

void add_model_flags(CLI::App* sub, SolveFlags& f, bool with_strategy = true) {
  sub->add_option("--model", f.model, "model JSON file")->required();
  if (with_strategy) {
    sub->add_option("--strategy", f.strategy, "strategy JSON file")->required();
  }
  sub->add_option("--target", f.target, "target state label or index")->required();
}

void add_solver_flags(CLI::App* sub, SolveFlags& f) {
  sub->add_option("--r0", f.r0, "weight of the changed-state count");
  sub->add_option("--r1", f.r1, "weight of the average change");
  sub->add_option("--rinf", f.rinf, "weight of the worst-case change");
  sub->add_option("--seed", f.seed, "random seed");
  sub->add_option("--time-limit", f.time_limit, "time limit in seconds");
  sub->add_option("--starts", f.starts, "number of local-search starts");
  sub->add_flag("--fixed-timing", f.fixed_timing, "")->group("");
}

void add_output_flags(CLI::App* sub, SolveFlags& f,
                      const std::vector<std::string>& formats) {
  sub->add_option("--out", f.out, "write output to this file instead of stdout");
  sub->add_option("--format", f.format, "output format")
      ->check(CLI::IsMember(formats));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Counterfactual strategy synthesis for Markov decision processes"};
  app.require_subcommand(1);
  int rc = 0;

  // check: reaching probability of the given strategy.
  SolveFlags check_f;
  check_f.format = "text";
  auto* check_cmd =
      app.add_subcommand("check", "reaching probability of a strategy");
  add_model_flags(check_cmd, check_f);
  add_output_flags(check_cmd, check_f, {"text", "json"});
  check_cmd->callback([&] {
    const Mdp m = load_mdp(check_f.model);
    const Strategy sigma = load_strategy(m, check_f.strategy);
    const int target = resolve_state(m, check_f.target);
    const double p = strategy_reach_probability(m, sigma, target);
    if (check_f.format == "json") {
      nlohmann::ordered_json j;
      j["target"] = m.state_labels[static_cast<size_t>(target)];
      j["reach"] = p;
      emit(check_f.out, j.dump(2) + "\n");
    } else {
      emit(check_f.out, shortest(p) + "\n");
    }
  });

  // feasible: minimum reaching probability over all strategies.
  SolveFlags feas_f;
  feas_f.format = "text";
  auto* feas_cmd =
      app.add_subcommand("feasible", "minimum reaching probability over strategies");
  add_model_flags(feas_cmd, feas_f, false);
  auto* feas_gamma = feas_cmd->add_option("--gamma", feas_f.gamma,
                                          "bound to compare the minimum against");
  add_output_flags(feas_cmd, feas_f, {"text", "json"});
  feas_cmd->callback([&] {
    const Mdp m = load_mdp(feas_f.model);
    const int target = resolve_state(m, feas_f.target);
    const MinReachResult r = min_reach_probability(m, target);
    const bool bounded = feas_gamma->count() > 0;
    const bool feasible =
        !bounded || r.value <= feas_f.gamma + kFeasibilityTolerance;
    if (feas_f.format == "json") {
      nlohmann::ordered_json j;
      j["target"] = m.state_labels[static_cast<size_t>(target)];
      j["min_reach"] = r.value;
      if (bounded) {
        j["gamma"] = feas_f.gamma;
        j["feasible"] = feasible;
      }
      emit(feas_f.out, j.dump(2) + "\n");
    } else {
      std::string text = shortest(r.value) + "\n";
      if (bounded) {
        text += feasible ? "feasible\n" : "infeasible\n";
      }
      emit(feas_f.out, text);
    }
    if (!feasible) rc = 2;
  });

  // synth: single counterfactual of minimal distance.
  SolveFlags synth_f;
  auto* synth_cmd =
      app.add_subcommand("synth", "synthesize a minimally changed strategy");
  add_model_flags(synth_cmd, synth_f);
  synth_cmd->add_option("--gamma", synth_f.gamma, "reaching probability bound")
      ->required();
  add_solver_flags(synth_cmd, synth_f);
  add_output_flags(synth_cmd, synth_f, {"json", "text"});
  synth_cmd->callback([&] {
    const Mdp m = load_mdp(synth_f.model);
    SynthesisQuery q;
    q.mdp = m;
    q.sigma = load_strategy(m, synth_f.strategy);
    q.target = resolve_state(m, synth_f.target);
    q.gamma = synth_f.gamma;
    q.distances = synth_f.distance_config();
    const SynthesisResult r = solve(q, synth_f.solver_config());
    emit(synth_f.out, synth_f.format == "text"
                          ? summary_text(m, q, r)
                          : result_to_json(m, q, r, synth_f.fixed_timing));
    rc = exit_code_for(r.status);
  });

  // epsilon: bounded-distance mode (any strategy within the budget).
  SolveFlags eps_f;
  auto* eps_cmd = app.add_subcommand(
      "epsilon", "find a strategy within a fixed distance budget");
  add_model_flags(eps_cmd, eps_f);
  eps_cmd->add_option("--gamma", eps_f.gamma, "reaching probability bound")
      ->required();
  eps_cmd->add_option("--epsilon", eps_f.epsilon, "distance budget")->required();
  add_solver_flags(eps_cmd, eps_f);
  add_output_flags(eps_cmd, eps_f, {"json", "text"});
  eps_cmd->callback([&] {
    const Mdp m = load_mdp(eps_f.model);
    SynthesisQuery q;
    q.mdp = m;
    q.sigma = load_strategy(m, eps_f.strategy);
    q.target = resolve_state(m, eps_f.target);
    q.gamma = eps_f.gamma;
    q.distances = eps_f.distance_config();
    q.epsilon = eps_f.epsilon;
    const SynthesisResult r = solve(q, eps_f.solver_config());
    emit(eps_f.out, eps_f.format == "text"
                        ? summary_text(m, q, r)
                        : result_to_json(m, q, r, eps_f.fixed_timing));
    rc = exit_code_for(r.status);
  });

  // diverse: a set of spread-out counterfactuals.
  SolveFlags div_f;
  auto* div_cmd =
      app.add_subcommand("diverse", "synthesize a diverse set of strategies");
  add_model_flags(div_cmd, div_f);
  div_cmd->add_option("--gamma", div_f.gamma, "reaching probability bound")
      ->required();
  div_cmd->add_option("--lambda", div_f.lambda, "weight of the spread reward");
  div_cmd->add_option("--count", div_f.count, "number of strategies");
  add_solver_flags(div_cmd, div_f);
  add_output_flags(div_cmd, div_f, {"json", "text"});
  div_cmd->callback([&] {
    const Mdp m = load_mdp(div_f.model);
    SynthesisQuery q;
    q.mdp = m;
    q.sigma = load_strategy(m, div_f.strategy);
    q.target = resolve_state(m, div_f.target);
    q.gamma = div_f.gamma;
    DiversityConfig dcfg;
    dcfg.count = div_f.count;
    dcfg.lambda = div_f.lambda;
    dcfg.base = div_f.distance_config();
    const DiverseSet ds = diverse_synthesize(q, dcfg, div_f.solver_config());
    q.distances = dcfg.base;
    if (div_f.format == "text") {
      std::string text = "status: " + to_string(ds.status) + "\n";
      text += "minimum reach: " + shortest(ds.min_reach) + "\n";
      for (size_t i = 0; i < ds.members.size(); ++i) {
        text += "member " + std::to_string(i + 1) + ": combined=" +
                shortest(ds.members[i].distance.combined) +
                " reach=" + shortest(ds.members[i].reach_after) +
                " novel=" + shortest(ds.novel_fractions[i]) + "\n";
      }
      emit(div_f.out, text);
    } else {
      nlohmann::ordered_json j;
      j["status"] = to_string(ds.status);
      j["gamma"] = q.gamma;
      j["target"] = m.state_labels[static_cast<size_t>(q.target)];
      j["min_reach"] = ds.min_reach;
      j["members"] = nlohmann::ordered_json::array();
      for (const SynthesisResult& member : ds.members) {
        j["members"].push_back(nlohmann::ordered_json::parse(
            result_to_json(m, q, member, div_f.fixed_timing)));
      }
      j["pairwise"] = ds.pairwise;
      j["determinant_trace"] = ds.determinant_trace;
      j["novel_fractions"] = ds.novel_fractions;
      emit(div_f.out, j.dump(2) + "\n");
    }
    rc = exit_code_for(ds.status);
  });

  // oracle: exhaustive search on a probability grid.
  SolveFlags oracle_f;
  double oracle_step = 0.01;
  auto* oracle_cmd =
      app.add_subcommand("oracle", "exhaustive grid search for the optimum");
  add_model_flags(oracle_cmd, oracle_f);
  oracle_cmd->add_option("--gamma", oracle_f.gamma, "reaching probability bound")
      ->required();
  auto* oracle_eps =
      oracle_cmd->add_option("--epsilon", oracle_f.epsilon, "distance budget");
  oracle_cmd->add_option("--step", oracle_step, "grid resolution");
  oracle_cmd->add_option("--r0", oracle_f.r0, "weight of the changed-state count");
  oracle_cmd->add_option("--r1", oracle_f.r1, "weight of the average change");
  oracle_cmd->add_option("--rinf", oracle_f.rinf, "weight of the worst-case change");
  oracle_cmd->add_option("--time-limit", oracle_f.time_limit,
                         "time limit in seconds");
  add_output_flags(oracle_cmd, oracle_f, {"json", "text"});
  oracle_cmd->callback([&] {
    const Mdp m = load_mdp(oracle_f.model);
    SynthesisQuery q;
    q.mdp = m;
    q.sigma = load_strategy(m, oracle_f.strategy);
    q.target = resolve_state(m, oracle_f.target);
    q.gamma = oracle_f.gamma;
    q.distances = oracle_f.distance_config();
    if (oracle_eps->count() > 0) q.epsilon = oracle_f.epsilon;
    GridOracleOptions opts;
    opts.step = oracle_step;
    opts.time_limit_s = oracle_f.time_limit;
    const GridOracleResult r = grid_oracle(q, opts);
    if (oracle_f.format == "text") {
      std::string text = std::string("completed: ") +
                         (r.completed ? "yes" : "no") + "\n";
      text += std::string("feasible: ") + (r.feasible ? "yes" : "no") + "\n";
      text += "best distance: " + shortest(r.best_distance) + "\n";
      text += "best reach: " + shortest(r.best_reach) + "\n";
      text += "evaluations: " + std::to_string(r.evaluations) + "\n";
      emit(oracle_f.out, text);
    } else {
      nlohmann::ordered_json j;
      j["available"] = r.available;
      j["completed"] = r.completed;
      j["feasible"] = r.feasible;
      j["best_distance"] = r.best_distance;
      j["best_reach"] = r.best_reach;
      j["evaluations"] = r.evaluations;
      if (r.feasible) {
        j["strategy"] =
            nlohmann::ordered_json::parse(strategy_to_json(r.best_strategy));
      } else {
        j["strategy"] = nullptr;
      }
      emit(oracle_f.out, j.dump(2) + "\n");
    }
    if (!r.available || !r.completed) {
      rc = r.feasible ? 0 : 3;
    } else {
      rc = r.feasible ? 0 : 2;
    }
  });

  // learn: estimate a model from an event log.
  std::string learn_traces;
  std::string learn_out;
  LearnConfig learn_cfg;
  auto* learn_cmd = app.add_subcommand("learn", "estimate a model from traces");
  learn_cmd->add_option("--traces", learn_traces, "trace text file")->required();
  learn_cmd->add_option("--history", learn_cfg.history,
                        "number of events a state remembers");
  learn_cmd->add_option("--smoothing", learn_cfg.smoothing,
                        "additive smoothing weight");
  learn_cmd->add_option("--threshold", learn_cfg.short_threshold,
                        "length below which a trace ends negative");
  learn_cmd->add_option("--out", learn_out, "write the model JSON here");
  learn_cmd->callback([&] {
    const TraceLog log = load_traces(learn_traces);
    emit(learn_out, mdp_to_json(learn_mdp(log, learn_cfg)));
  });

  // export: problem text for external solvers.
  SolveFlags export_f;
  auto* export_cmd =
      app.add_subcommand("export", "write the optimization problem as text");
  add_model_flags(export_cmd, export_f);
  export_cmd->add_option("--gamma", export_f.gamma, "reaching probability bound")
      ->required();
  auto* export_eps =
      export_cmd->add_option("--epsilon", export_f.epsilon, "distance budget");
  export_cmd->add_option("--r0", export_f.r0, "weight of the changed-state count");
  export_cmd->add_option("--r1", export_f.r1, "weight of the average change");
  export_cmd->add_option("--rinf", export_f.rinf,
                         "weight of the worst-case change");
  export_cmd->add_option("--out", export_f.out, "output file");
  export_cmd->callback([&] {
    const Mdp m = load_mdp(export_f.model);
    SynthesisQuery q;
    q.mdp = m;
    q.sigma = load_strategy(m, export_f.strategy);
    q.target = resolve_state(m, export_f.target);
    q.gamma = export_f.gamma;
    q.distances = export_f.distance_config();
    if (export_eps->count() > 0) q.epsilon = export_f.epsilon;
    emit(export_f.out, export_problem(build_problem(q)));
  });

  // explain: recourse text, either for a given counterfactual or a fresh one.
  SolveFlags explain_f;
  std::string explain_counterfactual;
  auto* explain_cmd =
      app.add_subcommand("explain", "render strategy changes as recourse text");
  add_model_flags(explain_cmd, explain_f);
  explain_cmd->add_option("--counterfactual", explain_counterfactual,
                          "render this strategy instead of synthesizing one");
  auto* explain_gamma = explain_cmd->add_option(
      "--gamma", explain_f.gamma, "bound used when synthesizing");
  add_solver_flags(explain_cmd, explain_f);
  explain_cmd->add_option("--out", explain_f.out, "output file");
  explain_cmd->callback([&] {
    const Mdp m = load_mdp(explain_f.model);
    const Strategy sigma = load_strategy(m, explain_f.strategy);
    const int target = resolve_state(m, explain_f.target);
    if (!explain_counterfactual.empty()) {
      SynthesisResult r;
      r.status = SolveStatus::SubOptimal;
      r.strategy = load_strategy(m, explain_counterfactual);
      r.reach_before = strategy_reach_probability(m, sigma, target);
      r.reach_after = strategy_reach_probability(m, r.strategy, target);
      r.distance = strategy_distance(m, sigma, r.strategy, DistanceConfig{});
      emit(explain_f.out, render(m, sigma, r, target));
      return;
    }
    if (explain_gamma->count() == 0) {
      throw CLI::RequiredError("--gamma (or --counterfactual)");
    }
    SynthesisQuery q;
    q.mdp = m;
    q.sigma = sigma;
    q.target = target;
    q.gamma = explain_f.gamma;
    q.distances = explain_f.distance_config();
    const SynthesisResult r = solve(q, explain_f.solver_config());
    rc = exit_code_for(r.status);
    if (r.status == SolveStatus::Infeasible || r.status == SolveStatus::Timeout) {
      std::fprintf(stderr, "no strategy to explain: %s (minimum reach %s)\n",
                   to_string(r.status).c_str(), shortest(r.min_reach).c_str());
      return;
    }
    emit(explain_f.out, render(m, sigma, r, target));
  });

  // bench: the bound sweep over random strategies.
  SolveFlags bench_f;
  bench_f.count = 10;
  bench_f.format = "text";
  int bench_jobs = 1;
  auto* bench_cmd =
      app.add_subcommand("bench", "sweep the bound grid over random strategies");
  add_model_flags(bench_cmd, bench_f, false);
  bench_cmd->add_option("--count", bench_f.count, "number of random strategies");
  bench_cmd->add_option("--jobs", bench_jobs, "maximum concurrent runs");
  add_solver_flags(bench_cmd, bench_f);
  add_output_flags(bench_cmd, bench_f, {"text", "csv"});
  bench_cmd->callback([&] {
    const Mdp m = load_mdp(bench_f.model);
    const int target = resolve_state(m, bench_f.target);
    SweepConfig cfg;
    cfg.model_name = path_stem(bench_f.model);
    cfg.distances = bench_f.distance_config();
    cfg.solver = bench_f.solver_config();
    cfg.jobs = bench_jobs;
    cfg.fixed_timing = bench_f.fixed_timing;
    const BenchReport report = gamma_sweep(
        m, target,
        random_strategies(m, bench_f.count,
                          static_cast<std::uint64_t>(bench_f.seed)),
        cfg);
    emit(bench_f.out,
         bench_f.format == "csv" ? report.to_csv() : report.to_table());
  });

  // nonconvexity: eigenvalue report of the problem's quadratic constraints.
  SolveFlags nonconv_f;
  nonconv_f.gamma = 0.5;
  nonconv_f.format = "text";
  auto* nonconv_cmd = app.add_subcommand(
      "nonconvexity", "eigenvalues of the quadratic constraint matrices");
  add_model_flags(nonconv_cmd, nonconv_f);
  nonconv_cmd->add_option("--gamma", nonconv_f.gamma,
                          "bound used to build the problem");
  add_output_flags(nonconv_cmd, nonconv_f, {"text", "json"});
  nonconv_cmd->callback([&] {
    const Mdp m = load_mdp(nonconv_f.model);
    SynthesisQuery q;
    q.mdp = m;
    q.sigma = load_strategy(m, nonconv_f.strategy);
    q.target = resolve_state(m, nonconv_f.target);
    q.gamma = nonconv_f.gamma;
    const NonconvexityReport report = nonconvexity_report(build_problem(q));
    if (nonconv_f.format == "json") {
      nlohmann::ordered_json j;
      j["nonconvex"] = report.nonconvex;
      j["entries"] = nlohmann::ordered_json::array();
      for (const auto& entry : report.entries) {
        nlohmann::ordered_json e;
        e["state"] = entry.state;
        e["label"] = m.state_labels[static_cast<size_t>(entry.state)];
        e["eigenvalues"] = entry.eigenvalues;
        e["has_negative"] = entry.has_negative;
        j["entries"].push_back(std::move(e));
      }
      emit(nonconv_f.out, j.dump(2) + "\n");
    } else {
      std::string text;
      for (const auto& entry : report.entries) {
        text += "state `" + m.state_labels[static_cast<size_t>(entry.state)] +
                "': eigenvalues";
        for (double ev : entry.eigenvalues) text += " " + shortest(ev);
        text += entry.has_negative ? " (negative present)\n" : "\n";
      }
      text += std::string("nonconvex: ") + (report.nonconvex ? "yes" : "no") +
              "\n";
      emit(nonconv_f.out, text);
    }
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return rc;
}
