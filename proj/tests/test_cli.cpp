#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <cstdlib>
#include <string>

#include "doctest.h"
#include "json.hpp"
#include "mdpcf/json_io.hpp"

namespace {

struct RunResult {
  int code = -1;
  std::string out;
};

/// Runs the command-line binary with the given arguments; captures stdout,
/// discards stderr.
RunResult run_cli(const std::string& args) {
  RunResult result;
  const std::string cmd = std::string(MDPCF_CLI_PATH) + " " + args + " 2>/dev/null";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buffer[4096];
  size_t got = 0;
  while ((got = fread(buffer, 1, sizeof(buffer), pipe)) > 0) {
    result.out.append(buffer, got);
  }
  const int status = pclose(pipe);
  result.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return result;
}

std::string data(const std::string& name) {
  return std::string(MDPCF_DATA_DIR) + "/" + name;
}

const std::string kLoanArgs = "--model " + data("loan.json") + " --strategy " +
                              data("impatient.json") + " --target Rejected";

}  // namespace

TEST_CASE("check prints the reaching probability of the strategy") {
  const RunResult r = run_cli("check " + kLoanArgs);
  CHECK(r.code == 0);
  CHECK(r.out == "0.411\n");

  const RunResult byid = run_cli("check --model " + data("loan.json") +
                                 " --strategy " + data("impatient.json") +
                                 " --target 8");
  CHECK(byid.out == "0.411\n");

  const RunResult json = run_cli("check " + kLoanArgs + " --format json");
  CHECK(json.code == 0);
  const auto doc = nlohmann::json::parse(json.out);
  CHECK(doc["target"] == "Rejected");
  CHECK(doc["reach"] == 0.411);
}

TEST_CASE("feasible reports the minimum reach and the bound verdict") {
  const std::string base =
      "feasible --model " + data("loan.json") + " --target Rejected";

  const RunResult plain = run_cli(base);
  CHECK(plain.code == 0);
  CHECK(std::stod(plain.out) == doctest::Approx(0.02).epsilon(1e-12));

  const RunResult below = run_cli(base + " --gamma 0.0001");
  CHECK(below.code == 2);
  CHECK(below.out.find("infeasible") != std::string::npos);

  const RunResult above = run_cli(base + " --gamma 0.5 --format json");
  CHECK(above.code == 0);
  const auto doc = nlohmann::json::parse(above.out);
  CHECK(doc["feasible"] == true);
  CHECK(doc["gamma"] == 0.5);
}

TEST_CASE("synth emits the result document and maps statuses to exit codes") {
  const RunResult r =
      run_cli("synth " + kLoanArgs + " --gamma 0.2 --starts 6 --fixed-timing");
  CHECK(r.code == 0);
  const auto doc = nlohmann::json::parse(r.out);
  CHECK(doc["status"] != "Infeasible");
  CHECK(doc["gamma"] == 0.2);
  CHECK(doc["target"] == "Rejected");
  CHECK(doc["reach_after"].get<double>() <= 0.2 + 1e-7);
  CHECK(doc["reach_before"] == 0.411);
  CHECK(doc["distance"]["combined"].get<double>() <= 1.70 + 1e-3);
  CHECK(doc["wall_time_s"] == 0.0);
  CHECK(doc["strategy"].is_object());

  const RunResult infeasible = run_cli("synth " + kLoanArgs + " --gamma 0.01");
  CHECK(infeasible.code == 2);
  const auto doc2 = nlohmann::json::parse(infeasible.out);
  CHECK(doc2["status"] == "Infeasible");
  CHECK(doc2["strategy"].is_null());

  const RunResult trivial = run_cli("synth " + kLoanArgs + " --gamma 0.9");
  CHECK(trivial.code == 0);
  CHECK(nlohmann::json::parse(trivial.out)["status"] == "Trivial");
}

TEST_CASE("identical runs produce identical bytes") {
  const std::string args =
      "synth " + kLoanArgs + " --gamma 0.2 --starts 6 --seed 3 --fixed-timing";
  const RunResult a = run_cli(args);
  const RunResult b = run_cli(args);
  CHECK(a.code == 0);
  CHECK(a.out == b.out);
}

TEST_CASE("epsilon mode accepts a budget and rejects flag misuse") {
  const RunResult ok = run_cli("epsilon " + kLoanArgs +
                               " --gamma 0.2 --epsilon 0.56 --r0 0 --r1 0 "
                               "--rinf 1 --starts 4 --format text");
  CHECK(ok.code == 0);
  CHECK(ok.out.find("status: Optimal") != std::string::npos);

  const RunResult missing = run_cli("epsilon " + kLoanArgs + " --gamma 0.2");
  CHECK(missing.code == 1);
}

TEST_CASE("diverse emits members with their spread measures") {
  const RunResult r = run_cli("diverse " + kLoanArgs +
                              " --gamma 0.2 --count 2 --lambda 2 --starts 4 "
                              "--fixed-timing");
  CHECK(r.code == 0);
  const auto doc = nlohmann::json::parse(r.out);
  REQUIRE(doc["members"].size() == 2);
  for (const auto& member : doc["members"]) {
    CHECK(member["reach_after"].get<double>() <= 0.2 + 1e-7);
  }
  CHECK(doc["pairwise"].size() == 2);
  CHECK(doc["determinant_trace"].size() == 2);
  CHECK(doc["novel_fractions"][0] == 1.0);
  CHECK(doc["min_reach"].get<double>() == doctest::Approx(0.02).epsilon(1e-9));
}

TEST_CASE("oracle searches the probability grid exhaustively") {
  const RunResult r =
      run_cli("oracle " + kLoanArgs + " --gamma 0.2 --step 0.1");
  CHECK(r.code == 0);
  const auto doc = nlohmann::json::parse(r.out);
  CHECK(doc["completed"] == true);
  CHECK(doc["feasible"] == true);
  CHECK(doc["best_reach"].get<double>() <= 0.2 + 1e-9);
  CHECK(doc["evaluations"].get<long long>() > 0);
  CHECK(doc["strategy"].is_object());
}

TEST_CASE("learn converts traces to a valid model deterministically") {
  const std::string args =
      "learn --traces " + data("traces_sample.txt") + " --history 2";
  const RunResult a = run_cli(args);
  CHECK(a.code == 0);
  const mdpcf::Mdp m = mdpcf::parse_mdp_json(a.out, "learned");
  CHECK(m.num_states() > 10);

  const RunResult b = run_cli(args);
  CHECK(a.out == b.out);
}

TEST_CASE("export writes the problem text") {
  const RunResult r = run_cli("export " + kLoanArgs + " --gamma 0.2");
  CHECK(r.code == 0);
  CHECK(r.out.rfind("miqcqp 1\n", 0) == 0);
  CHECK(r.out.find("var D0 ") != std::string::npos);
  CHECK(r.out.find("quad ") != std::string::npos);
}

TEST_CASE("explain renders the recourse block for a given counterfactual") {
  const RunResult r = run_cli("explain " + kLoanArgs + " --counterfactual " +
                              data("counterfactual.json"));
  CHECK(r.code == 0);
  CHECK(r.out ==
        "State `Rejected' is reached with probability 0.41.\n"
        "You can reach `Rejected' with probability 0.20 as follows:\n"
        " In state `Rework'\n"
        "  increase probability of action `Submit' to 0.86\n"
        "  decrease probability of action `Quit' to 0.14\n");

  // Without a counterfactual a bound is required and synthesis runs.
  const RunResult solved =
      run_cli("explain " + kLoanArgs + " --gamma 0.2 --starts 4");
  CHECK(solved.code == 0);
  CHECK(solved.out.find("You can reach `Rejected'") != std::string::npos);

  const RunResult missing = run_cli("explain " + kLoanArgs);
  CHECK(missing.code == 1);

  const RunResult infeasible =
      run_cli("explain " + kLoanArgs + " --gamma 0.001");
  CHECK(infeasible.code == 2);
}

TEST_CASE("bench sweeps the grid and is reproducible across job counts") {
  const std::string base = "bench --model " + data("loan.json") +
                           " --target Rejected --count 2 --seed 5 --starts 4 "
                           "--fixed-timing --format csv";
  const RunResult sequential = run_cli(base + " --jobs 1");
  CHECK(sequential.code == 0);
  const RunResult parallel = run_cli(base + " --jobs 4");
  CHECK(parallel.code == 0);
  CHECK(sequential.out == parallel.out);

  const std::string header = sequential.out.substr(0, sequential.out.find('\n'));
  CHECK(header ==
        "model,gamma,strategy_seed,status,wall_time_s,distance_combined,"
        "reach_after");
  int lines = 0;
  for (char c : sequential.out) {
    if (c == '\n') ++lines;
  }
  CHECK(lines == 1 + 22);  // header + 2 strategies x 11 bounds
  CHECK(sequential.out.find("loan,") != std::string::npos);

  const RunResult table = run_cli(
      "bench --model " + data("loan.json") +
      " --target Rejected --count 1 --starts 2 --fixed-timing --format text");
  CHECK(table.code == 0);
  CHECK(table.out.find("Opt.") != std::string::npos);
  CHECK(table.out.find("T.O.") != std::string::npos);
}

TEST_CASE("nonconvexity reports the negative eigenvalue") {
  const RunResult r = run_cli("nonconvexity " + kLoanArgs);
  CHECK(r.code == 0);
  CHECK(r.out.find("nonconvex: yes") != std::string::npos);
  CHECK(r.out.find("s0") != std::string::npos);

  const RunResult json = run_cli("nonconvexity " + kLoanArgs + " --format json");
  const auto doc = nlohmann::json::parse(json.out);
  CHECK(doc["nonconvex"] == true);
  bool negative_seen = false;
  for (const auto& entry : doc["entries"]) {
    if (entry["has_negative"] == true) negative_seen = true;
  }
  CHECK(negative_seen);
}

TEST_CASE("usage and input errors exit with code one") {
  CHECK(run_cli("").code == 1);
  CHECK(run_cli("frobnicate").code == 1);
  CHECK(run_cli("synth --model missing.json --strategy also-missing.json "
                "--target X --gamma 0.2")
            .code == 1);
  CHECK(run_cli("check " + kLoanArgs + " --format yaml").code == 1);
  CHECK(run_cli("check --model " + data("loan.json") + " --strategy " +
                data("impatient.json") + " --target NoSuchState")
            .code == 1);
  CHECK(run_cli("synth " + kLoanArgs).code == 1);  // --gamma missing
  CHECK(run_cli("--help").code == 0);
}

TEST_CASE("outputs can be redirected to a file") {
  const std::string path = "cli_out_tmp.json";
  std::remove(path.c_str());
  const RunResult r = run_cli("synth " + kLoanArgs +
                              " --gamma 0.2 --starts 4 --fixed-timing --out " +
                              path);
  CHECK(r.code == 0);
  CHECK(r.out.empty());
  const std::string content = mdpcf::read_text_file(path);
  CHECK(nlohmann::json::parse(content)["target"] == "Rejected");
  std::remove(path.c_str());
}
