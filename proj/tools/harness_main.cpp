// Simulation harness: replays orchestration scenarios on a virtual clock and
// writes the measurement artifacts (ledger, completions, failures, report).
#include "fogsight/harness.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

namespace {

int cmd_run(const std::string& scenario_path, const std::string& out_dir) {
  const fogsight::Scenario sc = fogsight::load_scenario_file(scenario_path);
  const fogsight::RunResult r = fogsight::run_scenario(sc);
  std::filesystem::create_directories(out_dir);
  fogsight::write_run_artifacts(out_dir, r);
  std::printf("%s\n", fogsight::report_summary(r.report).c_str());
  return 0;
}

int cmd_suite(const std::string& out_dir, std::uint64_t seed, bool check) {
  std::vector<fogsight::Scenario> suite = fogsight::default_suite();
  for (auto& sc : suite) sc.seed = seed;
  std::filesystem::create_directories(out_dir);
  std::vector<fogsight::RunResult> runs;
  runs.reserve(suite.size());
  for (const auto& sc : suite) {
    runs.push_back(fogsight::run_scenario(sc));
    fogsight::write_run_artifacts(out_dir, runs.back());
    std::printf("%s\n", fogsight::report_summary(runs.back().report).c_str());
  }
  if (!check) return 0;
  const std::vector<std::string> violations = fogsight::consistency_violations(runs);
  if (violations.empty()) {
    std::printf("consistency: ok\n");
    return 0;
  }
  for (const auto& v : violations) std::fprintf(stderr, "consistency: %s\n", v.c_str());
  return 1;
}

int cmd_compare(const std::string& a_path, const std::string& b_path) {
  const fogsight::MetricsReport a = fogsight::read_report_file(a_path);
  const fogsight::MetricsReport b = fogsight::read_report_file(b_path);
  std::printf("%s", fogsight::compare_reports_text(a, b).c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fogsight harness: deterministic orchestration simulations"};
  app.require_subcommand(1);

  std::string scenario_path;
  std::string out_dir = "runs";
  std::uint64_t seed = 7;
  bool no_check = false;
  std::string a_path;
  std::string b_path;

  CLI::App* run = app.add_subcommand("run", "Simulate one scenario file");
  run->add_option("--scenario", scenario_path, "Scenario JSON file")->required();
  run->add_option("--out", out_dir, "Artifact output directory")->capture_default_str();

  CLI::App* suite = app.add_subcommand("suite", "Simulate the built-in 8-scenario suite");
  suite->add_option("--out", out_dir, "Artifact output directory")->capture_default_str();
  suite->add_option("--seed", seed, "Seed applied to every scenario")->capture_default_str();
  suite->add_flag("--no-check", no_check, "Skip the cross-run consistency checks");

  CLI::App* compare = app.add_subcommand("compare", "Diff two report CSV files");
  compare->add_option("a", a_path, "First report CSV")->required();
  compare->add_option("b", b_path, "Second report CSV")->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (run->parsed()) return cmd_run(scenario_path, out_dir);
    if (suite->parsed()) return cmd_suite(out_dir, seed, !no_check);
    return cmd_compare(a_path, b_path);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
