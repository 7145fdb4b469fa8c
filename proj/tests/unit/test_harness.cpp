#include "bagsoi/harness.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace bagsoi;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const fs::path kSource = BAGSOI_SOURCE_DIR;

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("bagsoi_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

struct CliResult {
  int code = -1;
  std::string out;
  std::string err;
};

CliResult cli(const std::string& args, const fs::path& dir) {
  const fs::path out = dir / "stdout.txt", err = dir / "stderr.txt";
  const std::string cmd = std::string(BAGSOI_CLI) + " " + args + " > " + out.string() + " 2> " + err.string();
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

Scenario quick_coffee_box() {
  Scenario s = load_scenario(kSource / "scenarios" / "coffee_box.json");
  return s;
}

// Box around every point the run can reach: the start rim cannot clear it.
Obstacle enclosing_box() {
  Obstacle o;
  o.min = Vec3(-1.0, -1.0, 0.0);
  o.max = Vec3(1.0, 1.0, 1.5);
  return o;
}

}  // namespace

TEST(Scenario, MinimalFileFillsDefaults) {
  const Scenario s = parse_scenario(R"({"object": {"preset": "coffee_box"}})");
  const Scenario d;
  EXPECT_EQ(s.name, d.name);
  EXPECT_EQ(s.rng_seed, d.rng_seed);
  EXPECT_EQ(s.object_preset, "coffee_box");
  EXPECT_EQ(s.lambda_d, 0.10);
  EXPECT_EQ(s.constraints.lambda1, 0.912);
  EXPECT_EQ(s.constraints.lambda2, 0.007);
  EXPECT_EQ(s.constraints.lambda3, 0.9943);
  EXPECT_EQ(s.mpc.horizon, 5);
  EXPECT_EQ(s.mpc.r_weight, 10.0);
  EXPECT_EQ(s.mpc.broyden_rate, 0.5);
  EXPECT_EQ(s.mpc.subgoal_switch_tol, 0.008);
  EXPECT_EQ(s.mpc.step_budget, 2000);
  EXPECT_EQ(s.bag.rest_perimeter, d.bag.rest_perimeter);
  EXPECT_EQ(s.extraction.n_x, 32u);
  EXPECT_FALSE(s.perception_in_loop);
  EXPECT_FALSE(s.measurement_noise_given);
  EXPECT_TRUE(s.obstacles.empty());
}

TEST(Scenario, Lambda1OutOfRange) {
  try {
    parse_scenario(R"({"object": {"preset": "coffee_box"}, "constraints": {"lambda1": 1.5}})");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ValidationError);
    EXPECT_NE(std::string(e.what()).find("lambda1 must be in (0,1)"), std::string::npos) << e.what();
  }
}

TEST(Scenario, UnknownKeyRejected) {
  try {
    parse_scenario(R"({"object": {"preset": "coffee_box"}, "mpc": {"horizn": 3}})");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ParseError);
    EXPECT_NE(std::string(e.what()).find("horizn"), std::string::npos) << e.what();
  }
}

TEST(Scenario, SyntaxErrorReportsLine) {
  try {
    parse_scenario("{\n  \"name\": \"x\",\n  \"rng_seed\": ,\n}");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ParseError);
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
}

TEST(Scenario, PresetsMatchFixtureFile) {
  const json fixture = json::parse(slurp(kSource / "tests" / "fixtures" / "presets.json"));
  ASSERT_EQ(fixture.size(), preset_names().size());
  for (const std::string& name : preset_names()) {
    ASSERT_TRUE(fixture.contains(name)) << name;
    const json& expected = fixture[name]["vertices"];
    const Points3 got = preset_vertices(name);
    ASSERT_EQ(got.size(), expected.size()) << name;
    // Same polygon: identical vertices in the same cyclic order; the starting
    // vertex is arbitrary.
    const std::size_t n = got.size();
    std::size_t shift = n;
    for (std::size_t s = 0; s < n && shift == n; ++s) {
      bool all = true;
      for (std::size_t i = 0; i < n && all; ++i) {
        for (int k = 0; k < 3; ++k) all = all && std::abs(got[(i + s) % n](k) - expected[i][k].get<double>()) <= 1e-15;
      }
      if (all) shift = s;
    }
    EXPECT_LT(shift, n) << name << " differs from the fixture polygon";
  }
  EXPECT_THROW(preset_vertices("no_such_object"), Error);
}

TEST(Scenario, JsonRoundTrip) {
  Scenario s = quick_coffee_box();
  s.obstacles.push_back(Obstacle{Vec3(0.2, 0.2, 0.4), Vec3(0.3, 0.3, 0.5), 0.01});
  s.mpc.measurement_noise = 0.001;
  s.measurement_noise_given = true;
  const json once = scenario_to_json(s);
  const json twice = scenario_to_json(parse_scenario(once.dump()));
  EXPECT_EQ(once, twice);
}

TEST(Scenario, BundledScenariosLoad) {
  for (const auto& entry : fs::directory_iterator(kSource / "scenarios")) {
    EXPECT_NO_THROW(load_scenario(entry.path())) << entry.path();
  }
  try {
    load_scenario("/nonexistent/scenario.json");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::IoError);
  }
}

TEST(Pipeline, CoffeeBoxSucceedsAndLogAgreesWithReport) {
  const RunResult r = run_pipeline(quick_coffee_box());
  const RunReport& rep = r.report;
  EXPECT_TRUE(rep.success);
  EXPECT_EQ(rep.extraction.status, StageStatus::Ok);
  EXPECT_EQ(rep.servoing.status, StageStatus::Ok);
  EXPECT_EQ(rep.success, rep.final_error < rep.success_tolerance);
  EXPECT_EQ(exit_code_for(rep), 0);

  ASSERT_GE(r.log.size(), 5u);
  EXPECT_EQ(r.log.front()["type"], "scenario");
  const json& summary = r.log.back();
  EXPECT_EQ(summary["type"], "summary");
  EXPECT_EQ(summary["success"].get<bool>(), rep.success);
  EXPECT_EQ(summary["final_error"].get<double>(), rep.final_error);
  int steps = 0;
  for (const json& rec : r.log) {
    if (rec["type"] != "step") continue;
    EXPECT_EQ(rec["t"].get<int>(), steps);
    EXPECT_EQ(rec["state"].size(), 32u);
    EXPECT_EQ(rec["command"].size(), 12u);
    ++steps;
  }
  EXPECT_EQ(steps, rep.servo_steps);
  EXPECT_LT(rep.final_error, 0.005);
}

TEST(Pipeline, SameSeedIsByteIdentical) {
  const Scenario s = quick_coffee_box();
  const RunResult a = run_pipeline(s), b = run_pipeline(s);
  EXPECT_EQ(report_text(a.report), report_text(b.report));
  EXPECT_EQ(log_text(a.log), log_text(b.log));
}

TEST(Pipeline, EnclosingObstacleFailsPlanningAndSkipsServo) {
  Scenario s = quick_coffee_box();
  s.obstacles.push_back(enclosing_box());
  const RunResult r = run_pipeline(s);
  EXPECT_EQ(r.report.extraction.status, StageStatus::Ok);
  EXPECT_EQ(r.report.generation.status, StageStatus::Ok);
  EXPECT_EQ(r.report.planning.status, StageStatus::Failed);
  ASSERT_TRUE(r.report.planning.error.has_value());
  EXPECT_EQ(r.report.servoing.status, StageStatus::Skipped);
  EXPECT_FALSE(r.report.success);
  EXPECT_EQ(r.report.servo_steps, 0);
  EXPECT_EQ(exit_code_for(r.report), 3);
  for (const json& rec : r.log) EXPECT_NE(rec["type"], "step");
}

TEST(Pipeline, WritesThreeFiles) {
  const fs::path dir = scratch("outputs");
  PipelineOptions opt;
  opt.servo = false;
  const RunResult r = run_pipeline(quick_coffee_box(), opt);
  write_run_outputs(dir, r);
  EXPECT_EQ(slurp(dir / "report.json"), report_text(r.report));
  EXPECT_EQ(slurp(dir / "log.jsonl"), log_text(r.log));
  const json timing = json::parse(slurp(dir / "timing.json"));
  EXPECT_TRUE(timing.contains("planning_seconds"));
  EXPECT_EQ(r.report.servoing.status, StageStatus::Skipped);
}

TEST(Batch, AggregatesEqualSumOfReports) {
  Scenario s = quick_coffee_box();
  const BatchRow row = run_batch(s, 3);
  ASSERT_EQ(row.reports.size(), 3u);
  EXPECT_EQ(row.trials, 3);
  int planned = 0, manipulated = 0;
  for (std::size_t k = 0; k < row.reports.size(); ++k) {
    planned += row.reports[k].planning.status == StageStatus::Ok;
    manipulated += row.reports[k].success;
    EXPECT_EQ(row.reports[k].seed, s.rng_seed + k);
  }
  EXPECT_EQ(row.planning_successes, planned);
  EXPECT_EQ(row.manipulation_successes, manipulated);
  EXPECT_GE(row.planning_time_mean, 0.0);
  EXPECT_GE(row.planning_time_std, 0.0);

  const json j = batch_to_json({row});
  EXPECT_EQ(j[0]["planning_successes"].get<int>(), planned);
  EXPECT_NE(batch_table({row}).find("coffee_box"), std::string::npos);
}

TEST(ExitCodes, Mapping) {
  EXPECT_EQ(exit_code_for(ErrorCode::ValidationError), 2);
  EXPECT_EQ(exit_code_for(ErrorCode::ParseError), 2);
  EXPECT_EQ(exit_code_for(ErrorCode::PlanningFailed), 3);
  EXPECT_EQ(exit_code_for(ErrorCode::Infeasible), 3);
  EXPECT_EQ(exit_code_for(ErrorCode::Stalled), 4);
  EXPECT_EQ(exit_code_for(ErrorCode::IoError), 5);
  const json rec = error_record(ErrorCode::ParseError, "bad", "extraction");
  EXPECT_EQ(rec["error"], "ParseError");
  EXPECT_EQ(rec["message"], "bad");
  EXPECT_EQ(rec["stage"], "extraction");
}

TEST(Cli, RunBundledScenario) {
  const fs::path dir = scratch("cli_run");
  const CliResult r = cli("run " + (kSource / "scenarios" / "coffee_box.json").string() + " --out " +
                              (dir / "out").string(),
                          dir);
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir / "out" / "report.json"));
  EXPECT_TRUE(fs::exists(dir / "out" / "log.jsonl"));
  EXPECT_TRUE(json::parse(slurp(dir / "out" / "report.json"))["success"].get<bool>());
}

TEST(Cli, ExtractMalformedCloud) {
  const fs::path dir = scratch("cli_extract");
  std::ofstream(dir / "bad.xyz") << "0 0 0\n1 2\n";
  const CliResult r = cli("extract " + (dir / "bad.xyz").string() + " --n-x 8", dir);
  EXPECT_EQ(r.code, 2);
  const json rec = json::parse(r.err);
  EXPECT_EQ(rec["error"], "ParseError");
}

TEST(Cli, ExtractWellFormedCloud) {
  const fs::path dir = scratch("cli_extract_ok");
  {
    std::ofstream f(dir / "ring.xyz");
    for (int i = 0; i < 400; ++i) {
      const double t = 2.0 * 3.14159265358979 * i / 400.0;
      f << 0.1 * std::cos(t) << " " << 0.07 * std::sin(t) << " 0.3\n";
    }
  }
  const CliResult r = cli("extract " + (dir / "ring.xyz").string() + " --n-x 8", dir);
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(json::parse(r.out)["soi"].size(), 8u);
}

TEST(Cli, ValidationAndPlanningFailuresExitNonZero) {
  const fs::path dir = scratch("cli_fail");
  std::ofstream(dir / "bad.json") << R"({"object": {"preset": "coffee_box"}, "constraints": {"lambda1": 1.5}})";
  CliResult r = cli("run " + (dir / "bad.json").string() + " --out " + (dir / "o").string(), dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(json::parse(r.err)["error"], "ValidationError");

  Scenario s = quick_coffee_box();
  s.obstacles.push_back(enclosing_box());
  std::ofstream(dir / "walled.json") << scenario_to_json(s).dump(2);
  r = cli("plan " + (dir / "walled.json").string(), dir);
  EXPECT_EQ(r.code, 3);
  EXPECT_EQ(json::parse(r.err)["stage"], "planning");

  r = cli("run /nonexistent.json", dir);
  EXPECT_EQ(r.code, 5);
}

TEST(Cli, PlanPrintsPath) {
  const fs::path dir = scratch("cli_plan");
  const CliResult r = cli("plan " + (kSource / "scenarios" / "coffee_box.json").string(), dir);
  EXPECT_EQ(r.code, 0) << r.err;
  const json path = json::parse(r.out);
  EXPECT_FALSE(path["pre_bagging"].empty());
  EXPECT_FALSE(path["bagging"].empty());
}
