// bagsoi: run, batch, extract and plan bagging scenarios from the command line.
#include "bagsoi/harness.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace bagsoi;

namespace {

int report_error(const Error& e, const std::string& stage = {}) {
  std::cerr << error_record(e.code(), e.what(), stage).dump() << "\n";
  return exit_code_for(e.code());
}

int cmd_run(const std::string& file, const std::string& out_dir, std::optional<std::uint64_t> seed) {
  Scenario s = load_scenario(file);
  if (seed) s.rng_seed = *seed;
  const RunResult result = run_pipeline(s);
  write_run_outputs(out_dir, result);
  const RunReport& r = result.report;
  std::cout << "scenario " << r.scenario << " seed " << r.seed << ": " << (r.success ? "success" : "failure")
            << ", final error " << r.final_error * 1000.0 << " mm, path nodes " << r.path_nodes
            << ", servo steps " << r.servo_steps << "\n"
            << "wrote " << (fs::path(out_dir) / "report.json").string() << "\n";
  const int code = exit_code_for(r);
  if (code != 0) {
    for (const auto& [name, stage] : {std::pair{"extraction", &r.extraction}, std::pair{"generation", &r.generation},
                                      std::pair{"planning", &r.planning}, std::pair{"servoing", &r.servoing}}) {
      if (stage->status == StageStatus::Failed) {
        std::cerr << error_record(*stage->error, stage->message, name).dump() << "\n";
        return code;
      }
    }
    std::cerr << error_record(ErrorCode::Stalled, "final error above success tolerance", "servoing").dump() << "\n";
  }
  return code;
}

int cmd_batch(const std::string& dir, int trials, const std::string& out) {
  std::vector<fs::path> files;
  if (fs::is_regular_file(dir)) {
    files.push_back(dir);
  } else {
    std::error_code ec;
    for (const auto& entry : fs::directory_iterator(dir, ec)) {
      if (entry.path().extension() == ".json") files.push_back(entry.path());
    }
    if (ec) throw Error(ErrorCode::IoError, "cannot list '" + dir + "': " + ec.message());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw Error(ErrorCode::IoError, "no scenario files in '" + dir + "'");
  std::vector<BatchRow> rows;
  for (const fs::path& f : files) rows.push_back(run_batch(load_scenario(f), trials));
  std::cout << batch_table(rows);
  if (!out.empty()) {
    std::ofstream os(out);
    if (!os) throw Error(ErrorCode::IoError, "cannot write '" + out + "'");
    os << batch_to_json(rows).dump(2) << "\n";
  }
  return 0;
}

int cmd_extract(const std::string& file, std::size_t n_x) {
  GmmConfig cfg;
  cfg.n_x = n_x;
  const PointCloud cloud = read_xyz_cloud_file(file);
  const Extraction e = extract_soi_with_model(cloud, cfg);
  nlohmann::json j{{"n_x", n_x},
                   {"soi", soi_to_json(e.soi.points)},
                   {"iterations", e.model.iterations},
                   {"converged", e.model.converged},
                   {"outlier_weight", e.model.outlier_weight}};
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_plan(const std::string& file, const std::string& out, std::optional<std::uint64_t> seed) {
  Scenario s = load_scenario(file);
  if (seed) s.rng_seed = *seed;
  PipelineOptions options;
  options.servo = false;
  const RunResult result = run_pipeline(s, options);
  const RunReport& r = result.report;
  for (const auto& [name, stage] : {std::pair{"extraction", &r.extraction}, std::pair{"generation", &r.generation},
                                    std::pair{"planning", &r.planning}}) {
    if (stage->status == StageStatus::Failed) {
      std::cerr << error_record(*stage->error, stage->message, name).dump() << "\n";
      return exit_code_for(*stage->error);
    }
  }
  const std::string text = path_to_json(*result.path).dump() + "\n";
  if (out.empty()) {
    std::cout << text;
  } else {
    std::ofstream os(out);
    if (!os) throw Error(ErrorCode::IoError, "cannot write '" + out + "'");
    os << text;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-arm bagging pipeline: SOI extraction, bagging-ellipse generation, planning and shape servoing"};
  app.require_subcommand(1);

  std::string scenario_file, out_dir = "out", dir, cloud_file, out_file;
  std::optional<std::uint64_t> seed;
  int trials = 10;
  std::size_t n_x = 32;

  CLI::App* run = app.add_subcommand("run", "Run the full pipeline on a scenario");
  run->add_option("scenario", scenario_file, "Scenario JSON file")->required();
  run->add_option("--out", out_dir, "Output directory for log.jsonl, report.json, timing.json");
  run->add_option("--seed", seed, "Override the scenario seed");

  CLI::App* batch = app.add_subcommand("batch", "Randomized placement trials for every scenario in a directory");
  batch->add_option("dir", dir, "Directory of scenario files (or one file)")->required();
  batch->add_option("--trials", trials, "Trials per scenario")->check(CLI::PositiveNumber);
  batch->add_option("--out", out_file, "Write the aggregate and per-trial reports as JSON");

  CLI::App* extract = app.add_subcommand("extract", "Extract an ordered rim from an xyz cloud file");
  extract->add_option("cloud", cloud_file, "Whitespace- or comma-separated x y z rows")->required();
  extract->add_option("--n-x", n_x, "Number of rim points")->check(CLI::PositiveNumber);

  CLI::App* plan = app.add_subcommand("plan", "Extract, generate and plan; print the path");
  plan->add_option("scenario", scenario_file, "Scenario JSON file")->required();
  plan->add_option("--out", out_file, "Write the path JSON here instead of stdout");
  plan->add_option("--seed", seed, "Override the scenario seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*run) return cmd_run(scenario_file, out_dir, seed);
    if (*batch) return cmd_batch(dir, trials, out_file);
    if (*extract) return cmd_extract(cloud_file, n_x);
    if (*plan) return cmd_plan(scenario_file, out_file, seed);
  } catch (const Error& e) {
    return report_error(e);
  } catch (const std::exception& e) {
    std::cerr << error_record(ErrorCode::IoError, e.what()).dump() << "\n";
    return 5;
  }
  return 0;
}
