#pragma once

#include "bagsoi/bag_sim.hpp"
#include "bagsoi/shape_servo.hpp"
#include "bagsoi/soi_extraction.hpp"
#include "bagsoi/soi_generation.hpp"
#include "bagsoi/soi_planning.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace bagsoi {

/// Names of the bundled object bases.
const std::vector<std::string>& preset_names();

/// Bottom-face vertices of a bundled object in its own frame (z = 0 plane).
Points3 preset_vertices(const std::string& name);

struct Scenario {
  std::string name = "scenario";
  std::uint64_t rng_seed = 1;

  std::string object_preset;   ///< empty when vertices are given explicitly
  Points3 object_vertices;     ///< object frame
  Vec3 object_position = Vec3(0.0, 0.0, 0.55);
  Vec3 object_rotation = Vec3::Zero();  ///< rotation vector, rad

  GripperState grippers = symmetric_grippers(Vec3(0.0, 0.0, 0.40), 0.12);
  BagModelConfig bag;
  GmmConfig extraction;
  std::vector<Obstacle> obstacles;
  BaggingConstraintParams constraints;  ///< rim_perimeter > 0 overrides the measured R
  double lambda_d = 0.10;
  PlannerConfig planner;
  MpcConfig mpc;
  bool perception_in_loop = false;
  /// mpc.measurement_noise was set explicitly; otherwise a perception-in-loop
  /// run derives it from the cloud model as sigma * sqrt(3 / cloud_density).
  bool measurement_noise_given = false;

  /// Object base in the world frame.
  VertexSet world_vertices() const;
  void validate() const;
};

/// Strict JSON scenario reader: unknown keys are rejected, missing keys keep
/// their defaults. Throws ParseError (with line or field) or ValidationError.
Scenario parse_scenario(const std::string& text);
Scenario load_scenario(const std::filesystem::path& path);
nlohmann::json scenario_to_json(const Scenario& scenario);

/// Copy of `base` with the object moved by up to `xy_range` horizontally and
/// turned by a random yaw.
Scenario randomize_placement(const Scenario& base, std::uint64_t seed, double xy_range = 0.06);

/// Copy of `base` with one cuboid obstacle placed across the pre-bagging
/// corridor, clear of the three anchors.
Scenario add_random_obstacle(const Scenario& base, std::uint64_t seed);

enum class StageStatus { Ok, Failed, Skipped };
std::string_view to_string(StageStatus status);

struct StageReport {
  StageStatus status = StageStatus::Skipped;
  std::optional<ErrorCode> error;
  std::string message;
};

struct RunReport {
  std::string scenario;
  std::uint64_t seed = 0;
  StageReport extraction;
  StageReport generation;
  StageReport planning;
  StageReport servoing;
  double rim_perimeter = 0.0;
  double extraction_rmse = 0.0;  ///< extracted g_0 vs the true initial rim, m
  std::optional<Ellipse2D> bagging_ellipse;
  std::optional<ConstraintReport> constraint_report;
  std::size_t path_nodes = 0;
  std::size_t pre_bagging_nodes = 0;
  std::size_t bagging_nodes = 0;
  int servo_steps = 0;
  int skipped_subgoals = 0;
  double final_error = 0.0;         ///< mean per-point error of the true rim vs the final subgoal, m
  double final_max_error = 0.0;
  double final_center_error = 0.0;  ///< centroid distance to the final subgoal, m
  double perimeter_drift = 0.0;     ///< max |P_t / P_0 - 1| of the true rim
  double success_tolerance = 0.005;
  bool success = false;

  nlohmann::json to_json() const;
};

struct RunTiming {
  double extraction_seconds = 0.0;
  double generation_seconds = 0.0;
  double planning_seconds = 0.0;
  double servo_seconds = 0.0;

  nlohmann::json to_json() const;
};

/// Everything a run produces. The log holds one record per line-to-be.
struct RunResult {
  RunReport report;
  RunTiming timing;
  std::vector<nlohmann::json> log;
  std::optional<BaggingPath> path;
};

struct PipelineOptions {
  bool servo = true;   ///< false stops after planning
  bool log_steps = true;
};

/// extract -> generate -> plan -> servo. Stage errors are recorded in the
/// report; later stages are then skipped.
RunResult run_pipeline(const Scenario& scenario, const PipelineOptions& options = {});

/// Writes log.jsonl, report.json and timing.json into `dir`.
void write_run_outputs(const std::filesystem::path& dir, const RunResult& result);

/// Canonical text of a log (one compact JSON object per line).
std::string log_text(const std::vector<nlohmann::json>& log);

/// Report serialized exactly as report.json.
std::string report_text(const RunReport& report);

/// Exit status for a finished run: 0 success, 3 failure before servoing,
/// 4 servo failure or missed tolerance.
int exit_code_for(const RunReport& report);

/// Exit status for an error escaping a command.
int exit_code_for(ErrorCode code);

/// Machine-readable error record.
nlohmann::json error_record(ErrorCode code, const std::string& message, const std::string& stage = {});

nlohmann::json soi_to_json(const Points3& points);
nlohmann::json ellipse_to_json(const Ellipse3D& ellipse);
nlohmann::json path_to_json(const BaggingPath& path);

struct BatchRow {
  std::string scenario;
  int trials = 0;
  int planning_successes = 0;
  int manipulation_successes = 0;
  double planning_time_mean = 0.0;
  double planning_time_std = 0.0;
  std::vector<RunReport> reports;
};

/// Runs `trials` randomized placements of `base` (seeds base.rng_seed + k).
BatchRow run_batch(const Scenario& base, int trials);

nlohmann::json batch_to_json(const std::vector<BatchRow>& rows);
std::string batch_table(const std::vector<BatchRow>& rows);

}  // namespace bagsoi
