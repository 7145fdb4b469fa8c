#include "bagsoi/harness.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

namespace bagsoi {

using nlohmann::json;

namespace {

constexpr double kPi = std::numbers::pi;

Points3 regular_polygon(int n, double radius, double phase = 0.0, double cx = 0.0, double cy = 0.0) {
  Points3 out;
  for (int k = 0; k < n; ++k) {
    const double t = 2.0 * kPi * k / n + phase;
    out.emplace_back(cx + radius * std::cos(t), cy + radius * std::sin(t), 0.0);
  }
  return out;
}

double turn(const Vec3& o, const Vec3& a, const Vec3& b) {
  return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
}

// Andrew's monotone chain in the xy-plane, counter-clockwise.
Points3 convex_hull_xy(Points3 pts) {
  std::sort(pts.begin(), pts.end(), [](const Vec3& a, const Vec3& b) {
    return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
  });
  Points3 hull(2 * pts.size());
  std::size_t k = 0;
  for (const Vec3& p : pts) {
    while (k >= 2 && turn(hull[k - 2], hull[k - 1], p) <= 0.0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, lower = k + 1; i-- > 0;) {
    while (k >= lower && turn(hull[k - 2], hull[k - 1], pts[i]) <= 0.0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// ---- strict JSON reading ---------------------------------------------------

[[noreturn]] void field_error(const std::string& field, const std::string& what) {
  throw Error(ErrorCode::ParseError, "field '" + field + "': " + what);
}

class Fields {
 public:
  Fields(const json& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.is_object()) field_error(path_.empty() ? "<root>" : path_, "expected an object");
  }

  bool has(const char* key) const { return node_.contains(key); }

  std::string name(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* find(const char* key) {
    seen_.insert(key);
    const auto it = node_.find(key);
    return it == node_.end() ? nullptr : &*it;
  }

  void get(const char* key, double& out) {
    if (const json* j = find(key)) {
      if (!j->is_number()) field_error(name(key), "expected a number");
      out = j->get<double>();
    }
  }
  void get(const char* key, int& out) {
    if (const json* j = find(key)) {
      if (!j->is_number_integer()) field_error(name(key), "expected an integer");
      out = j->get<int>();
    }
  }
  void get(const char* key, std::size_t& out) {
    if (const json* j = find(key)) {
      if (!j->is_number_unsigned()) field_error(name(key), "expected a non-negative integer");
      out = j->get<std::size_t>();
    }
  }
  void get(const char* key, bool& out) {
    if (const json* j = find(key)) {
      if (!j->is_boolean()) field_error(name(key), "expected true or false");
      out = j->get<bool>();
    }
  }
  void get(const char* key, std::string& out) {
    if (const json* j = find(key)) {
      if (!j->is_string()) field_error(name(key), "expected a string");
      out = j->get<std::string>();
    }
  }
  void get(const char* key, Vec3& out) {
    if (const json* j = find(key)) out = vec3(*j, name(key));
  }
  void get(const char* key, Points3& out) {
    if (const json* j = find(key)) {
      if (!j->is_array()) field_error(name(key), "expected an array of [x, y, z]");
      out.clear();
      for (std::size_t i = 0; i < j->size(); ++i) out.push_back(vec3((*j)[i], name(key) + "[" + std::to_string(i) + "]"));
    }
  }

  static Vec3 vec3(const json& j, const std::string& field) {
    if (!j.is_array() || j.size() != 3 || !j[0].is_number() || !j[1].is_number() || !j[2].is_number()) {
      field_error(field, "expected [x, y, z]");
    }
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
  }

  /// Rejects keys that were never asked for.
  void finish() const {
    for (const auto& [key, value] : node_.items()) {
      if (!seen_.contains(key)) throw Error(ErrorCode::ParseError, "unknown key '" + name(key.c_str()) + "'");
    }
  }

 private:
  const json& node_;
  std::string path_;
  std::set<std::string> seen_;
};

Pose read_pose(Fields& f) {
  Pose pose;
  Vec3 rotation = Vec3::Zero();
  f.get("position", pose.position);
  f.get("rotation_vector", rotation);
  f.finish();
  const double angle = rotation.norm();
  if (angle > 0.0) pose.rotation = Eigen::AngleAxisd(angle, rotation / angle).toRotationMatrix();
  return pose;
}

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 rotation_vector(const Eigen::Matrix3d& r) {
  const Eigen::AngleAxisd aa(r);
  return aa.angle() * aa.axis();
}

json stage_json(const StageReport& s) {
  json j{{"status", std::string(to_string(s.status))}};
  if (s.error) {
    j["error"] = std::string(to_string(*s.error));
    j["message"] = s.message;
  }
  return j;
}

json constraint_json(const ConstraintReport& r) {
  return json{{"c1_max", r.c1_max},       {"c2", r.c2},
              {"c3", r.c3},               {"c3_waived", r.c3_waived},
              {"perimeter", r.perimeter}, {"perimeter_error", r.perimeter_error}};
}

json ellipse2d_json(const Ellipse2D& e) {
  return json{{"tau_x", e.tau_x}, {"tau_y", e.tau_y}, {"rho_a", e.rho_a}, {"rho_b", e.rho_b}, {"alpha", e.alpha}};
}

json nodes_json(const std::vector<PathNode>& nodes) {
  json out = json::array();
  for (const PathNode& n : nodes) {
    out.push_back(json{{"soi", soi_to_json(n.soi.points)}, {"ellipse", ellipse_to_json(n.ellipse)}});
  }
  return out;
}

void fail_stage(StageReport& stage, const Error& e) {
  stage.status = StageStatus::Failed;
  stage.error = e.code();
  stage.message = e.what();
}

}  // namespace

// ---- presets ---------------------------------------------------------------

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"coffee_box", "canned_cylinder", "grapefruit", "triangular_prism",
                                              "bound_objects"};
  return names;
}

Points3 preset_vertices(const std::string& name) {
  if (name == "coffee_box") {
    return {Vec3(0.05, -0.035, 0.0), Vec3(0.05, 0.035, 0.0), Vec3(-0.05, 0.035, 0.0), Vec3(-0.05, -0.035, 0.0)};
  }
  if (name == "canned_cylinder") return regular_polygon(24, 0.04);
  if (name == "grapefruit") {
    Points3 out;
    for (int k = 0; k < 12; ++k) {
      const double t = 2.0 * kPi * k / 12 + kPi / 12;
      const double r = 0.05 * (1.0 + 0.04 * std::cos(3.0 * t));
      out.emplace_back(r * std::cos(t), r * std::sin(t), 0.0);
    }
    return out;
  }
  if (name == "triangular_prism") return regular_polygon(3, 0.12 / std::sqrt(3.0), kPi / 2.0);
  if (name == "bound_objects") {
    Points3 pts{Vec3(-0.07, -0.03, 0.0), Vec3(0.0, -0.03, 0.0), Vec3(0.0, 0.03, 0.0), Vec3(-0.07, 0.03, 0.0)};
    for (const Vec3& p : regular_polygon(16, 0.035, 0.0, 0.04, 0.0)) pts.push_back(p);
    return convex_hull_xy(pts);
  }
  throw Error(ErrorCode::ValidationError, "unknown object preset '" + name + "'");
}

// ---- scenario --------------------------------------------------------------

VertexSet Scenario::world_vertices() const {
  const double angle = object_rotation.norm();
  const Eigen::Matrix3d r =
      angle > 0.0 ? Eigen::AngleAxisd(angle, object_rotation / angle).toRotationMatrix() : Eigen::Matrix3d::Identity();
  VertexSet out;
  for (const Vec3& v : object_vertices) out.vertices.push_back(r * v + object_position);
  return out;
}

void Scenario::validate() const {
  if (object_vertices.size() < 3) throw Error(ErrorCode::ValidationError, "object needs at least 3 vertices");
  grippers.validate();
  bag.validate();
  GmmConfig gmm = extraction;
  gmm.n_x = bag.n_x;
  gmm.validate();
  for (const Obstacle& o : obstacles) o.validate();
  constraints.validate(false);
  if (!(lambda_d >= 0.0)) throw Error(ErrorCode::ValidationError, "lambda_d must be non-negative");
  planner.validate();
  mpc.validate();
  if ((grippers.left.position - grippers.right.position).norm() < 1e-6) {
    throw Error(ErrorCode::ValidationError, "gripper positions coincide");
  }
}

Scenario parse_scenario(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    const std::size_t upto = std::min<std::size_t>(e.byte, text.size());
    const auto line = 1 + std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(upto), '\n');
    throw Error(ErrorCode::ParseError, "line " + std::to_string(line) + ": " + e.what());
  }

  Scenario s;
  Fields top(root, "");
  top.get("name", s.name);
  top.get("rng_seed", s.rng_seed);
  top.get("perception_in_loop", s.perception_in_loop);

  if (const json* j = top.find("object")) {
    Fields f(*j, "object");
    f.get("preset", s.object_preset);
    Points3 vertices;
    f.get("vertices", vertices);
    if (!s.object_preset.empty() && !vertices.empty()) {
      field_error("object", "give either 'preset' or 'vertices', not both");
    }
    if (!s.object_preset.empty()) {
      try {
        s.object_vertices = preset_vertices(s.object_preset);
      } catch (const Error& e) {
        throw Error(ErrorCode::ValidationError, std::string("object.preset: ") + e.what());
      }
    } else {
      s.object_vertices = vertices;
    }
    f.get("position", s.object_position);
    f.get("rotation_vector", s.object_rotation);
    f.finish();
  }
  if (s.object_vertices.empty()) {
    s.object_preset = "coffee_box";
    s.object_vertices = preset_vertices(s.object_preset);
  }

  if (const json* j = top.find("grippers")) {
    Fields f(*j, "grippers");
    if (f.has("left") || f.has("right")) {
      const json* lj = f.find("left");
      const json* rj = f.find("right");
      if (!lj || !rj) field_error("grippers", "give both 'left' and 'right'");
      Fields left(*lj, "grippers.left");
      s.grippers.left = read_pose(left);
      Fields right(*rj, "grippers.right");
      s.grippers.right = read_pose(right);
    } else {
      Vec3 center(0.0, 0.0, 0.40);
      double half_span = s.bag.rest_half_span;
      double yaw = 0.0;
      f.get("center", center);
      f.get("half_span", half_span);
      f.get("yaw", yaw);
      s.grippers = symmetric_grippers(center, half_span, yaw);
    }
    f.finish();
  }

  if (const json* j = top.find("bag")) {
    Fields f(*j, "bag");
    f.get("rest_perimeter", s.bag.rest_perimeter);
    f.get("rest_half_span", s.bag.rest_half_span);
    f.get("n_x", s.bag.n_x);
    f.get("anchor_left", s.bag.anchor_left);
    f.get("anchor_right", s.bag.anchor_right);
    f.get("stiffness", s.bag.stiffness);
    f.get("nonlinearity_gain", s.bag.nonlinearity_gain);
    f.get("cloud_density", s.bag.cloud_density);
    f.get("cloud_noise_sigma", s.bag.cloud_noise_sigma);
    f.get("outlier_fraction", s.bag.outlier_fraction);
    f.finish();
  }

  if (const json* j = top.find("extraction")) {
    Fields f(*j, "extraction");
    f.get("outlier_weight", s.extraction.outlier_weight);
    f.get("outlier_weight_floor", s.extraction.outlier_weight_floor);
    f.get("max_iters", s.extraction.max_iters);
    f.get("loglik_rel_tol", s.extraction.loglik_rel_tol);
    f.get("covariance_floor", s.extraction.covariance_floor);
    f.finish();
  }

  if (const json* j = top.find("obstacles")) {
    if (!j->is_array()) field_error("obstacles", "expected an array");
    for (std::size_t i = 0; i < j->size(); ++i) {
      Fields f((*j)[i], "obstacles[" + std::to_string(i) + "]");
      Obstacle o;
      if (!f.has("min") || !f.has("max")) field_error(f.name("min"), "obstacles need 'min' and 'max'");
      f.get("min", o.min);
      f.get("max", o.max);
      f.get("margin", o.margin);
      f.finish();
      s.obstacles.push_back(o);
    }
  }

  if (const json* j = top.find("constraints")) {
    Fields f(*j, "constraints");
    f.get("lambda1", s.constraints.lambda1);
    f.get("lambda2", s.constraints.lambda2);
    f.get("lambda3", s.constraints.lambda3);
    f.get("lambda4", s.planner.lambda4);
    f.get("lambda5", s.planner.lambda5);
    f.get("lambda_d", s.lambda_d);
    f.get("rim_perimeter", s.constraints.rim_perimeter);
    f.finish();
  }

  if (const json* j = top.find("planner")) {
    Fields f(*j, "planner");
    f.get("max_iterations", s.planner.max_iterations);
    f.get("step_size", s.planner.step_size);
    f.get("connect_epsilon", s.planner.connect_epsilon);
    f.get("sample_min", s.planner.sample_min);
    f.get("sample_max", s.planner.sample_max);
    f.get("sample_padding", s.planner.sample_padding);
    f.get("goal_bias", s.planner.goal_bias);
    f.get("sample_jitter", s.planner.sample_jitter);
    f.get("max_extend_steps", s.planner.max_extend_steps);
    f.get("shortcut", s.planner.shortcut);
    f.get("shortcut_attempts", s.planner.shortcut_attempts);
    f.finish();
  }

  if (const json* j = top.find("mpc")) {
    Fields f(*j, "mpc");
    double u_trans = s.mpc.u_max(0), u_rot = s.mpc.u_max(3);
    f.get("horizon", s.mpc.horizon);
    f.get("q_weight", s.mpc.q_weight);
    f.get("r_weight", s.mpc.r_weight);
    f.get("u_max_translation", u_trans);
    f.get("u_max_rotation", u_rot);
    s.mpc.u_max << Vec3::Constant(u_trans), Vec3::Constant(u_rot), Vec3::Constant(u_trans), Vec3::Constant(u_rot);
    f.get("perimeter_band", s.mpc.perimeter_band);
    f.get("perimeter_weight", s.mpc.perimeter_weight);
    f.get("subgoal_switch_tol", s.mpc.subgoal_switch_tol);
    f.get("goal_tolerance", s.mpc.goal_tolerance);
    f.get("broyden_rate", s.mpc.broyden_rate);
    f.get("min_excitation", s.mpc.min_excitation);
    if (f.has("measurement_noise")) {
      f.get("measurement_noise", s.mpc.measurement_noise);
      s.measurement_noise_given = true;
    }
    f.get("step_budget", s.mpc.step_budget);
    f.get("stall_window", s.mpc.stall_window);
    f.get("stall_progress", s.mpc.stall_progress);
    f.get("success_tolerance", s.mpc.success_tolerance);
    f.get("probe_init", s.mpc.probe_init);
    f.get("probe_translation", s.mpc.probe_translation);
    f.get("probe_rotation", s.mpc.probe_rotation);
    f.finish();
  }
  top.finish();
  s.validate();
  return s;
}

Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open scenario file '" + path.string() + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_scenario(buffer.str());
}

json scenario_to_json(const Scenario& s) {
  json obstacles = json::array();
  for (const Obstacle& o : s.obstacles) {
    obstacles.push_back(json{{"min", vec_json(o.min)}, {"max", vec_json(o.max)}, {"margin", o.margin}});
  }
  json object{{"position", vec_json(s.object_position)}, {"rotation_vector", vec_json(s.object_rotation)}};
  if (!s.object_preset.empty()) object["preset"] = s.object_preset;
  else object["vertices"] = soi_to_json(s.object_vertices);
  json out{
      {"name", s.name},
      {"rng_seed", s.rng_seed},
      {"perception_in_loop", s.perception_in_loop},
      {"object", object},
      {"grippers",
       {{"left", {{"position", vec_json(s.grippers.left.position)},
                  {"rotation_vector", vec_json(rotation_vector(s.grippers.left.rotation))}}},
        {"right", {{"position", vec_json(s.grippers.right.position)},
                   {"rotation_vector", vec_json(rotation_vector(s.grippers.right.rotation))}}}}},
      {"bag",
       {{"rest_perimeter", s.bag.rest_perimeter},
        {"rest_half_span", s.bag.rest_half_span},
        {"n_x", s.bag.n_x},
        {"anchor_left", s.bag.anchor_left},
        {"anchor_right", s.bag.anchor_right},
        {"stiffness", s.bag.stiffness},
        {"nonlinearity_gain", s.bag.nonlinearity_gain},
        {"cloud_density", s.bag.cloud_density},
        {"cloud_noise_sigma", s.bag.cloud_noise_sigma},
        {"outlier_fraction", s.bag.outlier_fraction}}},
      {"extraction",
       {{"outlier_weight", s.extraction.outlier_weight},
        {"outlier_weight_floor", s.extraction.outlier_weight_floor},
        {"max_iters", s.extraction.max_iters},
        {"loglik_rel_tol", s.extraction.loglik_rel_tol},
        {"covariance_floor", s.extraction.covariance_floor}}},
      {"obstacles", obstacles},
      {"constraints",
       {{"lambda1", s.constraints.lambda1},
        {"lambda2", s.constraints.lambda2},
        {"lambda3", s.constraints.lambda3},
        {"lambda4", s.planner.lambda4},
        {"lambda5", s.planner.lambda5},
        {"lambda_d", s.lambda_d},
        {"rim_perimeter", s.constraints.rim_perimeter}}},
      {"planner",
       {{"max_iterations", s.planner.max_iterations},
        {"step_size", s.planner.step_size},
        {"connect_epsilon", s.planner.connect_epsilon},
        {"sample_min", vec_json(s.planner.sample_min)},
        {"sample_max", vec_json(s.planner.sample_max)},
        {"sample_padding", s.planner.sample_padding},
        {"goal_bias", s.planner.goal_bias},
        {"sample_jitter", s.planner.sample_jitter},
        {"max_extend_steps", s.planner.max_extend_steps},
        {"shortcut", s.planner.shortcut},
        {"shortcut_attempts", s.planner.shortcut_attempts}}},
      {"mpc",
       {{"horizon", s.mpc.horizon},
        {"q_weight", s.mpc.q_weight},
        {"r_weight", s.mpc.r_weight},
        {"u_max_translation", s.mpc.u_max(0)},
        {"u_max_rotation", s.mpc.u_max(3)},
        {"perimeter_band", s.mpc.perimeter_band},
        {"perimeter_weight", s.mpc.perimeter_weight},
        {"subgoal_switch_tol", s.mpc.subgoal_switch_tol},
        {"goal_tolerance", s.mpc.goal_tolerance},
        {"broyden_rate", s.mpc.broyden_rate},
        {"min_excitation", s.mpc.min_excitation},
        {"step_budget", s.mpc.step_budget},
        {"stall_window", s.mpc.stall_window},
        {"stall_progress", s.mpc.stall_progress},
        {"success_tolerance", s.mpc.success_tolerance},
        {"probe_init", s.mpc.probe_init},
        {"probe_translation", s.mpc.probe_translation},
        {"probe_rotation", s.mpc.probe_rotation}}},
  };
  if (s.measurement_noise_given) out["mpc"]["measurement_noise"] = s.mpc.measurement_noise;
  return out;
}

Scenario randomize_placement(const Scenario& base, std::uint64_t seed, double xy_range) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> offset(-xy_range, xy_range);
  std::uniform_real_distribution<double> yaw(0.0, kPi);
  Scenario s = base;
  s.rng_seed = seed;
  s.object_position.x() += offset(rng);
  s.object_position.y() += offset(rng);
  const Eigen::Matrix3d turn = Eigen::AngleAxisd(yaw(rng), Vec3::UnitZ()).toRotationMatrix();
  const double angle = base.object_rotation.norm();
  const Eigen::Matrix3d r0 = angle > 0.0
                                 ? Eigen::AngleAxisd(angle, base.object_rotation / angle).toRotationMatrix()
                                 : Eigen::Matrix3d::Identity();
  s.object_rotation = rotation_vector(turn * r0);
  return s;
}

Scenario add_random_obstacle(const Scenario& base, std::uint64_t seed) {
  const OrderedSOI rim0 = bag_forward(base.grippers, base.bag);
  BaggingConstraintParams params = base.constraints;
  const BaggingSOI dag = make_bagging_soi(base.world_vertices(), rim0, params, base.bag.n_x);
  const OrderedSOI star = generate_goal_soi(dag, base.lambda_d);

  const Vec3 c0 = centroid(rim0.points), c1 = centroid(dag.soi.points);
  const double reach = 0.5 * (dag.ellipse.rho_a + dag.ellipse.rho_b);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int attempt = 0; attempt < 1000; ++attempt) {
    const double along = 0.3 + 0.4 * unit(rng);
    const double heading = 2.0 * kPi * unit(rng);
    const double radial = reach * (0.7 + 0.5 * unit(rng));
    const Vec3 center = c0 + along * (c1 - c0) + radial * Vec3(std::cos(heading), std::sin(heading), 0.0);
    const Vec3 half(0.015 + 0.02 * unit(rng), 0.015 + 0.02 * unit(rng), 0.01 + 0.015 * unit(rng));
    Obstacle o{center - half, center + half, 0.01};
    const std::span<const Obstacle> one(&o, 1);
    if (!collision_free(rim0, one) || !collision_free(dag.soi, one) || !collision_free(star, one)) continue;
    // Keep only obstacles that actually cut the straight sweep.
    bool blocks = false;
    for (int k = 1; k < 20 && !blocks; ++k) {
      const double t = k / 20.0;
      Points3 mid(rim0.size());
      const Points3 aligned = align_cyclic(dag.soi.points, rim0.points);
      for (std::size_t i = 0; i < mid.size(); ++i) mid[i] = (1.0 - t) * rim0.points[i] + t * aligned[i];
      blocks = !collision_free(mid, one);
    }
    if (!blocks) continue;
    Scenario s = base;
    s.obstacles.push_back(o);
    return s;
  }
  throw Error(ErrorCode::ValidationError, "could not place a blocking obstacle");
}

// ---- reports ---------------------------------------------------------------

std::string_view to_string(StageStatus status) {
  switch (status) {
    case StageStatus::Ok: return "ok";
    case StageStatus::Failed: return "failed";
    case StageStatus::Skipped: return "skipped";
  }
  return "unknown";
}

json RunReport::to_json() const {
  json j{{"scenario", scenario},
         {"seed", seed},
         {"stages",
          {{"extraction", stage_json(extraction)},
           {"generation", stage_json(generation)},
           {"planning", stage_json(planning)},
           {"servoing", stage_json(servoing)}}},
         {"rim_perimeter", rim_perimeter},
         {"extraction_rmse", extraction_rmse},
         {"path_nodes", path_nodes},
         {"pre_bagging_nodes", pre_bagging_nodes},
         {"bagging_nodes", bagging_nodes},
         {"servo_steps", servo_steps},
         {"skipped_subgoals", skipped_subgoals},
         {"final_error", final_error},
         {"final_max_error", final_max_error},
         {"final_center_error", final_center_error},
         {"perimeter_drift", perimeter_drift},
         {"success_tolerance", success_tolerance},
         {"success", success}};
  j["bagging_ellipse"] = bagging_ellipse ? ellipse2d_json(*bagging_ellipse) : json(nullptr);
  j["constraint_report"] = constraint_report ? constraint_json(*constraint_report) : json(nullptr);
  return j;
}

json RunTiming::to_json() const {
  return json{{"extraction_seconds", extraction_seconds},
              {"generation_seconds", generation_seconds},
              {"planning_seconds", planning_seconds},
              {"servo_seconds", servo_seconds}};
}

json soi_to_json(const Points3& points) {
  json out = json::array();
  for (const Vec3& p : points) out.push_back(vec_json(p));
  return out;
}

json ellipse_to_json(const Ellipse3D& e) {
  return json{{"center", vec_json(e.center)}, {"u", vec_json(e.u)},       {"v", vec_json(e.v)},
              {"rho_u", e.rho_u},             {"rho_v", e.rho_v}};
}

json path_to_json(const BaggingPath& path) {
  return json{{"pre_bagging", nodes_json(path.pre_bagging)}, {"bagging", nodes_json(path.bagging)}};
}

json error_record(ErrorCode code, const std::string& message, const std::string& stage) {
  json j{{"error", std::string(to_string(code))}, {"message", message}};
  if (!stage.empty()) j["stage"] = stage;
  return j;
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::ParseError:
    case ErrorCode::ValidationError: return 2;
    case ErrorCode::IoError: return 5;
    case ErrorCode::Stalled:
    case ErrorCode::SolverFailure:
    case ErrorCode::DegenerateExcitation: return 4;
    default: return 3;
  }
}

int exit_code_for(const RunReport& report) {
  if (report.success) return 0;
  for (const StageReport* s : {&report.extraction, &report.generation, &report.planning}) {
    if (s->status != StageStatus::Ok) return 3;
  }
  return 4;
}

std::string log_text(const std::vector<json>& log) {
  std::string out;
  for (const json& record : log) {
    out += record.dump();
    out += '\n';
  }
  return out;
}

std::string report_text(const RunReport& report) { return report.to_json().dump(2) + "\n"; }

// ---- pipeline --------------------------------------------------------------

RunResult run_pipeline(const Scenario& scenario, const PipelineOptions& options) {
  scenario.validate();
  RunResult out;
  RunReport& report = out.report;
  report.scenario = scenario.name;
  report.seed = scenario.rng_seed;
  report.success_tolerance = scenario.mpc.success_tolerance;

  BagModelConfig bag = scenario.bag;
  bag.cloud_seed = scenario.rng_seed;
  PlannerConfig planner = scenario.planner;
  planner.rng_seed = scenario.rng_seed;
  GmmConfig gmm = scenario.extraction;
  gmm.n_x = bag.n_x;

  out.log.push_back(json{{"type", "scenario"}, {"config", scenario_to_json(scenario)}});

  // Extraction from the simulated initial cloud.
  OrderedSOI g0;
  const OrderedSOI rim0 = bag_forward(scenario.grippers, bag);
  auto clock = std::chrono::steady_clock::now();
  try {
    std::mt19937_64 rng(bag.cloud_seed);
    const PointCloud cloud = emit_cloud(rim0, bag, rng);
    const Extraction extraction = extract_soi_with_model(cloud, gmm);
    g0 = extraction.soi;
    const Points3 truth = align_cyclic(rim0.points, g0.points);
    double sq = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) sq += (truth[i] - g0.points[i]).squaredNorm();
    report.extraction_rmse = std::sqrt(sq / static_cast<double>(truth.size()));
    report.extraction.status = StageStatus::Ok;
    out.log.push_back(json{{"type", "extraction"},
                           {"cloud", soi_to_json(cloud.points)},
                           {"soi", soi_to_json(g0.points)},
                           {"truth", soi_to_json(truth)},
                           {"loglik", extraction.model.loglik_history},
                           {"iterations", extraction.model.iterations},
                           {"converged", extraction.model.converged},
                           {"rmse", report.extraction_rmse}});
  } catch (const Error& e) {
    fail_stage(report.extraction, e);
  }
  out.timing.extraction_seconds = seconds_since(clock);

  // Bagging and goal SOI.
  std::optional<BaggingSOI> dag;
  OrderedSOI star;
  Ellipse3D star_ellipse;
  if (report.extraction.status == StageStatus::Ok) {
    clock = std::chrono::steady_clock::now();
    try {
      BaggingConstraintParams params = scenario.constraints;
      if (!(params.rim_perimeter > 0.0)) params.rim_perimeter = polyline_perimeter(g0.points);
      report.rim_perimeter = params.rim_perimeter;
      dag = make_bagging_soi(scenario.world_vertices(), g0, params, bag.n_x);
      star = generate_goal_soi(*dag, scenario.lambda_d);
      star_ellipse = dag->world_ellipse();
      star_ellipse.center += star.points.front() - dag->soi.points.front();
      report.bagging_ellipse = dag->ellipse;
      report.constraint_report = dag->constraint_report;
      report.generation.status = StageStatus::Ok;
      json base = json::array();
      for (const Vec3& v : to_frame(scenario.world_vertices().vertices, dag->frame)) base.push_back(json{v.x(), v.y()});
      json frame{{"origin", vec_json(dag->frame.origin)},
                 {"axis_x", vec_json(dag->frame.axis_x())},
                 {"axis_y", vec_json(dag->frame.axis_y())},
                 {"axis_z", vec_json(dag->frame.axis_z())}};
      out.log.push_back(json{{"type", "generation"},
                             {"base", base},
                             {"frame", frame},
                             {"ellipse", ellipse2d_json(dag->ellipse)},
                             {"world_ellipse", ellipse_to_json(dag->world_ellipse())},
                             {"constraint_report", constraint_json(dag->constraint_report)},
                             {"rim_perimeter", params.rim_perimeter},
                             {"bagging_soi", soi_to_json(dag->soi.points)},
                             {"goal_soi", soi_to_json(star.points)},
                             {"goal_ellipse", ellipse_to_json(star_ellipse)}});
    } catch (const Error& e) {
      fail_stage(report.generation, e);
    }
    out.timing.generation_seconds = seconds_since(clock);
  }

  // Planning.
  if (report.generation.status == StageStatus::Ok) {
    clock = std::chrono::steady_clock::now();
    try {
      planner.reference_perimeter = report.rim_perimeter;
      Anchor a0{g0, std::nullopt};
      Anchor a1{dag->soi, dag->world_ellipse()};
      Anchor a2{star, star_ellipse};
      out.path = plan_full(a0, a1, a2, scenario.obstacles, planner);
      report.pre_bagging_nodes = out.path->pre_bagging.size();
      report.bagging_nodes = out.path->bagging.size();
      report.path_nodes = out.path->flattened().size();
      report.planning.status = StageStatus::Ok;
      json obstacles = json::array();
      for (const Obstacle& o : scenario.obstacles) {
        obstacles.push_back(json{{"min", vec_json(o.min)}, {"max", vec_json(o.max)}, {"margin", o.margin}});
      }
      json record = path_to_json(*out.path);
      record["type"] = "path";
      record["obstacles"] = obstacles;
      out.log.push_back(record);
    } catch (const PlanningError& e) {
      fail_stage(report.planning, e);
      report.planning.message = e.what();
    } catch (const Error& e) {
      fail_stage(report.planning, e);
    }
    out.timing.planning_seconds = seconds_since(clock);
  }

  // Servoing on a fresh plant.
  if (report.planning.status == StageStatus::Ok && options.servo) {
    clock = std::chrono::steady_clock::now();
    std::vector<OrderedSOI> subgoals;
    for (const PathNode& n : out.path->flattened()) subgoals.push_back(n.soi);
    std::optional<GmmConfig> perception;
    if (scenario.perception_in_loop) perception = gmm;
    BagSim plant(bag, scenario.grippers, perception);
    MpcConfig mpc = scenario.mpc;
    if (scenario.perception_in_loop && !scenario.measurement_noise_given) {
      mpc.measurement_noise = bag.cloud_noise_sigma * std::sqrt(3.0 / static_cast<double>(bag.cloud_density));
    }
    ControllerResult result;
    try {
      result = run_controller(subgoals, plant, mpc);
      report.servoing.status = StageStatus::Ok;
    } catch (const ServoError& e) {
      fail_stage(report.servoing, e);
      result = e.result();
    } catch (const Error& e) {
      fail_stage(report.servoing, e);
      result.final_truth = plant.truth();
    }
    report.servo_steps = result.steps;
    report.skipped_subgoals = result.skipped_subgoals;

    const OrderedSOI final_truth = result.final_truth.value_or(plant.ground_truth());
    const Points3 target = align_cyclic(subgoals.back().points, final_truth.points);
    report.final_error = mean_pointwise_distance(final_truth.points, target);
    report.final_max_error = max_pointwise_distance(final_truth.points, target);
    report.final_center_error = (centroid(final_truth.points) - centroid(target)).norm();

    const double p0 = polyline_perimeter(rim0.points);
    double drift = std::abs(polyline_perimeter(final_truth.points) / p0 - 1.0);
    for (const ControlRecord& r : result.records) {
      if (r.truth) drift = std::max(drift, std::abs(polyline_perimeter(r.truth->points) / p0 - 1.0));
    }
    report.perimeter_drift = drift;

    if (options.log_steps) {
      for (const ControlRecord& r : result.records) {
        json rec{{"type", "step"},
                 {"t", r.step},
                 {"subgoal", r.subgoal},
                 {"state", soi_to_json(r.state.points)},
                 {"target", soi_to_json(r.target.points)},
                 {"command", std::vector<double>(r.command.data(), r.command.data() + 12)},
                 {"mean_error", r.mean_error},
                 {"max_error", r.max_error},
                 {"jacobian_condition", std::isfinite(r.jacobian_condition) ? json(r.jacobian_condition) : json(nullptr)},
                 {"broyden_updated", r.broyden_updated}};
        if (r.truth) rec["truth"] = soi_to_json(r.truth->points);
        out.log.push_back(std::move(rec));
      }
    }
    out.timing.servo_seconds = seconds_since(clock);
  }

  report.success = report.extraction.status == StageStatus::Ok && report.generation.status == StageStatus::Ok &&
                   report.planning.status == StageStatus::Ok && report.servoing.status == StageStatus::Ok &&
                   report.final_error < report.success_tolerance;
  out.log.push_back(json{{"type", "summary"},
                         {"stages",
                          {{"extraction", stage_json(report.extraction)},
                           {"generation", stage_json(report.generation)},
                           {"planning", stage_json(report.planning)},
                           {"servoing", stage_json(report.servoing)}}},
                         {"servo_steps", report.servo_steps},
                         {"final_error", report.final_error},
                         {"final_center_error", report.final_center_error},
                         {"success", report.success}});
  return out;
}

void write_run_outputs(const std::filesystem::path& dir, const RunResult& result) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create output directory '" + dir.string() + "': " + ec.message());
  auto write = [&](const std::string& name, const std::string& text) {
    std::ofstream f(dir / name, std::ios::binary);
    if (!f) throw Error(ErrorCode::IoError, "cannot write '" + (dir / name).string() + "'");
    f << text;
    if (!f) throw Error(ErrorCode::IoError, "failed writing '" + (dir / name).string() + "'");
  };
  write("log.jsonl", log_text(result.log));
  write("report.json", report_text(result.report));
  write("timing.json", result.timing.to_json().dump(2) + "\n");
}

// ---- batch -----------------------------------------------------------------

BatchRow run_batch(const Scenario& base, int trials) {
  if (trials < 1) throw Error(ErrorCode::ValidationError, "trials must be positive");
  BatchRow row;
  row.scenario = base.name;
  row.trials = trials;
  std::vector<double> times;
  PipelineOptions options;
  options.log_steps = false;
  for (int k = 0; k < trials; ++k) {
    const Scenario s = randomize_placement(base, base.rng_seed + static_cast<std::uint64_t>(k));
    const RunResult r = run_pipeline(s, options);
    if (r.report.planning.status == StageStatus::Ok) {
      ++row.planning_successes;
      times.push_back(r.timing.planning_seconds);
    }
    if (r.report.success) ++row.manipulation_successes;
    row.reports.push_back(r.report);
  }
  if (!times.empty()) {
    double sum = 0.0;
    for (double t : times) sum += t;
    row.planning_time_mean = sum / static_cast<double>(times.size());
    double var = 0.0;
    for (double t : times) var += (t - row.planning_time_mean) * (t - row.planning_time_mean);
    row.planning_time_std = times.size() > 1 ? std::sqrt(var / static_cast<double>(times.size() - 1)) : 0.0;
  }
  return row;
}

json batch_to_json(const std::vector<BatchRow>& rows) {
  json out = json::array();
  for (const BatchRow& r : rows) {
    json reports = json::array();
    for (const RunReport& rep : r.reports) reports.push_back(rep.to_json());
    out.push_back(json{{"scenario", r.scenario},
                       {"trials", r.trials},
                       {"planning_successes", r.planning_successes},
                       {"manipulation_successes", r.manipulation_successes},
                       {"planning_time_mean", r.planning_time_mean},
                       {"planning_time_std", r.planning_time_std},
                       {"reports", reports}});
  }
  return out;
}

std::string batch_table(const std::vector<BatchRow>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(24) << "scenario" << std::setw(12) << "planning" << std::setw(20) << "time (s)"
     << "manipulation\n";
  for (const BatchRow& r : rows) {
    std::ostringstream time;
    time << std::fixed << std::setprecision(2) << r.planning_time_mean << " ± " << r.planning_time_std;
    os << std::left << std::setw(24) << r.scenario << std::setw(12)
       << (std::to_string(r.planning_successes) + "/" + std::to_string(r.trials)) << std::setw(21) << time.str()
       << r.manipulation_successes << "/" << r.trials << "\n";
  }
  return os.str();
}

}  // namespace bagsoi
