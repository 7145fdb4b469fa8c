#include "bagsoi/soi_planning.hpp"

#include "bagsoi/nelder_mead.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

namespace bagsoi {

namespace {

constexpr double kPi = std::numbers::pi;

struct TrigTable {
  std::array<double, kRegularizationSamples> cos{};
  std::array<double, kRegularizationSamples> sin{};
  TrigTable() {
    for (std::size_t i = 0; i < kRegularizationSamples; ++i) {
      const double t = 2.0 * kPi * static_cast<double>(i) / static_cast<double>(kRegularizationSamples);
      cos[i] = std::cos(t);
      sin[i] = std::sin(t);
    }
  }
};

const TrigTable& trig() {
  static const TrigTable table;
  return table;
}

void sample_band(const Ellipse3D& e, std::array<Vec3, kRegularizationSamples>& out) {
  const TrigTable& t = trig();
  const Vec3 a = e.rho_u * e.u, b = e.rho_v * e.v;
  for (std::size_t i = 0; i < kRegularizationSamples; ++i) out[i] = e.center + t.cos[i] * a + t.sin[i] * b;
}

double band_perimeter(const std::array<Vec3, kRegularizationSamples>& y) {
  double length = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) length += (y[(i + 1) % y.size()] - y[i]).norm();
  return length;
}

double chamfer(const std::array<Vec3, kRegularizationSamples>& y, std::span<const Vec3> x) {
  std::array<double, kRegularizationSamples> y_best;
  y_best.fill(std::numeric_limits<double>::infinity());
  double x_total = 0.0;
  for (const Vec3& p : x) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < y.size(); ++i) {
      const double d = (y[i] - p).squaredNorm();
      best = std::min(best, d);
      y_best[i] = std::min(y_best[i], d);
    }
    x_total += best;
  }
  double y_total = 0.0;
  for (double d : y_best) y_total += d;
  return x_total / static_cast<double>(x.size()) + y_total / static_cast<double>(y.size());
}

Eigen::Matrix3d orthonormal_frame(const Vec3& u, const Vec3& v) {
  const Vec3 un = u.normalized();
  const Vec3 vn = (v - v.dot(un) * un).normalized();
  Eigen::Matrix3d frame;
  frame.col(0) = un;
  frame.col(1) = vn;
  frame.col(2) = un.cross(vn);
  return frame;
}

// Drives a sampled ellipse onto the constraint set: radii rescaled onto the
// perimeter band, center pulled within lambda5 of the point centroid.
Ellipse3D project_constraints(Ellipse3D e, const Vec3& point_centroid, double lambda4, double lambda5,
                              double reference) {
  std::array<Vec3, kRegularizationSamples> y;
  sample_band(e, y);
  const double ratio = reference / band_perimeter(y);
  if (std::abs(ratio - 1.0) > lambda4) {
    e.rho_u *= ratio;
    e.rho_v *= ratio;
  }
  const Vec3 offset = e.center - point_centroid;
  if (offset.norm() > lambda5) e.center = point_centroid + offset * (0.99 * lambda5 / offset.norm());
  return e;
}

bool satisfies_regularization(const Ellipse3D& e, const Vec3& point_centroid, double lambda4,
                              double lambda5, double reference) {
  return std::abs(reference / ellipse_band_perimeter(e) - 1.0) <= lambda4 &&
         (e.center - point_centroid).norm() <= lambda5 + 1e-12;
}

}  // namespace

void Obstacle::validate() const {
  if (!(min.array() < max.array()).all()) {
    throw Error(ErrorCode::ValidationError, "obstacle min corner must be below max corner");
  }
  if (!(margin >= 0.0)) throw Error(ErrorCode::ValidationError, "obstacle margin must be non-negative");
}

void PlannerConfig::validate() const {
  if (max_iterations < 1) throw Error(ErrorCode::ValidationError, "max_iterations must be positive");
  if (!(step_size > 0.0)) throw Error(ErrorCode::ValidationError, "step_size must be positive");
  if (!(connect_epsilon > 0.0)) throw Error(ErrorCode::ValidationError, "connect_epsilon must be positive");
  if (!(lambda4 > 0.0)) throw Error(ErrorCode::ValidationError, "lambda4 must be positive");
  if (!(lambda5 >= 0.0)) throw Error(ErrorCode::ValidationError, "lambda5 must be non-negative");
  if (!(goal_bias >= 0.0 && goal_bias <= 1.0)) throw Error(ErrorCode::ValidationError, "goal_bias must be in [0,1]");
  if (!(sample_jitter >= 0.0)) throw Error(ErrorCode::ValidationError, "sample_jitter must be non-negative");
  if (max_extend_steps < 1) throw Error(ErrorCode::ValidationError, "max_extend_steps must be positive");
}

std::vector<PathNode> BaggingPath::flattened() const {
  std::vector<PathNode> out = pre_bagging;
  for (std::size_t i = out.empty() ? 0 : 1; i < bagging.size(); ++i) out.push_back(bagging[i]);
  for (std::size_t i = 0; i < out.size(); ++i) out[i].parent = static_cast<int>(i) - 1;
  return out;
}

double ellipse_band_perimeter(const Ellipse3D& ellipse) {
  std::array<Vec3, kRegularizationSamples> y;
  sample_band(ellipse, y);
  return band_perimeter(y);
}

Regularized regularize(std::span<const Vec3> points, double lambda4, double lambda5,
                       double reference_perimeter, const RegularizeOptions& options) {
  if (points.size() < 5) {
    throw Error(ErrorCode::RegularizationFailed, "regularization needs at least 5 points");
  }
  if (!(reference_perimeter > 0.0)) {
    throw Error(ErrorCode::RegularizationFailed, "reference perimeter must be positive");
  }
  const Vec3 point_centroid = centroid(points);
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (const Vec3& p : points) cov += (p - point_centroid) * (p - point_centroid).transpose();
  cov /= static_cast<double>(points.size());
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> solver(cov);
  const Vec3 eig = solver.eigenvalues();
  if (!(eig(2) > 1e-18) || eig(1) <= 1e-10 * eig(2)) {
    throw Error(ErrorCode::RegularizationFailed, "points are collinear");
  }

  Ellipse3D seed;
  const bool cold = !options.seed.has_value();
  if (options.seed) {
    seed = *options.seed;
  } else {
    seed.center = point_centroid;
    seed.u = solver.eigenvectors().col(2);
    seed.v = solver.eigenvectors().col(0).cross(seed.u);
    seed.rho_u = std::sqrt(2.0 * eig(2));
    seed.rho_v = std::sqrt(2.0 * eig(1));
  }
  const Eigen::Matrix3d base_frame = orthonormal_frame(seed.u, seed.v);

  auto decode = [&](const Eigen::VectorXd& x) {
    const Vec3 omega = x.segment<3>(3);
    const double angle = omega.norm();
    const Eigen::Matrix3d rotation =
        angle > 0.0 ? Eigen::Matrix3d(Eigen::AngleAxisd(angle, omega / angle) * base_frame) : base_frame;
    Ellipse3D e;
    e.center = x.head<3>();
    e.u = rotation.col(0);
    e.v = rotation.col(1);
    e.rho_u = std::exp(x(6));
    e.rho_v = std::exp(x(7));
    return e;
  };

  const double band = 0.9 * lambda4;
  const double offset_bound = 0.9 * lambda5;
  std::array<Vec3, kRegularizationSamples> y;
  auto objective = [&](const Eigen::VectorXd& x) {
    const Ellipse3D e = decode(x);
    sample_band(e, y);
    const double perimeter_gap = std::abs(reference_perimeter / band_perimeter(y) - 1.0);
    double value = chamfer(y, points);
    value += reference_perimeter * reference_perimeter * std::max(0.0, perimeter_gap - band);
    value += reference_perimeter * std::max(0.0, (e.center - point_centroid).norm() - offset_bound);
    return value;
  };

  Eigen::VectorXd x(8);
  x << seed.center, Vec3::Zero(), std::log(std::max(seed.rho_u, 1e-9)), std::log(std::max(seed.rho_v, 1e-9));
  Eigen::VectorXd steps(8);
  const double scale = std::max(seed.rho_v, 1e-3);
  if (cold) {
    steps << Vec3::Constant(0.05 * scale), Vec3::Constant(0.1), 0.1, 0.1;
  } else {
    steps << Vec3::Constant(0.01 * scale), Vec3::Constant(0.02), 0.02, 0.02;
  }

  SimplexOptions simplex;
  simplex.max_evaluations = options.max_evaluations;
  simplex.x_tolerance = 1e-9;
  simplex.f_tolerance = 1e-16;

  std::optional<Ellipse3D> best;
  double best_value = std::numeric_limits<double>::infinity();
  for (int restart = 0; restart < std::max(1, options.restarts); ++restart) {
    const SimplexResult result = nelder_mead(objective, x, steps, simplex);
    x = result.x;
    steps *= 0.3;
    const Ellipse3D candidate =
        project_constraints(decode(x), point_centroid, lambda4, lambda5, reference_perimeter).normalized();
    if (!satisfies_regularization(candidate, point_centroid, lambda4, lambda5, reference_perimeter)) continue;
    sample_band(candidate, y);
    const double value = chamfer(y, points);
    if (value < best_value) {
      best_value = value;
      best = candidate;
    }
  }
  if (!best) throw Error(ErrorCode::RegularizationFailed, "no ellipse satisfies the perimeter and center bounds");

  Regularized out;
  out.ellipse = *best;
  out.chamfer = best_value;
  out.soi.points = sample_ellipse3d_matched(out.ellipse, points);
  return out;
}

bool segment_intersects_box(const Vec3& a, const Vec3& b, const Vec3& box_min, const Vec3& box_max) {
  double t0 = 0.0, t1 = 1.0;
  const Vec3 d = b - a;
  for (int axis = 0; axis < 3; ++axis) {
    if (std::abs(d(axis)) < 1e-15) {
      if (a(axis) < box_min(axis) || a(axis) > box_max(axis)) return false;
      continue;
    }
    double near = (box_min(axis) - a(axis)) / d(axis);
    double far = (box_max(axis) - a(axis)) / d(axis);
    if (near > far) std::swap(near, far);
    t0 = std::max(t0, near);
    t1 = std::min(t1, far);
    if (t0 > t1) return false;
  }
  return true;
}

bool collision_free(std::span<const Vec3> points, std::span<const Obstacle> obstacles) {
  for (const Obstacle& obstacle : obstacles) {
    const Vec3 lo = obstacle.inflated_min(), hi = obstacle.inflated_max();
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (segment_intersects_box(points[i], points[(i + 1) % points.size()], lo, hi)) return false;
    }
  }
  return true;
}

double soi_distance(std::span<const Vec3> a, std::span<const Vec3> b) {
  return aligned_max_distance(a, b, true);
}

Ellipse3D interpolate_ellipse(const Ellipse3D& from, const Ellipse3D& to, double s) {
  Vec3 to_u = to.u, to_v = to.v;
  if (from.normal().dot(to.normal()) < 0.0) to_v = -to_v;  // same ellipse, opposite orientation
  const Vec3 n_from = from.normal().normalized();
  const Vec3 n_to = to_u.cross(to_v).normalized();

  const Eigen::Quaterniond tilt = Eigen::Quaterniond::FromTwoVectors(n_from, n_to);
  const Vec3 u_tilted = tilt * from.u;
  double twist = std::atan2(u_tilted.cross(to_u).dot(n_to), u_tilted.dot(to_u));
  // u and -u describe the same ellipse; take the smaller in-plane turn.
  if (twist > kPi / 2.0) twist -= kPi;
  if (twist < -kPi / 2.0) twist += kPi;

  const Eigen::Quaterniond partial = Eigen::Quaterniond::Identity().slerp(s, tilt);
  const Vec3 n_s = (partial * n_from).normalized();
  const Vec3 u_s = (Eigen::AngleAxisd(s * twist, n_s) * (partial * from.u)).normalized();

  Ellipse3D out;
  out.center = (1.0 - s) * from.center + s * to.center;
  out.u = u_s;
  out.v = n_s.cross(u_s).normalized();
  out.rho_u = (1.0 - s) * from.rho_u + s * to.rho_u;
  out.rho_v = (1.0 - s) * from.rho_v + s * to.rho_v;
  return out;
}

namespace {

struct Tree {
  std::vector<PathNode> nodes;
  std::vector<Vec3> centroids;

  int add(PathNode node) {
    centroids.push_back(centroid(node.soi.points));
    nodes.push_back(std::move(node));
    return static_cast<int>(nodes.size()) - 1;
  }

  // Nearest node under soi_distance; the centroid gap is a lower bound.
  std::pair<int, double> nearest(std::span<const Vec3> points) const {
    const Vec3 c = centroid(points);
    std::vector<std::pair<double, int>> order;
    order.reserve(nodes.size());
    for (std::size_t i = 0; i < nodes.size(); ++i) order.emplace_back((centroids[i] - c).norm(), static_cast<int>(i));
    std::sort(order.begin(), order.end());
    int best = -1;
    double best_distance = std::numeric_limits<double>::infinity();
    for (const auto& [bound, index] : order) {
      if (bound >= best_distance) break;
      const double d = soi_distance(nodes[static_cast<std::size_t>(index)].soi.points, points);
      if (d < best_distance) {
        best_distance = d;
        best = index;
      }
    }
    return {best, best_distance};
  }

  std::vector<PathNode> chain_to_root(int index) const {
    std::vector<PathNode> chain;
    for (int i = index; i >= 0; i = nodes[static_cast<std::size_t>(i)].parent) {
      chain.push_back(nodes[static_cast<std::size_t>(i)]);
    }
    return chain;
  }
};

class SegmentPlanner {
 public:
  SegmentPlanner(std::span<const Obstacle> obstacles, const PlannerConfig& config, double reference,
                 std::size_t n_x)
      : obstacles_(obstacles), config_(config), reference_(reference), n_x_(n_x), rng_(config.rng_seed) {}

  bool node_valid(const PathNode& node) const {
    return collision_free(node.soi, obstacles_) &&
           std::abs(reference_ / ellipse_band_perimeter(node.ellipse) - 1.0) <= config_.lambda4;
  }

  // Linear per-index sweep between consecutive states at 5 mm resolution.
  bool sweep_free(const Points3& a, const Points3& b) const {
    if (obstacles_.empty()) return true;
    const int steps = std::max(1, static_cast<int>(std::ceil(max_pointwise_distance(a, b) / 0.005)));
    Points3 mid(a.size());
    for (int k = 1; k < steps; ++k) {
      const double t = static_cast<double>(k) / steps;
      for (std::size_t i = 0; i < a.size(); ++i) mid[i] = (1.0 - t) * a[i] + t * b[i];
      if (!collision_free(mid, obstacles_)) return false;
    }
    return true;
  }

  PathNode make_root(const Anchor& anchor, const std::string& which) const {
    PathNode node;
    if (anchor.ellipse) {
      node.ellipse = anchor.ellipse->normalized();
    } else {
      node.ellipse = regularize(anchor.soi.points, config_.lambda4, config_.lambda5, reference_).ellipse;
    }
    // The root keeps the anchor's own spacing, moved onto its ellipse.
    node.soi.points.reserve(anchor.soi.size());
    for (const Vec3& p : anchor.soi.points) node.soi.points.push_back(project_to_ellipse(node.ellipse, p));
    node.soi.timestamp = anchor.soi.timestamp;
    const double gap = max_pointwise_distance(node.soi.points, anchor.soi.points);
    if (gap >= config_.connect_epsilon) {
      throw Error(ErrorCode::PlanningFailed, which + " anchor is " + std::to_string(gap) +
                                                 " m from its ellipse (epsilon " +
                                                 std::to_string(config_.connect_epsilon) + ")");
    }
    if (!collision_free(node.soi, obstacles_)) throw Error(ErrorCode::PlanningFailed, which + " anchor collides");
    if (!node_valid(node)) throw Error(ErrorCode::PlanningFailed, which + " anchor is outside the perimeter band");
    return node;
  }

  // Step toward `target`: the ellipse is interpolated and re-regularized; its
  // points are the index-wise blend of both SOIs projected onto it, so a full
  // step reproduces the target's spacing.
  std::optional<PathNode> steer(const PathNode& from, const PathNode& target, double fraction) const {
    const Points3 target_points = align_cyclic(target.soi.points, from.soi.points, true);
    RegularizeOptions options;
    options.restarts = 1;
    options.max_evaluations = 400;
    for (int attempt = 0; attempt < 6; ++attempt, fraction *= 0.5) {
      const Ellipse3D guess = interpolate_ellipse(from.ellipse, target.ellipse, fraction);
      options.seed = guess;
      Regularized reg;
      try {
        reg = regularize(sample_ellipse3d_arclength(guess, n_x_), config_.lambda4, config_.lambda5, reference_, options);
      } catch (const Error&) {
        continue;
      }
      PathNode node;
      node.ellipse = reg.ellipse;
      node.soi.points.reserve(n_x_);
      for (std::size_t i = 0; i < n_x_; ++i) {
        const Vec3 blend = (1.0 - fraction) * from.soi.points[i] + fraction * target_points[i];
        node.soi.points.push_back(project_to_ellipse(reg.ellipse, blend));
      }
      if (max_pointwise_distance(node.soi.points, from.soi.points) <= config_.step_size) return node;
    }
    return std::nullopt;
  }

  // Repeated constrained steps toward `target`; returns the last node added.
  std::optional<int> extend(Tree& tree, const PathNode& target) {
    int current = tree.nearest(target.soi.points).first;
    const int first = current;
    for (int step = 0; step < config_.max_extend_steps; ++step) {
      const PathNode& node = tree.nodes[static_cast<std::size_t>(current)];
      const double gap = soi_distance(node.soi.points, target.soi.points);
      if (gap < 1e-9) break;
      const double fraction = std::min(1.0, config_.step_size / gap);
      std::optional<PathNode> next = steer(node, target, fraction);
      if (!next || !node_valid(*next) || !sweep_free(node.soi.points, next->soi.points)) break;
      next->parent = current;
      const double remaining = soi_distance(next->soi.points, target.soi.points);
      current = tree.add(std::move(*next));
      if (remaining < 1e-6 || (fraction >= 1.0 && remaining < config_.connect_epsilon)) break;
    }
    return current == first ? std::nullopt : std::optional<int>(current);
  }

  PathNode sample(const PathNode& start_root, const PathNode& goal_root) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Ellipse3D e;
    for (int i = 0; i < 3; ++i) e.center(i) = lo_(i) + unit(rng_) * (hi_(i) - lo_(i));

    Vec3 normal;
    if (unit(rng_) < 0.7) {
      const double t = unit(rng_);
      Vec3 n_goal = goal_root.ellipse.normal();
      if (n_goal.dot(start_root.ellipse.normal()) < 0.0) n_goal = -n_goal;
      normal = ((1.0 - t) * start_root.ellipse.normal() + t * n_goal).normalized();
      std::normal_distribution<double> tilt(0.0, 0.1);
      normal = (normal + Vec3(tilt(rng_), tilt(rng_), tilt(rng_))).normalized();
    } else {
      std::normal_distribution<double> gauss(0.0, 1.0);
      normal = Vec3(gauss(rng_), gauss(rng_), gauss(rng_)).normalized();
    }
    if (normal.z() < 0.0) normal = -normal;

    const Vec3 helper = std::abs(normal.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
    const Vec3 e1 = normal.cross(helper).normalized();
    const Vec3 e2 = normal.cross(e1);
    const double phi = kPi * unit(rng_);
    e.u = std::cos(phi) * e1 + std::sin(phi) * e2;
    e.v = normal.cross(e.u);
    const double ratio = 0.6 + 0.4 * unit(rng_);
    e.rho_u = reference_ / ellipse_perimeter(1.0, ratio);
    e.rho_v = ratio * e.rho_u;

    Points3 raw = sample_ellipse3d_arclength(e, n_x_);
    std::normal_distribution<double> jitter(0.0, config_.sample_jitter);
    for (Vec3& p : raw) p += Vec3(jitter(rng_), jitter(rng_), jitter(rng_));

    const Regularized reg = regularize(raw, config_.lambda4, config_.lambda5, reference_);
    PathNode node;
    node.ellipse = reg.ellipse;
    node.soi = reg.soi;
    return node;
  }

  std::vector<PathNode> run(const Anchor& start, const Anchor& goal, const std::string& segment) {
    const PathNode start_root = make_root(start, segment + " start");
    const PathNode goal_root = make_root(goal, segment + " goal");
    if (soi_distance(start_root.soi.points, goal_root.soi.points) < config_.connect_epsilon) {
      return {start_root};
    }

    lo_ = config_.sample_min;
    hi_ = config_.sample_max;
    if (!(lo_.array() < hi_.array()).all()) {
      lo_ = start_root.ellipse.center.cwiseMin(goal_root.ellipse.center);
      hi_ = start_root.ellipse.center.cwiseMax(goal_root.ellipse.center);
      lo_.array() -= config_.sample_padding;
      hi_.array() += config_.sample_padding;
    }

    Tree a, b;
    a.add(start_root);
    b.add(goal_root);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int iteration = 0; iteration < config_.max_iterations; ++iteration) {
      PathNode target;
      if (iteration == 0) {
        target = goal_root;
      } else if (unit(rng_) < config_.goal_bias) {
        target = (iteration % 2 == 0) ? goal_root : start_root;
      } else {
        try {
          target = sample(start_root, goal_root);
        } catch (const Error&) {
          continue;
        }
      }

      if (const auto added = extend(a, target)) {
        const auto [near, gap] = b.nearest(a.nodes[static_cast<std::size_t>(*added)].soi.points);
        if (gap < config_.connect_epsilon) return join(a, *added, b, near);
      }
      if (const auto added = extend(b, target)) {
        const auto [near, gap] = a.nearest(b.nodes[static_cast<std::size_t>(*added)].soi.points);
        if (gap < config_.connect_epsilon) return join(a, near, b, *added);
      }
    }
    throw PlanningError(segment, "no path after " + std::to_string(config_.max_iterations) + " iterations");
  }

  // Start-tree chain to `a_index`, then the goal-tree chain from `b_index`
  // relabelled to the start tree's index correspondence.
  std::vector<PathNode> join(const Tree& a, int a_index, const Tree& b, int b_index) {
    std::vector<PathNode> path = a.chain_to_root(a_index);
    std::reverse(path.begin(), path.end());
    std::vector<PathNode> tail = b.chain_to_root(b_index);
    const CyclicAlignment relabel =
        best_cyclic_alignment(tail.front().soi.points, path.back().soi.points, true);
    for (PathNode& node : tail) node.soi.points = apply_alignment(node.soi.points, relabel);
    if (max_pointwise_distance(tail.front().soi.points, path.back().soi.points) < 1e-9) {
      tail.erase(tail.begin());
    }
    path.insert(path.end(), tail.begin(), tail.end());
    for (std::size_t i = 0; i < path.size(); ++i) path[i].parent = static_cast<int>(i) - 1;
    if (config_.shortcut) shortcut(path);
    return path;
  }

  // Replaces a sub-chain by a direct constrained steer when that is valid and shorter.
  void shortcut(std::vector<PathNode>& path) {
    for (int attempt = 0; attempt < config_.shortcut_attempts && path.size() > 2; ++attempt) {
      std::uniform_int_distribution<std::size_t> pick(0, path.size() - 1);
      std::size_t i = pick(rng_), j = pick(rng_);
      if (i > j) std::swap(i, j);
      if (j < i + 2) continue;
      std::vector<PathNode> bridge;
      PathNode current = path[i];
      bool reached = false;
      for (int step = 0; step < config_.max_extend_steps && bridge.size() + 1 < j - i; ++step) {
        const double gap = soi_distance(current.soi.points, path[j].soi.points);
        if (gap < config_.connect_epsilon) {
          reached = true;
          break;
        }
        auto next = steer(current, path[j], std::min(1.0, config_.step_size / gap));
        if (!next || !node_valid(*next) || !sweep_free(current.soi.points, next->soi.points)) break;
        bridge.push_back(*next);
        current = *next;
      }
      if (!reached) continue;
      std::vector<PathNode> rebuilt(path.begin(), path.begin() + static_cast<std::ptrdiff_t>(i + 1));
      rebuilt.insert(rebuilt.end(), bridge.begin(), bridge.end());
      const CyclicAlignment relabel =
          best_cyclic_alignment(path[j].soi.points, rebuilt.back().soi.points, true);
      for (std::size_t k = j; k < path.size(); ++k) {
        PathNode node = path[k];
        node.soi.points = apply_alignment(node.soi.points, relabel);
        rebuilt.push_back(std::move(node));
      }
      for (std::size_t k = 0; k < rebuilt.size(); ++k) rebuilt[k].parent = static_cast<int>(k) - 1;
      path = std::move(rebuilt);
    }
  }

 private:
  std::span<const Obstacle> obstacles_;
  PlannerConfig config_;
  double reference_;
  std::size_t n_x_;
  std::mt19937_64 rng_;
  Vec3 lo_ = Vec3::Zero(), hi_ = Vec3::Zero();
};

}  // namespace

std::vector<PathNode> plan_segment(const Anchor& start, const Anchor& goal,
                                   std::span<const Obstacle> obstacles, const PlannerConfig& config,
                                   const std::string& segment) {
  config.validate();
  for (const Obstacle& o : obstacles) o.validate();
  if (start.soi.size() != goal.soi.size() || start.soi.size() < 5) {
    throw PlanningError(segment, "anchors need the same number (>= 5) of SOI points");
  }
  const double reference =
      config.reference_perimeter > 0.0 ? config.reference_perimeter : polyline_perimeter(start.soi.points);
  SegmentPlanner planner(obstacles, config, reference, start.soi.size());
  try {
    return planner.run(start, goal, segment);
  } catch (const PlanningError&) {
    throw;
  } catch (const Error& e) {
    throw PlanningError(segment, e.what());
  }
}

BaggingPath plan_full(const Anchor& g0, const Anchor& g_dag, const Anchor& g_star,
                      std::span<const Obstacle> obstacles, const PlannerConfig& config) {
  PlannerConfig resolved = config;
  if (!(resolved.reference_perimeter > 0.0)) resolved.reference_perimeter = polyline_perimeter(g0.soi.points);

  BaggingPath path;
  path.pre_bagging = plan_segment(g0, g_dag, obstacles, resolved, "pre-bagging");
  PlannerConfig second = resolved;
  second.rng_seed = resolved.rng_seed + 1;
  path.bagging = plan_segment(g_dag, g_star, obstacles, second, "bagging");

  // Both segments share the g_dag node; adopt the first segment's labelling.
  const CyclicAlignment relabel = best_cyclic_alignment(path.bagging.front().soi.points,
                                                        path.pre_bagging.back().soi.points, true);
  for (PathNode& node : path.bagging) node.soi.points = apply_alignment(node.soi.points, relabel);
  path.bagging.front() = path.pre_bagging.back();
  path.bagging.front().parent = -1;
  return path;
}

}  // namespace bagsoi
