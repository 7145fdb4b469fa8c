#pragma once

#include "bagsoi/error.hpp"
#include "bagsoi/soi.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace bagsoi {

/// Axis-aligned cuboid obstacle, world frame, inflated by `margin`.
struct Obstacle {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Zero();
  double margin = 0.0;

  void validate() const;
  Vec3 inflated_min() const { return min.array() - margin; }
  Vec3 inflated_max() const { return max.array() + margin; }
};

struct PlannerConfig {
  int max_iterations = 5000;
  double step_size = 0.02;         ///< max per-point motion between nodes, m
  double connect_epsilon = 0.01;   ///< tree connection threshold, m
  double lambda4 = 0.002;          ///< perimeter band (fraction)
  double lambda5 = 0.021;          ///< ellipse center vs point centroid, m
  /// Sampling box for ellipse centers; an empty box means "anchors + padding".
  Vec3 sample_min = Vec3::Zero();
  Vec3 sample_max = Vec3::Zero();
  double sample_padding = 0.1;
  std::uint64_t rng_seed = 1;
  /// Reference perimeter R; <= 0 means "polyline perimeter of the start".
  double reference_perimeter = 0.0;
  double goal_bias = 0.1;
  double sample_jitter = 0.002;    ///< per-coordinate noise on sampled points, m
  int max_extend_steps = 64;
  bool shortcut = false;
  int shortcut_attempts = 50;

  void validate() const;
};

struct PathNode {
  OrderedSOI soi;
  Ellipse3D ellipse;
  int parent = -1;  ///< index of the preceding node, -1 for a root
};

/// A path endpoint. Without an ellipse the anchor is fitted by regularization.
struct Anchor {
  OrderedSOI soi;
  std::optional<Ellipse3D> ellipse;
};

struct BaggingPath {
  std::vector<PathNode> pre_bagging;  ///< g_0 ... g_dag
  std::vector<PathNode> bagging;      ///< g_dag ... g_star

  /// Whole path with the junction node listed once.
  std::vector<PathNode> flattened() const;
};

/// Planning failure tagged with the segment that failed.
class PlanningError : public Error {
 public:
  PlanningError(std::string segment, const std::string& message)
      : Error(ErrorCode::PlanningFailed, segment + ": " + message), segment_(std::move(segment)) {}

  const std::string& segment() const { return segment_; }

 private:
  std::string segment_;
};

/// Ellipse discretization used for the Chamfer fit and the perimeter band.
inline constexpr std::size_t kRegularizationSamples = 90;

struct RegularizeOptions {
  int restarts = 3;
  int max_evaluations = 1500;
  std::optional<Ellipse3D> seed;  ///< defaults to the plane-PCA ellipse
};

struct Regularized {
  Ellipse3D ellipse;
  OrderedSOI soi;        ///< n_x samples, reindexed to follow the input points
  double chamfer = 0.0;  ///< CD(Y, X) at the returned ellipse
};

/// Fits the ellipse minimizing the Chamfer distance to `points` subject to the
/// perimeter band |R / R_y - 1| <= lambda4 and center offset <= lambda5.
Regularized regularize(std::span<const Vec3> points, double lambda4, double lambda5,
                       double reference_perimeter, const RegularizeOptions& options = {});

/// Polyline perimeter of the ellipse sampled as in regularization.
double ellipse_band_perimeter(const Ellipse3D& ellipse);

bool segment_intersects_box(const Vec3& a, const Vec3& b, const Vec3& box_min, const Vec3& box_max);

/// True iff no point and no chord of the closed loop touches an inflated obstacle.
bool collision_free(std::span<const Vec3> points, std::span<const Obstacle> obstacles);
inline bool collision_free(const OrderedSOI& soi, std::span<const Obstacle> obstacles) {
  return collision_free(soi.points, obstacles);
}

/// Distance between SOI states: max per-point distance under the best cyclic alignment.
double soi_distance(std::span<const Vec3> a, std::span<const Vec3> b);

/// Ellipse parameter interpolation: center lerp, shortest-arc normal rotation,
/// in-plane axis rotation and radii lerp.
Ellipse3D interpolate_ellipse(const Ellipse3D& from, const Ellipse3D& to, double s);

std::vector<PathNode> plan_segment(const Anchor& start, const Anchor& goal,
                                   std::span<const Obstacle> obstacles, const PlannerConfig& config,
                                   const std::string& segment = "segment");

BaggingPath plan_full(const Anchor& g0, const Anchor& g_dag, const Anchor& g_star,
                      std::span<const Obstacle> obstacles, const PlannerConfig& config);

}  // namespace bagsoi
