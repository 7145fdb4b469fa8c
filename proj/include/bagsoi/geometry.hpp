#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <span>
#include <vector>

namespace bagsoi {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Points2 = std::vector<Vec2>;
using Points3 = std::vector<Vec3>;

/// Raw sensor cloud, world frame.
struct PointCloud {
  Points3 points;
};

/// Coplanar vertices of an object's bottom face, world frame.
struct VertexSet {
  Points3 vertices;
};

/// Max out-of-plane residual accepted for a VertexSet (meters).
inline constexpr double kCoplanarTolerance = 1e-4;

/**
 * Rigid frame attached to the object bottom.
 *
 * Columns of `rotation` are the frame axes (a_x, a_y, a_z) expressed in the
 * world frame; `origin` is the vertex centroid.
 */
struct BottomFrame {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Vec3 origin = Vec3::Zero();

  Vec3 axis_x() const { return rotation.col(0); }
  Vec3 axis_y() const { return rotation.col(1); }
  Vec3 axis_z() const { return rotation.col(2); }

  Vec3 to_frame(const Vec3& world) const { return rotation.transpose() * (world - origin); }
  Vec3 from_frame(const Vec3& local) const { return rotation * local + origin; }

  /// Homogeneous world-from-frame transform.
  Eigen::Matrix4d matrix() const;
};

/// Planar ellipse in the bottom frame's xy-plane.
struct Ellipse2D {
  double tau_x = 0.0;
  double tau_y = 0.0;
  double rho_a = 1.0;  ///< semi-major
  double rho_b = 1.0;  ///< semi-minor
  double alpha = 0.0;  ///< orientation of the major axis, radians

  Vec2 center() const { return {tau_x, tau_y}; }
  Vec2 point(double theta) const;
  Vec2 major_axis() const;

  /// Swaps axes if needed so rho_a >= rho_b and wraps alpha into [0, pi).
  Ellipse2D normalized() const;
};

/// Ellipse embedded in 3D: c + rho_u cos(t) u + rho_v sin(t) v.
struct Ellipse3D {
  Vec3 center = Vec3::Zero();
  Vec3 u = Vec3::UnitX();
  Vec3 v = Vec3::UnitY();
  double rho_u = 1.0;
  double rho_v = 1.0;

  Vec3 point(double theta) const;
  Vec3 normal() const { return u.cross(v); }

  /// Orders the axes so rho_u >= rho_v while keeping u x v unchanged.
  Ellipse3D normalized() const;
};

BottomFrame build_bottom_frame(const VertexSet& vertices);

Points3 to_frame(std::span<const Vec3> points, const BottomFrame& frame);
Points3 from_frame(std::span<const Vec3> points, const BottomFrame& frame);

/// Ramanujan's second approximation of the ellipse circumference.
double ellipse_perimeter(double rho_a, double rho_b);

/// Length of the closed loop through `points` (last point joins the first).
double polyline_perimeter(std::span<const Vec3> points);

struct PrincipalAxes2D {
  Vec2 axis;             ///< unit eigenvector of the largest eigenvalue
  double major = 0.0;    ///< largest covariance eigenvalue
  double minor = 0.0;    ///< smallest covariance eigenvalue
};

PrincipalAxes2D principal_axes_2d(std::span<const Vec2> points);

/// Principal direction with the first nonzero component made positive.
Vec2 pca_principal_axis(std::span<const Vec2> points);

std::vector<std::size_t> farthest_point_indices(std::span<const Vec3> points, std::size_t k,
                                                std::size_t start_index = 0);
Points3 farthest_point_sampling(std::span<const Vec3> points, std::size_t k,
                                std::size_t start_index = 0);

/// Mean squared nearest-neighbour distance from A to B plus from B to A.
double chamfer_distance(std::span<const Vec3> a, std::span<const Vec3> b);

/// n points at theta_i = 2 pi i / n.
Points3 sample_ellipse3d(const Ellipse3D& ellipse, std::size_t n);

/// Parameter angle of the point on the ellipse curve nearest to p.
double nearest_ellipse_angle(const Ellipse3D& ellipse, const Vec3& p);

/// Nearest point on the ellipse curve.
Vec3 project_to_ellipse(const Ellipse3D& ellipse, const Vec3& p);

/// Parameter angles splitting the ellipse (rho_u, rho_v) into n arcs of equal
/// length, starting at theta = 0.
std::vector<double> equal_arc_angles(double rho_u, double rho_v, std::size_t n);

/// n points evenly spaced along the curve, starting at theta = 0. SOI states
/// use this spacing: rim material points keep their separation.
Points3 sample_ellipse3d_arclength(const Ellipse3D& ellipse, std::size_t n);

/// Equal-arc samples (as many as `reference` has) whose starting offset, on a
/// grid of `subdivisions` per spacing, best matches `reference`; returned
/// cyclically aligned to it.
Points3 sample_ellipse3d_matched(const Ellipse3D& ellipse, std::span<const Vec3> reference,
                                 std::size_t subdivisions = 16);

Vec3 centroid(std::span<const Vec3> points);

// Cyclic index correspondence between two ordered loops of equal length.

struct CyclicAlignment {
  std::size_t shift = 0;
  bool reversed = false;
};

enum class AlignmentCost { SumSquared, MaxDistance };

/// Best map i -> (shift +/- i) mod n so that points[map(i)] tracks reference[i].
CyclicAlignment best_cyclic_alignment(std::span<const Vec3> points,
                                      std::span<const Vec3> reference, bool allow_reversal,
                                      AlignmentCost cost = AlignmentCost::SumSquared);

Points3 apply_alignment(std::span<const Vec3> points, const CyclicAlignment& alignment);

/// Reindex `points` to follow `reference` (sum-of-squares criterion).
Points3 align_cyclic(std::span<const Vec3> points, std::span<const Vec3> reference,
                     bool allow_reversal = true);

/// Largest per-index distance without any reindexing.
double max_pointwise_distance(std::span<const Vec3> a, std::span<const Vec3> b);
double mean_pointwise_distance(std::span<const Vec3> a, std::span<const Vec3> b);

/// Max per-point distance under the cyclic alignment that minimizes it.
double aligned_max_distance(std::span<const Vec3> a, std::span<const Vec3> b,
                            bool allow_reversal = true);

}  // namespace bagsoi
