#pragma once

#include "bagsoi/soi.hpp"

namespace bagsoi {

/// Bounds for the bagging-ellipse constraints and the measured rim perimeter.
struct BaggingConstraintParams {
  double lambda1 = 0.912;   ///< containment: F_e(vertex) < lambda1
  double lambda2 = 0.007;   ///< concentricity, meters
  double lambda3 = 0.9943;  ///< parallelism: |d_e . d_v| >= lambda3
  double rim_perimeter = 0.0;  ///< R; <= 0 means "derive from the initial rim"

  void validate(bool require_perimeter = true) const;
};

/// Achieved constraint values of an ellipse against a base.
struct ConstraintReport {
  double c1_max = 0.0;  ///< largest F_e over the base vertices
  double c2 = 0.0;      ///< center distance from the base centroid
  double c3 = 1.0;      ///< |d_e . d_v|
  bool c3_waived = false;
  double perimeter = 0.0;  ///< analytic ellipse perimeter L
  double perimeter_error = 0.0;  ///< L - R

  bool satisfies(const BaggingConstraintParams& params) const;
};

/// Number of ellipse samples used for PCA and for downsampling to the SOI.
inline constexpr std::size_t kEllipseSamples = 180;

/// Eigenvalue ratio (minor / major) above which a base counts as isotropic
/// and the parallelism constraint is dropped.
inline constexpr double kIsotropicBaseRatio = 0.95;

/// Largest relative |L - R| accepted from the solver; beyond it the rim
/// cannot hold the base and the problem is reported Infeasible.
inline constexpr double kPerimeterMatchTolerance = 1e-3;

/// Rotated-ellipse quadratic form: < 1 inside, 1 on the boundary.
double implicit_ellipse_value(const Ellipse2D& ellipse, double x, double y);

ConstraintReport evaluate_constraints(const Ellipse2D& ellipse, std::span<const Vec2> base,
                                      const BaggingConstraintParams& params);

/// Ellipse of perimeter closest to R that encloses the base (bottom-frame
/// coordinates, centroid at the origin) under the three constraints. Throws
/// Infeasible when even that ellipse misses R by more than
/// kPerimeterMatchTolerance.
Ellipse2D compute_bagging_ellipse(std::span<const Vec2> base, const BaggingConstraintParams& params);

/// Bottom-frame ellipse expressed in the world frame.
Ellipse3D to_world(const Ellipse2D& ellipse, const BottomFrame& frame);

struct BaggingSOI {
  Ellipse2D ellipse;
  BottomFrame frame;
  OrderedSOI soi;
  ConstraintReport constraint_report;

  Ellipse3D world_ellipse() const { return to_world(ellipse, frame); }
};

BaggingSOI make_bagging_soi(const VertexSet& vertices, const OrderedSOI& rim0,
                            BaggingConstraintParams params, std::size_t n_x);

/// Translates the bagging SOI by lambda_d along the bottom normal, signed so
/// that the motion points up the object side.
OrderedSOI generate_goal_soi(const BaggingSOI& bagging, double lambda_d);

}  // namespace bagsoi
