#include "bagsoi/error.hpp"
#include "bagsoi/soi_generation.hpp"

#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>
#include <Eigen/Geometry>

#include <cmath>
#include <numbers>

using namespace bagsoi;

namespace {

constexpr double kPi = std::numbers::pi;

// Independent oracles: quadratic form written out in matrix form, perimeter
// by brute-force polyline, base axis by Eigen's symmetric eigensolver.
double oracle_fe(const Ellipse2D& e, const Vec2& p) {
  const Eigen::Rotation2Dd r(e.alpha);
  const Vec2 local = r.inverse() * (p - e.center());
  return local.x() * local.x() / (e.rho_a * e.rho_a) + local.y() * local.y() / (e.rho_b * e.rho_b);
}

double oracle_perimeter(double a, double b) {
  constexpr int n = 200000;
  double sum = 0.0;
  Vec2 prev(a, 0.0);
  for (int i = 1; i <= n; ++i) {
    const double t = 2.0 * kPi * i / n;
    const Vec2 p(a * std::cos(t), b * std::sin(t));
    sum += (p - prev).norm();
    prev = p;
  }
  return sum;
}

Vec2 oracle_base_axis(const Points2& base) {
  Vec2 mean = Vec2::Zero();
  for (const Vec2& p : base) mean += p;
  mean /= static_cast<double>(base.size());
  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
  for (const Vec2& p : base) cov += (p - mean) * (p - mean).transpose();
  return Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d>(cov).eigenvectors().col(1);
}

Points2 rectangle(double w, double h) {
  return {Vec2(w / 2, h / 2), Vec2(-w / 2, h / 2), Vec2(-w / 2, -h / 2), Vec2(w / 2, -h / 2)};
}

Points2 regular_polygon(int n, double radius) {
  Points2 out;
  for (int i = 0; i < n; ++i) out.emplace_back(radius * std::cos(2 * kPi * i / n), radius * std::sin(2 * kPi * i / n));
  return out;
}

BaggingConstraintParams default_params(double perimeter) {
  BaggingConstraintParams p;
  p.lambda1 = 0.912;
  p.lambda2 = 0.007;
  p.lambda3 = 0.9943;
  p.rim_perimeter = perimeter;
  return p;
}

OrderedSOI circle_rim(double perimeter, const Vec3& center, int n = 64) {
  OrderedSOI rim;
  // Polyline of n chords with the requested total length.
  const double r = perimeter / (2.0 * n * std::sin(kPi / n));
  for (int i = 0; i < n; ++i) rim.points.push_back(center + r * Vec3(std::cos(2 * kPi * i / n), std::sin(2 * kPi * i / n), 0));
  return rim;
}

VertexSet lift(const Points2& base, const Eigen::Matrix3d& rotation, const Vec3& offset) {
  VertexSet v;
  for (const Vec2& p : base) v.vertices.push_back(rotation * Vec3(p.x(), p.y(), 0.0) + offset);
  return v;
}

BaggingSOI soi_with_normal(const Vec3& a_z) {
  BaggingSOI b;
  const Vec3 z = a_z.normalized();
  const Vec3 x = z.unitOrthogonal();
  b.frame.rotation.col(0) = x;
  b.frame.rotation.col(1) = z.cross(x);
  b.frame.rotation.col(2) = z;
  b.soi = circle_rim(0.5, Vec3(0.1, 0.2, 0.3), 16);
  return b;
}

}  // namespace

TEST(ImplicitEllipse, CenterBoundaryAndHandValue) {
  const Ellipse2D e{0.01, -0.02, 0.3, 0.1, 0.7};
  EXPECT_DOUBLE_EQ(implicit_ellipse_value(e, 0.01, -0.02), 0.0);
  for (int i = 0; i < 50; ++i) {
    const Vec2 p = e.point(2 * kPi * i / 50.0);
    EXPECT_NEAR(implicit_ellipse_value(e, p.x(), p.y()), 1.0, 1e-9);
  }
  EXPECT_NEAR(implicit_ellipse_value(Ellipse2D{0, 0, 2, 1, 0}, 3, 0), 2.25, 1e-15);
  for (int i = 0; i < 20; ++i) {
    const Vec2 p(0.05 * i - 0.4, 0.03 * i - 0.2);
    EXPECT_NEAR(implicit_ellipse_value(e, p.x(), p.y()), oracle_fe(e, p), 1e-12);
  }
}

TEST(BaggingEllipse, RectangleMeetsAllConstraints) {
  const Points2 base = rectangle(0.10, 0.04);
  const BaggingConstraintParams params = default_params(0.68);
  const Ellipse2D e = compute_bagging_ellipse(base, params);

  for (const Vec2& v : base) EXPECT_LT(oracle_fe(e, v), 0.912);
  EXPECT_LE(e.center().norm(), 0.007);
  EXPECT_GE(std::abs(Vec2(std::cos(e.alpha), std::sin(e.alpha)).dot(oracle_base_axis(base))), 0.9943);
  EXPECT_LT(std::abs(oracle_perimeter(e.rho_a, e.rho_b) - 0.68), 1e-3);

  const ConstraintReport report = evaluate_constraints(e, base, params);
  EXPECT_TRUE(report.satisfies(params));
  EXPECT_FALSE(report.c3_waived);
}

TEST(BaggingEllipse, RegularPolygonWaivesParallelismAndIsNearCircle) {
  const Points2 base = regular_polygon(12, 0.05);
  const BaggingConstraintParams params = default_params(0.68);
  const Ellipse2D e = compute_bagging_ellipse(base, params);
  const ConstraintReport report = evaluate_constraints(e, base, params);
  EXPECT_TRUE(report.c3_waived);
  EXPECT_TRUE(report.satisfies(params));
  const double radius = 0.68 / (2 * kPi);
  EXPECT_LT(std::abs(oracle_perimeter(e.rho_a, e.rho_b) - 0.68), 1e-3);
  EXPECT_LE(e.center().norm(), 0.007);
  // Nothing pulls a symmetric base toward elongation.
  EXPECT_NEAR(e.rho_a, radius, 0.05 * radius);
  EXPECT_NEAR(e.rho_b, radius, 0.05 * radius);
}

TEST(BaggingEllipse, TinyLambda1IsInfeasible) {
  BaggingConstraintParams params = default_params(0.3);
  params.lambda1 = 0.01;
  try {
    compute_bagging_ellipse(rectangle(0.10, 0.04), params);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Infeasible);
  }
}

TEST(BaggingEllipse, ShortRimIsInfeasible) {
  EXPECT_THROW(compute_bagging_ellipse(rectangle(0.20, 0.20), default_params(0.5)), Error);
}

// Passes the hull-perimeter pre-check (0.650 / sqrt(0.912) = 0.681 < 1.01 R)
// but the smallest admissible enclosing ellipse is the scaled circumcircle,
// L = 2 pi 0.115 / sqrt(0.912) = 0.757 > R.
TEST(BaggingEllipse, OversizedBaseIsInfeasibleAfterSolve) {
  const double side = 0.23 / std::sqrt(2.0);
  try {
    compute_bagging_ellipse(rectangle(side, side), default_params(0.68));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Infeasible);
    EXPECT_NE(std::string(e.what()).find("misses the rim perimeter"), std::string::npos);
  }
}

TEST(BaggingEllipse, ParameterValidation) {
  BaggingConstraintParams params = default_params(0.68);
  params.lambda1 = 1.5;
  try {
    params.validate();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ValidationError);
    EXPECT_NE(std::string(e.what()).find("lambda1 must be in (0,1)"), std::string::npos);
  }
  params = default_params(0.68);
  params.lambda3 = 0.0;
  EXPECT_THROW(params.validate(), Error);
  params = default_params(0.0);
  EXPECT_THROW(params.validate(), Error);
  EXPECT_NO_THROW(params.validate(false));
}

TEST(BaggingEllipse, DegenerateBaseRejected) {
  const Points2 two{Vec2(0, 0), Vec2(0.1, 0)};
  EXPECT_THROW(compute_bagging_ellipse(two, default_params(0.68)), Error);
}

TEST(MakeBaggingSoi, TiltedRectangleSoiOnWorldEllipse) {
  const Eigen::Matrix3d tilt = Eigen::AngleAxisd(0.3, Vec3(1, 1, 0).normalized()).toRotationMatrix();
  const Vec3 offset(0.05, -0.02, 0.35);
  const VertexSet vertices = lift(rectangle(0.10, 0.04), tilt, offset);
  const OrderedSOI rim0 = circle_rim(0.68, Vec3(0, 0, 0.6));
  const BaggingSOI out = make_bagging_soi(vertices, rim0, default_params(0.0), 32);

  ASSERT_EQ(out.soi.size(), 32u);
  EXPECT_TRUE(out.constraint_report.satisfies(default_params(0.68)));
  // Each SOI point satisfies the world ellipse equations.
  const Ellipse3D w = out.world_ellipse();
  for (const Vec3& p : out.soi.points) {
    const Vec3 d = p - w.center;
    EXPECT_NEAR(d.dot(w.normal()), 0.0, 1e-9);
    const double fu = d.dot(w.u) / w.rho_u, fv = d.dot(w.v) / w.rho_v;
    EXPECT_NEAR(fu * fu + fv * fv, 1.0, 1e-9);
  }
  EXPECT_NEAR(polyline_perimeter(out.soi.points) / 0.68, 1.0, 0.02);
  // Concentric with the vertex centroid, in the bottom plane.
  Vec3 c = Vec3::Zero();
  for (const Vec3& v : vertices.vertices) c += v;
  c /= 4.0;
  EXPECT_LE((w.center - c).norm(), 0.007 + 1e-12);
  EXPECT_NEAR(std::abs(w.normal().dot(tilt.col(2))), 1.0, 1e-9);
}

TEST(MakeBaggingSoi, SquareBaseCentroidWithinConcentricity) {
  const VertexSet vertices = lift(rectangle(0.08, 0.08), Eigen::Matrix3d::Identity(), Vec3(0.3, 0.1, 0.2));
  const BaggingSOI out = make_bagging_soi(vertices, circle_rim(0.68, Vec3::Zero()), default_params(0.0), 32);
  EXPECT_LE((centroid(out.soi.points) - Vec3(0.3, 0.1, 0.2)).norm(), 0.007);
}

TEST(MakeBaggingSoi, FullSampleCountKeepsEverySample) {
  const VertexSet vertices = lift(rectangle(0.10, 0.04), Eigen::Matrix3d::Identity(), Vec3::Zero());
  const BaggingSOI out = make_bagging_soi(vertices, circle_rim(0.68, Vec3::Zero()), default_params(0.0),
                                          kEllipseSamples);
  const Points3 samples = sample_ellipse3d(out.world_ellipse(), kEllipseSamples);
  ASSERT_EQ(out.soi.size(), samples.size());
  EXPECT_LE(aligned_max_distance(out.soi.points, samples), 1e-12);
  EXPECT_THROW(make_bagging_soi(vertices, circle_rim(0.68, Vec3::Zero()), default_params(0.0), kEllipseSamples + 1),
               Error);
}

TEST(GoalSoi, ZeroDepthIsIdentity) {
  const BaggingSOI b = soi_with_normal(Vec3(0, 0, 1));
  const OrderedSOI g = generate_goal_soi(b, 0.0);
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_EQ(g.points[i], b.soi.points[i]);
}

TEST(GoalSoi, DownwardNormalIsFlipped) {
  const BaggingSOI b = soi_with_normal(Vec3(0, 0, -1));
  const OrderedSOI g = generate_goal_soi(b, 0.1);
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_LE((g.points[i] - b.soi.points[i] - Vec3(0, 0, 0.1)).norm(), 1e-15);
}

TEST(GoalSoi, UpwardNormalShiftsUp) {
  const BaggingSOI b = soi_with_normal(Vec3(0, 0, 1));
  const OrderedSOI g = generate_goal_soi(b, 0.05);
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_LE((g.points[i] - b.soi.points[i] - Vec3(0, 0, 0.05)).norm(), 1e-15);
}

TEST(GoalSoi, TiltedNormalPreservesShape) {
  const BaggingSOI b = soi_with_normal(Vec3(0.3, -0.2, -0.9));
  const OrderedSOI g = generate_goal_soi(b, 0.07);
  const Vec3 shift = g.points[0] - b.soi.points[0];
  EXPECT_NEAR(shift.norm(), 0.07, 1e-12);
  EXPECT_GT(shift.z(), 0.0);
  for (std::size_t i = 0; i < g.size(); ++i) {
    for (std::size_t j = 0; j < g.size(); ++j) {
      EXPECT_NEAR((g.points[i] - g.points[j]).norm(), (b.soi.points[i] - b.soi.points[j]).norm(), 1e-12);
    }
  }
}

TEST(GoalSoi, HorizontalNormalAndNegativeDepthRejected) {
  try {
    generate_goal_soi(soi_with_normal(Vec3(1, 0, 0)), 0.1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::HorizontalNormal);
  }
  EXPECT_THROW(generate_goal_soi(soi_with_normal(Vec3(0, 0, 1)), -0.01), Error);
}
