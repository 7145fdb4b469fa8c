#include "bagsoi/soi_planning.hpp"

#include <gtest/gtest.h>

#include <Eigen/Geometry>

#include <cmath>
#include <numbers>
#include <random>

using namespace bagsoi;

namespace {

Ellipse3D tilted_ellipse() {
  Ellipse3D e;
  e.center = Vec3(0.1, -0.05, 0.4);
  const Eigen::Matrix3d r = Eigen::AngleAxisd(0.3, Vec3(1, 2, 0.5).normalized()).toRotationMatrix();
  e.u = r.col(0);
  e.v = r.col(1);
  e.rho_u = 0.12;
  e.rho_v = 0.09;
  return e;
}

double axis_angle_deg(const Vec3& a, const Vec3& b) {
  return std::acos(std::min(1.0, std::abs(a.normalized().dot(b.normalized())))) * 180.0 / std::numbers::pi;
}

// Independent oracle: brute-force segment/box test by dense sampling.
bool segment_hits_box_sampled(const Vec3& a, const Vec3& b, const Vec3& lo, const Vec3& hi) {
  for (int k = 0; k <= 20000; ++k) {
    const Vec3 p = a + (b - a) * (k / 20000.0);
    if ((p.array() >= lo.array()).all() && (p.array() <= hi.array()).all()) return true;
  }
  return false;
}

bool soi_hits_box_sampled(const Points3& pts, const Obstacle& o) {
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (segment_hits_box_sampled(pts[i], pts[(i + 1) % pts.size()], o.inflated_min(), o.inflated_max())) return true;
  }
  return false;
}

// Shortest distance of p to the ellipse: dense parameter scan, then ternary
// refinement inside the winning cell.
double distance_to_ellipse(const Ellipse3D& e, const Vec3& p) {
  constexpr int kScan = 20000;
  const double h = 2 * std::numbers::pi / kScan;
  auto dist = [&](double t) { return (e.point(t) - p).norm(); };
  double best_t = 0.0, best = dist(0.0);
  for (int k = 1; k < kScan; ++k) {
    const double d = dist(h * k);
    if (d < best) {
      best = d;
      best_t = h * k;
    }
  }
  double lo = best_t - h, hi = best_t + h;
  for (int it = 0; it < 100; ++it) {
    const double m1 = lo + (hi - lo) / 3.0, m2 = hi - (hi - lo) / 3.0;
    if (dist(m1) < dist(m2)) {
      hi = m2;
    } else {
      lo = m1;
    }
  }
  return std::min(best, dist(0.5 * (lo + hi)));
}

Anchor anchor_from(const Ellipse3D& e, std::size_t n) {
  Anchor a;
  a.soi.points = sample_ellipse3d(e, n);
  a.ellipse = e;
  return a;
}

void check_path(const std::vector<PathNode>& path, double reference, const PlannerConfig& cfg,
                std::span<const Obstacle> obstacles) {
  ASSERT_FALSE(path.empty());
  for (std::size_t i = 0; i < path.size(); ++i) {
    const PathNode& node = path[i];
    EXPECT_LE(std::abs(reference / ellipse_band_perimeter(node.ellipse) - 1.0), cfg.lambda4 + 1e-12) << i;
    EXPECT_LE((node.ellipse.center - centroid(node.soi.points)).norm(), cfg.lambda5 + 1e-9) << i;
    for (const Vec3& p : node.soi.points) EXPECT_LE(distance_to_ellipse(node.ellipse, p), 1e-6);
    for (const Obstacle& o : obstacles) EXPECT_FALSE(soi_hits_box_sampled(node.soi.points, o)) << i;
    if (i > 0) {
      EXPECT_LE(max_pointwise_distance(path[i - 1].soi.points, node.soi.points),
                cfg.step_size + cfg.connect_epsilon + 1e-9)
          << i;
    }
  }
}

}  // namespace

TEST(Regularize, RecoversExactEllipse) {
  // Dense samples: the Chamfer objective vanishes exactly at the generator.
  const Ellipse3D truth = tilted_ellipse();
  const Points3 x = sample_ellipse3d(truth, kRegularizationSamples);
  const Regularized r = regularize(x, 0.002, 0.021, ellipse_band_perimeter(truth));
  EXPECT_LT((r.ellipse.center - truth.center).norm(), 1e-4);
  EXPECT_NEAR(r.ellipse.rho_u, truth.rho_u, 1e-4);
  EXPECT_NEAR(r.ellipse.rho_v, truth.rho_v, 1e-4);
  EXPECT_LT(axis_angle_deg(r.ellipse.u, truth.u), 0.5);
  EXPECT_LT(axis_angle_deg(r.ellipse.normal(), truth.normal()), 0.5);
  ASSERT_EQ(r.soi.size(), x.size());
}

TEST(Regularize, SparseExactSamplesFitNoWorseThanGenerator) {
  // With 32 points the Chamfer minimizer is slightly smaller than the
  // generator (arcs pulled toward chords); it must still beat it.
  const Ellipse3D truth = tilted_ellipse();
  const Points3 x = sample_ellipse3d(truth, 32);
  const Regularized r = regularize(x, 0.002, 0.021, ellipse_band_perimeter(truth));
  EXPECT_LE(r.chamfer, chamfer_distance(sample_ellipse3d(truth, kRegularizationSamples), x));
  EXPECT_LT(axis_angle_deg(r.ellipse.normal(), truth.normal()), 0.5);
  EXPECT_LT(axis_angle_deg(r.ellipse.u, truth.u), 0.5);
  ASSERT_EQ(r.soi.size(), x.size());
}

TEST(Regularize, JitteredSamplesFitAtLeastAsWellAsGenerator) {
  const Ellipse3D truth = tilted_ellipse();
  std::mt19937_64 rng(7);
  std::normal_distribution<double> noise(0.0, 0.002);
  for (int trial = 0; trial < 5; ++trial) {
    Points3 x = sample_ellipse3d(truth, 32);
    for (Vec3& p : x) p += Vec3(noise(rng), noise(rng), noise(rng));
    const double reference = ellipse_band_perimeter(truth);
    const Regularized r = regularize(x, 0.002, 0.021, reference);
    const Points3 generator = sample_ellipse3d(truth, kRegularizationSamples);
    EXPECT_LE(chamfer_distance(sample_ellipse3d(r.ellipse, kRegularizationSamples), x),
              1.5 * chamfer_distance(generator, x));
    EXPECT_LE(std::abs(reference / ellipse_band_perimeter(r.ellipse) - 1.0), 0.002);
  }
}

TEST(Regularize, CollinearPointsFail) {
  Points3 x;
  for (int i = 0; i < 10; ++i) x.emplace_back(0.01 * i, 0.02 * i, 0.0);
  try {
    regularize(x, 0.002, 0.021, 0.6);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::RegularizationFailed);
  }
}

TEST(Collision, PointInsideBox) {
  Obstacle o{Vec3(-0.1, -0.1, -0.1), Vec3(0.1, 0.1, 0.1), 0.0};
  const Points3 pts{Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(1, 1, 0)};
  EXPECT_FALSE(collision_free(pts, std::span(&o, 1)));
}

TEST(Collision, ChordThroughBoxMatchesSampledOracle) {
  Obstacle o{Vec3(-0.05, -0.05, -0.05), Vec3(0.05, 0.05, 0.05), 0.01};
  const Points3 pts{Vec3(-0.5, 0.0, 0.0), Vec3(0.5, 0.0, 0.0), Vec3(0.5, 1.0, 0.0), Vec3(-0.5, 1.0, 0.0)};
  EXPECT_TRUE(soi_hits_box_sampled(pts, o));
  EXPECT_FALSE(collision_free(pts, std::span(&o, 1)));

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> coord(-0.3, 0.3);
  for (int k = 0; k < 300; ++k) {
    const Vec3 a(coord(rng), coord(rng), coord(rng)), b(coord(rng), coord(rng), coord(rng));
    EXPECT_EQ(segment_intersects_box(a, b, o.inflated_min(), o.inflated_max()),
              segment_hits_box_sampled(a, b, o.inflated_min(), o.inflated_max()));
  }
}

TEST(Collision, NoObstaclesIsFree) {
  EXPECT_TRUE(collision_free(sample_ellipse3d(tilted_ellipse(), 16), {}));
}

TEST(PlanSegment, IdenticalAnchorsGiveSingleNode) {
  const Anchor a = anchor_from(tilted_ellipse(), 32);
  PlannerConfig cfg;
  const auto path = plan_segment(a, a, {}, cfg);
  EXPECT_EQ(path.size(), 1u);
}

TEST(PlanSegment, VerticalTranslation) {
  Ellipse3D start;
  start.center = Vec3(0, 0, 0.5);
  start.rho_u = 0.12;
  start.rho_v = 0.09;
  Ellipse3D goal = start;
  goal.center.z() -= 0.3;
  PlannerConfig cfg;
  cfg.reference_perimeter = ellipse_band_perimeter(start);
  const auto path = plan_segment(anchor_from(start, 32), anchor_from(goal, 32), {}, cfg);
  EXPECT_GE(path.size(), 2u);
  check_path(path, cfg.reference_perimeter, cfg, {});
  EXPECT_LT(soi_distance(path.front().soi.points, sample_ellipse3d(start, 32)), cfg.connect_epsilon);
  EXPECT_LT(soi_distance(path.back().soi.points, sample_ellipse3d(goal, 32)), cfg.connect_epsilon);
}

TEST(PlanSegment, AvoidsBlockingObstacle) {
  Ellipse3D start;
  start.center = Vec3(0, 0, 0.5);
  start.rho_u = 0.12;
  start.rho_v = 0.09;
  Ellipse3D goal = start;
  goal.center.x() += 0.5;
  const std::vector<Obstacle> obstacles{{Vec3(0.2, -0.05, 0.45), Vec3(0.3, 0.05, 0.55), 0.01}};

  // The straight sweep must collide for the test to mean anything.
  bool straight_collides = false;
  for (int k = 0; k <= 50; ++k) {
    Ellipse3D mid = start;
    mid.center.x() += 0.5 * k / 50.0;
    straight_collides |= soi_hits_box_sampled(sample_ellipse3d(mid, 32), obstacles[0]);
  }
  ASSERT_TRUE(straight_collides);

  PlannerConfig cfg;
  cfg.reference_perimeter = ellipse_band_perimeter(start);
  const auto path = plan_segment(anchor_from(start, 32), anchor_from(goal, 32), obstacles, cfg);
  check_path(path, cfg.reference_perimeter, cfg, obstacles);
}

TEST(PlanSegment, DeterministicUnderSeed) {
  Ellipse3D start;
  start.center = Vec3(0, 0, 0.5);
  start.rho_u = 0.12;
  start.rho_v = 0.09;
  Ellipse3D goal = start;
  goal.center += Vec3(0.2, 0.1, -0.1);
  PlannerConfig cfg;
  cfg.reference_perimeter = ellipse_band_perimeter(start);
  const auto a = plan_segment(anchor_from(start, 32), anchor_from(goal, 32), {}, cfg);
  const auto b = plan_segment(anchor_from(start, 32), anchor_from(goal, 32), {}, cfg);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(max_pointwise_distance(a[i].soi.points, b[i].soi.points), 0.0);
}

TEST(PlanFull, StackedCoaxialEllipses) {
  Ellipse3D g0;
  g0.center = Vec3(0, 0, 0.7);
  g0.rho_u = 0.12;
  g0.rho_v = 0.09;
  Ellipse3D dag = g0, star = g0;
  dag.center.z() = 0.5;
  star.center.z() = 0.3;
  PlannerConfig cfg;
  cfg.reference_perimeter = ellipse_band_perimeter(g0);
  const BaggingPath path = plan_full(anchor_from(g0, 32), anchor_from(dag, 32), anchor_from(star, 32), {}, cfg);
  EXPECT_GE(path.pre_bagging.size(), 2u);
  EXPECT_GE(path.bagging.size(), 2u);
  EXPECT_EQ(max_pointwise_distance(path.pre_bagging.back().soi.points, path.bagging.front().soi.points), 0.0);
  const auto flat = path.flattened();
  EXPECT_EQ(flat.size(), path.pre_bagging.size() + path.bagging.size() - 1);
  for (std::size_t i = 1; i < flat.size(); ++i) {
    EXPECT_LE(flat[i].ellipse.center.z(), flat[i - 1].ellipse.center.z() + 1e-3);
  }
}

TEST(PlanFull, CoincidentJunctionAndGoal) {
  Ellipse3D g0;
  g0.center = Vec3(0, 0, 0.6);
  g0.rho_u = 0.12;
  g0.rho_v = 0.09;
  Ellipse3D dag = g0;
  dag.center.z() = 0.45;
  PlannerConfig cfg;
  cfg.reference_perimeter = ellipse_band_perimeter(g0);
  const BaggingPath path = plan_full(anchor_from(g0, 32), anchor_from(dag, 32), anchor_from(dag, 32), {}, cfg);
  EXPECT_EQ(path.bagging.size(), 1u);
}

TEST(PlanFull, EnclosedGoalFailsInBaggingSegment) {
  Ellipse3D g0;
  g0.center = Vec3(0, 0, 0.6);
  g0.rho_u = 0.12;
  g0.rho_v = 0.09;
  Ellipse3D dag = g0, star = g0;
  dag.center.z() = 0.45;
  star.center.z() = 0.2;
  const std::vector<Obstacle> obstacles{{Vec3(-0.3, -0.3, 0.1), Vec3(0.3, 0.3, 0.3), 0.0}};
  PlannerConfig cfg;
  cfg.reference_perimeter = ellipse_band_perimeter(g0);
  cfg.max_iterations = 20;
  try {
    plan_full(anchor_from(g0, 32), anchor_from(dag, 32), anchor_from(star, 32), obstacles, cfg);
    FAIL();
  } catch (const PlanningError& e) {
    EXPECT_EQ(e.segment(), "bagging");
  }
}
