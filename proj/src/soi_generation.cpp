#include "bagsoi/soi_generation.hpp"

#include "bagsoi/error.hpp"
#include "bagsoi/nelder_mead.hpp"
#include "bagsoi/soi_extraction.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>

namespace bagsoi {

namespace {

constexpr double kPi = std::numbers::pi;

Points2 sample_ellipse2d(const Ellipse2D& e, std::size_t n) {
  Points2 out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(e.point(2.0 * kPi * static_cast<double>(i) / static_cast<double>(n)));
  }
  return out;
}

double cross2(const Vec2& o, const Vec2& a, const Vec2& b) {
  return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
}

double hull_perimeter(std::span<const Vec2> points) {
  Points2 sorted(points.begin(), points.end());
  std::sort(sorted.begin(), sorted.end(), [](const Vec2& a, const Vec2& b) {
    return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
  });
  Points2 hull(2 * sorted.size());
  std::size_t k = 0;
  for (const Vec2& p : sorted) {
    while (k >= 2 && cross2(hull[k - 2], hull[k - 1], p) <= 0.0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = sorted.size() - 1, lower = k + 1; i-- > 0;) {
    while (k >= lower && cross2(hull[k - 2], hull[k - 1], sorted[i]) <= 0.0) --k;
    hull[k++] = sorted[i];
  }
  hull.resize(k > 1 ? k - 1 : k);
  double length = 0.0;
  for (std::size_t i = 0; i < hull.size(); ++i) length += (hull[(i + 1) % hull.size()] - hull[i]).norm();
  return length;
}

struct BaseGeometry {
  Vec2 axis = Vec2::UnitX();
  bool isotropic = false;
  double extent_major = 0.0;
  double extent_minor = 0.0;
};

BaseGeometry analyse_base(std::span<const Vec2> base) {
  PrincipalAxes2D pca;
  try {
    pca = principal_axes_2d(base);
  } catch (const Error&) {
    throw Error(ErrorCode::DegenerateBase, "base vertices have no spread");
  }
  BaseGeometry geo;
  geo.axis = pca.axis;
  geo.isotropic = pca.minor / pca.major > kIsotropicBaseRatio;
  const Vec2 perp(-geo.axis.y(), geo.axis.x());
  for (const Vec2& v : base) {
    geo.extent_major = std::max(geo.extent_major, std::abs(v.dot(geo.axis)));
    geo.extent_minor = std::max(geo.extent_minor, std::abs(v.dot(perp)));
  }
  return geo;
}

double parallelism(const Ellipse2D& e, const Vec2& base_axis) {
  const Points2 samples = sample_ellipse2d(e, kEllipseSamples);
  return std::abs(pca_principal_axis(samples).dot(base_axis));
}

Ellipse2D decode(const Eigen::VectorXd& x) {
  Ellipse2D e;
  e.tau_x = x(0);
  e.tau_y = x(1);
  e.rho_a = std::exp(x(2));
  e.rho_b = std::exp(x(3));
  e.alpha = x(4);
  return e.normalized();
}

}  // namespace

void BaggingConstraintParams::validate(bool require_perimeter) const {
  if (!(lambda1 > 0.0 && lambda1 < 1.0)) throw Error(ErrorCode::ValidationError, "lambda1 must be in (0,1)");
  if (!(lambda2 >= 0.0)) throw Error(ErrorCode::ValidationError, "lambda2 must be non-negative");
  if (!(lambda3 > 0.0 && lambda3 <= 1.0)) throw Error(ErrorCode::ValidationError, "lambda3 must be in (0,1]");
  if (require_perimeter && !(rim_perimeter > 0.0)) {
    throw Error(ErrorCode::ValidationError, "rim perimeter must be positive");
  }
}

bool ConstraintReport::satisfies(const BaggingConstraintParams& params) const {
  return c1_max < params.lambda1 && c2 <= params.lambda2 &&
         (c3_waived || (c3 >= params.lambda3 && c3 <= 1.0 + 1e-12));
}

double implicit_ellipse_value(const Ellipse2D& e, double x, double y) {
  const double dx = x - e.tau_x, dy = y - e.tau_y;
  const double ca = std::cos(e.alpha), sa = std::sin(e.alpha);
  const double along = dx * ca + dy * sa;
  const double across = -dx * sa + dy * ca;
  return along * along / (e.rho_a * e.rho_a) + across * across / (e.rho_b * e.rho_b);
}

ConstraintReport evaluate_constraints(const Ellipse2D& ellipse, std::span<const Vec2> base,
                                      const BaggingConstraintParams& params) {
  const BaseGeometry geo = analyse_base(base);
  ConstraintReport report;
  report.c1_max = 0.0;
  for (const Vec2& v : base) {
    report.c1_max = std::max(report.c1_max, implicit_ellipse_value(ellipse, v.x(), v.y()));
  }
  report.c2 = ellipse.center().norm();
  report.c3 = parallelism(ellipse, geo.axis);
  report.c3_waived = geo.isotropic;
  report.perimeter = ellipse_perimeter(ellipse.rho_a, ellipse.rho_b);
  report.perimeter_error = report.perimeter - params.rim_perimeter;
  return report;
}

Ellipse2D compute_bagging_ellipse(std::span<const Vec2> base, const BaggingConstraintParams& params) {
  params.validate();
  if (base.size() < 3) throw Error(ErrorCode::DegenerateBase, "base needs at least 3 vertices");
  const BaseGeometry geo = analyse_base(base);
  const double target = params.rim_perimeter;

  // Any enclosing ellipse contains the hull scaled by 1/sqrt(lambda1) about
  // its center, so its perimeter is at least that of the scaled hull.
  const double lower_bound = hull_perimeter(base) / std::sqrt(params.lambda1);
  if (lower_bound > target * 1.01) {
    throw Error(ErrorCode::Infeasible, "rim perimeter " + std::to_string(target) +
                                           " m cannot enclose the base (needs at least " +
                                           std::to_string(lower_bound) + " m)");
  }

  // Slightly tightened internal bounds keep the optimum strictly feasible.
  const double l1 = params.lambda1 - 2e-3;
  const double l2 = 0.9 * params.lambda2;
  const double l3 = params.lambda3 + 0.1 * (1.0 - params.lambda3);
  const double scale2 = target * target;

  auto objective = [&](const Eigen::VectorXd& x) {
    const Ellipse2D e = decode(x);
    const double perimeter = ellipse_perimeter(e.rho_a, e.rho_b);
    double c1 = 0.0;
    for (const Vec2& v : base) c1 = std::max(c1, implicit_ellipse_value(e, v.x(), v.y()));
    double penalty = scale2 * std::max(0.0, c1 - l1);
    penalty += target * std::max(0.0, e.center().norm() - l2);
    if (!geo.isotropic) penalty += scale2 * std::max(0.0, l3 - parallelism(e, geo.axis));
    return (perimeter - target) * (perimeter - target) + penalty;
  };

  const double axis_angle = std::atan2(geo.axis.y(), geo.axis.x());
  const double pca_ratio =
      std::clamp(geo.extent_minor / std::max(geo.extent_major, 1e-12), 0.2, 1.0);
  const std::array<double, 2> ratios{pca_ratio, std::sqrt(pca_ratio)};
  const std::array<double, 2> turns{0.0, kPi / 2.0};
  const std::array<double, 2> jitters{-0.05, 0.05};

  std::optional<Ellipse2D> best;
  double best_gap = std::numeric_limits<double>::infinity();
  SimplexOptions options;
  options.max_evaluations = 1500;
  options.x_tolerance = 1e-10;
  options.f_tolerance = 1e-16;

  for (double turn : turns) {
    for (double ratio : ratios) {
      for (double jitter : jitters) {
        const double rho_a = target / ellipse_perimeter(1.0, ratio);
        Eigen::VectorXd start(5);
        start << 0.0, 0.0, std::log(rho_a), std::log(ratio * rho_a), axis_angle + turn + jitter;
        Eigen::VectorXd steps(5);
        steps << 0.25 * std::max(params.lambda2, 1e-3), 0.25 * std::max(params.lambda2, 1e-3), 0.05, 0.05, 0.05;
        const SimplexResult result = nelder_mead(objective, start, steps, options);

        Ellipse2D candidate = decode(result.x);
        const double center_norm = candidate.center().norm();
        if (center_norm > params.lambda2) {
          const double shrink = center_norm > 0.0 ? l2 / center_norm : 0.0;
          candidate.tau_x *= shrink;
          candidate.tau_y *= shrink;
        }
        // Rescale to the exact target perimeter when that keeps feasibility.
        Ellipse2D exact = candidate;
        const double s = target / ellipse_perimeter(candidate.rho_a, candidate.rho_b);
        exact.rho_a *= s;
        exact.rho_b *= s;
        for (const Ellipse2D& e : {exact, candidate}) {
          const ConstraintReport report = evaluate_constraints(e, base, params);
          if (!report.satisfies(params)) continue;
          const double gap = std::abs(report.perimeter_error);
          if (gap < best_gap) {
            best_gap = gap;
            best = e;
          }
          break;
        }
        if (best_gap < 1e-9) return *best;
      }
    }
  }
  if (!best) throw Error(ErrorCode::Infeasible, "no ellipse satisfies the bagging constraints");
  if (best_gap > kPerimeterMatchTolerance * target) {
    throw Error(ErrorCode::Infeasible, "closest admissible ellipse misses the rim perimeter by " +
                                           std::to_string(best_gap) + " m");
  }
  return *best;
}

Ellipse3D to_world(const Ellipse2D& ellipse, const BottomFrame& frame) {
  Ellipse3D out;
  out.center = frame.from_frame(Vec3(ellipse.tau_x, ellipse.tau_y, 0.0));
  out.u = frame.rotation * Vec3(std::cos(ellipse.alpha), std::sin(ellipse.alpha), 0.0);
  out.v = frame.rotation * Vec3(-std::sin(ellipse.alpha), std::cos(ellipse.alpha), 0.0);
  out.rho_u = ellipse.rho_a;
  out.rho_v = ellipse.rho_b;
  return out;
}

BaggingSOI make_bagging_soi(const VertexSet& vertices, const OrderedSOI& rim0,
                            BaggingConstraintParams params, std::size_t n_x) {
  if (!(params.rim_perimeter > 0.0)) params.rim_perimeter = polyline_perimeter(rim0.points);
  params.validate();

  BaggingSOI out;
  out.frame = build_bottom_frame(vertices);
  Points2 base;
  for (const Vec3& v : to_frame(vertices.vertices, out.frame)) base.emplace_back(v.x(), v.y());
  out.ellipse = compute_bagging_ellipse(base, params);
  out.constraint_report = evaluate_constraints(out.ellipse, base, params);

  const Points3 samples = sample_ellipse3d(out.world_ellipse(), kEllipseSamples);
  if (n_x > samples.size()) throw Error(ErrorCode::KTooLarge, "n_x exceeds the ellipse sample count");
  out.soi = order_rim(farthest_point_sampling(samples, n_x, 0));
  out.soi.timestamp = rim0.timestamp;
  return out;
}

OrderedSOI generate_goal_soi(const BaggingSOI& bagging, double lambda_d) {
  if (!(lambda_d >= 0.0)) throw Error(ErrorCode::ValidationError, "lambda_d must be non-negative");
  const Vec3 a_z = bagging.frame.axis_z();
  const double alignment = a_z.z();  // a_z . (0, 0, 1)
  if (std::abs(alignment) < 1e-6) {
    throw Error(ErrorCode::HorizontalNormal, "bottom normal is horizontal; insertion direction undefined");
  }
  const Vec3 offset = (alignment > 0.0 ? 1.0 : -1.0) * lambda_d * a_z;
  OrderedSOI goal = bagging.soi;
  for (Vec3& p : goal.points) p += offset;
  return goal;
}

}  // namespace bagsoi
