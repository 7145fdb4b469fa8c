#include "bagsoi/bag_sim.hpp"

#include "bagsoi/error.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace bagsoi {

namespace {

constexpr double kPi = std::numbers::pi;

bool orthonormal(const Eigen::Matrix3d& r) {
  return (r.transpose() * r - Eigen::Matrix3d::Identity()).norm() < 1e-6 && r.determinant() > 0.0;
}

Eigen::Matrix3d exp_so3(const Vec3& omega) {
  const double angle = omega.norm();
  if (angle < 1e-15) return Eigen::Matrix3d::Identity();
  return Eigen::AngleAxisd(angle, omega / angle).toRotationMatrix();
}

Vec3 log_so3(const Eigen::Matrix3d& r) {
  const Eigen::AngleAxisd aa(r);
  return aa.angle() * aa.axis();
}

// Minor radius giving an ellipse of perimeter `perimeter` with major radius `a`.
double radius_for_perimeter(double a, double perimeter) {
  double lo = 0.0, hi = perimeter / 2.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (ellipse_perimeter(a, mid) < perimeter ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

void GripperState::validate() const {
  if (!orthonormal(left.rotation) || !orthonormal(right.rotation)) {
    throw Error(ErrorCode::ValidationError, "gripper orientations must be rotations");
  }
  if (!left.position.allFinite() || !right.position.allFinite()) {
    throw Error(ErrorCode::ValidationError, "gripper positions must be finite");
  }
}

GripperState symmetric_grippers(const Vec3& center, double half_span, double yaw) {
  const Vec3 dir(std::cos(yaw), std::sin(yaw), 0.0);
  GripperState g;
  g.left.position = center + half_span * dir;
  g.right.position = center - half_span * dir;
  return g;
}

GripperState integrate(const GripperState& state, const DualArmCommand& u) {
  GripperState out = state;
  out.left.position += u.segment<3>(0);
  out.left.rotation = exp_so3(u.segment<3>(3)) * state.left.rotation;
  out.right.position += u.segment<3>(6);
  out.right.rotation = exp_so3(u.segment<3>(9)) * state.right.rotation;
  return out;
}

void BagModelConfig::validate() const {
  if (!(rest_perimeter > 0.0)) throw Error(ErrorCode::ValidationError, "rest_perimeter must be positive");
  if (!(rest_half_span > 0.0) || 4.0 * rest_half_span >= rest_perimeter) {
    throw Error(ErrorCode::ValidationError, "rest_half_span must be positive and below rest_perimeter / 4");
  }
  if (n_x < 3) throw Error(ErrorCode::ValidationError, "n_x must be at least 3");
  const double gap = std::remainder(anchor_right - anchor_left, 2.0 * kPi);
  if (std::abs(std::abs(gap) - kPi) > 1e-9) {
    throw Error(ErrorCode::ValidationError, "handle anchors must be antipodal on the rim");
  }
  if (!(stiffness > 0.0 && stiffness <= 1.0)) throw Error(ErrorCode::ValidationError, "stiffness must be in (0,1]");
  if (!(nonlinearity_gain >= 0.0)) throw Error(ErrorCode::ValidationError, "nonlinearity_gain must be non-negative");
  if (cloud_density < 1) throw Error(ErrorCode::ValidationError, "cloud_density must be at least 1");
  if (!(cloud_noise_sigma >= 0.0)) throw Error(ErrorCode::ValidationError, "cloud_noise_sigma must be non-negative");
  if (!(outlier_fraction >= 0.0 && outlier_fraction < 1.0)) {
    throw Error(ErrorCode::ValidationError, "outlier_fraction must be in [0,1)");
  }
}

OrderedSOI bag_forward(const GripperState& gripper, const BagModelConfig& config) {
  const Vec3& a_left = gripper.left.position;
  const Vec3& a_right = gripper.right.position;
  const Vec3 chord = a_left - a_right;
  const double separation = chord.norm();
  if (separation < 1e-6) throw Error(ErrorCode::AnchorsCoincident, "handle positions coincide");

  // Unloaded shape: ellipse through both handles, opening perpendicular to
  // the chord in the horizontal direction, perimeter R0.
  const Vec3 center = 0.5 * (a_left + a_right);
  const Vec3 u = chord / separation;
  Vec3 v = Vec3::UnitZ().cross(u);
  if (v.norm() < 1e-9) v = Vec3::UnitX().cross(u);
  v.normalize();
  const Vec3 normal = u.cross(v);
  const double rho_u = 0.5 * separation;
  const double rho_v = 4.0 * rho_u < config.rest_perimeter ? radius_for_perimeter(rho_u, config.rest_perimeter)
                                                           : 0.01 * rho_u;  // overstretched
  const double stretch = separation - 2.0 * config.rest_half_span;
  const double bulge = config.nonlinearity_gain * stretch * stretch;

  const Vec3 omega_left = config.stiffness * log_so3(gripper.left.rotation);
  const Vec3 omega_right = config.stiffness * log_so3(gripper.right.rotation);

  // Material points sit at equal arc length (the rim fabric does not slide).
  const std::vector<double> theta = equal_arc_angles(rho_u, rho_v, config.n_x);
  OrderedSOI rim;
  rim.points.reserve(config.n_x);
  for (std::size_t i = 0; i < config.n_x; ++i) {
    const double phase = theta[i] - config.anchor_left;
    Vec3 p = center + rho_u * std::cos(phase) * u + rho_v * std::sin(phase) * v;
    const double s = std::sin(phase);
    p += bulge * s * s * normal;
    // Handle twist, fading from each anchor to the opposite one.
    const double w_left = std::pow(std::cos(0.5 * phase), 2);
    const double w_right = 1.0 - w_left;
    const Vec3 moved_left = a_left + exp_so3(w_left * omega_left) * (p - a_left);
    const Vec3 moved_right = a_right + exp_so3(w_right * omega_right) * (p - a_right);
    rim.points.push_back(p + (moved_left - p) + (moved_right - p));
  }

  // Quasi-inextensible rim: keep the perimeter within 5% of R0.
  const double perimeter = polyline_perimeter(rim.points);
  const double clamped = std::clamp(perimeter, 0.95 * config.rest_perimeter, 1.05 * config.rest_perimeter);
  if (clamped != perimeter) {
    const double scale = clamped / perimeter;
    for (Vec3& p : rim.points) p = center + scale * (p - center);
  }
  return rim;
}

std::size_t outlier_count(std::size_t inliers, double outlier_fraction) {
  if (outlier_fraction <= 0.0) return 0;
  return static_cast<std::size_t>(
      std::ceil(outlier_fraction * static_cast<double>(inliers) / (1.0 - outlier_fraction) - 1e-9));
}

PointCloud emit_cloud(const OrderedSOI& rim, const BagModelConfig& config, std::mt19937_64& rng) {
  PointCloud cloud;
  const std::size_t inliers = rim.size() * config.cloud_density;
  const std::size_t outliers = outlier_count(inliers, config.outlier_fraction);
  cloud.points.reserve(inliers + outliers);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (const Vec3& p : rim.points) {
    for (std::size_t k = 0; k < config.cloud_density; ++k) {
      cloud.points.push_back(p + config.cloud_noise_sigma * Vec3(noise(rng), noise(rng), noise(rng)));
    }
  }
  if (outliers > 0) {
    Vec3 lo = rim.points.front(), hi = rim.points.front();
    for (const Vec3& p : rim.points) {
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
    const double pad = 0.25 * (hi - lo).maxCoeff();
    lo.array() -= pad;
    hi.array() += pad;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (std::size_t k = 0; k < outliers; ++k) {
      cloud.points.push_back(lo + Vec3(unit(rng), unit(rng), unit(rng)).cwiseProduct(hi - lo));
    }
  }
  return cloud;
}

BagSim::BagSim(BagModelConfig config, GripperState initial, std::optional<GmmConfig> perception)
    : config_(config), initial_(std::move(initial)), perception_(std::move(perception)) {
  config_.validate();
  initial_.validate();
  if (perception_) {
    perception_->n_x = config_.n_x;
    perception_->validate();
  }
  reset();
}

OrderedSOI BagSim::reset() {
  rng_.seed(config_.cloud_seed);
  clock_ = 0;
  gripper_ = initial_;
  observed_ = OrderedSOI{};
  return observe();
}

OrderedSOI BagSim::apply(const DualArmCommand& u) {
  if (!u.allFinite()) throw Error(ErrorCode::ValidationError, "command must be finite");
  gripper_ = integrate(gripper_, u);
  ++clock_;
  return observe();
}

OrderedSOI BagSim::observe() {
  truth_ = bag_forward(gripper_, config_);
  truth_.timestamp = clock_;
  if (!perception_) {
    observed_ = truth_;
    return observed_;
  }
  const PointCloud cloud = emit_cloud(truth_, config_, rng_);
  std::optional<OrderedSOI> previous;
  if (!observed_.points.empty()) previous = observed_;
  observed_ = extract_soi(cloud, *perception_, previous);
  observed_.timestamp = clock_;
  return observed_;
}

}  // namespace bagsoi
