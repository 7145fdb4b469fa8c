#include "bagsoi/geometry.hpp"

#include "bagsoi/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace bagsoi {

namespace {

constexpr double kPi = std::numbers::pi;

double wrap_half_turn(double angle) {
  double wrapped = std::fmod(angle, kPi);
  if (wrapped < 0.0) wrapped += kPi;
  if (wrapped >= kPi) wrapped = 0.0;
  return wrapped;
}

std::size_t mapped_index(std::size_t i, const CyclicAlignment& a, std::size_t n) {
  return a.reversed ? (a.shift + n - (i % n)) % n : (a.shift + i) % n;
}

}  // namespace

Eigen::Matrix4d BottomFrame::matrix() const {
  Eigen::Matrix4d t = Eigen::Matrix4d::Identity();
  t.topLeftCorner<3, 3>() = rotation;
  t.topRightCorner<3, 1>() = origin;
  return t;
}

Vec2 Ellipse2D::point(double theta) const {
  const double c = std::cos(theta), s = std::sin(theta);
  const double ca = std::cos(alpha), sa = std::sin(alpha);
  return {tau_x + rho_a * c * ca - rho_b * s * sa, tau_y + rho_a * c * sa + rho_b * s * ca};
}

Vec2 Ellipse2D::major_axis() const { return {std::cos(alpha), std::sin(alpha)}; }

Ellipse2D Ellipse2D::normalized() const {
  Ellipse2D e = *this;
  e.rho_a = std::abs(e.rho_a);
  e.rho_b = std::abs(e.rho_b);
  if (e.rho_a < e.rho_b) {
    std::swap(e.rho_a, e.rho_b);
    e.alpha += kPi / 2.0;
  }
  e.alpha = wrap_half_turn(e.alpha);
  return e;
}

Vec3 Ellipse3D::point(double theta) const {
  return center + rho_u * std::cos(theta) * u + rho_v * std::sin(theta) * v;
}

Ellipse3D Ellipse3D::normalized() const {
  Ellipse3D e = *this;
  e.rho_u = std::abs(e.rho_u);
  e.rho_v = std::abs(e.rho_v);
  if (e.rho_u < e.rho_v) {
    const Vec3 old_u = e.u;
    e.u = e.v;
    e.v = -old_u;
    std::swap(e.rho_u, e.rho_v);
  }
  return e;
}

BottomFrame build_bottom_frame(const VertexSet& vertex_set) {
  const Points3& vertices = vertex_set.vertices;
  if (vertices.size() < 3) {
    throw Error(ErrorCode::DegenerateVertices, "bottom frame needs at least 3 vertices");
  }
  const Vec3 mean = centroid(vertices);
  Points3 offsets;
  offsets.reserve(vertices.size());
  double scale = 0.0;
  for (const Vec3& v : vertices) {
    offsets.push_back(v - mean);
    scale = std::max(scale, offsets.back().norm());
  }

  // Pair of centroid offsets spanning the largest triangle gives the normal.
  std::size_t best_i = 0, best_j = 1;
  double best_area = -1.0;
  for (std::size_t i = 0; i < offsets.size(); ++i) {
    for (std::size_t j = i + 1; j < offsets.size(); ++j) {
      const double area = offsets[i].cross(offsets[j]).norm();
      if (area > best_area) {
        best_area = area;
        best_i = i;
        best_j = j;
      }
    }
  }
  if (!(scale > 0.0) || best_area <= 1e-10 * scale * scale) {
    throw Error(ErrorCode::DegenerateVertices, "bottom vertices are collinear");
  }
  const Vec3 a_z = offsets[best_i].cross(offsets[best_j]).normalized();

  double residual = 0.0;
  for (const Vec3& d : offsets) residual = std::max(residual, std::abs(a_z.dot(d)));
  if (residual > kCoplanarTolerance) {
    throw Error(ErrorCode::DegenerateVertices, "bottom vertices are not coplanar (residual " +
                                                   std::to_string(residual) + " m)");
  }

  std::size_t best_k = 0;
  double best_len = -1.0;
  for (std::size_t k = 0; k < offsets.size(); ++k) {
    const double len = (offsets[k] - a_z.dot(offsets[k]) * a_z).norm();
    if (len > best_len) {
      best_len = len;
      best_k = k;
    }
  }
  const Vec3 a_y = (offsets[best_k] - a_z.dot(offsets[best_k]) * a_z).normalized();
  const Vec3 a_x = a_y.cross(a_z).normalized();

  BottomFrame frame;
  frame.rotation.col(0) = a_x;
  frame.rotation.col(1) = a_y;
  frame.rotation.col(2) = a_z;
  frame.origin = mean;
  return frame;
}

Points3 to_frame(std::span<const Vec3> points, const BottomFrame& frame) {
  Points3 out;
  out.reserve(points.size());
  for (const Vec3& p : points) out.push_back(frame.to_frame(p));
  return out;
}

Points3 from_frame(std::span<const Vec3> points, const BottomFrame& frame) {
  Points3 out;
  out.reserve(points.size());
  for (const Vec3& p : points) out.push_back(frame.from_frame(p));
  return out;
}

double ellipse_perimeter(double rho_a, double rho_b) {
  if (!(rho_a > 0.0) || !(rho_b > 0.0)) {
    throw Error(ErrorCode::NonPositiveAxis, "ellipse axes must be positive");
  }
  const double sum = rho_a + rho_b;
  const double h = ((rho_a - rho_b) / sum) * ((rho_a - rho_b) / sum);
  return kPi * sum * (1.0 + 3.0 * h / (10.0 + std::sqrt(4.0 - 3.0 * h)));
}

double polyline_perimeter(std::span<const Vec3> points) {
  if (points.size() < 3) {
    throw Error(ErrorCode::TooFewPoints, "closed polyline needs at least 3 points");
  }
  double length = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    length += (points[(i + 1) % points.size()] - points[i]).norm();
  }
  return length;
}

PrincipalAxes2D principal_axes_2d(std::span<const Vec2> points) {
  if (points.size() < 2) {
    throw Error(ErrorCode::DegenerateSpread, "PCA needs at least 2 points");
  }
  Vec2 mean = Vec2::Zero();
  for (const Vec2& p : points) mean += p;
  mean /= static_cast<double>(points.size());
  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
  for (const Vec2& p : points) cov += (p - mean) * (p - mean).transpose();
  cov /= static_cast<double>(points.size());

  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> solver(cov);
  const double major = solver.eigenvalues()(1);
  if (!(major > 1e-24)) {
    throw Error(ErrorCode::DegenerateSpread, "point spread is numerically zero");
  }
  Vec2 axis = solver.eigenvectors().col(1).normalized();
  for (int i = 0; i < 2; ++i) {
    if (std::abs(axis(i)) > 1e-12) {
      if (axis(i) < 0.0) axis = -axis;
      break;
    }
  }
  return {axis, major, std::max(0.0, solver.eigenvalues()(0))};
}

Vec2 pca_principal_axis(std::span<const Vec2> points) { return principal_axes_2d(points).axis; }

std::vector<std::size_t> farthest_point_indices(std::span<const Vec3> points, std::size_t k,
                                                std::size_t start_index) {
  if (k == 0 || k > points.size()) {
    throw Error(ErrorCode::KTooLarge, "FPS requires 1 <= k <= number of points");
  }
  if (start_index >= points.size()) {
    throw Error(ErrorCode::KTooLarge, "FPS start index out of range");
  }
  std::vector<std::size_t> chosen{start_index};
  chosen.reserve(k);
  std::vector<double> nearest(points.size(), std::numeric_limits<double>::infinity());
  std::size_t last = start_index;
  while (chosen.size() < k) {
    std::size_t next = 0;
    double farthest = -1.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      nearest[i] = std::min(nearest[i], (points[i] - points[last]).squaredNorm());
      if (nearest[i] > farthest) {
        farthest = nearest[i];
        next = i;
      }
    }
    chosen.push_back(next);
    last = next;
  }
  return chosen;
}

Points3 farthest_point_sampling(std::span<const Vec3> points, std::size_t k,
                                std::size_t start_index) {
  Points3 out;
  out.reserve(k);
  for (std::size_t i : farthest_point_indices(points, k, start_index)) out.push_back(points[i]);
  return out;
}

double chamfer_distance(std::span<const Vec3> a, std::span<const Vec3> b) {
  if (a.empty() || b.empty()) {
    throw Error(ErrorCode::EmptySet, "Chamfer distance of an empty set");
  }
  auto directed = [](std::span<const Vec3> from, std::span<const Vec3> to) {
    double total = 0.0;
    for (const Vec3& p : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const Vec3& q : to) best = std::min(best, (p - q).squaredNorm());
      total += best;
    }
    return total / static_cast<double>(from.size());
  };
  return directed(a, b) + directed(b, a);
}

Points3 sample_ellipse3d(const Ellipse3D& ellipse, std::size_t n) {
  if (n < 3) throw Error(ErrorCode::TooFewPoints, "ellipse sampling needs n >= 3");
  Points3 out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(ellipse.point(2.0 * kPi * static_cast<double>(i) / static_cast<double>(n)));
  }
  return out;
}

double nearest_ellipse_angle(const Ellipse3D& ellipse, const Vec3& p) {
  const Vec3 d = p - ellipse.center;
  const double x = d.dot(ellipse.u), y = d.dot(ellipse.v);
  const double a = ellipse.rho_u, b = ellipse.rho_v;
  auto f = [&](double t) { return std::pow(a * std::cos(t) - x, 2) + std::pow(b * std::sin(t) - y, 2); };
  constexpr int kCoarse = 128;
  const double h = 2.0 * kPi / kCoarse;
  double t = 0.0, best = f(0.0);
  for (int k = 1; k < kCoarse; ++k) {
    const double value = f(h * k);
    if (value < best) {
      best = value;
      t = h * k;
    }
  }
  // Newton on the half-derivative, kept inside the coarse bracket.
  const double coarse = t, lo = t - h, hi = t + h;
  for (int it = 0; it < 20; ++it) {
    const double c = std::cos(t), s = std::sin(t);
    const double g = (b * b - a * a) * s * c - b * y * c + a * x * s;
    const double gp = (b * b - a * a) * (c * c - s * s) + b * y * s + a * x * c;
    if (gp <= 0.0) break;
    const double next = std::clamp(t - g / gp, lo, hi);
    if (std::abs(next - t) < 1e-14) break;
    t = next;
  }
  return f(t) <= best ? t : coarse;
}

Vec3 project_to_ellipse(const Ellipse3D& ellipse, const Vec3& p) {
  return ellipse.point(nearest_ellipse_angle(ellipse, p));
}

std::vector<double> equal_arc_angles(double rho_u, double rho_v, std::size_t n) {
  if (n < 1) throw Error(ErrorCode::TooFewPoints, "equal-arc sampling needs n >= 1");
  constexpr std::size_t kTable = 4096;
  const double h = 2.0 * kPi / kTable;
  auto speed = [&](double t) { return std::hypot(rho_u * std::sin(t), rho_v * std::cos(t)); };
  std::vector<double> s(kTable + 1, 0.0);
  for (std::size_t k = 0; k < kTable; ++k) {
    const double t = h * static_cast<double>(k);
    s[k + 1] = s[k] + h / 6.0 * (speed(t) + 4.0 * speed(t + 0.5 * h) + speed(t + h));
  }
  std::vector<double> out(n);
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double target = s[kTable] * static_cast<double>(i) / static_cast<double>(n);
    while (k + 1 < kTable && s[k + 1] <= target) ++k;
    const double span = s[k + 1] - s[k];
    out[i] = h * (static_cast<double>(k) + (span > 0.0 ? (target - s[k]) / span : 0.0));
  }
  return out;
}

Points3 sample_ellipse3d_arclength(const Ellipse3D& ellipse, std::size_t n) {
  if (n < 3) throw Error(ErrorCode::TooFewPoints, "ellipse sampling needs n >= 3");
  Points3 out;
  out.reserve(n);
  for (double t : equal_arc_angles(ellipse.rho_u, ellipse.rho_v, n)) out.push_back(ellipse.point(t));
  return out;
}

Points3 sample_ellipse3d_matched(const Ellipse3D& ellipse, std::span<const Vec3> reference,
                                 std::size_t subdivisions) {
  const std::size_t n = reference.size();
  if (n < 3) throw Error(ErrorCode::TooFewPoints, "ellipse sampling needs n >= 3");
  const std::size_t k_max = std::max<std::size_t>(1, subdivisions);
  const std::vector<double> fine = equal_arc_angles(ellipse.rho_u, ellipse.rho_v, n * k_max);
  Points3 best, candidate(n);
  double best_distance = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < k_max; ++k) {
    for (std::size_t i = 0; i < n; ++i) candidate[i] = ellipse.point(fine[k + k_max * i]);
    Points3 aligned = align_cyclic(candidate, reference, true);
    const double d = max_pointwise_distance(aligned, reference);
    if (d < best_distance) {
      best_distance = d;
      best = std::move(aligned);
    }
  }
  return best;
}

Vec3 centroid(std::span<const Vec3> points) {
  Vec3 sum = Vec3::Zero();
  for (const Vec3& p : points) sum += p;
  return points.empty() ? sum : Vec3(sum / static_cast<double>(points.size()));
}

CyclicAlignment best_cyclic_alignment(std::span<const Vec3> points,
                                      std::span<const Vec3> reference, bool allow_reversal,
                                      AlignmentCost cost) {
  const std::size_t n = points.size();
  if (n != reference.size() || n == 0) {
    throw Error(ErrorCode::TooFewPoints, "cyclic alignment needs two loops of equal length");
  }
  CyclicAlignment best;
  double best_cost = std::numeric_limits<double>::infinity();
  for (int dir = 0; dir < (allow_reversal ? 2 : 1); ++dir) {
    for (std::size_t shift = 0; shift < n; ++shift) {
      const CyclicAlignment candidate{shift, dir == 1};
      double total = 0.0;
      for (std::size_t i = 0; i < n && total < best_cost; ++i) {
        const double d2 = (points[mapped_index(i, candidate, n)] - reference[i]).squaredNorm();
        total = cost == AlignmentCost::SumSquared ? total + d2 : std::max(total, d2);
      }
      if (total < best_cost) {
        best_cost = total;
        best = candidate;
      }
    }
  }
  return best;
}

Points3 apply_alignment(std::span<const Vec3> points, const CyclicAlignment& alignment) {
  Points3 out;
  out.reserve(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    out.push_back(points[mapped_index(i, alignment, points.size())]);
  }
  return out;
}

Points3 align_cyclic(std::span<const Vec3> points, std::span<const Vec3> reference,
                     bool allow_reversal) {
  return apply_alignment(points, best_cyclic_alignment(points, reference, allow_reversal));
}

double max_pointwise_distance(std::span<const Vec3> a, std::span<const Vec3> b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) {
    worst = std::max(worst, (a[i] - b[i]).norm());
  }
  return worst;
}

double mean_pointwise_distance(std::span<const Vec3> a, std::span<const Vec3> b) {
  const std::size_t n = std::min(a.size(), b.size());
  if (n == 0) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += (a[i] - b[i]).norm();
  return total / static_cast<double>(n);
}

double aligned_max_distance(std::span<const Vec3> a, std::span<const Vec3> b,
                            bool allow_reversal) {
  const CyclicAlignment best = best_cyclic_alignment(a, b, allow_reversal, AlignmentCost::MaxDistance);
  return max_pointwise_distance(apply_alignment(a, best), b);
}

}  // namespace bagsoi
