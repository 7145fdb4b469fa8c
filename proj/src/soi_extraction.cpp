#include "bagsoi/soi_extraction.hpp"

#include "bagsoi/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

namespace bagsoi {

namespace {

constexpr double kLogTwoPi = 1.8378770664093453;  // log(2 pi)
constexpr double kMinGaussianWeight = 1e-12;
constexpr int kMaxRepairs = 4;

struct Support {
  double density = 0.0;
  double max_extent = 0.0;
};

// Axis-aligned bounding box inflated by 5%; flat axes are widened so the
// uniform density stays finite.
Support uniform_support(const Points3& points, double covariance_floor) {
  Vec3 lo = points.front(), hi = points.front();
  for (const Vec3& p : points) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const Vec3 extent = hi - lo;
  const double max_extent = extent.maxCoeff();
  const double min_side = std::max(0.05 * max_extent, 10.0 * std::sqrt(covariance_floor));
  double volume = 1.0;
  for (int i = 0; i < 3; ++i) volume *= 1.05 * std::max(extent(i), min_side);
  return {1.0 / volume, max_extent};
}

// Drops sparse points (outliers) before farthest-point seeding: keeps points
// whose k-th neighbour distance is at most twice the median.
Points3 dense_core(const Points3& points, std::size_t min_keep) {
  const std::size_t n = points.size();
  const std::size_t k = std::min<std::size_t>(8, n - 1);
  if (k == 0) return points;
  std::vector<double> kth(n);
  std::vector<double> row(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) row[j] = (points[i] - points[j]).squaredNorm();
    // row[i] == 0 occupies rank 0, so rank k is the k-th neighbour.
    std::nth_element(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(k), row.end());
    kth[i] = row[k];
  }
  std::vector<double> sorted = kth;
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(n / 2), sorted.end());
  const double threshold = 4.0 * sorted[n / 2];  // squared distances
  Points3 core;
  for (std::size_t i = 0; i < n; ++i) {
    if (kth[i] <= threshold) core.push_back(points[i]);
  }
  return core.size() >= min_keep ? core : points;
}

double median_neighbour_spacing(const Points3& means) {
  if (means.size() < 2) return 0.0;
  std::vector<double> nearest;
  nearest.reserve(means.size());
  for (std::size_t i = 0; i < means.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < means.size(); ++j) {
      if (i != j) best = std::min(best, (means[i] - means[j]).norm());
    }
    nearest.push_back(best);
  }
  std::nth_element(nearest.begin(), nearest.begin() + static_cast<std::ptrdiff_t>(nearest.size() / 2),
                   nearest.end());
  return nearest[nearest.size() / 2];
}

// Farthest-point seeds over the core, each moved to the densest core point
// within half the seed spacing (and clear of seeds already placed). Starting
// on density peaks keeps EM from settling between clustered rim samples.
Points3 density_seeds(const Points3& core, std::size_t n_x) {
  const std::vector<std::size_t> picked = farthest_point_indices(core, n_x, 0);
  Points3 seeds;
  for (std::size_t i : picked) seeds.push_back(core[i]);
  const double radius = 0.5 * median_neighbour_spacing(seeds);
  if (!(radius > 0.0)) return seeds;
  const double r2 = radius * radius;

  // Gaussian kernel density, bandwidth half the search radius.
  const double inv_two_h2 = 1.0 / (2.0 * 0.25 * r2);
  std::vector<double> density(core.size(), 0.0);
  for (std::size_t i = 0; i < core.size(); ++i) {
    for (std::size_t j = i; j < core.size(); ++j) {
      const double d2 = (core[i] - core[j]).squaredNorm();
      if (d2 > 9.0 * r2) continue;
      const double w = std::exp(-d2 * inv_two_h2);
      density[i] += w;
      if (j != i) density[j] += w;
    }
  }

  Points3 out;
  out.reserve(n_x);
  for (std::size_t s = 0; s < seeds.size(); ++s) {
    std::size_t best = picked[s];
    for (std::size_t i = 0; i < core.size(); ++i) {
      if ((core[i] - seeds[s]).squaredNorm() > r2 || density[i] <= density[best]) continue;
      const bool clear =
          std::all_of(out.begin(), out.end(), [&](const Vec3& q) { return (core[i] - q).squaredNorm() > r2; });
      if (clear) best = i;
    }
    out.push_back(core[best]);
  }
  return out;
}

Eigen::Matrix3d floor_eigenvalues(const Eigen::Matrix3d& cov, double floor) {
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> solver(0.5 * (cov + cov.transpose()));
  const Vec3 clamped = solver.eigenvalues().cwiseMax(floor);
  return solver.eigenvectors() * clamped.asDiagonal() * solver.eigenvectors().transpose();
}

// Terms this far below a point's largest log-density contribute less than
// exp(-40) ~ 4e-18 of its total and are left at zero responsibility.
constexpr double kNegligibleLogRatio = 40.0;

struct ComponentCache {
  Eigen::Matrix3d l_inv;  ///< inverse Cholesky factor: |l_inv (p - mu)|^2 is the Mahalanobis term
  double log_norm = 0.0;  ///< log weight - 0.5 (3 log 2pi + log det)
};

// E-step: fills responsibilities (column n_x is the outlier component) and
// returns the log-likelihood of the cloud.
double expectation(const Points3& points, const GmmModel& model, Eigen::MatrixXd& resp) {
  const std::size_t n_x = model.means.size();
  std::vector<ComponentCache> cache(n_x);
  for (std::size_t j = 0; j < n_x; ++j) {
    const Eigen::Matrix3d l = Eigen::LLT<Eigen::Matrix3d>(model.covariances[j]).matrixL();
    cache[j].l_inv = l.triangularView<Eigen::Lower>().solve(Eigen::Matrix3d::Identity());
    const double log_det = 2.0 * l.diagonal().array().log().sum();
    cache[j].log_norm = std::log(std::max(model.weights[j], kMinGaussianWeight)) -
                        0.5 * (3.0 * kLogTwoPi + log_det);
  }
  const bool has_outliers = model.outlier_weight > 0.0;
  const double log_outlier =
      has_outliers ? std::log(model.outlier_weight) + std::log(model.uniform_density) : 0.0;

  double loglik = 0.0;
  std::vector<double> terms(n_x + 1);
  for (std::size_t i = 0; i < points.size(); ++i) {
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n_x; ++j) {
      const Vec3 z = cache[j].l_inv * (points[i] - model.means[j]);
      terms[j] = cache[j].log_norm - 0.5 * z.squaredNorm();
      peak = std::max(peak, terms[j]);
    }
    terms[n_x] = has_outliers ? log_outlier : -std::numeric_limits<double>::infinity();
    peak = std::max(peak, terms[n_x]);
    double total = 0.0;
    for (std::size_t j = 0; j <= n_x; ++j) {
      const double rel = terms[j] - peak;
      terms[j] = rel < -kNegligibleLogRatio ? 0.0 : std::exp(rel);
      total += terms[j];
    }
    loglik += peak + std::log(total);
    for (std::size_t j = 0; j <= n_x; ++j) {
      resp(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = terms[j] / total;
    }
  }
  return loglik;
}

void maximization(const Points3& points, const Eigen::MatrixXd& resp, const GmmConfig& config,
                  GmmModel& model) {
  const std::size_t n_x = model.means.size();
  const double n = static_cast<double>(points.size());
  const Eigen::VectorXd mass = resp.colwise().sum().transpose();

  if (model.outlier_weight > 0.0) {
    model.outlier_weight = std::max(mass(static_cast<Eigen::Index>(n_x)) / n, config.outlier_weight_floor);
  }
  const double gaussian_mass = mass.head(static_cast<Eigen::Index>(n_x)).sum();
  for (std::size_t j = 0; j < n_x; ++j) {
    const auto col = resp.col(static_cast<Eigen::Index>(j));
    const double nj = mass(static_cast<Eigen::Index>(j));
    if (gaussian_mass > 0.0) model.weights[j] = (1.0 - model.outlier_weight) * nj / gaussian_mass;
    if (!(nj > 1e-12)) continue;  // starved component keeps its shape

    Vec3 mean = Vec3::Zero();
    for (std::size_t i = 0; i < points.size(); ++i) {
      const double r = col(static_cast<Eigen::Index>(i));
      if (r != 0.0) mean += r * points[i];
    }
    mean /= nj;
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (std::size_t i = 0; i < points.size(); ++i) {
      const double r = col(static_cast<Eigen::Index>(i));
      if (r == 0.0) continue;
      const Vec3 d = points[i] - mean;
      cov.noalias() += r * d * d.transpose();
    }
    model.means[j] = mean;
    model.covariances[j] = floor_eigenvalues(cov / nj, config.covariance_floor);
  }
}

// EM iterations from the model's current parameters; appends to loglik_history.
void run_em(const Points3& points, const GmmConfig& config, GmmModel& model) {
  Eigen::MatrixXd resp(static_cast<Eigen::Index>(points.size()),
                       static_cast<Eigen::Index>(config.n_x + 1));
  double loglik = expectation(points, model, resp);
  model.loglik_history.push_back(loglik);
  model.iterations = 0;
  model.converged = false;
  for (int iter = 1; iter <= config.max_iters; ++iter) {
    maximization(points, resp, config, model);
    const double next = expectation(points, model, resp);
    model.loglik_history.push_back(next);
    model.iterations = iter;
    const double change = std::abs(next - loglik);
    loglik = next;
    if (change <= config.loglik_rel_tol * std::max(1.0, std::abs(loglik))) {
      model.converged = true;
      break;
    }
  }
}

}  // namespace

void GmmConfig::validate() const {
  if (n_x < 1) throw Error(ErrorCode::ValidationError, "n_x must be at least 1");
  if (!(outlier_weight >= 0.0 && outlier_weight < 1.0)) {
    throw Error(ErrorCode::ValidationError, "outlier_weight must be in [0,1)");
  }
  if (!(outlier_weight_floor >= 0.0 && outlier_weight_floor < 1.0)) {
    throw Error(ErrorCode::ValidationError, "outlier_weight_floor must be in [0,1)");
  }
  if (max_iters < 1) throw Error(ErrorCode::ValidationError, "max_iters must be at least 1");
  if (!(loglik_rel_tol > 0.0)) throw Error(ErrorCode::ValidationError, "loglik_rel_tol must be positive");
  if (!(covariance_floor > 0.0)) throw Error(ErrorCode::ValidationError, "covariance_floor must be positive");
}

GmmModel fit_gmm(const PointCloud& cloud, const GmmConfig& config,
                 const std::optional<OrderedSOI>& init) {
  config.validate();
  const Points3& points = cloud.points;
  if (points.size() < config.n_x) {
    throw Error(ErrorCode::InsufficientPoints, "cloud has " + std::to_string(points.size()) +
                                                   " points, fewer than n_x = " +
                                                   std::to_string(config.n_x));
  }
  for (const Vec3& p : points) {
    if (!p.allFinite()) throw Error(ErrorCode::InsufficientPoints, "cloud contains non-finite points");
  }

  GmmModel model;
  const Support support = uniform_support(points, config.covariance_floor);
  model.uniform_density = support.density;
  if (init) {
    if (init->size() != config.n_x) {
      throw Error(ErrorCode::InsufficientPoints, "warm start has a different point count than n_x");
    }
    model.means = init->points;
  } else {
    model.means = density_seeds(dense_core(points, config.n_x), config.n_x);
  }

  const double spacing = median_neighbour_spacing(model.means);
  const double variance = std::max(config.covariance_floor, 0.25 * spacing * spacing);
  model.covariances.assign(config.n_x, variance * Eigen::Matrix3d::Identity());
  model.outlier_weight =
      config.outlier_weight > 0.0 ? std::max(config.outlier_weight, config.outlier_weight_floor) : 0.0;
  model.weights.assign(config.n_x, (1.0 - model.outlier_weight) / static_cast<double>(config.n_x));

  run_em(points, config, model);

  // Split/merge repair: EM can settle with two components sharing one rim
  // cluster and none on another. Re-seed the more redundant component at the
  // core point farthest from all others; keep the result only if it fits better.
  if (config.n_x >= 2) {
    std::optional<Points3> core;  // built on the first repair only
    for (int round = 0; round < kMaxRepairs; ++round) {
      const double spacing_now = median_neighbour_spacing(model.means);
      std::size_t a = 0, b = 0;
      double closest = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < config.n_x; ++i) {
        for (std::size_t j = i + 1; j < config.n_x; ++j) {
          const double d = (model.means[i] - model.means[j]).norm();
          if (d < closest) {
            closest = d;
            a = i;
            b = j;
          }
        }
      }
      std::vector<double> spread(config.n_x);
      for (std::size_t j = 0; j < config.n_x; ++j) {
        spread[j] = Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(model.covariances[j]).eigenvalues()(2);
      }
      std::vector<double> sorted_spread = spread;
      std::nth_element(sorted_spread.begin(), sorted_spread.begin() + static_cast<std::ptrdiff_t>(config.n_x / 2),
                       sorted_spread.end());
      const double typical_spread = sorted_spread[config.n_x / 2];
      const bool crowded = closest < 0.5 * spacing_now;
      const bool stretched = *std::max_element(spread.begin(), spread.end()) > 4.0 * typical_spread;
      if (!crowded && !stretched) break;
      if (!core) core = dense_core(points, config.n_x);
      const std::size_t drop = model.weights[a] < model.weights[b] ? a : b;

      const std::size_t keep = drop == a ? b : a;
      const double shared = 0.5 * (model.weights[a] + model.weights[b]);

      // Move 1: re-seed at the core point farthest from all other means.
      GmmModel far_seed = model;
      double farthest = -1.0;
      for (const Vec3& p : *core) {
        double nearest = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < config.n_x; ++j) {
          if (j != drop) nearest = std::min(nearest, (p - model.means[j]).squaredNorm());
        }
        if (nearest > farthest) {
          farthest = nearest;
          far_seed.means[drop] = p;
        }
      }
      far_seed.covariances[drop] = model.covariances[keep];
      far_seed.weights[drop] = far_seed.weights[keep] = shared;

      // Move 2: split the widest component along its major axis.
      std::size_t widest = keep;
      double widest_var = -1.0;
      for (std::size_t j = 0; j < config.n_x; ++j) {
        if (j == drop) continue;
        if (spread[j] > widest_var) {
          widest_var = spread[j];
          widest = j;
        }
      }
      GmmModel split = model;
      {
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> solver(model.covariances[widest]);
        const Vec3 offset = std::sqrt(solver.eigenvalues()(2)) * solver.eigenvectors().col(2);
        Vec3 shrunk = solver.eigenvalues();
        shrunk(2) *= 0.25;
        const Eigen::Matrix3d cov = floor_eigenvalues(
            solver.eigenvectors() * shrunk.asDiagonal() * solver.eigenvectors().transpose(), config.covariance_floor);
        split.means[drop] = model.means[widest] + offset;
        split.means[widest] = model.means[widest] - offset;
        split.covariances[drop] = split.covariances[widest] = cov;
        split.weights[keep] = model.weights[a] + model.weights[b];
        split.weights[drop] = split.weights[widest] = 0.5 * model.weights[widest];
      }

      GmmModel candidate;
      double best = model.loglik_history.back();
      for (GmmModel* trial : {&far_seed, &split}) {
        trial->loglik_history.clear();
        run_em(points, config, *trial);
        if (trial->loglik_history.back() > best) {
          best = trial->loglik_history.back();
          candidate = *trial;
        }
      }
      if (candidate.means.empty()) break;
      model = std::move(candidate);
    }
  }
  return model;
}

OrderedSOI order_rim(std::span<const Vec3> means) {
  if (means.size() < 3) throw Error(ErrorCode::DegenerateRim, "rim needs at least 3 points");
  const Vec3 center = centroid(means);
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (const Vec3& p : means) cov += (p - center) * (p - center).transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> solver(cov);
  const Vec3 eig = solver.eigenvalues();
  if (!(eig(2) > 0.0) || eig(1) <= 1e-12 * eig(2)) {
    throw Error(ErrorCode::DegenerateRim, "rim points are collinear");
  }
  Vec3 normal = solver.eigenvectors().col(0);
  if (std::abs(normal.z()) > 1e-12) {
    if (normal.z() < 0.0) normal = -normal;
  } else {
    for (int i = 0; i < 3; ++i) {
      if (std::abs(normal(i)) > 1e-12) {
        if (normal(i) < 0.0) normal = -normal;
        break;
      }
    }
  }
  const Vec3 e1 = solver.eigenvectors().col(2);
  const Vec3 e2 = normal.cross(e1);

  std::vector<std::pair<double, std::size_t>> angles;
  angles.reserve(means.size());
  for (std::size_t i = 0; i < means.size(); ++i) {
    const Vec3 d = means[i] - center;
    angles.emplace_back(std::atan2(d.dot(e2), d.dot(e1)), i);
  }
  std::sort(angles.begin(), angles.end());

  std::size_t start = 0;
  for (std::size_t k = 1; k < angles.size(); ++k) {
    if (means[angles[k].second].x() > means[angles[start].second].x()) start = k;
  }
  OrderedSOI soi;
  soi.points.reserve(means.size());
  for (std::size_t k = 0; k < angles.size(); ++k) {
    soi.points.push_back(means[angles[(start + k) % angles.size()].second]);
  }
  return soi;
}

Extraction extract_soi_with_model(const PointCloud& cloud, const GmmConfig& config,
                                  const std::optional<OrderedSOI>& previous) {
  if (config.n_x < 3) throw Error(ErrorCode::ValidationError, "rim extraction needs n_x >= 3");
  Extraction out;
  out.model = fit_gmm(cloud, config, previous);
  out.soi = order_rim(out.model.means);
  if (previous) {
    out.soi.points = align_cyclic(out.soi.points, previous->points, true);
    out.soi.timestamp = previous->timestamp + 1;
  }
  return out;
}

OrderedSOI extract_soi(const PointCloud& cloud, const GmmConfig& config,
                       const std::optional<OrderedSOI>& previous) {
  return extract_soi_with_model(cloud, config, previous).soi;
}

PointCloud read_xyz_cloud(std::istream& in) {
  PointCloud cloud;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    std::replace(line.begin(), line.end(), ',', ' ');
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream row(line);
    std::vector<double> values;
    std::string token;
    while (row >> token) {
      std::size_t used = 0;
      double value = 0.0;
      try {
        value = std::stod(token, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != token.size()) {
        throw Error(ErrorCode::ParseError,
                    "line " + std::to_string(line_number) + ": not a number: '" + token + "'");
      }
      values.push_back(value);
    }
    if (values.size() != 3) {
      throw Error(ErrorCode::ParseError, "line " + std::to_string(line_number) + ": expected 3 values, got " +
                                             std::to_string(values.size()));
    }
    const Vec3 p(values[0], values[1], values[2]);
    if (p.allFinite()) cloud.points.push_back(p);
  }
  if (cloud.points.empty()) throw Error(ErrorCode::ParseError, "cloud file has no finite points");
  return cloud;
}

PointCloud read_xyz_cloud_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open cloud file '" + path + "'");
  return read_xyz_cloud(in);
}

}  // namespace bagsoi
