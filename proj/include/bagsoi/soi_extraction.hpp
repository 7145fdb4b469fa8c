#pragma once

#include "bagsoi/soi.hpp"

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace bagsoi {

struct GmmConfig {
  std::size_t n_x = 32;
  /// Initial mass of the uniform outlier component; 0 disables it.
  double outlier_weight = 0.05;
  /// Lower bound applied when the outlier mass is re-estimated.
  double outlier_weight_floor = 0.01;
  int max_iters = 100;
  double loglik_rel_tol = 1e-6;
  /// Minimum covariance eigenvalue, m^2.
  double covariance_floor = 1e-6;

  void validate() const;
};

struct GmmModel {
  std::vector<double> weights;  ///< one per Gaussian
  double outlier_weight = 0.0;
  Points3 means;
  std::vector<Eigen::Matrix3d> covariances;
  double uniform_density = 0.0;  ///< 1 / volume of the inflated bounding box
  std::vector<double> loglik_history;  ///< entry k follows k M-steps
  int iterations = 0;
  bool converged = false;
};

/// EM fit of n_x Gaussians plus a uniform outlier component. Means start from
/// `init` when given, otherwise from farthest-point samples of the cloud's
/// dense core.
GmmModel fit_gmm(const PointCloud& cloud, const GmmConfig& config,
                 const std::optional<OrderedSOI>& init = std::nullopt);

/// Orders points by polar angle in their best-fit plane: counter-clockwise
/// about the normal with positive world z, starting at the largest world x.
OrderedSOI order_rim(std::span<const Vec3> means);

struct Extraction {
  OrderedSOI soi;
  GmmModel model;
};

Extraction extract_soi_with_model(const PointCloud& cloud, const GmmConfig& config,
                                  const std::optional<OrderedSOI>& previous = std::nullopt);

/// Rim extraction; with `previous`, EM is warm-started from it and the cyclic
/// index origin is aligned to it.
OrderedSOI extract_soi(const PointCloud& cloud, const GmmConfig& config,
                       const std::optional<OrderedSOI>& previous = std::nullopt);

/// Reads whitespace- or comma-separated "x y z" rows. Blank lines and lines
/// starting with '#' are skipped; rows with non-finite values are dropped.
PointCloud read_xyz_cloud(std::istream& in);
PointCloud read_xyz_cloud_file(const std::string& path);

}  // namespace bagsoi
