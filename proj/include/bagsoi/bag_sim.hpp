#pragma once

#include "bagsoi/plant.hpp"
#include "bagsoi/soi_extraction.hpp"

#include <cstdint>
#include <optional>
#include <random>

namespace bagsoi {

struct Pose {
  Vec3 position = Vec3::Zero();
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
};

/// Left and right handle frames. Identity orientation is the unloaded grip.
struct GripperState {
  Pose left;
  Pose right;

  void validate() const;
};

/// Grippers placed symmetrically about `center`, `half_span` apart along the
/// horizontal direction at angle `yaw` from world x; identity orientations.
GripperState symmetric_grippers(const Vec3& center, double half_span, double yaw = 0.0);

/// Integrates a command: translations add, orientations compose
/// R <- exp([dω]) R in the world frame.
GripperState integrate(const GripperState& state, const DualArmCommand& u);

struct BagModelConfig {
  double rest_perimeter = 0.68;  ///< R0, m
  double rest_half_span = 0.12;  ///< half the handle separation of the unloaded bag, m
  std::size_t n_x = 32;
  /// Rim angles of the handle attachments; must be antipodal.
  double anchor_left = 0.0;
  double anchor_right = 3.14159265358979323846;
  double stiffness = 0.6;          ///< share of handle rotation transmitted to the rim, (0,1]
  double nonlinearity_gain = 1.0;  ///< normal bulge per squared separation change, 1/m
  std::size_t cloud_density = 50;  ///< cloud points per rim point
  double cloud_noise_sigma = 0.003;
  double outlier_fraction = 0.0;
  std::uint64_t cloud_seed = 11;

  void validate() const;
};

/// Deterministic rim of the surrogate bag for a gripper state.
OrderedSOI bag_forward(const GripperState& gripper, const BagModelConfig& config);

/// Camera stand-in: noisy samples at each rim point plus uniform outliers in
/// the rim's inflated bounding box.
PointCloud emit_cloud(const OrderedSOI& rim, const BagModelConfig& config, std::mt19937_64& rng);

/// Number of uniform outliers emitted alongside `inliers` cloud points.
std::size_t outlier_count(std::size_t inliers, double outlier_fraction);

/// Plant over the surrogate bag, optionally observed through emit_cloud and
/// the GMM extractor.
class BagSim : public Plant {
 public:
  BagSim(BagModelConfig config, GripperState initial, std::optional<GmmConfig> perception = std::nullopt);

  OrderedSOI reset() override;
  OrderedSOI apply(const DualArmCommand& u) override;
  std::optional<OrderedSOI> truth() const override { return truth_; }

  const GripperState& gripper() const { return gripper_; }
  const OrderedSOI& ground_truth() const { return truth_; }
  const OrderedSOI& observed() const { return observed_; }
  const BagModelConfig& config() const { return config_; }

 private:
  OrderedSOI observe();

  BagModelConfig config_;
  GripperState initial_;
  std::optional<GmmConfig> perception_;
  GripperState gripper_;
  OrderedSOI truth_;
  OrderedSOI observed_;
  std::mt19937_64 rng_;
  std::int64_t clock_ = 0;
};

}  // namespace bagsoi
