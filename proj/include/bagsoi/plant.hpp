#pragma once

#include "bagsoi/soi.hpp"

#include <optional>

namespace bagsoi {

/// Dual-gripper pose increment: [left dp, left dω, right dp, right dω],
/// translations in meters, rotations as axis-angle components in radians.
using DualArmCommand = Eigen::Matrix<double, 12, 1>;

/// Anything the shape servo can drive: commands in, observed SOI out.
class Plant {
 public:
  virtual ~Plant() = default;
  /// Restores the initial state and returns its SOI.
  virtual OrderedSOI reset() = 0;
  virtual OrderedSOI apply(const DualArmCommand& u) = 0;
  /// Noise-free state, when the plant knows it.
  virtual std::optional<OrderedSOI> truth() const { return std::nullopt; }
};

}  // namespace bagsoi
