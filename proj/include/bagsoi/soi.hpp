#pragma once

#include "bagsoi/geometry.hpp"

#include <cstdint>

namespace bagsoi {

/// Bag state: n_x rim points in cyclic order, world frame.
struct OrderedSOI {
  Points3 points;
  std::int64_t timestamp = 0;

  std::size_t size() const { return points.size(); }

  /// Points stacked as a 3 n_x column (x0, y0, z0, x1, ...).
  Eigen::VectorXd stacked() const;
  static OrderedSOI from_stacked(const Eigen::VectorXd& stacked, std::int64_t timestamp = 0);
};

}  // namespace bagsoi
