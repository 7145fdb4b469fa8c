#include "bagsoi/soi.hpp"

namespace bagsoi {

Eigen::VectorXd OrderedSOI::stacked() const {
  Eigen::VectorXd out(static_cast<Eigen::Index>(3 * points.size()));
  for (std::size_t i = 0; i < points.size(); ++i) {
    out.segment<3>(static_cast<Eigen::Index>(3 * i)) = points[i];
  }
  return out;
}

OrderedSOI OrderedSOI::from_stacked(const Eigen::VectorXd& stacked, std::int64_t timestamp) {
  OrderedSOI soi;
  soi.timestamp = timestamp;
  soi.points.reserve(static_cast<std::size_t>(stacked.size() / 3));
  for (Eigen::Index i = 0; i + 2 < stacked.size(); i += 3) {
    soi.points.emplace_back(stacked.segment<3>(i));
  }
  return soi;
}

}  // namespace bagsoi
