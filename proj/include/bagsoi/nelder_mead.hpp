#pragma once

#include <Eigen/Dense>

#include <functional>

namespace bagsoi {

struct SimplexOptions {
  int max_evaluations = 4000;
  double f_tolerance = 1e-14;  ///< spread of simplex values
  double x_tolerance = 1e-9;   ///< simplex diameter
};

struct SimplexResult {
  Eigen::VectorXd x;
  double value = 0.0;
  int evaluations = 0;
};

/// Derivative-free Nelder-Mead minimization from `start` with per-coordinate
/// initial simplex edge lengths `steps`.
SimplexResult nelder_mead(const std::function<double(const Eigen::VectorXd&)>& objective,
                          const Eigen::VectorXd& start, const Eigen::VectorXd& steps,
                          const SimplexOptions& options = {});

}  // namespace bagsoi
