#include "bagsoi/shape_servo.hpp"

#include <unsupported/Eigen/KroneckerProduct>

#include <algorithm>
#include <cmath>
#include <limits>

namespace bagsoi {

namespace {

constexpr int kClipIterations = 5;
constexpr int kPerimeterPasses = 3;

// Gradient of the closed-polyline perimeter with respect to the stacked points.
Eigen::VectorXd perimeter_gradient(const Points3& points) {
  const std::size_t n = points.size();
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(3 * n));
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 d = points[(i + 1) % n] - points[i];
    const double len = d.norm();
    if (len < 1e-15) continue;
    const Vec3 unit = d / len;
    grad.segment<3>(static_cast<Eigen::Index>(3 * ((i + 1) % n))) += unit;
    grad.segment<3>(static_cast<Eigen::Index>(3 * i)) -= unit;
  }
  return grad;
}

double condition_number(const DeformationJacobian& j) {
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(j);
  const auto& s = svd.singularValues();
  if (s.size() == 0 || s(s.size() - 1) <= 0.0) return std::numeric_limits<double>::infinity();
  return s(0) / s(s.size() - 1);
}

// 0.5 u'Hu + g'u + c
struct Quadratic {
  Eigen::MatrixXd h;
  Eigen::VectorXd g;
  double c = 0.0;
  double operator()(const Eigen::VectorXd& u) const { return 0.5 * u.dot(h * u) + g.dot(u) + c; }
};

// Clip-and-resolve: components that leave the box are fixed at the bound and
// the rest re-solved, a few rounds.
Eigen::VectorXd solve_boxed(const Quadratic& q, const Eigen::VectorXd& bound) {
  const Eigen::Index n = q.g.size();
  std::vector<int> state(static_cast<std::size_t>(n), 0);  // -1 lower, +1 upper, 0 free
  Eigen::VectorXd u = Eigen::VectorXd::Zero(n);
  for (int round = 0; round < kClipIterations; ++round) {
    std::vector<Eigen::Index> free;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (state[static_cast<std::size_t>(i)] == 0) free.push_back(i);
      else u(i) = state[static_cast<std::size_t>(i)] * bound(i);
    }
    if (free.empty()) break;
    const auto m = static_cast<Eigen::Index>(free.size());
    Eigen::MatrixXd hff(m, m);
    Eigen::VectorXd rhs(m);
    for (Eigen::Index a = 0; a < m; ++a) {
      rhs(a) = -q.g(free[static_cast<std::size_t>(a)]);
      for (Eigen::Index i = 0; i < n; ++i) {
        if (state[static_cast<std::size_t>(i)] != 0) rhs(a) -= q.h(free[static_cast<std::size_t>(a)], i) * u(i);
      }
      for (Eigen::Index b = 0; b < m; ++b) {
        hff(a, b) = q.h(free[static_cast<std::size_t>(a)], free[static_cast<std::size_t>(b)]);
      }
    }
    const Eigen::VectorXd uf = hff.ldlt().solve(rhs);
    bool clipped = false;
    for (Eigen::Index a = 0; a < m; ++a) {
      const Eigen::Index i = free[static_cast<std::size_t>(a)];
      u(i) = uf(a);
      if (std::abs(u(i)) > bound(i)) {
        state[static_cast<std::size_t>(i)] = u(i) > 0.0 ? 1 : -1;
        clipped = true;
      }
    }
    if (!clipped) break;
  }
  return u.cwiseMax(-bound).cwiseMin(bound);
}

Eigen::VectorXd projected_gradient(const Quadratic& q, const Eigen::VectorXd& bound, Eigen::VectorXd u) {
  const double lipschitz = std::max(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(q.h).eigenvalues().maxCoeff(), 1e-12);
  for (int it = 0; it < 500; ++it) {
    const Eigen::VectorXd next = (u - (q.h * u + q.g) / lipschitz).cwiseMax(-bound).cwiseMin(bound);
    if ((next - u).norm() < 1e-14) break;
    u = next;
  }
  return u;
}

}  // namespace

void MpcConfig::validate() const {
  if (horizon < 1) throw Error(ErrorCode::ValidationError, "horizon must be at least 1");
  if (!(q_weight >= 0.0)) throw Error(ErrorCode::ValidationError, "q_weight must be non-negative");
  if (!(r_weight > 0.0)) throw Error(ErrorCode::ValidationError, "r_weight must be positive");
  if (q.size() > 0) {
    if (q.rows() != q.cols() || !q.isApprox(q.transpose(), 1e-12)) {
      throw Error(ErrorCode::ValidationError, "Q must be symmetric");
    }
    if (Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(q).eigenvalues().minCoeff() < -1e-12) {
      throw Error(ErrorCode::ValidationError, "Q must be positive semidefinite");
    }
  }
  if (r.size() > 0) {
    if (r.rows() != 12 * horizon || r.cols() != 12 * horizon || !r.isApprox(r.transpose(), 1e-12)) {
      throw Error(ErrorCode::ValidationError, "R_w must be symmetric 12T x 12T");
    }
    if (Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(r).eigenvalues().minCoeff() <= 0.0) {
      throw Error(ErrorCode::ValidationError, "R_w must be positive definite");
    }
  }
  if (!(u_max.array() > 0.0).all()) throw Error(ErrorCode::ValidationError, "u_max must be positive");
  if (!(perimeter_band > 0.0)) throw Error(ErrorCode::ValidationError, "perimeter_band must be positive");
  if (!(perimeter_weight >= 0.0)) throw Error(ErrorCode::ValidationError, "perimeter_weight must be non-negative");
  if (!(subgoal_switch_tol > 0.0)) throw Error(ErrorCode::ValidationError, "subgoal_switch_tol must be positive");
  if (!(goal_tolerance > 0.0)) throw Error(ErrorCode::ValidationError, "goal_tolerance must be positive");
  if (!(broyden_rate > 0.0 && broyden_rate <= 1.0)) {
    throw Error(ErrorCode::ValidationError, "broyden_rate must be in (0,1]");
  }
  if (!(measurement_noise >= 0.0)) throw Error(ErrorCode::ValidationError, "measurement_noise must be non-negative");
  if (step_budget < 1) throw Error(ErrorCode::ValidationError, "step_budget must be positive");
  if (stall_window < 1) throw Error(ErrorCode::ValidationError, "stall_window must be positive");
  if (!(success_tolerance > 0.0)) throw Error(ErrorCode::ValidationError, "success_tolerance must be positive");
  if (!(probe_translation > 0.0 && probe_rotation > 0.0)) {
    throw Error(ErrorCode::ValidationError, "probe magnitudes must be positive");
  }
}

Eigen::MatrixXd MpcConfig::state_weight(std::size_t n) const {
  const auto dim = static_cast<Eigen::Index>(3 * n) * horizon;
  if (q.size() > 0) {
    if (q.rows() != dim) throw Error(ErrorCode::ValidationError, "Q must be 3 n_x T square");
    return q;
  }
  return q_weight * Eigen::MatrixXd::Identity(dim, dim);
}

Eigen::MatrixXd MpcConfig::input_weight() const {
  if (r.size() > 0) return r;
  return r_weight * Eigen::MatrixXd::Identity(12 * horizon, 12 * horizon);
}

BroydenResult broyden_update(const DeformationJacobian& jacobian, const Eigen::VectorXd& s,
                             const DualArmCommand& u, double rate, double min_norm) {
  BroydenResult out{jacobian, false};
  const double uu = u.squaredNorm();
  if (std::sqrt(uu) <= min_norm) return out;
  out.jacobian += rate * (s - jacobian * u) * u.transpose() / uu;
  out.updated = true;
  return out;
}

DeformationJacobian broyden_update_checked(const DeformationJacobian& jacobian, const Eigen::VectorXd& s,
                                           const DualArmCommand& u, double rate, double min_norm) {
  BroydenResult r = broyden_update(jacobian, s, u, rate, min_norm);
  if (!r.updated) throw Error(ErrorCode::DegenerateExcitation, "command norm below excitation threshold");
  return std::move(r.jacobian);
}

Prediction build_prediction(const DeformationJacobian& jacobian, int horizon) {
  if (horizon < 1) throw Error(ErrorCode::ValidationError, "horizon must be at least 1");
  const Eigen::Index n = jacobian.rows();
  Prediction p;
  p.a = Eigen::kroneckerProduct(Eigen::VectorXd::Ones(horizon), Eigen::MatrixXd::Identity(n, n));
  const Eigen::MatrixXd lower =
      Eigen::MatrixXd::Ones(horizon, horizon).triangularView<Eigen::Lower>();
  p.b = Eigen::kroneckerProduct(lower, jacobian);
  return p;
}

MpcSolution mpc_step(const OrderedSOI& x, const OrderedSOI& goal, const DeformationJacobian& jacobian,
                     const MpcConfig& config) {
  if (x.size() != goal.size() || jacobian.rows() != static_cast<Eigen::Index>(3 * x.size()) ||
      jacobian.cols() != 12) {
    throw Error(ErrorCode::ValidationError, "state, goal and Jacobian dimensions disagree");
  }
  if (!jacobian.allFinite()) throw Error(ErrorCode::SolverFailure, "Jacobian has non-finite entries");
  const int t = config.horizon;
  const Prediction pred = build_prediction(jacobian, t);
  const Eigen::MatrixXd q = config.state_weight(x.size());
  const Eigen::VectorXd xs = x.stacked();
  const Eigen::VectorXd ks = pred.a * goal.stacked();
  const Eigen::VectorXd e0 = pred.a * xs - ks;

  const Eigen::MatrixXd qb = q * pred.b;
  Quadratic base;
  base.h = 2.0 * (pred.b.transpose() * qb + config.input_weight());
  base.g = 2.0 * qb.transpose() * e0;
  base.c = e0.dot(q * e0);

  Eigen::VectorXd bound(12 * t);
  for (int k = 0; k < t; ++k) bound.segment<12>(12 * k) = config.u_max;

  // Soft perimeter band, linearized at x_t and activated per predicted step.
  const double reference = polyline_perimeter(goal.points);
  const double p0 = polyline_perimeter(x.points);
  const Eigen::VectorXd grad = perimeter_gradient(x.points);
  const Eigen::Index n = jacobian.rows();
  Quadratic problem = base;
  Eigen::VectorXd u = solve_boxed(problem, bound);
  std::vector<bool> active(static_cast<std::size_t>(t), false);
  for (int pass = 0; pass < kPerimeterPasses && config.perimeter_weight > 0.0; ++pass) {
    bool changed = false;
    for (int k = 0; k < t; ++k) {
      const double pk = p0 + grad.dot(pred.b.middleRows(k * n, n) * u);
      if (!active[static_cast<std::size_t>(k)] && std::abs(pk / reference - 1.0) > config.perimeter_band) {
        active[static_cast<std::size_t>(k)] = true;
        changed = true;
        const double target =
            std::clamp(pk, (1.0 - config.perimeter_band) * reference, (1.0 + config.perimeter_band) * reference);
        const Eigen::VectorXd h = pred.b.middleRows(k * n, n).transpose() * grad;
        const double w = config.perimeter_weight;
        problem.h += 2.0 * w * h * h.transpose();
        problem.g += 2.0 * w * (p0 - target) * h;
        problem.c += w * (p0 - target) * (p0 - target);
      }
    }
    if (!changed) break;
    u = solve_boxed(problem, bound);
  }

  MpcSolution out;
  out.baseline_cost = problem.c;
  out.cost = problem(u);
  if (!(out.cost <= out.baseline_cost)) {
    u = projected_gradient(problem, bound, Eigen::VectorXd::Zero(12 * t));
    out.cost = problem(u);
    if (!(out.cost <= out.baseline_cost + 1e-15 * std::max(1.0, out.baseline_cost))) {
      throw Error(ErrorCode::SolverFailure, "constrained solve did not improve on the zero command");
    }
  }
  out.sequence = u;
  out.u = u.head<12>();
  return out;
}

DeformationJacobian probe_jacobian(Plant& plant, const OrderedSOI& x, const MpcConfig& config) {
  DeformationJacobian j = DeformationJacobian::Zero(static_cast<Eigen::Index>(3 * x.size()), 12);
  OrderedSOI current = x;
  // Noisy observations need probes well above the noise floor.
  const double scale = std::max(1.0, 10.0 * config.measurement_noise / config.probe_translation);
  for (int axis = 0; axis < 12; ++axis) {
    const double magnitude = scale * ((axis % 6) < 3 ? config.probe_translation : config.probe_rotation);
    DualArmCommand u = DualArmCommand::Zero();
    u(axis) = magnitude;
    const OrderedSOI moved = plant.apply(u);
    if (moved.size() != current.size()) throw Error(ErrorCode::SolverFailure, "plant changed the SOI size");
    j.col(axis) = (moved.stacked() - current.stacked()) / magnitude;
    current = plant.apply(-u);
  }
  return j;
}

ControllerResult run_controller(const std::vector<OrderedSOI>& subgoals, Plant& plant, const MpcConfig& config,
                                std::optional<DeformationJacobian> initial_jacobian) {
  config.validate();
  if (subgoals.empty()) throw Error(ErrorCode::ValidationError, "path has no subgoals");

  ControllerResult result;
  OrderedSOI x = plant.reset();
  for (const OrderedSOI& g : subgoals) {
    if (g.size() != x.size()) throw Error(ErrorCode::ValidationError, "subgoal size differs from the plant SOI");
  }
  const Eigen::Index rows = static_cast<Eigen::Index>(3 * x.size());
  DeformationJacobian j;
  if (initial_jacobian) {
    j = *initial_jacobian;
    if (j.rows() != rows || j.cols() != 12) throw Error(ErrorCode::ValidationError, "initial Jacobian has wrong shape");
  } else if (config.probe_init) {
    j = probe_jacobian(plant, x, config);
    x = plant.apply(DualArmCommand::Zero());
  } else {
    j = DeformationJacobian::Zero(rows, 12);
  }

  const int last = static_cast<int>(subgoals.size()) - 1;
  int active = 0;
  OrderedSOI target;
  auto align_target = [&]() {
    target.points = apply_alignment(subgoals[static_cast<std::size_t>(active)].points,
                                    best_cyclic_alignment(subgoals[static_cast<std::size_t>(active)].points,
                                                          x.points, true));
    target.timestamp = subgoals[static_cast<std::size_t>(active)].timestamp;
  };
  align_target();
  double best_error = std::numeric_limits<double>::infinity();
  int last_progress = 0;

  auto finish = [&](ServoStatus status, double mean, double max) {
    result.status = status;
    result.final_state = x;
    result.final_truth = plant.truth();
    result.final_target = target;
    result.final_mean_error = mean;
    result.final_max_error = max;
    result.jacobian = j;
    return result;
  };

  for (int step = 0;; ++step) {
    const double mean = mean_pointwise_distance(x.points, target.points);
    const double max = max_pointwise_distance(x.points, target.points);

    if (active == last && mean < config.goal_tolerance) return finish(ServoStatus::Reached, mean, max);
    if (active < last && max < config.subgoal_switch_tol) {
      ++active;
      align_target();
      best_error = std::numeric_limits<double>::infinity();
      last_progress = step;
      --step;
      continue;
    }
    if (mean < best_error - config.stall_progress) {
      best_error = mean;
      last_progress = step;
    } else if (step - last_progress >= config.stall_window) {
      if (active < last) {
        ++active;
        ++result.skipped_subgoals;
        align_target();
        best_error = std::numeric_limits<double>::infinity();
        last_progress = step;
        --step;
        continue;
      }
      if (mean < config.success_tolerance) return finish(ServoStatus::Reached, mean, max);
      finish(ServoStatus::Stalled, mean, max);
      throw ServoError(ErrorCode::Stalled, "no progress toward the final subgoal", result);
    }
    if (result.steps >= config.step_budget) {
      if (active == last && mean < config.success_tolerance) return finish(ServoStatus::Reached, mean, max);
      finish(ServoStatus::BudgetExhausted, mean, max);
      throw ServoError(ErrorCode::Stalled, "step budget exhausted", result);
    }

    MpcSolution sol;
    try {
      sol = mpc_step(x, target, j, config);
    } catch (const Error& e) {
      finish(ServoStatus::Stalled, mean, max);
      throw ServoError(e.code(), e.what(), result);
    }
    std::optional<OrderedSOI> truth_before = plant.truth();
    const OrderedSOI next = plant.apply(sol.u);
    double rate = config.broyden_rate;
    if (config.measurement_noise > 0.0) {
      const double r2 = (j * sol.u).squaredNorm() / static_cast<double>(x.size());
      rate *= r2 / (r2 + config.measurement_noise * config.measurement_noise);
    }
    const BroydenResult update =
        rate > 0.0 ? broyden_update(j, next.stacked() - x.stacked(), sol.u, rate, config.min_excitation)
                   : BroydenResult{j, false};

    ControlRecord record;
    record.step = result.steps;
    record.subgoal = active;
    record.state = x;
    record.truth = truth_before;
    record.target = target;
    record.command = sol.u;
    record.mean_error = mean;
    record.max_error = max;
    record.jacobian_condition = condition_number(j);
    record.broyden_updated = update.updated;
    result.records.push_back(std::move(record));

    j = update.jacobian;
    x = next;
    ++result.steps;
  }
}

}  // namespace bagsoi
