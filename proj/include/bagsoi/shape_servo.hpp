#pragma once

#include "bagsoi/error.hpp"
#include "bagsoi/plant.hpp"

#include <optional>
#include <vector>

namespace bagsoi {

/// 3 n_x x 12 map from command increments to SOI point increments.
using DeformationJacobian = Eigen::MatrixXd;

struct MpcConfig {
  int horizon = 5;
  double q_weight = 1.0;   ///< Q = q_weight * I
  double r_weight = 10.0;  ///< R_w = r_weight * I
  /// Explicit weights override the scalar forms when non-empty.
  Eigen::MatrixXd q;
  Eigen::MatrixXd r;
  DualArmCommand u_max = (DualArmCommand() << Eigen::Vector3d::Constant(0.005), Eigen::Vector3d::Constant(0.02),
                          Eigen::Vector3d::Constant(0.005), Eigen::Vector3d::Constant(0.02))
                             .finished();
  double perimeter_band = 0.05;       ///< soft bound on predicted perimeter deviation
  double perimeter_weight = 100.0;    ///< weight of the soft perimeter penalty
  double subgoal_switch_tol = 0.008;  ///< delta: max per-point error to advance, m
  double goal_tolerance = 0.002;      ///< mean per-point error that ends the run, m
  double broyden_rate = 0.5;          ///< epsilon_b in (0,1]
  double min_excitation = 1e-6;       ///< skip Broyden updates with smaller |u|
  /// Per-point RMS noise of observed SOIs, m. Each Broyden step is scaled by
  /// r^2 / (r^2 + noise^2), r the per-point RMS of the predicted change J u.
  double measurement_noise = 0.0;
  int step_budget = 2000;
  int stall_window = 60;              ///< steps without progress before giving up on a subgoal
  double stall_progress = 2e-4;       ///< error decrease that counts as progress, m
  double success_tolerance = 0.005;
  bool probe_init = true;             ///< bootstrap J by finite-difference probes
  double probe_translation = 0.002;
  double probe_rotation = 0.2 * 3.14159265358979323846 / 180.0;

  void validate() const;
  Eigen::MatrixXd state_weight(std::size_t n) const;   ///< full 3 n_x T square
  Eigen::MatrixXd input_weight() const;                ///< full 12 T square
};

struct BroydenResult {
  DeformationJacobian jacobian;
  bool updated = false;
};

/// J' = J + rate (s - J u) u^T / (u^T u); skipped (DegenerateExcitation) when
/// |u| <= min_norm.
BroydenResult broyden_update(const DeformationJacobian& jacobian, const Eigen::VectorXd& s,
                             const DualArmCommand& u, double rate, double min_norm = 1e-6);

/// Throwing form of broyden_update.
DeformationJacobian broyden_update_checked(const DeformationJacobian& jacobian, const Eigen::VectorXd& s,
                                           const DualArmCommand& u, double rate, double min_norm = 1e-6);

struct Prediction {
  Eigen::MatrixXd a;  ///< (1_T ⊗ I)
  Eigen::MatrixXd b;  ///< (L_T ⊗ J), L_T lower-triangular ones
};

/// Stacked T-step prediction x̄ = A x_t + B ū of x_{k+1} = x_k + J u_k.
Prediction build_prediction(const DeformationJacobian& jacobian, int horizon);

struct MpcSolution {
  DualArmCommand u = DualArmCommand::Zero();
  Eigen::VectorXd sequence;  ///< all T commands
  double cost = 0.0;
  double baseline_cost = 0.0;  ///< cost of ū = 0
};

/// One receding-horizon solve toward `goal` (index-aligned with `x`).
MpcSolution mpc_step(const OrderedSOI& x, const OrderedSOI& goal, const DeformationJacobian& jacobian,
                     const MpcConfig& config);

/// Finite-difference Jacobian from +/- probes along each command axis; leaves
/// the plant where it started (up to plant nonlinearity). Probe magnitudes are
/// raised to at least 10x measurement_noise (translation) when it is set.
DeformationJacobian probe_jacobian(Plant& plant, const OrderedSOI& x, const MpcConfig& config);

struct ControlRecord {
  int step = 0;
  int subgoal = 0;
  OrderedSOI state;        ///< observed x_t
  std::optional<OrderedSOI> truth;  ///< plant ground truth at t, if known
  OrderedSOI target;       ///< aligned g_next
  DualArmCommand command = DualArmCommand::Zero();
  double mean_error = 0.0;
  double max_error = 0.0;
  double jacobian_condition = 0.0;
  bool broyden_updated = false;
};

enum class ServoStatus { Reached, Stalled, BudgetExhausted };

struct ControllerResult {
  ServoStatus status = ServoStatus::Reached;
  std::vector<ControlRecord> records;
  OrderedSOI final_state;
  std::optional<OrderedSOI> final_truth;
  OrderedSOI final_target;
  double final_mean_error = 0.0;
  double final_max_error = 0.0;
  int steps = 0;
  int skipped_subgoals = 0;
  DeformationJacobian jacobian;
};

/// Servo failure carrying the partial trajectory.
class ServoError : public Error {
 public:
  ServoError(ErrorCode code, const std::string& message, ControllerResult result)
      : Error(code, message), result_(std::move(result)) {}
  const ControllerResult& result() const { return result_; }

 private:
  ControllerResult result_;
};

/**
 * Tracks `subgoals` (the first is the start state) on `plant`.
 *
 * The cyclic correspondence between x_t and the active subgoal is recomputed
 * at each subgoal switch and frozen in between. Intermediate subgoals that
 * stop improving for stall_window steps are skipped; the final one is not.
 * Throws ServoError(Stalled) when the final subgoal stalls above
 * success_tolerance and ServoError(SolverFailure) on a failed solve.
 */
ControllerResult run_controller(const std::vector<OrderedSOI>& subgoals, Plant& plant, const MpcConfig& config,
                                std::optional<DeformationJacobian> initial_jacobian = std::nullopt);

}  // namespace bagsoi
