#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pvko/pvko.hpp"
#include "pvko/qp.hpp"
#include "pvko/sets.hpp"
#include "pvko/simlab.hpp"
#include "pvko/synthesis.hpp"

namespace pvko {

enum class TerminalMode {
  EqualityToOrigin,   ///< y_N = 0
  TightenedStateSet,  ///< C y_N in the tightened state set (no invariance guarantee)
};

/// How the state and input sets are tightened for the nominal problem.
enum class Tightening {
  Rpi,   ///< X (-) C S and U (-) K S with S the RPI set stored in the gain
  None,  ///< nominal constraints used as given
};

const char * to_string(TerminalMode m);
TerminalMode terminal_mode_from_string(const std::string & s);
const char * to_string(Tightening t);
Tightening tightening_from_string(const std::string & s);

struct MpcConfig
{
  int N{50};
  Eigen::MatrixXd Qlift;  ///< q x q
  Eigen::MatrixXd R;      ///< m x m
  /// Terminal weight; empty means gain.P.
  Eigen::MatrixXd Pterm;
  HPolytope state_set;  ///< over the physical state
  HPolytope input_set;
  TerminalMode terminal{TerminalMode::EqualityToOrigin};
  Tightening tightening{Tightening::Rpi};
  TubeGain gain;
  std::shared_ptr<const PvkoModel> model;

  const Eigen::MatrixXd & terminal_weight() const { return Pterm.size() ? Pterm : gain.P; }
};

struct TightenedSets
{
  HPolytope state;
  HPolytope input;
};

/// Checks shapes and horizon; throws InvalidArgument (or EmptyTightenedSet) on a bad config.
void validate(const MpcConfig & cfg);

/// X (-) C S and U (-) K S (the untouched sets when tightening is off).
TightenedSets tightened_sets(const MpcConfig & cfg);

struct MpcSolution
{
  std::vector<Eigen::VectorXd> nominal_states;  ///< N + 1 lifted vectors
  std::vector<Eigen::VectorXd> nominal_inputs;  ///< N input vectors
  double objective{0};
  QpStatus status{QpStatus::MaxIter};
  double kkt_residual{0};
  int iterations{0};
  double certificate_norm{0};
  Eigen::VectorXd x;  ///< raw stacked primal
  Eigen::VectorXd y;  ///< raw duals
};

/**
 * @brief Nominal MPC problem over z = (y_0 .. y_N, u_0 .. u_{N-1}).
 *
 * y_0 = Psi(x0), y_{k+1} = A(p_k) y_k + B(p_k) u_k, C y_k in the tightened state set and u_k in
 * the tightened input set for k < N, plus the terminal rows. The QP objective 1/2 z'Hz equals
 * sum y'Qy + u'Ru + y_N' P y_N.
 */
QpProblem build_qp(const MpcConfig & cfg, const Eigen::VectorXd & x0, std::span<const double> forecast);

/// Same with the lifted initial state given directly.
QpProblem build_qp_lifted(const MpcConfig & cfg, const Eigen::VectorXd & y0, std::span<const double> forecast);

/**
 * @brief Solves an MPC QP. With a previous solution the iterate is warm started from its
 * one-step shift, extended by K y_N at the end.
 */
MpcSolution solve_mpc_qp(
  const MpcConfig & cfg, const QpProblem & qp, const MpcSolution * previous = nullptr,
  const QpSettings & settings = {});

/// Shift of a solution by one step: (u_1 .. u_{N-1}, K y_N) and (y_1 .. y_N, A y_N + B K y_N).
Eigen::VectorXd shifted_candidate(const MpcConfig & cfg, const MpcSolution & sol, double p_last);

struct TubeInput
{
  Eigen::VectorXd u;
  bool clipped{false};
};

/**
 * @brief u = u0 + K (y - y0), brought back into the input set.
 *
 * Axis-aligned rows clip componentwise; any remaining violated row pulls the correction back
 * toward u0 along the segment.
 */
TubeInput tube_control(
  const Eigen::VectorXd & u0, const Eigen::VectorXd & y0, const Eigen::VectorXd & y, const Eigen::MatrixXd & K,
  const HPolytope & input_set);

enum class MpcEventKind { RecursiveFeasibilityViolation, LyapunovViolation };

const char * to_string(MpcEventKind k);

struct MpcEvent
{
  MpcEventKind kind;
  long step{0};
  std::string detail;
};

struct ClosedLoopOptions
{
  QpSettings qp;
  bool warm_start{true};
  /// Lyapunov decrease monitoring; defaults to on for the disturbance-free lifted plant.
  std::optional<bool> check_lyapunov;
  double lyapunov_tol{1e-8};
  /// Relative slack on the tube containment check.
  double tube_slack{1e-3};
  /// Physical state weight for the recorded stage cost x'Qx x + u'Ru; when empty the lifted
  /// measurement is weighted with Qlift instead.
  Eigen::MatrixXd stage_state_weight;
};

struct ClosedLoopResult
{
  Trajectory trajectory;
  std::vector<MpcEvent> events;
  int feasibility_violations{0};
  int lyapunov_violations{0};
  /// Steps where the next lifted state left the nominal prediction plus the tube cross section.
  int tube_checks{0};
  int tube_violations{0};
};

/**
 * @brief Receding-horizon loop: lift, solve with the forecast p_t .. p_{t+N-1}, apply the tube
 * law, advance the plant by one sampling interval (the signal's dt).
 *
 * Throws InitialInfeasibility when the first QP is infeasible. Later infeasible QPs are
 * recorded as events and the previous plan's shift is applied instead.
 */
ClosedLoopResult run_closed_loop(
  const MpcConfig & cfg, const Plant & plant, const Eigen::VectorXd & x0, const ParameterSignal & signal,
  long steps, const ClosedLoopOptions & opt = {});

}  // namespace pvko
