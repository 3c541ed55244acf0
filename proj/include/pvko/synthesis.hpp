#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pvko/edmd.hpp"
#include "pvko/sets.hpp"

namespace pvko {

enum class GainObjective {
  MaxTraceS,  ///< maximize tr(S), S = P^-1 (congruence-transformed form)
  MinTraceP,  ///< minimize tr(P) through an epigraph Z >= S^-1
};

const char * to_string(GainObjective o);
GainObjective gain_objective_from_string(const std::string & s);

struct SdpSettings
{
  /// relative dual-feasibility and duality-gap tolerance of the interior-point iteration
  double tol{1e-9};
  /// relative primal (multiplier) feasibility tolerance
  double primal_tol{1e-6};
  int max_iter{100};
  /// LMIs are imposed as F >= strictness * I so small solver residuals cannot break them.
  double strictness{1e-7};
  /// Certificate threshold on the returned (K, P).
  double certificate_tol{1e-6};
  /// Optional bound S <= trace_cap * I keeping max tr(S) bounded on weakly penalized directions.
  std::optional<double> s_cap;
};

struct SdpInfo
{
  int iterations{0};
  double primal_residual{0};
  double dual_residual{0};
  double objective{0};
  GainObjective objective_kind{GainObjective::MaxTraceS};
  bool external{false};
};

/// Output of the gain synthesis; the RPI set is filled in by a later step.
struct TubeGain
{
  Eigen::MatrixXd K;  ///< m x q
  Eigen::MatrixXd P;  ///< q x q
  std::optional<Zonotope> rpi;
  std::vector<double> margins;
  SdpInfo info;
};

/// Closed-loop vertex maps A_i + B_i K.
std::vector<Eigen::MatrixXd> closed_loop_maps(std::span<const LocalKoopman> locals, const Eigen::MatrixXd & K);

/**
 * @brief Per-vertex lambda_max(Ac' P Ac - P + Q + K' R K) with Ac = A_i + B_i K.
 *
 * Throws InvalidArgument when P is not symmetric positive definite.
 */
std::vector<double> verify_certificate(
  std::span<const LocalKoopman> locals, const Eigen::MatrixXd & K, const Eigen::MatrixXd & P,
  const Eigen::MatrixXd & Q, const Eigen::MatrixXd & R);

/// C' Qx C + 1e-8 I.
Eigen::MatrixXd lift_weights(const Eigen::MatrixXd & Qx, const Eigen::MatrixXd & C);

/// Symmetric PSD square root (negative eigenvalues clipped to zero).
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd & M);

/**
 * @brief Worst-case LMI synthesis over all vertices through a primal-dual interior-point solver.
 *
 * Each vertex contributes the block LMI
 *   [ S          (A_i S + B_i Y)'  S Q^1/2  Y' R^1/2 ]
 *   [ A_i S+B_i Y       S            0         0     ]  >= 0.
 *   [ Q^1/2 S           0            I         0     ]
 *   [ R^1/2 Y           0            0         I     ]
 * Returns P = S^-1, K = Y S^-1 and the certificate margins.
 *
 * Throws QuadraticStabilityFailure when the LMIs are infeasible and SolverStall when the solver
 * does not reach a certified solution.
 */
TubeGain solve_gain(
  std::span<const LocalKoopman> locals, const Eigen::MatrixXd & Q, const Eigen::MatrixXd & R,
  GainObjective objective = GainObjective::MaxTraceS, const SdpSettings & settings = {});

/// Wraps an externally supplied (K, P) after running the certificate check only.
TubeGain external_gain(
  std::span<const LocalKoopman> locals, const Eigen::MatrixXd & K, const Eigen::MatrixXd & P,
  const Eigen::MatrixXd & Q, const Eigen::MatrixXd & R);

}  // namespace pvko
