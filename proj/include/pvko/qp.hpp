#pragma once

#include <limits>
#include <optional>

#include <Eigen/Dense>
#include <Eigen/Sparse>

namespace pvko {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/**
 * @brief Convex quadratic program
 *
 *   minimize    1/2 x' P x + q' x
 *   subject to  l <= A x <= u
 *
 * P must be symmetric positive semidefinite (both triangles stored). Equality rows have l = u;
 * one-sided rows use +-infinity.
 */
struct QpProblem
{
  Eigen::SparseMatrix<double> P;
  Eigen::VectorXd q;
  Eigen::SparseMatrix<double> A;
  Eigen::VectorXd l;
  Eigen::VectorXd u;

  Eigen::Index num_vars() const { return q.size(); }
  Eigen::Index num_constraints() const { return l.size(); }
  void validate() const;
  double objective(const Eigen::VectorXd & x) const;
};

enum class QpStatus { Optimal, Infeasible, MaxIter };

const char * to_string(QpStatus s);

struct QpSettings
{
  /// absolute and relative stopping tolerances (infinity norms, unscaled problem)
  double eps_abs = 1e-6;
  double eps_rel = 1e-6;
  /// threshold for the primal infeasibility certificate
  double eps_infeasible = 1e-7;
  double rho = 0.1;
  double sigma = 1e-6;
  /// over-relaxation
  double alpha = 1.6;
  int max_iter = 20000;
  bool adaptive_rho = true;
  int adaptive_rho_interval = 25;
  int scaling_iter = 10;
  bool polish = true;
  int polish_refine_iter = 5;
  /// Polish attempts every this many iterations once residuals are within 1e3 x tolerance
  /// (0 disables; the final polish always runs).
  int polish_interval = 25;
};

struct QpWarmStart
{
  Eigen::VectorXd x;
  Eigen::VectorXd y;  ///< optional, may be empty
};

struct QpResult
{
  Eigen::VectorXd x;
  Eigen::VectorXd y;
  QpStatus status{QpStatus::MaxIter};
  int iterations{0};
  double primal_residual{kInf};
  double dual_residual{kInf};
  double objective{kInf};
  /// infinity norm of A' dy relative to |dy| when infeasibility was detected
  double certificate_norm{0.0};
  bool polished{false};
};

/// Operator-splitting (ADMM) solve with Ruiz equilibration, adaptive penalty, infeasibility
/// detection and active-set polishing.
QpResult solve_qp(
  const QpProblem & qp, const QpSettings & settings = {},
  const std::optional<QpWarmStart> & warm = std::nullopt);

struct KktResiduals
{
  double primal{0};
  double dual{0};
  double complementarity{0};
  double max() const;
};

/// Residuals of the KKT conditions at (x, y), unscaled, infinity norms.
KktResiduals kkt_residuals(const QpProblem & qp, const Eigen::VectorXd & x, const Eigen::VectorXd & y);

}  // namespace pvko
