#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pvko/lifting.hpp"

namespace pvko {

/// Snapshot pairs recorded at one fixed parameter value.
struct SnapshotSet
{
  double working_point{0.0};
  Eigen::MatrixXd X;      ///< n x (M-1) states
  Eigen::MatrixXd Xplus;  ///< n x (M-1) successors
  Eigen::MatrixXd U;      ///< m x (M-1) inputs (m may be 0)

  Eigen::Index size() const { return X.cols(); }
  int state_dim() const { return static_cast<int>(X.rows()); }
  int input_dim() const { return static_cast<int>(U.rows()); }

  /// Checks shapes and finiteness; throws InvalidArgument.
  void validate() const;
};

/// Column-wise concatenation of several snapshot sets (working point of the first).
SnapshotSet concatenate(std::span<const SnapshotSet> sets);

struct LiftedSnapshots
{
  Eigen::MatrixXd Y;
  Eigen::MatrixXd Yplus;
};

/// A local lifted-space linear model y+ = A y + B u identified at one working point.
struct LocalKoopman
{
  double working_point{0.0};
  Eigen::MatrixXd A;
  Eigen::MatrixXd B;
  int rank{0};  ///< numerical rank of the regressor used in the fit
};

LiftedSnapshots lift_snapshots(const LiftingBasis & basis, const SnapshotSet & snaps);

/**
 * @brief Least-squares fit of [A B] = Y+ pinv([Y; U]) through a truncated SVD.
 *
 * Singular values below truncation_tol * sigma_max are discarded.
 */
LocalKoopman identify_local(
  const Eigen::MatrixXd & Y, const Eigen::MatrixXd & Yplus, const Eigen::MatrixXd & U,
  double truncation_tol = 1e-10, double working_point = 0.0);

/// Output map C = X pinv(Y) minimizing |X - C Y|_F.
Eigen::MatrixXd identify_output_map(
  const Eigen::MatrixXd & Y, const Eigen::MatrixXd & X, double truncation_tol = 1e-10);

/// Moore-Penrose pseudo-inverse through a thin SVD with relative truncation.
Eigen::MatrixXd pseudo_inverse(const Eigen::MatrixXd & M, double truncation_tol = 1e-10);

/// CSV with one row per time step: t, x1..xn, u1..um, p. A new episode starts whenever t does
/// not increase; a snapshot pair is formed from consecutive rows of the same episode.
void write_snapshot_csv(const std::string & path, const SnapshotSet & snaps, double dt);
SnapshotSet read_snapshot_csv(const std::string & path);

}  // namespace pvko
