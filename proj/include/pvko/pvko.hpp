#pragma once

#include <optional>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "pvko/edmd.hpp"
#include "pvko/lifting.hpp"
#include "pvko/sets.hpp"

namespace pvko {

/**
 * @brief Parameter-varying Koopman model: local lifted models at sorted working points,
 * blended by piecewise-linear weights, with a shared output map C.
 *
 * A model with a single working point is the time-invariant special case.
 */
class PvkoModel
{
public:
  PvkoModel(std::vector<LocalKoopman> locals, Eigen::MatrixXd C, LiftingBasis basis);

  const std::vector<LocalKoopman> & locals() const { return locals_; }
  const Eigen::MatrixXd & C() const { return C_; }
  const LiftingBasis & basis() const { return basis_; }
  double param_lo() const { return locals_.front().working_point; }
  double param_hi() const { return locals_.back().working_point; }
  int num_points() const { return static_cast<int>(locals_.size()); }
  int lifted_dim() const { return static_cast<int>(C_.cols()); }
  int state_dim() const { return static_cast<int>(C_.rows()); }
  int input_dim() const { return static_cast<int>(locals_.front().B.cols()); }

  /// Interpolation weights (one per working point); nonnegative, summing to one.
  Eigen::VectorXd weights(double p) const;

  /// A(p), B(p) with p clamped to the working-point range.
  std::pair<Eigen::MatrixXd, Eigen::MatrixXd> evaluate(double p) const;

  /// Residual set of the lifted one-step predictions, when estimated.
  const std::optional<Zonotope> & disturbance() const { return disturbance_; }
  void set_disturbance(Zonotope w);

  /// Relative one-step training residual |Y+ - AY - BU|_F / |Y+|_F per working point.
  const std::vector<double> & training_residuals() const { return training_residuals_; }
  void set_training_residuals(std::vector<double> r) { training_residuals_ = std::move(r); }

private:
  std::vector<LocalKoopman> locals_;
  Eigen::MatrixXd C_;
  LiftingBasis basis_;
  std::optional<Zonotope> disturbance_;
  std::vector<double> training_residuals_;
};

/**
 * @brief Open-loop prediction y0 = Psi(x0), y_{k+1} = A(p_k) y_k + B(p_k) u_k, x_k = C y_k.
 *
 * `inputs` is m x H (m may be zero) and `params` has H entries. Returns H + 1 states as the
 * columns of an n x (H+1) matrix; the first column is x0 itself.
 */
Eigen::MatrixXd predict(
  const PvkoModel & model, const Eigen::VectorXd & x0, const Eigen::MatrixXd & inputs,
  std::span<const double> params);

/**
 * @brief Box zonotope hull of the lifted one-step residuals on validation data, scaled about
 * its center by `inflation`.
 *
 * The validation sets must not overlap the identification data; this is not checked.
 */
Zonotope estimate_disturbance_set(
  const PvkoModel & model, std::span<const SnapshotSet> validation, double inflation = 1.1);

struct IdentifyOptions
{
  double truncation_tol{1e-10};
};

/// Per-working-point EDMD plus one output map from the concatenation of all points' data.
PvkoModel identify_pvko(
  const LiftingBasis & basis, std::span<const SnapshotSet> data, const IdentifyOptions & opt = {});

/// Single Koopman model from the pooled data of all working points. Its working point is the
/// mean of the data's working points.
PvkoModel identify_time_invariant(
  const LiftingBasis & basis, std::span<const SnapshotSet> data, const IdentifyOptions & opt = {});

}  // namespace pvko
