#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

namespace pvko {

/// Axis-aligned box [lo, hi].
struct Box
{
  Eigen::VectorXd lo;
  Eigen::VectorXd hi;

  int dim() const { return static_cast<int>(lo.size()); }
  void validate() const;
};

enum class BasisKind { ThinPlateRbf, Monomial };

/**
 * @brief Observation functions mapping a physical state x in R^n to a lifted vector in R^q.
 *
 * Two families are supported: monomials x^e (component-wise powers) and thin-plate radial
 * basis functions r^2 log r with r = |x - c|. A thin-plate basis may optionally place the raw
 * state in front of the RBF components.
 *
 * Instances are immutable after construction.
 */
class LiftingBasis
{
public:
  /// Monomial basis. Each column of `exponents` (n x q) is one exponent vector; all n unit
  /// vectors must be present and no column may repeat.
  static LiftingBasis monomial(int state_dim, const Eigen::MatrixXi & exponents);

  /// Thin-plate basis with centers drawn uniformly in `domain` from a stream keyed by `seed`.
  static LiftingBasis thin_plate(
    int state_dim, int num_centers, const Box & domain, std::uint64_t seed,
    bool append_state = false);

  /// Thin-plate basis with explicit centers (n x numCenters); used when reloading models.
  static LiftingBasis thin_plate_from_centers(
    const Eigen::MatrixXd & centers, bool append_state = false, std::uint64_t seed = 0);

  BasisKind kind() const { return kind_; }
  int state_dim() const { return state_dim_; }
  int lifted_dim() const { return lifted_dim_; }
  bool append_state() const { return append_state_; }
  std::uint64_t seed() const { return seed_; }
  const Eigen::MatrixXd & centers() const { return centers_; }
  const Eigen::MatrixXi & exponents() const { return exponents_; }

  /// Lifted vector of a single state.
  Eigen::VectorXd lift(const Eigen::Ref<const Eigen::VectorXd> & x) const;

  /// Column-wise lift of an n x M matrix of states.
  Eigen::MatrixXd lift_columns(const Eigen::Ref<const Eigen::MatrixXd> & states) const;

  /// Positions of the raw state components inside the lifted vector, or -1 when the state
  /// is not embedded (thin-plate without append_state).
  std::vector<int> state_positions() const;

private:
  LiftingBasis() = default;

  BasisKind kind_{BasisKind::Monomial};
  int state_dim_{0};
  int lifted_dim_{0};
  bool append_state_{false};
  std::uint64_t seed_{0};
  Eigen::MatrixXd centers_;
  Eigen::MatrixXi exponents_;
};

/// The nine-term cubic basis [x, y, xy, x^2, y^2, x^2y, xy^2, x^3, y^3] used for the
/// Van der Pol benchmark.
Eigen::MatrixXi cubic_monomials_2d();

/// r^2 log r with the r -> 0 limit value 0.
double thin_plate(double r);

}  // namespace pvko
