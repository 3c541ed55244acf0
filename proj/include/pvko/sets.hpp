#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

namespace pvko {

/**
 * @brief Zonotope {c + G xi : xi in [-1, 1]^g}.
 *
 * Generators are stored as the columns of a d x g matrix.
 */
class Zonotope
{
public:
  Zonotope() = default;
  Zonotope(Eigen::VectorXd center, Eigen::MatrixXd generators);

  /// Axis-aligned box with the given center and half-widths (zero half-widths are dropped).
  static Zonotope box(const Eigen::VectorXd & center, const Eigen::VectorXd & half_widths);
  static Zonotope point(const Eigen::VectorXd & c);

  int dim() const { return static_cast<int>(center_.size()); }
  int num_generators() const { return static_cast<int>(generators_.cols()); }
  const Eigen::VectorXd & center() const { return center_; }
  const Eigen::MatrixXd & generators() const { return generators_; }

  /// Half-widths of the interval hull: sum_j |g_j|.
  Eigen::VectorXd interval_half_widths() const;
  /// Infinity-norm radius of the interval hull about the center.
  double radius() const;
  Zonotope interval_hull() const;

  /// Scaling about the center.
  Zonotope scaled(double factor) const;

  /// Removes all-zero generators.
  Zonotope pruned() const;

  /// True when every generator has at most one nonzero entry.
  bool is_axis_aligned() const;

  /// Membership with absolute tolerance. Exact for axis-aligned zonotopes; otherwise solves a
  /// small feasibility QP.
  bool contains(const Eigen::VectorXd & x, double tol = 1e-9) const;

  /// Point c + G xi for xi in [-1, 1]^g.
  Eigen::VectorXd point_at(const Eigen::VectorXd & xi) const;

private:
  Eigen::VectorXd center_;
  Eigen::MatrixXd generators_;
};

/// Polytope {x : a_i . x <= b_i}; rows of A are the a_i.
class HPolytope
{
public:
  HPolytope() = default;
  HPolytope(Eigen::MatrixXd A, Eigen::VectorXd b);

  /// Box lo <= x <= hi as 2d rows (upper faces first, then lower faces).
  static HPolytope box(const Eigen::VectorXd & lo, const Eigen::VectorXd & hi);

  int dim() const { return static_cast<int>(A_.cols()); }
  int num_rows() const { return static_cast<int>(A_.rows()); }
  const Eigen::MatrixXd & A() const { return A_; }
  const Eigen::VectorXd & b() const { return b_; }

  bool contains(const Eigen::VectorXd & x, double tol = 0.0) const;

private:
  Eigen::MatrixXd A_;
  Eigen::VectorXd b_;
};

/// max over z of direction . z = direction . c + sum_j |direction . g_j|.
double support(const Zonotope & z, const Eigen::VectorXd & direction);

Zonotope linear_map(const Eigen::MatrixXd & M, const Zonotope & z);

Zonotope minkowski_sum(const Zonotope & a, const Zonotope & b);

/// Exact P (-) Z for an H-polytope and a zonotope: b_i -> b_i - h_Z(a_i).
/// Throws EmptyTightenedSet when a pair of opposite faces crosses.
HPolytope pontryagin_diff(const HPolytope & poly, const Zonotope & z);

struct RpiOptions
{
  double epsilon{1e-4};
  int max_depth{50};
};

struct RpiResult
{
  Zonotope set;
  int depth{0};
  bool converged{false};
  double contraction{0.0};  ///< observed per-coordinate ratio at cutoff, after clamping
  std::vector<std::string> warnings;
};

/**
 * @brief Outer approximation of the minimal robust positively invariant set of
 * e+ = A_i e + w, w in W, i = 1..l.
 *
 * Reachable terms are propagated as interval hulls of all vertex images and summed until they
 * fall below epsilon times the radius of W; the remaining geometric tail is bounded by the last
 * term scaled with rho / (1 - rho).
 */
RpiResult rpi_outer_approx(
  const std::vector<Eigen::MatrixXd> & vertex_maps, const Zonotope & W, const RpiOptions & opt = {});

}  // namespace pvko
