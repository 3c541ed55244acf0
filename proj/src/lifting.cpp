#include "pvko/lifting.hpp"

#include <cmath>
#include <set>
#include <string>

#include "pvko/errors.hpp"
#include "pvko/random.hpp"

namespace pvko {

void Box::validate() const
{
  if (lo.size() == 0 || lo.size() != hi.size()) {
    throw InvalidArgument("box bounds must be non-empty and of equal dimension");
  }
  for (Eigen::Index i = 0; i < lo.size(); ++i) {
    if (!std::isfinite(lo(i)) || !std::isfinite(hi(i)) || !(lo(i) < hi(i))) {
      throw InvalidArgument("box is degenerate in coordinate " + std::to_string(i));
    }
  }
}

double thin_plate(double r)
{
  if (r == 0.0) { return 0.0; }
  return r * r * std::log(r);
}

Eigen::MatrixXi cubic_monomials_2d()
{
  Eigen::MatrixXi e(2, 9);
  // clang-format off
  e << 1, 0, 1, 2, 0, 2, 1, 3, 0,
       0, 1, 1, 0, 2, 1, 2, 0, 3;
  // clang-format on
  return e;
}

LiftingBasis LiftingBasis::monomial(int state_dim, const Eigen::MatrixXi & exponents)
{
  if (state_dim <= 0) { throw InvalidArgument("state dimension must be positive"); }
  if (exponents.cols() == 0) { throw InvalidArgument("exponent list is empty"); }
  if (exponents.rows() != state_dim) {
    throw InvalidArgument("exponent vectors must have the state dimension");
  }
  if ((exponents.array() < 0).any()) { throw InvalidArgument("exponents must be nonnegative"); }

  std::set<std::vector<int>> seen;
  for (Eigen::Index j = 0; j < exponents.cols(); ++j) {
    std::vector<int> key(exponents.col(j).data(), exponents.col(j).data() + state_dim);
    if (!seen.insert(key).second) {
      throw InvalidArgument("duplicate exponent vector at position " + std::to_string(j));
    }
  }
  for (int i = 0; i < state_dim; ++i) {
    std::vector<int> unit(state_dim, 0);
    unit[i] = 1;
    if (!seen.contains(unit)) {
      throw InvalidArgument("exponent list lacks the unit vector of state " + std::to_string(i));
    }
  }

  LiftingBasis b;
  b.kind_ = BasisKind::Monomial;
  b.state_dim_ = state_dim;
  b.lifted_dim_ = static_cast<int>(exponents.cols());
  b.exponents_ = exponents;
  return b;
}

LiftingBasis LiftingBasis::thin_plate(
  int state_dim, int num_centers, const Box & domain, std::uint64_t seed, bool append_state)
{
  if (state_dim <= 0) { throw InvalidArgument("state dimension must be positive"); }
  if (num_centers <= 0) { throw InvalidArgument("thin-plate basis needs at least one center"); }
  if (num_centers < state_dim && !append_state) {
    throw InvalidArgument("number of centers must be at least the state dimension");
  }
  domain.validate();
  if (domain.dim() != state_dim) { throw InvalidArgument("domain box dimension mismatch"); }

  Rng rng(seed, 0x7b5);
  Eigen::MatrixXd centers(state_dim, num_centers);
  for (int j = 0; j < num_centers; ++j) { centers.col(j) = rng.uniform(domain.lo, domain.hi); }
  return thin_plate_from_centers(centers, append_state, seed);
}

LiftingBasis LiftingBasis::thin_plate_from_centers(
  const Eigen::MatrixXd & centers, bool append_state, std::uint64_t seed)
{
  if (centers.rows() == 0 || centers.cols() == 0) {
    throw InvalidArgument("thin-plate basis needs at least one center");
  }
  if (!centers.allFinite()) { throw InvalidArgument("thin-plate centers must be finite"); }
  LiftingBasis b;
  b.kind_ = BasisKind::ThinPlateRbf;
  b.state_dim_ = static_cast<int>(centers.rows());
  b.append_state_ = append_state;
  b.seed_ = seed;
  b.centers_ = centers;
  b.lifted_dim_ = static_cast<int>(centers.cols()) + (append_state ? b.state_dim_ : 0);
  if (b.lifted_dim_ < b.state_dim_) {
    throw InvalidArgument("lifted dimension must be at least the state dimension");
  }
  return b;
}

Eigen::VectorXd LiftingBasis::lift(const Eigen::Ref<const Eigen::VectorXd> & x) const
{
  if (x.size() != state_dim_) {
    throw InvalidArgument(
      "state has dimension " + std::to_string(x.size()) + ", basis expects " +
      std::to_string(state_dim_));
  }
  Eigen::VectorXd y(lifted_dim_);
  if (kind_ == BasisKind::Monomial) {
    for (int j = 0; j < lifted_dim_; ++j) {
      double v = 1.0;
      for (int i = 0; i < state_dim_; ++i) {
        for (int k = 0; k < exponents_(i, j); ++k) { v *= x(i); }
      }
      y(j) = v;
    }
    return y;
  }
  int offset = 0;
  if (append_state_) {
    y.head(state_dim_) = x;
    offset = state_dim_;
  }
  for (Eigen::Index j = 0; j < centers_.cols(); ++j) {
    y(offset + j) = pvko::thin_plate((x - centers_.col(j)).norm());
  }
  return y;
}

Eigen::MatrixXd LiftingBasis::lift_columns(const Eigen::Ref<const Eigen::MatrixXd> & states) const
{
  if (states.rows() != state_dim_) {
    throw InvalidArgument("state matrix row count does not match basis state dimension");
  }
  Eigen::MatrixXd out(lifted_dim_, states.cols());
  for (Eigen::Index j = 0; j < states.cols(); ++j) { out.col(j) = lift(states.col(j)); }
  return out;
}

std::vector<int> LiftingBasis::state_positions() const
{
  std::vector<int> pos(state_dim_, -1);
  if (kind_ == BasisKind::Monomial) {
    for (int j = 0; j < lifted_dim_; ++j) {
      if (exponents_.col(j).sum() != 1) { continue; }
      for (int i = 0; i < state_dim_; ++i) {
        if (exponents_(i, j) == 1) { pos[i] = j; }
      }
    }
  } else if (append_state_) {
    for (int i = 0; i < state_dim_; ++i) { pos[i] = i; }
  }
  return pos;
}

}  // namespace pvko
