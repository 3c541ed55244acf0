#include "pvko/sets.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "pvko/errors.hpp"
#include "pvko/qp.hpp"

namespace pvko {

namespace {

void require_finite(const Eigen::MatrixXd & M, const char * what)
{
  if (!M.allFinite()) { throw InvalidArgument(std::string(what) + " contains non-finite values"); }
}

Eigen::SparseMatrix<double> to_sparse(const Eigen::MatrixXd & M)
{
  return M.sparseView(0.0, 0.0);
}

}  // namespace

Zonotope::Zonotope(Eigen::VectorXd center, Eigen::MatrixXd generators)
    : center_(std::move(center)), generators_(std::move(generators))
{
  if (generators_.cols() == 0) { generators_.resize(center_.size(), 0); }
  if (generators_.rows() != center_.size()) {
    throw InvalidArgument("zonotope generators do not match the center dimension");
  }
  require_finite(center_, "zonotope center");
  require_finite(generators_, "zonotope generators");
}

Zonotope Zonotope::box(const Eigen::VectorXd & center, const Eigen::VectorXd & half_widths)
{
  if (center.size() != half_widths.size()) { throw InvalidArgument("box dimension mismatch"); }
  if ((half_widths.array() < 0).any()) { throw InvalidArgument("negative box half-width"); }
  const auto d = center.size();
  Eigen::Index g = 0;
  for (Eigen::Index i = 0; i < d; ++i) { g += half_widths(i) > 0 ? 1 : 0; }
  Eigen::MatrixXd G = Eigen::MatrixXd::Zero(d, g);
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < d; ++i) {
    if (half_widths(i) > 0) { G(i, k++) = half_widths(i); }
  }
  return {center, G};
}

Zonotope Zonotope::point(const Eigen::VectorXd & c) { return {c, Eigen::MatrixXd(c.size(), 0)}; }

Eigen::VectorXd Zonotope::interval_half_widths() const
{
  if (generators_.cols() == 0) { return Eigen::VectorXd::Zero(dim()); }
  return generators_.cwiseAbs().rowwise().sum();
}

double Zonotope::radius() const
{
  const Eigen::VectorXd h = interval_half_widths();
  return h.size() == 0 ? 0.0 : h.maxCoeff();
}

Zonotope Zonotope::interval_hull() const { return box(center_, interval_half_widths()); }

Zonotope Zonotope::scaled(double factor) const
{
  if (!(factor >= 0) || !std::isfinite(factor)) { throw InvalidArgument("invalid scale factor"); }
  return {center_, factor * generators_};
}

Zonotope Zonotope::pruned() const
{
  std::vector<Eigen::Index> keep;
  for (Eigen::Index j = 0; j < generators_.cols(); ++j) {
    if (generators_.col(j).cwiseAbs().maxCoeff() > 0) { keep.push_back(j); }
  }
  Eigen::MatrixXd G(dim(), static_cast<Eigen::Index>(keep.size()));
  for (std::size_t k = 0; k < keep.size(); ++k) {
    G.col(static_cast<Eigen::Index>(k)) = generators_.col(keep[k]);
  }
  return {center_, G};
}

bool Zonotope::is_axis_aligned() const
{
  for (Eigen::Index j = 0; j < generators_.cols(); ++j) {
    if ((generators_.col(j).array() != 0.0).count() > 1) { return false; }
  }
  return true;
}

bool Zonotope::contains(const Eigen::VectorXd & x, double tol) const
{
  if (x.size() != center_.size()) { throw InvalidArgument("membership point dimension mismatch"); }
  const Eigen::VectorXd d = x - center_;
  if (is_axis_aligned()) {
    return ((d.cwiseAbs() - interval_half_widths()).array() <= tol).all();
  }
  // min 1/2 |G xi - d|^2 over the unit box; x is inside when the residual vanishes.
  const Eigen::Index g = generators_.cols();
  QpProblem qp;
  qp.P = to_sparse(generators_.transpose() * generators_ + 1e-12 * Eigen::MatrixXd::Identity(g, g));
  qp.q = -generators_.transpose() * d;
  qp.A = to_sparse(Eigen::MatrixXd::Identity(g, g));
  qp.l = -Eigen::VectorXd::Ones(g);
  qp.u = Eigen::VectorXd::Ones(g);
  QpSettings st;
  st.eps_abs = 1e-10;
  st.eps_rel = 1e-10;
  const auto res = solve_qp(qp, st);
  const Eigen::VectorXd xi = res.x.cwiseMax(-1.0).cwiseMin(1.0);
  return ((generators_ * xi - d).cwiseAbs().array() <= tol).all();
}

Eigen::VectorXd Zonotope::point_at(const Eigen::VectorXd & xi) const
{
  if (xi.size() != generators_.cols()) { throw InvalidArgument("generator coefficient count mismatch"); }
  return center_ + generators_ * xi;
}

HPolytope::HPolytope(Eigen::MatrixXd A, Eigen::VectorXd b) : A_(std::move(A)), b_(std::move(b))
{
  if (A_.rows() == 0) { throw InvalidArgument("polytope needs at least one row"); }
  if (A_.rows() != b_.size()) { throw InvalidArgument("polytope row count mismatch"); }
  require_finite(A_, "polytope normals");
  require_finite(b_, "polytope offsets");
  for (Eigen::Index i = 0; i < A_.rows(); ++i) {
    if (A_.row(i).cwiseAbs().maxCoeff() == 0.0) {
      throw InvalidArgument("polytope row " + std::to_string(i) + " has a zero normal");
    }
  }
}

HPolytope HPolytope::box(const Eigen::VectorXd & lo, const Eigen::VectorXd & hi)
{
  if (lo.size() != hi.size() || lo.size() == 0) { throw InvalidArgument("box bounds mismatch"); }
  if ((lo.array() > hi.array()).any()) { throw InvalidArgument("box lower bound exceeds upper"); }
  const auto d = lo.size();
  Eigen::MatrixXd A(2 * d, d);
  A.topRows(d).setIdentity();
  A.bottomRows(d) = -Eigen::MatrixXd::Identity(d, d);
  Eigen::VectorXd b(2 * d);
  b.head(d) = hi;
  b.tail(d) = -lo;
  return {A, b};
}

bool HPolytope::contains(const Eigen::VectorXd & x, double tol) const
{
  if (x.size() != A_.cols()) { throw InvalidArgument("membership point dimension mismatch"); }
  return ((A_ * x - b_).array() <= tol).all();
}

double support(const Zonotope & z, const Eigen::VectorXd & direction)
{
  if (direction.size() != z.dim()) { throw InvalidArgument("support direction dimension mismatch"); }
  double s = direction.dot(z.center());
  if (z.num_generators() > 0) { s += (direction.transpose() * z.generators()).cwiseAbs().sum(); }
  return s;
}

Zonotope linear_map(const Eigen::MatrixXd & M, const Zonotope & z)
{
  if (M.cols() != z.dim()) { throw InvalidArgument("linear map dimension mismatch"); }
  return {M * z.center(), M * z.generators()};
}

Zonotope minkowski_sum(const Zonotope & a, const Zonotope & b)
{
  if (a.dim() != b.dim()) { throw InvalidArgument("Minkowski sum dimension mismatch"); }
  Eigen::MatrixXd G(a.dim(), a.num_generators() + b.num_generators());
  G << a.generators(), b.generators();
  return {a.center() + b.center(), G};
}

HPolytope pontryagin_diff(const HPolytope & poly, const Zonotope & z)
{
  if (poly.dim() != z.dim()) { throw InvalidArgument("Pontryagin difference dimension mismatch"); }
  const auto rows = poly.num_rows();
  Eigen::VectorXd b(rows);
  for (int i = 0; i < rows; ++i) { b(i) = poly.b()(i) - support(z, poly.A().row(i).transpose()); }

  // Opposite parallel faces must not cross.
  for (int i = 0; i < rows; ++i) {
    const Eigen::VectorXd ai = poly.A().row(i).transpose();
    const double ni = ai.norm();
    for (int j = i + 1; j < rows; ++j) {
      const Eigen::VectorXd aj = poly.A().row(j).transpose();
      const double nj = aj.norm();
      if ((ai / ni + aj / nj).cwiseAbs().maxCoeff() > 1e-12) { continue; }
      const double gap = b(i) / ni + b(j) / nj;
      if (gap < -1e-12 * std::max(1.0, std::abs(b(i) / ni))) {
        std::ostringstream msg;
        msg << "tightened set is empty: row " << j << " crosses row " << i << " (gap " << gap << ")";
        throw EmptyTightenedSet(msg.str(), j);
      }
    }
  }
  return {poly.A(), b};
}

RpiResult rpi_outer_approx(
  const std::vector<Eigen::MatrixXd> & vertex_maps, const Zonotope & W, const RpiOptions & opt)
{
  if (vertex_maps.empty()) { throw InvalidArgument("RPI computation needs at least one vertex map"); }
  if (!(opt.epsilon > 0)) { throw InvalidArgument("RPI epsilon must be positive"); }
  if (opt.max_depth < 1) { throw InvalidArgument("RPI max depth must be at least 1"); }
  const int d = W.dim();
  for (const auto & M : vertex_maps) {
    if (M.rows() != d || M.cols() != d) { throw InvalidArgument("vertex map dimension mismatch"); }
    require_finite(M, "vertex map");
  }

  RpiResult out;
  // Extent about the origin, per coordinate.
  auto extent = [](const Eigen::VectorXd & lo, const Eigen::VectorXd & hi) {
    return lo.cwiseAbs().cwiseMax(hi.cwiseAbs()).eval();
  };
  const Eigen::VectorXd w_half = W.interval_half_widths();
  const Eigen::VectorXd a0 = extent(W.center() - w_half, W.center() + w_half);
  const double a0_norm = a0.size() ? a0.maxCoeff() : 0.0;
  if (a0_norm == 0.0) {
    out.set = W;
    out.converged = true;
    return out;
  }

  // Terms beyond the first are boxes; their sum is kept as a single box.
  Eigen::VectorXd sum_center = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd sum_half = Eigen::VectorXd::Zero(d);

  Zonotope term = W;
  Eigen::VectorXd a_prev = a0;
  Eigen::VectorXd a_last = a0;
  int depth = 0;
  while (depth < opt.max_depth) {
    Eigen::VectorXd lo = Eigen::VectorXd::Constant(d, kInf);
    Eigen::VectorXd hi = Eigen::VectorXd::Constant(d, -kInf);
    for (const auto & M : vertex_maps) {
      const Zonotope img = linear_map(M, term);
      const Eigen::VectorXd h = img.interval_half_widths();
      lo = lo.cwiseMin(img.center() - h);
      hi = hi.cwiseMax(img.center() + h);
    }
    const Eigen::VectorXd c = 0.5 * (lo + hi);
    const Eigen::VectorXd h = (0.5 * (hi - lo)).cwiseMax(0.0);
    term = Zonotope::box(c, h);
    sum_center += c;
    sum_half += h;
    ++depth;
    a_prev = a_last;
    a_last = extent(lo, hi);
    if (a_last.maxCoeff() <= opt.epsilon * a0_norm) {
      out.converged = true;
      break;
    }
  }
  out.depth = depth;

  double rho = 0.0;
  for (int j = 0; j < d; ++j) {
    if (a_last(j) == 0.0) { continue; }
    if (a_prev(j) == 0.0) {
      rho = kInf;
      break;
    }
    rho = std::max(rho, a_last(j) / a_prev(j));
  }
  if (!(rho < 1.0)) {
    std::ostringstream msg;
    msg << "error dynamics show no contraction at depth " << depth << " (ratio " << rho << ")";
    throw NotContractive(msg.str());
  }
  if (rho > 0.99) {
    out.warnings.push_back("contraction ratio " + std::to_string(rho) + " clamped to 0.99");
    rho = 0.99;
  }
  if (!out.converged) {
    out.warnings.push_back(
      "maximum depth " + std::to_string(opt.max_depth) + " reached before the series converged");
  }
  out.contraction = rho;

  // Geometric tail beyond the last computed term.
  sum_half += (rho / (1.0 - rho)) * a_last;
  out.set = minkowski_sum(W, Zonotope::box(sum_center, sum_half));
  return out;
}

}  // namespace pvko
