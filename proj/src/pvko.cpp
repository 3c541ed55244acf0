#include "pvko/pvko.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "pvko/errors.hpp"

namespace pvko {

PvkoModel::PvkoModel(std::vector<LocalKoopman> locals, Eigen::MatrixXd C, LiftingBasis basis)
    : locals_(std::move(locals)), C_(std::move(C)), basis_(std::move(basis))
{
  if (locals_.empty()) { throw InvalidArgument("a model needs at least one working point"); }
  std::sort(locals_.begin(), locals_.end(), [](const auto & a, const auto & b) {
    return a.working_point < b.working_point;
  });
  const auto q = locals_.front().A.rows();
  const auto m = locals_.front().B.cols();
  for (std::size_t i = 0; i < locals_.size(); ++i) {
    const auto & l = locals_[i];
    if (!std::isfinite(l.working_point)) { throw InvalidArgument("working point is not finite"); }
    if (i > 0 && !(l.working_point > locals_[i - 1].working_point)) {
      throw InvalidArgument("working points must be strictly increasing");
    }
    if (l.A.rows() != q || l.A.cols() != q || l.B.rows() != q || l.B.cols() != m) {
      throw InvalidArgument("local model shapes differ between working points");
    }
    if (!l.A.allFinite() || !l.B.allFinite()) {
      throw InvalidArgument("local model contains non-finite entries");
    }
  }
  if (C_.cols() != q) { throw InvalidArgument("output map column count differs from lifted dimension"); }
  if (basis_.lifted_dim() != q || basis_.state_dim() != C_.rows()) {
    throw InvalidArgument("lifting basis does not match the model dimensions");
  }
}

void PvkoModel::set_disturbance(Zonotope w)
{
  if (w.dim() != lifted_dim()) { throw InvalidArgument("disturbance set dimension mismatch"); }
  disturbance_ = std::move(w);
}

Eigen::VectorXd PvkoModel::weights(double p) const
{
  if (!std::isfinite(p)) { throw InvalidArgument("parameter value is not finite"); }
  const auto l = locals_.size();
  Eigen::VectorXd w = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(l));
  if (p <= param_lo()) {
    w(0) = 1.0;
    return w;
  }
  if (p >= param_hi()) {
    w(static_cast<Eigen::Index>(l - 1)) = 1.0;
    return w;
  }
  std::size_t i = 0;
  while (i + 1 < l && locals_[i + 1].working_point < p) { ++i; }
  const double lo = locals_[i].working_point;
  const double hi = locals_[i + 1].working_point;
  const double a = (hi - p) / (hi - lo);
  w(static_cast<Eigen::Index>(i)) = a;
  w(static_cast<Eigen::Index>(i + 1)) = 1.0 - a;
  return w;
}

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> PvkoModel::evaluate(double p) const
{
  const Eigen::VectorXd w = weights(p);
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(locals_.front().A.rows(), locals_.front().A.cols());
  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(locals_.front().B.rows(), locals_.front().B.cols());
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    if (w(i) == 0.0) { continue; }
    if (w(i) == 1.0) { return {locals_[static_cast<std::size_t>(i)].A, locals_[static_cast<std::size_t>(i)].B}; }
    A += w(i) * locals_[static_cast<std::size_t>(i)].A;
    B += w(i) * locals_[static_cast<std::size_t>(i)].B;
  }
  return {A, B};
}

Eigen::MatrixXd predict(
  const PvkoModel & model, const Eigen::VectorXd & x0, const Eigen::MatrixXd & inputs,
  std::span<const double> params)
{
  if (x0.size() != model.state_dim()) { throw InvalidArgument("initial state dimension mismatch"); }
  const auto H = static_cast<Eigen::Index>(params.size());
  const int m = model.input_dim();
  if (m > 0 && (inputs.rows() != m || inputs.cols() != H)) {
    throw InvalidArgument("input sequence must be m x H with H = number of parameters");
  }
  if (m == 0 && inputs.size() != 0 && inputs.cols() != H) {
    throw InvalidArgument("input sequence length differs from parameter count");
  }
  Eigen::MatrixXd out(x0.size(), H + 1);
  out.col(0) = x0;
  Eigen::VectorXd y = model.basis().lift(x0);
  for (Eigen::Index k = 0; k < H; ++k) {
    const auto [A, B] = model.evaluate(params[static_cast<std::size_t>(k)]);
    Eigen::VectorXd next = A * y;
    if (m > 0) { next += B * inputs.col(k); }
    y = std::move(next);
    out.col(k + 1) = model.C() * y;
  }
  return out;
}

Zonotope estimate_disturbance_set(
  const PvkoModel & model, std::span<const SnapshotSet> validation, double inflation)
{
  if (validation.empty()) { throw InvalidArgument("no validation data for the disturbance set"); }
  if (!(inflation >= 1.0) || !std::isfinite(inflation)) {
    throw InvalidArgument("inflation must be a finite number >= 1");
  }
  const int q = model.lifted_dim();
  Eigen::VectorXd lo = Eigen::VectorXd::Constant(q, std::numeric_limits<double>::infinity());
  Eigen::VectorXd hi = -lo;
  Eigen::Index count = 0;
  for (const auto & s : validation) {
    if (s.size() == 0) { continue; }
    const auto lifted = lift_snapshots(model.basis(), s);
    const auto [A, B] = model.evaluate(s.working_point);
    Eigen::MatrixXd R = lifted.Yplus - A * lifted.Y;
    if (model.input_dim() > 0) { R -= B * s.U; }
    lo = lo.cwiseMin(R.rowwise().minCoeff());
    hi = hi.cwiseMax(R.rowwise().maxCoeff());
    count += s.size();
  }
  if (count == 0) { throw InvalidArgument("validation data contains no snapshot pairs"); }
  const Eigen::VectorXd center = 0.5 * (lo + hi);
  const Eigen::VectorXd half = (0.5 * (hi - lo)).cwiseMax(0.0) * inflation;
  return Zonotope::box(center, half);
}

namespace {

double relative_residual(const LocalKoopman & l, const LiftedSnapshots & d, const Eigen::MatrixXd & U)
{
  Eigen::MatrixXd R = d.Yplus - l.A * d.Y;
  if (U.rows() > 0) { R -= l.B * U; }
  const double den = d.Yplus.norm();
  return den > 0 ? R.norm() / den : R.norm();
}

}  // namespace

PvkoModel identify_pvko(
  const LiftingBasis & basis, std::span<const SnapshotSet> data, const IdentifyOptions & opt)
{
  if (data.empty()) { throw InvalidArgument("no identification data"); }
  std::vector<LocalKoopman> locals;
  std::vector<double> residuals;
  std::vector<LiftedSnapshots> lifted;
  Eigen::Index total = 0;
  for (const auto & s : data) {
    lifted.push_back(lift_snapshots(basis, s));
    locals.push_back(
      identify_local(lifted.back().Y, lifted.back().Yplus, s.U, opt.truncation_tol, s.working_point));
    residuals.push_back(relative_residual(locals.back(), lifted.back(), s.U));
    total += s.size();
  }
  Eigen::MatrixXd Y(basis.lifted_dim(), total);
  Eigen::MatrixXd X(basis.state_dim(), total);
  Eigen::Index at = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    Y.middleCols(at, data[i].size()) = lifted[i].Y;
    X.middleCols(at, data[i].size()) = data[i].X;
    at += data[i].size();
  }
  const Eigen::MatrixXd C = identify_output_map(Y, X, opt.truncation_tol);

  // Residuals follow the sorted order of the model.
  std::vector<std::size_t> order(locals.size());
  for (std::size_t i = 0; i < order.size(); ++i) { order[i] = i; }
  std::sort(order.begin(), order.end(), [&](auto a, auto b) {
    return locals[a].working_point < locals[b].working_point;
  });
  std::vector<double> sorted;
  for (auto i : order) { sorted.push_back(residuals[i]); }

  PvkoModel model(std::move(locals), C, basis);
  model.set_training_residuals(std::move(sorted));
  return model;
}

PvkoModel identify_time_invariant(
  const LiftingBasis & basis, std::span<const SnapshotSet> data, const IdentifyOptions & opt)
{
  if (data.empty()) { throw InvalidArgument("no identification data"); }
  SnapshotSet pooled = concatenate(data);
  double mean_p = 0.0;
  for (const auto & s : data) { mean_p += s.working_point; }
  pooled.working_point = mean_p / static_cast<double>(data.size());
  return identify_pvko(basis, std::span<const SnapshotSet>(&pooled, 1), opt);
}

}  // namespace pvko
