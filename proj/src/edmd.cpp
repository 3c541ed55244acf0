#include "pvko/edmd.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <Eigen/SVD>

#include "pvko/errors.hpp"

namespace pvko {

namespace {

struct TruncatedSvd
{
  Eigen::MatrixXd U;
  Eigen::VectorXd sigma;
  Eigen::MatrixXd V;
};

TruncatedSvd truncated_svd(const Eigen::MatrixXd & M, double tol)
{
  Eigen::BDCSVD<Eigen::MatrixXd> svd(M, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd & s = svd.singularValues();
  if (s.size() == 0 || !(s(0) > 0.0)) { throw RankDeficient("data matrix has rank zero"); }
  const double cutoff = tol * s(0);
  Eigen::Index r = 0;
  while (r < s.size() && s(r) > cutoff) { ++r; }
  return {svd.matrixU().leftCols(r), s.head(r), svd.matrixV().leftCols(r)};
}

}  // namespace

void SnapshotSet::validate() const
{
  if (X.cols() == 0) { throw InvalidArgument("snapshot set is empty"); }
  if (X.rows() == 0) { throw InvalidArgument("snapshot states have zero dimension"); }
  if (Xplus.rows() != X.rows() || Xplus.cols() != X.cols()) {
    throw InvalidArgument("successor matrix shape differs from state matrix");
  }
  if (U.cols() != X.cols()) { throw InvalidArgument("input matrix column count differs"); }
  if (!X.allFinite() || !Xplus.allFinite() || !U.allFinite()) {
    throw InvalidArgument("snapshot data contains non-finite values");
  }
}

SnapshotSet concatenate(std::span<const SnapshotSet> sets)
{
  if (sets.empty()) { throw InvalidArgument("no snapshot sets to concatenate"); }
  Eigen::Index cols = 0;
  for (const auto & s : sets) {
    s.validate();
    if (s.X.rows() != sets[0].X.rows() || s.U.rows() != sets[0].U.rows()) {
      throw InvalidArgument("snapshot sets have inconsistent dimensions");
    }
    cols += s.size();
  }
  SnapshotSet out;
  out.working_point = sets[0].working_point;
  out.X.resize(sets[0].X.rows(), cols);
  out.Xplus.resize(sets[0].X.rows(), cols);
  out.U.resize(sets[0].U.rows(), cols);
  Eigen::Index at = 0;
  for (const auto & s : sets) {
    out.X.middleCols(at, s.size()) = s.X;
    out.Xplus.middleCols(at, s.size()) = s.Xplus;
    out.U.middleCols(at, s.size()) = s.U;
    at += s.size();
  }
  return out;
}

LiftedSnapshots lift_snapshots(const LiftingBasis & basis, const SnapshotSet & snaps)
{
  snaps.validate();
  if (snaps.state_dim() != basis.state_dim()) {
    throw InvalidArgument("snapshot state dimension does not match the lifting basis");
  }
  return {basis.lift_columns(snaps.X), basis.lift_columns(snaps.Xplus)};
}

Eigen::MatrixXd pseudo_inverse(const Eigen::MatrixXd & M, double truncation_tol)
{
  auto svd = truncated_svd(M, truncation_tol);
  return svd.V * svd.sigma.cwiseInverse().asDiagonal() * svd.U.transpose();
}

LocalKoopman identify_local(
  const Eigen::MatrixXd & Y, const Eigen::MatrixXd & Yplus, const Eigen::MatrixXd & U,
  double truncation_tol, double working_point)
{
  const Eigen::Index q = Y.rows();
  const Eigen::Index m = U.rows();
  if (Y.cols() == 0) { throw InvalidArgument("no snapshot columns"); }
  if (Yplus.rows() != q || Yplus.cols() != Y.cols() || U.cols() != Y.cols()) {
    throw InvalidArgument("lifted snapshot shapes are inconsistent");
  }
  if (Y.cols() < q + m) {
    throw InvalidArgument(
      "need at least " + std::to_string(q + m) + " snapshot columns, got " +
      std::to_string(Y.cols()));
  }
  if (!Y.allFinite() || !Yplus.allFinite() || !U.allFinite()) {
    throw InvalidArgument("lifted data contains non-finite values");
  }

  Eigen::MatrixXd Z(q + m, Y.cols());
  Z.topRows(q) = Y;
  if (m > 0) { Z.bottomRows(m) = U; }

  auto svd = truncated_svd(Z, truncation_tol);
  // [A B] = Y+ V S^-1 [U_A; U_B]^T
  const Eigen::MatrixXd W = (Yplus * svd.V) * svd.sigma.cwiseInverse().asDiagonal();
  LocalKoopman out;
  out.working_point = working_point;
  out.A = W * svd.U.topRows(q).transpose();
  out.B = W * svd.U.bottomRows(m).transpose();
  out.rank = static_cast<int>(svd.sigma.size());
  if (!out.A.allFinite() || !out.B.allFinite()) {
    throw RankDeficient("identified matrices are not finite");
  }
  return out;
}

Eigen::MatrixXd identify_output_map(
  const Eigen::MatrixXd & Y, const Eigen::MatrixXd & X, double truncation_tol)
{
  if (Y.cols() == 0 || X.cols() == 0) { throw InvalidArgument("output map needs data"); }
  if (Y.cols() != X.cols()) { throw InvalidArgument("column counts of X and Y differ"); }
  auto svd = truncated_svd(Y, truncation_tol);
  return ((X * svd.V) * svd.sigma.cwiseInverse().asDiagonal()) * svd.U.transpose();
}

void write_snapshot_csv(const std::string & path, const SnapshotSet & snaps, double dt)
{
  snaps.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) { throw IoError("cannot open " + path + " for writing"); }
  const int n = snaps.state_dim();
  const int m = snaps.input_dim();
  out << "t";
  for (int i = 0; i < n; ++i) { out << ",x" << i + 1; }
  for (int i = 0; i < m; ++i) { out << ",u" << i + 1; }
  out << ",p\n";
  out << std::setprecision(17);

  auto row = [&](double t, const Eigen::VectorXd & x, const Eigen::VectorXd & u) {
    out << t;
    for (int i = 0; i < n; ++i) { out << ',' << x(i); }
    for (int i = 0; i < m; ++i) { out << ',' << u(i); }
    out << ',' << snaps.working_point << '\n';
  };

  const Eigen::VectorXd zero_u = Eigen::VectorXd::Zero(m);
  long step = 0;
  for (Eigen::Index j = 0; j < snaps.size(); ++j) {
    const bool continues = j > 0 && snaps.X.col(j) == snaps.Xplus.col(j - 1);
    if (j > 0 && !continues) {
      row(static_cast<double>(step) * dt, snaps.Xplus.col(j - 1), zero_u);
      step = 0;
    }
    row(static_cast<double>(step) * dt, snaps.X.col(j), snaps.U.col(j));
    ++step;
  }
  row(static_cast<double>(step) * dt, snaps.Xplus.col(snaps.size() - 1), zero_u);
  if (!out) { throw IoError("failed writing " + path); }
}

SnapshotSet read_snapshot_csv(const std::string & path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) { throw IoError("cannot open " + path); }
  std::string line;
  if (!std::getline(in, line)) { throw ConfigError(path + ": missing header row"); }

  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) { header.push_back(cell); }
  }
  int n = 0;
  int m = 0;
  if (header.empty() || header.front() != "t") {
    throw ConfigError(path + ": first column must be 't'");
  }
  if (header.back() != "p") { throw ConfigError(path + ": last column must be 'p'"); }
  for (std::size_t c = 1; c + 1 < header.size(); ++c) {
    const auto & h = header[c];
    if (h == "x" + std::to_string(n + 1) && m == 0) {
      ++n;
    } else if (h == "u" + std::to_string(m + 1)) {
      ++m;
    } else {
      throw ConfigError(path + ": unexpected column '" + h + "' at position " + std::to_string(c));
    }
  }
  if (n == 0) { throw ConfigError(path + ": missing state columns x1..xn"); }

  const std::size_t width = header.size();
  std::vector<double> t;
  std::vector<std::vector<double>> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) { continue; }
    std::vector<double> vals;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        vals.push_back(std::stod(cell, &used));
        if (used != cell.size()) { throw std::invalid_argument(cell); }
      } catch (const std::exception &) {
        throw ConfigError(path + ":" + std::to_string(lineno) + ": cannot parse '" + cell + "'");
      }
    }
    if (vals.size() != width) {
      throw ConfigError(
        path + ":" + std::to_string(lineno) + ": expected " + std::to_string(width) +
        " fields, got " + std::to_string(vals.size()));
    }
    t.push_back(vals[0]);
    rows.push_back(std::move(vals));
  }

  std::vector<std::size_t> pairs;
  for (std::size_t r = 0; r + 1 < rows.size(); ++r) {
    if (t[r + 1] > t[r]) { pairs.push_back(r); }
  }
  if (pairs.empty()) { throw ConfigError(path + ": no snapshot pairs"); }

  SnapshotSet s;
  s.working_point = rows.front().back();
  s.X.resize(n, static_cast<Eigen::Index>(pairs.size()));
  s.Xplus.resize(n, s.X.cols());
  s.U.resize(m, s.X.cols());
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const auto & a = rows[pairs[k]];
    const auto & b = rows[pairs[k] + 1];
    for (int i = 0; i < n; ++i) {
      s.X(i, static_cast<Eigen::Index>(k)) = a[1 + i];
      s.Xplus(i, static_cast<Eigen::Index>(k)) = b[1 + i];
    }
    for (int i = 0; i < m; ++i) { s.U(i, static_cast<Eigen::Index>(k)) = a[1 + n + i]; }
  }
  return s;
}

}  // namespace pvko
