#include "pvko/synthesis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <limits>
#include <sstream>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "pvko/errors.hpp"
#include "pvko/qp.hpp"

namespace pvko {

namespace {

constexpr double kSqrt2 = 1.4142135623730951;

int svec_dim(int n) { return n * (n + 1) / 2; }

// Inverse of the scaled half-vectorization: off-diagonal entries carry a sqrt(2) factor.
Eigen::MatrixXd smat(const Eigen::Ref<const Eigen::VectorXd> & v, Eigen::Index n)
{
  Eigen::MatrixXd M(n, n);
  Eigen::Index k = 0;
  for (Eigen::Index j = 0; j < n; ++j) {
    M(j, j) = v(k++);
    for (Eigen::Index i = j + 1; i < n; ++i) {
      M(i, j) = v(k++) / kSqrt2;
      M(j, i) = M(i, j);
    }
  }
  return M;
}

using Blocks = std::vector<Eigen::MatrixXd>;

/**
 * Block-diagonal SDP in LMI form:
 *   minimize c'v  subject to  Z = C0 + sum_j v_j F_j >= 0,
 * paired with the dual  maximize -<C0, X>  s.t.  <F_j, X> = -c_j... written below in the
 * standard (X, y, Z) notation with A_j = -F_j, b = -c, C = C0.
 */
struct LmiProgram
{
  std::vector<int> orders;
  Blocks C;                   ///< constant term per block
  std::vector<Blocks> F;      ///< F[j][block]
  Eigen::VectorXd c;
};

struct IpmResult
{
  Eigen::VectorXd v;
  int iterations{0};
  double primal_infeasibility{0};
  double dual_infeasibility{0};
  double gap{0};
  bool converged{false};
  bool infeasible{false};
  bool unbounded{false};
};

double inner(const Blocks & a, const Blocks & b)
{
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) { s += a[k].cwiseProduct(b[k]).sum(); }
  return s;
}

double frob(const Blocks & a) { return std::sqrt(inner(a, a)); }

Blocks combine(const LmiProgram & P, const Eigen::VectorXd & v)
{
  Blocks out;
  for (std::size_t k = 0; k < P.orders.size(); ++k) { out.push_back(Eigen::MatrixXd::Zero(P.orders[k], P.orders[k])); }
  for (Eigen::Index j = 0; j < v.size(); ++j) {
    if (v(j) == 0.0) { continue; }
    for (std::size_t k = 0; k < out.size(); ++k) { out[k] += v(j) * P.F[static_cast<std::size_t>(j)][k]; }
  }
  return out;
}

Eigen::VectorXd apply_adjoint(const LmiProgram & P, const Blocks & X)
{
  Eigen::VectorXd out(static_cast<Eigen::Index>(P.F.size()));
  for (std::size_t j = 0; j < P.F.size(); ++j) { out(static_cast<Eigen::Index>(j)) = inner(P.F[j], X); }
  return out;
}

/// Largest step t <= cap such that X + t dX stays positive semidefinite.
double max_step(const Blocks & X, const Blocks & dX, double cap)
{
  double t = cap;
  for (std::size_t k = 0; k < X.size(); ++k) {
    const Eigen::LLT<Eigen::MatrixXd> llt(X[k]);
    const Eigen::MatrixXd Linv = llt.matrixL().solve(Eigen::MatrixXd::Identity(X[k].rows(), X[k].cols()));
    Eigen::MatrixXd M = Linv * dX[k] * Linv.transpose();
    M = 0.5 * (M + M.transpose());
    const double lmin = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(M, Eigen::EigenvaluesOnly).eigenvalues()(0);
    if (lmin < 0) { t = std::min(t, -1.0 / lmin); }
  }
  return t;
}

Blocks symmetrized(Blocks a)
{
  for (auto & m : a) { m = 0.5 * (m + m.transpose()).eval(); }
  return a;
}

/**
 * Infeasible primal-dual path-following method with the HKM search direction and a Mehrotra
 * predictor-corrector. Primal: min <C, X> s.t. <A_j, X> = b_j, X >= 0 with A_j = -F_j and
 * b = -c; dual: max b'y s.t. Z = C - sum y_j A_j >= 0, whose y is the LMI variable v.
 */
IpmResult solve_lmi_program(const LmiProgram & P, const SdpSettings & st)
{
  const auto nv = static_cast<Eigen::Index>(P.F.size());
  const std::size_t nb = P.orders.size();
  const Eigen::VectorXd b = -P.c;
  int total_order = 0;
  for (int o : P.orders) { total_order += o; }

  double max_f = 0.0;
  double xi = std::max(10.0, std::sqrt(static_cast<double>(total_order)));
  for (Eigen::Index j = 0; j < nv; ++j) {
    const double fn = frob(P.F[static_cast<std::size_t>(j)]);
    max_f = std::max(max_f, fn);
    xi = std::max(xi, (1.0 + std::abs(b(j))) / (1.0 + fn));
  }
  const double c_norm = frob(P.C);
  const double eta = std::max({10.0, std::sqrt(static_cast<double>(total_order)), c_norm, max_f});

  Blocks X, Z;
  for (int o : P.orders) {
    X.push_back(xi * Eigen::MatrixXd::Identity(o, o));
    Z.push_back(eta * Eigen::MatrixXd::Identity(o, o));
  }
  Eigen::VectorXd y = Eigen::VectorXd::Zero(nv);

  IpmResult res;
  std::vector<double> mu_history;
  for (int it = 0; it < st.max_iter; ++it) {
    // A' y with A_j = -F_j is -sum y_j F_j.
    const Blocks Fy = combine(P, y);
    Blocks Rd(nb);
    for (std::size_t k = 0; k < nb; ++k) { Rd[k] = P.C[k] + Fy[k] - Z[k]; }
    const Eigen::VectorXd AX = -apply_adjoint(P, X);
    const Eigen::VectorXd Rp = b - AX;
    const double pobj = inner(P.C, X);
    const double dobj = b.dot(y);
    const double gap = inner(X, Z);
    const double mu = gap / total_order;

    res.iterations = it;
    res.primal_infeasibility = Rp.norm() / (1.0 + b.norm());
    res.dual_infeasibility = frob(Rd) / (1.0 + c_norm);
    res.gap = gap / (1.0 + std::abs(pobj) + std::abs(dobj));
    if (std::getenv("PVKO_IPM_TRACE")) {
      std::fprintf(stderr, "%3d p %.2e d %.2e g %.2e pobj %.6e dobj %.6e mu %.2e\n", it, res.primal_infeasibility,
                   res.dual_infeasibility, res.gap, pobj, dobj, mu);
    }
    if (res.primal_infeasibility <= st.primal_tol && res.dual_infeasibility <= st.tol && res.gap <= st.tol) {
      res.converged = true;
      break;
    }
    // Stagnation close to the optimum: further iterations only trade primal accuracy around.
    mu_history.push_back(mu);
    if (mu_history.size() > 10 && res.dual_infeasibility <= st.tol && res.gap <= 1e-6 &&
        mu > 0.5 * mu_history[mu_history.size() - 11]) {
      break;
    }
    // LMI infeasible: X runs off along a ray with <A_j, X> bounded and <C, X> -> -infinity.
    if (pobj < 0 && AX.norm() <= 1e-8 * std::abs(pobj) && frob(X) > 1e8) {
      res.infeasible = true;
      break;
    }
    // Objective unbounded: y grows with the dual residual bounded.
    if (dobj > 0 && y.lpNorm<Eigen::Infinity>() > 1e10) {
      res.unbounded = true;
      break;
    }

    Blocks Zinv(nb);
    bool breakdown = false;
    for (std::size_t k = 0; k < nb; ++k) {
      const Eigen::LLT<Eigen::MatrixXd> llt(Z[k]);
      if (llt.info() != Eigen::Success) { breakdown = true; }
      Zinv[k] = llt.solve(Eigen::MatrixXd::Identity(Z[k].rows(), Z[k].cols()));
      Zinv[k] = 0.5 * (Zinv[k] + Zinv[k].transpose()).eval();
    }

    // Numerical breakdown near the optimum: keep the current iterate and let the caller judge it.
    if (breakdown) { break; }

    // Schur complement M_ij = tr(A_i X A_j Z^-1) = tr(F_i X F_j Z^-1).
    std::vector<Blocks> G(static_cast<std::size_t>(nv));
    for (Eigen::Index j = 0; j < nv; ++j) {
      auto & g = G[static_cast<std::size_t>(j)];
      g.resize(nb);
      for (std::size_t k = 0; k < nb; ++k) {
        const auto & Fj = P.F[static_cast<std::size_t>(j)][k];
        g[k] = Fj.isZero(0.0) ? Eigen::MatrixXd::Zero(Fj.rows(), Fj.cols()) : Eigen::MatrixXd(X[k] * Fj * Zinv[k]);
      }
    }
    Eigen::MatrixXd M(nv, nv);
    for (Eigen::Index i = 0; i < nv; ++i) {
      for (Eigen::Index j = i; j < nv; ++j) {
        M(i, j) = inner(P.F[static_cast<std::size_t>(i)], G[static_cast<std::size_t>(j)]);
        M(j, i) = M(i, j);
      }
    }
    const Eigen::LDLT<Eigen::MatrixXd> Mfac(M);
    if (Mfac.info() != Eigen::Success) { break; }
    // Near the optimum M is badly conditioned; refine against the unperturbed matrix.
    auto schur_solve = [&](const Eigen::VectorXd & rhs) {
      Eigen::VectorXd x = Mfac.solve(rhs);
      for (int r = 0; r < 3; ++r) { x += Mfac.solve(rhs - M * x); }
      return x;
    };

    // Direction for a complementarity target T: dX = T + X (A'dy) Z^-1 with M dy = Rp - A(T).
    auto direction = [&](const Blocks & T, Blocks & dX, Eigen::VectorXd & dy, Blocks & dZ) {
      dy = schur_solve(Rp + apply_adjoint(P, T));  // A(T) = -apply(F, T)
      const Blocks Fdy = combine(P, dy);   // A'dy = -Fdy
      dX.resize(nb);
      dZ.resize(nb);
      for (std::size_t k = 0; k < nb; ++k) {
        dZ[k] = Rd[k] + Fdy[k];
        dX[k] = T[k] - X[k] * Fdy[k] * Zinv[k];
      }
      dX = symmetrized(dX);
    };
    auto base_target = [&](double sigma_mu) {
      Blocks T(nb);
      for (std::size_t k = 0; k < nb; ++k) {
        T[k] = sigma_mu * Zinv[k] - X[k] - X[k] * Rd[k] * Zinv[k];
      }
      return T;
    };

    Blocks dXa, dZa;
    Eigen::VectorXd dya;
    direction(base_target(0.0), dXa, dya, dZa);
    const double ap = std::min(1.0, max_step(X, dXa, 1e6));
    const double ad = std::min(1.0, max_step(Z, dZa, 1e6));
    Blocks Xa(nb), Za(nb);
    for (std::size_t k = 0; k < nb; ++k) {
      Xa[k] = X[k] + ap * dXa[k];
      Za[k] = Z[k] + ad * dZa[k];
    }
    const double mu_aff = inner(Xa, Za) / total_order;
    const double sigma = std::clamp(std::pow(mu_aff / mu, 3.0), 0.0, 1.0);

    Blocks T = base_target(sigma * mu);
    for (std::size_t k = 0; k < nb; ++k) { T[k] -= dXa[k] * dZa[k] * Zinv[k]; }
    Blocks dX, dZ;
    Eigen::VectorXd dy;
    direction(T, dX, dy, dZ);
    const double gamma = 0.9 + 0.09 * std::min(ap, ad);
    const double sp = std::min(1.0, gamma * max_step(X, dX, 1e6));
    const double sd = std::min(1.0, gamma * max_step(Z, dZ, 1e6));
    for (std::size_t k = 0; k < nb; ++k) {
      X[k] += sp * dX[k];
      Z[k] += sd * dZ[k];
    }
    X = symmetrized(X);
    Z = symmetrized(Z);
    y += sd * dy;
    res.iterations = it + 1;
  }
  res.v = y;
  return res;
}

struct LmiLayout
{
  int q{0};
  int m{0};
  int ns{0};       ///< svec size of S
  int ny{0};       ///< entries of Y
  bool with_z{false};
  int nv() const { return ns + ny + (with_z ? ns : 0); }
};

struct Decoded
{
  Eigen::MatrixXd S;
  Eigen::MatrixXd Y;
  Eigen::MatrixXd Z;
};

Decoded decode(const Eigen::VectorXd & v, const LmiLayout & L)
{
  Decoded d;
  d.S = smat(v.head(L.ns), L.q);
  d.Y = Eigen::Map<const Eigen::MatrixXd>(v.data() + L.ns, L.m, L.q);
  if (L.with_z) { d.Z = smat(v.segment(L.ns + L.ny, L.ns), L.q); }
  return d;
}

Eigen::MatrixXd vertex_block(
  const LocalKoopman & loc, const Decoded & x, const Eigen::MatrixXd & Qh, const Eigen::MatrixXd & Rh,
  bool constant)
{
  const auto q = loc.A.rows();
  const auto m = loc.B.cols();
  const auto n = 3 * q + m;
  Eigen::MatrixXd F = Eigen::MatrixXd::Zero(n, n);
  const Eigen::MatrixXd AS = loc.A * x.S + loc.B * x.Y;
  F.block(0, 0, q, q) = x.S;
  F.block(q, 0, q, q) = AS;
  F.block(0, q, q, q) = AS.transpose();
  F.block(q, q, q, q) = x.S;
  F.block(2 * q, 0, q, q) = Qh * x.S;
  F.block(0, 2 * q, q, q) = (Qh * x.S).transpose();
  F.block(3 * q, 0, m, q) = Rh * x.Y;
  F.block(0, 3 * q, q, m) = (Rh * x.Y).transpose();
  if (constant) {
    F.block(2 * q, 2 * q, q, q).setIdentity();
    F.block(3 * q, 3 * q, m, m).setIdentity();
  }
  return F;
}

Eigen::MatrixXd epigraph_block(const Decoded & x, int q, bool constant)
{
  Eigen::MatrixXd F = Eigen::MatrixXd::Zero(2 * q, 2 * q);
  F.topLeftCorner(q, q) = x.Z;
  F.bottomRightCorner(q, q) = x.S;
  if (constant) {
    F.topRightCorner(q, q).setIdentity();
    F.bottomLeftCorner(q, q).setIdentity();
  }
  return F;
}

Eigen::MatrixXd cap_block(const Decoded & x, int q, double cap, bool constant)
{
  Eigen::MatrixXd F = -x.S;
  if (constant) { F += cap * Eigen::MatrixXd::Identity(q, q); }
  return F;
}

void check_weights(int q, int m, const Eigen::MatrixXd & Q, const Eigen::MatrixXd & R)
{
  if (Q.rows() != q || Q.cols() != q) { throw InvalidArgument("Q must be q x q"); }
  if (R.rows() != m || R.cols() != m) { throw InvalidArgument("R must be m x m"); }
  if (!Q.allFinite() || !R.allFinite()) { throw InvalidArgument("weights must be finite"); }
}

void check_locals(std::span<const LocalKoopman> locals)
{
  if (locals.empty()) { throw InvalidArgument("synthesis needs at least one vertex"); }
  const auto q = locals[0].A.rows();
  const auto m = locals[0].B.cols();
  for (const auto & l : locals) {
    if (l.A.rows() != q || l.A.cols() != q || l.B.rows() != q || l.B.cols() != m) {
      throw InvalidArgument("vertex model shapes differ");
    }
  }
}

}  // namespace

const char * to_string(GainObjective o)
{
  return o == GainObjective::MaxTraceS ? "max_trace_S" : "min_trace_P";
}

GainObjective gain_objective_from_string(const std::string & s)
{
  if (s == "max_trace_S") { return GainObjective::MaxTraceS; }
  if (s == "min_trace_P") { return GainObjective::MinTraceP; }
  throw ConfigError("unknown gain objective '" + s + "' (expected max_trace_S or min_trace_P)");
}

std::vector<Eigen::MatrixXd> closed_loop_maps(std::span<const LocalKoopman> locals, const Eigen::MatrixXd & K)
{
  std::vector<Eigen::MatrixXd> out;
  out.reserve(locals.size());
  for (const auto & l : locals) {
    if (K.rows() != l.B.cols() || K.cols() != l.A.rows()) { throw InvalidArgument("gain shape mismatch"); }
    out.emplace_back(l.A + l.B * K);
  }
  return out;
}

std::vector<double> verify_certificate(
  std::span<const LocalKoopman> locals, const Eigen::MatrixXd & K, const Eigen::MatrixXd & P,
  const Eigen::MatrixXd & Q, const Eigen::MatrixXd & R)
{
  check_locals(locals);
  const int q = static_cast<int>(locals[0].A.rows());
  const int m = static_cast<int>(locals[0].B.cols());
  check_weights(q, m, Q, R);
  if (P.rows() != q || P.cols() != q) { throw InvalidArgument("P must be q x q"); }
  if (K.rows() != m || K.cols() != q) { throw InvalidArgument("K must be m x q"); }
  if (!P.allFinite() || !K.allFinite()) { throw InvalidArgument("K and P must be finite"); }
  if ((P - P.transpose()).cwiseAbs().maxCoeff() > 1e-10 * std::max(1.0, P.cwiseAbs().maxCoeff())) {
    throw InvalidArgument("P is not symmetric");
  }
  const Eigen::MatrixXd Ps = 0.5 * (P + P.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Ps, Eigen::EigenvaluesOnly);
  if (!(es.eigenvalues().minCoeff() > 0.0)) { throw InvalidArgument("P is not positive definite"); }

  std::vector<double> margins;
  const Eigen::MatrixXd fixed = Q + K.transpose() * R * K;
  for (const auto & Ac : closed_loop_maps(locals, K)) {
    Eigen::MatrixXd M = Ac.transpose() * Ps * Ac - Ps + fixed;
    M = 0.5 * (M + M.transpose());
    es.compute(M, Eigen::EigenvaluesOnly);
    margins.push_back(es.eigenvalues().maxCoeff());
  }
  return margins;
}

Eigen::MatrixXd lift_weights(const Eigen::MatrixXd & Qx, const Eigen::MatrixXd & C)
{
  if (Qx.rows() != Qx.cols() || Qx.rows() != C.rows()) {
    throw InvalidArgument("state weight does not match the output map");
  }
  Eigen::MatrixXd Q = C.transpose() * Qx * C;
  Q = 0.5 * (Q + Q.transpose());
  Q.diagonal().array() += 1e-8;
  return Q;
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd & M)
{
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (M + M.transpose()));
  const Eigen::VectorXd s = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * s.asDiagonal() * es.eigenvectors().transpose();
}

TubeGain solve_gain(
  std::span<const LocalKoopman> locals, const Eigen::MatrixXd & Q, const Eigen::MatrixXd & R,
  GainObjective objective, const SdpSettings & st)
{
  check_locals(locals);
  LmiLayout L;
  L.q = static_cast<int>(locals[0].A.rows());
  L.m = static_cast<int>(locals[0].B.cols());
  L.ns = svec_dim(L.q);
  L.ny = L.m * L.q;
  L.with_z = objective == GainObjective::MinTraceP;
  check_weights(L.q, L.m, Q, R);
  {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (R + R.transpose()), Eigen::EigenvaluesOnly);
    if (L.m > 0 && !(es.eigenvalues().minCoeff() > 0)) { throw InvalidArgument("R must be positive definite"); }
    es.compute(0.5 * (Q + Q.transpose()), Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < -1e-12) { throw InvalidArgument("Q must be positive semidefinite"); }
  }
  if (st.s_cap && !(*st.s_cap > 0)) { throw InvalidArgument("S cap must be positive"); }

  const Eigen::MatrixXd Qh = psd_sqrt(Q);
  const Eigen::MatrixXd Rh = psd_sqrt(R);

  // Each block is an affine function of v; assemble its constant and linear parts.
  struct Block
  {
    int order;
    std::function<Eigen::MatrixXd(const Decoded &, bool)> eval;
  };
  std::vector<Block> blocks;
  for (const auto & loc : locals) {
    blocks.push_back({3 * L.q + L.m, [&loc, &Qh, &Rh](const Decoded & x, bool c) {
                        return vertex_block(loc, x, Qh, Rh, c);
                      }});
  }
  if (L.with_z) {
    blocks.push_back({2 * L.q, [q = L.q](const Decoded & x, bool c) { return epigraph_block(x, q, c); }});
  }
  if (st.s_cap) {
    blocks.push_back(
      {L.q, [q = L.q, cap = *st.s_cap](const Decoded & x, bool c) { return cap_block(x, q, cap, c); }});
  }

  const int nv = L.nv();
  LmiProgram prob;
  prob.c = Eigen::VectorXd::Zero(nv);
  prob.F.resize(static_cast<std::size_t>(nv));
  {
    const Decoded zero = decode(Eigen::VectorXd::Zero(nv), L);
    for (const auto & b : blocks) {
      Eigen::MatrixXd F0 = b.eval(zero, true);
      F0.diagonal().array() -= st.strictness;
      prob.C.push_back(F0);
      prob.orders.push_back(b.order);
      for (int j = 0; j < nv; ++j) {
        Eigen::VectorXd e = Eigen::VectorXd::Zero(nv);
        e(j) = 1.0;
        prob.F[static_cast<std::size_t>(j)].push_back(b.eval(decode(e, L), false));
      }
    }
  }
  // Objective on the diagonal entries of S (or Z).
  {
    int k = 0;
    for (int j = 0; j < L.q; ++j) {
      if (L.with_z) {
        prob.c(L.ns + L.ny + k) = 1.0;
      } else {
        prob.c(k) = -1.0;
      }
      k += L.q - j;
    }
  }

  // Vertex whose block has the smallest eigenvalue at the given iterate.
  auto worst_vertex = [&](const Decoded & x) {
    int worst = 0;
    double worst_eig = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < locals.size(); ++i) {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(blocks[i].eval(x, true), Eigen::EigenvaluesOnly);
      if (es.eigenvalues().minCoeff() < worst_eig) {
        worst_eig = es.eigenvalues().minCoeff();
        worst = static_cast<int>(i);
      }
    }
    return worst;
  };

  const IpmResult r = solve_lmi_program(prob, st);
  const Decoded x = decode(r.v, L);
  if (r.infeasible) {
    const int worst = worst_vertex(x);
    throw QuadraticStabilityFailure(
      "quadratic stability LMI is infeasible (most violated vertex " + std::to_string(worst) + ")", worst);
  }
  if (r.unbounded) {
    throw SolverStall("LMI objective is unbounded; bound S with an S cap");
  }

  TubeGain out;
  std::string reason;
  Eigen::LLT<Eigen::MatrixXd> llt(x.S);
  if (llt.info() == Eigen::Success) {
    Eigen::MatrixXd P = llt.solve(Eigen::MatrixXd::Identity(L.q, L.q));
    P = 0.5 * (P + P.transpose());
    const Eigen::MatrixXd K = x.Y * P;
    try {
      out.margins = verify_certificate(locals, K, P, Q, R);
      out.K = K;
      out.P = P;
    } catch (const InvalidArgument & e) {
      reason = e.what();
    }
  } else {
    reason = "S is not positive definite";
  }
  const double worst_margin =
    out.margins.empty() ? kInf : *std::max_element(out.margins.begin(), out.margins.end());
  if (!(worst_margin <= st.certificate_tol)) {
    if (!r.converged && r.primal_infeasibility > 1e-6) {
      const int worst = worst_vertex(x);
      throw QuadraticStabilityFailure(
        "LMI solver found no feasible point (relative residual " + std::to_string(r.dual_infeasibility) +
          ", most violated vertex " + std::to_string(worst) + ")",
        worst);
    }
    std::ostringstream msg;
    msg << "LMI solver did not produce a certified gain after " << r.iterations << " iterations";
    if (!reason.empty()) { msg << ": " << reason; }
    if (!out.margins.empty()) { msg << ": worst certificate margin " << worst_margin; }
    throw SolverStall(msg.str());
  }

  out.info.iterations = r.iterations;
  out.info.primal_residual = r.primal_infeasibility;
  out.info.dual_residual = r.dual_infeasibility;
  out.info.objective_kind = objective;
  out.info.objective = objective == GainObjective::MaxTraceS ? x.S.trace() : out.P.trace();
  return out;
}

TubeGain external_gain(
  std::span<const LocalKoopman> locals, const Eigen::MatrixXd & K, const Eigen::MatrixXd & P,
  const Eigen::MatrixXd & Q, const Eigen::MatrixXd & R)
{
  TubeGain out;
  out.margins = verify_certificate(locals, K, P, Q, R);
  out.K = K;
  out.P = 0.5 * (P + P.transpose());
  out.info.external = true;
  out.info.objective = out.P.trace();
  return out;
}

}  // namespace pvko
