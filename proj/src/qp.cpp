#include "pvko/qp.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/SparseCholesky>

#include "pvko/errors.hpp"

namespace pvko {

namespace {

using SpMat = Eigen::SparseMatrix<double>;
using Eigen::VectorXd;

// Bounds beyond this magnitude are treated as infinite.
constexpr double kBigBound = 1e19;

double inf_norm(const VectorXd & v) { return v.size() == 0 ? 0.0 : v.lpNorm<Eigen::Infinity>(); }

VectorXd project(const VectorXd & v, const VectorXd & lo, const VectorXd & hi)
{
  return v.cwiseMax(lo).cwiseMin(hi);
}

struct Scaling
{
  VectorXd D;  // variable scaling
  VectorXd E;  // constraint scaling
  double c{1.0};
};

double clamp_scale(double norm)
{
  if (norm < 1e-4) { return 1.0; }
  return std::clamp(1.0 / std::sqrt(norm), 1e-4, 1e4);
}

// Modified Ruiz equilibration of the KKT matrix [P A'; A 0] followed by cost scaling.
Scaling equilibrate(SpMat & P, VectorXd & q, SpMat & A, VectorXd & l, VectorXd & u, int iters)
{
  const Eigen::Index n = q.size();
  const Eigen::Index m = l.size();
  Scaling s{VectorXd::Ones(n), VectorXd::Ones(m), 1.0};

  for (int it = 0; it < iters; ++it) {
    VectorXd dn = VectorXd::Zero(n);
    VectorXd em = VectorXd::Zero(m);
    for (Eigen::Index k = 0; k < P.outerSize(); ++k) {
      for (SpMat::InnerIterator e(P, k); e; ++e) { dn(k) = std::max(dn(k), std::abs(e.value())); }
    }
    for (Eigen::Index k = 0; k < A.outerSize(); ++k) {
      for (SpMat::InnerIterator e(A, k); e; ++e) {
        dn(k) = std::max(dn(k), std::abs(e.value()));
        em(e.row()) = std::max(em(e.row()), std::abs(e.value()));
      }
    }
    for (Eigen::Index i = 0; i < n; ++i) { dn(i) = clamp_scale(dn(i)); }
    for (Eigen::Index i = 0; i < m; ++i) { em(i) = clamp_scale(em(i)); }

    P = dn.asDiagonal() * P * dn.asDiagonal();
    A = em.asDiagonal() * A * dn.asDiagonal();
    q = dn.cwiseProduct(q);
    l = em.cwiseProduct(l);
    u = em.cwiseProduct(u);
    s.D = s.D.cwiseProduct(dn);
    s.E = s.E.cwiseProduct(em);
  }

  if (iters > 0) {
    double mean_col = 0.0;
    for (Eigen::Index k = 0; k < P.outerSize(); ++k) {
      double cm = 0.0;
      for (SpMat::InnerIterator e(P, k); e; ++e) { cm = std::max(cm, std::abs(e.value())); }
      mean_col += cm;
    }
    mean_col = n > 0 ? mean_col / static_cast<double>(n) : 0.0;
    const double ref = std::max(mean_col, inf_norm(q));
    s.c = ref < 1e-4 ? 1.0 : std::clamp(1.0 / ref, 1e-4, 1e4);
    P *= s.c;
    q *= s.c;
  }
  return s;
}

class KktSolver
{
public:
  KktSolver(const SpMat & P, const SpMat & A, double sigma) : P_(P), A_(A), sigma_(sigma) {}

  void factor(const VectorXd & rho)
  {
    const Eigen::Index n = P_.rows();
    const Eigen::Index m = A_.rows();
    std::vector<Eigen::Triplet<double>> t;
    t.reserve(static_cast<std::size_t>(P_.nonZeros() + 2 * A_.nonZeros() + n + m));
    for (Eigen::Index k = 0; k < P_.outerSize(); ++k) {
      for (SpMat::InnerIterator e(P_, k); e; ++e) { t.emplace_back(e.row(), e.col(), e.value()); }
    }
    for (Eigen::Index i = 0; i < n; ++i) { t.emplace_back(i, i, sigma_); }
    for (Eigen::Index k = 0; k < A_.outerSize(); ++k) {
      for (SpMat::InnerIterator e(A_, k); e; ++e) {
        t.emplace_back(n + e.row(), e.col(), e.value());
        t.emplace_back(e.col(), n + e.row(), e.value());
      }
    }
    for (Eigen::Index i = 0; i < m; ++i) { t.emplace_back(n + i, n + i, -1.0 / rho(i)); }
    SpMat K(n + m, n + m);
    K.setFromTriplets(t.begin(), t.end());
    if (!analyzed_) {
      ldlt_.analyzePattern(K);
      analyzed_ = true;
    }
    ldlt_.factorize(K);
    if (ldlt_.info() != Eigen::Success) { throw NumericalError("KKT factorization failed"); }
  }

  VectorXd solve(const VectorXd & rhs) const { return ldlt_.solve(rhs); }

private:
  const SpMat & P_;
  const SpMat & A_;
  double sigma_;
  bool analyzed_{false};
  Eigen::SimplicialLDLT<SpMat, Eigen::Lower> ldlt_;
};

struct PolishOutcome
{
  VectorXd x;
  VectorXd y;
  bool ok{false};
};

// Solves the equality-constrained QP defined by the guessed active set in the unscaled space.
PolishOutcome polish(
  const QpProblem & qp, const VectorXd & z_hint, const VectorXd & y_hint, const QpSettings & st)
{
  const Eigen::Index n = qp.num_vars();
  const Eigen::Index m = qp.num_constraints();
  std::vector<Eigen::Index> rows;
  std::vector<double> rhs_b;
  for (Eigen::Index i = 0; i < m; ++i) {
    if (qp.l(i) == qp.u(i)) {
      rows.push_back(i);
      rhs_b.push_back(qp.l(i));
    } else if (qp.l(i) > -kBigBound && z_hint(i) - qp.l(i) < -y_hint(i)) {
      rows.push_back(i);
      rhs_b.push_back(qp.l(i));
    } else if (qp.u(i) < kBigBound && qp.u(i) - z_hint(i) < y_hint(i)) {
      rows.push_back(i);
      rhs_b.push_back(qp.u(i));
    }
  }
  const auto na = static_cast<Eigen::Index>(rows.size());
  SpMat Aact(na, n);
  {
    SpMat Arow = qp.A;  // column major; gather rows through a selection matrix
    std::vector<Eigen::Triplet<double>> sel;
    for (Eigen::Index k = 0; k < na; ++k) { sel.emplace_back(k, rows[k], 1.0); }
    SpMat S(na, m);
    S.setFromTriplets(sel.begin(), sel.end());
    Aact = S * Arow;
  }

  const double delta = 1e-9;
  std::vector<Eigen::Triplet<double>> t;
  std::vector<Eigen::Triplet<double>> te;
  for (Eigen::Index k = 0; k < qp.P.outerSize(); ++k) {
    for (SpMat::InnerIterator e(qp.P, k); e; ++e) {
      t.emplace_back(e.row(), e.col(), e.value());
      te.emplace_back(e.row(), e.col(), e.value());
    }
  }
  for (Eigen::Index i = 0; i < n; ++i) { t.emplace_back(i, i, delta); }
  for (Eigen::Index k = 0; k < Aact.outerSize(); ++k) {
    for (SpMat::InnerIterator e(Aact, k); e; ++e) {
      t.emplace_back(n + e.row(), e.col(), e.value());
      t.emplace_back(e.col(), n + e.row(), e.value());
      te.emplace_back(n + e.row(), e.col(), e.value());
      te.emplace_back(e.col(), n + e.row(), e.value());
    }
  }
  for (Eigen::Index i = 0; i < na; ++i) { t.emplace_back(n + i, n + i, -delta); }
  SpMat K(n + na, n + na);
  SpMat Kexact(n + na, n + na);
  K.setFromTriplets(t.begin(), t.end());
  Kexact.setFromTriplets(te.begin(), te.end());

  Eigen::SimplicialLDLT<SpMat, Eigen::Lower> ldlt(K);
  PolishOutcome out;
  if (ldlt.info() != Eigen::Success) { return out; }

  VectorXd rhs(n + na);
  rhs.head(n) = -qp.q;
  for (Eigen::Index k = 0; k < na; ++k) { rhs(n + k) = rhs_b[static_cast<std::size_t>(k)]; }
  VectorXd sol = ldlt.solve(rhs);
  for (int it = 0; it < st.polish_refine_iter; ++it) {
    sol += ldlt.solve(rhs - Kexact.selfadjointView<Eigen::Lower>() * sol);
  }
  if (!sol.allFinite()) { return out; }

  out.x = sol.head(n);
  out.y = VectorXd::Zero(m);
  for (Eigen::Index k = 0; k < na; ++k) { out.y(rows[k]) = sol(n + k); }
  // Sign consistency of multipliers with the bound they are attached to.
  const double sign_tol = 1e-9 * std::max(1.0, inf_norm(out.y));
  for (Eigen::Index k = 0; k < na; ++k) {
    const Eigen::Index i = rows[k];
    if (qp.l(i) == qp.u(i)) { continue; }
    const bool lower = rhs_b[static_cast<std::size_t>(k)] == qp.l(i);
    if (lower && out.y(i) > sign_tol) { return out; }
    if (!lower && out.y(i) < -sign_tol) { return out; }
  }
  out.ok = true;
  return out;
}

}  // namespace

const char * to_string(QpStatus s)
{
  switch (s) {
    case QpStatus::Optimal: return "Optimal";
    case QpStatus::Infeasible: return "Infeasible";
    case QpStatus::MaxIter: return "MaxIter";
  }
  return "Unknown";
}

void QpProblem::validate() const
{
  const Eigen::Index n = q.size();
  if (P.rows() != n || P.cols() != n) { throw InvalidArgument("QP Hessian shape mismatch"); }
  if (A.cols() != n) { throw InvalidArgument("QP constraint matrix column count mismatch"); }
  if (l.size() != A.rows() || u.size() != A.rows()) {
    throw InvalidArgument("QP bound vectors do not match constraint rows");
  }
  if (!q.allFinite()) { throw InvalidArgument("QP linear term is not finite"); }
  for (Eigen::Index i = 0; i < l.size(); ++i) {
    if (std::isnan(l(i)) || std::isnan(u(i))) { throw InvalidArgument("QP bound is NaN"); }
  }
}

double QpProblem::objective(const Eigen::VectorXd & x) const
{
  return 0.5 * x.dot(P * x) + q.dot(x);
}

double KktResiduals::max() const { return std::max({primal, dual, complementarity}); }

KktResiduals kkt_residuals(const QpProblem & qp, const VectorXd & x, const VectorXd & y)
{
  KktResiduals r;
  const VectorXd Ax = qp.A * x;
  r.primal = inf_norm(Ax - project(Ax, qp.l, qp.u));
  r.dual = inf_norm(qp.P * x + qp.q + qp.A.transpose() * y);
  double c = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (y(i) > 0) {
      c = std::max(c, qp.u(i) >= kBigBound ? y(i) : y(i) * std::abs(qp.u(i) - Ax(i)));
    } else if (y(i) < 0) {
      c = std::max(c, qp.l(i) <= -kBigBound ? -y(i) : -y(i) * std::abs(Ax(i) - qp.l(i)));
    }
  }
  r.complementarity = c;
  return r;
}

QpResult solve_qp(const QpProblem & qp, const QpSettings & st, const std::optional<QpWarmStart> & warm)
{
  qp.validate();
  const Eigen::Index n = qp.num_vars();
  const Eigen::Index m = qp.num_constraints();

  QpResult res;
  for (Eigen::Index i = 0; i < m; ++i) {
    if (qp.l(i) > qp.u(i) || qp.l(i) >= kBigBound || qp.u(i) <= -kBigBound) {
      res.status = QpStatus::Infeasible;
      res.x = VectorXd::Zero(n);
      res.y = VectorXd::Zero(m);
      return res;
    }
  }

  SpMat P = qp.P;
  SpMat A = qp.A;
  VectorXd q = qp.q;
  VectorXd l = qp.l.cwiseMax(-kInf);
  VectorXd u = qp.u;
  for (Eigen::Index i = 0; i < m; ++i) {
    if (l(i) <= -kBigBound) { l(i) = -kInf; }
    if (u(i) >= kBigBound) { u(i) = kInf; }
  }
  const Scaling sc = equilibrate(P, q, A, l, u, st.scaling_iter);
  const VectorXd Dinv = sc.D.cwiseInverse();
  const VectorXd Einv = sc.E.cwiseInverse();
  const double cinv = 1.0 / sc.c;

  // Per-row penalty: stiff on equalities, loose on free rows.
  double rho_bar = st.rho;
  VectorXd rho(m);
  auto set_rho = [&]() {
    for (Eigen::Index i = 0; i < m; ++i) {
      if (l(i) == -kInf && u(i) == kInf) {
        rho(i) = 1e-6;
      } else if (u(i) - l(i) < 1e-4 * sc.E(i) || l(i) == u(i)) {
        rho(i) = 1e3 * rho_bar;
      } else {
        rho(i) = rho_bar;
      }
    }
  };
  set_rho();

  KktSolver kkt(P, A, st.sigma);
  kkt.factor(rho);

  VectorXd x = VectorXd::Zero(n);
  VectorXd z = VectorXd::Zero(m);
  VectorXd y = VectorXd::Zero(m);
  if (warm && warm->x.size() == n) {
    x = Dinv.cwiseProduct(warm->x);
    z = project(A * x, l, u);
    if (warm->y.size() == m) { y = sc.c * Einv.cwiseProduct(warm->y); }
  }

  VectorXd rhs(n + m);
  VectorXd Ax;
  VectorXd Px;
  VectorXd Aty;
  double prim = kInf;
  double dual = kInf;
  double eps_prim = 0.0;
  double eps_dual = 0.0;
  int iter = 0;
  bool converged = false;

  for (iter = 1; iter <= st.max_iter; ++iter) {
    rhs.head(n) = st.sigma * x - q;
    rhs.tail(m) = z - y.cwiseQuotient(rho);
    const VectorXd sol = kkt.solve(rhs);
    const VectorXd x_tilde = sol.head(n);
    const VectorXd z_tilde = z + (sol.tail(m) - y).cwiseQuotient(rho);

    const VectorXd x_next = st.alpha * x_tilde + (1.0 - st.alpha) * x;
    const VectorXd z_relax = st.alpha * z_tilde + (1.0 - st.alpha) * z;
    const VectorXd z_next = project(z_relax + y.cwiseQuotient(rho), l, u);
    const VectorXd y_next = y + rho.cwiseProduct(z_relax - z_next);
    VectorXd dy = y_next - y;

    x = x_next;
    z = z_next;
    y = y_next;

    Ax = A * x;
    Px = P * x;
    Aty = A.transpose() * y;
    prim = inf_norm(Einv.cwiseProduct(Ax - z));
    dual = cinv * inf_norm(Dinv.cwiseProduct(Px + q + Aty));
    eps_prim = st.eps_abs +
               st.eps_rel * std::max(inf_norm(Einv.cwiseProduct(Ax)), inf_norm(Einv.cwiseProduct(z)));
    eps_dual = st.eps_abs + st.eps_rel * cinv *
                              std::max(
                                {inf_norm(Dinv.cwiseProduct(Px)), inf_norm(Dinv.cwiseProduct(Aty)),
                                 inf_norm(Dinv.cwiseProduct(q))});
    if (prim <= eps_prim && dual <= eps_dual) {
      converged = true;
      break;
    }

    // Primal infeasibility certificate from successive dual differences.
    for (Eigen::Index i = 0; i < m; ++i) {
      if (u(i) == kInf && l(i) == -kInf) {
        dy(i) = 0.0;
      } else if (u(i) == kInf) {
        dy(i) = std::min(dy(i), 0.0);
      } else if (l(i) == -kInf) {
        dy(i) = std::max(dy(i), 0.0);
      }
    }
    const double dy_norm = inf_norm(sc.E.cwiseProduct(dy));
    if (dy_norm > 1e-12) {
      const double at_dy = inf_norm(Dinv.cwiseProduct(A.transpose() * dy));
      double bound_term = 0.0;
      for (Eigen::Index i = 0; i < m; ++i) {
        if (dy(i) > 0) { bound_term += u(i) * dy(i); }
        if (dy(i) < 0) { bound_term += l(i) * dy(i); }
      }
      if (at_dy <= st.eps_infeasible * dy_norm && bound_term < -st.eps_infeasible * dy_norm) {
        res.status = QpStatus::Infeasible;
        res.certificate_norm = at_dy / dy_norm;
        res.iterations = iter;
        res.x = sc.D.cwiseProduct(x);
        res.y = cinv * sc.E.cwiseProduct(y);
        res.primal_residual = prim;
        res.dual_residual = dual;
        return res;
      }
    }

    // Early polish: once the iterate is close, the active set is usually settled and a single
    // reduced KKT solve finishes the job.
    if (st.polish && st.polish_interval > 0 && iter % st.polish_interval == 0 && prim <= 1e3 * eps_prim &&
        dual <= 1e3 * eps_dual) {
      auto pol = polish(qp, Einv.cwiseProduct(z), cinv * sc.E.cwiseProduct(y), st);
      if (pol.ok) {
        const auto r = kkt_residuals(qp, pol.x, pol.y);
        const double tol_p = st.eps_abs + st.eps_rel * inf_norm(qp.A * pol.x);
        const double tol_d = st.eps_abs + st.eps_rel * std::max(inf_norm(qp.q), inf_norm(qp.P * pol.x));
        if (r.primal <= tol_p && r.dual <= tol_d) {
          res.iterations = iter;
          res.x = pol.x;
          res.y = pol.y;
          res.primal_residual = r.primal;
          res.dual_residual = r.dual;
          res.polished = true;
          res.status = QpStatus::Optimal;
          res.objective = qp.objective(res.x);
          return res;
        }
      }
    }

    if (st.adaptive_rho && iter % st.adaptive_rho_interval == 0) {
      const double pn = inf_norm(Ax - z) / std::max({inf_norm(Ax), inf_norm(z), 1e-30});
      const double dn =
        inf_norm(Px + q + Aty) / std::max({inf_norm(Px), inf_norm(Aty), inf_norm(q), 1e-30});
      double rho_new = rho_bar * std::sqrt(pn / std::max(dn, 1e-30));
      rho_new = std::clamp(rho_new, 1e-6, 1e6);
      if (rho_new > 5.0 * rho_bar || rho_new < 0.2 * rho_bar) {
        rho_bar = rho_new;
        set_rho();
        kkt.factor(rho);
      }
    }
  }

  res.iterations = std::min(iter, st.max_iter);
  res.x = sc.D.cwiseProduct(x);
  res.y = cinv * sc.E.cwiseProduct(y);
  res.primal_residual = prim;
  res.dual_residual = dual;
  res.status = converged ? QpStatus::Optimal : QpStatus::MaxIter;

  if (st.polish) {
    const VectorXd z_unscaled = Einv.cwiseProduct(z);
    auto pol = polish(qp, z_unscaled, res.y, st);
    if (pol.ok) {
      const auto r = kkt_residuals(qp, pol.x, pol.y);
      const double tol_p = st.eps_abs + st.eps_rel * inf_norm(qp.A * pol.x);
      const double tol_d = st.eps_abs + st.eps_rel * std::max(inf_norm(qp.q), inf_norm(qp.P * pol.x));
      const bool within = r.primal <= tol_p && r.dual <= tol_d;
      const bool better = r.primal <= std::max(prim, 1e-300) && r.dual <= std::max(dual, 1e-300);
      if (within && (better || !converged)) {
        res.x = pol.x;
        res.y = pol.y;
        res.primal_residual = r.primal;
        res.dual_residual = r.dual;
        res.polished = true;
        res.status = QpStatus::Optimal;
      }
    }
  }
  res.objective = qp.objective(res.x);
  return res;
}

}  // namespace pvko
