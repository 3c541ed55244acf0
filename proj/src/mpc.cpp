#include "pvko/mpc.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "pvko/errors.hpp"

namespace pvko {

const char * to_string(TerminalMode m)
{
  return m == TerminalMode::EqualityToOrigin ? "equality_to_origin" : "tightened_state_set";
}

TerminalMode terminal_mode_from_string(const std::string & s)
{
  if (s == "equality_to_origin") { return TerminalMode::EqualityToOrigin; }
  if (s == "tightened_state_set") { return TerminalMode::TightenedStateSet; }
  throw ConfigError("unknown terminal mode '" + s + "' (expected equality_to_origin or tightened_state_set)");
}

const char * to_string(Tightening t) { return t == Tightening::Rpi ? "rpi" : "none"; }

Tightening tightening_from_string(const std::string & s)
{
  if (s == "rpi") { return Tightening::Rpi; }
  if (s == "none") { return Tightening::None; }
  throw ConfigError("unknown tightening '" + s + "' (expected rpi or none)");
}

const char * to_string(MpcEventKind k)
{
  return k == MpcEventKind::RecursiveFeasibilityViolation ? "recursive_feasibility_violation" : "lyapunov_violation";
}

namespace {

void require_square(const Eigen::MatrixXd & M, int n, const char * what)
{
  if (M.rows() != n || M.cols() != n) {
    throw InvalidArgument(std::string(what) + " must be " + std::to_string(n) + " x " + std::to_string(n));
  }
  if (!M.allFinite()) { throw InvalidArgument(std::string(what) + " must be finite"); }
  if ((M - M.transpose()).cwiseAbs().maxCoeff() > 1e-9 * std::max(1.0, M.cwiseAbs().maxCoeff())) {
    throw InvalidArgument(std::string(what) + " must be symmetric");
  }
}

struct Layout
{
  int q, m, N;
  Eigen::Index y(int k) const { return static_cast<Eigen::Index>(k) * q; }
  Eigen::Index u(int k) const { return static_cast<Eigen::Index>(q) * (N + 1) + static_cast<Eigen::Index>(k) * m; }
  Eigen::Index size() const { return u(N); }
  /// first row of the dynamics block of stage k (after the q initial-state rows)
  Eigen::Index dyn_row(int k) const { return q + static_cast<Eigen::Index>(k) * q; }
};

Layout layout_of(const MpcConfig & cfg)
{
  return {cfg.model->lifted_dim(), cfg.model->input_dim(), cfg.N};
}

MpcSolution unpack(const Layout & L, const Eigen::VectorXd & z)
{
  MpcSolution s;
  for (int k = 0; k <= L.N; ++k) { s.nominal_states.emplace_back(z.segment(L.y(k), L.q)); }
  for (int k = 0; k < L.N; ++k) { s.nominal_inputs.emplace_back(z.segment(L.u(k), L.m)); }
  s.x = z;
  return s;
}

/// Shift of `prev` inside the stacked layout of `qp`: the new initial state comes from the
/// QP's equality rows, the appended state from its last dynamics block.
Eigen::VectorXd shift_into(const MpcConfig & cfg, const Layout & L, const MpcSolution & prev, const QpProblem & qp)
{
  Eigen::VectorXd z = Eigen::VectorXd::Zero(L.size());
  for (int k = 0; k < L.N; ++k) { z.segment(L.y(k), L.q) = prev.nominal_states[static_cast<std::size_t>(k + 1)]; }
  for (int k = 0; k + 1 < L.N; ++k) { z.segment(L.u(k), L.m) = prev.nominal_inputs[static_cast<std::size_t>(k + 1)]; }
  z.segment(L.u(L.N - 1), L.m) = cfg.gain.K * prev.nominal_states.back();
  // Row block k reads y_{k+1} - A y_k - B u_k; with y_N zeroed it yields -(A y_{N-1} + B u_{N-1}).
  const Eigen::VectorXd r = (qp.A * z).segment(L.dyn_row(L.N - 1), L.q);
  z.segment(L.y(L.N), L.q) = -r;
  return z;
}

/// Dual counterpart of shift_into: stage-indexed row blocks move one stage forward, the
/// initial-state rows take the old first dynamics multipliers and the last stage starts at 0.
Eigen::VectorXd shift_duals(const MpcConfig & cfg, const Layout & L, const Eigen::VectorXd & y)
{
  const Eigen::Index q = L.q;
  const Eigen::Index sx = cfg.state_set.num_rows();
  const Eigen::Index su = cfg.input_set.num_rows();
  const Eigen::Index nt = cfg.terminal == TerminalMode::EqualityToOrigin ? q : sx;
  const Eigen::Index stage = sx + su;
  const Eigen::Index rows = q * (L.N + 1) + nt + L.N * stage;
  if (y.size() != rows) { return {}; }
  Eigen::VectorXd out = Eigen::VectorXd::Zero(rows);
  out.head(q) = y.segment(L.dyn_row(0), q);
  for (int k = 0; k + 1 < L.N; ++k) { out.segment(L.dyn_row(k), q) = y.segment(L.dyn_row(k + 1), q); }
  const Eigen::Index t0 = q * (L.N + 1);
  out.segment(t0, nt) = y.segment(t0, nt);
  const Eigen::Index s0 = t0 + nt;
  for (int k = 0; k + 1 < L.N; ++k) { out.segment(s0 + k * stage, stage) = y.segment(s0 + (k + 1) * stage, stage); }
  return out;
}

}  // namespace

void validate(const MpcConfig & cfg)
{
  if (!cfg.model) { throw InvalidArgument("MPC config has no model"); }
  if (cfg.N < 1) { throw InvalidArgument("prediction horizon must be at least 1"); }
  const int q = cfg.model->lifted_dim();
  const int m = cfg.model->input_dim();
  const int n = cfg.model->state_dim();
  if (m < 1) { throw InvalidArgument("MPC needs a model with inputs"); }
  require_square(cfg.Qlift, q, "lifted stage weight");
  require_square(cfg.R, m, "input weight");
  require_square(cfg.terminal_weight(), q, "terminal weight");
  if (cfg.gain.K.rows() != m || cfg.gain.K.cols() != q) { throw InvalidArgument("tube gain K must be m x q"); }
  if (cfg.state_set.dim() != n) { throw InvalidArgument("state set dimension differs from the model state"); }
  if (cfg.input_set.dim() != m) { throw InvalidArgument("input set dimension differs from the model input"); }
  if (cfg.tightening == Tightening::Rpi) {
    if (!cfg.gain.rpi) { throw InvalidArgument("RPI tightening needs the RPI set of the tube gain"); }
    if (cfg.gain.rpi->dim() != q) { throw InvalidArgument("RPI set dimension differs from the lifted state"); }
  }
  (void)tightened_sets(cfg);
}

TightenedSets tightened_sets(const MpcConfig & cfg)
{
  if (cfg.tightening == Tightening::None) { return {cfg.state_set, cfg.input_set}; }
  if (!cfg.gain.rpi) { throw InvalidArgument("RPI tightening needs the RPI set of the tube gain"); }
  const Zonotope & S = *cfg.gain.rpi;
  return {
    pontryagin_diff(cfg.state_set, linear_map(cfg.model->C(), S)),
    pontryagin_diff(cfg.input_set, linear_map(cfg.gain.K, S)),
  };
}

QpProblem build_qp(const MpcConfig & cfg, const Eigen::VectorXd & x0, std::span<const double> forecast)
{
  if (!cfg.model) { throw InvalidArgument("MPC config has no model"); }
  if (x0.size() != cfg.model->state_dim()) { throw InvalidArgument("initial state dimension differs from the model"); }
  return build_qp_lifted(cfg, cfg.model->basis().lift(x0), forecast);
}

QpProblem build_qp_lifted(const MpcConfig & cfg, const Eigen::VectorXd & y0, std::span<const double> forecast)
{
  validate(cfg);
  const Layout L = layout_of(cfg);
  if (y0.size() != L.q) { throw InvalidArgument("lifted initial state dimension differs from the model"); }
  if (!y0.allFinite()) { throw InvalidArgument("initial state is not finite"); }
  if (forecast.size() != static_cast<std::size_t>(L.N)) {
    throw InvalidArgument(
      "parameter forecast has " + std::to_string(forecast.size()) + " values; the horizon needs " +
      std::to_string(L.N));
  }
  const TightenedSets sets = tightened_sets(cfg);
  const Eigen::MatrixXd HxC = sets.state.A() * cfg.model->C();
  const Eigen::MatrixXd & Hu = sets.input.A();
  const Eigen::MatrixXd & Pf = cfg.terminal_weight();

  using Triplet = Eigen::Triplet<double>;
  std::vector<Triplet> hess;
  auto add_block = [](std::vector<Triplet> & t, Eigen::Index r0, Eigen::Index c0, const Eigen::MatrixXd & M, double s) {
    for (Eigen::Index j = 0; j < M.cols(); ++j) {
      for (Eigen::Index i = 0; i < M.rows(); ++i) {
        if (M(i, j) != 0.0) { t.emplace_back(r0 + i, c0 + j, s * M(i, j)); }
      }
    }
  };
  for (int k = 0; k < L.N; ++k) {
    add_block(hess, L.y(k), L.y(k), cfg.Qlift, 2.0);
    add_block(hess, L.u(k), L.u(k), cfg.R, 2.0);
  }
  add_block(hess, L.y(L.N), L.y(L.N), Pf, 2.0);

  const Eigen::Index n_terminal =
    cfg.terminal == TerminalMode::EqualityToOrigin ? L.q : static_cast<Eigen::Index>(HxC.rows());
  const Eigen::Index rows = static_cast<Eigen::Index>(L.q) * (L.N + 1) + n_terminal +
                            static_cast<Eigen::Index>(L.N) * (HxC.rows() + Hu.rows());
  std::vector<Triplet> cons;
  Eigen::VectorXd lo(rows), hi(rows);
  Eigen::Index r = 0;

  const Eigen::MatrixXd Iq = Eigen::MatrixXd::Identity(L.q, L.q);
  add_block(cons, r, L.y(0), Iq, 1.0);
  lo.segment(r, L.q) = y0;
  hi.segment(r, L.q) = y0;
  r += L.q;
  for (int k = 0; k < L.N; ++k) {
    const auto [A, B] = cfg.model->evaluate(forecast[static_cast<std::size_t>(k)]);
    add_block(cons, r, L.y(k + 1), Iq, 1.0);
    add_block(cons, r, L.y(k), A, -1.0);
    add_block(cons, r, L.u(k), B, -1.0);
    lo.segment(r, L.q).setZero();
    hi.segment(r, L.q).setZero();
    r += L.q;
  }
  if (cfg.terminal == TerminalMode::EqualityToOrigin) {
    add_block(cons, r, L.y(L.N), Iq, 1.0);
    lo.segment(r, L.q).setZero();
    hi.segment(r, L.q).setZero();
  } else {
    add_block(cons, r, L.y(L.N), HxC, 1.0);
    lo.segment(r, HxC.rows()).setConstant(-kInf);
    hi.segment(r, HxC.rows()) = sets.state.b();
  }
  r += n_terminal;
  for (int k = 0; k < L.N; ++k) {
    add_block(cons, r, L.y(k), HxC, 1.0);
    lo.segment(r, HxC.rows()).setConstant(-kInf);
    hi.segment(r, HxC.rows()) = sets.state.b();
    r += HxC.rows();
    add_block(cons, r, L.u(k), Hu, 1.0);
    lo.segment(r, Hu.rows()).setConstant(-kInf);
    hi.segment(r, Hu.rows()) = sets.input.b();
    r += Hu.rows();
  }

  QpProblem qp;
  qp.P.resize(L.size(), L.size());
  qp.P.setFromTriplets(hess.begin(), hess.end());
  qp.q = Eigen::VectorXd::Zero(L.size());
  qp.A.resize(rows, L.size());
  qp.A.setFromTriplets(cons.begin(), cons.end());
  qp.l = std::move(lo);
  qp.u = std::move(hi);
  return qp;
}

MpcSolution solve_mpc_qp(
  const MpcConfig & cfg, const QpProblem & qp, const MpcSolution * previous, const QpSettings & settings)
{
  if (!cfg.model) { throw InvalidArgument("MPC config has no model"); }
  const Layout L = layout_of(cfg);
  if (qp.num_vars() != L.size()) { throw InvalidArgument("QP size does not match the MPC layout"); }
  std::optional<QpWarmStart> warm;
  if (previous && previous->nominal_states.size() == static_cast<std::size_t>(L.N + 1) &&
      previous->nominal_inputs.size() == static_cast<std::size_t>(L.N)) {
    warm = QpWarmStart{shift_into(cfg, L, *previous, qp), shift_duals(cfg, L, previous->y)};
    if (warm->y.size() != qp.num_constraints()) { warm->y.resize(0); }
  }
  const QpResult res = solve_qp(qp, settings, warm);
  MpcSolution s = unpack(L, res.x);
  s.y = res.y;
  s.status = res.status;
  s.iterations = res.iterations;
  s.objective = res.objective;
  s.certificate_norm = res.certificate_norm;
  s.kkt_residual = res.status == QpStatus::Infeasible ? kInf : kkt_residuals(qp, res.x, res.y).max();
  return s;
}

Eigen::VectorXd shifted_candidate(const MpcConfig & cfg, const MpcSolution & sol, double p_last)
{
  if (!cfg.model) { throw InvalidArgument("MPC config has no model"); }
  const Layout L = layout_of(cfg);
  if (sol.nominal_states.size() != static_cast<std::size_t>(L.N + 1) ||
      sol.nominal_inputs.size() != static_cast<std::size_t>(L.N)) {
    throw InvalidArgument("solution does not match the MPC horizon");
  }
  Eigen::VectorXd z(L.size());
  for (int k = 0; k < L.N; ++k) { z.segment(L.y(k), L.q) = sol.nominal_states[static_cast<std::size_t>(k + 1)]; }
  for (int k = 0; k + 1 < L.N; ++k) { z.segment(L.u(k), L.m) = sol.nominal_inputs[static_cast<std::size_t>(k + 1)]; }
  const Eigen::VectorXd & yN = sol.nominal_states.back();
  const Eigen::VectorXd uN = cfg.gain.K * yN;
  z.segment(L.u(L.N - 1), L.m) = uN;
  const auto [A, B] = cfg.model->evaluate(p_last);
  z.segment(L.y(L.N), L.q) = A * yN + B * uN;
  return z;
}

TubeInput tube_control(
  const Eigen::VectorXd & u0, const Eigen::VectorXd & y0, const Eigen::VectorXd & y, const Eigen::MatrixXd & K,
  const HPolytope & input_set)
{
  if (y.size() != y0.size() || K.cols() != y.size() || K.rows() != u0.size() || input_set.dim() != u0.size()) {
    throw InvalidArgument("tube control dimension mismatch");
  }
  TubeInput out;
  out.u = u0 + K * (y - y0);
  const Eigen::MatrixXd & H = input_set.A();
  const Eigen::VectorXd & b = input_set.b();
  const double tol = 1e-12;

  for (Eigen::Index i = 0; i < H.rows(); ++i) {
    Eigen::Index j;
    H.row(i).cwiseAbs().maxCoeff(&j);
    if (std::abs(H(i, j)) != H.row(i).cwiseAbs().sum()) { continue; }  // not axis-aligned
    const double bound = b(i) / H(i, j);
    if (H(i, j) > 0 && out.u(j) > bound + tol * std::max(1.0, std::abs(bound))) {
      out.u(j) = bound;
      out.clipped = true;
    } else if (H(i, j) < 0 && out.u(j) < bound - tol * std::max(1.0, std::abs(bound))) {
      out.u(j) = bound;
      out.clipped = true;
    }
  }
  // Remaining rows: largest step along u0 -> u that stays inside.
  const Eigen::VectorXd d = out.u - u0;
  double t = 1.0;
  for (Eigen::Index i = 0; i < H.rows(); ++i) {
    const double slack = b(i) - H.row(i).dot(out.u);
    if (slack >= -tol * std::max(1.0, std::abs(b(i)))) { continue; }
    const double rate = H.row(i).dot(d);
    if (rate > 0) { t = std::min(t, std::max(0.0, (b(i) - H.row(i).dot(u0)) / rate)); }
  }
  if (t < 1.0) {
    out.u = u0 + t * d;
    out.clipped = true;
  }
  return out;
}

ClosedLoopResult run_closed_loop(
  const MpcConfig & cfg, const Plant & plant, const Eigen::VectorXd & x0, const ParameterSignal & signal,
  long steps, const ClosedLoopOptions & opt)
{
  validate(cfg);
  if (steps < 1) { throw InvalidArgument("closed loop needs at least one step"); }
  const PvkoModel & model = *cfg.model;
  const Layout L = layout_of(cfg);
  if (plant.lifted()) {
    if (plant.state_dim() != L.q || plant.input_dim() != L.m) {
      throw InvalidArgument("lifted plant does not match the model dimensions");
    }
  } else if (plant.state_dim() != model.state_dim() || plant.input_dim() != L.m) {
    throw InvalidArgument("plant dimensions differ from the model");
  }
  if (x0.size() != plant.state_dim()) { throw InvalidArgument("initial state dimension differs from the plant"); }
  if (opt.stage_state_weight.size() &&
      (opt.stage_state_weight.rows() != x0.size() || opt.stage_state_weight.cols() != x0.size())) {
    throw InvalidArgument("stage state weight does not match the plant state");
  }

  // The parameter must be known over every horizon of the run (fails here for short schedules).
  const std::vector<double> params = signal.materialize(steps + L.N - 1);
  const bool check_lyapunov = opt.check_lyapunov.value_or(plant.lifted());
  std::optional<Zonotope> tube;
  if (cfg.gain.rpi) {
    const double s = 1.0 + opt.tube_slack;
    tube = Zonotope(s * cfg.gain.rpi->center(), s * cfg.gain.rpi->generators());
  }

  ClosedLoopResult out;
  Trajectory & tr = out.trajectory;
  tr.dt = signal.dt();
  Eigen::VectorXd x = x0;
  tr.states.push_back(x);
  std::optional<MpcSolution> prev;
  std::optional<Eigen::VectorXd> predicted;  // y_{1|t-1}
  double prev_objective = 0.0;
  bool prev_optimal = false;

  for (long t = 0; t < steps; ++t) {
    const Eigen::VectorXd y = plant.lifted() ? x : model.basis().lift(x);
    if (!y.allFinite()) { throw NumericalError("closed-loop state diverged at step " + std::to_string(t)); }
    if (tube && predicted) {
      ++out.tube_checks;
      if (!tube->contains(y - *predicted, 1e-9)) { ++out.tube_violations; }
    }

    const auto t0 = std::chrono::steady_clock::now();
    const QpProblem qp = build_qp_lifted(cfg, y, std::span<const double>(params).subspan(static_cast<std::size_t>(t), static_cast<std::size_t>(L.N)));
    MpcSolution sol = solve_mpc_qp(cfg, qp, opt.warm_start && prev ? &*prev : nullptr, opt.qp);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    if (sol.status == QpStatus::Infeasible) {
      if (t == 0) {
        std::ostringstream msg;
        msg << "the first MPC problem is infeasible (certificate norm " << sol.certificate_norm
            << "); the initial state violates the tightened constraints or cannot reach the terminal set";
        throw InitialInfeasibility(msg.str());
      }
      ++out.feasibility_violations;
      out.events.push_back({MpcEventKind::RecursiveFeasibilityViolation, t, "QP infeasible; applying the shifted previous plan"});
      MpcSolution fallback = unpack(L, shift_into(cfg, L, *prev, qp));
      fallback.status = QpStatus::Infeasible;
      fallback.iterations = sol.iterations;
      fallback.objective = kInf;
      sol = std::move(fallback);
    }
    const bool optimal = sol.status == QpStatus::Optimal;
    if (check_lyapunov && prev_optimal && optimal && sol.objective > prev_objective + opt.lyapunov_tol) {
      ++out.lyapunov_violations;
      std::ostringstream msg;
      msg.precision(17);
      msg << "J* rose from " << prev_objective << " to " << sol.objective;
      out.events.push_back({MpcEventKind::LyapunovViolation, t, msg.str()});
    }

    const TubeInput u = tube_control(sol.nominal_inputs.front(), sol.nominal_states.front(), y, cfg.gain.K, cfg.input_set);
    const double p = params[static_cast<std::size_t>(t)];
    tr.inputs.push_back(u.u);
    tr.params.push_back(p);
    const double state_cost = opt.stage_state_weight.size() ? x.dot(opt.stage_state_weight * x) : y.dot(cfg.Qlift * y);
    tr.stage_cost.push_back(state_cost + u.u.dot(cfg.R * u.u));
    tr.objective.push_back(sol.objective);
    tr.qp_status.emplace_back(to_string(sol.status));
    tr.qp_iterations.push_back(sol.iterations);
    tr.clipped.push_back(u.clipped);
    tr.solve_seconds.push_back(seconds);

    x = plant.step(x, u.u, p, tr.dt);
    tr.states.push_back(x);
    const auto [A, B] = model.evaluate(p);
    predicted = A * sol.nominal_states.front() + B * u.u;
    prev_objective = sol.objective;
    prev_optimal = optimal;
    prev = std::move(sol);
  }
  return out;
}

}  // namespace pvko
