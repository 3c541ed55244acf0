#include <gtest/gtest.h>

#include "pvko/errors.hpp"
#include "pvko/mpc.hpp"

using pvko::MpcConfig;
using pvko::QpStatus;
using pvko::TerminalMode;
using pvko::Tightening;

namespace {

Eigen::MatrixXd m1(double v) { return Eigen::MatrixXd::Constant(1, 1, v); }

/// Two-vertex, identity-lifted, open-loop unstable 2-state system.
std::shared_ptr<const pvko::PvkoModel> two_vertex_model()
{
  Eigen::Matrix2d A1, A2;
  A1 << 1.0, 0.1, 0.0, 1.0;
  A2 << 1.0, 0.1, 0.05, 0.98;
  return std::make_shared<const pvko::PvkoModel>(
    std::vector<pvko::LocalKoopman>{{1.0, A1, Eigen::Vector2d(0.0, 0.1), 3}, {2.0, A2, Eigen::Vector2d(0.0, 0.12), 3}},
    Eigen::Matrix2d::Identity(), pvko::LiftingBasis::monomial(2, Eigen::Matrix2i::Identity()));
}

MpcConfig two_vertex_config(TerminalMode terminal, int N = 20)
{
  MpcConfig cfg;
  cfg.model = two_vertex_model();
  cfg.N = N;
  cfg.Qlift = Eigen::Matrix2d::Identity();
  cfg.R = m1(0.1);
  cfg.gain = pvko::solve_gain(cfg.model->locals(), cfg.Qlift, cfg.R, pvko::GainObjective::MinTraceP);
  cfg.state_set = pvko::HPolytope::box(Eigen::Vector2d(-5, -5), Eigen::Vector2d(5, 5));
  cfg.input_set = pvko::HPolytope::box(m1(-2), m1(2));
  cfg.terminal = terminal;
  cfg.tightening = Tightening::None;
  return cfg;
}

bool satisfies(const pvko::QpProblem & qp, const Eigen::VectorXd & z, double tol)
{
  const Eigen::VectorXd Az = qp.A * z;
  return ((Az - qp.l).array() >= -tol).all() && ((qp.u - Az).array() >= -tol).all();
}

}  // namespace

TEST(Mpc, SingleStepMatchesClosedForm)
{
  // scalar y+ = a y + b u, cost q y0^2 + r u^2 + P y1^2
  const double a = 0.9, b = 0.5, q = 1.0, r = 0.1, P = 2.0, y0 = 1.7;
  MpcConfig cfg;
  cfg.model = std::make_shared<const pvko::PvkoModel>(
    std::vector<pvko::LocalKoopman>{{0.0, m1(a), m1(b), 2}}, m1(1.0), pvko::LiftingBasis::monomial(1, Eigen::MatrixXi::Ones(1, 1)));
  cfg.N = 1;
  cfg.Qlift = m1(q);
  cfg.R = m1(r);
  cfg.Pterm = m1(P);
  cfg.gain.K = m1(0.0);
  cfg.gain.P = m1(P);
  cfg.state_set = pvko::HPolytope::box(m1(-1e6), m1(1e6));
  cfg.input_set = pvko::HPolytope::box(m1(-1e6), m1(1e6));
  cfg.terminal = TerminalMode::TightenedStateSet;
  cfg.tightening = Tightening::None;
  const std::vector<double> forecast{0.0};
  const auto qp = pvko::build_qp(cfg, m1(y0), forecast);
  const auto sol = pvko::solve_mpc_qp(cfg, qp);
  ASSERT_EQ(sol.status, QpStatus::Optimal);
  const double u_star = -(b * P * a * y0) / (b * P * b + r);
  EXPECT_NEAR(sol.nominal_inputs[0](0), u_star, 1e-8);
  const double y1 = a * y0 + b * u_star;
  EXPECT_NEAR(sol.objective, q * y0 * y0 + r * u_star * u_star + P * y1 * y1, 1e-8);
}

TEST(Mpc, OriginIsCostless)
{
  const auto cfg = two_vertex_config(TerminalMode::EqualityToOrigin);
  const std::vector<double> forecast(20, 1.5);
  const auto sol = pvko::solve_mpc_qp(cfg, pvko::build_qp(cfg, Eigen::Vector2d::Zero(), forecast));
  ASSERT_EQ(sol.status, QpStatus::Optimal);
  EXPECT_NEAR(sol.objective, 0.0, 1e-12);
  for (const auto & u : sol.nominal_inputs) { EXPECT_LE(u.norm(), 1e-9); }
}

TEST(Mpc, VanDerPolSizedProblemHas509Variables)
{
  Eigen::MatrixXd A = 0.5 * Eigen::MatrixXd::Identity(9, 9);
  const Eigen::MatrixXd B = Eigen::MatrixXd::Ones(9, 1);
  Eigen::MatrixXd C = Eigen::MatrixXd::Zero(2, 9);
  C(0, 0) = C(1, 1) = 1.0;
  MpcConfig cfg;
  cfg.model = std::make_shared<const pvko::PvkoModel>(
    std::vector<pvko::LocalKoopman>{{1.0, A, B, 10}}, C, pvko::LiftingBasis::monomial(2, pvko::cubic_monomials_2d()));
  cfg.N = 50;
  cfg.Qlift = pvko::lift_weights(Eigen::Matrix2d::Identity(), C);
  cfg.R = m1(0.1);
  cfg.gain.K = Eigen::MatrixXd::Zero(1, 9);
  cfg.gain.P = Eigen::MatrixXd::Identity(9, 9);
  cfg.state_set = pvko::HPolytope::box(Eigen::Vector2d(-10, -10), Eigen::Vector2d(10, 10));
  cfg.input_set = pvko::HPolytope::box(m1(-3), m1(3));
  cfg.tightening = Tightening::None;
  const std::vector<double> forecast(50, 1.0);
  const auto qp = pvko::build_qp(cfg, Eigen::Vector2d(3, 0.5), forecast);
  EXPECT_EQ(qp.num_vars(), 9 * 51 + 50);
}

TEST(Mpc, ShiftedSolutionIsFeasibleForTheNextProblem)
{
  const auto cfg = two_vertex_config(TerminalMode::EqualityToOrigin);
  std::vector<double> forecast(21);
  for (int k = 0; k < 21; ++k) { forecast[static_cast<std::size_t>(k)] = 1.0 + 0.05 * k; }
  const auto sol = pvko::solve_mpc_qp(cfg, pvko::build_qp(cfg, Eigen::Vector2d(1.0, -0.5), std::span(forecast).first(20)));
  ASSERT_EQ(sol.status, QpStatus::Optimal);
  // nominal successor, as produced by the disturbance-free lifted plant
  const auto next = pvko::build_qp_lifted(cfg, sol.nominal_states[1], std::span(forecast).subspan(1, 20));
  const Eigen::VectorXd cand = pvko::shifted_candidate(cfg, sol, forecast[20]);
  EXPECT_TRUE(satisfies(next, cand, 1e-6));
}

TEST(Mpc, NominalClosedLoopIsRecursivelyFeasibleAndDecreasing)
{
  const auto cfg = two_vertex_config(TerminalMode::EqualityToOrigin);
  const pvko::LiftedModelPlant plant(*cfg.model);
  const pvko::ParameterSignal sig(pvko::RandomWalk{0.05, 1.0, 2.0, 1.5, 3}, 0.1);
  const auto res = pvko::run_closed_loop(cfg, plant, Eigen::Vector2d(2.0, -1.0), sig, 150);
  EXPECT_EQ(res.feasibility_violations, 0);
  EXPECT_EQ(res.lyapunov_violations, 0);
  EXPECT_TRUE(res.events.empty());
  EXPECT_LE(res.trajectory.states.back().norm(), 1e-3);
}

TEST(Mpc, EquilibriumStaysAtRest)
{
  const auto cfg = two_vertex_config(TerminalMode::EqualityToOrigin);
  const pvko::LiftedModelPlant plant(*cfg.model);
  const auto res = pvko::run_closed_loop(cfg, plant, Eigen::Vector2d::Zero(), pvko::ParameterSignal::constant(1.5, 0.1), 30);
  for (const auto & u : res.trajectory.inputs) { EXPECT_LE(u.norm(), 1e-9); }
  for (const auto & x : res.trajectory.states) { EXPECT_LE(x.norm(), 1e-9); }
}

TEST(Mpc, InfeasibleFirstProblemThrows)
{
  const auto cfg = two_vertex_config(TerminalMode::EqualityToOrigin);
  const pvko::LiftedModelPlant plant(*cfg.model);
  EXPECT_THROW(
    pvko::run_closed_loop(cfg, plant, Eigen::Vector2d(8.0, 0.0), pvko::ParameterSignal::constant(1.5, 0.1), 5),
    pvko::InitialInfeasibility);
}

TEST(Mpc, ShortScheduleIsRejected)
{
  const auto cfg = two_vertex_config(TerminalMode::EqualityToOrigin);
  const pvko::LiftedModelPlant plant(*cfg.model);
  const pvko::ParameterSignal sig(pvko::Schedule{{0.0, 1.0}, {1.0, 2.0}}, 0.1);  // defined for 2 s = 20 steps
  try {
    pvko::run_closed_loop(cfg, plant, Eigen::Vector2d(1.0, 0.0), sig, 10);
    FAIL() << "expected InvalidArgument";
  } catch (const pvko::InvalidArgument & e) {
    EXPECT_NE(std::string(e.what()).find("whole prediction horizon"), std::string::npos) << e.what();
  }
}

TEST(Mpc, TubeLaw)
{
  const auto U = pvko::HPolytope::box(m1(-3), m1(3));
  Eigen::RowVectorXd K(9);
  K << -0.2036, -0.3152, 0.0117, 5.3363e-5, -0.0062, 0.0489, -0.0147, -4.3624e-5, 0.0035;
  const Eigen::VectorXd y0 = Eigen::VectorXd::LinSpaced(9, -1, 1);
  // zero error
  auto t = pvko::tube_control(m1(0.7), y0, y0, K, U);
  EXPECT_EQ(t.u(0), 0.7);
  EXPECT_FALSE(t.clipped);
  // K = 0
  t = pvko::tube_control(m1(0.7), y0, y0 + Eigen::VectorXd::Ones(9), Eigen::RowVectorXd::Zero(9), U);
  EXPECT_EQ(t.u(0), 0.7);
  // first gain entry
  t = pvko::tube_control(m1(0.0), y0, y0 + Eigen::VectorXd::Unit(9, 0), K, U);
  EXPECT_NEAR(t.u(0), -0.2036, 1e-15);
  EXPECT_FALSE(t.clipped);
  // saturation
  t = pvko::tube_control(m1(2.5), y0, y0 - 10 * Eigen::VectorXd::Unit(9, 0), K, U);
  EXPECT_DOUBLE_EQ(t.u(0), 3.0);
  EXPECT_TRUE(t.clipped);
}

TEST(Mpc, RpiTighteningShrinksConstraints)
{
  auto cfg = two_vertex_config(TerminalMode::TightenedStateSet);
  cfg.tightening = Tightening::Rpi;
  // half-widths chosen so that K S has support 0.5 along the input
  const double a = 0.5 / cfg.gain.K.cwiseAbs().sum();
  cfg.gain.rpi = pvko::Zonotope::box(Eigen::Vector2d::Zero(), Eigen::Vector2d(a, a));
  const auto t = pvko::tightened_sets(cfg);
  EXPECT_LE((t.state.b() - Eigen::VectorXd::Constant(4, 5.0 - a)).norm(), 1e-12);
  EXPECT_LE((t.input.b() - Eigen::Vector2d(1.5, 1.5)).norm(), 1e-12);
}

TEST(Mpc, ConfigValidation)
{
  auto cfg = two_vertex_config(TerminalMode::EqualityToOrigin);
  cfg.N = 0;
  EXPECT_THROW(pvko::validate(cfg), pvko::InvalidArgument);
  cfg = two_vertex_config(TerminalMode::EqualityToOrigin);
  cfg.R = Eigen::Matrix2d::Identity();
  EXPECT_THROW(pvko::validate(cfg), pvko::InvalidArgument);
  EXPECT_THROW(pvko::terminal_mode_from_string("sometimes"), pvko::ConfigError);
}
