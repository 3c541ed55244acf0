#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "pvko/edmd.hpp"
#include "pvko/lifting.hpp"
#include "pvko/pvko.hpp"

namespace pvko {

// ---------------------------------------------------------------------------------------------
// Plants

Eigen::Vector3d lorenz_rhs(const Eigen::Vector3d & x, double p);
/// One RK4 step with p held over the step.
Eigen::Vector3d lorenz_step(const Eigen::Vector3d & x, double p, double dt);

Eigen::Vector2d vdp_rhs(const Eigen::Vector2d & x, double u, double p);

enum class Integrator { Euler, Rk4 };

Eigen::Vector2d vdp_step(const Eigen::Vector2d & x, double u, double p, double dt, Integrator integ = Integrator::Euler);

/// Discrete-time plant advanced by one sampling interval.
class Plant
{
public:
  virtual ~Plant() = default;
  virtual std::string name() const = 0;
  virtual int state_dim() const = 0;
  virtual int input_dim() const = 0;
  virtual Eigen::VectorXd step(const Eigen::VectorXd & x, const Eigen::VectorXd & u, double p, double dt) const = 0;
  /// True when the plant state already lives in the lifted space of a model.
  virtual bool lifted() const { return false; }
};

class LorenzPlant : public Plant
{
public:
  std::string name() const override { return "lorenz"; }
  int state_dim() const override { return 3; }
  int input_dim() const override { return 0; }
  Eigen::VectorXd step(const Eigen::VectorXd & x, const Eigen::VectorXd & u, double p, double dt) const override;
};

class VanDerPolPlant : public Plant
{
public:
  explicit VanDerPolPlant(Integrator integ = Integrator::Euler) : integ_(integ) {}
  std::string name() const override { return "vdp"; }
  int state_dim() const override { return 2; }
  int input_dim() const override { return 1; }
  Eigen::VectorXd step(const Eigen::VectorXd & x, const Eigen::VectorXd & u, double p, double dt) const override;

private:
  Integrator integ_;
};

/// The nominal lifted model y+ = A(p) y + B(p) u used as its own plant (no disturbance).
class LiftedModelPlant : public Plant
{
public:
  explicit LiftedModelPlant(const PvkoModel & model) : model_(model) {}
  std::string name() const override { return "lifted_model"; }
  int state_dim() const override { return model_.lifted_dim(); }
  int input_dim() const override { return model_.input_dim(); }
  Eigen::VectorXd step(const Eigen::VectorXd & x, const Eigen::VectorXd & u, double p, double dt) const override;
  bool lifted() const override { return true; }

private:
  const PvkoModel & model_;
};

/// "lorenz" or "vdp"; throws ConfigError otherwise.
std::unique_ptr<Plant> make_plant(const std::string & name, Integrator integ = Integrator::Euler);

// ---------------------------------------------------------------------------------------------
// Parameter signals

struct SumOfSines
{
  double offset{0};
  Eigen::VectorXd amplitudes;
  Eigen::VectorXd frequencies;  ///< rad/s
};

struct RandomWalk
{
  double step_bound{0.02};
  double lo{1.0};
  double hi{5.0};
  double start{3.0};
  std::uint64_t seed{0};
};

struct ConstantSignal
{
  double value{0};
};

/// Zero-order hold through (t_i, p_i); undefined after the last time.
struct Schedule
{
  std::vector<double> times;
  std::vector<double> values;
};

/**
 * @brief Exogenous parameter p(t) sampled on the grid t = k dt.
 */
class ParameterSignal
{
public:
  using Variant = std::variant<SumOfSines, RandomWalk, ConstantSignal, Schedule>;

  ParameterSignal(Variant v, double dt);

  static ParameterSignal constant(double p, double dt) { return {ConstantSignal{p}, dt}; }

  /// offset + sum a_i sin(f_i t) with a ~ total * Dirichlet(1..1), f_i ~ U[0, max_frequency].
  static ParameterSignal random_sum_of_sines(
    double offset, double total_amplitude, int terms, double max_frequency, std::uint64_t seed, double dt);

  const Variant & kind() const { return v_; }
  double dt() const { return dt_; }

  /// p at step k (time k dt). Deterministic in (signal, k).
  double at_step(long k) const;

  /// p_0 .. p_{count-1}.
  std::vector<double> materialize(long count) const;

  /// Number of steps for which the signal is defined (-1 when unbounded).
  long defined_steps() const;

private:
  Variant v_;
  double dt_;
};

double sample_parameter(const ParameterSignal & sig, long step);

// ---------------------------------------------------------------------------------------------
// Data collection

struct CollectionOptions
{
  double duration{50.0};
  double dt{0.01};
  /// restart period; episodes start from uniform states in the domain box
  double episode_length{10.0};
  Box domain;
  /// admissible input box (ignored for autonomous plants)
  Eigen::VectorXd u_lo;
  Eigen::VectorXd u_hi;
  std::uint64_t seed{0};
};

/// Simulates at the constant working point p with uniform random inputs.
SnapshotSet collect_identification_data(const Plant & plant, double p, const CollectionOptions & opt);

// ---------------------------------------------------------------------------------------------
// Trajectories and metrics

struct Trajectory
{
  double dt{0.01};
  std::vector<Eigen::VectorXd> states;  ///< T + 1 physical states
  std::vector<Eigen::VectorXd> inputs;  ///< T inputs
  std::vector<double> params;           ///< T parameter values
  std::vector<double> stage_cost;
  std::vector<double> objective;        ///< optimal MPC objective per step
  std::vector<std::string> qp_status;
  std::vector<int> qp_iterations;
  std::vector<bool> clipped;
  std::vector<double> solve_seconds;

  long steps() const { return static_cast<long>(inputs.size()); }
};

/// 100 |vec(xhat - x)|_2 / |vec(x)|_2; columns are time steps. Throws on an all-zero truth.
double rmse(const Eigen::MatrixXd & actual, const Eigen::MatrixXd & predicted);

/// J_c(k) = sum_{i<=k} x_i' Q x_i + u_i' R u_i over the T control steps.
std::vector<double> cumulative_cost(const Trajectory & traj, const Eigen::MatrixXd & Qx, const Eigen::MatrixXd & R);

/// Writes t, x.., u.., p, stage_cost, J_star, qp_status, qp_iterations, clipped (one row per step).
void write_trajectory_csv(const std::string & path, const Trajectory & traj);

// ---------------------------------------------------------------------------------------------
// Monte Carlo prediction study

struct PredictionCampaign
{
  std::vector<double> working_points{20, 25, 30};
  CollectionOptions collection;
  Box center_box;                 ///< thin-plate center domain
  std::uint64_t center_seed{7};
  bool append_state{false};
  double truncation_tol{1e-10};
  int trials{100};
  int horizon_steps{200};
  std::vector<int> orders{50};
  /// sum-of-sines test signal
  double offset{25};
  double total_amplitude{5};
  int terms{20};
  double max_frequency{10};
  /// initial states: uniform in this box, then simulated for burn_in seconds at p = offset
  Box initial_box;
  double burn_in{3.0};
  std::uint64_t seed{1};
  int threads{1};
};

struct RmseStats
{
  int order{0};
  double pvko_mean{0};
  double pvko_std{0};
  double ti_mean{0};
  double ti_std{0};
};

/// Identifies PVKO and pooled time-invariant models per basis order from the campaign data and
/// compares their open-loop prediction RMSE on random sum-of-sines trials.
std::vector<RmseStats> monte_carlo_prediction(const PredictionCampaign & c);

/// Same, on already collected identification data (one set per working point).
std::vector<RmseStats> monte_carlo_prediction(const PredictionCampaign & c, std::span<const SnapshotSet> data);

/// Same, with another autonomous truth plant in place of the Lorenz system.
std::vector<RmseStats> monte_carlo_prediction(
  const PredictionCampaign & c, std::span<const SnapshotSet> data, const Plant & plant);

}  // namespace pvko
