#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pvko/io.hpp"
#include "pvko/mpc.hpp"
#include "pvko/simlab.hpp"

namespace pvko::cli {

/// Flags shared by every command.
struct GlobalOptions
{
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out{"."};
  int threads{1};
};

// ---------------------------------------------------------------------------------------------
// Configuration documents

struct BasisConfig
{
  std::string kind{"monomial"};   ///< monomial | thin_plate
  Eigen::MatrixXi exponents;      ///< monomial
  int num_centers{50};            ///< thin_plate
  Box center_box;                 ///< thin_plate
  std::uint64_t center_seed{7};
  bool append_state{false};

  LiftingBasis make(int state_dim) const;
};

struct CampaignConfig
{
  std::string plant;
  Integrator integrator{Integrator::Euler};
  double dt{0.01};
  std::vector<double> working_points;
  std::uint64_t seed{1};
  double duration{0};
  double episode_length{0};
  Box domain;
  Eigen::VectorXd u_lo, u_hi;
  double validation_duration{0};  ///< 0 disables the held-out validation data
  BasisConfig basis;
  double truncation_tol{1e-10};
  double disturbance_inflation{1.1};
  std::optional<PredictionCampaign> rmse_mc;

  CollectionOptions collection() const;
  CollectionOptions validation() const;
};

CampaignConfig parse_campaign(const JsonNode & n);

struct ControllerConfig
{
  std::string name{"controller"};
  int N{50};
  Eigen::MatrixXd Qx;
  Eigen::MatrixXd R;
  HPolytope state_set;
  HPolytope input_set;
  TerminalMode terminal{TerminalMode::EqualityToOrigin};
  Tightening tightening{Tightening::Rpi};
  GainObjective objective{GainObjective::MaxTraceS};
  std::optional<double> s_cap;
  RpiOptions rpi;
  std::optional<Eigen::MatrixXd> external_K;
  std::optional<Eigen::MatrixXd> external_P;
};

ControllerConfig parse_controller(const JsonNode & n);

struct ScenarioConfig
{
  std::string name{"run"};
  std::string plant{"vdp"};  ///< vdp | lorenz | lifted_model
  Integrator integrator{Integrator::Euler};
  Eigen::VectorXd x0;
  long steps{2000};
  double dt{0.01};
  ParameterSignal::Variant parameter{ConstantSignal{0.0}};
  Eigen::MatrixXd Qx;  ///< weight of the recorded stage cost; empty = identity
  bool warm_start{true};
};

ScenarioConfig parse_scenario(const JsonNode & n);

ParameterSignal::Variant parse_parameter_signal(const JsonNode & n);

// ---------------------------------------------------------------------------------------------
// Commands. Each validates every input before writing anything and returns 0 on success;
// errors propagate as exceptions (see exit_code).

int cmd_collect(const GlobalOptions & g);
int cmd_identify(const GlobalOptions & g, const std::string & data_dir, const std::string & kind);
int cmd_synthesize(const GlobalOptions & g, const std::string & model_path);
int cmd_simulate(const GlobalOptions & g, const std::string & controller_path);
int cmd_evaluate_rmse(const GlobalOptions & g);
int cmd_evaluate_costs(
  const GlobalOptions & g, const std::vector<std::string> & trajectories, const std::string & reference,
  std::optional<double> reference_cost);

/// 2 configuration/parse, 3 numerical, 4 I/O, 1 anything else.
int exit_code(const std::exception & e);

/// File naming for per-working-point data, e.g. snapshots_p2.5.csv.
std::string point_file(const std::string & stem, double p);

std::string sha256_file(const std::string & path);

}  // namespace pvko::cli
