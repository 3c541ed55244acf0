#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "commands.hpp"
#include "pvko/errors.hpp"
#include "pvko/random.hpp"

namespace fs = std::filesystem;
using pvko::Json;
using pvko::JsonNode;
using namespace pvko::cli;

namespace {

/// Fresh scratch directory per test.
fs::path scratch(const std::string & name)
{
  const fs::path d = fs::temp_directory_path() / ("pvko_cli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string write(const fs::path & p, const Json & j)
{
  std::ofstream(p) << j.dump(2);
  return p.string();
}

std::string slurp(const fs::path & p)
{
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

Json vdp_campaign(double duration)
{
  return {
    {"plant", "vdp"},
    {"dt", 0.01},
    {"working_points", {1, 2, 3, 4, 5}},
    {"seed", 3},
    {"collection",
     {{"duration", duration},
      {"episode_length", 10},
      {"domain", {{"lo", {-3.5, -3.5}}, {"hi", {3.5, 3.5}}}},
      {"input_box", {{"lo", {-3}}, {"hi", {3}}}}}},
    {"validation", {{"duration", duration / 5}}},
    {"basis", {{"kind", "monomial"}, {"exponents", "cubic_2d"}}},
  };
}

Json vdp_controller()
{
  return {
    {"name", "ctl"},
    {"N", 20},
    {"Qx", {{1, 0}, {0, 1}}},
    {"R", {{0.1}}},
    {"state_set", {{"lo", {-10, -10}}, {"hi", {10, 10}}}},
    {"input_set", {{"lo", {-3}}, {"hi", {3}}}},
    {"terminal", "tightened_state_set"},
    {"tightening", "none"},
    {"objective", "min_trace_P"},
  };
}

Json vdp_scenario(const std::string & name, long steps)
{
  return {
    {"name", name},
    {"plant", "vdp"},
    {"x0", {3, 0.5}},
    {"steps", steps},
    {"dt", 0.01},
    {"parameter", {{"kind", "random_walk"}, {"step_bound", 0.02}, {"lo", 1}, {"hi", 5}, {"start", 3}, {"seed", 1}}},
    {"Qx", {{1, 0}, {0, 1}}},
  };
}

template <class F>
std::string config_error(F && f)
{
  try {
    f();
  } catch (const pvko::ConfigError & e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Cli, FieldErrorsNameTheField)
{
  Json c = vdp_controller();
  c["N"] = "fifty";
  EXPECT_NE(config_error([&] { parse_controller(JsonNode(c, "")); }).find("field 'N'"), std::string::npos);
  c = vdp_controller();
  c["input_set"]["hi"] = {3, 4};
  EXPECT_NE(config_error([&] { parse_controller(JsonNode(c, "")); }).find("input_set"), std::string::npos);
  c = vdp_controller();
  c["horizon"] = 3;
  EXPECT_NE(config_error([&] { parse_controller(JsonNode(c, "")); }).find("field 'horizon': unknown field"), std::string::npos);
  Json s = vdp_scenario("x", 10);
  s["parameter"]["kind"] = "brownian";
  EXPECT_NE(config_error([&] { parse_scenario(JsonNode(s, "")); }).find("parameter.kind"), std::string::npos);
}

TEST(Cli, UnknownPlantIsAConfigError)
{
  Json c = vdp_campaign(10);
  c["plant"] = "duffing";
  const auto msg = config_error([&] { parse_campaign(JsonNode(c, "")); });
  EXPECT_NE(msg.find("field 'plant'"), std::string::npos) << msg;
  EXPECT_EQ(exit_code(pvko::ConfigError(msg)), 2);
}

TEST(Cli, SyntaxErrorsCarryLineAndColumn)
{
  const auto d = scratch("syntax");
  std::ofstream(d / "bad.json") << "{\n  \"plant\": \"vdp\",\n  \"dt\": 0.01,,\n}\n";
  const auto msg = config_error([&] { pvko::load_json((d / "bad.json").string()); });
  EXPECT_NE(msg.find("line 3"), std::string::npos) << msg;
  EXPECT_THROW(pvko::load_json((d / "missing.json").string()), pvko::IoError);
}

TEST(Cli, ExitCodes)
{
  EXPECT_EQ(exit_code(pvko::InvalidArgument("x")), 2);
  EXPECT_EQ(exit_code(pvko::QuadraticStabilityFailure("x", 0)), 3);
  EXPECT_EQ(exit_code(pvko::NotContractive("x")), 3);
  EXPECT_EQ(exit_code(pvko::IoError("x")), 4);
}

TEST(Cli, CollectWritesOneCsvPerWorkingPoint)
{
  const auto d = scratch("collect");
  GlobalOptions g;
  g.config = write(d / "campaign.json", vdp_campaign(20));
  g.out = (d / "out").string();
  ASSERT_EQ(cmd_collect(g), 0);
  for (int p = 1; p <= 5; ++p) {
    EXPECT_TRUE(fs::exists(d / "out" / point_file("snapshots", p)));
    EXPECT_TRUE(fs::exists(d / "out" / point_file("validation", p)));
  }
  const Json man = pvko::load_json((d / "out" / "manifest_collect.json").string());
  EXPECT_EQ(man["outputs"].size(), 10u);
  EXPECT_EQ(man["config"]["sha256"], sha256_file(g.config));
  for (const auto & o : man["outputs"]) {
    EXPECT_EQ(o["sha256"], sha256_file((d / "out" / o["file"].get<std::string>()).string()));
  }

  Json lorenz = {
    {"plant", "lorenz"},
    {"integrator", "rk4"},
    {"dt", 0.01},
    {"working_points", {20, 25, 30}},
    {"collection", {{"duration", 5}, {"episode_length", 1}, {"domain", {{"lo", {-25, -30, 0}}, {"hi", {25, 30, 55}}}}}},
    {"basis", {{"kind", "thin_plate"}, {"num_centers", 10}}},
  };
  g.config = write(d / "lorenz.json", lorenz);
  g.out = (d / "lorenz").string();
  ASSERT_EQ(cmd_collect(g), 0);
  int csvs = 0;
  for (const auto & e : fs::directory_iterator(d / "lorenz")) { csvs += e.path().extension() == ".csv" ? 1 : 0; }
  EXPECT_EQ(csvs, 3);
}

TEST(Cli, InvalidConfigWritesNothing)
{
  const auto d = scratch("nowrite");
  Json c = vdp_campaign(20);
  c["collection"]["episode_length"] = -1;
  GlobalOptions g;
  g.config = write(d / "campaign.json", c);
  g.out = (d / "out").string();
  EXPECT_THROW(cmd_collect(g), pvko::ConfigError);
  EXPECT_FALSE(fs::exists(d / "out"));
}

TEST(Cli, CollectAndIdentifyAreReproducible)
{
  const auto d = scratch("repro");
  GlobalOptions g;
  g.config = write(d / "campaign.json", vdp_campaign(30));
  for (const char * out : {"a", "b"}) {
    g.out = (d / out).string();
    ASSERT_EQ(cmd_collect(g), 0);
    ASSERT_EQ(cmd_identify(g, "", "both"), 0);
  }
  for (int p = 1; p <= 5; ++p) {
    EXPECT_EQ(slurp(d / "a" / point_file("snapshots", p)), slurp(d / "b" / point_file("snapshots", p)));
  }
  EXPECT_EQ(slurp(d / "a" / "model_pvko.json"), slurp(d / "b" / "model_pvko.json"));
  // a different seed changes the data
  g.seed = 99;
  g.out = (d / "c").string();
  ASSERT_EQ(cmd_collect(g), 0);
  EXPECT_NE(slurp(d / "a" / point_file("snapshots", 1)), slurp(d / "c" / point_file("snapshots", 1)));

  const Json m = pvko::load_json((d / "a" / "model_pvko.json").string());
  EXPECT_EQ(m["locals"].size(), 5u);
  EXPECT_EQ(m["training_residuals"].size(), 5u);
  EXPECT_FALSE(m["disturbance"].is_null());
  EXPECT_EQ(pvko::load_json((d / "a" / "model_ti.json").string())["locals"].size(), 1u);
}

TEST(Cli, IdentifyRecoversLtiFixture)
{
  const auto d = scratch("lti");
  Eigen::Matrix2d A0;
  A0 << 0.9, 0.1, 0.0, 0.8;
  const Eigen::Vector2d B0(0.0, 1.0);
  Json c = vdp_campaign(1);
  c["working_points"] = {2.0};
  c["basis"] = {{"kind", "monomial"}, {"exponents", {{1, 0}, {0, 1}}}};
  c.erase("validation");
  pvko::Rng rng(4, 0);
  pvko::SnapshotSet s;
  s.working_point = 2.0;
  s.X.resize(2, 60);
  s.U.resize(1, 60);
  // restart every step so the CSV holds independent excitation pairs
  for (int j = 0; j < 60; ++j) {
    s.X.col(j) = rng.uniform(Eigen::Vector2d(-1, -1), Eigen::Vector2d(1, 1));
    s.U(0, j) = rng.uniform(-1, 1);
  }
  s.Xplus = A0 * s.X + B0 * s.U;
  pvko::write_snapshot_csv((d / point_file("snapshots", 2.0)).string(), s, 0.01);
  GlobalOptions g;
  g.config = write(d / "campaign.json", c);
  g.out = d.string();
  ASSERT_EQ(cmd_identify(g, d.string(), "pvko"), 0);
  const auto m = pvko::model_from_json(JsonNode(pvko::load_json((d / "model_pvko.json").string()), ""));
  EXPECT_EQ(m.num_points(), 1);
  EXPECT_LE((m.locals()[0].A - A0).norm() / A0.norm(), 1e-8);
  EXPECT_LE((m.locals()[0].B - B0).norm() / B0.norm(), 1e-8);
}

TEST(Cli, IdentifyReportsMissingColumn)
{
  const auto d = scratch("missingcol");
  Json c = vdp_campaign(1);
  c["working_points"] = {1.0};
  std::ofstream(d / point_file("snapshots", 1.0)) << "t,x1,x2,p\n0,1,2,1\n0.01,1,2,1\n";
  GlobalOptions g;
  g.config = write(d / "campaign.json", c);
  g.out = d.string();
  EXPECT_THROW(cmd_identify(g, d.string(), "pvko"), pvko::ConfigError);
}

TEST(Cli, SynthesizeRejectsUnstabilizableModel)
{
  const auto d = scratch("unstable");
  const pvko::PvkoModel m(
    {pvko::LocalKoopman{1.0, 1.5 * Eigen::Matrix2d::Identity(), Eigen::Vector2d::Zero(), 3}}, Eigen::Matrix2d::Identity(),
    pvko::LiftingBasis::monomial(2, Eigen::Matrix2i::Identity()));
  write(d / "model.json", pvko::to_json(m));
  Json c = vdp_controller();
  c["tightening"] = "none";
  GlobalOptions g;
  g.config = write(d / "ctl.json", c);
  g.out = d.string();
  try {
    cmd_synthesize(g, (d / "model.json").string());
    FAIL() << "expected QuadraticStabilityFailure";
  } catch (const pvko::QuadraticStabilityFailure & e) {
    EXPECT_EQ(exit_code(e), 3);
  }
}

TEST(Cli, ExternalGainIsOnlyVerified)
{
  const auto d = scratch("external");
  Eigen::Matrix2d A;
  A << 0.5, 0.1, 0.0, 0.4;
  const pvko::PvkoModel m(
    {pvko::LocalKoopman{1.0, A, Eigen::Vector2d(0, 1), 3}}, Eigen::Matrix2d::Identity(),
    pvko::LiftingBasis::monomial(2, Eigen::Matrix2i::Identity()));
  write(d / "model.json", pvko::to_json(m));
  Json c = vdp_controller();
  c["external_gain"] = {{"K", {{0.0, 0.0}}}, {"P", {{10, 0}, {0, 10}}}};
  GlobalOptions g;
  g.config = write(d / "ctl.json", c);
  g.out = d.string();
  ASSERT_EQ(cmd_synthesize(g, (d / "model.json").string()), 0);
  // the bundle is named after the controller ("ctl") and replaces the config file of the same name
  const Json bundle = pvko::load_json((d / "ctl.json").string());
  EXPECT_TRUE(bundle["gain"]["solver"]["external"].get<bool>());
  const auto cfg = pvko::controller_from_json(JsonNode(bundle, ""));
  const auto margins = pvko::verify_certificate(m.locals(), cfg.gain.K, cfg.gain.P, cfg.Qlift, cfg.R);
  EXPECT_NEAR(margins[0], cfg.gain.margins[0], 1e-12);
}

TEST(Cli, SimulateAndCostTable)
{
  const auto d = scratch("simulate");
  GlobalOptions g;
  g.config = write(d / "campaign.json", vdp_campaign(1000));
  g.out = d.string();
  ASSERT_EQ(cmd_collect(g), 0);
  ASSERT_EQ(cmd_identify(g, "", "pvko"), 0);
  g.config = write(d / "ctl_cfg.json", vdp_controller());
  ASSERT_EQ(cmd_synthesize(g, (d / "model_pvko.json").string()), 0);
  const Json bundle = pvko::load_json((d / "ctl.json").string());
  for (const auto & mgn : bundle["gain"]["margins"]) { EXPECT_LE(mgn.get<double>(), 1e-6); }

  g.config = write(d / "scenario.json", vdp_scenario("short", 60));
  ASSERT_EQ(cmd_simulate(g, (d / "ctl.json").string()), 0);
  const std::string csv = slurp(d / "trajectory_short.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 61);
  EXPECT_EQ(csv.find('\r'), std::string::npos);
  EXPECT_TRUE(fs::exists(d / "plot_short.gp"));
  const Json man = pvko::load_json((d / "manifest_simulate_short.json").string());
  EXPECT_EQ(man["diagnostics"]["feasibility_violations"], 0);

  // rerun: identical trajectory bytes
  g.out = (d / "again").string();
  ASSERT_EQ(cmd_simulate(g, (d / "ctl.json").string()), 0);
  EXPECT_EQ(slurp(d / "again" / "trajectory_short.csv"), csv);

  // identical trajectories against each other: 0 %
  g.out = d.string();
  const std::string t = (d / "trajectory_short.csv").string();
  ASSERT_EQ(cmd_evaluate_costs(g, {"a=" + t, "b=" + (d / "again" / "trajectory_short.csv").string()}, t, std::nullopt), 0);
  const std::string table = slurp(d / "cost_table.csv");
  EXPECT_EQ(table.substr(0, table.find('\n')), "controller,final_cost,mean_solve_ms,cost_ratio_percent");
  EXPECT_NE(table.find(",0\n"), std::string::npos) << table;
  EXPECT_THROW(cmd_evaluate_costs(g, {t}, "", std::nullopt), pvko::ConfigError);
}

TEST(Cli, ShortScheduleIsRejectedBeforeWriting)
{
  const auto d = scratch("schedule");
  GlobalOptions g;
  g.config = write(d / "campaign.json", vdp_campaign(1000));
  g.out = d.string();
  ASSERT_EQ(cmd_collect(g), 0);
  ASSERT_EQ(cmd_identify(g, "", "pvko"), 0);
  g.config = write(d / "ctl_cfg.json", vdp_controller());
  ASSERT_EQ(cmd_synthesize(g, (d / "model_pvko.json").string()), 0);
  Json s = vdp_scenario("sched", 100);
  s["parameter"] = {{"kind", "schedule"}, {"times", {0.0, 0.5}}, {"values", {2.0, 3.0}}};
  g.config = write(d / "scenario.json", s);
  g.out = (d / "out").string();
  const auto msg = config_error([&] { cmd_simulate(g, (d / "ctl.json").string()); });
  EXPECT_NE(msg.find("whole prediction horizon"), std::string::npos) << msg;
  EXPECT_FALSE(fs::exists(d / "out"));
}

TEST(Cli, ModelJsonRoundTrip)
{
  const pvko::Box box{Eigen::Vector3d(-1, -1, -1), Eigen::Vector3d(1, 1, 1)};
  const auto basis = pvko::LiftingBasis::thin_plate(3, 6, box, 5, true);
  const Eigen::MatrixXd A = Eigen::MatrixXd::Random(9, 9);
  pvko::PvkoModel m({pvko::LocalKoopman{20, A, Eigen::MatrixXd(9, 0), 9}, pvko::LocalKoopman{30, 0.5 * A, Eigen::MatrixXd(9, 0), 9}},
                    Eigen::MatrixXd::Random(3, 9), basis);
  m.set_disturbance(pvko::Zonotope::box(Eigen::VectorXd::Zero(9), Eigen::VectorXd::Constant(9, 0.1)));
  const auto r = pvko::model_from_json(JsonNode(Json::parse(pvko::to_json(m).dump()), ""));
  EXPECT_EQ(r.locals()[1].A, m.locals()[1].A);
  EXPECT_EQ(r.C(), m.C());
  EXPECT_EQ(r.input_dim(), 0);
  const Eigen::Vector3d x(0.2, -0.3, 0.9);
  EXPECT_EQ(r.basis().lift(x), m.basis().lift(x));
  ASSERT_TRUE(r.disturbance().has_value());
  EXPECT_EQ(r.disturbance()->radius(), 0.1);
}
