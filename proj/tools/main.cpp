#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"

int main(int argc, char ** argv)
{
  using namespace pvko::cli;

  CLI::App app{"Parameter-varying Koopman MPC toolkit: data collection, identification, synthesis and simulation"};
  app.require_subcommand(1);

  GlobalOptions g;
  std::uint64_t seed = 0;
  auto add_globals = [&](CLI::App * sub, bool needs_config) {
    auto * c = sub->add_option("--config", g.config, "JSON configuration file");
    if (needs_config) { c->required(); }
    c->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "override the configured seed");
    sub->add_option("--out", g.out, "output directory")->capture_default_str();
    sub->add_option("--threads", g.threads, "worker threads (Monte Carlo only)")->check(CLI::PositiveNumber);
  };

  auto * collect = app.add_subcommand("collect", "simulate identification and validation data");
  add_globals(collect, true);

  std::string data_dir, kind = "both";
  auto * identify = app.add_subcommand("identify", "fit PVKO and time-invariant Koopman models");
  add_globals(identify, true);
  identify->add_option("--data", data_dir, "directory with snapshot CSVs (default: --out)");
  identify->add_option("--kind", kind, "pvko, ti or both")->check(CLI::IsMember({"pvko", "ti", "both"}));

  std::string model;
  auto * synth = app.add_subcommand("synthesize", "compute the tube gain and write a controller bundle");
  add_globals(synth, true);
  synth->add_option("--model", model, "model JSON")->required()->check(CLI::ExistingFile);

  std::string controller;
  auto * sim = app.add_subcommand("simulate", "run a closed-loop scenario");
  add_globals(sim, true);
  sim->add_option("--controller", controller, "controller JSON")->required()->check(CLI::ExistingFile);

  auto * eval = app.add_subcommand("evaluate", "benchmarks and tables");
  eval->require_subcommand(1);
  auto * rmse = eval->add_subcommand("rmse-mc", "Monte Carlo prediction RMSE of PVKO vs time-invariant KO");
  add_globals(rmse, true);

  std::vector<std::string> trajectories;
  std::string reference;
  double reference_cost = 0;
  auto * costs = eval->add_subcommand("cost-table", "cumulative costs of closed-loop trajectories");
  add_globals(costs, false);
  costs->add_option("--trajectory", trajectories, "trajectory CSV, optionally name=path")->required();
  auto * ref_opt = costs->add_option("--reference", reference, "reference trajectory CSV");
  auto * ref_cost = costs->add_option("--reference-cost", reference_cost, "reference cumulative cost");
  ref_opt->excludes(ref_cost);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp & e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp & e) {
    return app.exit(e);
  } catch (const CLI::ParseError & e) {
    app.exit(e);
    return 2;
  }

  try {
    for (auto * sub : {collect, identify, synth, sim, rmse, costs}) {
      if (sub->count("--seed") > 0) { g.seed = seed; }
    }
    if (*collect) { return cmd_collect(g); }
    if (*identify) { return cmd_identify(g, data_dir, kind); }
    if (*synth) { return cmd_synthesize(g, model); }
    if (*sim) { return cmd_simulate(g, controller); }
    if (*rmse) { return cmd_evaluate_rmse(g); }
    if (*costs) {
      return cmd_evaluate_costs(
        g, trajectories, reference, ref_cost->count() ? std::optional<double>(reference_cost) : std::nullopt);
    }
  } catch (const std::exception & e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e);
  }
  return 1;
}
