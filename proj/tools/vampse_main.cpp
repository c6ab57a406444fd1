#include <cstdlib>
#include <exception>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "vampse/scenarios.hpp"

// exit codes: 0 ok, 1 config error, 2 runtime error
int main(int argc, char** argv) {
  CLI::App app{"VAMP scenario runner"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "run a scenario and write CSV artifacts");
  std::string scenario, config_path, out_dir;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int threads = 0;
  run->add_option("--scenario", scenario, "scenario name (overrides the config file)");
  run->add_option("--config", config_path, "config file")->required();
  run->add_option("--out", out_dir, "output directory (default $VAMPSE_OUT_ROOT/<scenario>)");
  run->add_option("--seed", seed, "master seed override")->each([&](const std::string&) {
    seed_set = true;
  });
  run->add_option("--threads", threads, "worker threads");

  auto* validate = app.add_subcommand("validate-config", "parse a config and print it resolved");
  std::string validate_path;
  validate->add_option("config", validate_path, "config file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) ? 1 : 0;
  }

  try {
    if (validate->parsed()) {
      vampse::ScenarioConfig cfg;
      try {
        cfg = vampse::load_config(validate_path);
      } catch (const std::exception& e) {
        std::cerr << e.what() << '\n';
        return 1;
      }
      std::cout << vampse::dump_config(cfg);
      return 0;
    }

    vampse::ScenarioConfig cfg;
    try {
      cfg = vampse::load_config(config_path);
      if (!scenario.empty()) cfg.scenario = scenario;
      if (seed_set) cfg.master_seed = seed;
      if (threads > 0) cfg.threads = threads;
      if (cfg.scenario.empty())
        throw std::runtime_error("config: scenario not given (config key or --scenario)");
    } catch (const std::exception& e) {
      std::cerr << e.what() << '\n';
      return 1;
    }

    if (out_dir.empty()) {
      const char* root = std::getenv("VAMPSE_OUT_ROOT");
      if (!root) {
        std::cerr << "no --out and VAMPSE_OUT_ROOT is not set\n";
        return 1;
      }
      out_dir = std::string(root) + "/" + cfg.scenario;
    }

    vampse::run_scenario(cfg, out_dir);
    std::cout << "wrote " << out_dir << '\n';
    return 0;
  } catch (const std::exception& e) {
    std::cerr << e.what() << '\n';
    return 2;
  }
}
