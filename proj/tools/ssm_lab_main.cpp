#include <CLI11.hpp>
#include <iostream>
#include <optional>
#include <string>

#include "ssmlab/experiment.hpp"
#include "ssmlab/version.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed_override;
  std::optional<std::string> out_override;
};

void attach_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "path to the JSON experiment config")
      ->required();
  cmd->add_option("--seed", [&args](const CLI::results_t& res) {
    args.seed_override = std::stoull(res[0]);
    return true;
  }, "override master_seed");
  cmd->add_option("--out", [&args](const CLI::results_t& res) {
    args.out_override = res[0];
    return true;
  }, "override output_dir");
}

ssmlab::ExperimentConfig load_with_overrides(const CommonArgs& args) {
  ssmlab::ExperimentConfig cfg = ssmlab::load_experiment_config(args.config_path);
  if (args.seed_override) cfg.master_seed = *args.seed_override;
  if (args.out_override) cfg.output_dir = *args.out_override;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"selective-SSM training lab"};
  app.set_version_flag("--version", ssmlab::version_string());
  app.require_subcommand(1);

  CommonArgs gen_args, train_args, sweep_args, ablate_args, check_args;
  CLI::App* gen = app.add_subcommand("gen-data", "write train/test dataset files");
  attach_common(gen, gen_args);
  CLI::App* train = app.add_subcommand("train", "run seeded training trials");
  attach_common(train, train_args);
  CLI::App* sweep = app.add_subcommand("sweep", "train across a parameter sweep");
  attach_common(sweep, sweep_args);
  CLI::App* ablate = app.add_subcommand("ablate-gating", "paired gated/ungated comparison");
  attach_common(ablate, ablate_args);
  CLI::App* check = app.add_subcommand("grad-check", "verify analytic gradients against FD");
  attach_common(check, check_args);

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return ssmlab::cmd_gen_data(load_with_overrides(gen_args), std::cout);
    if (train->parsed()) return ssmlab::cmd_train(load_with_overrides(train_args), std::cout);
    if (sweep->parsed()) return ssmlab::cmd_sweep(load_with_overrides(sweep_args), std::cout);
    if (ablate->parsed())
      return ssmlab::cmd_ablate_gating(load_with_overrides(ablate_args), std::cout);
    if (check->parsed())
      return ssmlab::cmd_grad_check(load_with_overrides(check_args), std::cout);
  } catch (const ssmlab::ConfigError& e) {
    std::cerr << e.what() << "\n";
    return ssmlab::kExitInvalidConfig;
  } catch (const ssmlab::TrainingDiverged& e) {
    std::cerr << "diverged: " << e.what() << "\n";
    return ssmlab::kExitRuntimeDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return ssmlab::kExitRuntimeDivergence;
  }
  return ssmlab::kExitInvalidConfig;
}
