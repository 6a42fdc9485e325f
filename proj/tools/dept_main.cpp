// Command-line front end: prepare | train | costs | eval | plasticity.
//
// Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.

#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "dept/pipeline.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_override;
  std::string resume;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int workers = 1;
};

dept::ExperimentConfig load_config(const CommonArgs& args) {
  dept::ExperimentConfig cfg = dept::ExperimentConfig::load(args.config_path);
  if (args.seed_set) cfg.train.seed = args.seed;
  if (!args.out_override.empty()) cfg.out_dir = args.out_override;
  return cfg;
}

void add_common(CLI::App* cmd, CommonArgs& args, bool config_required = true) {
  auto* opt = cmd->add_option("--config", args.config_path, "experiment config file");
  if (config_required) opt->required();
  cmd->add_option("--seed", args.seed, "override the config seed")
      ->each([&](const std::string&) { args.seed_set = true; });
  cmd->add_option("--out", args.out_override, "override the output directory");
  cmd->add_option("--workers", args.workers, "worker pool size");
  cmd->add_option("--resume", args.resume, "checkpoint to resume/evaluate from");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DEPT desk-scale pre-training simulator"};
  app.require_subcommand(1);

  CommonArgs args;
  CLI::App* prepare = app.add_subcommand("prepare", "build vocabularies and tokenized datasets");
  add_common(prepare, args);
  CLI::App* train = app.add_subcommand("train", "run the configured variant");
  add_common(train, args);
  CLI::App* costs = app.add_subcommand("costs", "analytical cost ledger");
  add_common(costs, args, false);
  bool reference_table = false;
  costs->add_flag("--reference", reference_table,
                  "print the bundled reference-model table");
  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint (with continued pre-training)");
  add_common(eval, args);
  CLI::App* plasticity = app.add_subcommand("plasticity", "adaptation curve on a target source");
  add_common(plasticity, args);

  CLI11_PARSE(app, argc, argv);

  try {
    if (prepare->parsed()) {
      const bool skipped = dept::cmd_prepare(load_config(args));
      std::cout << (skipped ? "prepare: up to date\n" : "prepare: done\n");
    } else if (train->parsed()) {
      const dept::ExperimentConfig cfg = load_config(args);
      dept::cmd_train(cfg, args.workers, args.resume);
      std::cout << "train: done, outputs in " << cfg.out_dir << "\n";
    } else if (costs->parsed()) {
      if (reference_table) {
        dept::cmd_costs_reference(std::cout, args.out_override);
      } else {
        if (args.config_path.empty())
          throw dept::ConfigError("costs needs --config or --reference");
        dept::cmd_costs(load_config(args), std::cout);
      }
    } else if (eval->parsed()) {
      const dept::ExperimentConfig cfg = load_config(args);
      const std::string ckpt =
          args.resume.empty() ? cfg.out_dir + "/ckpt_final.bin" : args.resume;
      dept::cmd_eval(cfg, ckpt);
      std::cout << "eval: reports in " << cfg.out_dir << "/eval\n";
    } else if (plasticity->parsed()) {
      const dept::ExperimentConfig cfg = load_config(args);
      const std::string ckpt =
          args.resume.empty() ? cfg.out_dir + "/ckpt_final.bin" : args.resume;
      dept::cmd_plasticity(cfg, ckpt);
      std::cout << "plasticity: curve in " << cfg.out_dir << "/eval\n";
    }
  } catch (const dept::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const dept::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const dept::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
