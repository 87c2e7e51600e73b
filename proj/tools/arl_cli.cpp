// Experiment driver: generate / train / eval / sweep over the synthetic
// verification pipeline. Errors leave a machine-readable JSON record on
// stderr and a nonzero exit code.

#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "arl/arl.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::string mode;
  std::uint64_t seed = 0;
  bool has_seed = false;
};

arl::ExperimentConfig resolve_config(const CommonArgs& args) {
  arl::ExperimentConfig cfg =
      args.config_path.empty() ? arl::standard_config() : arl::load_config(args.config_path);
  if (args.has_seed) cfg.train.seed = args.seed;
  if (!args.mode.empty()) cfg.train.mode = arl::parse_mode(args.mode);
  if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
  return cfg;
}

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "experiment config JSON (default: built-in)");
  cmd->add_option("--out", args.out_dir, "output directory (overrides config)");
  cmd->add_option("--mode", args.mode,
                  "baseline | uir | arl | arl_c | arl_c_g | arl_no_k (overrides config)");
  cmd->add_option_function<std::uint64_t>(
      "--seed",
      [&args](const std::uint64_t& s) {
        args.seed = s;
        args.has_seed = true;
      },
      "root seed (overrides config)");
}

int fail(const std::string& kind, const std::string& message) {
  nlohmann::json err{{"error", kind}, {"message", message}};
  std::cerr << err.dump() << "\n";
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"semi-supervised angular-margin verification experiments"};
  app.require_subcommand(1);

  CommonArgs gen_args, train_args, eval_args, sweep_args;
  std::string dataset_path, checkpoint_path, baseline_report, grid_path;

  CLI::App* gen = app.add_subcommand("generate", "write a synthetic dataset");
  add_common(gen, gen_args);

  CLI::App* train = app.add_subcommand("train", "run two-phase training on a dataset");
  add_common(train, train_args);
  train->add_option("--dataset", dataset_path, "dataset.json from `generate`")->required();

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on held-out pairs");
  add_common(eval, eval_args);
  eval->add_option("--dataset", dataset_path, "dataset.json from `generate`")->required();
  eval->add_option("--checkpoint", checkpoint_path, "checkpoint from `train`")->required();
  eval->add_option("--baseline-report", baseline_report,
                   "summary.json of a baseline run; adds (delta) columns");

  CLI::App* sweep = app.add_subcommand("sweep", "grid of runs over config overrides x seeds");
  add_common(sweep, sweep_args);
  sweep->add_option("--grid", grid_path, "grid JSON: {parameters: {path: [...]}, seeds: [...]}")
      ->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      arl::ExperimentConfig cfg = resolve_config(gen_args);
      std::string path = arl::cmd_generate(cfg);
      std::cout << "dataset: " << path << "\n";
    } else if (train->parsed()) {
      arl::ExperimentConfig cfg = resolve_config(train_args);
      arl::TrainOutputs out = arl::cmd_train(cfg, dataset_path);
      std::cout << "phase1: " << out.phase1_checkpoint << "\n";
      if (!out.phase2_checkpoint.empty()) std::cout << "phase2: " << out.phase2_checkpoint << "\n";
      std::cout << "metrics: " << out.metrics_csv << "\n";
    } else if (eval->parsed()) {
      arl::ExperimentConfig cfg = resolve_config(eval_args);
      arl::EvalOutputs out = arl::cmd_eval(cfg, checkpoint_path, dataset_path, baseline_report);
      std::cout << "report: " << out.report_csv << "\n";
      std::cout << "summary: " << out.summary_json << "\n";
    } else if (sweep->parsed()) {
      arl::ExperimentConfig cfg = resolve_config(sweep_args);
      arl::SweepGrid grid = arl::load_grid(grid_path);
      arl::SweepResult out = arl::cmd_sweep(cfg, grid);
      std::cout << "sweep: " << out.csv_path << " (" << out.cells.size() << " runs)\n";
    }
  } catch (const arl::ChecksumMismatch& e) {
    return fail("checksum_mismatch", e.what());
  } catch (const arl::IoError& e) {
    return fail("io_error", e.what());
  } catch (const arl::InvalidSpec& e) {
    return fail("invalid_spec", e.what());
  } catch (const arl::Error& e) {
    return fail("error", e.what());
  } catch (const std::exception& e) {
    return fail("exception", e.what());
  }
  return 0;
}
