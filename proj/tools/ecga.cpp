// ECGA command-line harness: train, evaluate, predict, gradcheck.

#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ecga/config.hpp"
#include "ecga/errors.hpp"
#include "ecga/runner.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;

struct CommonFlags {
  std::string config_path;
  std::string preset;
  std::vector<std::string> sets;
  long long seed = -1;
  std::string out_dir;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config_path, "Config file (key = value lines)");
  cmd->add_option("--preset", flags.preset,
                  "Preset: dbpedia | argmine_task_a | argmine_task_c | churn | custom");
  cmd->add_option("--set", flags.sets, "Override a config field, key=value (repeatable)");
  cmd->add_option("--seed", flags.seed, "RNG seed override");
  cmd->add_option("--out", flags.out_dir, "Output directory override");
}

ecga::RunConfig resolve(const CommonFlags& flags) {
  ecga::RunConfig cfg =
      flags.preset.empty() ? ecga::RunConfig{} : ecga::preset_config(flags.preset);
  if (!flags.config_path.empty()) cfg = ecga::load_config(flags.config_path, cfg);
  for (const std::string& kv : flags.sets) {
    std::size_t eq = kv.find('=');
    if (eq == std::string::npos) {
      throw ecga::ConfigError("--set expects key=value, got: " + kv);
    }
    ecga::config_set(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (flags.seed >= 0) cfg.seed = static_cast<std::uint64_t>(flags.seed);
  if (!flags.out_dir.empty()) cfg.out_dir = flags.out_dir;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ECGA text classifier: ensembles of CNN-BiGRU-attention learners"};
  app.require_subcommand(1);

  CommonFlags train_flags, eval_flags, predict_flags, grad_flags;
  std::string checkpoint_path, data_path, corrupt_tensor;

  CLI::App* cmd_train = app.add_subcommand("train", "Train a model and write run artifacts");
  add_common(cmd_train, train_flags);

  CLI::App* cmd_eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  add_common(cmd_eval, eval_flags);
  cmd_eval->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required();
  cmd_eval->add_option("--data", data_path, "Dataset file")->required();

  CLI::App* cmd_predict =
      app.add_subcommand("predict", "Classify standard-input lines with a checkpoint");
  add_common(cmd_predict, predict_flags);
  cmd_predict->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required();

  CLI::App* cmd_grad =
      app.add_subcommand("gradcheck", "Finite-difference audit of a miniature ensemble");
  add_common(cmd_grad, grad_flags);
  cmd_grad->add_option("--corrupt-tensor", corrupt_tensor,
                       "Scale this tensor's analytic gradient (detector self-test)")
      ->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (cmd_train->parsed()) {
      ecga::RunConfig cfg = resolve(train_flags);
      ecga::TrainOutputs out = ecga::run_train(cfg);
      std::cout << "checkpoint: " << out.checkpoint_path.string() << "\n";
      ecga::write_metrics_table(out.metrics, std::cout, out.model.labels);
      return kExitOk;
    }
    if (cmd_eval->parsed()) {
      ecga::RunConfig cfg = resolve(eval_flags);
      ecga::run_eval(checkpoint_path, data_path, cfg);
      return kExitOk;
    }
    if (cmd_predict->parsed()) {
      ecga::run_predict(checkpoint_path, std::cin, std::cout);
      return kExitOk;
    }
    if (cmd_grad->parsed()) {
      ecga::RunConfig cfg = resolve(grad_flags);
      bool tiny_default = grad_flags.preset.empty() && grad_flags.config_path.empty();
      std::size_t pad = tiny_default ? 6 : cfg.pad_length;
      std::size_t emb = tiny_default ? 3 : cfg.embedding_dim;
      std::size_t filters = tiny_default ? 4 : cfg.filters;
      std::size_t units = tiny_default ? 2 : cfg.units;
      std::vector<std::size_t> kernels = tiny_default ? std::vector<std::size_t>{1, 2}
                                                      : cfg.kernel_sizes;
      auto mode = cfg.training == "independent" ? ecga::TrainingMode::independent
                                                : ecga::TrainingMode::joint;
      ecga::GradCheckResult result = ecga::run_gradcheck(
          pad, emb, filters, units, 3, kernels, cfg.seed, mode, corrupt_tensor);
      if (!result.finite) return kExitNumeric;
      return result.pass ? kExitOk : kExitCheckFailed;
    }
  } catch (const ecga::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const ecga::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ecga::ParseError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
