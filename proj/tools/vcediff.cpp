#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "vcediff/commands.hpp"

namespace fs = std::filesystem;
using namespace vcediff;

int main(int argc, char** argv) {
  CLI::App app{"Frame classification and event detection for capsule endoscopy video"};
  app.require_subcommand(1);

  std::optional<std::uint64_t> seed;
  std::string out;
  bool quiet = false;
  std::string config;
  auto common = [&](CLI::App* sub, bool with_config) {
    sub->add_option("--seed", seed, "Override the seed from the config or spec");
    sub->add_option("--out", out, std::string("Output path (default: $") + kOutputDirEnv + "/<name> or per command)");
    sub->add_flag("--quiet,-q", quiet, "Only print errors");
    if (with_config) sub->add_option("--config,-c", config, "Run config (JSON)")->check(CLI::ExistingFile);
  };

  std::string spec, checkpoint, dataset, split = "test", scores, labels, thresholds, predictions, ground_truth;
  double tolerance = 1e-4;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset directory");
  synth->add_option("spec", spec, "Synth spec (JSON)")->required()->check(CLI::ExistingFile);
  common(synth, false);

  auto* train = app.add_subcommand("train", "Train a model and write checkpoints and run.log");
  common(train, true);
  train->get_option("--config")->required();

  auto* predict = app.add_subcommand("predict", "Score frames with the EMA weights of a checkpoint");
  predict->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  predict->add_option("--dataset", dataset, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  predict->add_option("--split", split, "train, val or test")->capture_default_str();
  common(predict, false);

  auto* thr = app.add_subcommand("thresholds", "Per-class F1-optimal thresholds");
  thr->add_option("--scores", scores)->required()->check(CLI::ExistingFile);
  thr->add_option("--labels", labels, "Labelled manifest CSV")->required()->check(CLI::ExistingFile);
  common(thr, false);

  auto* events = app.add_subcommand("events", "Temporal events from frame scores");
  events->add_option("--scores", scores)->required()->check(CLI::ExistingFile);
  events->add_option("--thresholds", thresholds)->required()->check(CLI::ExistingFile);
  common(events, true);

  auto* eval = app.add_subcommand("eval", "Frame-level and temporal evaluation report");
  eval->add_option("--pred", predictions, "Predicted events (JSON Lines)")->required()->check(CLI::ExistingFile);
  eval->add_option("--gt", ground_truth, "Ground-truth events (JSON Lines)")->required()->check(CLI::ExistingFile);
  eval->add_option("--scores", scores)->required()->check(CLI::ExistingFile);
  eval->add_option("--labels", labels)->required()->check(CLI::ExistingFile);
  eval->add_option("--thresholds", thresholds, "Frame metric thresholds (default 0.5)")->check(CLI::ExistingFile);
  common(eval, false);

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every model parameter");
  gradcheck->add_option("--tolerance", tolerance)->capture_default_str();
  common(gradcheck, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  CommandContext ctx;
  ctx.seed = seed;
  ctx.out = out;
  ctx.quiet = quiet;
  ctx.log = &std::cout;

  return run_command(
      [&] {
        if (*synth) cmd_synth(spec, ctx);
        else if (*train) cmd_train(config, ctx);
        else if (*predict) cmd_predict(checkpoint, dataset, split, ctx);
        else if (*thr) cmd_thresholds(scores, labels, ctx);
        else if (*events) cmd_events(scores, thresholds, config, ctx);
        else if (*eval) cmd_eval(predictions, ground_truth, scores, labels, thresholds, ctx);
        else if (*gradcheck) cmd_gradcheck(config, tolerance, ctx);
      },
      std::cerr);
}
