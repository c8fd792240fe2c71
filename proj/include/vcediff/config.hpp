#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"
#include "vcediff/data.hpp"
#include "vcediff/model.hpp"
#include "vcediff/objectives.hpp"
#include "vcediff/optimizer.hpp"
#include "vcediff/temporal.hpp"

namespace vcediff {

struct OptimConfig {
  AdamWConfig adam;
  double weight_decay = 5e-4;
  double lr_backbone = 9e-5;
  double lr_head = 3e-4;
  OneCycleConfig schedule;
  double ema_decay = 0.999;
  std::size_t epochs = 5;
  std::size_t batch_size = 16;
  /// 0 means ceil(train frames / batch_size).
  std::size_t steps_per_epoch = 0;

  void validate() const;
};

struct DataConfig {
  /// Directory written by `vcediff synth` (or any directory with the same
  /// layout). Empty means generate `synth` in memory.
  std::string dataset;
  SynthSpec synth = SynthSpec::desk_default();
  AugmentConfig augment;
  bool augment_enabled = true;
  double mixup_alpha = 0.3;
  /// "sqrt" (1/sqrt of the rarest label frequency) or "uniform".
  std::string sampler = "sqrt";

  void validate() const;
};

struct RunConfig {
  ModelConfig model;
  LossConfig loss;
  /// "asymmetric_focal" or "bce" (focusing off, unit class weights).
  std::string classification_loss = "asymmetric_focal";
  OptimConfig optim;
  DataConfig data;
  TemporalConfig temporal;
  std::uint64_t seed = 42;
  std::string output_dir = "runs/default";

  void validate() const;
};

/// Every section and key is optional; unknown keys and wrong types are
/// ConfigErrors naming the offending path.
RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json run_config_to_json(const RunConfig& c);
RunConfig load_run_config(const std::filesystem::path& path);

SynthSpec synth_spec_from_json(const nlohmann::json& j);
nlohmann::json synth_spec_to_json(const SynthSpec& s);

}  // namespace vcediff
