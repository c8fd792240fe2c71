#pragma once

#include <string>
#include <vector>

#include "vcediff/config.hpp"
#include "vcediff/gradcheck.hpp"

namespace vcediff {

struct ModelGradCheckOptions {
  std::size_t batch = 2;
  std::uint64_t seed = 42;
  double step = 1e-5;
  /// See FiniteDiffOptions.
  double refine_above = 1e-5;
  double refine_step = 1e-3;
  /// Gaussian noise added to every parameter so the check does not run at
  /// the symmetric initialization (zero lambda vectors, zero biases).
  double jitter = 0.05;
};

struct ParamCheck {
  std::string name;
  std::size_t coordinates = 0;
  double max_rel_error = 0.0;
  std::size_t refined = 0;
  double seconds = 0.0;
};

struct ModelGradCheckResult {
  GradCheckReport overall;
  std::vector<ParamCheck> per_param;
  double seconds = 0.0;
};

/// Central differences over every coordinate of every trainable parameter of
/// the model described by `config`, against the gradient of the training
/// objective (asymmetric focal + weighted contrastive BCE on smoothed
/// targets) on a batch of synthetic frames. Dropout runs in train mode with
/// the same mask for every evaluation; batch norm uses running statistics.
/// Perturbed losses restart from the first stage the parameter affects.
ModelGradCheckResult model_gradcheck(const RunConfig& config, const ModelGradCheckOptions& options = {});

}  // namespace vcediff
