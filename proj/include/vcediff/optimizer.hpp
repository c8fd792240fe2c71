#pragma once

#include <span>
#include <string>
#include <vector>

#include "vcediff/gradcheck.hpp"

namespace vcediff {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

struct ParamGroup {
  std::string name;
  std::vector<NamedTensor> params;
  double lr_max = 0.0;
  double weight_decay = 0.0;
};

struct OptimState {
  AdamWConfig config;
  std::vector<ParamGroup> groups;
  // [group][param][element]
  std::vector<std::vector<std::vector<double>>> m, v;
  std::size_t step = 0;

  static OptimState create(std::vector<ParamGroup> groups, const AdamWConfig& config = {});

  /// Moment buffers as named tensors "adam.m.<param>" / "adam.v.<param>".
  std::vector<NamedTensor> moment_tensors() const;
  void load_moments(const std::vector<NamedTensor>& tensors);
};

/// One AdamW step with decoupled weight decay:
///   p <- p (1 - lr wd) - lr m_hat / (sqrt(v_hat) + eps)
/// `lrs` holds one learning rate per group. Throws UsageError when a
/// parameter has no gradient buffer.
void adamw_step(OptimState& state, std::span<const double> lrs);

struct OneCycleConfig {
  double pct_start = 0.3;
  double div_start = 25.0;
  double div_final = 3e-4 / 9e-8;

  void validate() const;
};

/// Cosine warmup from lr_max/div_start to lr_max over the first
/// floor(pct_start * total) steps, then cosine anneal to lr_max/div_final at
/// step == total.
double onecycle_lr(std::size_t step, std::size_t total, double lr_max, const OneCycleConfig& config = {});
std::size_t onecycle_peak_step(std::size_t total, const OneCycleConfig& config = {});

struct EmaState {
  double decay = 0.999;
  std::vector<NamedTensor> shadow;

  /// Shadow starts as a copy of the parameters.
  static EmaState create(const std::vector<NamedTensor>& params, double decay);
};

/// shadow <- decay shadow + (1 - decay) param. Names and shapes must match
/// the ones the state was created with (ShapeError otherwise).
void ema_update(EmaState& ema, const std::vector<NamedTensor>& params);

}  // namespace vcediff
