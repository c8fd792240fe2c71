#include "vcediff/optimizer.hpp"

#include <cmath>
#include <numbers>
#include <utility>

#include "vcediff/errors.hpp"

namespace vcediff {

void AdamWConfig::validate() const {
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("adamw: betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw ConfigError("adamw: eps must be positive");
}

OptimState OptimState::create(std::vector<ParamGroup> groups, const AdamWConfig& config) {
  config.validate();
  OptimState s;
  s.config = config;
  s.groups = std::move(groups);
  for (const auto& g : s.groups) {
    if (!(g.lr_max > 0.0) || !(g.weight_decay >= 0.0)) {
      throw ConfigError("adamw: group " + g.name + " needs lr_max > 0 and weight_decay >= 0");
    }
    auto& gm = s.m.emplace_back();
    auto& gv = s.v.emplace_back();
    for (const auto& p : g.params) {
      gm.emplace_back(p.tensor.numel(), 0.0);
      gv.emplace_back(p.tensor.numel(), 0.0);
    }
  }
  return s;
}

std::vector<NamedTensor> OptimState::moment_tensors() const {
  std::vector<NamedTensor> out;
  for (std::size_t g = 0; g < groups.size(); ++g)
    for (std::size_t i = 0; i < groups[g].params.size(); ++i) {
      const auto& p = groups[g].params[i];
      out.push_back({"adam.m." + p.name, Tensor(p.tensor.shape(), m[g][i])});
      out.push_back({"adam.v." + p.name, Tensor(p.tensor.shape(), v[g][i])});
    }
  return out;
}

void OptimState::load_moments(const std::vector<NamedTensor>& tensors) {
  auto find = [&](const std::string& name) -> const Tensor& {
    for (const auto& t : tensors)
      if (t.name == name) return t.tensor;
    throw FormatError("optimizer state: missing tensor " + name);
  };
  for (std::size_t g = 0; g < groups.size(); ++g)
    for (std::size_t i = 0; i < groups[g].params.size(); ++i) {
      const auto& p = groups[g].params[i];
      const Tensor& tm = find("adam.m." + p.name);
      const Tensor& tv = find("adam.v." + p.name);
      if (tm.shape() != p.tensor.shape() || tv.shape() != p.tensor.shape()) {
        throw ShapeError("optimizer state: shape mismatch for " + p.name);
      }
      m[g][i].assign(tm.data().begin(), tm.data().end());
      v[g][i].assign(tv.data().begin(), tv.data().end());
    }
}

void adamw_step(OptimState& state, std::span<const double> lrs) {
  if (lrs.size() != state.groups.size()) throw UsageError("adamw_step: one learning rate per group expected");
  for (const auto& g : state.groups)
    for (const auto& p : g.params)
      if (!p.tensor.has_grad()) throw UsageError("adamw_step: parameter " + p.name + " has no gradient");

  const auto& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t g = 0; g < state.groups.size(); ++g) {
    const double lr = lrs[g];
    const double decay = 1.0 - lr * state.groups[g].weight_decay;
    for (std::size_t i = 0; i < state.groups[g].params.size(); ++i) {
      Tensor p = state.groups[g].params[i].tensor;
      auto values = p.data();
      auto grad = std::as_const(p).grad();
      auto& m = state.m[g][i];
      auto& v = state.v[g][i];
      for (std::size_t k = 0; k < values.size(); ++k) {
        m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * grad[k];
        v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * grad[k] * grad[k];
        const double m_hat = m[k] / bc1;
        const double v_hat = v[k] / bc2;
        values[k] = values[k] * decay - lr * m_hat / (std::sqrt(v_hat) + c.eps);
      }
    }
  }
}

void OneCycleConfig::validate() const {
  if (!(pct_start > 0.0 && pct_start < 1.0)) throw ConfigError("onecycle: pct_start must lie in (0, 1)");
  if (!(div_start >= 1.0) || !(div_final >= 1.0)) throw ConfigError("onecycle: divisors must be >= 1");
}

std::size_t onecycle_peak_step(std::size_t total, const OneCycleConfig& config) {
  return static_cast<std::size_t>(std::floor(config.pct_start * static_cast<double>(total)));
}

double onecycle_lr(std::size_t step, std::size_t total, double lr_max, const OneCycleConfig& config) {
  if (step > total) throw UsageError("onecycle_lr: step beyond the schedule");
  const std::size_t peak = onecycle_peak_step(total, config);
  if (step == peak) return lr_max;
  if (step == 0) return lr_max / config.div_start;
  if (step == total) return lr_max / config.div_final;
  const double start = 1.0 / config.div_start;
  const double end = 1.0 / config.div_final;
  if (step < peak) {
    const double x = static_cast<double>(step) / static_cast<double>(peak);
    return lr_max * (start + (1.0 - start) * 0.5 * (1.0 - std::cos(std::numbers::pi * x)));
  }
  const double x = static_cast<double>(step - peak) / static_cast<double>(total - peak);
  return lr_max * (end + (1.0 - end) * 0.5 * (1.0 + std::cos(std::numbers::pi * x)));
}

EmaState EmaState::create(const std::vector<NamedTensor>& params, double decay) {
  if (!(decay >= 0.0 && decay < 1.0)) throw ConfigError("ema: decay must lie in [0, 1)");
  EmaState e;
  e.decay = decay;
  for (const auto& p : params) e.shadow.push_back({p.name, p.tensor.detach()});
  return e;
}

void ema_update(EmaState& ema, const std::vector<NamedTensor>& params) {
  if (params.size() != ema.shadow.size()) throw ShapeError("ema_update: parameter count changed");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].name != ema.shadow[i].name || params[i].tensor.shape() != ema.shadow[i].tensor.shape()) {
      throw ShapeError("ema_update: parameter " + params[i].name + " does not match its shadow");
    }
  }
  const double b = ema.decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto s = ema.shadow[i].tensor.data();
    auto p = params[i].tensor.data();
    for (std::size_t k = 0; k < s.size(); ++k) s[k] = b * s[k] + (1.0 - b) * p[k];
  }
}

}  // namespace vcediff
