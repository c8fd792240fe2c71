#include "vcediff/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "vcediff/data.hpp"
#include "vcediff/errors.hpp"

namespace vcediff {

namespace {

void check_inputs(const Tensor& logits, const Tensor& targets, const std::vector<double>& weights,
                  const char* name) {
  if (logits.rank() != 2 || logits.shape() != targets.shape()) {
    throw ShapeError(std::string(name) + ": logits " + shape_str(logits.shape()) + " and targets " +
                     shape_str(targets.shape()) + " must be matching matrices");
  }
  if (weights.size() != logits.cols()) {
    throw ShapeError(std::string(name) + ": expected " + std::to_string(logits.cols()) + " class weights");
  }
  logits.check_finite(name);
  for (double y : targets.data()) {
    if (!(y >= 0.0 && y <= 1.0)) throw DomainError(std::string(name) + ": targets must lie in [0, 1]");
  }
}

// Constant [B x C] tensors y * w_c and 1 - y.
std::pair<Tensor, Tensor> branch_weights(const Tensor& targets, const std::vector<double>& weights) {
  const std::size_t b = targets.rows(), c = targets.cols();
  std::vector<double> pos(b * c), neg(b * c);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      const double y = targets.at(i, j);
      pos[i * c + j] = y * weights[j];
      neg[i * c + j] = 1.0 - y;
    }
  }
  return {Tensor({b, c}, std::move(pos)), Tensor({b, c}, std::move(neg))};
}

}  // namespace

void LossConfig::validate() const {
  if (!(gamma_pos >= 0.0) || !(gamma_neg >= 0.0)) throw ConfigError("focusing exponents must be >= 0");
  if (!(contrastive_weight >= 0.0)) throw ConfigError("contrastive_weight must be >= 0");
  if (!(pos_weight_min > 0.0 && pos_weight_min <= pos_weight_max)) {
    throw ConfigError("pos_weight clip bounds must satisfy 0 < min <= max");
  }
  if (!(eps_smooth >= 0.0 && eps_smooth < 0.5)) throw ConfigError("eps_smooth must be in [0, 0.5)");
  if (!(margin >= 0.0 && margin < 1.0)) throw ConfigError("margin must be in [0, 1)");
}

std::vector<double> pos_weights(const std::vector<std::size_t>& counts, std::size_t total, double lo,
                                double hi) {
  if (total == 0) throw UsageError("pos_weights: no frames");
  std::vector<double> w(counts.size());
  for (std::size_t c = 0; c < counts.size(); ++c) {
    const double f = static_cast<double>(counts[c]);
    const double raw = (static_cast<double>(total) - f) / std::max(f, 1.0);
    w[c] = std::clamp(raw, lo, hi);
  }
  return w;
}

std::vector<double> pos_weights(const ClassFrequencyTable& freqs, const LossConfig& config) {
  return pos_weights(std::vector<std::size_t>(freqs.counts.begin(), freqs.counts.end()), freqs.total_frames,
                     config.pos_weight_min, config.pos_weight_max);
}

Tensor asymmetric_focal_loss(const Tensor& logits, const Tensor& targets, const std::vector<double>& weights,
                             const LossConfig& config) {
  check_inputs(logits, targets, weights, "asymmetric_focal_loss");
  auto [yw, one_minus_y] = branch_weights(targets, weights);
  Tensor p = sigmoid(logits);
  Tensor q = sigmoid(scale(logits, -1.0));  // 1 - p without cancellation
  Tensor p_neg = p, q_neg = q;
  if (config.margin > 0.0) {
    p_neg = clamp(add_scalar(p, -config.margin), 0.0, 1.0);
    q_neg = clamp(add_scalar(q, config.margin), 0.0, 1.0);
  }
  Tensor pos = mul(mul(yw, pow_scalar(q, config.gamma_pos)), log(clamp(p, kLogClamp, 1.0)));
  Tensor neg = mul(mul(one_minus_y, pow_scalar(p_neg, config.gamma_neg)), log(clamp(q_neg, kLogClamp, 1.0)));
  return scale(mean(add(pos, neg)), -1.0);
}

Tensor contrastive_bce(const Tensor& logits, const Tensor& targets, const std::vector<double>& weights) {
  check_inputs(logits, targets, weights, "contrastive_bce");
  auto [yw, one_minus_y] = branch_weights(targets, weights);
  Tensor pos = mul(yw, log_sigmoid(logits));
  Tensor neg = mul(one_minus_y, log_sigmoid(scale(logits, -1.0)));
  return scale(mean(add(pos, neg)), -1.0);
}

Tensor total_loss(const Tensor& cls_loss, const Tensor& con_loss, const LossConfig& config) {
  cls_loss.check_finite("classification loss");
  con_loss.check_finite("contrastive loss");
  return add(cls_loss, scale(con_loss, config.contrastive_weight));
}

}  // namespace vcediff
