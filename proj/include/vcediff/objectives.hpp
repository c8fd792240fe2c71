#pragma once

#include <array>
#include <vector>

#include "vcediff/labels.hpp"
#include "vcediff/tensor.hpp"

namespace vcediff {

struct LossConfig {
  double gamma_pos = 1.0;
  double gamma_neg = 4.0;
  double eps_smooth = 0.05;
  double contrastive_weight = 0.4;
  double pos_weight_min = 1.0;
  double pos_weight_max = 100.0;
  double margin = 0.0;  // probability shift on the negative branch; unused by default

  void validate() const;
};

inline constexpr double kLogClamp = 1e-8;

struct ClassFrequencyTable;

/// w_c = clamp((total - f_c) / max(f_c, 1), lo, hi).
std::vector<double> pos_weights(const std::vector<std::size_t>& counts, std::size_t total_frames,
                                double lo = 1.0, double hi = 100.0);
std::vector<double> pos_weights(const ClassFrequencyTable& freqs, const LossConfig& config);

/// Mean over B x C of
///   -[ y w_c (1-p)^g+ log p + (1-y) p_m^g- log(1-p_m) ],  p = sigmoid(logits),
/// with p_m = max(p - margin, 0) and log arguments clamped below at 1e-8.
Tensor asymmetric_focal_loss(const Tensor& logits, const Tensor& targets, const std::vector<double>& weights,
                             const LossConfig& config);

/// Mean over B x C of -[ y w_c log sigmoid(z) + (1-y) log sigmoid(-z) ].
Tensor contrastive_bce(const Tensor& logits, const Tensor& targets, const std::vector<double>& weights);

/// L_cls + contrastive_weight * L_con.
Tensor total_loss(const Tensor& cls_loss, const Tensor& con_loss, const LossConfig& config);

}  // namespace vcediff
