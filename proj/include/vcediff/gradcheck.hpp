#pragma once

#include <functional>
#include <string>
#include <vector>

#include "vcediff/tensor.hpp"

namespace vcediff {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  std::size_t refined = 0;  // coordinates re-estimated with the five-point stencil
  std::string worst_name;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// |a - c| / max(|a|, |c|, 1e-8)
double relative_error(double analytic, double numeric);

/// Central-difference check of d loss / d params.
///
/// `loss` must rebuild the scalar loss from the current parameter values and
/// be deterministic. It is called once under a recording graph to obtain
/// analytic gradients, then twice per coordinate without recording.
GradCheckReport finite_diff_check(const std::function<Tensor()>& loss,
                                  const std::vector<NamedTensor>& params, double step = 1e-5);

/// Same comparison with a caller-supplied evaluator for the perturbed
/// losses. `evaluate(p, i)` is called after coordinate i of params[p] has
/// been perturbed in place and must return the loss; it may cache work that
/// does not depend on params[p]. Analytic gradients are read from the
/// parameters' grad buffers, which the caller fills beforehand.
GradCheckReport finite_diff_check_with(
    const std::function<double(std::size_t param, std::size_t index)>& evaluate,
    const std::vector<NamedTensor>& params, double step = 1e-5);

struct FiniteDiffOptions {
  double step = 1e-5;
  /// Coordinates whose central-difference error exceeds this are re-estimated
  /// with the five-point stencil at `refine_step` (truncation O(h^4), so a
  /// larger step keeps rounding noise down). Zero disables refinement.
  double refine_above = 0.0;
  double refine_step = 1e-3;
};

GradCheckReport finite_diff_check_with(
    const std::function<double(std::size_t param, std::size_t index)>& evaluate,
    const std::vector<NamedTensor>& params, const FiniteDiffOptions& options);

}  // namespace vcediff
