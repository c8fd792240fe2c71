#include "vcediff/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "vcediff/errors.hpp"

namespace vcediff {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport finite_diff_check_with(
    const std::function<double(std::size_t, std::size_t)>& evaluate,
    const std::vector<NamedTensor>& params, double step) {
  FiniteDiffOptions options;
  options.step = step;
  return finite_diff_check_with(evaluate, params, options);
}

GradCheckReport finite_diff_check_with(
    const std::function<double(std::size_t, std::size_t)>& evaluate,
    const std::vector<NamedTensor>& params, const FiniteDiffOptions& options) {
  if (!(options.step > 0) || !(options.refine_step > 0) || !(options.refine_above >= 0)) {
    throw ConfigError("finite_diff_check: steps must be positive and the refine threshold non-negative");
  }
  GradCheckReport report;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor t = params[p].tensor;
    std::vector<double> analytic(t.grad().begin(), t.grad().end());
    auto values = t.data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      auto at = [&](double offset) {
        values[i] = saved + offset;
        const double v = evaluate(p, i);
        values[i] = saved;
        return v;
      };
      const double h = options.step;
      double numeric = (at(h) - at(-h)) / (2.0 * h);
      double err = relative_error(analytic[i], numeric);
      if (options.refine_above > 0.0 && err > options.refine_above) {
        const double r = options.refine_step;
        numeric = (8.0 * (at(r) - at(-r)) - (at(2.0 * r) - at(-2.0 * r))) / (12.0 * r);
        err = relative_error(analytic[i], numeric);
        ++report.refined;
      }
      ++report.coordinates;
      if (err > report.max_rel_error || report.coordinates == 1) {
        report.max_rel_error = err;
        report.worst_name = params[p].name;
        report.worst_index = i;
        report.worst_analytic = analytic[i];
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

GradCheckReport finite_diff_check(const std::function<Tensor()>& loss,
                                  const std::vector<NamedTensor>& params, double step) {
  for (const auto& p : params) {
    Tensor t = p.tensor;
    t.set_requires_grad(true);
    t.zero_grad();
  }
  {
    Graph graph;
    Graph::Recording rec(graph);
    Tensor root = loss();
    graph.backward(root);
  }
  return finite_diff_check_with([&](std::size_t, std::size_t) { return loss().item(); }, params,
                                step);
}

}  // namespace vcediff
