#pragma once

#include <random>
#include <vector>

#include "vcediff/tensor.hpp"

namespace vcediff::testing {

inline std::vector<double> random_values(std::size_t n, std::mt19937_64& rng, double lo = -1.0,
                                         double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), random_values(n, rng, lo, hi));
}

inline Tensor random_param(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t = random_tensor(std::move(shape), rng, lo, hi);
  t.set_requires_grad(true);
  return t;
}

}  // namespace vcediff::testing
