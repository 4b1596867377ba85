#pragma once

#include <cmath>
#include <random>

#include "numerics/tensor.hpp"

namespace frn {

inline Tensor uniform_tensor(Shape shape, double bound, std::mt19937_64& rng, DType dtype = DType::f32) {
  std::uniform_real_distribution<double> u(-bound, bound);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor::from_span(v, std::move(shape), dtype);
}

/// U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
inline Tensor fan_in_uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng, DType dtype = DType::f32) {
  return uniform_tensor(std::move(shape), 1.0 / std::sqrt(static_cast<double>(fan_in)), rng, dtype);
}

}  // namespace frn
