#pragma once

#include <cmath>

#include "mcst/rng.hpp"
#include "mcst/tensor.hpp"

namespace mcst {

inline Tensor uniform_init(Shape shape, double lo, double hi, Rng& rng) {
  Tensor t(std::move(shape));
  for (size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

inline Tensor xavier_uniform(Shape shape, size_t fan_in, size_t fan_out,
                             Rng& rng) {
  const double limit =
      std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return uniform_init(std::move(shape), -limit, limit, rng);
}

template <typename... Ts>
inline void mark_trainable(Ts&... tensors) {
  (tensors.set_requires_grad(true), ...);
}

}  // namespace mcst
