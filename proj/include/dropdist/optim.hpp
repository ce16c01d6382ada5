#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dropdist/tensor.hpp"

namespace dropdist {

struct AdamState {
  double lr = 0.005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t t = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

/// One bias-corrected Adam update of `params` from their `grad` buffers.
/// Moments are allocated on the first call; parameters without a gradient
/// buffer are treated as having zero gradient.
void adam_step(std::span<Tensor* const> params, AdamState& state);

/// Clears every gradient buffer to zero.
void zero_grads(std::span<Tensor* const> params);

}  // namespace dropdist
