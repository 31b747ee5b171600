#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mla/kernel/tensor.hpp"

namespace mla::kernel {

struct AdamState {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

// One bias-corrected Adam update of every parameter from its grad buffer.
// Throws NumericError before touching anything if a gradient is not finite.
void adam_step(std::span<Tensor* const> params, AdamState& state);

}  // namespace mla::kernel
