#pragma once

#include "sphash/types.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace sphash {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Moment estimates for one parameter group; m[i] and v[i] mirror the i-th parameter.
struct AdamState {
  AdamConfig config;
  std::int64_t step = 0;
  std::vector<Matrix> m;
  std::vector<Matrix> v;
};

/// Zero-initialized moments shaped like `params`.
AdamState make_adam_state(std::span<const Matrix* const> params, const AdamConfig& config = {});

/// One bias-corrected Adam update. Coordinates whose gradient is exactly zero are left
/// untouched (parameter and moments), so parameters outside a loss's support never drift.
void adam_step(AdamState& state, std::span<Matrix* const> params, std::span<const Matrix> grads);

}  // namespace sphash
