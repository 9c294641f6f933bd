#pragma once

#include <cstdint>
#include <vector>

#include "ctrlo/params.hpp"

namespace ctrlo {

struct AdamConfig {
  double lr = 4e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam over a parameter registry. First/second moments are
/// kept per parameter; `t` increases by exactly one per step.
class Adam {
 public:
  Adam(const ParamRegistry& reg, AdamConfig cfg);

  /// Applies one update in place. `grads` must be in registry order.
  void step(const ParamRegistry& reg, const std::vector<ad::Mat>& grads);

  std::int64_t steps_taken() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  std::vector<ad::Mat> m_, v_;
  std::int64_t t_ = 0;
};

}  // namespace ctrlo
