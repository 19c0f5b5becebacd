// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "dynmoe/numerics/autograd.hpp"

namespace dynmoe::distill {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  double weight_decay = 0.0;
  /// Global gradient-norm clip; 0 disables.
  double clip_norm = 1.0;
};

/// Adam with decoupled weight decay. Parameters without a gradient are left
/// untouched (apart from decay).
class AdamW {
 public:
  AdamW(std::vector<num::Var> params, AdamWConfig cfg);

  /// Applies one update from the accumulated gradients, then clears them.
  /// Returns the pre-clip global gradient norm.
  double step();
  void zero_grad();

  long steps() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }

 private:
  std::vector<num::Var> params_;
  AdamWConfig cfg_;
  std::vector<num::Tensor> m_, v_;
  long t_ = 0;
};

}  // namespace dynmoe::distill
