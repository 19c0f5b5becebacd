// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dynmoe/numerics/autograd.hpp"

namespace dynmoe::num {

struct GradCheckEntry {
  std::string name;
  std::size_t numel = 0;
  /// max_i |tape_i - fd_i| over this tensor, divided by the largest |tape| or
  /// |fd| entry across every checked tensor (at least `scale_floor`).
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t worst_index = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tolerance = 0.0;
  bool passed = false;

  double worst() const;
  std::string summary() const;
};

struct GradCheckOptions {
  double eps = 1e-5;
  double tol = 1e-6;
  /// Gradient magnitude below which errors are taken as absolute.
  double scale_floor = 1e-8;
};

/// Compares tape gradients of `loss_fn` against central differences,
/// perturbing every element of every tensor in `params` in place (restored
/// afterwards). `loss_fn` must rebuild the graph from the current parameter
/// values on each call. Throws NumericError naming the probe when the loss is
/// non-finite at any evaluation point.
GradCheckReport grad_check(const std::function<Var()>& loss_fn, std::vector<Var> params,
                           std::vector<std::string> names, const GradCheckOptions& opts = {});

}  // namespace dynmoe::num
