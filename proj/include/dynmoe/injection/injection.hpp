// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dynmoe/model/forward.hpp"

namespace dynmoe::injection {

using model::ExpertKind;
using model::MoEModel;

struct InjectionSpec {
  int n_new = 8;
  ExpertKind kind = ExpertKind::zero;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Pooled moments of one layer's router entries before and after injection.
struct LayerMoments {
  double mean_orig = 0.0;
  double std_orig = 0.0;
  double mean_new = 0.0;
  double std_new = 0.0;
};

/// Token-averaged comparison of a variant output against the original.
struct MismatchStats {
  double norm_diff = 0.0;  // mean |‖ỹ‖ − ‖y‖| / ‖y‖
  double vec_diff = 0.0;   // mean ‖ỹ − y‖ / ‖y‖
  double cosine = 0.0;     // mean cos(ỹ, y); a zero ỹ counts as 0
  std::size_t tokens = 0;
  std::size_t excluded = 0;  // tokens with ‖y‖ = 0
};

struct LayerMismatch {
  MismatchStats full;
  bool has_copy = false;
  MismatchStats normal_part;  // ỹ^norm, copy variants only
  MismatchStats copy_part;    // ỹ^cp, copy variants only
};

struct InjectionReport {
  std::vector<LayerMoments> moments;
  std::vector<LayerMismatch> mismatch;

  /// Long format: layer,metric,value.
  std::string to_csv() const;
  void write_csv(const std::string& path) const;
};

/// Pooled population mean and standard deviation, stable for constant data.
std::pair<double, double> pooled_moments(std::span<const double> xs);

/// Returns an augmented copy of a static model: each router gains `n_new`
/// Gaussian rows matching that layer's pooled router moments; everything else
/// is copied bit for bit. Throws StateError for an already augmented model.
MoEModel inject(const MoEModel& model, const InjectionSpec& spec, InjectionReport* report = nullptr);

/// Row-wise comparison of two [n, H] output matrices.
MismatchStats compare_outputs(const num::Tensor& y, const num::Tensor& y_tilde);

/// How the augmented blocks are fed.
///  - propagated: each model runs its own full forward pass.
///  - shared: augmented blocks see the original model's block inputs.
enum class MismatchInput { propagated, shared };

/// Per-layer output mismatch between `original` and `augmented` over `batch`.
/// The augmented model is evaluated as-is (its mask flag is honoured).
InjectionReport diagnose_mismatch(const MoEModel& original, const MoEModel& augmented,
                                  const model::TokenBatch& batch,
                                  MismatchInput input = MismatchInput::propagated);

}  // namespace dynmoe::injection
