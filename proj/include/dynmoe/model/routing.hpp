// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "dynmoe/model/model.hpp"

namespace dynmoe::model {

/// Per-token routing outcome of one MoE layer.
struct RoutingDecision {
  std::vector<int> selected;        // candidate indices in selection order
  std::vector<double> gates;        // top-K gates, renormalized over `selected`
  std::vector<double> mix_gates;    // weights actually applied to expert outputs
  int zero_selected = 0;            // selected candidates whose kind is not normal
  bool fully_skipped = false;       // renormalized variant with no normal expert
  std::vector<double> probs_full;   // softmax over all candidates
};

/// Ranks candidates by probability (descending), ties to the lower index,
/// skipping masked candidates. Throws ConfigError if k exceeds the number of
/// unmasked candidates.
std::vector<int> select_topk(std::span<const double> probs, std::span<const std::uint8_t> masked,
                             int k);

/// Router logits for a single hidden state; masked candidates carry the
/// masked sentinel.
std::vector<double> router_logits(const RouterParams& router, std::span<const double> h,
                                  std::span<const std::uint8_t> masked);

/// Softmax over all candidates, top-k selection, gates renormalized over the
/// selected set. `kinds` (optional) fills `zero_selected`.
RoutingDecision route_topk(const RouterParams& router, std::span<const double> h, int k,
                           std::span<const std::uint8_t> masked = {},
                           std::span<const ExpertKind> kinds = {});

/// Mask vector for a layer: 1 for every non-normal candidate when `mask_extra`.
std::vector<std::uint8_t> candidate_mask(const MoELayer& layer, bool mask_extra);

}  // namespace dynmoe::model
