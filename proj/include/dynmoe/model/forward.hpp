// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <tuple>
#include <vector>

#include "dynmoe/model/model.hpp"
#include "dynmoe/model/routing.hpp"

namespace dynmoe::model {

/// How selected gates become mixture weights.
///  - standard: top-K gates as selected; mass on zero/copy slots is not
///    redistributed (a zero expert just contributes nothing).
///  - renormalized: gates of the selected normal experts rescaled to sum to 1.
enum class GateMode { standard, renormalized };

/// Fixed selections per layer (row-major [tokens x k]) to replay instead of
/// the router's own top-k. Gates are still recomputed from current logits.
struct RoutingTrace {
  std::vector<std::vector<int>> selections;
};

struct ForwardOptions {
  GateMode gate_mode = GateMode::standard;
  const RoutingTrace* replay = nullptr;
  /// Keep the per-layer MoE inputs and output components.
  bool keep_moe_io = false;
};

/// Routing record for one layer over all tokens of a forward pass.
struct LayerRouting {
  std::vector<RoutingDecision> decisions;  // one per token, row order b*T + t
  num::Var probs;                          // [n, N+N_Z] differentiable router probabilities
  int k = 0;
};

struct MoEBlockOutput {
  num::Var y;       // full block output
  num::Var y_norm;  // normal-expert component
  num::Var y_copy;  // copy component (zeros unless copy experts exist)
  LayerRouting routing;
};

/// Batched MoE block over hidden states h [n, H].
MoEBlockOutput moe_block_forward(const MoELayer& layer, const ModelConfig& cfg, const num::Var& h,
                                 GateMode mode, bool mask_extra,
                                 const std::vector<int>* replay_selection = nullptr);

// Single-token conveniences over moe_block_forward.
Tensor moe_forward_static(const MoELayer& layer, const ModelConfig& cfg, std::span<const double> h);
std::pair<Tensor, RoutingDecision> moe_forward_dynamic(const MoELayer& layer, const ModelConfig& cfg,
                                                       std::span<const double> h,
                                                       bool mask_extra = false);
std::pair<Tensor, RoutingDecision> moe_forward_renormalized(const MoELayer& layer,
                                                            const ModelConfig& cfg,
                                                            std::span<const double> h);
/// Returns (y_copy, y_copy_norm, y_copy_cp).
std::tuple<Tensor, Tensor, Tensor> moe_forward_copy(const MoELayer& layer, const ModelConfig& cfg,
                                                    std::span<const double> h);

/// Equal-length token sequences.
using TokenBatch = std::vector<std::vector<int>>;

struct MoEIO {
  Tensor input;   // [n, H] normalized block input
  Tensor y;       // [n, H]
  Tensor y_norm;  // [n, H]
  Tensor y_copy;  // [n, H]
};

struct LMOutput {
  num::Var logits;  // [B*T, V]
  std::size_t batch = 0;
  std::size_t seq_len = 0;
  std::vector<LayerRouting> layers;
  std::vector<MoEIO> moe_io;  // filled when keep_moe_io
};

/// Causal next-token logits for every position. Throws InputError for
/// out-of-vocabulary ids (naming the position) or over-long sequences.
LMOutput lm_forward(const MoEModel& model, const TokenBatch& batch, const ForwardOptions& opts = {});

/// Routing selections recorded by a forward pass, usable as a replay trace.
RoutingTrace trace_of(const LMOutput& out);

}  // namespace dynmoe::model
