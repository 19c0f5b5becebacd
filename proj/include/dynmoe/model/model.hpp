// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dynmoe/model/config.hpp"
#include "dynmoe/numerics/autograd.hpp"

namespace dynmoe::model {

using num::Tensor;
using num::Var;

/// Gated FFN expert: down(silu(gate h) * (up h)). Zero and copy experts leave
/// the three projections undefined.
struct Expert {
  ExpertKind kind = ExpertKind::normal;
  Var up;    // [H_e, H]
  Var gate;  // [H_e, H]
  Var down;  // [H, H_e]
};

/// Router rows: normal experts first, then the zero/copy candidates.
struct RouterParams {
  Var weight;  // [N + N_Z, H]
};

struct MoELayer {
  RouterParams router;
  std::vector<Expert> experts;  // length N + N_Z
};

struct AttentionParams {
  Var wq;  // [H_attn, H]
  Var wk;  // [kv_heads * d, H]
  Var wv;  // [kv_heads * d, H]
  Var wo;  // [H, H_attn]
};

struct Block {
  Var attn_norm;  // [H]
  AttentionParams attn;
  Var moe_norm;  // [H]
  MoELayer moe;
};

/// Parameter container for the toy MoE language model. Learned absolute
/// positions, pre-norm RMSNorm blocks, untied output head.
class MoEModel {
 public:
  MoEModel() = default;

  /// Random initialization of a model with `cfg` (normal experts only get
  /// parameters). Deterministic in `seed`.
  static MoEModel init(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ModelConfig& mutable_config() { return config_; }

  /// When set, router logits of all non-normal candidates are replaced by the
  /// masked sentinel, so they are never selected.
  bool extra_experts_masked() const { return mask_extra_; }
  void set_extra_experts_masked(bool masked) { mask_extra_ = masked; }

  /// Deterministic (name, tensor) list of every trainable parameter.
  std::vector<std::pair<std::string, Var>> named_parameters() const;
  std::vector<Var> parameters() const;

  /// Deep copy; the clone shares no storage with this model.
  MoEModel clone() const;

  std::size_t parameter_count() const;

  Var tok_emb;  // [V, H]
  Var pos_emb;  // [max_seq_len, H]
  std::vector<Block> blocks;
  Var final_norm;  // [H]
  Var head;        // [V, H]

 private:
  ModelConfig config_;
  bool mask_extra_ = false;

  friend MoEModel make_model_shell(const ModelConfig& cfg);
};

/// Model with every tensor allocated (zeros) in the layout of `cfg`; used by
/// checkpoint loading and injection.
MoEModel make_model_shell(const ModelConfig& cfg);

/// True when every parameter of `a` and `b` has equal names, shapes and bits.
bool parameters_bitwise_equal(const MoEModel& a, const MoEModel& b);

}  // namespace dynmoe::model
