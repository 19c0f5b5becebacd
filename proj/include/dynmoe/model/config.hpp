// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>

#include "json.hpp"

namespace dynmoe::model {

/// What a candidate slot computes. Zero and copy experts carry no parameters.
enum class ExpertKind { normal, zero, copy };

std::string to_string(ExpertKind k);
ExpertKind expert_kind_from_string(const std::string& s);

/// Architecture of the toy causal transformer with MoE feed-forward blocks.
///
/// `num_zero_experts == 0` is a static model; any positive value is an
/// augmented model whose extra candidates all have kind `extra_kind`.
/// `k_override` shrinks the per-token selection count (the naive expert
/// truncation baseline) without touching parameters.
struct ModelConfig {
  int vocab_size = 64;
  int num_layers = 4;
  int hidden = 64;
  int attn_inner = 64;
  int num_heads = 4;
  double kv_ratio = 0.5;
  int expert_inner = 32;
  int num_experts = 16;
  int top_k = 4;
  int num_zero_experts = 0;
  int max_seq_len = 64;
  std::optional<int> k_override;
  ExpertKind extra_kind = ExpertKind::zero;
  double norm_eps = 1e-6;

  /// Throws ConfigError describing the first violated constraint.
  void validate() const;

  int num_kv_heads() const;
  int head_dim() const { return attn_inner / num_heads; }
  int num_candidates() const { return num_experts + num_zero_experts; }
  int active_k() const { return k_override.value_or(top_k); }
  bool augmented() const { return num_zero_experts > 0; }

  bool operator==(const ModelConfig&) const = default;
};

/// Strict conversion: unknown keys are rejected with ConfigError.
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ModelConfig& c);

/// Accepts a number or a "p/q" string.
double parse_ratio(const nlohmann::json& j);

}  // namespace dynmoe::model
