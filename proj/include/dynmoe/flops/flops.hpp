// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace dynmoe::flops {

/// Architecture symbols of the analytic cost model.
struct FlopsConfig {
  double hidden = 2048;       // H
  double attn_inner = 4096;   // H_attn
  double kv_ratio = 0.125;    // g_kv
  double expert_inner = 768;  // H_e
  double num_experts = 128;   // N
  double num_zero = 64;       // N_Z
  double top_k = 8;           // K
  double r_ze = 0.5;

  void validate() const;
  /// The 30B-A3B reference architecture.
  static FlopsConfig reference() { return {}; }
};

FlopsConfig flops_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const FlopsConfig& c);

enum class Variant { orig, dynamic };
enum class Stage { prefill, decode };

Stage stage_from_string(const std::string& s);
std::string to_string(Stage s);

/// Per-layer counts. All terms are exact integers in double precision for
/// the reference architecture at every length up to 2^20.
struct FlopsBreakdown {
  double attention = 0.0;
  double ffn = 0.0;
  double router = 0.0;
  double total = 0.0;

  /// Every term divided by 2l (multiply-accumulates per token).
  FlopsBreakdown per_token_mac(double l) const;
};

/// Expert FFN and router cost for `n_tokens` tokens: (ffn, router).
/// orig: 6 K n H H_e and 2 N n H. dynamic: 6 (1 - r_ze) K n H H_e and 2 (N + N_Z) n H.
std::pair<double, double> moe_flops(const FlopsConfig& cfg, double n_tokens, Variant v);

/// Attention terms for a sequence of length l:
///   prefill 4 l^2 H_attn + 4 (1 + g_kv) l H H_attn
///   decode  2 l (l - 1) H_attn + 4 (1 + g_kv) l H H_attn
double attention_flops(const FlopsConfig& cfg, double l, Stage stage);

FlopsBreakdown flops_stage(const FlopsConfig& cfg, double l, Stage stage, Variant v);

/// F_orig / F_dynamic for the stage.
double speedup(const FlopsConfig& cfg, double l, Stage stage);

struct SpeedupRow {
  double length;
  double r_ze;
  double prefill;
  double decode;
};

std::vector<SpeedupRow> speedup_table(const FlopsConfig& cfg, const std::vector<double>& lengths,
                                      const std::vector<double>& r_ze_values);

/// Columns length,r_ze,prefill_speedup,decode_speedup.
std::string speedup_csv(const std::vector<SpeedupRow>& rows);

/// Columns length,stage,variant,attention,ffn,router,total.
std::string breakdown_csv(const FlopsConfig& cfg, const std::vector<double>& lengths);

}  // namespace dynmoe::flops
