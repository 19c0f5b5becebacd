// SPDX-License-Identifier: Apache-2.0
#include "dynmoe/model/config.hpp"

#include <cmath>
#include <set>

#include "dynmoe/errors.hpp"

namespace dynmoe::model {

std::string to_string(ExpertKind k) {
  switch (k) {
    case ExpertKind::normal: return "normal";
    case ExpertKind::zero: return "zero";
    case ExpertKind::copy: return "copy";
  }
  return "normal";
}

ExpertKind expert_kind_from_string(const std::string& s) {
  if (s == "normal") return ExpertKind::normal;
  if (s == "zero") return ExpertKind::zero;
  if (s == "copy") return ExpertKind::copy;
  throw ConfigError("unknown expert kind '" + s + "' (expected zero or copy)");
}

int ModelConfig::num_kv_heads() const {
  return static_cast<int>(std::lround(kv_ratio * num_heads));
}

void ModelConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v <= 0) throw ConfigError(std::string("model.") + name + " must be positive");
  };
  positive(vocab_size, "vocab_size");
  positive(num_layers, "num_layers");
  positive(hidden, "hidden");
  positive(attn_inner, "attn_inner");
  positive(num_heads, "num_heads");
  positive(expert_inner, "expert_inner");
  positive(num_experts, "num_experts");
  positive(top_k, "top_k");
  positive(max_seq_len, "max_seq_len");
  if (num_zero_experts < 0) throw ConfigError("model.num_zero_experts must be nonnegative");
  if (top_k > num_experts) throw ConfigError("model.top_k must not exceed num_experts");
  if (attn_inner % num_heads != 0) throw ConfigError("model.num_heads must divide attn_inner");
  if (!(kv_ratio > 0.0 && kv_ratio <= 1.0)) throw ConfigError("model.kv_ratio must lie in (0, 1]");
  const double kv = kv_ratio * num_heads;
  if (std::abs(kv - std::round(kv)) > 1e-9 || std::lround(kv) < 1) {
    throw ConfigError("model.kv_ratio * num_heads must be a positive integer");
  }
  if (num_heads % num_kv_heads() != 0) {
    throw ConfigError("model.num_heads must be a multiple of the kv head count");
  }
  if (k_override && (*k_override <= 0 || *k_override > top_k)) {
    throw ConfigError("model.k_override must lie in [1, top_k]");
  }
  if (extra_kind == ExpertKind::normal) {
    throw ConfigError("model.extra_kind must be zero or copy");
  }
  if (!(norm_eps > 0.0)) throw ConfigError("model.norm_eps must be positive");
}

double parse_ratio(const nlohmann::json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    const auto slash = s.find('/');
    try {
      if (slash == std::string::npos) return std::stod(s);
      return std::stod(s.substr(0, slash)) / std::stod(s.substr(slash + 1));
    } catch (const std::exception&) {
      throw ConfigError("cannot parse ratio '" + s + "'");
    }
  }
  throw ConfigError("ratio must be a number or a 'p/q' string");
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("model config must be an object");
  static const std::set<std::string> known = {
      "vocab_size", "num_layers",       "hidden",      "attn_inner", "num_heads",
      "kv_ratio",   "expert_inner",     "num_experts", "top_k",      "num_zero_experts",
      "max_seq_len", "k_override",      "extra_kind",  "norm_eps"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown key 'model." + key + "'");
  }
  ModelConfig c;
  auto get_int = [&](const char* key, int& dst) {
    if (!j.contains(key)) return;
    if (!j[key].is_number_integer()) throw ConfigError(std::string("model.") + key + " must be an integer");
    dst = j[key].get<int>();
  };
  get_int("vocab_size", c.vocab_size);
  get_int("num_layers", c.num_layers);
  get_int("hidden", c.hidden);
  get_int("attn_inner", c.attn_inner);
  get_int("num_heads", c.num_heads);
  get_int("expert_inner", c.expert_inner);
  get_int("num_experts", c.num_experts);
  get_int("top_k", c.top_k);
  get_int("num_zero_experts", c.num_zero_experts);
  get_int("max_seq_len", c.max_seq_len);
  if (j.contains("kv_ratio")) c.kv_ratio = parse_ratio(j["kv_ratio"]);
  if (j.contains("k_override") && !j["k_override"].is_null()) {
    if (!j["k_override"].is_number_integer()) throw ConfigError("model.k_override must be an integer");
    c.k_override = j["k_override"].get<int>();
  }
  if (j.contains("extra_kind")) c.extra_kind = expert_kind_from_string(j["extra_kind"].get<std::string>());
  if (j.contains("norm_eps")) c.norm_eps = j["norm_eps"].get<double>();
  c.validate();
  return c;
}

nlohmann::json to_json(const ModelConfig& c) {
  nlohmann::json j;
  j["vocab_size"] = c.vocab_size;
  j["num_layers"] = c.num_layers;
  j["hidden"] = c.hidden;
  j["attn_inner"] = c.attn_inner;
  j["num_heads"] = c.num_heads;
  j["kv_ratio"] = c.kv_ratio;
  j["expert_inner"] = c.expert_inner;
  j["num_experts"] = c.num_experts;
  j["top_k"] = c.top_k;
  j["num_zero_experts"] = c.num_zero_experts;
  j["max_seq_len"] = c.max_seq_len;
  j["k_override"] = c.k_override ? nlohmann::json(*c.k_override) : nlohmann::json(nullptr);
  j["extra_kind"] = to_string(c.extra_kind);
  j["norm_eps"] = c.norm_eps;
  return j;
}

}  // namespace dynmoe::model
