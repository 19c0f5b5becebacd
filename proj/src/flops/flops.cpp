// SPDX-License-Identifier: Apache-2.0
#include "dynmoe/flops/flops.hpp"

#include <cstdio>
#include <sstream>

#include "dynmoe/errors.hpp"
#include "dynmoe/model/config.hpp"

namespace dynmoe::flops {

void FlopsConfig::validate() const {
  auto pos = [](double v, const char* name) {
    if (!(v > 0.0)) throw ConfigError(std::string("flops.") + name + " must be positive");
  };
  pos(hidden, "hidden");
  pos(attn_inner, "attn_inner");
  pos(kv_ratio, "kv_ratio");
  pos(expert_inner, "expert_inner");
  pos(num_experts, "num_experts");
  pos(top_k, "top_k");
  if (num_zero < 0.0) throw ConfigError("flops.num_zero must be >= 0");
  if (kv_ratio > 1.0) throw ConfigError("flops.kv_ratio must be <= 1");
  if (top_k > num_experts) throw ConfigError("flops.top_k must not exceed flops.num_experts");
  if (!(r_ze >= 0.0 && r_ze <= 1.0)) throw ConfigError("flops.r_ze must lie in [0, 1]");
}

FlopsConfig flops_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("flops config must be an object");
  FlopsConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "hidden") c.hidden = v.get<double>();
    else if (key == "attn_inner") c.attn_inner = v.get<double>();
    else if (key == "kv_ratio") c.kv_ratio = model::parse_ratio(v);
    else if (key == "expert_inner") c.expert_inner = v.get<double>();
    else if (key == "num_experts") c.num_experts = v.get<double>();
    else if (key == "num_zero") c.num_zero = v.get<double>();
    else if (key == "top_k") c.top_k = v.get<double>();
    else if (key == "r_ze") c.r_ze = v.get<double>();
    else throw ConfigError("unknown key 'flops." + key + "'");
  }
  c.validate();
  return c;
}

nlohmann::json to_json(const FlopsConfig& c) {
  return {{"hidden", c.hidden},         {"attn_inner", c.attn_inner},   {"kv_ratio", c.kv_ratio},
          {"expert_inner", c.expert_inner}, {"num_experts", c.num_experts}, {"num_zero", c.num_zero},
          {"top_k", c.top_k},           {"r_ze", c.r_ze}};
}

Stage stage_from_string(const std::string& s) {
  if (s == "prefill") return Stage::prefill;
  if (s == "decode") return Stage::decode;
  throw ConfigError("unknown stage '" + s + "'");
}

std::string to_string(Stage s) { return s == Stage::prefill ? "prefill" : "decode"; }

FlopsBreakdown FlopsBreakdown::per_token_mac(double l) const {
  const double d = 2.0 * l;
  return {attention / d, ffn / d, router / d, total / d};
}

std::pair<double, double> moe_flops(const FlopsConfig& c, double n, Variant v) {
  if (n < 1.0) throw InputError("moe_flops: n_tokens must be >= 1");
  if (v == Variant::orig) {
    return {6.0 * c.top_k * n * c.hidden * c.expert_inner, 2.0 * c.num_experts * n * c.hidden};
  }
  return {6.0 * (1.0 - c.r_ze) * c.top_k * n * c.hidden * c.expert_inner,
          2.0 * (c.num_experts + c.num_zero) * n * c.hidden};
}

double attention_flops(const FlopsConfig& c, double l, Stage stage) {
  if (l < 1.0) throw InputError("attention_flops: l must be >= 1");
  const double proj = 4.0 * (1.0 + c.kv_ratio) * l * c.hidden * c.attn_inner;
  const double pair = stage == Stage::prefill ? 4.0 * l * l * c.attn_inner : 2.0 * l * (l - 1.0) * c.attn_inner;
  return pair + proj;
}

FlopsBreakdown flops_stage(const FlopsConfig& c, double l, Stage stage, Variant v) {
  FlopsBreakdown b;
  b.attention = attention_flops(c, l, stage);
  std::tie(b.ffn, b.router) = moe_flops(c, l, v);
  b.total = b.attention + b.ffn + b.router;
  return b;
}

double speedup(const FlopsConfig& c, double l, Stage stage) {
  return flops_stage(c, l, stage, Variant::orig).total / flops_stage(c, l, stage, Variant::dynamic).total;
}

std::vector<SpeedupRow> speedup_table(const FlopsConfig& cfg, const std::vector<double>& lengths,
                                      const std::vector<double>& r_ze_values) {
  if (lengths.empty() || r_ze_values.empty()) throw InputError("speedup_table: empty length or r_ze list");
  std::vector<SpeedupRow> rows;
  for (double r : r_ze_values) {
    FlopsConfig c = cfg;
    c.r_ze = r;
    c.validate();
    for (double l : lengths) rows.push_back({l, r, speedup(c, l, Stage::prefill), speedup(c, l, Stage::decode)});
  }
  return rows;
}

namespace {

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string speedup_csv(const std::vector<SpeedupRow>& rows) {
  std::string s = "length,r_ze,prefill_speedup,decode_speedup\n";
  for (const auto& r : rows) s += num(r.length) + "," + num(r.r_ze) + "," + num(r.prefill) + "," + num(r.decode) + "\n";
  return s;
}

std::string breakdown_csv(const FlopsConfig& cfg, const std::vector<double>& lengths) {
  std::string s = "length,stage,variant,attention,ffn,router,total\n";
  for (double l : lengths) {
    for (Stage st : {Stage::prefill, Stage::decode}) {
      for (Variant v : {Variant::orig, Variant::dynamic}) {
        const auto b = flops_stage(cfg, l, st, v);
        s += num(l) + "," + to_string(st) + "," + (v == Variant::orig ? "orig" : "dynamic") + "," + num(b.attention) +
             "," + num(b.ffn) + "," + num(b.router) + "," + num(b.total) + "\n";
      }
    }
  }
  return s;
}

}  // namespace dynmoe::flops
