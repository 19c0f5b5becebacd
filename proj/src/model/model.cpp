// SPDX-License-Identifier: Apache-2.0
#include "dynmoe/model/model.hpp"

#include <cmath>

#include "dynmoe/numerics/rng.hpp"

namespace dynmoe::model {

namespace {

using num::Shape;

Var param(Shape shape) { return Var::parameter(Tensor(std::move(shape), 0.0)); }

void fill_normal(Var& v, num::Rng& rng, double stddev) {
  for (auto& x : v.mutable_value().data()) x = rng.normal(0.0, stddev);
}

Var deep_copy(const Var& v) {
  if (!v.defined()) return Var();
  return Var::parameter(v.value());
}

}  // namespace

MoEModel make_model_shell(const ModelConfig& cfg) {
  cfg.validate();
  MoEModel m;
  m.config_ = cfg;
  const auto V = static_cast<std::size_t>(cfg.vocab_size);
  const auto H = static_cast<std::size_t>(cfg.hidden);
  const auto A = static_cast<std::size_t>(cfg.attn_inner);
  const auto KV = static_cast<std::size_t>(cfg.num_kv_heads() * cfg.head_dim());
  const auto He = static_cast<std::size_t>(cfg.expert_inner);
  const auto C = static_cast<std::size_t>(cfg.num_candidates());

  m.tok_emb = param({V, H});
  m.pos_emb = param({static_cast<std::size_t>(cfg.max_seq_len), H});
  m.blocks.resize(static_cast<std::size_t>(cfg.num_layers));
  for (auto& b : m.blocks) {
    b.attn_norm = Var::parameter(Tensor(Shape{H}, 1.0));
    b.attn.wq = param({A, H});
    b.attn.wk = param({KV, H});
    b.attn.wv = param({KV, H});
    b.attn.wo = param({H, A});
    b.moe_norm = Var::parameter(Tensor(Shape{H}, 1.0));
    b.moe.router.weight = param({C, H});
    b.moe.experts.resize(C);
    for (std::size_t e = 0; e < C; ++e) {
      auto& ex = b.moe.experts[e];
      if (e < static_cast<std::size_t>(cfg.num_experts)) {
        ex.kind = ExpertKind::normal;
        ex.up = param({He, H});
        ex.gate = param({He, H});
        ex.down = param({H, He});
      } else {
        ex.kind = cfg.extra_kind;
      }
    }
  }
  m.final_norm = Var::parameter(Tensor(Shape{H}, 1.0));
  m.head = param({V, H});
  return m;
}

MoEModel MoEModel::init(const ModelConfig& cfg, std::uint64_t seed) {
  MoEModel m = make_model_shell(cfg);
  num::Rng rng(num::derive_seed(seed, "model.init"));
  const double H = cfg.hidden;
  const double out_scale = 1.0 / std::sqrt(2.0 * cfg.num_layers);
  fill_normal(m.tok_emb, rng, 1.0);
  fill_normal(m.pos_emb, rng, 0.1);
  for (auto& b : m.blocks) {
    fill_normal(b.attn.wq, rng, 1.0 / std::sqrt(H));
    fill_normal(b.attn.wk, rng, 1.0 / std::sqrt(H));
    fill_normal(b.attn.wv, rng, 1.0 / std::sqrt(H));
    fill_normal(b.attn.wo, rng, out_scale / std::sqrt(static_cast<double>(cfg.attn_inner)));
    fill_normal(b.moe.router.weight, rng, 1.0 / std::sqrt(H));
    for (auto& ex : b.moe.experts) {
      if (ex.kind != ExpertKind::normal) continue;
      fill_normal(ex.up, rng, 1.0 / std::sqrt(H));
      fill_normal(ex.gate, rng, 1.0 / std::sqrt(H));
      fill_normal(ex.down, rng, out_scale / std::sqrt(static_cast<double>(cfg.expert_inner)));
    }
  }
  fill_normal(m.head, rng, 1.0 / std::sqrt(H));
  return m;
}

std::vector<std::pair<std::string, Var>> MoEModel::named_parameters() const {
  std::vector<std::pair<std::string, Var>> out;
  out.emplace_back("tok_emb", tok_emb);
  out.emplace_back("pos_emb", pos_emb);
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    const auto& b = blocks[l];
    const std::string p = "layers." + std::to_string(l) + ".";
    out.emplace_back(p + "attn_norm", b.attn_norm);
    out.emplace_back(p + "attn.wq", b.attn.wq);
    out.emplace_back(p + "attn.wk", b.attn.wk);
    out.emplace_back(p + "attn.wv", b.attn.wv);
    out.emplace_back(p + "attn.wo", b.attn.wo);
    out.emplace_back(p + "moe_norm", b.moe_norm);
    out.emplace_back(p + "router", b.moe.router.weight);
    for (std::size_t e = 0; e < b.moe.experts.size(); ++e) {
      const auto& ex = b.moe.experts[e];
      if (ex.kind != ExpertKind::normal) continue;
      const std::string q = p + "experts." + std::to_string(e) + ".";
      out.emplace_back(q + "up", ex.up);
      out.emplace_back(q + "gate", ex.gate);
      out.emplace_back(q + "down", ex.down);
    }
  }
  out.emplace_back("final_norm", final_norm);
  out.emplace_back("head", head);
  return out;
}

std::vector<Var> MoEModel::parameters() const {
  std::vector<Var> out;
  for (auto& [_, v] : named_parameters()) out.push_back(v);
  return out;
}

std::size_t MoEModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& v : parameters()) n += v.value().numel();
  return n;
}

MoEModel MoEModel::clone() const {
  MoEModel m;
  m.config_ = config_;
  m.mask_extra_ = mask_extra_;
  m.tok_emb = deep_copy(tok_emb);
  m.pos_emb = deep_copy(pos_emb);
  m.blocks.resize(blocks.size());
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    const auto& s = blocks[l];
    auto& d = m.blocks[l];
    d.attn_norm = deep_copy(s.attn_norm);
    d.attn.wq = deep_copy(s.attn.wq);
    d.attn.wk = deep_copy(s.attn.wk);
    d.attn.wv = deep_copy(s.attn.wv);
    d.attn.wo = deep_copy(s.attn.wo);
    d.moe_norm = deep_copy(s.moe_norm);
    d.moe.router.weight = deep_copy(s.moe.router.weight);
    d.moe.experts.resize(s.moe.experts.size());
    for (std::size_t e = 0; e < s.moe.experts.size(); ++e) {
      d.moe.experts[e].kind = s.moe.experts[e].kind;
      d.moe.experts[e].up = deep_copy(s.moe.experts[e].up);
      d.moe.experts[e].gate = deep_copy(s.moe.experts[e].gate);
      d.moe.experts[e].down = deep_copy(s.moe.experts[e].down);
    }
  }
  m.final_norm = deep_copy(final_norm);
  m.head = deep_copy(head);
  return m;
}

bool parameters_bitwise_equal(const MoEModel& a, const MoEModel& b) {
  const auto pa = a.named_parameters();
  const auto pb = b.named_parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i].first != pb[i].first) return false;
    if (!pa[i].second.value().bitwise_equal(pb[i].second.value())) return false;
  }
  return true;
}

}  // namespace dynmoe::model
