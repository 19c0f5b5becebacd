// SPDX-License-Identifier: Apache-2.0
#include "dynmoe/model/forward.hpp"

#include <string>

#include "dynmoe/errors.hpp"
#include "dynmoe/numerics/ops.hpp"

namespace dynmoe::model {

using num::Shape;

namespace {

bool any_set(const std::vector<std::uint8_t>& m) {
  for (auto v : m) {
    if (v) return true;
  }
  return false;
}

Var zeros(std::size_t n, std::size_t h) { return Var(Tensor(Shape{n, h}, 0.0)); }

}  // namespace

MoEBlockOutput moe_block_forward(const MoELayer& layer, const ModelConfig& cfg, const Var& h,
                                 GateMode mode, bool mask_extra,
                                 const std::vector<int>* replay_selection) {
  const std::size_t n = h.value().rows();
  const std::size_t H = h.value().cols();
  const std::size_t C = layer.experts.size();
  const int k = cfg.active_k();
  const std::size_t ku = static_cast<std::size_t>(k);
  if (layer.router.weight.shape()[0] != C) {
    throw DimensionError("router rows " + num::shape_str(layer.router.weight.shape()) +
                         " vs candidate count " + std::to_string(C));
  }

  const auto mask = candidate_mask(layer, mask_extra);
  Var logits = num::matmul_bt(h, layer.router.weight);
  if (any_set(mask)) logits = num::mask_columns(logits, mask);
  Var probs = num::softmax_lastdim(logits);

  std::vector<std::size_t> sel(n * ku);
  if (replay_selection) {
    if (replay_selection->size() != n * ku) {
      throw DimensionError("routing replay has " + std::to_string(replay_selection->size()) +
                           " entries, expected " + std::to_string(n * ku));
    }
    for (std::size_t i = 0; i < n * ku; ++i) sel[i] = static_cast<std::size_t>((*replay_selection)[i]);
  } else {
    for (std::size_t r = 0; r < n; ++r) {
      const auto row = select_topk(probs.value().row(r), mask, k);
      for (std::size_t s = 0; s < ku; ++s) sel[r * ku + s] = static_cast<std::size_t>(row[s]);
    }
  }

  std::vector<std::uint8_t> include_all(n * ku, 1);
  std::vector<std::uint8_t> include_normal(n * ku, 0);
  for (std::size_t i = 0; i < n * ku; ++i) {
    include_normal[i] = layer.experts[sel[i]].kind == ExpertKind::normal;
  }
  Var gates = num::subset_normalize(probs, sel, include_all, ku);
  Var mix = mode == GateMode::renormalized ? num::subset_normalize(probs, sel, include_normal, ku) : gates;

  MoEBlockOutput out;
  out.routing.k = k;
  out.routing.probs = probs;
  out.routing.decisions.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    auto& d = out.routing.decisions[r];
    const auto pr = probs.value().row(r);
    d.probs_full.assign(pr.begin(), pr.end());
    bool any_normal = false;
    for (std::size_t s = 0; s < ku; ++s) {
      const std::size_t c = sel[r * ku + s];
      d.selected.push_back(static_cast<int>(c));
      d.gates.push_back(gates.value()[r * ku + s]);
      d.mix_gates.push_back(mix.value()[r * ku + s]);
      if (layer.experts[c].kind != ExpertKind::normal) {
        ++d.zero_selected;
      } else {
        any_normal = true;
      }
    }
    d.fully_skipped = mode == GateMode::renormalized && !any_normal;
  }

  // Normal experts, ascending index; each token accumulates its experts in
  // that order.
  Var y_norm = zeros(n, H);
  std::vector<std::size_t> rows, flat;
  for (std::size_t e = 0; e < C; ++e) {
    const auto& ex = layer.experts[e];
    if (ex.kind != ExpertKind::normal) continue;
    rows.clear();
    flat.clear();
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t s = 0; s < ku; ++s) {
        if (sel[r * ku + s] == e) {
          rows.push_back(r);
          flat.push_back(r * ku + s);
        }
      }
    }
    if (rows.empty()) continue;
    Var x = num::gather_rows(h, rows);
    Var act = num::mul(num::silu(num::matmul_bt(x, ex.gate)), num::matmul_bt(x, ex.up));
    Var o = num::matmul_bt(act, ex.down);
    o = num::scale_rows(o, num::gather_elements(mix, flat));
    y_norm = num::index_add_rows(y_norm, rows, o);
  }

  Var y_copy = zeros(n, H);
  bool has_copy = false;
  rows.clear();
  flat.clear();
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t s = 0; s < ku; ++s) {
      if (layer.experts[sel[r * ku + s]].kind == ExpertKind::copy) {
        rows.push_back(r);
        flat.push_back(r * ku + s);
      }
    }
  }
  for (const auto& ex : layer.experts) has_copy = has_copy || ex.kind == ExpertKind::copy;
  if (!rows.empty()) {
    Var cp = num::scale_rows(num::gather_rows(h, rows), num::gather_elements(mix, flat));
    y_copy = num::index_add_rows(y_copy, rows, cp);
  }

  out.y_norm = y_norm;
  out.y_copy = y_copy;
  out.y = has_copy ? num::add(y_norm, y_copy) : y_norm;
  return out;
}

namespace {

MoEBlockOutput single(const MoELayer& layer, const ModelConfig& cfg, std::span<const double> h,
                      GateMode mode, bool mask_extra) {
  num::NoGradGuard guard;
  Var hv(Tensor(Shape{1, h.size()}, std::vector<double>(h.begin(), h.end())));
  return moe_block_forward(layer, cfg, hv, mode, mask_extra);
}

Tensor row_vector(const Var& v) { return v.value().reshaped(Shape{v.value().cols()}); }

}  // namespace

Tensor moe_forward_static(const MoELayer& layer, const ModelConfig& cfg, std::span<const double> h) {
  bool extra = false;
  for (const auto& ex : layer.experts) extra = extra || ex.kind != ExpertKind::normal;
  return row_vector(single(layer, cfg, h, GateMode::standard, extra).y);
}

std::pair<Tensor, RoutingDecision> moe_forward_dynamic(const MoELayer& layer, const ModelConfig& cfg,
                                                       std::span<const double> h, bool mask_extra) {
  auto out = single(layer, cfg, h, GateMode::standard, mask_extra);
  return {row_vector(out.y_norm), out.routing.decisions[0]};
}

std::pair<Tensor, RoutingDecision> moe_forward_renormalized(const MoELayer& layer,
                                                            const ModelConfig& cfg,
                                                            std::span<const double> h) {
  auto out = single(layer, cfg, h, GateMode::renormalized, false);
  return {row_vector(out.y_norm), out.routing.decisions[0]};
}

std::tuple<Tensor, Tensor, Tensor> moe_forward_copy(const MoELayer& layer, const ModelConfig& cfg,
                                                    std::span<const double> h) {
  auto out = single(layer, cfg, h, GateMode::standard, false);
  return {row_vector(out.y), row_vector(out.y_norm), row_vector(out.y_copy)};
}

LMOutput lm_forward(const MoEModel& model, const TokenBatch& batch, const ForwardOptions& opts) {
  const auto& cfg = model.config();
  if (batch.empty() || batch[0].empty()) throw InputError("lm_forward: empty batch");
  const std::size_t B = batch.size();
  const std::size_t T = batch[0].size();
  if (T > static_cast<std::size_t>(cfg.max_seq_len)) {
    throw InputError("lm_forward: sequence length " + std::to_string(T) + " exceeds max_seq_len " +
                     std::to_string(cfg.max_seq_len));
  }
  std::vector<std::size_t> ids(B * T), pos(B * T);
  for (std::size_t b = 0; b < B; ++b) {
    if (batch[b].size() != T) throw InputError("lm_forward: sequences in a batch must share a length");
    for (std::size_t t = 0; t < T; ++t) {
      const int tok = batch[b][t];
      if (tok < 0 || tok >= cfg.vocab_size) {
        throw InputError("lm_forward: token id " + std::to_string(tok) + " out of vocabulary at sequence " +
                         std::to_string(b) + " position " + std::to_string(t));
      }
      ids[b * T + t] = static_cast<std::size_t>(tok);
      pos[b * T + t] = t;
    }
  }
  if (opts.replay && opts.replay->selections.size() != model.blocks.size()) {
    throw DimensionError("routing replay covers " + std::to_string(opts.replay->selections.size()) +
                         " layers, model has " + std::to_string(model.blocks.size()));
  }

  num::AttentionShape as;
  as.batch = B;
  as.seq_len = T;
  as.num_heads = static_cast<std::size_t>(cfg.num_heads);
  as.num_kv_heads = static_cast<std::size_t>(cfg.num_kv_heads());
  as.head_dim = static_cast<std::size_t>(cfg.head_dim());

  LMOutput out;
  out.batch = B;
  out.seq_len = T;
  Var x = num::add(num::gather_rows(model.tok_emb, ids), num::gather_rows(model.pos_emb, pos));
  for (std::size_t l = 0; l < model.blocks.size(); ++l) {
    const auto& blk = model.blocks[l];
    Var a = num::rmsnorm(x, blk.attn_norm, cfg.norm_eps);
    Var att = num::causal_attention(num::matmul_bt(a, blk.attn.wq), num::matmul_bt(a, blk.attn.wk),
                                    num::matmul_bt(a, blk.attn.wv), as);
    x = num::add(x, num::matmul_bt(att, blk.attn.wo));
    Var hn = num::rmsnorm(x, blk.moe_norm, cfg.norm_eps);
    auto moe = moe_block_forward(blk.moe, cfg, hn, opts.gate_mode, model.extra_experts_masked(),
                                 opts.replay ? &opts.replay->selections[l] : nullptr);
    x = num::add(x, moe.y);
    if (opts.keep_moe_io) {
      out.moe_io.push_back({hn.value(), moe.y.value(), moe.y_norm.value(), moe.y_copy.value()});
    }
    out.layers.push_back(std::move(moe.routing));
  }
  x = num::rmsnorm(x, model.final_norm, cfg.norm_eps);
  out.logits = num::matmul_bt(x, model.head);
  return out;
}

RoutingTrace trace_of(const LMOutput& out) {
  RoutingTrace t;
  for (const auto& layer : out.layers) {
    std::vector<int> sel;
    for (const auto& d : layer.decisions) sel.insert(sel.end(), d.selected.begin(), d.selected.end());
    t.selections.push_back(std::move(sel));
  }
  return t;
}

}  // namespace dynmoe::model
