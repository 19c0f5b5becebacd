// SPDX-License-Identifier: Apache-2.0
#include "dynmoe/model/decoder.hpp"

#include <cmath>
#include <string>

#include "dynmoe/errors.hpp"
#include "dynmoe/numerics/kernels.hpp"

namespace dynmoe::model {

namespace k = num::kernels;

IncrementalDecoder::IncrementalDecoder(const MoEModel& model, GateMode mode)
    : model_(&model), mode_(mode) {
  const auto& cfg = model.config();
  kv_width_ = static_cast<std::size_t>(cfg.num_kv_heads() * cfg.head_dim());
  reset();
}

void IncrementalDecoder::reset() {
  const auto& cfg = model_->config();
  pos_ = 0;
  const std::size_t cap = static_cast<std::size_t>(cfg.max_seq_len) * kv_width_;
  keys_.assign(model_->blocks.size(), std::vector<double>(cap, 0.0));
  values_.assign(model_->blocks.size(), std::vector<double>(cap, 0.0));
  logits_.clear();
  routing_.clear();
}

const std::vector<double>& IncrementalDecoder::step(int token) {
  const auto& m = *model_;
  const auto& cfg = m.config();
  if (token < 0 || token >= cfg.vocab_size) {
    throw InputError("decoder: token id " + std::to_string(token) + " out of vocabulary at position " +
                     std::to_string(pos_));
  }
  if (pos_ >= static_cast<std::size_t>(cfg.max_seq_len)) {
    throw InputError("decoder: position " + std::to_string(pos_) + " exceeds max_seq_len");
  }
  const std::size_t H = static_cast<std::size_t>(cfg.hidden);
  const std::size_t A = static_cast<std::size_t>(cfg.attn_inner);
  const std::size_t d = static_cast<std::size_t>(cfg.head_dim());
  const std::size_t heads = static_cast<std::size_t>(cfg.num_heads);
  const std::size_t group = heads / static_cast<std::size_t>(cfg.num_kv_heads());
  const double sc = 1.0 / std::sqrt(static_cast<double>(d));

  std::vector<double> x(H), a(H), q(A), att(A), proj(H), probs(pos_ + 1);
  const double* te = m.tok_emb.value().ptr() + static_cast<std::size_t>(token) * H;
  const double* pe = m.pos_emb.value().ptr() + pos_ * H;
  for (std::size_t j = 0; j < H; ++j) x[j] = te[j] + pe[j];

  routing_.clear();
  for (std::size_t l = 0; l < m.blocks.size(); ++l) {
    const auto& blk = m.blocks[l];
    k::rmsnorm_row(x.data(), blk.attn_norm.value().ptr(), a.data(), H, cfg.norm_eps);
    double* krow = keys_[l].data() + pos_ * kv_width_;
    double* vrow = values_[l].data() + pos_ * kv_width_;
    k::matmul_bt(a.data(), blk.attn.wq.value().ptr(), q.data(), 1, H, A);
    k::matmul_bt(a.data(), blk.attn.wk.value().ptr(), krow, 1, H, kv_width_);
    k::matmul_bt(a.data(), blk.attn.wv.value().ptr(), vrow, 1, H, kv_width_);
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t kh = h / group;
      k::attention_row(q.data() + h * d, keys_[l].data() + kh * d, values_[l].data() + kh * d, pos_ + 1,
                       kv_width_, d, sc, att.data() + h * d, probs.data());
    }
    k::matmul_bt(att.data(), blk.attn.wo.value().ptr(), proj.data(), 1, A, H);
    for (std::size_t j = 0; j < H; ++j) x[j] = x[j] + proj[j];

    k::rmsnorm_row(x.data(), blk.moe_norm.value().ptr(), a.data(), H, cfg.norm_eps);
    num::NoGradGuard guard;
    num::Var hv(num::Tensor(num::Shape{1, H}, a));
    auto moe = moe_block_forward(blk.moe, cfg, hv, mode_, m.extra_experts_masked());
    const double* y = moe.y.value().ptr();
    for (std::size_t j = 0; j < H; ++j) x[j] = x[j] + y[j];
    routing_.push_back(std::move(moe.routing.decisions[0]));
  }
  k::rmsnorm_row(x.data(), m.final_norm.value().ptr(), a.data(), H, cfg.norm_eps);
  const std::size_t V = static_cast<std::size_t>(cfg.vocab_size);
  logits_.assign(V, 0.0);
  k::matmul_bt(a.data(), m.head.value().ptr(), logits_.data(), 1, H, V);
  ++pos_;
  return logits_;
}

}  // namespace dynmoe::model
