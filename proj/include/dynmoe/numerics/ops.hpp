// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

#include "dynmoe/numerics/autograd.hpp"

// Differentiable tensor ops. All inputs are float64; shapes are checked
// eagerly and mismatches raise DimensionError naming both shapes.
namespace dynmoe::num {

Var matmul(const Var& a, const Var& b);     // [m,n] x [n,p] -> [m,p]
Var matmul_bt(const Var& a, const Var& b);  // [m,n] x [p,n]^T -> [m,p]

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var silu(const Var& a);
Var square(const Var& a);

Var rmsnorm(const Var& x, const Var& weight, double eps);

Var softmax_lastdim(const Var& x);
Var log_softmax_lastdim(const Var& x);

/// Replaces the flagged trailing-dimension columns with kMaskedLogit.
Var mask_columns(const Var& x, std::span<const std::uint8_t> masked);

Var gather_rows(const Var& x, std::span<const std::size_t> rows);
/// base + scatter(src -> rows); `rows` may repeat.
Var index_add_rows(const Var& base, std::span<const std::size_t> rows, const Var& src);
/// Row r of x multiplied by w[r].
Var scale_rows(const Var& x, const Var& w);
/// out[r] = x[r, idx[r]]
Var pick_lastdim(const Var& x, std::span<const std::size_t> idx);
/// Flat-index gather into a rank-1 result.
Var gather_elements(const Var& x, std::span<const std::size_t> flat_idx);

Var sum(const Var& x);
Var mean(const Var& x);
/// sum_i x_i * c_i with c held constant.
Var dot_const(const Var& x, const Tensor& c);
/// [n,C] -> [C], mean over rows in ascending row order.
Var column_mean(const Var& x);

/// For each row r and slot s < k: probs[r, cols[r*k+s]] divided by the sum
/// over slots with include=1 in that row; excluded slots (and rows with no
/// included slot) produce 0.
Var subset_normalize(const Var& probs, std::span<const std::size_t> cols,
                     std::span<const std::uint8_t> include, std::size_t k);

struct AttentionShape {
  std::size_t batch = 1;
  std::size_t seq_len = 1;
  std::size_t num_heads = 1;
  std::size_t num_kv_heads = 1;
  std::size_t head_dim = 1;
};

/// Causal grouped-query attention. q: [B*T, heads*d]; k, v: [B*T, kv_heads*d].
/// Query head h reads kv head h / (heads / kv_heads).
Var causal_attention(const Var& q, const Var& k, const Var& v, const AttentionShape& s);

}  // namespace dynmoe::num
