// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

#include "dynmoe/model/config.hpp"
#include "dynmoe/numerics/rng.hpp"
#include "dynmoe/numerics/tensor.hpp"

namespace dynmoe::testing_util {

inline num::Tensor random_tensor(num::Shape shape, std::uint64_t seed, double stddev = 1.0) {
  num::Rng rng(seed);
  num::Tensor t(std::move(shape));
  for (auto& x : t.data()) x = rng.normal(0.0, stddev);
  return t;
}

inline model::ModelConfig tiny_config(int n_zero = 0) {
  model::ModelConfig c;
  c.vocab_size = 11;
  c.num_layers = 2;
  c.hidden = 8;
  c.attn_inner = 8;
  c.num_heads = 2;
  c.kv_ratio = 0.5;
  c.expert_inner = 4;
  c.num_experts = 4;
  c.top_k = 2;
  c.num_zero_experts = n_zero;
  c.max_seq_len = 12;
  return c;
}

}  // namespace dynmoe::testing_util
