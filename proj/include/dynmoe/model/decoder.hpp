// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "dynmoe/model/forward.hpp"

namespace dynmoe::model {

/// Token-at-a-time decoder with a key/value cache. Produces the same logits,
/// bit for bit, as lm_forward on the full prefix, because both paths run the
/// same row kernels in the same order.
class IncrementalDecoder {
 public:
  explicit IncrementalDecoder(const MoEModel& model, GateMode mode = GateMode::standard);

  /// Appends `token` at the next position and returns next-token logits.
  const std::vector<double>& step(int token);

  /// Routing decisions of the last step, one per layer.
  const std::vector<RoutingDecision>& last_routing() const { return routing_; }
  const std::vector<double>& logits() const { return logits_; }
  std::size_t position() const { return pos_; }
  void reset();

 private:
  const MoEModel* model_;
  GateMode mode_;
  std::size_t pos_ = 0;
  std::size_t kv_width_ = 0;
  std::vector<std::vector<double>> keys_;    // per layer [max_seq_len * kv_width]
  std::vector<std::vector<double>> values_;  // per layer
  std::vector<double> logits_;
  std::vector<RoutingDecision> routing_;
};

}  // namespace dynmoe::model
