// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dynmoe/model/model.hpp"
#include "dynmoe/numerics/rng.hpp"

namespace dynmoe::distill {

struct SamplingConfig {
  /// 0 selects greedy decoding.
  double temperature = 1.0;
  int max_new_tokens = 24;
};

/// One generated response. Per-token vectors have the response length; the
/// student fields stay empty for teacher-sampled rollouts.
struct Rollout {
  std::uint64_t id = 0;
  /// Optimizer step count of the policy that produced the tokens.
  std::uint64_t policy_version = 0;
  bool student_sampled = false;
  double temperature = 1.0;
  std::vector<int> prompt;
  std::vector<int> response;
  std::vector<double> teacher_logp;
  std::vector<double> student_logp;
  std::vector<double> student_entropy;           // nats, untempered distribution
  std::vector<std::vector<int>> zero_selected;  // [token][layer], student only

  std::vector<int> sequence() const;
};

/// Next-token choice at `temperature` from raw logits; greedy ties go to the
/// lower index.
int sample_token(std::span<const double> logits, double temperature, num::Rng& rng);

/// Rollouts sampled from the (frozen) teacher. Each prompt gets its own
/// stream derived from (seed, "rollout.<id>") with id = first_id + index.
std::vector<Rollout> sample_from_teacher(const model::MoEModel& teacher, const std::vector<std::vector<int>>& prompts,
                                         const SamplingConfig& cfg, std::uint64_t seed, std::uint64_t first_id = 0);

/// Rollouts sampled from the student and scored by the teacher on the same
/// prefixes, with student entropy and per-layer zero-expert counts.
std::vector<Rollout> sample_from_student(const model::MoEModel& student, const model::MoEModel& teacher,
                                         const std::vector<std::vector<int>>& prompts, const SamplingConfig& cfg,
                                         std::uint64_t seed, std::uint64_t first_id, std::uint64_t policy_version);

/// Shannon entropy (nats) of softmax(logits).
double entropy_of_logits(std::span<const double> logits);
/// log softmax(logits)[token]
double logp_of_token(std::span<const double> logits, int token);

}  // namespace dynmoe::distill
