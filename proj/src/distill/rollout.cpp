// SPDX-License-Identifier: Apache-2.0
#include "dynmoe/distill/rollout.hpp"

#include <cmath>
#include <string>

#include "dynmoe/errors.hpp"
#include "dynmoe/model/decoder.hpp"
#include "dynmoe/numerics/kernels.hpp"

namespace dynmoe::distill {

std::vector<int> Rollout::sequence() const {
  std::vector<int> s = prompt;
  s.insert(s.end(), response.begin(), response.end());
  return s;
}

int sample_token(std::span<const double> logits, double temperature, num::Rng& rng) {
  if (temperature <= 0.0) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < logits.size(); ++i) {
      if (logits[i] > logits[best]) best = i;
    }
    return static_cast<int>(best);
  }
  std::vector<double> scaled(logits.size()), probs(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) scaled[i] = logits[i] / temperature;
  num::kernels::softmax_row(scaled.data(), probs.data(), probs.size());
  return static_cast<int>(rng.categorical(probs));
}

double entropy_of_logits(std::span<const double> logits) {
  std::vector<double> lp(logits.size());
  num::kernels::log_softmax_row(logits.data(), lp.data(), lp.size());
  double h = 0.0;
  for (double l : lp) h -= std::exp(l) * l;
  return h;
}

double logp_of_token(std::span<const double> logits, int token) {
  std::vector<double> lp(logits.size());
  num::kernels::log_softmax_row(logits.data(), lp.data(), lp.size());
  return lp.at(static_cast<std::size_t>(token));
}

namespace {

void check_prompt(const std::vector<int>& prompt, const SamplingConfig& cfg, const model::ModelConfig& mc) {
  if (prompt.empty()) throw InputError("rollout: empty prompt");
  if (cfg.max_new_tokens < 1) throw ConfigError("sampling.max_new_tokens must be >= 1");
  if (prompt.size() + static_cast<std::size_t>(cfg.max_new_tokens) > static_cast<std::size_t>(mc.max_seq_len)) {
    throw ConfigError("prompt length plus max_new_tokens exceeds max_seq_len " + std::to_string(mc.max_seq_len));
  }
}

}  // namespace

std::vector<Rollout> sample_from_teacher(const model::MoEModel& teacher, const std::vector<std::vector<int>>& prompts,
                                         const SamplingConfig& cfg, std::uint64_t seed, std::uint64_t first_id) {
  std::vector<Rollout> out;
  model::IncrementalDecoder dec(teacher);
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    check_prompt(prompts[i], cfg, teacher.config());
    Rollout r;
    r.id = first_id + i;
    r.temperature = cfg.temperature;
    r.prompt = prompts[i];
    num::Rng rng(num::derive_seed(seed, "rollout." + std::to_string(r.id)));
    dec.reset();
    for (int t : r.prompt) dec.step(t);
    for (int n = 0; n < cfg.max_new_tokens; ++n) {
      const auto& lg = dec.logits();
      const int y = sample_token(lg, cfg.temperature, rng);
      r.teacher_logp.push_back(logp_of_token(lg, y));
      r.response.push_back(y);
      if (n + 1 < cfg.max_new_tokens) dec.step(y);
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<Rollout> sample_from_student(const model::MoEModel& student, const model::MoEModel& teacher,
                                         const std::vector<std::vector<int>>& prompts, const SamplingConfig& cfg,
                                         std::uint64_t seed, std::uint64_t first_id, std::uint64_t policy_version) {
  std::vector<Rollout> out;
  model::IncrementalDecoder sdec(student), tdec(teacher);
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    check_prompt(prompts[i], cfg, student.config());
    Rollout r;
    r.id = first_id + i;
    r.policy_version = policy_version;
    r.student_sampled = true;
    r.temperature = cfg.temperature;
    r.prompt = prompts[i];
    num::Rng rng(num::derive_seed(seed, "rollout." + std::to_string(r.id)));
    sdec.reset();
    tdec.reset();
    for (std::size_t p = 0; p < r.prompt.size(); ++p) {
      sdec.step(r.prompt[p]);
      tdec.step(r.prompt[p]);
    }
    std::vector<int> zs;
    for (int n = 0; n < cfg.max_new_tokens; ++n) {
      const auto& sl = sdec.logits();
      // Routing that produced these logits belongs to the token being generated.
      zs.clear();
      for (const auto& d : sdec.last_routing()) zs.push_back(d.zero_selected);
      const int y = sample_token(sl, cfg.temperature, rng);
      r.student_logp.push_back(logp_of_token(sl, y));
      r.student_entropy.push_back(entropy_of_logits(sl));
      r.teacher_logp.push_back(logp_of_token(tdec.logits(), y));
      r.zero_selected.push_back(zs);
      r.response.push_back(y);
      if (n + 1 < cfg.max_new_tokens) {
        sdec.step(y);
        tdec.step(y);
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace dynmoe::distill
