// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dynmoe/balancing/balancing.hpp"
#include "dynmoe/distill/corpus.hpp"
#include "dynmoe/distill/optim.hpp"
#include "dynmoe/distill/rollout.hpp"
#include "dynmoe/injection/injection.hpp"
#include "json.hpp"

namespace dynmoe::distill {

using balancing::AuxConfig;
using model::MoEModel;

// ---- teacher -------------------------------------------------------------

struct TeacherConfig {
  int steps = 600;
  int batch_size = 16;
  AdamWConfig optim{3e-3, 0.9, 0.98, 1e-8, 0.01, 1.0};
  int warmup_steps = 50;
  /// Final learning rate as a fraction of the peak (cosine decay).
  double final_lr_fraction = 0.1;
  /// Vanilla auxiliary loss coefficient during teacher training.
  double aux_alpha = 0.01;
  std::uint64_t seed = 1;
};

/// Trains a static model on next-token prediction over `train`. Throws
/// NumericError naming the step when the loss becomes non-finite.
MoEModel train_teacher(const model::ModelConfig& cfg, const Corpus& train, const TeacherConfig& tc,
                       const std::function<void(long, double)>& on_step = {});

/// Strict: unknown keys raise ConfigError. Optimizer fields sit at the top
/// level (lr, beta1, beta2, eps, weight_decay, clip_norm).
TeacherConfig teacher_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TeacherConfig& c);

/// Warmup then cosine decay from `peak` to `peak * final_fraction`.
double scheduled_lr(double peak, long step, long total, long warmup, double final_fraction);

// ---- adaptation ----------------------------------------------------------

enum class Schedule { sft, opd, sft_opd };
Schedule schedule_from_string(const std::string& s);
std::string to_string(Schedule s);

struct SftConfig {
  double lr = 1e-3;
  int epochs = 2;
  int batch_size = 16;
  int num_rollouts = 2048;
  double temperature = 1.0;
  int max_new_tokens = 24;
  std::optional<double> alpha;
};

struct OpdConfig {
  double lr = 5e-4;
  int steps = 60;
  int prompts_per_batch = 8;
  int responses_per_prompt = 2;
  double temperature = 1.0;
  int max_new_tokens = 24;
  std::optional<double> alpha;
};

struct AdaptConfig {
  AuxConfig aux{0.1, 2.0};
  Schedule schedule = Schedule::sft_opd;
  SftConfig sft;
  OpdConfig opd;
  int prompt_len = 8;
  double teacher_logp_floor = -30.0;
  std::uint64_t seed = 1;
  /// When false the wall_time log column is written as 0, keeping logs
  /// byte-identical across reruns.
  bool record_wall_time = false;

  void validate() const;
  int sft_steps() const;
};

AdaptConfig adapt_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const AdaptConfig& c);

struct LogRow {
  long step = 0;
  std::string stage;
  double task_loss = 0.0;
  double l_ga = 0.0;
  double r_ze = 0.0;
  double kl_estimate = 0.0;
  double wall_time = 0.0;
};

struct TrainState {
  long step = 0;
  std::vector<LogRow> log;
  /// (first step of the stage, stage name)
  std::vector<std::pair<long, std::string>> stage_marks;
  std::vector<std::string> checkpoints;
  std::shared_ptr<AdamW> optimizer;
  std::uint64_t next_rollout_id = 0;
  long clamp_events = 0;

  /// Columns step,stage,task_loss,l_ga,r_ze,kl_estimate,wall_time.
  std::string log_csv() const;
};

struct StepResult {
  double loss = 0.0;       // total objective
  double task_loss = 0.0;  // NLL (SFT) or surrogate (OPD)
  double l_ga = 0.0;
  double r_ze = 0.0;
  double kl_estimate = 0.0;
  long clamp_events = 0;
};

/// Differentiable SFT objective over teacher rollouts (equal lengths).
/// `replay` freezes routing for gradient checks.
struct LossTerms {
  num::Var total;
  StepResult values;
};
LossTerms sft_loss(const MoEModel& student, const std::vector<Rollout>& batch, const AuxConfig& aux,
                   const model::RoutingTrace* replay = nullptr);

/// Detached per-token advantages max(log pi_T, floor) - log pi_theta of one
/// rollout. Adds the number of clamped tokens to `clamps` when given.
std::vector<double> opd_advantages(const Rollout& r, double floor, long* clamps = nullptr);

/// OPD surrogate over student rollouts: -mean(A_t log pi(y_t)) + L_GA with
/// A_t = max(log pi_T, floor) - log pi_theta taken from the rollout record.
LossTerms opd_loss(const MoEModel& student, const std::vector<Rollout>& batch, const AuxConfig& aux, double floor,
                   const model::RoutingTrace* replay = nullptr);

/// Routing trace of the student on the batch sequences.
model::RoutingTrace routing_trace(const MoEModel& student, const std::vector<Rollout>& batch);

/// One SFT update. Throws NumericError naming `batch_id` on a non-finite loss.
StepResult sft_step(MoEModel& student, const std::vector<Rollout>& batch, const AuxConfig& aux, AdamW& opt,
                    long batch_id);

/// Samples rollouts from the current student, checks their provenance, and
/// applies one OPD update.
StepResult opd_step(MoEModel& student, const MoEModel& teacher, const std::vector<std::vector<int>>& prompts,
                    const AdaptConfig& cfg, TrainState& state, std::uint64_t seed);

struct AdaptResult {
  MoEModel student;
  TrainState state;
};

/// inject -> configured stages. `prompts` is the pool rollouts draw from.
/// When `checkpoint_dir` is nonempty a checkpoint is written after each stage.
AdaptResult adapt(const MoEModel& teacher, const injection::InjectionSpec& spec, const AdaptConfig& cfg,
                  const std::vector<std::vector<int>>& prompts, const std::string& checkpoint_dir = {},
                  const std::function<void(const LogRow&)>& on_step = {});

/// Prompt prefixes of length `len` from every sequence of `c`.
std::vector<std::vector<int>> prompts_from(const Corpus& c, int len);

// ---- evaluation ----------------------------------------------------------

struct EvalMetrics {
  double ce = 0.0;
  double accuracy = 0.0;
  std::size_t tokens = 0;
  std::array<double, kNumTags> ce_by_tag{};
  std::array<double, kNumTags> acc_by_tag{};
  std::array<std::size_t, kNumTags> count_by_tag{};
  double r_ze = 0.0;
  std::array<double, kNumTags> r_ze_by_tag{};
  std::vector<double> r_ze_by_layer;

  nlohmann::json to_json() const;
};

/// Next-token metrics over every position of `split`; each prediction is
/// attributed to the tag of its target token. `mask` overrides the model's
/// extra-expert mask flag for this evaluation.
EvalMetrics evaluate(const MoEModel& model, const Corpus& split, std::optional<bool> mask = std::nullopt);

struct KlEstimate {
  double sampled = 0.0;  // mean over sampled tokens of log pi_theta - log pi_T
  double full = 0.0;     // mean over steps of KL(pi_theta || pi_T) of the full distributions
  std::size_t tokens = 0;
};

/// Reverse-KL estimates along student-sampled trajectories.
KlEstimate estimate_reverse_kl(const MoEModel& student, const MoEModel& teacher,
                               const std::vector<std::vector<int>>& prompts, const SamplingConfig& cfg,
                               std::uint64_t seed);

/// Unigram cross-entropy of `eval` under add-one counts from `train`.
double unigram_ce(const Corpus& train, const Corpus& eval, int vocab_size);

}  // namespace dynmoe::distill
