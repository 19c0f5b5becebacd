// SPDX-License-Identifier: Apache-2.0
#include "dynmoe/distill/train.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <sstream>

#include "dynmoe/errors.hpp"
#include "dynmoe/model/checkpoint.hpp"
#include "dynmoe/model/decoder.hpp"
#include "dynmoe/numerics/kernels.hpp"
#include "dynmoe/numerics/ops.hpp"

namespace dynmoe::distill {

using num::Tensor;
using num::Var;

namespace {

struct NextTokenBatch {
  model::TokenBatch seqs;
  std::vector<std::size_t> rows;     // flattened positions whose logits are scored
  std::vector<std::size_t> targets;  // token predicted at each scored row
};

NextTokenBatch response_batch(const std::vector<Rollout>& batch) {
  if (batch.empty()) throw InputError("empty rollout batch");
  NextTokenBatch nb;
  const std::size_t P = batch[0].prompt.size(), R = batch[0].response.size();
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& r = batch[b];
    if (r.prompt.size() != P || r.response.size() != R) {
      throw InputError("rollout batch: rollout " + std::to_string(r.id) + " has a different shape");
    }
    nb.seqs.push_back(r.sequence());
    const std::size_t T = P + R;
    for (std::size_t t = 0; t < R; ++t) {
      nb.rows.push_back(b * T + P - 1 + t);
      nb.targets.push_back(static_cast<std::size_t>(r.response[t]));
    }
  }
  return nb;
}

Var picked_logp(const model::LMOutput& out, const NextTokenBatch& nb) {
  return num::pick_lastdim(num::log_softmax_lastdim(num::gather_rows(out.logits, nb.rows)), nb.targets);
}

double mean_rze(const model::LMOutput& out, int n_normal, int n_zero) {
  if (n_zero == 0 || out.layers.empty()) return 0.0;
  double s = 0.0;
  for (const auto& layer : out.layers) s += balancing::batch_stats(layer.decisions, n_normal, n_zero).r_ze;
  return s / static_cast<double>(out.layers.size());
}

Var group_term(const model::LMOutput& out, const MoEModel& m, const AuxConfig& aux) {
  const auto& c = m.config();
  if (!c.augmented() || m.extra_experts_masked()) return Var(Tensor::scalar(0.0));
  return balancing::balance_loss(out, balancing::BalanceKind::group, aux, c.num_experts, c.num_zero_experts);
}

AuxConfig with_alpha(const AuxConfig& a, const std::optional<double>& alpha) {
  AuxConfig r = a;
  if (alpha) r.alpha = *alpha;
  return r;
}

void require_finite(const StepResult& r, const std::string& what) {
  if (!std::isfinite(r.loss)) throw NumericError(what + ": non-finite loss " + std::to_string(r.loss));
}

}  // namespace

double scheduled_lr(double peak, long step, long total, long warmup, double final_fraction) {
  if (warmup > 0 && step < warmup) return peak * static_cast<double>(step + 1) / static_cast<double>(warmup);
  const double span = std::max<long>(1, total - warmup);
  const double progress = std::min(1.0, static_cast<double>(step - warmup) / span);
  const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  return peak * (final_fraction + (1.0 - final_fraction) * cosine);
}

MoEModel train_teacher(const model::ModelConfig& cfg, const Corpus& train, const TeacherConfig& tc,
                       const std::function<void(long, double)>& on_step) {
  if (cfg.augmented()) throw StateError("train_teacher: teacher config must be static");
  if (train.size() == 0) throw InputError("train_teacher: empty corpus");
  MoEModel m = MoEModel::init(cfg, num::derive_seed(tc.seed, "teacher.init"));
  AdamW opt(m.parameters(), tc.optim);
  num::Rng rng(num::derive_seed(tc.seed, "teacher.batches"));
  const AuxConfig aux{tc.aux_alpha, 1.0};
  for (long step = 0; step < tc.steps; ++step) {
    NextTokenBatch nb;
    for (int b = 0; b < tc.batch_size; ++b) {
      const auto& seq = train.tokens[rng.uniform_int(train.size())];
      const std::size_t T = seq.size();
      for (std::size_t t = 0; t + 1 < T; ++t) {
        nb.rows.push_back(static_cast<std::size_t>(b) * T + t);
        nb.targets.push_back(static_cast<std::size_t>(seq[t + 1]));
      }
      nb.seqs.push_back(seq);
    }
    auto out = model::lm_forward(m, nb.seqs);
    Var nll = num::scale(num::mean(picked_logp(out, nb)), -1.0);
    Var loss = nll;
    if (tc.aux_alpha > 0.0) {
      loss = num::add(loss, balancing::balance_loss(out, balancing::BalanceKind::aux, aux, cfg.num_experts, 0));
    }
    const double v = loss.item();
    if (!std::isfinite(v)) {
      throw NumericError("train_teacher: loss became " + std::to_string(v) + " at step " + std::to_string(step));
    }
    num::backward(loss);
    opt.set_lr(scheduled_lr(tc.optim.lr, step, tc.steps, tc.warmup_steps, tc.final_lr_fraction));
    opt.step();
    if (on_step) on_step(step, nll.item());
  }
  return m;
}

TeacherConfig teacher_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("teacher config must be an object");
  TeacherConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "steps") c.steps = v.get<int>();
    else if (key == "batch_size") c.batch_size = v.get<int>();
    else if (key == "lr") c.optim.lr = v.get<double>();
    else if (key == "beta1") c.optim.beta1 = v.get<double>();
    else if (key == "beta2") c.optim.beta2 = v.get<double>();
    else if (key == "eps") c.optim.eps = v.get<double>();
    else if (key == "weight_decay") c.optim.weight_decay = v.get<double>();
    else if (key == "clip_norm") c.optim.clip_norm = v.get<double>();
    else if (key == "warmup_steps") c.warmup_steps = v.get<int>();
    else if (key == "final_lr_fraction") c.final_lr_fraction = v.get<double>();
    else if (key == "aux_alpha") c.aux_alpha = v.get<double>();
    else if (key == "seed") c.seed = v.get<std::uint64_t>();
    else throw ConfigError("unknown key 'teacher." + key + "'");
  }
  if (c.steps < 0 || c.batch_size < 1 || c.warmup_steps < 0) throw ConfigError("teacher step counts are invalid");
  if (!(c.optim.lr > 0.0)) throw ConfigError("teacher.lr must be > 0");
  if (c.aux_alpha < 0.0) throw ConfigError("teacher.aux_alpha must be >= 0");
  return c;
}

nlohmann::json to_json(const TeacherConfig& c) {
  return {{"steps", c.steps},
          {"batch_size", c.batch_size},
          {"lr", c.optim.lr},
          {"beta1", c.optim.beta1},
          {"beta2", c.optim.beta2},
          {"eps", c.optim.eps},
          {"weight_decay", c.optim.weight_decay},
          {"clip_norm", c.optim.clip_norm},
          {"warmup_steps", c.warmup_steps},
          {"final_lr_fraction", c.final_lr_fraction},
          {"aux_alpha", c.aux_alpha},
          {"seed", c.seed}};
}

Schedule schedule_from_string(const std::string& s) {
  if (s == "sft") return Schedule::sft;
  if (s == "opd") return Schedule::opd;
  if (s == "sft_opd" || s == "sft->opd") return Schedule::sft_opd;
  throw ConfigError("unknown schedule '" + s + "' (expected sft, opd or sft_opd)");
}

std::string to_string(Schedule s) {
  switch (s) {
    case Schedule::sft: return "sft";
    case Schedule::opd: return "opd";
    case Schedule::sft_opd: return "sft_opd";
  }
  return "?";
}

void AdaptConfig::validate() const {
  aux.validate();
  if (!(sft.lr > 0.0) || !(opd.lr > 0.0)) throw ConfigError("adapt learning rates must be > 0");
  if (sft.epochs < 0 || opd.steps < 0) throw ConfigError("adapt step counts must be >= 0");
  if (sft.batch_size < 1 || sft.num_rollouts < 1) throw ConfigError("adapt.sft batch sizes must be >= 1");
  if (opd.prompts_per_batch < 1 || opd.responses_per_prompt < 1) {
    throw ConfigError("adapt.opd batch sizes must be >= 1");
  }
  if (sft.temperature < 0.0 || opd.temperature < 0.0) throw ConfigError("temperatures must be >= 0");
  if (prompt_len < 1) throw ConfigError("adapt.prompt_len must be >= 1");
  if (!(teacher_logp_floor < 0.0)) throw ConfigError("adapt.teacher_logp_floor must be negative");
}

int AdaptConfig::sft_steps() const {
  return sft.epochs * ((sft.num_rollouts + sft.batch_size - 1) / sft.batch_size);
}

namespace {

std::optional<double> opt_double(const nlohmann::json& v) {
  if (v.is_null()) return std::nullopt;
  return v.get<double>();
}

void read_sft(SftConfig& s, const nlohmann::json& j) {
  for (const auto& [key, v] : j.items()) {
    if (key == "lr") s.lr = v.get<double>();
    else if (key == "epochs") s.epochs = v.get<int>();
    else if (key == "batch_size") s.batch_size = v.get<int>();
    else if (key == "num_rollouts") s.num_rollouts = v.get<int>();
    else if (key == "temperature") s.temperature = v.get<double>();
    else if (key == "max_new_tokens") s.max_new_tokens = v.get<int>();
    else if (key == "alpha") s.alpha = opt_double(v);
    else throw ConfigError("unknown key 'adapt.sft." + key + "'");
  }
}

void read_opd(OpdConfig& o, const nlohmann::json& j) {
  for (const auto& [key, v] : j.items()) {
    if (key == "lr") o.lr = v.get<double>();
    else if (key == "steps") o.steps = v.get<int>();
    else if (key == "prompts_per_batch") o.prompts_per_batch = v.get<int>();
    else if (key == "responses_per_prompt") o.responses_per_prompt = v.get<int>();
    else if (key == "temperature") o.temperature = v.get<double>();
    else if (key == "max_new_tokens") o.max_new_tokens = v.get<int>();
    else if (key == "alpha") o.alpha = opt_double(v);
    else throw ConfigError("unknown key 'adapt.opd." + key + "'");
  }
}

}  // namespace

AdaptConfig adapt_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("adapt config must be an object");
  AdaptConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "alpha") c.aux.alpha = v.get<double>();
    else if (key == "w") c.aux.w = v.get<double>();
    else if (key == "schedule") c.schedule = schedule_from_string(v.get<std::string>());
    else if (key == "sft") read_sft(c.sft, v);
    else if (key == "opd") read_opd(c.opd, v);
    else if (key == "prompt_len") c.prompt_len = v.get<int>();
    else if (key == "teacher_logp_floor") c.teacher_logp_floor = v.get<double>();
    else if (key == "seed") c.seed = v.get<std::uint64_t>();
    else if (key == "record_wall_time") c.record_wall_time = v.get<bool>();
    else throw ConfigError("unknown key 'adapt." + key + "'");
  }
  c.validate();
  return c;
}

nlohmann::json to_json(const AdaptConfig& c) {
  auto alpha = [](const std::optional<double>& a) { return a ? nlohmann::json(*a) : nlohmann::json(nullptr); };
  return {{"alpha", c.aux.alpha},
          {"w", c.aux.w},
          {"schedule", to_string(c.schedule)},
          {"sft",
           {{"lr", c.sft.lr},
            {"epochs", c.sft.epochs},
            {"batch_size", c.sft.batch_size},
            {"num_rollouts", c.sft.num_rollouts},
            {"temperature", c.sft.temperature},
            {"max_new_tokens", c.sft.max_new_tokens},
            {"alpha", alpha(c.sft.alpha)}}},
          {"opd",
           {{"lr", c.opd.lr},
            {"steps", c.opd.steps},
            {"prompts_per_batch", c.opd.prompts_per_batch},
            {"responses_per_prompt", c.opd.responses_per_prompt},
            {"temperature", c.opd.temperature},
            {"max_new_tokens", c.opd.max_new_tokens},
            {"alpha", alpha(c.opd.alpha)}}},
          {"prompt_len", c.prompt_len},
          {"teacher_logp_floor", c.teacher_logp_floor},
          {"seed", c.seed},
          {"record_wall_time", c.record_wall_time}};
}

std::string TrainState::log_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "step,stage,task_loss,l_ga,r_ze,kl_estimate,wall_time\n";
  for (const auto& r : log) {
    os << r.step << "," << r.stage << "," << r.task_loss << "," << r.l_ga << "," << r.r_ze << "," << r.kl_estimate
       << "," << r.wall_time << "\n";
  }
  return os.str();
}

model::RoutingTrace routing_trace(const MoEModel& student, const std::vector<Rollout>& batch) {
  num::NoGradGuard guard;
  return model::trace_of(model::lm_forward(student, response_batch(batch).seqs));
}

LossTerms sft_loss(const MoEModel& student, const std::vector<Rollout>& batch, const AuxConfig& aux,
                   const model::RoutingTrace* replay) {
  const auto nb = response_batch(batch);
  model::ForwardOptions opts;
  opts.replay = replay;
  const auto out = model::lm_forward(student, nb.seqs, opts);
  Var nll = num::scale(num::mean(picked_logp(out, nb)), -1.0);
  Var ga = group_term(out, student, aux);
  LossTerms lt;
  lt.total = num::add(nll, ga);
  lt.values.task_loss = nll.item();
  lt.values.l_ga = ga.item();
  lt.values.loss = lt.total.item();
  lt.values.r_ze = mean_rze(out, student.config().num_experts, student.config().num_zero_experts);
  return lt;
}

std::vector<double> opd_advantages(const Rollout& r, double floor, long* clamps) {
  if (r.student_logp.size() != r.response.size() || r.teacher_logp.size() != r.response.size()) {
    throw InputError("rollout " + std::to_string(r.id) + " lacks student or teacher scores");
  }
  std::vector<double> adv(r.response.size());
  for (std::size_t t = 0; t < adv.size(); ++t) {
    double lt = r.teacher_logp[t];
    if (!(lt >= floor)) {
      lt = floor;
      if (clamps) ++*clamps;
    }
    adv[t] = lt - r.student_logp[t];
  }
  return adv;
}

LossTerms opd_loss(const MoEModel& student, const std::vector<Rollout>& batch, const AuxConfig& aux, double floor,
                   const model::RoutingTrace* replay) {
  const auto nb = response_batch(batch);
  std::vector<double> coeff;
  double kl = 0.0;
  long clamps = 0;
  for (const auto& r : batch) {
    const auto adv = opd_advantages(r, floor, &clamps);
    for (double a : adv) {
      coeff.push_back(-a);
      kl -= a;
    }
  }
  const double n = static_cast<double>(coeff.size());
  for (double& c : coeff) c /= n;
  model::ForwardOptions opts;
  opts.replay = replay;
  const auto out = model::lm_forward(student, nb.seqs, opts);
  Var surrogate = num::dot_const(picked_logp(out, nb), Tensor(num::Shape{coeff.size()}, coeff));
  Var ga = group_term(out, student, aux);
  LossTerms lt;
  lt.total = num::add(surrogate, ga);
  lt.values.task_loss = surrogate.item();
  lt.values.l_ga = ga.item();
  lt.values.loss = lt.total.item();
  lt.values.kl_estimate = kl / n;
  lt.values.clamp_events = clamps;
  lt.values.r_ze = mean_rze(out, student.config().num_experts, student.config().num_zero_experts);
  return lt;
}

StepResult sft_step(MoEModel& student, const std::vector<Rollout>& batch, const AuxConfig& aux, AdamW& opt,
                    long batch_id) {
  auto lt = sft_loss(student, batch, aux);
  require_finite(lt.values, "sft_step batch " + std::to_string(batch_id));
  num::backward(lt.total);
  opt.step();
  return lt.values;
}

StepResult opd_step(MoEModel& student, const MoEModel& teacher, const std::vector<std::vector<int>>& prompts,
                    const AdaptConfig& cfg, TrainState& state, std::uint64_t seed) {
  if (!state.optimizer) throw StateError("opd_step: no optimizer attached to the train state");
  AdamW& opt = *state.optimizer;
  const auto version = static_cast<std::uint64_t>(opt.steps());
  SamplingConfig sc{cfg.opd.temperature, cfg.opd.max_new_tokens};
  auto rollouts = sample_from_student(student, teacher, prompts, sc, seed, state.next_rollout_id, version);
  state.next_rollout_id += rollouts.size();
  for (const auto& r : rollouts) {
    if (!r.student_sampled || r.policy_version != version) {
      throw StateError("opd_step: rollout " + std::to_string(r.id) + " was not sampled from the current student");
    }
  }
  auto lt = opd_loss(student, rollouts, with_alpha(cfg.aux, cfg.opd.alpha), cfg.teacher_logp_floor);
  require_finite(lt.values, "opd_step at step " + std::to_string(state.step));
  num::backward(lt.total);
  opt.step();
  state.clamp_events += lt.values.clamp_events;
  return lt.values;
}

std::vector<std::vector<int>> prompts_from(const Corpus& c, int len) {
  std::vector<std::vector<int>> out;
  for (const auto& s : c.tokens) {
    if (s.size() < static_cast<std::size_t>(len)) throw ConfigError("prompt_len exceeds the corpus sequence length");
    out.emplace_back(s.begin(), s.begin() + len);
  }
  return out;
}

AdaptResult adapt(const MoEModel& teacher, const injection::InjectionSpec& spec, const AdaptConfig& cfg,
                  const std::vector<std::vector<int>>& prompts, const std::string& checkpoint_dir,
                  const std::function<void(const LogRow&)>& on_step) {
  cfg.validate();
  if (prompts.empty()) throw InputError("adapt: empty prompt pool");
  AdaptResult res{injection::inject(teacher, spec), {}};
  MoEModel& student = res.student;
  TrainState& st = res.state;
  const auto t0 = std::chrono::steady_clock::now();
  auto log = [&](const std::string& stage, const StepResult& r) {
    LogRow row{st.step, stage, r.task_loss, r.l_ga, r.r_ze, r.kl_estimate, 0.0};
    if (cfg.record_wall_time) {
      row.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
    st.log.push_back(row);
    if (on_step) on_step(row);
  };
  auto checkpoint = [&](const std::string& stage) {
    if (checkpoint_dir.empty()) return;
    std::filesystem::create_directories(checkpoint_dir);
    const auto path = (std::filesystem::path(checkpoint_dir) / ("student_" + stage + ".ckpt")).string();
    model::save_checkpoint(student, path);
    st.checkpoints.push_back(path);
  };
  const bool do_sft = cfg.schedule != Schedule::opd;
  const bool do_opd = cfg.schedule != Schedule::sft;

  if (do_sft) {
    st.stage_marks.emplace_back(st.step, "sft");
    std::vector<std::vector<int>> sp;
    for (int i = 0; i < cfg.sft.num_rollouts; ++i) sp.push_back(prompts[static_cast<std::size_t>(i) % prompts.size()]);
    SamplingConfig sc{cfg.sft.temperature, cfg.sft.max_new_tokens};
    const auto data = sample_from_teacher(teacher, sp, sc, num::derive_seed(cfg.seed, "sft.rollouts"),
                                          st.next_rollout_id);
    st.next_rollout_id += data.size();
    AdamWConfig oc;
    oc.lr = cfg.sft.lr;
    st.optimizer = std::make_shared<AdamW>(student.parameters(), oc);
    const AuxConfig aux = with_alpha(cfg.aux, cfg.sft.alpha);
    num::Rng order_rng(num::derive_seed(cfg.seed, "sft.order"));
    std::vector<std::size_t> order(data.size());
    long batch_id = 0;
    for (int e = 0; e < cfg.sft.epochs; ++e) {
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[order_rng.uniform_int(i)]);
      for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(cfg.sft.batch_size)) {
        std::vector<Rollout> batch;
        for (std::size_t j = at; j < std::min(order.size(), at + static_cast<std::size_t>(cfg.sft.batch_size)); ++j) {
          batch.push_back(data[order[j]]);
        }
        const auto r = sft_step(student, batch, aux, *st.optimizer, batch_id++);
        log("sft", r);
        ++st.step;
      }
    }
    checkpoint("sft");
  }

  if (do_opd) {
    st.stage_marks.emplace_back(st.step, "opd");
    AdamWConfig oc;
    oc.lr = cfg.opd.lr;
    st.optimizer = std::make_shared<AdamW>(student.parameters(), oc);
    num::Rng prompt_rng(num::derive_seed(cfg.seed, "opd.prompts"));
    for (int s = 0; s < cfg.opd.steps; ++s) {
      std::vector<std::vector<int>> batch;
      for (int p = 0; p < cfg.opd.prompts_per_batch; ++p) {
        const auto& pr = prompts[prompt_rng.uniform_int(prompts.size())];
        for (int k = 0; k < cfg.opd.responses_per_prompt; ++k) batch.push_back(pr);
      }
      const auto r = opd_step(student, teacher, batch, cfg, st,
                              num::derive_seed(cfg.seed, "opd.step." + std::to_string(s)));
      log("opd", r);
      ++st.step;
    }
    checkpoint("opd");
  }
  return res;
}

nlohmann::json EvalMetrics::to_json() const {
  nlohmann::json j;
  j["ce"] = ce;
  j["accuracy"] = accuracy;
  j["tokens"] = tokens;
  j["r_ze"] = r_ze;
  for (int t = 0; t < kNumTags; ++t) {
    const auto name = to_string(static_cast<SpanTag>(t));
    j["by_tag"][name] = {{"ce", ce_by_tag[t]},
                         {"accuracy", acc_by_tag[t]},
                         {"tokens", count_by_tag[t]},
                         {"r_ze", r_ze_by_tag[t]}};
  }
  j["r_ze_by_layer"] = r_ze_by_layer;
  return j;
}

EvalMetrics evaluate(const MoEModel& model, const Corpus& split, std::optional<bool> mask) {
  if (split.size() == 0) throw InputError("evaluate: empty split");
  num::NoGradGuard guard;
  MoEModel view = model;  // shallow: shares parameter storage
  if (mask) view.set_extra_experts_masked(*mask);
  const auto& cfg = view.config();
  const std::size_t V = static_cast<std::size_t>(cfg.vocab_size);
  const std::size_t L = view.blocks.size();
  const double k = cfg.active_k();

  EvalMetrics m;
  m.r_ze_by_layer.assign(L, 0.0);
  std::array<double, kNumTags> ce{}, acc{}, rz{};
  double ce_all = 0, acc_all = 0, rz_all = 0;
  std::vector<double> lp(V);
  constexpr std::size_t kChunk = 32;
  for (std::size_t at = 0; at < split.size(); at += kChunk) {
    const std::size_t end = std::min(split.size(), at + kChunk);
    model::TokenBatch batch(split.tokens.begin() + static_cast<long>(at), split.tokens.begin() + static_cast<long>(end));
    const auto out = model::lm_forward(view, batch);
    const std::size_t T = out.seq_len;
    const auto& logits = out.logits.value();
    for (std::size_t b = 0; b < batch.size(); ++b) {
      for (std::size_t t = 0; t + 1 < T; ++t) {
        const std::size_t row = b * T + t;
        const int target = batch[b][t + 1];
        const auto tag = static_cast<std::size_t>(split.tags[at + b][t + 1]);
        num::kernels::log_softmax_row(logits.ptr() + row * V, lp.data(), V);
        std::size_t best = 0;
        for (std::size_t v = 1; v < V; ++v) {
          if (lp[v] > lp[best]) best = v;
        }
        const double c = -lp[static_cast<std::size_t>(target)];
        const double a = best == static_cast<std::size_t>(target) ? 1.0 : 0.0;
        double r = 0.0;
        for (std::size_t l = 0; l < L; ++l) {
          const double zl = out.layers[l].decisions[row].zero_selected / k;
          m.r_ze_by_layer[l] += zl;
          r += zl;
        }
        r /= static_cast<double>(L);
        ce_all += c;
        acc_all += a;
        rz_all += r;
        ce[tag] += c;
        acc[tag] += a;
        rz[tag] += r;
        ++m.count_by_tag[tag];
        ++m.tokens;
      }
    }
  }
  const double n = static_cast<double>(m.tokens);
  m.ce = ce_all / n;
  m.accuracy = acc_all / n;
  m.r_ze = rz_all / n;
  for (auto& v : m.r_ze_by_layer) v /= n;
  for (int t = 0; t < kNumTags; ++t) {
    const double c = static_cast<double>(m.count_by_tag[t]);
    if (c == 0) continue;
    m.ce_by_tag[t] = ce[t] / c;
    m.acc_by_tag[t] = acc[t] / c;
    m.r_ze_by_tag[t] = rz[t] / c;
  }
  return m;
}

KlEstimate estimate_reverse_kl(const MoEModel& student, const MoEModel& teacher,
                               const std::vector<std::vector<int>>& prompts, const SamplingConfig& cfg,
                               std::uint64_t seed) {
  model::IncrementalDecoder sdec(student), tdec(teacher);
  const std::size_t V = static_cast<std::size_t>(student.config().vocab_size);
  std::vector<double> ls(V), lt(V);
  KlEstimate k;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    num::Rng rng(num::derive_seed(seed, "kl.rollout." + std::to_string(i)));
    sdec.reset();
    tdec.reset();
    for (int t : prompts[i]) {
      sdec.step(t);
      tdec.step(t);
    }
    for (int n = 0; n < cfg.max_new_tokens; ++n) {
      num::kernels::log_softmax_row(sdec.logits().data(), ls.data(), V);
      num::kernels::log_softmax_row(tdec.logits().data(), lt.data(), V);
      double full = 0.0;
      for (std::size_t v = 0; v < V; ++v) full += std::exp(ls[v]) * (ls[v] - lt[v]);
      const int y = sample_token(sdec.logits(), cfg.temperature, rng);
      k.sampled += ls[static_cast<std::size_t>(y)] - lt[static_cast<std::size_t>(y)];
      k.full += full;
      ++k.tokens;
      if (n + 1 < cfg.max_new_tokens) {
        sdec.step(y);
        tdec.step(y);
      }
    }
  }
  if (k.tokens > 0) {
    k.sampled /= static_cast<double>(k.tokens);
    k.full /= static_cast<double>(k.tokens);
  }
  return k;
}

double unigram_ce(const Corpus& train, const Corpus& eval, int vocab_size) {
  std::vector<double> counts(static_cast<std::size_t>(vocab_size), 1.0);
  double total = vocab_size;
  for (const auto& s : train.tokens) {
    for (std::size_t t = 1; t < s.size(); ++t) {
      counts[static_cast<std::size_t>(s[t])] += 1.0;
      total += 1.0;
    }
  }
  double ce = 0.0;
  std::size_t n = 0;
  for (const auto& s : eval.tokens) {
    for (std::size_t t = 1; t < s.size(); ++t) {
      ce -= std::log(counts[static_cast<std::size_t>(s[t])] / total);
      ++n;
    }
  }
  return ce / static_cast<double>(n);
}

}  // namespace dynmoe::distill
