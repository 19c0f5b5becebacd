// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <map>

#include "dynmoe/distill/train.hpp"
#include "dynmoe/errors.hpp"
#include "dynmoe/model/checkpoint.hpp"
#include "dynmoe/model/decoder.hpp"
#include "dynmoe/numerics/grad_check.hpp"
#include "dynmoe/numerics/kernels.hpp"
#include "test_util.hpp"

using namespace dynmoe;
using namespace dynmoe::distill;
using testing_util::tiny_config;

namespace {

std::vector<double> flat_grads(const std::vector<num::Var>& params) {
  std::vector<double> g;
  for (const auto& p : params) {
    const auto& t = p.node()->grad;
    if (t.numel() == 0) {
      g.insert(g.end(), p.value().numel(), 0.0);
    } else {
      g.insert(g.end(), t.data().begin(), t.data().end());
    }
  }
  return g;
}

std::vector<double> last_logits(const MoEModel& m, const std::vector<int>& seq) {
  num::NoGradGuard guard;
  auto out = model::lm_forward(m, {seq});
  const auto& v = out.logits.value();
  const std::size_t V = v.cols();
  const auto row = v.row(seq.size() - 1);
  return std::vector<double>(row.begin(), row.begin() + static_cast<long>(V));
}

std::vector<double> log_softmax(const std::vector<double>& z) {
  std::vector<double> out(z.size());
  num::kernels::log_softmax_row(z.data(), out.data(), z.size());
  return out;
}

double max_rel(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0, scale = 1e-12;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - b[i]));
    scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
  }
  return diff / scale;
}

// A small teacher shared by the tests that need a fitted model.
class TrainedTeacher : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    CorpusSpec cs;
    cs.num_sequences = 1024;
    spec_ = new CorpusSpec(cs);
    split_ = new CorpusSplit(split_corpus(generate_corpus(cs), cs.holdout_fraction));
    model::ModelConfig mc;
    TeacherConfig tc;
    tc.steps = 120;
    teacher_ = new MoEModel(train_teacher(mc, split_->train, tc));
  }
  static void TearDownTestSuite() {
    delete teacher_;
    delete split_;
    delete spec_;
  }
  static CorpusSpec* spec_;
  static CorpusSplit* split_;
  static MoEModel* teacher_;
};
CorpusSpec* TrainedTeacher::spec_ = nullptr;
CorpusSplit* TrainedTeacher::split_ = nullptr;
MoEModel* TrainedTeacher::teacher_ = nullptr;

}  // namespace

// ---- corpus ----------------------------------------------------------------

TEST(Corpus, DeterministicAndSeedSensitive) {
  CorpusSpec s;
  s.num_sequences = 64;
  EXPECT_EQ(generate_corpus(s), generate_corpus(s));
  auto t = s;
  t.seed = 2;
  EXPECT_FALSE(generate_corpus(s) == generate_corpus(t));
}

TEST(Corpus, TagsCoverTokensAndStructuredSpansFollowTheirCycle) {
  CorpusSpec s;
  s.num_sequences = 128;
  const auto c = generate_corpus(s);
  const auto gen = corpus_model(s);
  std::map<int, int> succ;
  bool has_period_two = false;
  for (const auto& p : gen.patterns) {
    has_period_two = has_period_two || p.size() == 2;
    for (std::size_t i = 0; i < p.size(); ++i) succ[p[i]] = p[(i + 1) % p.size()];
  }
  ASSERT_TRUE(has_period_two);
  std::size_t checked = 0;
  for (std::size_t q = 0; q < c.size(); ++q) {
    ASSERT_EQ(c.tokens[q].size(), static_cast<std::size_t>(s.seq_len));
    ASSERT_EQ(c.tags[q].size(), c.tokens[q].size());
    for (std::size_t t = 0; t < c.tokens[q].size(); ++t) {
      const int tok = c.tokens[q][t];
      if (c.tags[q][t] == SpanTag::natural) {
        EXPECT_LT(tok, s.natural_vocab);
      } else {
        EXPECT_GE(tok, s.natural_vocab);
      }
      if (t > 0 && c.tags[q][t] == SpanTag::structured && c.tags[q][t - 1] == SpanTag::structured) {
        EXPECT_EQ(tok, succ.at(c.tokens[q][t - 1]));
        ++checked;
      }
    }
  }
  EXPECT_GT(checked, 1000u);
}

TEST(Corpus, NaturalSpansHaveHigherEmpiricalEntropy) {
  CorpusSpec s;
  s.num_sequences = 512;
  const auto c = generate_corpus(s);
  std::array<std::map<int, double>, kNumTags> counts;
  std::array<double, kNumTags> totals{};
  for (std::size_t q = 0; q < c.size(); ++q) {
    for (std::size_t t = 0; t < c.tokens[q].size(); ++t) {
      const auto g = static_cast<std::size_t>(c.tags[q][t]);
      counts[g][c.tokens[q][t]] += 1.0;
      totals[g] += 1.0;
    }
  }
  std::array<double, kNumTags> h{};
  for (int g = 0; g < kNumTags; ++g) {
    for (const auto& [tok, n] : counts[g]) h[g] -= n / totals[g] * std::log(n / totals[g]);
  }
  EXPECT_GT(h[0], h[1]);
}

TEST(Corpus, RejectsSequencesShorterThanASpan) {
  CorpusSpec s;
  s.seq_len = 3;
  EXPECT_THROW(generate_corpus(s), ConfigError);
}

TEST(Corpus, CsvRoundTrip) {
  CorpusSpec s;
  s.num_sequences = 16;
  const auto c = generate_corpus(s);
  const auto path = (std::filesystem::temp_directory_path() / "dynmoe_corpus_rt.csv").string();
  write_corpus_csv(c, path);
  EXPECT_EQ(read_corpus_csv(path), c);
  std::filesystem::remove(path);
  EXPECT_THROW(read_corpus_csv(path), MissingArtifactError);
}

TEST(Corpus, SplitTakesTheTail) {
  CorpusSpec s;
  s.num_sequences = 10;
  const auto c = generate_corpus(s);
  const auto sp = split_corpus(c, 0.2);
  ASSERT_EQ(sp.train.size(), 8u);
  ASSERT_EQ(sp.heldout.size(), 2u);
  EXPECT_EQ(sp.heldout.tokens[1], c.tokens[9]);
}

TEST(UnigramCe, MatchesHandCount) {
  Corpus train{{{0, 1, 1}}, {{SpanTag::natural, SpanTag::natural, SpanTag::natural}}};
  Corpus eval{{{0, 0, 1}}, {{SpanTag::natural, SpanTag::natural, SpanTag::natural}}};
  // add-one counts over targets: token0 = 1, token1 = 3, total 4
  const double expected = -(std::log(1.0 / 4.0) + std::log(3.0 / 4.0)) / 2.0;
  EXPECT_NEAR(unigram_ce(train, eval, 2), expected, 1e-15);
}

// ---- optimizer / schedule --------------------------------------------------

TEST(Schedule, WarmupThenCosine) {
  EXPECT_DOUBLE_EQ(scheduled_lr(1.0, 0, 100, 10, 0.1), 0.1);
  EXPECT_DOUBLE_EQ(scheduled_lr(1.0, 9, 100, 10, 0.1), 1.0);
  EXPECT_DOUBLE_EQ(scheduled_lr(1.0, 10, 100, 10, 0.1), 1.0);
  EXPECT_NEAR(scheduled_lr(1.0, 100, 100, 10, 0.1), 0.1, 1e-15);
  EXPECT_NEAR(scheduled_lr(1.0, 55, 100, 10, 0.1), 0.55, 1e-12);
}

TEST(AdamW, FirstStepMovesByLearningRateTimesSign) {
  num::Var p(num::Tensor(num::Shape{3}, std::vector<double>{1.0, -2.0, 0.5}));
  p.node()->grad = num::Tensor(num::Shape{3}, std::vector<double>{0.3, -0.1, 0.0});
  AdamWConfig c;
  c.lr = 0.01;
  c.clip_norm = 0.0;
  AdamW opt({p}, c);
  opt.step();
  // m_hat = g, v_hat = g^2, so the update is lr * g / (|g| + eps)
  EXPECT_NEAR(p.value()[0], 1.0 - 0.01 * 0.3 / (0.3 + 1e-8), 1e-15);
  EXPECT_NEAR(p.value()[1], -2.0 + 0.01 * 0.1 / (0.1 + 1e-8), 1e-15);
  EXPECT_EQ(p.value()[2], 0.5);
  EXPECT_EQ(opt.steps(), 1);
}

// ---- config ----------------------------------------------------------------

TEST(AdaptConfig, JsonRoundTripAndStrictness) {
  AdaptConfig c;
  c.schedule = Schedule::opd;
  c.opd.alpha = 0.05;
  c.aux.w = 4.0;
  const auto back = adapt_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_THROW(adapt_config_from_json({{"sft", {{"bogus", 1}}}}), ConfigError);
  EXPECT_THROW(adapt_config_from_json({{"sft", {{"lr", 0.0}}}}), ConfigError);
  EXPECT_THROW(adapt_config_from_json({{"schedule", "rl"}}), ConfigError);
  EXPECT_EQ(schedule_from_string("sft->opd"), Schedule::sft_opd);
}

// ---- sampling --------------------------------------------------------------

TEST(Sampling, ZeroTemperatureIsArgmaxWithLowIndexTies) {
  num::Rng rng(1);
  const std::vector<double> z = {0.1, 2.0, 2.0, -1.0};
  EXPECT_EQ(sample_token(z, 0.0, rng), 1);
}

TEST(Sampling, GreedyRolloutsMatchRecomputedArgmaxAndLogp) {
  auto cfg = tiny_config();
  const auto teacher = MoEModel::init(cfg, 3);
  const std::vector<std::vector<int>> prompts = {{1, 2, 3}, {4, 5, 6}};
  const auto rs = sample_from_teacher(teacher, prompts, SamplingConfig{0.0, 5}, 7);
  for (const auto& r : rs) {
    auto seq = r.prompt;
    for (std::size_t t = 0; t < r.response.size(); ++t) {
      const auto lp = log_softmax(last_logits(teacher, seq));
      const auto best = static_cast<int>(std::max_element(lp.begin(), lp.end()) - lp.begin());
      EXPECT_EQ(r.response[t], best);
      EXPECT_NEAR(r.teacher_logp[t], lp[static_cast<std::size_t>(best)], 1e-12);
      seq.push_back(r.response[t]);
    }
  }
}

TEST(Sampling, StudentRolloutsRecordConsistentScores) {
  auto cfg = tiny_config();
  const auto teacher = MoEModel::init(cfg, 3);
  const auto student = injection::inject(teacher, {});
  const std::vector<std::vector<int>> prompts = {{1, 2, 3}, {4, 5, 6}, {7, 8, 9}};
  const SamplingConfig sc{1.0, 6};
  const auto a = sample_from_student(student, teacher, prompts, sc, 11, 40, 5);
  const auto b = sample_from_student(student, teacher, prompts, sc, 11, 40, 5);
  ASSERT_EQ(a.size(), 3u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& r = a[i];
    EXPECT_EQ(r.id, 40 + i);
    EXPECT_TRUE(r.student_sampled);
    EXPECT_EQ(r.policy_version, 5u);
    EXPECT_EQ(r.response, b[i].response);
    EXPECT_EQ(r.student_logp, b[i].student_logp);
    ASSERT_EQ(r.zero_selected.size(), r.response.size());
    auto seq = r.prompt;
    for (std::size_t t = 0; t < r.response.size(); ++t) {
      const auto zs = last_logits(student, seq);
      const auto ls = log_softmax(zs);
      const auto lt = log_softmax(last_logits(teacher, seq));
      const auto y = static_cast<std::size_t>(r.response[t]);
      EXPECT_NEAR(r.student_logp[t], ls[y], 1e-12);
      EXPECT_NEAR(r.teacher_logp[t], lt[y], 1e-12);
      EXPECT_LE(r.student_logp[t], 0.0);
      double h = 0.0;
      for (double v : ls) h -= std::exp(v) * v;
      EXPECT_NEAR(r.student_entropy[t], h, 1e-12);
      EXPECT_GE(r.student_entropy[t], 0.0);
      EXPECT_EQ(r.zero_selected[t].size(), static_cast<std::size_t>(cfg.num_layers));
      seq.push_back(r.response[t]);
    }
  }
}

TEST(Sampling, RejectsRolloutsLongerThanContext) {
  auto cfg = tiny_config();
  const auto teacher = MoEModel::init(cfg, 3);
  EXPECT_THROW(sample_from_teacher(teacher, {{1, 2, 3}}, SamplingConfig{1.0, 10}, 1), ConfigError);
}

// ---- SFT -------------------------------------------------------------------

TEST(SftLoss, QuarterProbabilityExample) {
  auto cfg = tiny_config(2);
  cfg.vocab_size = 4;
  auto m = MoEModel::init(cfg, 5);
  for (auto& x : m.head.mutable_value().data()) x = 0.0;  // uniform next-token distribution
  Rollout r;
  r.prompt = {0, 1};
  r.response = {2, 3};
  const auto lt = sft_loss(m, {r}, AuxConfig{0.0, 2.0});
  EXPECT_NEAR(lt.values.task_loss, 1.3862943611198906, 1e-12);
  EXPECT_NEAR(lt.values.task_loss * 2.0, 2.772588722239781, 1e-12);
  EXPECT_EQ(lt.values.loss, lt.values.task_loss);
}

TEST(SftLoss, AlphaZeroDecouplesAndAlphaAddsGroupLoss) {
  auto cfg = tiny_config();
  const auto teacher = MoEModel::init(cfg, 3);
  const auto student = injection::inject(teacher, {});
  const auto rs = sample_from_teacher(teacher, {{1, 2, 3}, {3, 4, 5}}, SamplingConfig{1.0, 4}, 2);
  const auto a = sft_loss(student, rs, AuxConfig{0.0, 2.0});
  EXPECT_EQ(a.values.l_ga, 0.0);
  EXPECT_EQ(a.total.item(), a.values.task_loss);
  const auto b = sft_loss(student, rs, AuxConfig{0.1, 2.0});
  EXPECT_EQ(b.values.task_loss, a.values.task_loss);
  EXPECT_GT(b.values.l_ga, 0.0);
  EXPECT_EQ(b.total.item(), b.values.task_loss + b.values.l_ga);
}

TEST(SftLoss, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    auto cfg = tiny_config();
    const auto teacher = MoEModel::init(cfg, seed);
    injection::InjectionSpec spec;
    spec.n_new = 2;
    spec.seed = seed;
    const auto student = injection::inject(teacher, spec);
    const auto rs = sample_from_teacher(teacher, {{1, 2, 3}, {5, 6, 7}}, SamplingConfig{1.0, 3}, seed);
    const auto trace = routing_trace(student, rs);
    const AuxConfig aux{0.1, 2.0};
    auto f = [&] { return sft_loss(student, rs, aux, &trace).total; };
    std::vector<num::Var> params;
    std::vector<std::string> names;
    for (auto& [n, v] : student.named_parameters()) {
      params.push_back(v);
      names.push_back(n);
    }
    const auto rep = num::grad_check(f, params, names);
    EXPECT_TRUE(rep.passed) << "seed " << seed << "\n" << rep.summary();
  }
}

TEST(SftStep, OverfitsFixedBatchMonotonically) {
  auto cfg = tiny_config();
  const auto teacher = MoEModel::init(cfg, 3);
  auto student = injection::inject(teacher, {});
  const auto rs = sample_from_teacher(teacher, {{1, 2, 3}, {3, 4, 5}, {6, 7, 8}}, SamplingConfig{1.0, 5}, 2);
  AdamWConfig oc;
  oc.lr = 3e-3;
  AdamW opt(student.parameters(), oc);
  double prev = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 10; ++i) {
    const auto r = sft_step(student, rs, AuxConfig{0.1, 2.0}, opt, i);
    EXPECT_LT(r.loss, prev) << "step " << i;
    prev = r.loss;
  }
}

TEST(SftStep, NonFiniteLossNamesTheBatch) {
  auto cfg = tiny_config();
  const auto teacher = MoEModel::init(cfg, 3);
  auto student = injection::inject(teacher, {});
  const auto rs = sample_from_teacher(teacher, {{1, 2, 3}}, SamplingConfig{1.0, 3}, 2);
  student.head.mutable_value()[0] = std::nan("");
  AdamW opt(student.parameters(), {});
  try {
    sft_step(student, rs, AuxConfig{}, opt, 17);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("batch 17"), std::string::npos) << e.what();
  }
}

// ---- OPD -------------------------------------------------------------------

TEST(OpdAdvantage, TwoTokenExampleAndClamp) {
  Rollout r;
  r.response = {0};
  r.student_logp = {std::log(0.5)};
  r.teacher_logp = {std::log(0.8)};
  EXPECT_NEAR(opd_advantages(r, -30.0)[0], 0.470004, 1e-6);
  EXPECT_NEAR(opd_advantages(r, -30.0)[0], std::log(1.6), 1e-15);

  r.teacher_logp = {-std::numeric_limits<double>::infinity()};
  long clamps = 0;
  EXPECT_EQ(opd_advantages(r, -30.0, &clamps)[0], -30.0 - std::log(0.5));
  EXPECT_EQ(clamps, 1);
}

TEST(OpdStep, StudentEqualToTeacherIsAFixedPoint) {
  auto cfg = tiny_config();
  const auto teacher = MoEModel::init(cfg, 4);
  for (bool augmented : {false, true}) {
    MoEModel student = augmented ? injection::inject(teacher, {}) : teacher.clone();
    if (augmented) student.set_extra_experts_masked(true);
    const auto before = student.clone();
    AdaptConfig ac;
    ac.opd.max_new_tokens = 4;
    TrainState st;
    st.optimizer = std::make_shared<AdamW>(student.parameters(), AdamWConfig{});
    const auto r = opd_step(student, teacher, {{1, 2, 3}, {4, 5, 6}}, ac, st, 9);
    EXPECT_EQ(r.kl_estimate, 0.0);
    EXPECT_EQ(r.task_loss, 0.0);
    EXPECT_TRUE(model::parameters_bitwise_equal(student, before)) << "augmented=" << augmented;
  }
}

TEST(OpdStep, SamplesFromTheCurrentPolicyVersion) {
  auto cfg = tiny_config();
  const auto teacher = MoEModel::init(cfg, 4);
  auto student = injection::inject(teacher, {});
  AdaptConfig ac;
  ac.opd.max_new_tokens = 3;
  TrainState st;
  st.optimizer = std::make_shared<AdamW>(student.parameters(), AdamWConfig{});
  opd_step(student, teacher, {{1, 2, 3}}, ac, st, 1);
  opd_step(student, teacher, {{1, 2, 3}, {2, 3, 4}}, ac, st, 2);
  EXPECT_EQ(st.optimizer->steps(), 2);
  EXPECT_EQ(st.next_rollout_id, 3u);
  TrainState bare;
  EXPECT_THROW(opd_step(student, teacher, {{1, 2, 3}}, ac, bare, 1), StateError);
}

// Length-1 rollouts over a 3-token vocabulary: the enumerated expectation of
// the surrogate gradient is the gradient of KL(pi_theta || pi_T) at the
// prompt's last position.
class OpdOracle : public ::testing::Test {
 protected:
  void SetUp() override {
    cfg_ = tiny_config();
    cfg_.vocab_size = 3;
    teacher_ = MoEModel::init(cfg_, 21);
    injection::InjectionSpec spec;
    spec.n_new = 2;
    student_ = injection::inject(MoEModel::init(cfg_, 22), spec);
    ls_ = log_softmax(last_logits(student_, prompt_));
    lt_ = log_softmax(last_logits(teacher_, prompt_));
    for (const auto& [n, v] : student_.named_parameters()) params_.push_back(v);
    for (int y = 0; y < 3; ++y) {
      Rollout r;
      r.prompt = prompt_;
      r.response = {y};
      r.student_logp = {ls_[static_cast<std::size_t>(y)]};
      r.teacher_logp = {lt_[static_cast<std::size_t>(y)]};
      r.student_sampled = true;
      for (auto& p : params_) p.zero_grad();
      num::backward(opd_loss(student_, {r}, AuxConfig{0.0, 2.0}, -30.0).total);
      per_token_.push_back(flat_grads(params_));
    }
  }

  double kl() const {
    const auto ls = log_softmax(last_logits(student_, prompt_));
    double k = 0.0;
    for (std::size_t y = 0; y < ls.size(); ++y) k += std::exp(ls[y]) * (ls[y] - lt_[y]);
    return k;
  }

  std::vector<double> kl_gradient_fd() {
    std::vector<double> g;
    const double eps = 1e-5;
    for (auto& p : params_) {
      auto data = p.mutable_value().data();
      for (auto& x : data) {
        const double x0 = x;
        x = x0 + eps;
        const double up = kl();
        x = x0 - eps;
        const double dn = kl();
        x = x0;
        g.push_back((up - dn) / (2 * eps));
      }
    }
    return g;
  }

  model::ModelConfig cfg_;
  MoEModel teacher_, student_;
  std::vector<int> prompt_ = {0, 1, 2, 1};
  std::vector<double> ls_, lt_;
  std::vector<num::Var> params_;
  std::vector<std::vector<double>> per_token_;
};

TEST_F(OpdOracle, ExhaustiveExpectationEqualsReverseKlGradient) {
  std::vector<double> expected(per_token_[0].size(), 0.0);
  for (std::size_t y = 0; y < 3; ++y) {
    for (std::size_t i = 0; i < expected.size(); ++i) expected[i] += std::exp(ls_[y]) * per_token_[y][i];
  }
  const auto fd = kl_gradient_fd();
  EXPECT_LT(max_rel(expected, fd), 1e-6);
}

TEST_F(OpdOracle, MonteCarloEstimateWithinSamplingError) {
  const std::size_t n = 100000;
  num::Rng rng(123);
  std::array<double, 3> counts{};
  std::vector<double> probs = {std::exp(ls_[0]), std::exp(ls_[1]), std::exp(ls_[2])};
  for (std::size_t s = 0; s < n; ++s) counts[rng.categorical(probs)] += 1.0;
  const auto fd = kl_gradient_fd();
  for (std::size_t i = 0; i < fd.size(); ++i) {
    double mc = 0.0, mean = 0.0, sq = 0.0;
    for (std::size_t y = 0; y < 3; ++y) {
      mc += counts[y] / static_cast<double>(n) * per_token_[y][i];
      mean += probs[y] * per_token_[y][i];
      sq += probs[y] * per_token_[y][i] * per_token_[y][i];
    }
    const double se = std::sqrt(std::max(0.0, sq - mean * mean) / static_cast<double>(n));
    EXPECT_LE(std::abs(mc - fd[i]), 5.0 * se + 1e-9) << "element " << i;
  }
}

TEST(OpdLoss, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    auto cfg = tiny_config();
    const auto teacher = MoEModel::init(cfg, seed);
    injection::InjectionSpec spec;
    spec.n_new = 2;
    spec.seed = seed;
    const auto student = injection::inject(MoEModel::init(cfg, seed + 100), spec);
    const auto rs = sample_from_student(student, teacher, {{1, 2, 3}, {5, 6, 7}}, SamplingConfig{1.0, 3}, seed, 0, 0);
    const auto trace = routing_trace(student, rs);
    auto f = [&] { return opd_loss(student, rs, AuxConfig{0.1, 2.0}, -30.0, &trace).total; };
    std::vector<num::Var> params;
    std::vector<std::string> names;
    for (auto& [n, v] : student.named_parameters()) {
      params.push_back(v);
      names.push_back(n);
    }
    const auto rep = num::grad_check(f, params, names);
    EXPECT_TRUE(rep.passed) << "seed " << seed << "\n" << rep.summary();
  }
}

// ---- adapt / evaluate ------------------------------------------------------

namespace {

AdaptConfig tiny_adapt() {
  AdaptConfig c;
  c.prompt_len = 3;
  c.sft.num_rollouts = 6;
  c.sft.batch_size = 4;
  c.sft.epochs = 1;
  c.sft.max_new_tokens = 4;
  c.opd.steps = 2;
  c.opd.prompts_per_batch = 2;
  c.opd.max_new_tokens = 4;
  c.record_wall_time = false;
  return c;
}

}  // namespace

TEST(Adapt, ZeroStepSftReturnsTheInjectedModel) {
  auto cfg = tiny_config();
  const auto teacher = MoEModel::init(cfg, 6);
  auto c = tiny_adapt();
  c.schedule = Schedule::sft;
  c.sft.epochs = 0;
  injection::InjectionSpec spec;
  spec.seed = 3;
  const auto res = adapt(teacher, spec, c, {{1, 2, 3}});
  EXPECT_TRUE(model::parameters_bitwise_equal(res.student, injection::inject(teacher, spec)));
  EXPECT_EQ(res.state.step, 0);
  EXPECT_TRUE(res.state.log.empty());
}

TEST(Adapt, StageMarkersCheckpointsAndDeterminism) {
  auto cfg = tiny_config();
  const auto teacher = MoEModel::init(cfg, 6);
  const auto frozen = teacher.clone();
  const auto dir = std::filesystem::temp_directory_path() / "dynmoe_adapt_test";
  std::filesystem::remove_all(dir);
  const auto c = tiny_adapt();
  const std::vector<std::vector<int>> prompts = {{1, 2, 3}, {4, 5, 6}, {7, 8, 9}};
  const auto a = adapt(teacher, {}, c, prompts, dir.string());
  const auto b = adapt(teacher, {}, c, prompts);

  ASSERT_EQ(c.sft_steps(), 2);
  ASSERT_EQ(a.state.stage_marks.size(), 2u);
  EXPECT_EQ(a.state.stage_marks[0], (std::pair<long, std::string>{0, "sft"}));
  EXPECT_EQ(a.state.stage_marks[1], (std::pair<long, std::string>{2, "opd"}));
  ASSERT_EQ(a.state.log.size(), 4u);
  for (std::size_t i = 0; i < a.state.log.size(); ++i) EXPECT_EQ(a.state.log[i].step, static_cast<long>(i));
  EXPECT_EQ(a.state.log[1].stage, "sft");
  EXPECT_EQ(a.state.log[2].stage, "opd");
  ASSERT_EQ(a.state.checkpoints.size(), 2u);
  for (const auto& p : a.state.checkpoints) EXPECT_TRUE(std::filesystem::exists(p));
  EXPECT_TRUE(model::parameters_bitwise_equal(model::load_checkpoint(a.state.checkpoints[1]), a.student));

  EXPECT_EQ(a.state.log_csv(), b.state.log_csv());
  EXPECT_TRUE(model::parameters_bitwise_equal(a.student, b.student));
  EXPECT_TRUE(model::parameters_bitwise_equal(teacher, frozen));
  EXPECT_EQ(a.state.log_csv().substr(0, 50), "step,stage,task_loss,l_ga,r_ze,kl_estimate,wall_ti");
  std::filesystem::remove_all(dir);
}

TEST(Evaluate, RecombinationMaskingAndDeterminism) {
  auto cfg = tiny_config();
  cfg.vocab_size = 64;
  cfg.max_seq_len = 40;
  const auto teacher = MoEModel::init(cfg, 8);
  CorpusSpec cs;
  cs.num_sequences = 40;
  const auto corpus = generate_corpus(cs);

  const auto e1 = evaluate(teacher, corpus);
  const auto e2 = evaluate(teacher, corpus);
  EXPECT_EQ(e1.to_json(), e2.to_json());
  EXPECT_EQ(e1.r_ze, 0.0);
  EXPECT_EQ(e1.tokens, corpus.size() * (corpus.tokens[0].size() - 1));

  const auto student = injection::inject(teacher, {});
  const auto es = evaluate(student, corpus);
  double ce = 0.0, acc = 0.0, rz = 0.0;
  std::size_t n = 0;
  for (int t = 0; t < kNumTags; ++t) {
    const double c = static_cast<double>(es.count_by_tag[t]);
    ce += c * es.ce_by_tag[t];
    acc += c * es.acc_by_tag[t];
    rz += c * es.r_ze_by_tag[t];
    n += es.count_by_tag[t];
  }
  EXPECT_EQ(n, es.tokens);
  EXPECT_NEAR(ce / static_cast<double>(n), es.ce, 1e-12);
  EXPECT_NEAR(acc / static_cast<double>(n), es.accuracy, 1e-12);
  EXPECT_NEAR(rz / static_cast<double>(n), es.r_ze, 1e-12);
  double layer_mean = 0.0;
  for (double v : es.r_ze_by_layer) layer_mean += v / static_cast<double>(es.r_ze_by_layer.size());
  EXPECT_NEAR(layer_mean, es.r_ze, 1e-12);
  EXPECT_GT(es.r_ze, 0.0);

  EXPECT_EQ(evaluate(student, corpus, true).to_json(), e1.to_json());
}

TEST(ReverseKl, ZeroForIdenticalModelsAndNonNegativeFull) {
  auto cfg = tiny_config();
  const auto teacher = MoEModel::init(cfg, 8);
  const SamplingConfig sc{1.0, 5};
  const auto same = estimate_reverse_kl(teacher, teacher, {{1, 2, 3}, {3, 4, 5}}, sc, 1);
  EXPECT_EQ(same.sampled, 0.0);
  EXPECT_EQ(same.full, 0.0);
  EXPECT_EQ(same.tokens, 10u);
  const auto other = estimate_reverse_kl(MoEModel::init(cfg, 9), teacher, {{1, 2, 3}, {3, 4, 5}}, sc, 1);
  EXPECT_GT(other.full, 0.0);
}

TEST_F(TrainedTeacher, BeatsUnigramAndFitsStructuredSpans) {
  const auto e = evaluate(*teacher_, split_->heldout);
  const double uni = unigram_ce(split_->train, split_->heldout, spec_->vocab_size);
  EXPECT_LT(e.ce, uni - 1.0) << "teacher " << e.ce << " unigram " << uni;
  EXPECT_GT(e.acc_by_tag[static_cast<int>(SpanTag::structured)], 0.9);
  EXPECT_EQ(evaluate(*teacher_, split_->heldout).to_json(), e.to_json());
}

TEST_F(TrainedTeacher, TrainingIsDeterministicAndRejectsAugmentedConfigs) {
  TeacherConfig tc;
  tc.steps = 3;
  model::ModelConfig mc;
  const auto a = train_teacher(mc, split_->train, tc);
  const auto b = train_teacher(mc, split_->train, tc);
  EXPECT_TRUE(model::parameters_bitwise_equal(a, b));
  mc.num_zero_experts = 8;
  EXPECT_THROW(train_teacher(mc, split_->train, tc), StateError);
}
