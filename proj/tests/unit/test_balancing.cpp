// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>

#include "dynmoe/balancing/balancing.hpp"
#include "dynmoe/errors.hpp"
#include "dynmoe/numerics/grad_check.hpp"
#include "test_util.hpp"

using namespace dynmoe;
using namespace dynmoe::balancing;
using model::RoutingDecision;
using testing_util::random_tensor;

namespace {

RoutingDecision decision(std::vector<int> sel, std::vector<double> probs) {
  RoutingDecision d;
  d.selected = std::move(sel);
  d.probs_full = std::move(probs);
  return d;
}

std::vector<RoutingDecision> uniform_batch(int n, int nz, int k, int tokens) {
  // Round-robin selections give every candidate the same dispatch count when
  // tokens * k is a multiple of n + nz.
  const int C = n + nz;
  std::vector<RoutingDecision> out;
  int next = 0;
  for (int t = 0; t < tokens; ++t) {
    std::vector<int> sel;
    for (int j = 0; j < k; ++j) sel.push_back((next++) % C);
    out.push_back(decision(sel, std::vector<double>(static_cast<std::size_t>(C), 1.0 / C)));
  }
  return out;
}

double direct_group_loss(double alpha, double w, int n, int nz, int k, double fE, double PE, double fZ,
                         double PZ) {
  return alpha * (n + nz * w) / k * (fE * PE / n + fZ * PZ / (nz * w));
}

}  // namespace

TEST(BatchStats, CountingExample) {
  std::vector<RoutingDecision> ds = {decision({0, 2}, {0.5, 0.2, 0.3}), decision({0, 1}, {0.6, 0.3, 0.1})};
  auto s = batch_stats(ds, 2, 1);
  EXPECT_EQ(s.f, (std::vector<double>{1.0, 0.5, 0.5}));
  EXPECT_EQ(s.f_E, 1.5);
  EXPECT_EQ(s.f_Z, 0.5);
  EXPECT_EQ(s.r_ze, 0.25);
  EXPECT_EQ(s.k_z_mean, 0.5);
  EXPECT_EQ(s.k_e_mean, 1.5);
  EXPECT_NEAR(s.P_E + s.P_Z, 1.0, 1e-15);
  EXPECT_THROW(batch_stats(std::vector<RoutingDecision>{}, 2, 1), InputError);
}

TEST(BatchStats, UniformRouter) {
  auto ds = uniform_batch(4, 2, 3, 12);
  auto s = batch_stats(ds, 4, 2);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_NEAR(s.f[i], 3.0 / 6.0, 1e-15);
    EXPECT_NEAR(s.P[i], 1.0 / 6.0, 1e-15);
  }
}

TEST(BatchStats, MatchesBruteForceRecountOnModelDecisions) {
  auto cfg = testing_util::tiny_config(3);
  auto m = model::MoEModel::init(cfg, 5);
  auto out = model::lm_forward(m, {{1, 2, 3, 4, 5, 6, 7}, {7, 6, 5, 4, 3, 2, 1}});
  for (const auto& layer : out.layers) {
    auto s = batch_stats(layer.decisions, 4, 3);
    std::vector<double> f(7, 0.0), P(7, 0.0);
    double zslots = 0;
    for (const auto& d : layer.decisions) {
      for (int c : d.selected) {
        f[static_cast<std::size_t>(c)] += 1;
        zslots += c >= 4;
      }
      for (std::size_t i = 0; i < 7; ++i) P[i] += d.probs_full[i];
    }
    const double n = static_cast<double>(layer.decisions.size());
    for (std::size_t i = 0; i < 7; ++i) {
      EXPECT_EQ(s.f[i], f[i] / n);
      EXPECT_NEAR(s.P[i], P[i] / n, 1e-15);
    }
    EXPECT_EQ(s.r_ze, zslots / n / 2);
    EXPECT_NEAR(s.k_e_mean + s.k_z_mean, 2.0, 1e-15);
  }
}

TEST(AuxLoss, UniformIdentityAndZeroAlpha) {
  auto s = batch_stats(uniform_batch(4, 2, 2, 3), 4, 2);
  EXPECT_NEAR(aux_loss(s, {0.1, 1.0}), 0.1, 1e-15);
  EXPECT_EQ(aux_loss(s, {0.0, 1.0}), 0.0);
}

TEST(GroupAuxLoss, UniformAndBoundaryExamples) {
  auto s = batch_stats(uniform_batch(4, 2, 2, 3), 4, 2);
  const double oracle = direct_group_loss(0.1, 2.0, 4, 2, 2, 2.0 * 4 / 6, 4.0 / 6, 2.0 * 2 / 6, 2.0 / 6);
  EXPECT_NEAR(oracle, 0.1 * 10.0 / 9.0, 1e-15);
  EXPECT_NEAR(group_aux_loss(s, {0.1, 2.0}, 4, 2), oracle, 1e-15);

  BatchRoutingStats b;
  b.k = 2;
  b.f_E = 2;
  b.P_E = 1;
  EXPECT_NEAR(group_aux_loss(b, {1.0, 2.0}, 4, 2), 2.0, 1e-15);
  EXPECT_THROW(group_aux_loss(b, {1.0, 2.0}, 4, 0), ConfigError);
}

TEST(GroupAuxLoss, InvariantToMassPermutationWithinNormalGroup) {
  std::vector<RoutingDecision> a = {decision({0, 4}, {0.4, 0.1, 0.2, 0.1, 0.2}),
                                    decision({1, 2}, {0.1, 0.3, 0.3, 0.1, 0.2})};
  std::vector<RoutingDecision> b = {decision({3, 4}, {0.1, 0.2, 0.1, 0.4, 0.2}),
                                    decision({0, 3}, {0.3, 0.1, 0.1, 0.3, 0.2})};
  const AuxConfig cfg{0.3, 1.5};
  EXPECT_NEAR(group_aux_loss(batch_stats(a, 4, 1), cfg, 4, 1), group_aux_loss(batch_stats(b, 4, 1), cfg, 4, 1),
              1e-15);
  EXPECT_NE(aux_loss(batch_stats(a, 4, 1), cfg), aux_loss(batch_stats(b, 4, 1), cfg));
}

TEST(TargetRze, ValuesAndMonotonicity) {
  EXPECT_EQ(target_rze(128, 64, 2), 0.5);
  EXPECT_NEAR(target_rze(128, 64, 1), 1.0 / 3.0, 1e-15);
  EXPECT_EQ(target_rze(16, 8, 2), 0.5);
  double prev = 0;
  for (double w : {0.25, 0.5, 1.0, 2.0, 4.0, 8.0}) {
    EXPECT_GT(target_rze(16, 8, w), prev);
    prev = target_rze(16, 8, w);
  }
}

TEST(Equilibrium, GridMinimizerSitsAtTarget) {
  for (auto [n, nz, w] : {std::tuple{16, 8, 1.0}, {16, 8, 2.0}, {128, 64, 2.0}, {64, 32, 2.0}, {10, 3, 0.7}}) {
    const double p = coupled_group_argmin({0.1, w}, n, nz, 4, 1e-4);
    EXPECT_NEAR(p, target_rze(n, nz, w), 2e-4) << n << "," << nz << "," << w;
  }
}

TEST(DifferentiableLosses, ValueMatchesStatsAndGradientsCheck) {
  auto cfg = testing_util::tiny_config(2);
  auto m = model::MoEModel::init(cfg, 9);
  const model::TokenBatch batch = {{1, 2, 3, 4, 5}, {6, 7, 8, 9, 10}};
  const auto trace = model::trace_of(model::lm_forward(m, batch));
  const AuxConfig ac{0.1, 2.0};
  model::ForwardOptions opts;
  opts.replay = &trace;

  auto out = model::lm_forward(m, batch, opts);
  for (const auto& layer : out.layers) {
    auto s = batch_stats(layer.decisions, 4, 2);
    EXPECT_NEAR(group_aux_loss(layer, ac, 4, 2).item(), group_aux_loss(s, ac, 4, 2), 1e-15);
    EXPECT_NEAR(aux_loss(layer, ac, 4, 2).item(), aux_loss(s, ac), 1e-15);
  }

  std::vector<num::Var> params;
  std::vector<std::string> names;
  for (auto& [name, v] : m.named_parameters()) {
    if (name.find("router") != std::string::npos || name.find("moe_norm") != std::string::npos) {
      params.push_back(v);
      names.push_back(name);
    }
  }
  for (BalanceKind kind : {BalanceKind::aux, BalanceKind::group}) {
    auto f = [&] { return balance_loss(model::lm_forward(m, batch, opts), kind, ac, 4, 2); };
    auto rep = num::grad_check(f, params, names);
    EXPECT_TRUE(rep.passed) << rep.summary();
  }
}
