// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "dynmoe/errors.hpp"
#include "dynmoe/flops/flops.hpp"

using namespace dynmoe::flops;

namespace {

FlopsConfig small(double nz, double r) {
  FlopsConfig c;
  c.hidden = 4;
  c.expert_inner = 5;
  c.num_experts = 8;
  c.top_k = 2;
  c.num_zero = nz;
  c.r_ze = r;
  return c;
}

}  // namespace

TEST(MoeFlops, FormulaEvaluation) {
  auto [f, r] = moe_flops(small(0, 0), 3, Variant::orig);
  EXPECT_EQ(f, 720.0);
  EXPECT_EQ(r, 192.0);
  auto [fz, rz] = moe_flops(small(4, 0.5), 3, Variant::dynamic);
  EXPECT_EQ(fz, 360.0);
  EXPECT_EQ(rz, 288.0);
  auto [fi, ri] = moe_flops(small(0, 0), 3, Variant::dynamic);
  EXPECT_EQ(fi, f);
  EXPECT_EQ(ri, r);
}

TEST(FlopsStage, ReferencePrefillTermsPerTokenMac) {
  const auto c = FlopsConfig::reference();
  const double l = 1024;
  const double pair = 4 * l * l * c.attn_inner / (2 * l);
  const double proj = 4 * (1 + c.kv_ratio) * l * c.hidden * c.attn_inner / (2 * l);
  EXPECT_EQ(pair, 8388608.0);
  EXPECT_EQ(proj, 18874368.0);
  const auto b = flops_stage(c, l, Stage::prefill, Variant::orig).per_token_mac(l);
  EXPECT_EQ(b.attention, 8388608.0 + 18874368.0);
  EXPECT_EQ(b.ffn, 37748736.0);
  EXPECT_EQ(b.router, 262144.0);
  EXPECT_EQ(b.total, b.attention + b.ffn + b.router);
}

TEST(FlopsStage, DecodeFirstStepHasNoPairTerm) {
  const auto c = FlopsConfig::reference();
  EXPECT_EQ(attention_flops(c, 1, Stage::decode), 4 * (1 + c.kv_ratio) * c.hidden * c.attn_inner);
}

TEST(FlopsStage, PrefillDifferenceIsExact) {
  const auto c = FlopsConfig::reference();
  for (double l : {1.0, 17.0, 1024.0, 8192.0}) {
    const double d = flops_stage(c, l, Stage::prefill, Variant::orig).total -
                     flops_stage(c, l, Stage::prefill, Variant::dynamic).total;
    EXPECT_EQ(d, 6 * c.r_ze * c.top_k * l * c.hidden * c.expert_inner - 2 * c.num_zero * l * c.hidden);
  }
}

TEST(Speedup, ReferenceTableValues) {
  const double prefill[] = {1.403, 1.341, 1.296, 1.261, 1.234, 1.212, 1.194, 1.178};
  const double decode[] = {1.443, 1.403, 1.370, 1.341, 1.317, 1.296, 1.278, 1.261};
  std::vector<double> lengths;
  for (int i = 1; i <= 8; ++i) lengths.push_back(1024.0 * i);
  const auto rows = speedup_table(FlopsConfig::reference(), lengths, {0.5});
  ASSERT_EQ(rows.size(), 8u);
  for (std::size_t i = 0; i < 8; ++i) {
    EXPECT_NEAR(rows[i].prefill, prefill[i], 1e-3);
    EXPECT_NEAR(rows[i].decode, decode[i], 1e-3);
    EXPECT_GT(rows[i].decode, rows[i].prefill);
    if (i > 0) {
      EXPECT_LT(rows[i].prefill, rows[i - 1].prefill);
      EXPECT_LT(rows[i].decode, rows[i - 1].decode);
    }
  }
}

TEST(Speedup, IdentityLimitsAndMonotonicity) {
  auto c = FlopsConfig::reference();
  c.num_zero = 0;
  c.r_ze = 0;
  EXPECT_EQ(speedup(c, 4096, Stage::prefill), 1.0);
  EXPECT_EQ(speedup(c, 4096, Stage::decode), 1.0);
  const auto ref = FlopsConfig::reference();
  EXPECT_NEAR(speedup(ref, 1e9, Stage::prefill), 1.0, 1e-3);
  double prev = 0;
  for (double r = 0; r <= 1.0; r += 0.125) {
    auto cr = ref;
    cr.r_ze = r;
    const double s = speedup(cr, 2048, Stage::decode);
    EXPECT_GT(s, prev);
    prev = s;
  }
}

TEST(Speedup, LayerCountLeavesRatioUnchanged) {
  const auto c = FlopsConfig::reference();
  for (double L : {1.0, 48.0}) {
    const double o = L * flops_stage(c, 3072, Stage::prefill, Variant::orig).total;
    const double z = L * flops_stage(c, 3072, Stage::prefill, Variant::dynamic).total;
    EXPECT_DOUBLE_EQ(o / z, speedup(c, 3072, Stage::prefill));
  }
}

TEST(FlopsConfigJson, StrictKeysAndRatioStrings) {
  auto c = flops_config_from_json({{"kv_ratio", "1/8"}, {"r_ze", 0.25}});
  EXPECT_EQ(c.kv_ratio, 0.125);
  EXPECT_EQ(c.r_ze, 0.25);
  EXPECT_THROW(flops_config_from_json({{"bogus", 1}}), dynmoe::ConfigError);
  EXPECT_THROW(flops_config_from_json({{"r_ze", 1.5}}), dynmoe::ConfigError);
  const auto csv = speedup_csv(speedup_table(FlopsConfig::reference(), {1024}, {0.5}));
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "length,r_ze,prefill_speedup,decode_speedup");
}
