// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numeric>

#include "dynmoe/numerics/autograd.hpp"
#include "dynmoe/numerics/grad_check.hpp"
#include "dynmoe/numerics/kernels.hpp"
#include "dynmoe/numerics/ops.hpp"
#include "dynmoe/numerics/rng.hpp"
#include "test_util.hpp"

using namespace dynmoe::num;
using dynmoe::testing_util::random_tensor;

namespace {

// Reference product with no shared code path.
Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  const auto m = a.rows(), n = a.cols(), p = b.cols();
  Tensor c(Shape{m, p});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < p; ++j) {
      long double s = 0;
      for (std::size_t k = 0; k < n; ++k) s += static_cast<long double>(a.at(i, k)) * b.at(k, j);
      c.at(i, j) = static_cast<double>(s);
    }
  }
  return c;
}

Tensor transpose(const Tensor& a) {
  Tensor t(Shape{a.cols(), a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t.at(j, i) = a.at(i, j);
  return t;
}

void expect_grads_ok(const std::function<Var()>& f, std::vector<Var> params) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < params.size(); ++i) names.push_back("p" + std::to_string(i));
  auto rep = grad_check(f, params, names);
  EXPECT_TRUE(rep.passed) << rep.summary();
}

}  // namespace

TEST(Tensor, RejectsZeroDimensionsAndMismatchedData) {
  EXPECT_THROW(Tensor(Shape{2, 0}), DimensionError);
  EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<double>(3, 0.0)), DimensionError);
  Tensor t = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
  EXPECT_EQ(t.at(1, 2), 6.0);
  EXPECT_EQ(t.reshaped(Shape{3, 2}).at(2, 1), 6.0);
  EXPECT_THROW(t.reshaped(Shape{4, 2}), DimensionError);
}

TEST(Tensor, FiniteCheckNamesTheTensor) {
  Tensor t(Shape{2}, 1.0);
  t[1] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_FALSE(t.all_finite());
  try {
    t.check_finite("router logits");
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("router logits"), std::string::npos);
  }
}

TEST(Kernels, MatmulMatchesNaiveProduct) {
  auto a = random_tensor({5, 7}, 1), b = random_tensor({7, 3}, 2);
  Tensor c(Shape{5, 3});
  kernels::matmul(a.ptr(), b.ptr(), c.ptr(), 5, 7, 3);
  auto ref = naive_matmul(a, b);
  for (std::size_t i = 0; i < c.numel(); ++i) EXPECT_NEAR(c[i], ref[i], 1e-13);
}

TEST(Kernels, OneRowCallReproducesBatchedRowBitwise) {
  auto a = random_tensor({9, 16}, 3), b = random_tensor({6, 16}, 4);
  Tensor full(Shape{9, 6});
  kernels::matmul_bt(a.ptr(), b.ptr(), full.ptr(), 9, 16, 6);
  for (std::size_t r = 0; r < 9; ++r) {
    Tensor one(Shape{1, 6});
    kernels::matmul_bt(a.ptr() + r * 16, b.ptr(), one.ptr(), 1, 16, 6);
    for (std::size_t j = 0; j < 6; ++j) EXPECT_EQ(one[j], full.at(r, j));
  }
  auto ref = naive_matmul(a, transpose(b));
  for (std::size_t i = 0; i < full.numel(); ++i) EXPECT_NEAR(full[i], ref[i], 1e-13);
}

TEST(Kernels, SoftmaxValuesAndMasking) {
  double x[4] = {std::log(4.0), std::log(2.0), 0.0, 0.0}, y[4];
  kernels::softmax_row(x, y, 4);
  EXPECT_NEAR(y[0], 0.5, 1e-15);
  EXPECT_NEAR(y[1], 0.25, 1e-15);
  EXPECT_NEAR(y[2], 0.125, 1e-15);
  x[1] = kMaskedLogit;
  kernels::softmax_row(x, y, 4);
  EXPECT_EQ(y[1], 0.0);
  EXPECT_NEAR(y[0] + y[2] + y[3], 1.0, 1e-15);
  double m[2] = {kMaskedLogit, kMaskedLogit}, o[2];
  EXPECT_THROW(kernels::softmax_row(m, o, 2), NumericError);
}

TEST(Kernels, LogSoftmaxAgreesWithLogOfSoftmax) {
  auto x = random_tensor({10}, 5, 3.0);
  Tensor p(Shape{10}), lp(Shape{10});
  kernels::softmax_row(x.ptr(), p.ptr(), 10);
  kernels::log_softmax_row(x.ptr(), lp.ptr(), 10);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_NEAR(lp[i], std::log(p[i]), 1e-13);
}

TEST(Autograd, LeafUsedTwiceAccumulates) {
  Var x = Var::parameter(Tensor::vector({1.5, -2.0}));
  Var y = sum(add(x, x));
  backward(y);
  EXPECT_EQ(x.grad()[0], 2.0);
  EXPECT_EQ(x.grad()[1], 2.0);
}

TEST(Autograd, NoGradGuardRecordsNothing) {
  Var x = Var::parameter(Tensor::vector({1.0}));
  {
    NoGradGuard g;
    Var y = square(x);
    EXPECT_FALSE(y.requires_grad());
  }
  EXPECT_TRUE(grad_enabled());
}

TEST(GradCheck, ElementwiseAndMatrixOps) {
  Var a = Var::parameter(random_tensor({3, 4}, 11));
  Var b = Var::parameter(random_tensor({4, 5}, 12));
  Var c = Var::parameter(random_tensor({5, 4}, 13));
  Var w = Var::parameter(random_tensor({4}, 14));
  auto f = [&] {
    Var x = matmul(a, b);                    // [3,5]
    Var y = matmul_bt(a, c);                 // [3,5]
    Var z = mul(silu(x), sub(y, scale(x, 0.3)));
    Var r = rmsnorm(a, w, 1e-6);
    return add(mean(square(z)), sum(mul(r, r)));
  };
  expect_grads_ok(f, {a, b, c, w});
}

TEST(GradCheck, SoftmaxFamilyAndIndexing) {
  Var x = Var::parameter(random_tensor({4, 6}, 21));
  Var h = Var::parameter(random_tensor({3, 6}, 22));
  const std::vector<std::uint8_t> mask = {0, 0, 1, 0, 0, 1};
  const std::vector<std::size_t> rows = {2, 0, 2};
  const std::vector<std::size_t> pick = {1, 3, 0, 4};
  const std::vector<std::size_t> flat = {0, 7, 13};
  auto coeffs = random_tensor({6}, 23);
  auto f = [&] {
    Var p = softmax_lastdim(mask_columns(x, mask));
    Var lp = log_softmax_lastdim(x);
    Var g = gather_rows(x, rows);
    Var acc = index_add_rows(h, std::vector<std::size_t>{0, 1, 0}, scale_rows(g, gather_elements(p, flat)));
    return add(add(dot_const(column_mean(p), coeffs), mean(pick_lastdim(lp, pick))), mean(square(acc)));
  };
  expect_grads_ok(f, {x, h});
}

TEST(GradCheck, SubsetNormalize) {
  Var x = Var::parameter(random_tensor({3, 5}, 31));
  const std::vector<std::size_t> sel = {0, 3, 4, 1, 2, 0};
  const std::vector<std::uint8_t> inc = {1, 0, 1, 1, 1, 1};
  auto c = random_tensor({6}, 32);
  auto f = [&] { return dot_const(subset_normalize(softmax_lastdim(x), sel, inc, 2), c); };
  expect_grads_ok(f, {x});
}

TEST(Ops, SubsetNormalizeValues) {
  Var p(Tensor::matrix({{0.5, 0.25, 0.25}}));
  auto g = subset_normalize(p, std::vector<std::size_t>{0, 1, 2}, std::vector<std::uint8_t>{1, 1, 0}, 3);
  EXPECT_NEAR(g.value()[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(g.value()[1], 1.0 / 3.0, 1e-15);
  EXPECT_EQ(g.value()[2], 0.0);
  auto none = subset_normalize(p, std::vector<std::size_t>{0, 1}, std::vector<std::uint8_t>{0, 0}, 2);
  EXPECT_EQ(none.value()[0], 0.0);
  EXPECT_EQ(none.value()[1], 0.0);
}

TEST(Ops, CausalAttentionMatchesNaiveAndIsCausal) {
  AttentionShape s{2, 5, 4, 2, 3};
  auto q = random_tensor({10, 12}, 41), k = random_tensor({10, 6}, 42), v = random_tensor({10, 6}, 43);
  auto out = causal_attention(Var(q), Var(k), Var(v), s).value();
  const double sc = 1.0 / std::sqrt(3.0);
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t h = 0; h < 4; ++h) {
      const std::size_t kh = h / 2;
      for (std::size_t t = 0; t < 5; ++t) {
        std::vector<double> sc_row(t + 1);
        double mx = -1e300;
        for (std::size_t j = 0; j <= t; ++j) {
          double d = 0;
          for (std::size_t e = 0; e < 3; ++e) d += q.at(b * 5 + t, h * 3 + e) * k.at(b * 5 + j, kh * 3 + e);
          sc_row[j] = d * sc;
          mx = std::max(mx, sc_row[j]);
        }
        double z = 0;
        for (auto& x : sc_row) z += (x = std::exp(x - mx));
        for (std::size_t e = 0; e < 3; ++e) {
          double o = 0;
          for (std::size_t j = 0; j <= t; ++j) o += sc_row[j] / z * v.at(b * 5 + j, kh * 3 + e);
          EXPECT_NEAR(out.at(b * 5 + t, h * 3 + e), o, 1e-12);
        }
      }
    }
  }
  // Perturbing the last position leaves earlier rows untouched.
  auto k2 = k;
  k2.at(4, 0) += 10.0;
  auto out2 = causal_attention(Var(q), Var(k2), Var(v), s).value();
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t j = 0; j < 12; ++j) EXPECT_EQ(out2.at(t, j), out.at(t, j));
}

TEST(GradCheck, CausalAttention) {
  AttentionShape s{1, 4, 2, 1, 3};
  Var q = Var::parameter(random_tensor({4, 6}, 51));
  Var k = Var::parameter(random_tensor({4, 3}, 52));
  Var v = Var::parameter(random_tensor({4, 3}, 53));
  auto c = random_tensor({4, 6}, 54);
  auto f = [&] { return dot_const(causal_attention(q, k, v, s), c); };
  expect_grads_ok(f, {q, k, v});
}

TEST(GradCheck, DetectsAWrongBackward) {
  Var x = Var::parameter(random_tensor({3}, 61));
  auto f = [&] {
    Tensor y = x.value();
    for (auto& e : y.data()) e = e * e;
    // Deliberately wrong: d(x^2)/dx reported as x.
    Var out = make_op(y, {x}, [](Node& self) {
      auto& g = self.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * self.parents[0]->value[i];
    });
    return sum(out);
  };
  auto rep = grad_check(f, {x}, {"x"});
  EXPECT_FALSE(rep.passed);
  EXPECT_GT(rep.worst(), 0.1);
}

TEST(GradCheck, RejectsStepOutsideRangeAndNonFiniteLoss) {
  Var x = Var::parameter(Tensor::vector({1.0}));
  GradCheckOptions o;
  o.eps = 1e-2;
  EXPECT_THROW(grad_check([&] { return sum(x); }, {x}, {"x"}, o), std::invalid_argument);
  auto bad = [&] {
    Tensor t = x.value();
    if (t[0] > 1.0) t[0] = std::numeric_limits<double>::infinity();
    return sum(Var(t));
  };
  EXPECT_THROW(grad_check(bad, {x}, {"x"}), NumericError);
}

TEST(Rng, DeterministicAndLabelSeparated) {
  Rng a(derive_seed(7, "corpus")), b(derive_seed(7, "corpus"));
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
  EXPECT_NE(derive_seed(7, "corpus"), derive_seed(7, "teacher"));
  EXPECT_NE(derive_seed(7, "corpus"), derive_seed(8, "corpus"));
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
}

TEST(Rng, NormalMomentsAndCategorical) {
  Rng r(123);
  const int n = 200000;
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    double x = r.normal();
    s += x;
    s2 += x * x;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
  std::vector<double> w = {0.0, 3.0, 1.0};
  int counts[3] = {0, 0, 0};
  for (int i = 0; i < 40000; ++i) ++counts[r.categorical(w)];
  EXPECT_EQ(counts[0], 0);
  EXPECT_NEAR(counts[1] / 40000.0, 0.75, 0.01);
}
