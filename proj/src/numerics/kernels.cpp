// SPDX-License-Identifier: Apache-2.0
#include "dynmoe/numerics/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "dynmoe/numerics/tensor.hpp"

namespace dynmoe::num::kernels {

void matmul(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
            std::size_t p, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * p, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * p;
    const double* ai = a + i * n;
    for (std::size_t k = 0; k < n; ++k) {
      const double aik = ai[k];
      const double* bk = b + k * p;
      for (std::size_t j = 0; j < p; ++j) ci[j] += aik * bk[j];
    }
  }
}

void matmul_bt(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
               std::size_t p, bool accumulate) {
  if (m < 4) {
    for (std::size_t i = 0; i < m; ++i) {
      const double* ai = a + i * n;
      for (std::size_t j = 0; j < p; ++j) {
        const double* bj = b + j * n;
        double acc = accumulate ? c[i * p + j] : 0.0;
        if (accumulate) {
          double s = 0.0;
          for (std::size_t k = 0; k < n; ++k) s += ai[k] * bj[k];
          acc += s;
        } else {
          for (std::size_t k = 0; k < n; ++k) acc += ai[k] * bj[k];
        }
        c[i * p + j] = acc;
      }
    }
    return;
  }
  // Transpose b so the inner loop runs over contiguous output columns; each
  // c[i,j] still sums its products in ascending k.
  std::vector<double> bt(n * p);
  for (std::size_t j = 0; j < p; ++j) {
    for (std::size_t k = 0; k < n; ++k) bt[k * p + j] = b[j * n + k];
  }
  if (!accumulate) {
    matmul(a, bt.data(), c, m, n, p, false);
    return;
  }
  std::vector<double> tmp(m * p);
  matmul(a, bt.data(), tmp.data(), m, n, p, false);
  for (std::size_t i = 0; i < m * p; ++i) c[i] += tmp[i];
}

void matmul_at_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
                   std::size_t p) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * n;
    const double* bi = b + i * p;
    for (std::size_t k = 0; k < n; ++k) {
      const double aik = ai[k];
      if (aik == 0.0) continue;
      double* ck = c + k * p;
      for (std::size_t j = 0; j < p; ++j) ck[j] += aik * bi[j];
    }
  }
}

double silu(double x) { return x / (1.0 + std::exp(-x)); }

double silu_grad(double x) {
  const double s = 1.0 / (1.0 + std::exp(-x));
  return s * (1.0 + x * (1.0 - s));
}

void rmsnorm_row(const double* x, const double* weight, double* y, std::size_t h, double eps) {
  double ss = 0.0;
  for (std::size_t i = 0; i < h; ++i) ss += x[i] * x[i];
  const double inv = 1.0 / std::sqrt(ss / static_cast<double>(h) + eps);
  for (std::size_t i = 0; i < h; ++i) y[i] = x[i] * inv * weight[i];
}

void softmax_row(const double* x, double* y, std::size_t d) {
  double mx = -std::numeric_limits<double>::infinity();
  bool any = false;
  for (std::size_t i = 0; i < d; ++i) {
    if (x[i] == kMaskedLogit) continue;
    any = true;
    mx = std::max(mx, x[i]);
  }
  if (!any) throw NumericError("degenerate softmax: every entry is masked");
  double sum = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    y[i] = x[i] == kMaskedLogit ? 0.0 : std::exp(x[i] - mx);
    sum += y[i];
  }
  const double inv = 1.0 / sum;
  for (std::size_t i = 0; i < d; ++i) y[i] *= inv;
}

void log_softmax_row(const double* x, double* y, std::size_t d) {
  double mx = -std::numeric_limits<double>::infinity();
  bool any = false;
  for (std::size_t i = 0; i < d; ++i) {
    if (x[i] == kMaskedLogit) continue;
    any = true;
    mx = std::max(mx, x[i]);
  }
  if (!any) throw NumericError("degenerate softmax: every entry is masked");
  double sum = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    if (x[i] != kMaskedLogit) sum += std::exp(x[i] - mx);
  }
  const double lse = mx + std::log(sum);
  for (std::size_t i = 0; i < d; ++i) {
    y[i] = x[i] == kMaskedLogit ? -std::numeric_limits<double>::infinity() : x[i] - lse;
  }
}

void attention_row(const double* q, const double* keys, const double* values, std::size_t n_keys,
                   std::size_t stride, std::size_t head_dim, double scale, double* out,
                   double* probs) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < n_keys; ++j) {
    const double* kj = keys + j * stride;
    double s = 0.0;
    for (std::size_t d = 0; d < head_dim; ++d) s += q[d] * kj[d];
    s *= scale;
    probs[j] = s;
    mx = std::max(mx, s);
  }
  double sum = 0.0;
  for (std::size_t j = 0; j < n_keys; ++j) {
    probs[j] = std::exp(probs[j] - mx);
    sum += probs[j];
  }
  const double inv = 1.0 / sum;
  std::fill(out, out + head_dim, 0.0);
  for (std::size_t j = 0; j < n_keys; ++j) {
    probs[j] *= inv;
    const double* vj = values + j * stride;
    for (std::size_t d = 0; d < head_dim; ++d) out[d] += probs[j] * vj[d];
  }
}

}  // namespace dynmoe::num::kernels
