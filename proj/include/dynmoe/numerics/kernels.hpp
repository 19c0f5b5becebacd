// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>

// Row kernels shared by the taped ops and the incremental decoder. Every
// output element is accumulated in ascending index order, independent of how
// many rows are processed at once, so a one-row call reproduces the matching
// row of a batched call bit for bit.
namespace dynmoe::num::kernels {

/// c[m,p] (=|+=) a[m,n] * b[n,p]
void matmul(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
            std::size_t p, bool accumulate = false);

/// c[m,p] (=|+=) a[m,n] * b[p,n]^T
void matmul_bt(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
               std::size_t p, bool accumulate = false);

/// c[n,p] += a[m,n]^T * b[m,p]
void matmul_at_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
                   std::size_t p);

double silu(double x);
double silu_grad(double x);

void rmsnorm_row(const double* x, const double* weight, double* y, std::size_t h, double eps);

/// Stable softmax; entries equal to kMaskedLogit get probability 0.
/// Throws NumericError("degenerate softmax") when every entry is masked.
void softmax_row(const double* x, double* y, std::size_t d);
void log_softmax_row(const double* x, double* y, std::size_t d);

/// Causal attention for one query head over `n_keys` cached rows.
/// keys/values point at the head's slice of row 0; consecutive rows are
/// `stride` apart. `probs` (length n_keys) receives the attention weights.
void attention_row(const double* q, const double* keys, const double* values, std::size_t n_keys,
                   std::size_t stride, std::size_t head_dim, double scale, double* out,
                   double* probs);

}  // namespace dynmoe::num::kernels
