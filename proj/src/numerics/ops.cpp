// SPDX-License-Identifier: Apache-2.0
#include "dynmoe/numerics/ops.hpp"

#include <cmath>
#include <memory>
#include <string>

#include "dynmoe/numerics/kernels.hpp"

namespace dynmoe::num {

namespace {

void require_rank(const Var& x, std::size_t rank, const char* op) {
  if (x.value().rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(x.shape()));
  }
}

void require_same(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

bool wants(const NodePtr& p) { return p->requires_grad; }

}  // namespace

Var matmul(const Var& a, const Var& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.shape()[0], n = a.shape()[1], p = b.shape()[1];
  if (b.shape()[0] != n) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  Tensor out(Shape{m, p});
  kernels::matmul(a.value().ptr(), b.value().ptr(), out.ptr(), m, n, p);
  return make_op(std::move(out), {a, b}, [m, n, p](Node& self) {
    const auto& pa = self.parents[0];
    const auto& pb = self.parents[1];
    if (wants(pa)) {
      kernels::matmul_bt(self.grad.ptr(), pb->value.ptr(), pa->ensure_grad().ptr(), m, p, n, true);
    }
    if (wants(pb)) {
      kernels::matmul_at_acc(pa->value.ptr(), self.grad.ptr(), pb->ensure_grad().ptr(), m, n, p);
    }
  });
}

Var matmul_bt(const Var& a, const Var& b) {
  require_rank(a, 2, "matmul_bt");
  require_rank(b, 2, "matmul_bt");
  const std::size_t m = a.shape()[0], n = a.shape()[1], p = b.shape()[0];
  if (b.shape()[1] != n) {
    throw DimensionError("matmul_bt: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()) + "^T");
  }
  Tensor out(Shape{m, p});
  kernels::matmul_bt(a.value().ptr(), b.value().ptr(), out.ptr(), m, n, p);
  return make_op(std::move(out), {a, b}, [m, n, p](Node& self) {
    const auto& pa = self.parents[0];
    const auto& pb = self.parents[1];
    if (wants(pa)) {
      kernels::matmul(self.grad.ptr(), pb->value.ptr(), pa->ensure_grad().ptr(), m, p, n, true);
    }
    if (wants(pb)) {
      kernels::matmul_at_acc(self.grad.ptr(), pa->value.ptr(), pb->ensure_grad().ptr(), m, p, n);
    }
  });
}

Var add(const Var& a, const Var& b) {
  require_same(a, b, "add");
  Tensor out = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
  return make_op(std::move(out), {a, b}, [](Node& self) {
    for (const auto& p : self.parents) {
      if (!wants(p)) continue;
      auto& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same(a, b, "sub");
  Tensor out = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= bv[i];
  return make_op(std::move(out), {a, b}, [](Node& self) {
    if (wants(self.parents[0])) {
      auto& g = self.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    }
    if (wants(self.parents[1])) {
      auto& g = self.parents[1]->ensure_grad();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] -= self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same(a, b, "mul");
  Tensor out = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
  return make_op(std::move(out), {a, b}, [](Node& self) {
    const auto& pa = self.parents[0];
    const auto& pb = self.parents[1];
    if (wants(pa)) {
      auto& g = pa->ensure_grad();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * pb->value[i];
    }
    if (wants(pb)) {
      auto& g = pb->ensure_grad();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * pa->value[i];
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (auto& v : out.data()) v *= s;
  return make_op(std::move(out), {a}, [s](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * s;
  });
}

Var silu(const Var& a) {
  Tensor out = a.value();
  for (auto& v : out.data()) v = kernels::silu(v);
  return make_op(std::move(out), {a}, [](Node& self) {
    const auto& pa = self.parents[0];
    auto& g = pa->ensure_grad();
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * kernels::silu_grad(pa->value[i]);
  });
}

Var square(const Var& a) {
  Tensor out = a.value();
  for (auto& v : out.data()) v = v * v;
  return make_op(std::move(out), {a}, [](Node& self) {
    const auto& pa = self.parents[0];
    auto& g = pa->ensure_grad();
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * 2.0 * pa->value[i];
  });
}

Var rmsnorm(const Var& x, const Var& weight, double eps) {
  require_rank(weight, 1, "rmsnorm");
  const std::size_t h = x.value().cols();
  if (weight.shape()[0] != h) {
    throw DimensionError("rmsnorm: weight " + shape_str(weight.shape()) + " vs input " +
                         shape_str(x.shape()));
  }
  const std::size_t n = x.value().rows();
  Tensor out(x.shape());
  for (std::size_t r = 0; r < n; ++r) {
    kernels::rmsnorm_row(x.value().ptr() + r * h, weight.value().ptr(), out.ptr() + r * h, h, eps);
  }
  return make_op(std::move(out), {x, weight}, [n, h, eps](Node& self) {
    const auto& px = self.parents[0];
    const auto& pw = self.parents[1];
    const double* xv = px->value.ptr();
    const double* wv = pw->value.ptr();
    const double* gy = self.grad.ptr();
    double* gx = wants(px) ? px->ensure_grad().ptr() : nullptr;
    double* gw = wants(pw) ? pw->ensure_grad().ptr() : nullptr;
    for (std::size_t r = 0; r < n; ++r) {
      const double* xr = xv + r * h;
      const double* gr = gy + r * h;
      double ss = 0.0;
      for (std::size_t i = 0; i < h; ++i) ss += xr[i] * xr[i];
      const double inv = 1.0 / std::sqrt(ss / static_cast<double>(h) + eps);
      if (gw) {
        for (std::size_t i = 0; i < h; ++i) gw[i] += gr[i] * xr[i] * inv;
      }
      if (gx) {
        double dot = 0.0;
        for (std::size_t i = 0; i < h; ++i) dot += gr[i] * wv[i] * xr[i];
        const double c = inv * inv * inv * dot / static_cast<double>(h);
        double* gxr = gx + r * h;
        for (std::size_t i = 0; i < h; ++i) gxr[i] += gr[i] * wv[i] * inv - c * xr[i];
      }
    }
  });
}

Var softmax_lastdim(const Var& x) {
  const std::size_t d = x.value().cols();
  if (d == 0) throw DimensionError("softmax_lastdim: empty trailing dimension");
  const std::size_t n = x.value().rows();
  Tensor out(x.shape());
  for (std::size_t r = 0; r < n; ++r) kernels::softmax_row(x.value().ptr() + r * d, out.ptr() + r * d, d);
  return make_op(std::move(out), {x}, [n, d](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t r = 0; r < n; ++r) {
      const double* y = self.value.ptr() + r * d;
      const double* gy = self.grad.ptr() + r * d;
      double dot = 0.0;
      for (std::size_t i = 0; i < d; ++i) dot += y[i] * gy[i];
      double* gx = g.ptr() + r * d;
      for (std::size_t i = 0; i < d; ++i) gx[i] += y[i] * (gy[i] - dot);
    }
  });
}

Var log_softmax_lastdim(const Var& x) {
  const std::size_t d = x.value().cols();
  if (d == 0) throw DimensionError("log_softmax_lastdim: empty trailing dimension");
  const std::size_t n = x.value().rows();
  Tensor out(x.shape());
  for (std::size_t r = 0; r < n; ++r) {
    kernels::log_softmax_row(x.value().ptr() + r * d, out.ptr() + r * d, d);
  }
  return make_op(std::move(out), {x}, [n, d](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t r = 0; r < n; ++r) {
      const double* y = self.value.ptr() + r * d;
      const double* gy = self.grad.ptr() + r * d;
      double total = 0.0;
      for (std::size_t i = 0; i < d; ++i) total += gy[i];
      double* gx = g.ptr() + r * d;
      for (std::size_t i = 0; i < d; ++i) {
        if (std::isinf(y[i])) continue;
        gx[i] += gy[i] - std::exp(y[i]) * total;
      }
    }
  });
}

Var mask_columns(const Var& x, std::span<const std::uint8_t> masked) {
  const std::size_t d = x.value().cols();
  if (masked.size() != d) {
    throw DimensionError("mask_columns: mask length " + std::to_string(masked.size()) +
                         " vs input " + shape_str(x.shape()));
  }
  const std::size_t n = x.value().rows();
  Tensor out = x.value();
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < d; ++c) {
      if (masked[c]) out[r * d + c] = kMaskedLogit;
    }
  }
  std::vector<std::uint8_t> mask(masked.begin(), masked.end());
  return make_op(std::move(out), {x}, [n, d, mask = std::move(mask)](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < d; ++c) {
        if (!mask[c]) g[r * d + c] += self.grad[r * d + c];
      }
    }
  });
}

Var gather_rows(const Var& x, std::span<const std::size_t> rows) {
  const std::size_t h = x.value().cols();
  const std::size_t n = x.value().rows();
  if (rows.empty()) throw DimensionError("gather_rows: empty index list");
  Tensor out(Shape{rows.size(), h});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= n) {
      throw DimensionError("gather_rows: row " + std::to_string(rows[i]) + " out of range for " +
                           shape_str(x.shape()));
    }
    std::copy_n(x.value().ptr() + rows[i] * h, h, out.ptr() + i * h);
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return make_op(std::move(out), {x}, [h, idx = std::move(idx)](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      double* dst = g.ptr() + idx[i] * h;
      const double* src = self.grad.ptr() + i * h;
      for (std::size_t j = 0; j < h; ++j) dst[j] += src[j];
    }
  });
}

Var index_add_rows(const Var& base, std::span<const std::size_t> rows, const Var& src) {
  const std::size_t h = base.value().cols();
  const std::size_t n = base.value().rows();
  if (src.value().cols() != h || src.value().rows() != rows.size()) {
    throw DimensionError("index_add_rows: source " + shape_str(src.shape()) + " vs base " +
                         shape_str(base.shape()) + " with " + std::to_string(rows.size()) + " rows");
  }
  Tensor out = base.value();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= n) throw DimensionError("index_add_rows: row index out of range");
    double* dst = out.ptr() + rows[i] * h;
    const double* s = src.value().ptr() + i * h;
    for (std::size_t j = 0; j < h; ++j) dst[j] += s[j];
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return make_op(std::move(out), {base, src}, [h, idx = std::move(idx)](Node& self) {
    const auto& pb = self.parents[0];
    const auto& ps = self.parents[1];
    if (wants(pb)) {
      auto& g = pb->ensure_grad();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    }
    if (wants(ps)) {
      auto& g = ps->ensure_grad();
      for (std::size_t i = 0; i < idx.size(); ++i) {
        const double* s = self.grad.ptr() + idx[i] * h;
        double* d = g.ptr() + i * h;
        for (std::size_t j = 0; j < h; ++j) d[j] += s[j];
      }
    }
  });
}

Var scale_rows(const Var& x, const Var& w) {
  const std::size_t h = x.value().cols();
  const std::size_t n = x.value().rows();
  if (w.value().numel() != n) {
    throw DimensionError("scale_rows: weights " + shape_str(w.shape()) + " vs rows of " +
                         shape_str(x.shape()));
  }
  Tensor out = x.value();
  for (std::size_t r = 0; r < n; ++r) {
    const double s = w.value()[r];
    for (std::size_t j = 0; j < h; ++j) out[r * h + j] *= s;
  }
  return make_op(std::move(out), {x, w}, [n, h](Node& self) {
    const auto& px = self.parents[0];
    const auto& pw = self.parents[1];
    if (wants(px)) {
      auto& g = px->ensure_grad();
      for (std::size_t r = 0; r < n; ++r) {
        const double s = pw->value[r];
        for (std::size_t j = 0; j < h; ++j) g[r * h + j] += self.grad[r * h + j] * s;
      }
    }
    if (wants(pw)) {
      auto& g = pw->ensure_grad();
      for (std::size_t r = 0; r < n; ++r) {
        double acc = 0.0;
        for (std::size_t j = 0; j < h; ++j) acc += self.grad[r * h + j] * px->value[r * h + j];
        g[r] += acc;
      }
    }
  });
}

Var pick_lastdim(const Var& x, std::span<const std::size_t> idx) {
  const std::size_t d = x.value().cols();
  const std::size_t n = x.value().rows();
  if (idx.size() != n) {
    throw DimensionError("pick_lastdim: " + std::to_string(idx.size()) + " indices for " +
                         shape_str(x.shape()));
  }
  Tensor out(Shape{n});
  for (std::size_t r = 0; r < n; ++r) {
    if (idx[r] >= d) throw DimensionError("pick_lastdim: index out of range");
    out[r] = x.value()[r * d + idx[r]];
  }
  std::vector<std::size_t> cols(idx.begin(), idx.end());
  return make_op(std::move(out), {x}, [d, cols = std::move(cols)](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t r = 0; r < cols.size(); ++r) g[r * d + cols[r]] += self.grad[r];
  });
}

Var gather_elements(const Var& x, std::span<const std::size_t> flat_idx) {
  if (flat_idx.empty()) throw DimensionError("gather_elements: empty index list");
  Tensor out(Shape{flat_idx.size()});
  for (std::size_t i = 0; i < flat_idx.size(); ++i) {
    if (flat_idx[i] >= x.value().numel()) throw DimensionError("gather_elements: index out of range");
    out[i] = x.value()[flat_idx[i]];
  }
  std::vector<std::size_t> idx(flat_idx.begin(), flat_idx.end());
  return make_op(std::move(out), {x}, [idx = std::move(idx)](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < idx.size(); ++i) g[idx[i]] += self.grad[i];
  });
}

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return make_op(Tensor::scalar(s), {x}, [](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    const double up = self.grad[0];
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += up;
  });
}

Var mean(const Var& x) {
  const double n = static_cast<double>(x.value().numel());
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return make_op(Tensor::scalar(s / n), {x}, [n](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    const double up = self.grad[0] / n;
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += up;
  });
}

Var dot_const(const Var& x, const Tensor& c) {
  if (x.value().numel() != c.numel()) {
    throw DimensionError("dot_const: " + shape_str(x.shape()) + " vs " + shape_str(c.shape()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < c.numel(); ++i) s += x.value()[i] * c[i];
  return make_op(Tensor::scalar(s), {x}, [c](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    const double up = self.grad[0];
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += up * c[i];
  });
}

Var column_mean(const Var& x) {
  require_rank(x, 2, "column_mean");
  const std::size_t n = x.shape()[0], c = x.shape()[1];
  Tensor out(Shape{c}, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < c; ++j) out[j] += x.value()[r * c + j];
  }
  const double inv = 1.0 / static_cast<double>(n);
  for (auto& v : out.data()) v *= inv;
  return make_op(std::move(out), {x}, [n, c, inv](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t j = 0; j < c; ++j) g[r * c + j] += self.grad[j] * inv;
    }
  });
}

Var subset_normalize(const Var& probs, std::span<const std::size_t> cols,
                     std::span<const std::uint8_t> include, std::size_t k) {
  require_rank(probs, 2, "subset_normalize");
  const std::size_t n = probs.shape()[0], c = probs.shape()[1];
  if (cols.size() != n * k || include.size() != n * k) {
    throw DimensionError("subset_normalize: selection size does not match " + shape_str(probs.shape()) +
                         " with k=" + std::to_string(k));
  }
  Tensor out(Shape{n, k}, 0.0);
  std::vector<double> denom(n, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      if (cols[r * k + j] >= c) throw DimensionError("subset_normalize: column out of range");
      if (include[r * k + j]) s += probs.value()[r * c + cols[r * k + j]];
    }
    denom[r] = s;
    if (s <= 0.0) continue;
    for (std::size_t j = 0; j < k; ++j) {
      if (include[r * k + j]) out[r * k + j] = probs.value()[r * c + cols[r * k + j]] / s;
    }
  }
  std::vector<std::size_t> cc(cols.begin(), cols.end());
  std::vector<std::uint8_t> inc(include.begin(), include.end());
  return make_op(std::move(out), {probs},
                 [n, c, k, cc = std::move(cc), inc = std::move(inc),
                  denom = std::move(denom)](Node& self) {
                   auto& g = self.parents[0]->ensure_grad();
                   for (std::size_t r = 0; r < n; ++r) {
                     if (denom[r] <= 0.0) continue;
                     double dot = 0.0;
                     for (std::size_t j = 0; j < k; ++j) {
                       if (inc[r * k + j]) dot += self.grad[r * k + j] * self.value[r * k + j];
                     }
                     for (std::size_t j = 0; j < k; ++j) {
                       if (!inc[r * k + j]) continue;
                       g[r * c + cc[r * k + j]] += (self.grad[r * k + j] - dot) / denom[r];
                     }
                   }
                 });
}

Var causal_attention(const Var& q, const Var& k, const Var& v, const AttentionShape& s) {
  const std::size_t rows = s.batch * s.seq_len;
  const std::size_t qw = s.num_heads * s.head_dim;
  const std::size_t kw = s.num_kv_heads * s.head_dim;
  if (s.num_kv_heads == 0 || s.num_heads % s.num_kv_heads != 0) {
    throw DimensionError("causal_attention: heads must be a multiple of kv heads");
  }
  if (q.shape() != Shape{rows, qw} || k.shape() != Shape{rows, kw} || v.shape() != Shape{rows, kw}) {
    throw DimensionError("causal_attention: q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) +
                         ", v " + shape_str(v.shape()) + " inconsistent with batch*seq=" +
                         std::to_string(rows));
  }
  const std::size_t T = s.seq_len, d = s.head_dim, group = s.num_heads / s.num_kv_heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(d));
  Tensor out(Shape{rows, qw});
  // probs[b][h][t][j], j <= t
  auto probs = std::make_shared<std::vector<double>>(s.batch * s.num_heads * T * T, 0.0);
  for (std::size_t b = 0; b < s.batch; ++b) {
    for (std::size_t h = 0; h < s.num_heads; ++h) {
      const std::size_t kh = h / group;
      for (std::size_t t = 0; t < T; ++t) {
        const std::size_t row = b * T + t;
        double* pr = probs->data() + ((b * s.num_heads + h) * T + t) * T;
        kernels::attention_row(q.value().ptr() + row * qw + h * d,
                               k.value().ptr() + (b * T) * kw + kh * d,
                               v.value().ptr() + (b * T) * kw + kh * d, t + 1, kw, d, sc,
                               out.ptr() + row * qw + h * d, pr);
      }
    }
  }
  return make_op(std::move(out), {q, k, v}, [s, T, d, group, sc, qw, kw, probs](Node& self) {
    const auto& pq = self.parents[0];
    const auto& pk = self.parents[1];
    const auto& pv = self.parents[2];
    double* gq = wants(pq) ? pq->ensure_grad().ptr() : nullptr;
    double* gk = wants(pk) ? pk->ensure_grad().ptr() : nullptr;
    double* gv = wants(pv) ? pv->ensure_grad().ptr() : nullptr;
    std::vector<double> dp(T);
    for (std::size_t b = 0; b < s.batch; ++b) {
      for (std::size_t h = 0; h < s.num_heads; ++h) {
        const std::size_t kh = h / group;
        for (std::size_t t = 0; t < T; ++t) {
          const std::size_t row = b * T + t;
          const double* pr = probs->data() + ((b * s.num_heads + h) * T + t) * T;
          const double* go = self.grad.ptr() + row * qw + h * d;
          const double* qv = pq->value.ptr() + row * qw + h * d;
          double dot = 0.0;
          for (std::size_t j = 0; j <= t; ++j) {
            const double* vj = pv->value.ptr() + (b * T + j) * kw + kh * d;
            double acc = 0.0;
            for (std::size_t e = 0; e < d; ++e) acc += go[e] * vj[e];
            dp[j] = acc;
            dot += pr[j] * acc;
            if (gv) {
              double* gvj = gv + (b * T + j) * kw + kh * d;
              for (std::size_t e = 0; e < d; ++e) gvj[e] += pr[j] * go[e];
            }
          }
          for (std::size_t j = 0; j <= t; ++j) {
            const double ds = pr[j] * (dp[j] - dot) * sc;
            if (ds == 0.0) continue;
            const double* kj = pk->value.ptr() + (b * T + j) * kw + kh * d;
            if (gq) {
              double* gqr = gq + row * qw + h * d;
              for (std::size_t e = 0; e < d; ++e) gqr[e] += ds * kj[e];
            }
            if (gk) {
              double* gkj = gk + (b * T + j) * kw + kh * d;
              for (std::size_t e = 0; e < d; ++e) gkj[e] += ds * qv[e];
            }
          }
        }
      }
    }
  });
}

}  // namespace dynmoe::num
