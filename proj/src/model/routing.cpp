// SPDX-License-Identifier: Apache-2.0
#include "dynmoe/model/routing.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "dynmoe/errors.hpp"
#include "dynmoe/numerics/kernels.hpp"

namespace dynmoe::model {

std::vector<int> select_topk(std::span<const double> probs, std::span<const std::uint8_t> masked,
                             int k) {
  std::vector<int> idx;
  idx.reserve(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (!masked.empty() && masked[i]) continue;
    idx.push_back(static_cast<int>(i));
  }
  if (k <= 0 || static_cast<std::size_t>(k) > idx.size()) {
    throw ConfigError("top-k: k=" + std::to_string(k) + " exceeds the " + std::to_string(idx.size()) +
                      " available candidates");
  }
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](int a, int b) {
    if (probs[a] != probs[b]) return probs[a] > probs[b];
    return a < b;
  });
  idx.resize(static_cast<std::size_t>(k));
  return idx;
}

std::vector<double> router_logits(const RouterParams& router, std::span<const double> h,
                                  std::span<const std::uint8_t> masked) {
  const auto& w = router.weight.value();
  const std::size_t C = w.shape()[0], H = w.shape()[1];
  if (h.size() != H) {
    throw DimensionError("router: hidden state of length " + std::to_string(h.size()) +
                         " vs router " + num::shape_str(w.shape()));
  }
  std::vector<double> logits(C);
  num::kernels::matmul_bt(h.data(), w.ptr(), logits.data(), 1, H, C);
  for (std::size_t c = 0; c < C && !masked.empty(); ++c) {
    if (masked[c]) logits[c] = num::kMaskedLogit;
  }
  return logits;
}

RoutingDecision route_topk(const RouterParams& router, std::span<const double> h, int k,
                           std::span<const std::uint8_t> masked, std::span<const ExpertKind> kinds) {
  for (double v : h) {
    if (!std::isfinite(v)) throw NumericError("route_topk: non-finite hidden state");
  }
  const auto logits = router_logits(router, h, masked);
  RoutingDecision d;
  d.probs_full.resize(logits.size());
  num::kernels::softmax_row(logits.data(), d.probs_full.data(), logits.size());
  d.selected = select_topk(d.probs_full, masked, k);
  double s = 0.0;
  for (int c : d.selected) s += d.probs_full[static_cast<std::size_t>(c)];
  for (int c : d.selected) d.gates.push_back(d.probs_full[static_cast<std::size_t>(c)] / s);
  d.mix_gates = d.gates;
  for (int c : d.selected) {
    if (!kinds.empty() && kinds[static_cast<std::size_t>(c)] != ExpertKind::normal) ++d.zero_selected;
  }
  return d;
}

std::vector<std::uint8_t> candidate_mask(const MoELayer& layer, bool mask_extra) {
  std::vector<std::uint8_t> m(layer.experts.size(), 0);
  if (!mask_extra) return m;
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = layer.experts[i].kind != ExpertKind::normal;
  return m;
}

}  // namespace dynmoe::model
