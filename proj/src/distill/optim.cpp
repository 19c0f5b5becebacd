// SPDX-License-Identifier: Apache-2.0
#include "dynmoe/distill/optim.hpp"

#include <cmath>

#include "dynmoe/errors.hpp"

namespace dynmoe::distill {

AdamW::AdamW(std::vector<num::Var> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  if (!(cfg_.lr > 0.0)) throw ConfigError("learning rate must be > 0");
  for (const auto& p : params_) {
    m_.emplace_back(p.shape(), 0.0);
    v_.emplace_back(p.shape(), 0.0);
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

double AdamW::step() {
  double sq = 0.0;
  for (const auto& p : params_) {
    if (!p.has_grad()) continue;
    for (double g : p.node()->grad.data()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("optimizer: non-finite gradient norm");
  const double clip = cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm ? cfg_.clip_norm / norm : 1.0;
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& w = params_[i].mutable_value();
    if (cfg_.weight_decay > 0.0) {
      for (double& x : w.data()) x -= cfg_.lr * cfg_.weight_decay * x;
    }
    if (!params_[i].has_grad()) continue;
    const auto g = params_[i].node()->grad.data();
    auto m = m_[i].data();
    auto v = v_[i].data();
    auto x = w.data();
    for (std::size_t j = 0; j < x.size(); ++j) {
      const double gj = g[j] * clip;
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
      x[j] -= cfg_.lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg_.eps);
    }
  }
  zero_grad();
  return norm;
}

}  // namespace dynmoe::distill
