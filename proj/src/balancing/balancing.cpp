// SPDX-License-Identifier: Apache-2.0
#include "dynmoe/balancing/balancing.hpp"

#include <cmath>
#include <sstream>

#include "dynmoe/errors.hpp"
#include "dynmoe/numerics/ops.hpp"

namespace dynmoe::balancing {

using num::Tensor;
using num::Var;

void AuxConfig::validate() const {
  if (!(alpha >= 0.0)) throw ConfigError("aux.alpha must be >= 0");
  if (!(w > 0.0)) throw ConfigError("aux.w must be > 0");
}

BatchRoutingStats batch_stats(std::span<const RoutingDecision> decisions, int n_normal, int n_zero) {
  if (decisions.empty()) throw InputError("batch_stats: empty batch");
  const std::size_t C = static_cast<std::size_t>(n_normal + n_zero);
  BatchRoutingStats s;
  s.k = static_cast<int>(decisions[0].selected.size());
  s.tokens = decisions.size();
  s.f.assign(C, 0.0);
  s.P.assign(C, 0.0);
  double zero_slots = 0.0;
  for (const auto& d : decisions) {
    if (d.selected.size() != static_cast<std::size_t>(s.k) || d.probs_full.size() != C) {
      throw InputError("batch_stats: decision with " + std::to_string(d.selected.size()) + " selections and " +
                       std::to_string(d.probs_full.size()) + " probabilities, expected " +
                       std::to_string(s.k) + " and " + std::to_string(C));
    }
    for (int c : d.selected) {
      s.f[static_cast<std::size_t>(c)] += 1.0;
      if (c >= n_normal) zero_slots += 1.0;
    }
    for (std::size_t i = 0; i < C; ++i) s.P[i] += d.probs_full[i];
  }
  const double n = static_cast<double>(s.tokens);
  double fs = 0.0, ps = 0.0;
  for (std::size_t i = 0; i < C; ++i) {
    s.f[i] /= n;
    s.P[i] /= n;
    fs += s.f[i];
    ps += s.P[i];
    if (i < static_cast<std::size_t>(n_normal)) {
      s.f_E += s.f[i];
      s.P_E += s.P[i];
    } else {
      s.f_Z += s.f[i];
      s.P_Z += s.P[i];
    }
  }
  if (std::abs(fs - s.k) > 1e-10 || std::abs(ps - 1.0) > 1e-10) {
    throw NumericError("batch_stats: conservation violated (sum f = " + std::to_string(fs) +
                       ", sum P = " + std::to_string(ps) + ")");
  }
  s.k_z_mean = zero_slots / n;
  s.k_e_mean = s.k - s.k_z_mean;
  s.r_ze = s.k_z_mean / s.k;
  return s;
}

namespace {

std::vector<double> aux_coeffs(const BatchRoutingStats& s, const AuxConfig& cfg, int n_normal, int n_zero) {
  const double scale = cfg.alpha * (n_normal + n_zero) / s.k;
  std::vector<double> c(s.f.size());
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = scale * s.f[i];
  return c;
}

std::vector<double> group_coeffs(const BatchRoutingStats& s, const AuxConfig& cfg, int n_normal, int n_zero) {
  if (n_zero <= 0) throw ConfigError("group auxiliary loss needs at least one zero expert");
  const double zw = n_zero * cfg.w;
  const double scale = cfg.alpha * (n_normal + zw) / s.k;
  const double ce = scale * s.f_E / n_normal;
  const double cz = scale * s.f_Z / zw;
  std::vector<double> c(s.f.size());
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = i < static_cast<std::size_t>(n_normal) ? ce : cz;
  return c;
}

Var routed_dot(const model::LayerRouting& layer, const std::vector<double>& c) {
  return num::dot_const(num::column_mean(layer.probs), Tensor(num::Shape{c.size()}, c));
}

}  // namespace

double aux_loss(const BatchRoutingStats& s, const AuxConfig& cfg) {
  const double C = static_cast<double>(s.f.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < s.f.size(); ++i) acc += s.f[i] * s.P[i];
  return cfg.alpha * C / s.k * acc;
}

double group_aux_loss(const BatchRoutingStats& s, const AuxConfig& cfg, int n_normal, int n_zero) {
  if (n_zero <= 0) throw ConfigError("group auxiliary loss needs at least one zero expert");
  const double zw = n_zero * cfg.w;
  return cfg.alpha * (n_normal + zw) / s.k * (s.f_E * s.P_E / n_normal + s.f_Z * s.P_Z / zw);
}

Var aux_loss(const model::LayerRouting& layer, const AuxConfig& cfg, int n_normal, int n_zero) {
  const auto s = batch_stats(layer.decisions, n_normal, n_zero);
  return routed_dot(layer, aux_coeffs(s, cfg, n_normal, n_zero));
}

Var group_aux_loss(const model::LayerRouting& layer, const AuxConfig& cfg, int n_normal, int n_zero) {
  const auto s = batch_stats(layer.decisions, n_normal, n_zero);
  return routed_dot(layer, group_coeffs(s, cfg, n_normal, n_zero));
}

Var balance_loss(const model::LMOutput& out, BalanceKind kind, const AuxConfig& cfg, int n_normal, int n_zero) {
  if (kind == BalanceKind::none || out.layers.empty()) return Var(Tensor::scalar(0.0));
  Var total;
  for (const auto& layer : out.layers) {
    Var l = kind == BalanceKind::aux ? aux_loss(layer, cfg, n_normal, n_zero)
                                     : group_aux_loss(layer, cfg, n_normal, n_zero);
    total = total.defined() ? num::add(total, l) : l;
  }
  return num::scale(total, 1.0 / static_cast<double>(out.layers.size()));
}

double target_rze(int n_normal, int n_zero, double w) {
  if (n_normal <= 0 || n_zero <= 0 || !(w > 0.0)) throw ConfigError("target_rze: inputs must be positive");
  const double zw = n_zero * w;
  return zw / (n_normal + zw);
}

double coupled_group_loss(double p_z, const AuxConfig& cfg, int n_normal, int n_zero, int k) {
  BatchRoutingStats s;
  s.k = k;
  s.P_Z = p_z;
  s.P_E = 1.0 - p_z;
  s.f_Z = k * s.P_Z;
  s.f_E = k * s.P_E;
  return group_aux_loss(s, cfg, n_normal, n_zero);
}

double coupled_group_argmin(const AuxConfig& cfg, int n_normal, int n_zero, int k, double step) {
  if (!(step > 0.0) || step > 1.0) throw ConfigError("coupled_group_argmin: step must lie in (0, 1]");
  const long n = std::lround(1.0 / step);
  double best_p = 0.0, best = coupled_group_loss(0.0, cfg, n_normal, n_zero, k);
  for (long i = 1; i <= n; ++i) {
    const double p = static_cast<double>(i) / static_cast<double>(n);
    const double v = coupled_group_loss(p, cfg, n_normal, n_zero, k);
    if (v < best) {
      best = v;
      best_p = p;
    }
  }
  return best_p;
}

std::string stats_csv_header() { return "step,layer,f_E,P_E,f_Z,P_Z,r_ze,L_A,L_GA"; }

std::string stats_csv_row(long step, std::size_t layer, const BatchRoutingStats& s, double l_a, double l_ga) {
  std::ostringstream os;
  os.precision(17);
  os << step << "," << layer << "," << s.f_E << "," << s.P_E << "," << s.f_Z << "," << s.P_Z << "," << s.r_ze
     << "," << l_a << "," << l_ga;
  return os.str();
}

}  // namespace dynmoe::balancing
