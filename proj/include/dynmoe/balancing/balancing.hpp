// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <string>
#include <vector>

#include "dynmoe/model/forward.hpp"

namespace dynmoe::balancing {

using model::RoutingDecision;

/// Dispatch statistics of one MoE layer over a token batch.
struct BatchRoutingStats {
  std::vector<double> f;  // fraction of tokens whose top-k contains candidate i
  std::vector<double> P;  // mean full-softmax probability of candidate i
  double f_E = 0.0, P_E = 0.0, f_Z = 0.0, P_Z = 0.0;
  double r_ze = 0.0;
  double k_e_mean = 0.0, k_z_mean = 0.0;
  std::size_t tokens = 0;
  int k = 0;
};

struct AuxConfig {
  double alpha = 0.1;
  double w = 1.0;

  void validate() const;
};

/// Throws InputError on an empty batch and NumericError when the
/// conservation sums (Σf = k, ΣP = 1) are off by more than 1e-10.
BatchRoutingStats batch_stats(std::span<const RoutingDecision> decisions, int n_normal, int n_zero);

/// α (N + N_Z) / K · Σ f_i P_i
double aux_loss(const BatchRoutingStats& s, const AuxConfig& cfg);

/// α (N + N_Z w) / K · (f_E P_E / N + f_Z P_Z / (N_Z w)). Throws ConfigError for N_Z = 0.
double group_aux_loss(const BatchRoutingStats& s, const AuxConfig& cfg, int n_normal, int n_zero);

// Differentiable forms: P is the column mean of the layer's softmax (carries
// gradient), f is taken from the recorded selections as a constant.
num::Var aux_loss(const model::LayerRouting& layer, const AuxConfig& cfg, int n_normal, int n_zero);
num::Var group_aux_loss(const model::LayerRouting& layer, const AuxConfig& cfg, int n_normal, int n_zero);

enum class BalanceKind { none, aux, group };

/// Mean of the per-layer loss over all MoE layers of a forward pass.
num::Var balance_loss(const model::LMOutput& out, BalanceKind kind, const AuxConfig& cfg, int n_normal,
                      int n_zero);

/// N_Z w / (N + N_Z w)
double target_rze(int n_normal, int n_zero, double w);

/// Group loss under the coupling f_g = K P_g, as a function of P_Z.
double coupled_group_loss(double p_z, const AuxConfig& cfg, int n_normal, int n_zero, int k);

/// Grid minimizer of coupled_group_loss over P_Z ∈ [0, 1]; ties go to the
/// smaller P_Z.
double coupled_group_argmin(const AuxConfig& cfg, int n_normal, int n_zero, int k, double step);

std::string stats_csv_header();
std::string stats_csv_row(long step, std::size_t layer, const BatchRoutingStats& s, double l_a, double l_ga);

}  // namespace dynmoe::balancing
