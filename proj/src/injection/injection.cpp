// SPDX-License-Identifier: Apache-2.0
#include "dynmoe/injection/injection.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "dynmoe/errors.hpp"
#include "dynmoe/numerics/rng.hpp"

namespace dynmoe::injection {

using num::Shape;
using num::Tensor;
using num::Var;

void InjectionSpec::validate() const {
  if (n_new < 1) throw ConfigError("injection.n_new must be >= 1, got " + std::to_string(n_new));
  if (kind == ExpertKind::normal) throw ConfigError("injection.kind must be zero or copy");
}

std::pair<double, double> pooled_moments(std::span<const double> xs) {
  if (xs.empty()) throw InputError("pooled_moments: empty input");
  const double x0 = xs[0];
  double s = 0.0;
  for (double x : xs) s += x - x0;
  const double mean = x0 + s / static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(xs.size()))};
}

MoEModel inject(const MoEModel& model, const InjectionSpec& spec, InjectionReport* report) {
  spec.validate();
  if (model.config().augmented()) {
    throw StateError("inject: model already has " + std::to_string(model.config().num_zero_experts) +
                     " extra experts");
  }
  MoEModel out = model.clone();
  auto& cfg = out.mutable_config();
  cfg.num_zero_experts = spec.n_new;
  cfg.extra_kind = spec.kind;
  out.set_extra_experts_masked(false);
  if (report) report->moments.clear();

  const std::size_t N = static_cast<std::size_t>(cfg.num_experts);
  const std::size_t H = static_cast<std::size_t>(cfg.hidden);
  for (std::size_t l = 0; l < out.blocks.size(); ++l) {
    auto& layer = out.blocks[l].moe;
    const Tensor& old = layer.router.weight.value();
    const auto [mean, sd] = pooled_moments(old.data());
    Tensor w(Shape{N + static_cast<std::size_t>(spec.n_new), H});
    std::copy(old.data().begin(), old.data().end(), w.data().begin());
    num::Rng rng(num::derive_seed(spec.seed, "inject.layer." + std::to_string(l)));
    for (std::size_t i = old.numel(); i < w.numel(); ++i) w[i] = mean + sd * rng.normal();
    layer.router.weight = Var::parameter(std::move(w));
    for (int e = 0; e < spec.n_new; ++e) {
      model::Expert ex;
      ex.kind = spec.kind;
      layer.experts.push_back(ex);
    }
    if (report) {
      const auto& nw = layer.router.weight.value().data();
      const auto [mn, sn] = pooled_moments(nw.subspan(old.numel()));
      report->moments.push_back({mean, sd, mn, sn});
    }
  }
  return out;
}

MismatchStats compare_outputs(const Tensor& y, const Tensor& yt) {
  if (y.shape() != yt.shape() || y.rank() != 2) {
    throw DimensionError("compare_outputs: " + num::shape_str(y.shape()) + " vs " + num::shape_str(yt.shape()));
  }
  MismatchStats s;
  const std::size_t n = y.rows(), h = y.cols();
  for (std::size_t r = 0; r < n; ++r) {
    double yy = 0, tt = 0, yt_dot = 0, dd = 0;
    for (std::size_t j = 0; j < h; ++j) {
      const double a = y.at(r, j), b = yt.at(r, j);
      yy += a * a;
      tt += b * b;
      yt_dot += a * b;
      dd += (b - a) * (b - a);
    }
    if (yy == 0.0) {
      ++s.excluded;
      continue;
    }
    const double ny = std::sqrt(yy), nt = std::sqrt(tt);
    s.norm_diff += std::abs(nt - ny) / ny;
    s.vec_diff += std::sqrt(dd) / ny;
    s.cosine += nt == 0.0 ? 0.0 : yt_dot / (ny * nt);
    ++s.tokens;
  }
  if (s.tokens > 0) {
    const double k = static_cast<double>(s.tokens);
    s.norm_diff /= k;
    s.vec_diff /= k;
    s.cosine /= k;
  }
  return s;
}

InjectionReport diagnose_mismatch(const MoEModel& original, const MoEModel& augmented,
                                  const model::TokenBatch& batch, MismatchInput input) {
  auto a = original.config(), b = augmented.config();
  a.num_zero_experts = b.num_zero_experts = 0;
  a.extra_kind = b.extra_kind;
  if (!(a == b)) throw ConfigError("diagnose_mismatch: models differ beyond the extra experts");
  if (batch.empty()) throw InputError("diagnose_mismatch: empty batch");

  num::NoGradGuard guard;
  model::ForwardOptions opts;
  opts.keep_moe_io = true;
  const auto ref = model::lm_forward(original, batch, opts);
  std::vector<model::MoEIO> var_io;
  if (input == MismatchInput::propagated) {
    var_io = model::lm_forward(augmented, batch, opts).moe_io;
  } else {
    for (std::size_t l = 0; l < augmented.blocks.size(); ++l) {
      auto o = model::moe_block_forward(augmented.blocks[l].moe, augmented.config(), Var(ref.moe_io[l].input),
                                        model::GateMode::standard, augmented.extra_experts_masked());
      var_io.push_back({ref.moe_io[l].input, o.y.value(), o.y_norm.value(), o.y_copy.value()});
    }
  }

  InjectionReport rep;
  const bool copy = augmented.config().augmented() && augmented.config().extra_kind == ExpertKind::copy;
  for (std::size_t l = 0; l < ref.moe_io.size(); ++l) {
    LayerMismatch m;
    m.full = compare_outputs(ref.moe_io[l].y, var_io[l].y);
    if (copy) {
      m.has_copy = true;
      m.normal_part = compare_outputs(ref.moe_io[l].y, var_io[l].y_norm);
      m.copy_part = compare_outputs(ref.moe_io[l].y, var_io[l].y_copy);
    }
    rep.mismatch.push_back(m);
  }
  return rep;
}

std::string InjectionReport::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "layer,metric,value\n";
  const std::size_t L = std::max(moments.size(), mismatch.size());
  for (std::size_t l = 0; l < L; ++l) {
    if (l < moments.size()) {
      const auto& m = moments[l];
      os << l << ",router_mean_orig," << m.mean_orig << "\n";
      os << l << ",router_std_orig," << m.std_orig << "\n";
      os << l << ",router_mean_new," << m.mean_new << "\n";
      os << l << ",router_std_new," << m.std_new << "\n";
    }
    if (l < mismatch.size()) {
      auto emit = [&](const std::string& suffix, const MismatchStats& s) {
        os << l << ",norm_diff" << suffix << "," << s.norm_diff << "\n";
        os << l << ",vec_diff" << suffix << "," << s.vec_diff << "\n";
        os << l << ",cosine" << suffix << "," << s.cosine << "\n";
      };
      const auto& m = mismatch[l];
      emit("", m.full);
      if (m.has_copy) {
        emit("_norm", m.normal_part);
        emit("_cp", m.copy_part);
      }
      os << l << ",tokens," << m.full.tokens << "\n";
      os << l << ",excluded_tokens," << m.full.excluded << "\n";
    }
  }
  return os.str();
}

void InjectionReport::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw MissingArtifactError("cannot write " + path);
  out << to_csv();
}

}  // namespace dynmoe::injection
