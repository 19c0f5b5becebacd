// SPDX-License-Identifier: Apache-2.0
#include "dynmoe/numerics/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace dynmoe::num {

double GradCheckReport::worst() const {
  double w = 0.0;
  for (const auto& e : entries) w = std::max(w, e.max_rel_error);
  return w;
}

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  os << (passed ? "PASS" : "FAIL") << " worst=" << worst() << " tol=" << tolerance;
  for (const auto& e : entries) {
    if (e.max_rel_error >= tolerance) {
      os << "\n  " << e.name << "[" << e.worst_index << "] rel=" << e.max_rel_error
         << " abs=" << e.max_abs_error;
    }
  }
  return os.str();
}

GradCheckReport grad_check(const std::function<Var()>& loss_fn, std::vector<Var> params,
                           std::vector<std::string> names, const GradCheckOptions& opts) {
  if (opts.eps < 1e-7 || opts.eps > 1e-4) {
    throw std::invalid_argument("grad_check: eps must lie in [1e-7, 1e-4]");
  }
  names.resize(params.size());
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i].empty()) names[i] = "param" + std::to_string(i);
  }

  for (auto& p : params) p.zero_grad();
  {
    Var loss = loss_fn();
    if (!std::isfinite(loss.item())) {
      throw NumericError("grad_check: non-finite loss at the base point");
    }
    backward(loss);
  }
  std::vector<Tensor> tape;
  tape.reserve(params.size());
  for (auto& p : params) tape.push_back(p.grad());

  auto probe = [&](std::size_t pi, std::size_t i, double sign) {
    NoGradGuard ng;
    const double v = loss_fn().item();
    if (!std::isfinite(v)) {
      std::ostringstream os;
      os << "grad_check: non-finite loss " << v << " probing " << names[pi] << "[" << i << "] at "
         << (sign > 0 ? "+eps" : "-eps");
      throw NumericError(os.str());
    }
    return v;
  };

  GradCheckReport report;
  report.tolerance = opts.tol;
  std::vector<Tensor> fds;
  double scale = opts.scale_floor;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& value = params[pi].mutable_value();
    Tensor fd(value.shape(), 0.0);
    for (std::size_t i = 0; i < value.numel(); ++i) {
      const double orig = value[i];
      value[i] = orig + opts.eps;
      const double up = probe(pi, i, 1.0);
      value[i] = orig - opts.eps;
      const double down = probe(pi, i, -1.0);
      value[i] = orig;
      fd[i] = (up - down) / (2.0 * opts.eps);
      scale = std::max({scale, std::abs(fd[i]), std::abs(tape[pi][i])});
    }
    fds.push_back(std::move(fd));
  }
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    GradCheckEntry e;
    e.name = names[pi];
    e.numel = fds[pi].numel();
    for (std::size_t i = 0; i < e.numel; ++i) {
      const double err = std::abs(fds[pi][i] - tape[pi][i]);
      if (err > e.max_abs_error) {
        e.max_abs_error = err;
        e.worst_index = i;
      }
    }
    e.max_rel_error = e.max_abs_error / scale;
    report.entries.push_back(e);
  }
  for (auto& p : params) p.zero_grad();
  report.passed = report.worst() < opts.tol;
  return report;
}

}  // namespace dynmoe::num
