#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "sgg/errors.hpp"
#include "sgg/random.hpp"
#include "sgg/tensor.hpp"

namespace sgg {

struct GradCheckOptions {
  real eps = real(1e-4);
  // Coordinates sampled per parameter tensor; tensors at or below this size
  // are checked exhaustively.
  int max_coords_per_tensor = 8;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  real max_rel_error = real(0);
  std::string worst_param;
  int worst_index = -1;
  real worst_analytic = real(0);
  real worst_numeric = real(0);
  int coords_checked = 0;
};

// Compares reverse-mode gradients of a deterministic scalar computation with
// central finite differences over sampled parameter coordinates. Relative
// error per coordinate is |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
inline GradCheckReport grad_check(const std::function<Tensor()>& f,
                                  const std::vector<Parameter*>& params,
                                  const GradCheckOptions& opt = {}) {
  if (!(opt.eps > 0)) throw ConfigError("grad_check: eps must be positive");

  Sgd::zero_grad(params);
  Tensor loss = f();
  if (loss.size() != 1)
    throw ShapeError("grad_check: computation must be scalar-valued");
  if (!all_finite(loss))
    throw NumericError("grad_check: non-finite loss in forward pass");
  loss.backward();

  std::vector<std::vector<real>> analytic;
  analytic.reserve(params.size());
  for (Parameter* p : params) {
    if (p->tensor.has_grad())
      analytic.push_back(p->tensor.grad());
    else
      analytic.emplace_back(p->tensor.size(), real(0));
    if (!std::all_of(analytic.back().begin(), analytic.back().end(),
                     [](real v) { return std::isfinite(v); }))
      throw NumericError("grad_check: non-finite gradient for parameter " +
                         p->name);
  }

  GradCheckReport report;
  auto rng = seeded_rng({opt.seed, 0x67726164ull});
  NoGradGuard no_grad;

  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter* p = params[pi];
    const int n = p->tensor.size();
    std::vector<int> coords;
    if (n <= opt.max_coords_per_tensor) {
      coords.resize(n);
      std::iota(coords.begin(), coords.end(), 0);
    } else {
      std::vector<int> all(n);
      std::iota(all.begin(), all.end(), 0);
      std::shuffle(all.begin(), all.end(), rng);
      coords.assign(all.begin(), all.begin() + opt.max_coords_per_tensor);
      std::sort(coords.begin(), coords.end());
    }

    auto& value = p->tensor.leaf_vals();
    for (int c : coords) {
      const real saved = value[c];
      value[c] = saved + opt.eps;
      real up = f().item();
      value[c] = saved - opt.eps;
      real down = f().item();
      value[c] = saved;
      if (!std::isfinite(up) || !std::isfinite(down))
        throw NumericError("grad_check: non-finite loss while perturbing " +
                           p->name);
      const real numeric = (up - down) / (2 * opt.eps);
      const real a = analytic[pi][c];
      const real denom = std::max({std::fabs(a), std::fabs(numeric), real(1e-8)});
      const real rel = std::fabs(a - numeric) / denom;
      ++report.coords_checked;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = p->name;
        report.worst_index = c;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace sgg
