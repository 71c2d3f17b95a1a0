#pragma once

// Central-difference verification of tape gradients, always in double.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "ddsp/autodiff/tape.hpp"

namespace ddsp::ad {

struct GradCheckOptions {
  /// Coordinates probed per tensor; 0 probes every coordinate.
  std::size_t max_coords_per_tensor = 0;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::vector<double> per_tensor;  // max error of each input tensor
  std::size_t coords_checked = 0;
};

/// f(tape, inputs) must return a scalar Var. Error per coordinate is
/// |analytic - numeric| / max(1, |analytic|).
template <class F>
GradCheckReport grad_check(F&& f, const std::vector<Tensor<double>>& points, double eps,
                           GradCheckOptions opts = {}) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) throw InvalidArgument("grad_check: eps must be in [1e-7, 1e-3]");

  auto evaluate = [&](const std::vector<Tensor<double>>& at, std::vector<std::vector<double>>* grads) {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    vars.reserve(at.size());
    for (const auto& t : at) vars.push_back(tape.leaf(t, grads != nullptr));
    Var<double> out = f(tape, std::span<const Var<double>>(vars));
    if (out.size() != 1) throw InvalidArgument("grad_check: function is not scalar-valued");
    if (grads) {
      tape.backward(out);
      grads->clear();
      for (const auto& v : vars) grads->push_back(tape.grad(v));
    }
    return out.item();
  };

  std::vector<std::vector<double>> analytic;
  evaluate(points, &analytic);

  GradCheckReport report;
  report.per_tensor.assign(points.size(), 0.0);
  std::mt19937_64 rng(opts.seed);
  std::vector<Tensor<double>> probe = points;
  for (std::size_t ti = 0; ti < points.size(); ++ti) {
    std::vector<std::size_t> coords(points[ti].size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (opts.max_coords_per_tensor != 0 && coords.size() > opts.max_coords_per_tensor) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(opts.max_coords_per_tensor);
    }
    for (std::size_t c : coords) {
      const double x0 = probe[ti].data[c];
      probe[ti].data[c] = x0 + eps;
      const double up = evaluate(probe, nullptr);
      probe[ti].data[c] = x0 - eps;
      const double down = evaluate(probe, nullptr);
      probe[ti].data[c] = x0;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[ti][c];
      const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
      report.per_tensor[ti] = std::max(report.per_tensor[ti], err);
      report.max_rel_error = std::max(report.max_rel_error, err);
      ++report.coords_checked;
    }
  }
  return report;
}

/// Single-tensor convenience form: f(tape, x) -> scalar Var.
template <class F>
double grad_check(F&& f, const Tensor<double>& point, double eps, GradCheckOptions opts = {}) {
  return grad_check([&](Tape<double>& t, std::span<const Var<double>> v) { return f(t, v[0]); },
                    std::vector<Tensor<double>>{point}, eps, opts)
      .max_rel_error;
}

}  // namespace ddsp::ad
