#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ddsp/encoder/encoder.hpp"
#include "ddsp/io/binary.hpp"

namespace ddsp::train {

using Gradients = std::map<std::string, std::vector<float>>;

struct OptimizerState {
  struct Moments {
    std::vector<float> m, v;
    bool operator==(const Moments&) const = default;
  };
  std::uint64_t step = 0;
  std::map<std::string, Moments> moments;  // keyed like the parameter set

  bool operator==(const OptimizerState&) const = default;
};

/// Bias-corrected Adam. Every gradient must name a parameter of equal size;
/// parameters without a gradient are left alone but the step still advances.
inline void adam_step(encoder::WeightSet& params, const Gradients& grads, OptimizerState& st, double lr, double beta1,
                      double beta2, double eps = 1e-8) {
  for (const auto& [name, g] : grads) {
    auto it = params.tensors.find(name);
    if (it == params.tensors.end()) throw ShapeError("adam: gradient for unknown parameter '" + name + "'");
    if (it->second.data.size() != g.size())
      throw ShapeError("adam: gradient for '" + name + "' has " + std::to_string(g.size()) + " values, parameter has " +
                       std::to_string(it->second.data.size()));
    auto mit = st.moments.find(name);
    if (mit != st.moments.end() && mit->second.m.size() != g.size())
      throw ShapeError("adam: moment shape mismatch for '" + name + "'");
  }
  ++st.step;
  const double t = static_cast<double>(st.step);
  const double c1 = 1.0 - std::pow(beta1, t), c2 = 1.0 - std::pow(beta2, t);
  for (const auto& [name, g] : grads) {
    auto& p = params.tensors.at(name).data;
    auto& mo = st.moments[name];
    if (mo.m.empty()) {
      mo.m.assign(g.size(), 0.0f);
      mo.v.assign(g.size(), 0.0f);
    }
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double gi = g[i];
      const double m = beta1 * mo.m[i] + (1.0 - beta1) * gi;
      const double v = beta2 * mo.v[i] + (1.0 - beta2) * gi * gi;
      mo.m[i] = static_cast<float>(m);
      mo.v[i] = static_cast<float>(v);
      p[i] = static_cast<float>(p[i] - lr * (m / c1) / (std::sqrt(v / c2) + eps));
    }
  }
}

inline void write_state(io::Writer& w, const OptimizerState& st) {
  w.u64(st.step);
  w.u32(static_cast<std::uint32_t>(st.moments.size()));
  for (const auto& [name, mo] : st.moments) {
    w.tensor(name, ad::Tensor<float>({mo.m.size()}, mo.m));
    w.tensor(name, ad::Tensor<float>({mo.v.size()}, mo.v));
  }
}

inline OptimizerState read_state(io::Reader& r) {
  OptimizerState st;
  st.step = r.u64("optimizer step");
  const std::uint32_t n = r.u32("moment count");
  for (std::uint32_t i = 0; i < n; ++i) {
    auto [name, m] = r.tensor();
    auto [name_v, v] = r.tensor();
    if (name != name_v || m.data.size() != v.data.size()) r.fail("moment pair mismatch for '" + name + "'");
    if (!st.moments.emplace(name, OptimizerState::Moments{std::move(m.data), std::move(v.data)}).second)
      r.fail("duplicate moment '" + name + "'");
  }
  return st;
}

/// Moments must cover only existing parameters, with matching sizes.
inline void check_state(const OptimizerState& st, const encoder::WeightSet& params, const std::string& what) {
  for (const auto& [name, mo] : st.moments) {
    if (!params.contains(name)) throw ConfigError(what + ": optimizer moment for unknown parameter '" + name + "'");
    if (mo.m.size() != params.at(name).data.size())
      throw ConfigError(what + ": optimizer moment size mismatch for '" + name + "'");
  }
}

}  // namespace ddsp::train
