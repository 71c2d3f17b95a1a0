#pragma once

// harmonic + filtered noise -> mixed -> post filter -> final

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "ddsp/synth/controls.hpp"
#include "ddsp/synth/harmonic.hpp"
#include "ddsp/synth/noise.hpp"
#include "ddsp/synth/post_filter.hpp"

namespace ddsp::synth {

inline constexpr double kDefaultGamma = 0.01;

template <class T>
struct SynthVars {
  ad::Var<T> harmonic;
  ad::Var<T> noise;
  ad::Var<T> mixed;
  ad::Var<T> final;
};

template <class T>
SynthVars<T> synthesize(const ControlVars<T>& controls, ad::Var<T> kernel, const FrameGrid& grid, double gamma,
                        std::uint64_t seed) {
  auto phase = std::make_shared<const std::vector<double>>(fundamental_phase<T>(controls.f0_hz, grid));
  SynthVars<T> out;
  out.harmonic = harmonic_oscillator(controls.a, controls.c, controls.a_tilde, controls.c_tilde, phase, grid);
  out.noise = filtered_noise(controls.H, gamma, seed, grid);
  out.mixed = ad::add(out.harmonic, out.noise);
  out.final = post_conv(out.mixed, kernel);
  return out;
}

/// All four stages on plain controls, for decomposition and inference.
inline DecomposedAudio synthesize(const SynthControls<float>& controls, std::span<const float> kernel,
                                  const FrameGrid& grid = {}, double gamma = kDefaultGamma, std::uint64_t seed = 0) {
  validate_controls(controls);
  if (controls.bands < 2) throw InvalidArgument("synthesize: M must be >= 2");
  const std::size_t F = controls.frames(), K = controls.harmonics, M = controls.bands;
  ad::Tape<float> tape;
  ControlVars<float> v;
  v.a = tape.leaf_view({F}, controls.a, false);
  v.c = tape.leaf_view({F, K}, controls.c, false);
  v.a_tilde = tape.leaf_view({F}, controls.a_tilde, false);
  v.c_tilde = tape.leaf_view({F, K}, controls.c_tilde, false);
  v.H = tape.leaf_view({F, M}, controls.H, false);
  v.f0_hz = controls.f0_hz;
  const auto s = synthesize<float>(v, tape.leaf_view({kernel.size()}, kernel, false), grid, gamma, seed);
  auto to_buffer = [&](ad::Var<float> x, const char* name) {
    AudioBuffer b;
    b.samples.assign(x.value().begin(), x.value().end());
    b.sample_rate_hz = grid.sample_rate_hz();
    b.source = name;
    return b;
  };
  return {to_buffer(s.harmonic, "harmonic"), to_buffer(s.noise, "noise"), to_buffer(s.mixed, "mixed"),
          to_buffer(s.final, "final")};
}

}  // namespace ddsp::synth
