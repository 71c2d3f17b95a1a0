#pragma once

// Sine + cosine harmonic oscillator bank.
//
//   x[n] = sum_k a[n] c_k[n] sin(phi_k[n]) + a~[n] c~_k[n] cos(phi_k[n])
//   phi_k[n] = 2 pi sum_{m=0..n} k f0[m] / fs      (inclusive sum)
//
// All frame-rate controls are brought to audio rate by the Hann interpolator
// of core/dsp.hpp. The upsampling is fused into the oscillator so that the
// [samples x K] intermediates are never materialized.

#include <cmath>
#include <complex>
#include <memory>
#include <numbers>
#include <span>
#include <vector>

#include "ddsp/autodiff/ops.hpp"
#include "ddsp/core/dsp.hpp"
#include "ddsp/synth/controls.hpp"

namespace ddsp::synth {

/// Fundamental phase per audio sample, wrapped to [0, 2 pi). Computed in
/// double outside any tape: f0 is an input feature, not a learned quantity.
/// phi_k = k * phi_1 (mod 2 pi).
template <class T>
std::vector<double> fundamental_phase(std::span<const T> f0_frames, const FrameGrid& grid) {
  for (T v : f0_frames)
    if (!(v >= T(0))) throw InvalidArgument("oscillator: negative or NaN f0");
  const auto f0 = upsample_control<T>(f0_frames, grid);
  const double two_pi = 2.0 * std::numbers::pi;
  const double fs = grid.sample_rate_hz();
  std::vector<double> phase(f0.size());
  double acc = 0.0;
  for (std::size_t n = 0; n < f0.size(); ++n) {
    acc += two_pi * static_cast<double>(f0[n]) / fs;
    acc = std::fmod(acc, two_pi);
    phase[n] = acc;
  }
  return phase;
}

namespace detail {

// Walks every audio sample with its two contributing frames and weights.
template <class Fn>
void for_each_sample(std::size_t frames, std::size_t u, Fn&& fn) {
  const UpsampleKernel kernel(u);
  for (std::size_t j = 0; j < frames; ++j) {
    const std::size_t next = j + 1 < frames ? j + 1 : ddsp::detail::reflect_next(frames);
    for (std::size_t d = 0; d < u; ++d) fn(j * u + d, j, next, kernel.lead[d], kernel.trail[d]);
  }
}

}  // namespace detail

/// Differentiable oscillator bank. a, a_tilde: [F]; c, c_tilde: [F x K];
/// phase from fundamental_phase(). Output: [F * u].
template <class T>
ad::Var<T> harmonic_oscillator(ad::Var<T> a, ad::Var<T> c, ad::Var<T> a_tilde, ad::Var<T> c_tilde,
                               std::shared_ptr<const std::vector<double>> phase, const FrameGrid& grid) {
  if (c.shape().size() != 2) throw ShapeError("oscillator: c must be [frames x K], got " + ad::to_string(c.shape()));
  const std::size_t frames = c.shape()[0], K = c.shape()[1], u = grid.frame_size;
  if (a.size() != frames || a_tilde.size() != frames || c_tilde.shape() != c.shape())
    throw ShapeError("oscillator: control shapes disagree: a " + ad::to_string(a.shape()) + ", c " +
                     ad::to_string(c.shape()) + ", c_tilde " + ad::to_string(c_tilde.shape()));
  if (phase->size() != frames * u) throw ShapeError("oscillator: phase length does not match frames * u");

  std::vector<T> out(frames * u);
  {
    auto av = a.value(), atv = a_tilde.value(), cv = c.value(), ctv = c_tilde.value();
    detail::for_each_sample(frames, u, [&](std::size_t n, std::size_t j0, std::size_t j1, double wl, double wt) {
      const std::complex<double> step = std::polar(1.0, (*phase)[n]);
      std::complex<double> z = step;
      double sin_sum = 0.0, cos_sum = 0.0;
      const T* c0 = cv.data() + j0 * K;
      const T* c1 = cv.data() + j1 * K;
      const T* ct0 = ctv.data() + j0 * K;
      const T* ct1 = ctv.data() + j1 * K;
      for (std::size_t k = 0; k < K; ++k) {
        sin_sum += (wl * c0[k] + wt * c1[k]) * z.imag();
        cos_sum += (wl * ct0[k] + wt * ct1[k]) * z.real();
        z *= step;
      }
      const double amp_s = wl * av[j0] + wt * av[j1];
      const double amp_c = wl * atv[j0] + wt * atv[j1];
      out[n] = static_cast<T>(amp_s * sin_sum + amp_c * cos_sum);
    });
  }

  return a.tape().record(
      {frames * u}, std::move(out), {a, c, a_tilde, c_tilde},
      [a, c, a_tilde, c_tilde, phase, frames, K, u](ad::Tape<T>& t, std::size_t self) {
        auto g = t.out_grad(self);
        auto av = a.value(), atv = a_tilde.value(), cv = c.value(), ctv = c_tilde.value();
        auto ga = t.grad_buffer(a);
        auto gat = t.grad_buffer(a_tilde);
        auto gc = t.grad_buffer(c);
        auto gct = t.grad_buffer(c_tilde);
        std::vector<double> sines(K), cosines(K);
        detail::for_each_sample(frames, u, [&](std::size_t n, std::size_t j0, std::size_t j1, double wl, double wt) {
          const double gn = static_cast<double>(g[n]);
          if (gn == 0.0) return;
          const std::complex<double> step = std::polar(1.0, (*phase)[n]);
          std::complex<double> z = step;
          double sin_sum = 0.0, cos_sum = 0.0;
          for (std::size_t k = 0; k < K; ++k) {
            sines[k] = z.imag();
            cosines[k] = z.real();
            sin_sum += (wl * cv[j0 * K + k] + wt * cv[j1 * K + k]) * sines[k];
            cos_sum += (wl * ctv[j0 * K + k] + wt * ctv[j1 * K + k]) * cosines[k];
            z *= step;
          }
          if (!ga.empty()) {
            ga[j0] += static_cast<T>(wl * gn * sin_sum);
            ga[j1] += static_cast<T>(wt * gn * sin_sum);
          }
          if (!gat.empty()) {
            gat[j0] += static_cast<T>(wl * gn * cos_sum);
            gat[j1] += static_cast<T>(wt * gn * cos_sum);
          }
          if (!gc.empty()) {
            const double amp = gn * (wl * av[j0] + wt * av[j1]);
            for (std::size_t k = 0; k < K; ++k) {
              gc[j0 * K + k] += static_cast<T>(wl * amp * sines[k]);
              gc[j1 * K + k] += static_cast<T>(wt * amp * sines[k]);
            }
          }
          if (!gct.empty()) {
            const double amp = gn * (wl * atv[j0] + wt * atv[j1]);
            for (std::size_t k = 0; k < K; ++k) {
              gct[j0 * K + k] += static_cast<T>(wl * amp * cosines[k]);
              gct[j1 * K + k] += static_cast<T>(wt * amp * cosines[k]);
            }
          }
        });
      },
      "harmonic_oscillator");
}

/// Harmonic branch on plain controls.
inline AudioBuffer oscillator_bank(const SynthControls<float>& controls, const FrameGrid& grid = {}) {
  validate_controls(controls);
  const std::size_t F = controls.frames(), K = controls.harmonics;
  auto phase = std::make_shared<const std::vector<double>>(fundamental_phase<float>(controls.f0_hz, grid));
  ad::Tape<float> tape;
  auto out = harmonic_oscillator<float>(tape.leaf_view({F}, controls.a, false), tape.leaf_view({F, K}, controls.c, false),
                                        tape.leaf_view({F}, controls.a_tilde, false),
                                        tape.leaf_view({F, K}, controls.c_tilde, false), phase, grid);
  AudioBuffer buf;
  buf.samples.assign(out.value().begin(), out.value().end());
  buf.sample_rate_hz = grid.sample_rate_hz();
  buf.source = "harmonic";
  return buf;
}

}  // namespace ddsp::synth
