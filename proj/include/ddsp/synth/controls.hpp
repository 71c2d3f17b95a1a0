#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ddsp/autodiff/ops.hpp"
#include "ddsp/core/dsp.hpp"

namespace ddsp::synth {

/// Logit written into harmonics above Nyquist; exp() of it underflows to 0.
inline constexpr double kMaskedLogit = -1e20;

/// Per-frame generator controls at the 200 Hz control rate.
/// c and c_tilde are [frames x harmonics], H is [frames x bands].
template <class T = float>
struct SynthControls {
  std::vector<T> a;
  std::vector<T> a_tilde;
  std::vector<T> c;
  std::vector<T> c_tilde;
  std::vector<T> H;
  std::vector<T> f0_hz;
  std::size_t harmonics = 0;
  std::size_t bands = 0;

  std::size_t frames() const { return a.size(); }
};

/// Same controls held as tape nodes; f0 stays a plain constant.
template <class T>
struct ControlVars {
  ad::Var<T> a;        // [F]
  ad::Var<T> c;        // [F x K]
  ad::Var<T> a_tilde;  // [F]
  ad::Var<T> c_tilde;  // [F x K]
  ad::Var<T> H;        // [F x M]
  std::vector<T> f0_hz;
};

/// Per-frame generator outputs, each frames * u samples.
struct DecomposedAudio {
  AudioBuffer harmonic;
  AudioBuffer noise;
  AudioBuffer mixed_pre_post;
  AudioBuffer final;
};

/// 1 where harmonic k (1-based) of frame t lies strictly above Nyquist.
template <class T>
std::vector<unsigned char> nyquist_mask(std::span<const T> f0_hz, std::size_t harmonics,
                                        int sample_rate_hz = kSampleRateHz) {
  const double nyquist = 0.5 * sample_rate_hz;
  std::vector<unsigned char> mask(f0_hz.size() * harmonics, 0);
  for (std::size_t t = 0; t < f0_hz.size(); ++t) {
    const double f0 = static_cast<double>(f0_hz[t]);
    for (std::size_t k = 0; k < harmonics; ++k)
      mask[t * harmonics + k] = static_cast<double>(k + 1) * f0 > nyquist ? 1 : 0;
  }
  return mask;
}

/// Writes kMaskedLogit into logits of harmonics above Nyquist.
template <class T>
std::vector<T> mask_above_nyquist(std::span<const T> logits, std::span<const T> f0_hz,
                                  int sample_rate_hz = kSampleRateHz) {
  if (f0_hz.empty() || logits.size() % f0_hz.size() != 0)
    throw InvalidArgument("mask_above_nyquist: logits are not [frames x K]");
  const std::size_t k = logits.size() / f0_hz.size();
  const auto mask = nyquist_mask(f0_hz, k, sample_rate_hz);
  std::vector<T> out(logits.begin(), logits.end());
  for (std::size_t i = 0; i < out.size(); ++i)
    if (mask[i]) out[i] = static_cast<T>(kMaskedLogit);
  return out;
}

template <class T>
ad::Var<T> mask_above_nyquist(ad::Var<T> logits, std::span<const T> f0_hz, int sample_rate_hz = kSampleRateHz) {
  if (logits.shape().size() != 2 || logits.shape()[0] != f0_hz.size())
    throw ShapeError("mask_above_nyquist: logits " + ad::to_string(logits.shape()) + " vs " +
                     std::to_string(f0_hz.size()) + " frames");
  const auto mask = nyquist_mask(f0_hz, logits.shape()[1], sample_rate_hz);
  return ad::masked_fill(logits, std::span<const unsigned char>(mask), static_cast<T>(kMaskedLogit));
}

/// Throws if the controls break the generator's input contract.
template <class T>
void validate_controls(const SynthControls<T>& s) {
  const std::size_t f = s.frames();
  if (f == 0) throw InvalidArgument("synth controls: no frames");
  if (s.harmonics == 0) throw InvalidArgument("synth controls: K must be >= 1");
  if (s.a_tilde.size() != f || s.f0_hz.size() != f || s.c.size() != f * s.harmonics ||
      s.c_tilde.size() != f * s.harmonics || (s.bands != 0 && s.H.size() != f * s.bands))
    throw ShapeError("synth controls: per-frame arrays disagree on frame count");
  for (T v : s.f0_hz)
    if (!(v >= T(0))) throw InvalidArgument("synth controls: negative or NaN f0");
  auto check_dist = [&](const std::vector<T>& dist, const char* name) {
    for (std::size_t t = 0; t < f; ++t) {
      double total = 0.0;
      for (std::size_t k = 0; k < s.harmonics; ++k) {
        const T v = dist[t * s.harmonics + k];
        if (!(v >= T(0))) throw ContractViolation(std::string(name) + ": negative harmonic weight");
        total += static_cast<double>(v);
      }
      // A frame whose every harmonic is above Nyquist carries an all-zero row.
      if (std::abs(total - 1.0) > 1e-4 && total != 0.0)
        throw ContractViolation(std::string(name) + ": row " + std::to_string(t) + " sums to " +
                                std::to_string(total));
    }
  };
  check_dist(s.c, "c");
  check_dist(s.c_tilde, "c_tilde");
}

}  // namespace ddsp::synth
