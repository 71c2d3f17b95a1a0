#pragma once

// Corpus-free test utterance: band-limited vibrato sawtooth with short white
// noise bursts, slow sinusoidal pseudo-EMA and true F0/loudness tracks.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>

#include "ddsp/io/dataset.hpp"

namespace ddsp::io {

struct SyntheticSpec {
  double seconds = 2.0;
  double f0_hz = 140.0;
  double vibrato_hz = 5.0;
  double vibrato_depth_hz = 12.0;
  double amplitude = 0.3;
  double burst_amplitude = 0.15;
  std::size_t bursts = 4;
  double burst_seconds = 0.05;
  std::size_t max_partials = 0;  // 0: every partial below Nyquist
};

inline UtteranceRecord synthetic_utterance(const SyntheticSpec& sp, std::uint64_t seed, std::string id = "synthetic") {
  const FrameGrid grid;
  const std::size_t frames = static_cast<std::size_t>(std::llround(sp.seconds * kFrameRateHz));
  if (frames == 0) throw InvalidArgument("synthetic_utterance: duration below one frame");
  const std::size_t n = frames * grid.frame_size;
  const double fs = kSampleRateHz, two_pi = 2.0 * std::numbers::pi;
  std::mt19937_64 rng(seed);

  AudioBuffer audio;
  audio.source = id;
  audio.samples.assign(n, 0.0f);
  encoder::ControlTrack track;
  track.f0_hz.resize(frames);
  for (std::size_t f = 0; f < frames; ++f) {
    const double t = static_cast<double>(f) / kFrameRateHz;
    track.f0_hz[f] = static_cast<float>(sp.f0_hz + sp.vibrato_depth_hz * std::sin(two_pi * sp.vibrato_hz * t));
  }
  // Sawtooth as 1/k partials below Nyquist of the instantaneous F0.
  double phase = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / fs;
    const double f0 = sp.f0_hz + sp.vibrato_depth_hz * std::sin(two_pi * sp.vibrato_hz * t);
    phase = std::fmod(phase + two_pi * f0 / fs, two_pi);
    double v = 0.0;
    for (std::size_t k = 1; k * f0 < fs / 2 && (sp.max_partials == 0 || k <= sp.max_partials); ++k)
      v += std::sin(static_cast<double>(k) * phase) / static_cast<double>(k);
    audio.samples[i] = static_cast<float>(sp.amplitude * (2.0 / std::numbers::pi) * v);
  }
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const auto burst = static_cast<std::size_t>(sp.burst_seconds * fs);
  for (std::size_t b = 0; b < sp.bursts; ++b) {
    const std::size_t start = (2 * b + 1) * n / (2 * sp.bursts + 1);
    for (std::size_t i = start; i < std::min(n, start + burst); ++i)
      audio.samples[i] += static_cast<float>(sp.burst_amplitude * u(rng));
  }
  track.loudness = extract_loudness(audio, grid);
  track.ema.resize(frames * encoder::kEmaChannels);
  for (std::size_t c = 0; c < encoder::kEmaChannels; ++c) {
    const double hz = 0.5 + 0.25 * static_cast<double>(c), ph = two_pi * (u(rng) + 1.0) / 2.0;
    for (std::size_t f = 0; f < frames; ++f)
      track.ema[f * encoder::kEmaChannels + c] =
          static_cast<float>(std::sin(two_pi * hz * static_cast<double>(f) / kFrameRateHz + ph));
  }
  return make_record(std::move(id), std::move(audio), std::move(track), grid);
}

}  // namespace ddsp::io
