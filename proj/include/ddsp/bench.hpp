#pragma once

// Inference timing over random control tracks: encode + synthesize per
// utterance, normalized to seconds of compute per second of input.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "ddsp/encoder/encoder.hpp"
#include "ddsp/synth/generator.hpp"

namespace ddsp::bench {

struct BenchReport {
  std::size_t model_params = 0;
  std::vector<double> input_seconds;
  std::vector<double> mean_per_duration;  // s per 1 s, one entry per input_seconds
  std::vector<double> std_per_duration;
  double mean_s_per_1s = 0;
  double std_s_per_1s = 0;  // pooled within-duration std
  std::size_t repeats = 0;
  int threads = 1;
};

/// min, min + step, ... up to max inclusive (with a half-step tolerance).
inline std::vector<double> duration_grid(double min_s, double max_s, double step_s) {
  if (!(min_s > 0) || !(step_s > 0) || max_s < min_s)
    throw InvalidArgument("bench: need 0 < min <= max and step > 0");
  std::vector<double> out;
  for (std::size_t i = 0;; ++i) {
    const double d = min_s + static_cast<double>(i) * step_s;
    if (d > max_s + 0.5 * step_s) break;
    out.push_back(d);
  }
  return out;
}

/// Voiced random controls of a given frame count.
inline encoder::ControlTrack random_track(std::size_t frames, std::mt19937_64& rng) {
  std::normal_distribution<float> n(0.0f, 1.0f);
  std::uniform_real_distribution<float> f0(80.0f, 250.0f), loud(0.0f, 0.5f);
  encoder::ControlTrack t;
  t.ema.resize(frames * encoder::kEmaChannels);
  for (auto& v : t.ema) v = n(rng);
  t.f0_hz.resize(frames);
  for (auto& v : t.f0_hz) v = f0(rng);
  t.loudness.resize(frames);
  for (auto& v : t.loudness) v = loud(rng);
  return t;
}

inline BenchReport run_bench(const encoder::WeightSet& w, const encoder::EncoderConfig& cfg,
                             const std::vector<double>& seconds, std::size_t repeats, std::uint64_t seed = 0) {
  if (repeats == 0) throw InvalidArgument("bench: repeats must be >= 1");
  if (seconds.empty()) throw InvalidArgument("bench: no durations");
  encoder::check_weights(w, cfg);
  BenchReport r;
  r.model_params = encoder::param_count(w);
  r.input_seconds = seconds;
  r.repeats = repeats;
  std::mt19937_64 rng(seed);
  const auto& kernel = w.at(encoder::names::kPostKernel).data;
  double total = 0, pooled_ss = 0;
  for (double d : seconds) {
    const auto frames = static_cast<std::size_t>(std::llround(d * kFrameRateHz));
    if (frames == 0) throw InvalidArgument("bench: duration below one frame");
    std::vector<double> xs;
    for (std::size_t i = 0; i < repeats; ++i) {
      const auto track = random_track(frames, rng);
      const auto t0 = std::chrono::steady_clock::now();
      const auto controls = encoder::encode(track, w, cfg);
      const auto audio = synth::synthesize(controls, kernel, FrameGrid{}, synth::kDefaultGamma, seed + i);
      const auto t1 = std::chrono::steady_clock::now();
      if (audio.final.size() != frames * kFrameSize) throw ContractViolation("bench: output length");
      xs.push_back(std::chrono::duration<double>(t1 - t0).count() / (static_cast<double>(frames) / kFrameRateHz));
    }
    double m = 0;
    for (double x : xs) m += x;
    m /= static_cast<double>(repeats);
    double ss = 0;
    for (double x : xs) ss += (x - m) * (x - m);
    r.mean_per_duration.push_back(m);
    r.std_per_duration.push_back(std::sqrt(ss / static_cast<double>(repeats)));
    total += m * static_cast<double>(repeats);
    pooled_ss += ss;
  }
  const double n = static_cast<double>(seconds.size() * repeats);
  r.mean_s_per_1s = total / n;
  r.std_s_per_1s = std::sqrt(pooled_ss / n);
  return r;
}

inline std::string to_csv(const BenchReport& r) {
  std::string out = "input_seconds,repeats,mean_s_per_1s,std_s_per_1s\n";
  char buf[160];
  for (std::size_t i = 0; i < r.input_seconds.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.3f,%zu,%.6g,%.6g\n", r.input_seconds[i], r.repeats, r.mean_per_duration[i],
                  r.std_per_duration[i]);
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "all,%zu,%.6g,%.6g\n", r.repeats, r.mean_s_per_1s, r.std_s_per_1s);
  return out + buf;
}

inline std::string summary(const BenchReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "model_params %zu\n"
                "threads %d\n"
                "durations %zu (%.2f s .. %.2f s), repeats %zu\n"
                "mean_s_per_1s %.6f +- %.6f (encode + upsample + synthesize, file I/O excluded)\n"
                "real_time_factor %.4f\n"
                "reference_s_per_1s 0.0368 +- 0.0065\n",
                r.model_params, r.threads, r.input_seconds.size(), r.input_seconds.front(), r.input_seconds.back(),
                r.repeats, r.mean_s_per_1s, r.std_s_per_1s, r.mean_s_per_1s);
  return buf;
}

}  // namespace ddsp::bench
