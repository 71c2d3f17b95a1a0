#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ddsp/encoder/encoder.hpp"
#include "ddsp/io/features.hpp"
#include "ddsp/io/wav.hpp"

namespace ddsp::io {

/// Per-frame max |x| over [t*u, (t+1)*u); trailing partial frame dropped.
inline std::vector<float> extract_loudness(const AudioBuffer& audio, const FrameGrid& grid = {}) {
  const std::size_t u = grid.frame_size;
  if (audio.size() < u)
    throw InvalidArgument("extract_loudness: " + std::to_string(audio.size()) + " samples is shorter than one frame");
  std::vector<float> out(audio.size() / u, 0.0f);
  for (std::size_t t = 0; t < out.size(); ++t)
    for (std::size_t i = 0; i < u; ++i) out[t] = std::max(out[t], std::abs(audio.samples[t * u + i]));
  return out;
}

enum class Split { train, val, test };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

struct UtteranceRecord {
  std::string id;
  AudioBuffer audio;
  encoder::ControlTrack track;
  Split split = Split::train;

  std::size_t frames() const { return track.frames(); }
};

/// Truncates audio and track to the shorter duration in whole frames.
inline UtteranceRecord make_record(std::string id, AudioBuffer audio, encoder::ControlTrack track,
                                   const FrameGrid& grid = {}) {
  track.validate();
  const std::size_t u = grid.frame_size;
  const std::size_t frames = std::min(audio.size() / u, track.frames());
  if (frames == 0) throw InvalidArgument("utterance " + id + ": shorter than one frame");
  audio.samples.resize(frames * u);
  track.ema.resize(frames * encoder::kEmaChannels);
  track.f0_hz.resize(frames);
  track.loudness.resize(frames);
  return {std::move(id), std::move(audio), std::move(track), Split::train};
}

struct Crop {
  encoder::ControlTrack track;
  AudioBuffer audio;
  std::size_t offset = 0;
};

/// Uniform frame offset in [0, frames - crop]. nullopt when the utterance is
/// shorter than the crop.
inline std::optional<Crop> align_and_crop(const UtteranceRecord& rec, std::size_t crop_frames, std::uint64_t seed,
                                          const FrameGrid& grid = {}) {
  if (crop_frames == 0) throw InvalidArgument("align_and_crop: crop must be at least one frame");
  const std::size_t f = rec.frames(), u = grid.frame_size;
  if (rec.audio.size() != f * u)
    throw ContractViolation("align_and_crop: record " + rec.id + " is not frame aligned");
  if (crop_frames > f) return std::nullopt;
  std::mt19937_64 rng(seed);
  const std::size_t o = std::uniform_int_distribution<std::size_t>(0, f - crop_frames)(rng);
  Crop c;
  c.offset = o;
  const auto& t = rec.track;
  const auto e = static_cast<std::ptrdiff_t>(encoder::kEmaChannels);
  const auto so = static_cast<std::ptrdiff_t>(o), sc = static_cast<std::ptrdiff_t>(crop_frames);
  c.track.ema.assign(t.ema.begin() + so * e, t.ema.begin() + (so + sc) * e);
  c.track.f0_hz.assign(t.f0_hz.begin() + so, t.f0_hz.begin() + so + sc);
  c.track.loudness.assign(t.loudness.begin() + so, t.loudness.begin() + so + sc);
  c.audio.sample_rate_hz = rec.audio.sample_rate_hz;
  c.audio.source = rec.id;
  const auto su = static_cast<std::ptrdiff_t>(u);
  c.audio.samples.assign(rec.audio.samples.begin() + so * su, rec.audio.samples.begin() + (so + sc) * su);
  return c;
}

struct SplitRatios {
  double train = 0.9, val = 0.05, test = 0.05;
};

/// Deterministic shuffled partition; split sizes are round(n * train),
/// round(n * val) and the remainder.
inline std::vector<Split> split_dataset(const std::vector<std::string>& ids, SplitRatios r, std::uint64_t seed) {
  if (ids.empty()) throw InvalidArgument("split_dataset: no ids");
  if (r.train < 0 || r.val < 0 || r.test < 0 || std::abs(r.train + r.val + r.test - 1.0) > 1e-9)
    throw InvalidArgument("split_dataset: ratios must be non-negative and sum to 1");
  const std::size_t n = ids.size();
  const auto n_train = std::min(n, static_cast<std::size_t>(std::llround(static_cast<double>(n) * r.train)));
  const auto n_val = std::min(n - n_train, static_cast<std::size_t>(std::llround(static_cast<double>(n) * r.val)));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<Split> out(n, Split::test);
  for (std::size_t i = 0; i < n; ++i) {
    if (i < n_train) out[order[i]] = Split::train;
    else if (i < n_train + n_val) out[order[i]] = Split::val;
  }
  return out;
}

struct ManifestEntry {
  std::string id;
  std::string wav_path;
  std::string feat_path;
};

/// `id<TAB>wav<TAB>features` lines; blank lines skipped; relative paths
/// resolve against the manifest's directory.
inline std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(path + ": cannot open manifest");
  const auto base = std::filesystem::path(path).parent_path();
  auto resolve = [&](const std::string& p) {
    const std::filesystem::path fp(p);
    return fp.is_absolute() ? p : (base / fp).string();
  };
  std::vector<ManifestEntry> out;
  std::string line;
  for (std::size_t no = 1; std::getline(in, line); ++no) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::size_t start = 0;
    for (std::size_t tab; (tab = line.find('\t', start)) != std::string::npos; start = tab + 1)
      cols.push_back(line.substr(start, tab - start));
    cols.push_back(line.substr(start));
    if (cols.size() != 3 || cols[0].empty())
      throw FormatError(path + ":" + std::to_string(no) + ": expected id<TAB>wav<TAB>features");
    out.push_back({cols[0], resolve(cols[1]), resolve(cols[2])});
  }
  if (out.empty()) throw FormatError(path + ": manifest has no entries");
  return out;
}

/// Per-channel z-score of EMA coordinates.
struct EmaNorm {
  std::vector<float> mean = std::vector<float>(encoder::kEmaChannels, 0.0f);
  std::vector<float> stdev = std::vector<float>(encoder::kEmaChannels, 1.0f);

  static EmaNorm fit(const std::vector<const encoder::ControlTrack*>& tracks) {
    std::vector<double> s(encoder::kEmaChannels, 0.0), s2(encoder::kEmaChannels, 0.0);
    double n = 0;
    for (const auto* t : tracks) {
      for (std::size_t f = 0; f < t->frames(); ++f)
        for (std::size_t c = 0; c < encoder::kEmaChannels; ++c) {
          const double v = t->ema[f * encoder::kEmaChannels + c];
          s[c] += v;
          s2[c] += v * v;
        }
      n += static_cast<double>(t->frames());
    }
    EmaNorm e;
    if (n == 0) return e;
    for (std::size_t c = 0; c < encoder::kEmaChannels; ++c) {
      const double m = s[c] / n;
      const double var = std::max(0.0, s2[c] / n - m * m);
      e.mean[c] = static_cast<float>(m);
      // A constant channel is centered but not scaled.
      e.stdev[c] = var > 1e-12 ? static_cast<float>(std::sqrt(var)) : 1.0f;
    }
    return e;
  }

  void apply(encoder::ControlTrack& t) const {
    for (std::size_t f = 0; f < t.frames(); ++f)
      for (std::size_t c = 0; c < encoder::kEmaChannels; ++c) {
        float& v = t.ema[f * encoder::kEmaChannels + c];
        v = (v - mean[c]) / stdev[c];
      }
  }

  void store(encoder::WeightSet& aux) const {
    aux.tensors.insert_or_assign("ema_mean", ad::Tensor<float>({encoder::kEmaChannels}, mean));
    aux.tensors.insert_or_assign("ema_std", ad::Tensor<float>({encoder::kEmaChannels}, stdev));
  }

  /// Identity normalization when the checkpoint carries none.
  static EmaNorm load(const encoder::WeightSet& aux) {
    EmaNorm e;
    if (aux.contains("ema_mean") && aux.contains("ema_std")) {
      e.mean = aux.at("ema_mean").data;
      e.stdev = aux.at("ema_std").data;
      if (e.mean.size() != encoder::kEmaChannels || e.stdev.size() != encoder::kEmaChannels)
        throw ConfigError("checkpoint: EMA normalization has wrong channel count");
    }
    return e;
  }
};

/// Loads every manifest entry (WAV + combined 14-channel features).
inline std::vector<UtteranceRecord> load_dataset(const std::string& manifest_path) {
  std::vector<UtteranceRecord> out;
  for (const auto& e : read_manifest(manifest_path)) {
    auto audio = read_wav(e.wav_path);
    auto track = split_features(read_features(e.feat_path), e.feat_path);
    out.push_back(make_record(e.id, std::move(audio), std::move(track)));
  }
  return out;
}

}  // namespace ddsp::io
