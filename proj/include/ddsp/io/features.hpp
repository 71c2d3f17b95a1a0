#pragma once

// Feature file: "ARTF", u32 version (1), u32 frame rate (200), u32 channels,
// u32 frames, then f32 [frames x channels] row-major.

#include <cstdint>
#include <string>
#include <vector>

#include "ddsp/core/dsp.hpp"
#include "ddsp/encoder/encoder.hpp"
#include "ddsp/io/binary.hpp"

namespace ddsp::io {

inline constexpr std::string_view kFeatureMagic = "ARTF";
inline constexpr std::uint32_t kFeatureVersion = 1;

struct FeatureFile {
  std::size_t channels = 0;
  std::size_t frames = 0;
  std::vector<float> data;  // [frames x channels]

  float at(std::size_t frame, std::size_t channel) const { return data[frame * channels + channel]; }
};

inline bool valid_channel_layout(std::size_t channels) {
  return channels == encoder::kEmaChannels || channels == 1 || channels == encoder::kInputChannels;
}

inline std::vector<char> encode_features(const FeatureFile& f) {
  if (!valid_channel_layout(f.channels))
    throw InvalidArgument("feature file: " + std::to_string(f.channels) + " channels (need 1, 12 or 14)");
  if (f.data.size() != f.channels * f.frames) throw ShapeError("feature file: payload does not match header");
  Writer w;
  w.raw(kFeatureMagic);
  w.u32(kFeatureVersion);
  w.u32(static_cast<std::uint32_t>(kFrameRateHz));
  w.u32(static_cast<std::uint32_t>(f.channels));
  w.u32(static_cast<std::uint32_t>(f.frames));
  w.floats(f.data);
  return w.bytes();
}

inline FeatureFile parse_features(const std::vector<char>& bytes, const std::string& origin) {
  Reader r(bytes, origin);
  r.expect_magic(kFeatureMagic);
  const auto version = r.u32("version");
  if (version != kFeatureVersion) r.fail("version " + std::to_string(version) + " (need 1)");
  const auto rate = r.u32("frame rate");
  if (rate != static_cast<std::uint32_t>(kFrameRateHz))
    throw UnsupportedFormat(origin + ": frame rate " + std::to_string(rate) + " Hz (need 200)");
  FeatureFile f;
  f.channels = r.u32("channel count");
  f.frames = r.u32("frame count");
  if (!valid_channel_layout(f.channels))
    throw UnsupportedFormat(origin + ": " + std::to_string(f.channels) + " channels (need 1, 12 or 14)");
  f.data = r.floats(f.channels * f.frames, "feature payload");
  if (!r.at_end()) r.fail(std::to_string(r.remaining()) + " trailing bytes after payload");
  return f;
}

inline void write_features(const std::string& path, const FeatureFile& f) { write_file(path, encode_features(f)); }
inline FeatureFile read_features(const std::string& path) { return parse_features(read_file(path), path); }

/// Combined 14-channel layout: [ema(12) | f0 | loudness].
inline FeatureFile combine_features(const encoder::ControlTrack& t) {
  t.validate();
  FeatureFile f;
  f.channels = encoder::kInputChannels;
  f.frames = t.frames();
  f.data.reserve(f.channels * f.frames);
  for (std::size_t i = 0; i < f.frames; ++i) {
    for (std::size_t c = 0; c < encoder::kEmaChannels; ++c) f.data.push_back(t.ema[i * encoder::kEmaChannels + c]);
    f.data.push_back(t.f0_hz[i]);
    f.data.push_back(t.loudness[i]);
  }
  return f;
}

inline encoder::ControlTrack split_features(const FeatureFile& f, const std::string& origin = "features") {
  if (f.channels != encoder::kInputChannels)
    throw ConfigError(origin + ": " + std::to_string(f.channels) + " channels, the encoder needs the combined " +
                      std::to_string(encoder::kInputChannels));
  encoder::ControlTrack t;
  for (std::size_t i = 0; i < f.frames; ++i) {
    for (std::size_t c = 0; c < encoder::kEmaChannels; ++c) t.ema.push_back(f.at(i, c));
    const float f0 = f.at(i, encoder::kEmaChannels);
    t.f0_hz.push_back(f0 > 0.0f ? f0 : 0.0f);
    t.loudness.push_back(f.at(i, encoder::kEmaChannels + 1));
  }
  return t;
}

}  // namespace ddsp::io
