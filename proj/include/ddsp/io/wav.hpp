#pragma once

// RIFF/WAVE, PCM 16-bit mono 16 kHz only.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ddsp/core/dsp.hpp"
#include "ddsp/io/binary.hpp"

namespace ddsp::io {

inline AudioBuffer parse_wav(const std::vector<char>& bytes, const std::string& origin) {
  Reader r(bytes, origin);
  r.expect_magic("RIFF");
  r.u32("RIFF size");
  r.expect_magic("WAVE");
  bool have_fmt = false;
  AudioBuffer out;
  out.source = origin;
  while (!r.at_end()) {
    const std::string id = r.raw(4, "chunk id");
    const std::uint32_t size = r.u32("chunk size");
    if (id == "fmt ") {
      if (size < 16) r.fail("fmt chunk of " + std::to_string(size) + " bytes");
      const std::size_t start = r.pos();
      std::uint16_t format = r.u16("audio format");
      const std::uint16_t channels = r.u16("channel count");
      const std::uint32_t rate = r.u32("sample rate");
      r.u32("byte rate");
      r.u16("block align");
      const std::uint16_t bits = r.u16("bits per sample");
      if (format == 0xFFFE && size >= 40) {  // WAVE_FORMAT_EXTENSIBLE: subformat GUID starts with the tag
        r.u16("extension size");
        r.u16("valid bits");
        r.u32("channel mask");
        format = r.u16("subformat");
      }
      r.raw(size - (r.pos() - start), "fmt chunk");
      std::string why;
      if (format != 1) why += " encoding " + std::to_string(format) + " (need PCM)";
      if (channels != 1) why += " channels " + std::to_string(channels) + " (need 1)";
      if (rate != static_cast<std::uint32_t>(kSampleRateHz))
        why += " rate " + std::to_string(rate) + " Hz (need " + std::to_string(kSampleRateHz) + ")";
      if (bits != 16) why += " bits " + std::to_string(bits) + " (need 16)";
      if (!why.empty()) throw UnsupportedFormat(origin + ": unsupported WAV:" + why);
      out.sample_rate_hz = static_cast<int>(rate);
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) r.fail("data chunk before fmt chunk");
      if (size % 2 != 0) r.fail("odd data chunk size for 16-bit samples");
      out.samples.resize(size / 2);
      for (auto& s : out.samples) s = static_cast<float>(static_cast<std::int16_t>(r.u16("sample data"))) / 32768.0f;
      return out;
    } else {
      r.raw(size + (size & 1u), "chunk body");
    }
  }
  r.fail("no data chunk");
}

inline AudioBuffer read_wav(const std::string& path) { return parse_wav(read_file(path), path); }

/// Round-half-away-from-zero to 16-bit, clamped to the representable range.
inline std::int16_t to_pcm16(float s) {
  const double v = std::round(static_cast<double>(s) * 32768.0);
  return static_cast<std::int16_t>(std::clamp(v, -32768.0, 32767.0));
}

inline std::vector<char> encode_wav(const AudioBuffer& audio) {
  if (audio.sample_rate_hz != kSampleRateHz)
    throw UnsupportedFormat("write_wav: sample rate " + std::to_string(audio.sample_rate_hz) + " Hz (need " +
                            std::to_string(kSampleRateHz) + ")");
  const auto data_bytes = static_cast<std::uint32_t>(audio.size() * 2);
  Writer w;
  w.raw("RIFF");
  w.u32(36 + data_bytes);
  w.raw("WAVE");
  w.raw("fmt ");
  w.u32(16);
  w.u16(1);
  w.u16(1);
  w.u32(static_cast<std::uint32_t>(kSampleRateHz));
  w.u32(static_cast<std::uint32_t>(kSampleRateHz) * 2);
  w.u16(2);
  w.u16(16);
  w.raw("data");
  w.u32(data_bytes);
  for (float s : audio.samples) w.pod(to_pcm16(s));
  return w.bytes();
}

inline void write_wav(const std::string& path, const AudioBuffer& audio) { write_file(path, encode_wav(audio)); }

}  // namespace ddsp::io
