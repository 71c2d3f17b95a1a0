#pragma once

// Deterministic signal primitives shared by the generator, the losses and
// feature extraction. Public buffers are float; accumulation is double.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "ddsp/core/fft.hpp"
#include "ddsp/errors.hpp"

namespace ddsp {

inline constexpr int kSampleRateHz = 16000;
inline constexpr int kFrameRateHz = 200;
inline constexpr std::size_t kFrameSize = 80;

/// Mono waveform at 16 kHz.
struct AudioBuffer {
  std::vector<float> samples;
  int sample_rate_hz = kSampleRateHz;
  std::string source;  // where the samples came from, for diagnostics

  std::size_t size() const { return samples.size(); }
  double seconds() const { return static_cast<double>(samples.size()) / sample_rate_hz; }
};

/// Control-rate / audio-rate relationship. frame_size * frame_rate == sample rate.
struct FrameGrid {
  int frame_rate_hz = kFrameRateHz;
  std::size_t frame_size = kFrameSize;

  int sample_rate_hz() const { return frame_rate_hz * static_cast<int>(frame_size); }
  std::size_t samples_for(std::size_t frames) const { return frames * frame_size; }
};

/// Magnitude STFT, row-major [frames x bins], bins = fft_size / 2 + 1.
template <class T = float>
struct Spectrogram {
  std::vector<T> magnitudes;
  std::size_t frames = 0;
  std::size_t fft_size = 0;
  std::size_t hop = 0;

  std::size_t bins() const { return fft_size / 2 + 1; }
  T at(std::size_t frame, std::size_t bin) const { return magnitudes[frame * bins() + bin]; }
};

template <class T>
bool all_finite(std::span<const T> v) {
  return std::all_of(v.begin(), v.end(), [](T x) { return std::isfinite(x); });
}

/// Symmetric Hann window, w[m] = 0.5 (1 - cos(2 pi m / (length - 1))).
inline std::vector<double> hann_window(std::size_t length) {
  if (length == 0) throw InvalidArgument("hann_window: length must be >= 1");
  std::vector<double> w(length, 1.0);
  if (length == 1) return w;
  const double denom = static_cast<double>(length - 1);
  for (std::size_t m = 0; m < length; ++m)
    w[m] = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(m) / denom));
  return w;
}

/// Periodic Hann of the given length: the first `length` samples of
/// hann_window(length + 1). Symmetric about length / 2.
inline std::vector<double> periodic_hann_window(std::size_t length) {
  auto w = hann_window(length + 1);
  w.pop_back();
  return w;
}

inline double exp_sigmoid(double x) {
  const double s = 1.0 / (1.0 + std::exp(-x));
  return 2.0 * std::pow(s, std::log(10.0)) + 1e-7;
}

namespace detail {

// Frame that contributes to the right half of the last frame's interval:
// reflect about the final frame, falling back to the edge when there is only one.
inline std::size_t reflect_next(std::size_t frames) { return frames >= 2 ? frames - 2 : 0; }

}  // namespace detail

/// Time-aligned weights of the 2u+1 Hann interpolation kernel.
/// Sample n = j*u + d (0 <= d < u) takes track[j] * lead[d] + track[j+1] * trail[d].
struct UpsampleKernel {
  std::vector<double> lead;
  std::vector<double> trail;

  explicit UpsampleKernel(std::size_t u) : lead(u), trail(u) {
    const auto w = hann_window(2 * u + 1);
    for (std::size_t d = 0; d < u; ++d) {
      lead[d] = w[u + d];
      trail[d] = w[d];
    }
  }
};

/// Zero-stuff by u and convolve with a Hann window of length 2u+1, with frame n
/// landing on sample n*u. The track is reflect-padded by one frame at the end.
/// `channels` > 1 treats the input as row-major [frames x channels]; the output
/// is then [frames*u x channels].
template <class T>
std::vector<T> upsample_control(std::span<const T> track, const FrameGrid& grid,
                                std::size_t channels = 1) {
  if (track.empty()) throw InvalidArgument("upsample_control: empty track");
  if (channels == 0 || track.size() % channels != 0)
    throw InvalidArgument("upsample_control: size is not a multiple of the channel count");
  const std::size_t frames = track.size() / channels;
  const std::size_t u = grid.frame_size;
  const UpsampleKernel kernel(u);
  std::vector<T> out(frames * u * channels);
  for (std::size_t j = 0; j < frames; ++j) {
    const std::size_t next = j + 1 < frames ? j + 1 : detail::reflect_next(frames);
    const T* a = track.data() + j * channels;
    const T* b = track.data() + next * channels;
    for (std::size_t d = 0; d < u; ++d) {
      T* o = out.data() + (j * u + d) * channels;
      const double wl = kernel.lead[d], wt = kernel.trail[d];
      for (std::size_t c = 0; c < channels; ++c)
        o[c] = static_cast<T>(wl * static_cast<double>(a[c]) + wt * static_cast<double>(b[c]));
    }
  }
  return out;
}

/// Transpose of upsample_control: maps an audio-rate gradient back to frames.
template <class T>
std::vector<T> upsample_control_adjoint(std::span<const T> grad, std::size_t frames,
                                        const FrameGrid& grid, std::size_t channels = 1) {
  const std::size_t u = grid.frame_size;
  if (grad.size() != frames * u * channels)
    throw InvalidArgument("upsample_control_adjoint: gradient length mismatch");
  const UpsampleKernel kernel(u);
  std::vector<double> acc(frames * channels, 0.0);
  for (std::size_t j = 0; j < frames; ++j) {
    const std::size_t next = j + 1 < frames ? j + 1 : detail::reflect_next(frames);
    double* a = acc.data() + j * channels;
    double* b = acc.data() + next * channels;
    for (std::size_t d = 0; d < u; ++d) {
      const T* g = grad.data() + (j * u + d) * channels;
      const double wl = kernel.lead[d], wt = kernel.trail[d];
      for (std::size_t c = 0; c < channels; ++c) {
        a[c] += wl * static_cast<double>(g[c]);
        b[c] += wt * static_cast<double>(g[c]);
      }
    }
  }
  return std::vector<T>(acc.begin(), acc.end());
}

/// Full linear convolution through a zero-padded FFT. Length |a| + |b| - 1.
template <class T>
std::vector<T> fft_convolve(std::span<const T> a, std::span<const T> b) {
  if (a.empty() || b.empty()) throw InvalidArgument("fft_convolve: empty input");
  const std::size_t out_len = a.size() + b.size() - 1;
  const std::size_t n = fft::next_pow2(out_len);
  const fft::RealFft plan(n);
  std::vector<double> buf(a.begin(), a.end());
  std::vector<std::complex<double>> fa(plan.bins()), fb(plan.bins());
  plan.forward(buf, fa);
  buf.assign(b.begin(), b.end());
  plan.forward(buf, fb);
  for (std::size_t i = 0; i < fa.size(); ++i) fa[i] *= fb[i];
  std::vector<double> time(n);
  plan.inverse(fa, time);
  std::vector<T> out(out_len);
  const double scale = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < out_len; ++i) out[i] = static_cast<T>(time[i] * scale);
  return out;
}

/// Sum of frames placed every `hop` samples. `frames` is row-major
/// [n_frames x frame_len]; output length (n_frames - 1) * hop + frame_len.
template <class T>
std::vector<T> overlap_add(std::span<const T> frames, std::size_t frame_len, std::size_t hop) {
  if (hop == 0) throw InvalidArgument("overlap_add: hop must be >= 1");
  if (frame_len < hop) throw InvalidArgument("overlap_add: hop exceeds frame length");
  if (frames.empty() || frames.size() % frame_len != 0)
    throw InvalidArgument("overlap_add: frame data is not a whole number of frames");
  const std::size_t n_frames = frames.size() / frame_len;
  std::vector<double> acc((n_frames - 1) * hop + frame_len, 0.0);
  for (std::size_t f = 0; f < n_frames; ++f)
    for (std::size_t i = 0; i < frame_len; ++i)
      acc[f * hop + i] += static_cast<double>(frames[f * frame_len + i]);
  return std::vector<T>(acc.begin(), acc.end());
}

/// Number of STFT frames; the final partial frame is zero-padded.
inline std::size_t stft_frame_count(std::size_t length, std::size_t fft_size, std::size_t hop) {
  if (length <= fft_size) return 1;
  return 1 + (length - fft_size + hop - 1) / hop;
}

inline std::size_t stft_hop(std::size_t fft_size, double overlap) {
  if (!(overlap >= 0.0 && overlap < 1.0)) throw InvalidArgument("stft: overlap must be in [0, 1)");
  const auto hop = static_cast<std::size_t>(std::lround(static_cast<double>(fft_size) * (1.0 - overlap)));
  return std::max<std::size_t>(hop, 1);
}

/// Complex STFT with a periodic Hann analysis window, row-major [frames x bins].
template <class T>
std::vector<std::complex<double>> stft_complex(std::span<const T> x, std::size_t fft_size,
                                               std::size_t hop, std::size_t* frames_out = nullptr) {
  if (!fft::is_pow2(fft_size)) throw InvalidArgument("stft: fft size must be a power of two");
  if (hop == 0) throw InvalidArgument("stft: hop must be >= 1");
  if (x.size() < hop) throw InvalidArgument("stft: audio shorter than one hop");
  const std::size_t frames = stft_frame_count(x.size(), fft_size, hop);
  const std::size_t bins = fft_size / 2 + 1;
  const auto window = periodic_hann_window(fft_size);
  const fft::RealFft plan(fft_size);
  std::vector<std::complex<double>> out(frames * bins);
  std::vector<double> frame(fft_size);
  for (std::size_t f = 0; f < frames; ++f) {
    const std::size_t start = f * hop;
    for (std::size_t i = 0; i < fft_size; ++i) {
      const std::size_t n = start + i;
      frame[i] = n < x.size() ? window[i] * static_cast<double>(x[n]) : 0.0;
    }
    plan.forward(frame, std::span(out).subspan(f * bins, bins));
  }
  if (frames_out) *frames_out = frames;
  return out;
}

template <class T>
Spectrogram<T> stft_magnitude(std::span<const T> x, std::size_t fft_size, std::size_t hop) {
  Spectrogram<T> s;
  const auto spec = stft_complex(x, fft_size, hop, &s.frames);
  s.fft_size = fft_size;
  s.hop = hop;
  s.magnitudes.resize(spec.size());
  for (std::size_t i = 0; i < spec.size(); ++i) s.magnitudes[i] = static_cast<T>(std::abs(spec[i]));
  return s;
}

/// Hann-windowed magnitude STFT with hop = fft_size * (1 - overlap).
inline Spectrogram<float> stft_magnitude(const AudioBuffer& audio, std::size_t fft_size, double overlap) {
  return stft_magnitude<float>(audio.samples, fft_size, stft_hop(fft_size, overlap));
}

}  // namespace ddsp
