#pragma once

// Filtered-noise branch: one linear-phase FIR per frame, designed from the
// frame's M-band magnitude response, applied to a fresh uniform noise frame
// and overlap-added with hop u.

#include <cmath>
#include <complex>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "ddsp/autodiff/ops.hpp"
#include "ddsp/core/dsp.hpp"
#include "ddsp/core/fft.hpp"

namespace ddsp::synth {

/// Impulse-response length for an M-band response: 2 (M - 1).
inline std::size_t noise_ir_length(std::size_t bands) { return 2 * (bands - 1); }

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Counter-based uniform [-1, 1) stream. Each frame index is an independent
/// substream, so frames can be generated in any order.
class NoiseStream {
 public:
  explicit NoiseStream(std::uint64_t seed) : key_(splitmix64(seed ^ 0x6E6F697365ULL)) {}

  double at(std::uint64_t frame, std::uint64_t index) const {
    const std::uint64_t bits = splitmix64(splitmix64(key_ + frame) ^ (index * 0xD1B54A32D192ED03ULL));
    return static_cast<double>(bits >> 11) * 0x1.0p-52 - 1.0;
  }

  template <class T>
  std::vector<T> frames(std::size_t n_frames, std::size_t frame_len) const {
    std::vector<T> out(n_frames * frame_len);
    for (std::size_t f = 0; f < n_frames; ++f)
      for (std::size_t i = 0; i < frame_len; ++i) out[f * frame_len + i] = static_cast<T>(at(f, i));
    return out;
  }

 private:
  std::uint64_t key_;
};

/// Zero-phase IR of one frame: the M bands are half of a real symmetric
/// spectrum of size 2(M-1); inverse FFT gives symmetric coefficients.
inline std::vector<double> zero_phase_ir(std::span<const double> bands) {
  const std::size_t n = noise_ir_length(bands.size());
  const fft::RealFft plan(n);
  std::vector<std::complex<double>> spec(bands.begin(), bands.end());
  std::vector<double> ir(n);
  plan.inverse(spec, ir);
  for (auto& v : ir) v /= static_cast<double>(n);
  return ir;
}

/// Causal linear-phase IR: zero-phase IR rotated by M-1 samples, tapered by a
/// periodic Hann window (symmetric about the same center), scaled by gamma.
inline std::vector<double> causal_windowed_ir(std::span<const double> bands, double gamma) {
  const auto zp = zero_phase_ir(bands);
  const std::size_t n = zp.size(), half = n / 2;
  const auto window = periodic_hann_window(n);
  std::vector<double> h(n);
  for (std::size_t i = 0; i < n; ++i) h[i] = gamma * window[i] * zp[(i + half) % n];
  return h;
}

/// The whole band-to-IR design as a fixed [2(M-1) x M] real matrix, built by
/// pushing each unit band through causal_windowed_ir.
template <class T>
std::shared_ptr<const ad::Tensor<T>> noise_filter_matrix(std::size_t bands, double gamma) {
  if (bands < 2) throw InvalidArgument("noise filter: M must be >= 2");
  const std::size_t n = noise_ir_length(bands);
  std::vector<T> m(n * bands);
  std::vector<double> unit(bands, 0.0);
  for (std::size_t b = 0; b < bands; ++b) {
    unit.assign(bands, 0.0);
    unit[b] = 1.0;
    const auto col = causal_windowed_ir(unit, gamma);
    for (std::size_t i = 0; i < n; ++i) m[i * bands + b] = static_cast<T>(col[i]);
  }
  return std::make_shared<const ad::Tensor<T>>(ad::Shape{n, bands}, std::move(m));
}

/// Convolves frame f of h ([F x N]) with noise frame f ([F x u]), overlap-adds
/// with hop u and truncates to F * u samples. Linear in h.
template <class T>
ad::Var<T> frame_convolve_ola(ad::Var<T> h, std::shared_ptr<const std::vector<T>> noise, std::size_t u) {
  if (h.shape().size() != 2) throw ShapeError("frame_convolve_ola: h must be [frames x taps]");
  const std::size_t frames = h.shape()[0], taps = h.shape()[1];
  if (noise->size() != frames * u) throw ShapeError("frame_convolve_ola: noise is not [frames x u]");
  const std::size_t out_len = frames * u;
  std::vector<double> acc(out_len, 0.0);
  auto hv = h.value();
  for (std::size_t f = 0; f < frames; ++f) {
    const auto y = fft_convolve<T>(std::span(noise->data() + f * u, u), hv.subspan(f * taps, taps));
    for (std::size_t i = 0; i < y.size() && f * u + i < out_len; ++i) acc[f * u + i] += static_cast<double>(y[i]);
  }
  return h.tape().record(
      {out_len}, std::vector<T>(acc.begin(), acc.end()), {h},
      [h, noise, u, frames, taps, out_len](ad::Tape<T>& t, std::size_t self) {
        auto g = t.out_grad(self);
        auto gh = t.grad_buffer(h);
        std::vector<T> reversed(u), seg(u + taps - 1);
        for (std::size_t f = 0; f < frames; ++f) {
          for (std::size_t i = 0; i < u; ++i) reversed[i] = (*noise)[f * u + u - 1 - i];
          for (std::size_t i = 0; i < seg.size(); ++i) seg[i] = f * u + i < out_len ? g[f * u + i] : T(0);
          // corr[m] = sum_i noise[i] g[f u + i + m] = conv(reversed, seg)[m + u - 1]
          const auto corr = fft_convolve<T>(reversed, seg);
          for (std::size_t m = 0; m < taps; ++m) gh[f * taps + m] += corr[m + u - 1];
        }
      },
      "frame_convolve_ola");
}

/// Differentiable noise branch: H [F x M] -> [F * u].
template <class T>
ad::Var<T> filtered_noise(ad::Var<T> H, double gamma, std::uint64_t seed, const FrameGrid& grid) {
  if (!(gamma > 0.0)) throw InvalidArgument("noise filter: gamma must be > 0");
  if (H.shape().size() != 2) throw ShapeError("noise filter: H must be [frames x M]");
  const std::size_t frames = H.shape()[0], bands = H.shape()[1];
  auto design = noise_filter_matrix<T>(bands, gamma);
  auto h = ad::fft_linear(H, design);
  auto noise = std::make_shared<const std::vector<T>>(NoiseStream(seed).frames<T>(frames, grid.frame_size));
  return frame_convolve_ola(h, noise, grid.frame_size);
}

/// Noise branch on plain values; designs each frame's IR directly by inverse FFT.
inline AudioBuffer noise_filter_bank(std::span<const float> H, std::size_t bands, const FrameGrid& grid,
                                     double gamma, std::uint64_t seed) {
  if (!(gamma > 0.0)) throw InvalidArgument("noise filter: gamma must be > 0");
  if (bands < 2) throw InvalidArgument("noise filter: M must be >= 2");
  if (H.empty() || H.size() % bands != 0) throw ShapeError("noise filter: H is not [frames x M]");
  for (float v : H)
    if (!(v >= 0.0f)) throw InvalidArgument("noise filter: H must be nonnegative");
  const std::size_t frames = H.size() / bands, u = grid.frame_size, taps = noise_ir_length(bands);
  const NoiseStream stream(seed);
  std::vector<double> acc(frames * u, 0.0);
  std::vector<double> row(bands), noise(u);
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t b = 0; b < bands; ++b) row[b] = H[f * bands + b];
    const auto h = causal_windowed_ir(row, gamma);
    for (std::size_t i = 0; i < u; ++i) noise[i] = stream.at(f, i);
    const auto y = fft_convolve<double>(noise, h);
    for (std::size_t i = 0; i < u + taps - 1 && f * u + i < acc.size(); ++i) acc[f * u + i] += y[i];
  }
  AudioBuffer out;
  out.samples.assign(acc.begin(), acc.end());
  out.sample_rate_hz = grid.sample_rate_hz();
  out.source = "noise";
  return out;
}

}  // namespace ddsp::synth
