#pragma once

// Brute-force reference implementations. Deliberately naive and independent of
// the library's FFT-based code paths.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <random>
#include <vector>

namespace oracle {

inline std::vector<double> direct_convolve(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> out(a.size() + b.size() - 1, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) out[i + j] += a[i] * b[j];
  return out;
}

inline std::vector<double> naive_overlap_add(const std::vector<std::vector<double>>& frames, std::size_t hop) {
  const std::size_t len = frames.front().size();
  std::vector<double> out((frames.size() - 1) * hop + len, 0.0);
  for (std::size_t f = 0; f < frames.size(); ++f)
    for (std::size_t i = 0; i < len; ++i) out[f * hop + i] += frames[f][i];
  return out;
}

inline double hann(std::size_t m, std::size_t length) {
  return 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(m) / static_cast<double>(length - 1)));
}

/// Literal zero-stuffing followed by convolution with the 2u+1 Hann window,
/// after reflect-padding one frame on each side.
inline std::vector<double> zero_stuff_upsample(const std::vector<double>& track, std::size_t u) {
  const std::size_t f = track.size();
  std::vector<double> padded;
  padded.push_back(f >= 2 ? track[1] : track[0]);
  padded.insert(padded.end(), track.begin(), track.end());
  padded.push_back(f >= 2 ? track[f - 2] : track[f - 1]);
  std::vector<double> stuffed(padded.size() * u, 0.0);
  for (std::size_t j = 0; j < padded.size(); ++j) stuffed[j * u] = padded[j];
  std::vector<double> window(2 * u + 1);
  for (std::size_t m = 0; m < window.size(); ++m) window[m] = hann(m, window.size());
  const auto conv = direct_convolve(stuffed, window);
  // Padded frame 1 (= track[0]) sits at stuffed index u; the window center adds u more.
  std::vector<double> out(f * u);
  for (std::size_t n = 0; n < out.size(); ++n) out[n] = conv[n + 2 * u];
  return out;
}

/// Same-length centered FIR by direct sums; out-of-range input reads as zero.
inline std::vector<double> direct_post_filter(const std::vector<double>& x, const std::vector<double>& k) {
  const auto n = static_cast<std::ptrdiff_t>(x.size()), c = static_cast<std::ptrdiff_t>(k.size() / 2);
  std::vector<double> y(x.size(), 0.0);
  for (std::ptrdiff_t i = 0; i < n; ++i)
    for (std::ptrdiff_t m = 0; m < static_cast<std::ptrdiff_t>(k.size()); ++m) {
      const std::ptrdiff_t src = i - m + c;
      if (src >= 0 && src < n) y[static_cast<std::size_t>(i)] += k[static_cast<std::size_t>(m)] * x[static_cast<std::size_t>(src)];
    }
  return y;
}

/// Magnitude STFT by explicit DFT sums, frames [frames][bins].
inline std::vector<std::vector<double>> dft_stft_magnitude(const std::vector<double>& x, std::size_t n_fft,
                                                           std::size_t hop) {
  std::size_t frames = 1;
  if (x.size() > n_fft) frames = 1 + (x.size() - n_fft + hop - 1) / hop;
  std::vector<std::vector<double>> out(frames, std::vector<double>(n_fft / 2 + 1));
  std::vector<double> window(n_fft);
  for (std::size_t i = 0; i < n_fft; ++i)
    window[i] = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n_fft)));
  for (std::size_t f = 0; f < frames; ++f)
    for (std::size_t b = 0; b <= n_fft / 2; ++b) {
      std::complex<double> acc = 0.0;
      for (std::size_t i = 0; i < n_fft; ++i) {
        const std::size_t n = f * hop + i;
        if (n >= x.size()) break;
        const double ang = -2.0 * std::numbers::pi * static_cast<double>(b * i) / static_cast<double>(n_fft);
        acc += window[i] * x[n] * std::polar(1.0, ang);
      }
      out[f][b] = std::abs(acc);
    }
  return out;
}

/// |sum_n k[n] e^{-i w n}| at the given frequency.
inline double dtft_magnitude(const std::vector<double>& k, double omega) {
  std::complex<double> acc = 0.0;
  for (std::size_t n = 0; n < k.size(); ++n) acc += k[n] * std::polar(1.0, -omega * static_cast<double>(n));
  return std::abs(acc);
}

inline std::vector<double> random_vector(std::mt19937_64& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

inline double max_abs(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// Power spectrum of a real signal by explicit DFT, bins 0..n/2.
inline std::vector<double> dft_power(const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<double> p(n / 2 + 1);
  for (std::size_t b = 0; b <= n / 2; ++b) {
    std::complex<double> acc = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      acc += x[i] * std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(b * i) / static_cast<double>(n));
    p[b] = std::norm(acc);
  }
  return p;
}

/// Geometric mean / arithmetic mean of a power spectrum (bins with zero power floored).
inline double spectral_flatness(const std::vector<double>& power) {
  double log_sum = 0.0, sum = 0.0;
  for (double p : power) {
    const double v = std::max(p, 1e-30);
    log_sum += std::log(v);
    sum += v;
  }
  const double n = static_cast<double>(power.size());
  return std::exp(log_sum / n) / (sum / n);
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace oracle
