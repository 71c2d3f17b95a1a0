#pragma once

// Learnable bias-free FIR applied to the mixed signal, and its frequency response.

#include <algorithm>
#include <cmath>
#include <complex>
#include <span>
#include <vector>

#include "ddsp/autodiff/ops.hpp"
#include "ddsp/core/dsp.hpp"
#include "ddsp/core/fft.hpp"

namespace ddsp::synth {

inline constexpr std::size_t kPostKernelSize = 1025;

/// Centered unit impulse of odd length: the identity filter.
template <class T = float>
std::vector<T> identity_kernel(std::size_t length = kPostKernelSize) {
  std::vector<T> k(length, T(0));
  k[length / 2] = T(1);
  return k;
}

/// Same-length centered convolution y[n] = sum_m k[m] x[n - m + (L-1)/2].
template <class T>
ad::Var<T> post_conv(ad::Var<T> x, ad::Var<T> kernel) {
  const std::size_t n = x.size(), len = kernel.size();
  if (len % 2 == 0) throw InvalidArgument("post filter: kernel length must be odd, got " + std::to_string(len));
  if (n == 0) throw InvalidArgument("post filter: empty input");
  const std::size_t c = len / 2;
  const auto full = fft_convolve<T>(x.value(), kernel.value());
  std::vector<T> out(full.begin() + static_cast<std::ptrdiff_t>(c), full.begin() + static_cast<std::ptrdiff_t>(c + n));
  return x.tape().record(
      {n}, std::move(out), {x, kernel},
      [x, kernel, n, len, c](ad::Tape<T>& t, std::size_t self) {
        auto g = t.out_grad(self);
        auto gx = t.grad_buffer(x);
        auto gk = t.grad_buffer(kernel);
        if (!gx.empty()) {
          auto kv = kernel.value();
          std::vector<T> rk(kv.rbegin(), kv.rend());
          const auto full = fft_convolve<T>(g, rk);
          for (std::size_t i = 0; i < n; ++i) gx[i] += full[i + c];
        }
        if (!gk.empty()) {
          auto xv = x.value();
          std::vector<T> rx(xv.rbegin(), xv.rend());
          const auto full = fft_convolve<T>(g, rx);
          // gk[m] = sum_n g[n] x[n - m + c] = full[n_len - 1 - c + m]
          for (std::size_t m = 0; m < len; ++m) {
            const std::ptrdiff_t idx = static_cast<std::ptrdiff_t>(n) - 1 - static_cast<std::ptrdiff_t>(c) +
                                       static_cast<std::ptrdiff_t>(m);
            if (idx >= 0 && idx < static_cast<std::ptrdiff_t>(full.size())) gk[m] += full[static_cast<std::size_t>(idx)];
          }
        }
      },
      "post_conv");
}

inline AudioBuffer post_filter(const AudioBuffer& mixed, std::span<const float> kernel) {
  if (kernel.size() % 2 == 0)
    throw InvalidArgument("post filter: kernel length must be odd, got " + std::to_string(kernel.size()));
  ad::Tape<float> tape;
  auto y = post_conv<float>(tape.leaf_view({mixed.size()}, mixed.samples, false),
                            tape.leaf_view({kernel.size()}, kernel, false));
  AudioBuffer out;
  out.samples.assign(y.value().begin(), y.value().end());
  out.sample_rate_hz = mixed.sample_rate_hz;
  out.source = "post_filter";
  return out;
}

/// |K(e^{i w})| at n_points frequencies w_i = pi i / (n_points - 1), i.e.
/// spanning [0, pi] inclusive. The kernel is folded modulo 2(n_points - 1),
/// which samples its DTFT exactly at those frequencies.
template <class T>
std::vector<double> filter_frequency_response(std::span<const T> kernel, std::size_t n_points) {
  if (n_points < 2) throw InvalidArgument("filter response: n_points must be >= 2");
  if (kernel.empty()) throw InvalidArgument("filter response: empty kernel");
  const std::size_t n = 2 * (n_points - 1);
  std::vector<double> folded(n, 0.0);
  for (std::size_t i = 0; i < kernel.size(); ++i) folded[i % n] += static_cast<double>(kernel[i]);
  const fft::RealFft plan(n);
  std::vector<std::complex<double>> spec(plan.bins());
  plan.forward(folded, spec);
  std::vector<double> mag(n_points);
  for (std::size_t i = 0; i < n_points; ++i) mag[i] = std::abs(spec[i]);
  return mag;
}

}  // namespace ddsp::synth
