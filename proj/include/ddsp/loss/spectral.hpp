#pragma once

// Differentiable magnitude STFT and the multi-scale spectral loss.

#include <complex>
#include <memory>
#include <vector>

#include "ddsp/autodiff/ops.hpp"
#include "ddsp/core/dsp.hpp"
#include "ddsp/core/fft.hpp"

namespace ddsp::loss {

inline constexpr double kLogFloor = 1e-7;

/// x: [L] -> |STFT| as [frames x bins], same framing as ddsp::stft_magnitude.
template <class T>
ad::Var<T> stft_mag(ad::Var<T> x, std::size_t fft_size, std::size_t hop) {
  if (x.shape().size() != 1) throw ShapeError("stft_mag: expected a 1-D signal, got " + ad::to_string(x.shape()));
  std::size_t frames = 0;
  auto spec = std::make_shared<std::vector<std::complex<double>>>(stft_complex<T>(x.value(), fft_size, hop, &frames));
  const std::size_t bins = fft_size / 2 + 1;
  std::vector<T> mag(spec->size());
  for (std::size_t i = 0; i < mag.size(); ++i) mag[i] = static_cast<T>(std::abs((*spec)[i]));
  const std::size_t len = x.size();
  return x.tape().record(
      {frames, bins}, std::move(mag), {x},
      [x, spec, frames, bins, fft_size, hop, len](ad::Tape<T>& t, std::size_t self) {
        auto gx = t.grad_buffer(x);
        const auto g = t.out_grad(self);
        const auto window = periodic_hann_window(fft_size);
        const fft::RealFft plan(fft_size);
        std::vector<std::complex<double>> y(bins);
        std::vector<double> frame(fft_size);
        for (std::size_t f = 0; f < frames; ++f) {
          // d|X_b|/dx_n = Re(X_b / |X_b| * e^{+i w_b n}); the c2r sum counts
          // interior bins twice, so they are halved.
          for (std::size_t b = 0; b < bins; ++b) {
            const auto X = (*spec)[f * bins + b];
            const double m = std::abs(X);
            std::complex<double> v = m > 0.0 ? static_cast<double>(g[f * bins + b]) * X / m : 0.0;
            if (b != 0 && b != bins - 1) v *= 0.5;
            y[b] = v;
          }
          plan.inverse(y, frame);
          const std::size_t start = f * hop;
          for (std::size_t i = 0; i < fft_size && start + i < len; ++i)
            gx[start + i] += static_cast<T>(window[i] * frame[i]);
        }
      },
      "stft_mag");
}

struct MssConfig {
  std::vector<std::size_t> fft_sizes{2048, 1024, 512, 256, 128, 64};
  double overlap = 0.75;
  double alpha = 1.0;

  void validate() const {
    if (fft_sizes.empty()) throw ConfigError("mss: no fft sizes");
    for (auto n : fft_sizes)
      if (!fft::is_pow2(n)) throw ConfigError("mss: fft size " + std::to_string(n) + " is not a power of two");
    if (!(alpha >= 0.0)) throw ConfigError("mss: alpha must be >= 0");
    stft_hop(2, overlap);
  }

  std::size_t max_fft() const { return *std::max_element(fft_sizes.begin(), fft_sizes.end()); }
};

/// sum over resolutions of mean|S - S^| + alpha * mean|ln max(S, floor) - ln max(S^, floor)|.
template <class T>
ad::Var<T> mss_loss(ad::Var<T> y, ad::Var<T> y_hat, const MssConfig& cfg) {
  cfg.validate();
  if (y.shape() != y_hat.shape() || y.shape().size() != 1)
    throw InvalidArgument("mss_loss: length mismatch " + ad::to_string(y.shape()) + " vs " +
                          ad::to_string(y_hat.shape()));
  if (y.size() < cfg.max_fft())
    throw InvalidArgument("mss_loss: signal of " + std::to_string(y.size()) + " samples is shorter than fft size " +
                          std::to_string(cfg.max_fft()));
  ad::Var<T> total;
  for (auto n : cfg.fft_sizes) {
    const std::size_t hop = stft_hop(n, cfg.overlap);
    auto s = stft_mag(y, n, hop);
    auto s_hat = stft_mag(y_hat, n, hop);
    auto term = ad::l1_distance(s, s_hat);
    if (cfg.alpha > 0.0) {
      const T floor = static_cast<T>(kLogFloor);
      auto log_term = ad::l1_distance(ad::log(ad::clamp_min(s, floor)), ad::log(ad::clamp_min(s_hat, floor)));
      term = ad::add(term, ad::scale(log_term, static_cast<T>(cfg.alpha)));
    }
    total = total.valid() ? ad::add(total, term) : term;
  }
  return total;
}

/// Plain evaluation on two buffers.
inline double mss_loss(const AudioBuffer& y, const AudioBuffer& y_hat, const MssConfig& cfg) {
  ad::Tape<float> t;
  auto a = t.leaf_view({y.size()}, std::span<const float>(y.samples), false);
  auto b = t.leaf_view({y_hat.size()}, std::span<const float>(y_hat.samples), false);
  if (y.size() != y_hat.size())
    throw InvalidArgument("mss_loss: length mismatch " + std::to_string(y.size()) + " vs " +
                          std::to_string(y_hat.size()));
  return static_cast<double>(mss_loss(a, b, cfg).item());
}

}  // namespace ddsp::loss
