#pragma once

// Multi-resolution spectrogram discriminators and least-squares GAN losses.
//
// Sub-discriminator i sees log(1 + |STFT_i|) as a [bins x frames x 1] image and
// applies a weight-normalized conv2d stack; its output is a raw logit map.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ddsp/encoder/encoder.hpp"
#include "ddsp/loss/spectral.hpp"

namespace ddsp::loss {

inline constexpr float kDiscSlope = 0.2f;

struct DiscriminatorConfig {
  std::vector<std::size_t> fft_sizes{2048, 1024, 512, 256, 128, 64};
  double overlap = 0.75;
  std::vector<std::size_t> channels{32, 64, 128, 256};  // hidden layers; final layer has 1 output

  std::size_t layers() const { return channels.size() + 1; }
  std::size_t resolutions() const { return fft_sizes.size(); }

  struct Layer {
    std::size_t kh, kw, cin, cout, stride_w;
  };
  Layer layer(std::size_t l) const {
    const std::size_t cin = l == 0 ? 1 : channels[l - 1];
    const std::size_t cout = l < channels.size() ? channels[l] : 1;
    const bool last = l == channels.size();
    const bool strided = l >= 1 && l + 1 < layers();
    return {3, last ? std::size_t{3} : std::size_t{9}, cin, cout, strided ? std::size_t{2} : std::size_t{1}};
  }

  void validate() const {
    if (fft_sizes.empty()) throw ConfigError("discriminator: no resolutions");
    for (auto n : fft_sizes)
      if (!fft::is_pow2(n)) throw ConfigError("discriminator: fft size " + std::to_string(n) + " is not a power of two");
    for (auto c : channels)
      if (c == 0) throw ConfigError("discriminator: zero-width layer");
    stft_hop(2, overlap);
  }
};

namespace names {
inline std::string disc(std::size_t i, std::size_t l, const char* part) {
  return std::to_string(i) + ".conv" + std::to_string(l) + "." + part;
}
}  // namespace names

/// Weights per layer: direction v [kh x kw x cin x cout], gain g [cout], bias b [cout].
struct DiscriminatorSet {
  DiscriminatorConfig config;
  encoder::WeightSet weights;
};

inline DiscriminatorSet init_discriminators(const DiscriminatorConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  DiscriminatorSet d{cfg, {}};
  for (std::size_t i = 0; i < cfg.resolutions(); ++i)
    for (std::size_t l = 0; l < cfg.layers(); ++l) {
      const auto L = cfg.layer(l);
      const std::size_t patch = L.kh * L.kw * L.cin;
      const float bound = static_cast<float>(std::sqrt(1.0 / static_cast<double>(patch)));
      std::uniform_real_distribution<float> u(-bound, bound);
      auto v = ad::Tensor<float>::zeros({L.kh, L.kw, L.cin, L.cout});
      for (auto& x : v.data) x = u(rng);
      // The gain starts at the direction's norm, so the effective weight equals v.
      auto g = ad::Tensor<float>::zeros({L.cout});
      for (std::size_t o = 0; o < L.cout; ++o) {
        double n2 = 0;
        for (std::size_t p = 0; p < patch; ++p) n2 += static_cast<double>(v.data[p * L.cout + o]) * v.data[p * L.cout + o];
        g.data[o] = static_cast<float>(std::sqrt(n2));
      }
      d.weights.tensors.emplace(names::disc(i, l, "v"), std::move(v));
      d.weights.tensors.emplace(names::disc(i, l, "g"), std::move(g));
      d.weights.tensors.emplace(names::disc(i, l, "b"), ad::Tensor<float>::zeros({L.cout}));
    }
  return d;
}

inline std::size_t param_count(const DiscriminatorSet& d) { return encoder::param_count(d.weights); }

/// w[p, o] = g[o] * v[p, o] / ||v[:, o]||, with the trailing axis as output
/// channel. A zero direction column yields a zero weight column.
template <class T>
ad::Var<T> weight_norm(ad::Var<T> v, ad::Var<T> g) {
  if (v.shape().empty() || g.shape() != ad::Shape{v.shape().back()})
    throw ShapeError(ad::detail::shapes_msg("weight_norm", v.shape(), g.shape()));
  const std::size_t cout = v.shape().back(), patch = v.size() / cout;
  const auto vv = v.value();
  const auto gv = g.value();
  std::vector<T> norms(cout, T(0));
  for (std::size_t o = 0; o < cout; ++o) {
    double n2 = 0;
    for (std::size_t p = 0; p < patch; ++p) n2 += static_cast<double>(vv[p * cout + o]) * vv[p * cout + o];
    norms[o] = static_cast<T>(std::sqrt(n2));
  }
  std::vector<T> w(v.size(), T(0));
  for (std::size_t p = 0; p < patch; ++p)
    for (std::size_t o = 0; o < cout; ++o)
      if (norms[o] > T(0)) w[p * cout + o] = gv[o] * vv[p * cout + o] / norms[o];
  return v.tape().record(
      v.shape(), std::move(w), {v, g},
      [v, g, norms = std::move(norms), cout, patch](ad::Tape<T>& t, std::size_t self) {
        const auto gw = t.out_grad(self);
        const auto vv = v.value();
        const auto gain = g.value();
        auto dv = t.grad_buffer(v);
        auto dg = t.grad_buffer(g);
        for (std::size_t o = 0; o < cout; ++o) {
          if (norms[o] == T(0)) continue;
          // s = <gw, v_hat>; dg = s; dv = g/n * (gw - s * v_hat)
          T s = 0;
          for (std::size_t p = 0; p < patch; ++p) s += gw[p * cout + o] * vv[p * cout + o] / norms[o];
          if (!dg.empty()) dg[o] += s;
          if (!dv.empty()) {
            const T c = gain[o] / norms[o];
            for (std::size_t p = 0; p < patch; ++p)
              dv[p * cout + o] += c * (gw[p * cout + o] - s * vv[p * cout + o] / norms[o]);
          }
        }
      },
      "weight_norm");
}

template <class T>
using DiscParams = encoder::ParamMap<T>;

/// Logit map [ho x wo x 1] of sub-discriminator i for signal x [L].
template <class T>
ad::Var<T> discriminator_forward(ad::Var<T> x, const DiscParams<T>& p, const DiscriminatorConfig& cfg, std::size_t i) {
  if (i >= cfg.resolutions())
    throw InvalidArgument("discriminator: index " + std::to_string(i) + " out of " + std::to_string(cfg.resolutions()));
  const std::size_t n = cfg.fft_sizes[i];
  if (x.shape().size() != 1 || x.size() < n)
    throw InvalidArgument("discriminator " + std::to_string(i) + ": audio of " + std::to_string(x.size()) +
                          " samples is shorter than fft size " + std::to_string(n));
  auto s = stft_mag(x, n, stft_hop(n, cfg.overlap));  // [frames x bins]
  const std::size_t frames = s.shape()[0], bins = s.shape()[1];
  auto z = ad::reshape(ad::transpose(ad::log(ad::add_scalar(s, T(1)))), {bins, frames, 1});
  for (std::size_t l = 0; l < cfg.layers(); ++l) {
    const auto L = cfg.layer(l);
    auto w = weight_norm(encoder::param(p, names::disc(i, l, "v")), encoder::param(p, names::disc(i, l, "g")));
    z = ad::conv2d(z, w, encoder::param(p, names::disc(i, l, "b")), 1, L.stride_w);
    if (l + 1 < cfg.layers()) z = ad::leaky_relu(z, T(kDiscSlope));
  }
  return z;
}

/// Plain (tape-free) logits for a buffer.
inline std::vector<float> discriminator_forward(const AudioBuffer& audio, const DiscriminatorSet& d, std::size_t i) {
  ad::Tape<float> t;
  auto p = encoder::bind(t, d.weights, false);
  auto y = discriminator_forward(t.leaf_view({audio.size()}, std::span<const float>(audio.samples), false), p,
                                 d.config, i);
  return {y.value().begin(), y.value().end()};
}

/// Parameters as non-differentiable copies, for generator-side evaluation.
template <class T>
DiscParams<T> detached(const DiscParams<T>& p) {
  DiscParams<T> out;
  for (const auto& [name, v] : p) out.emplace(name, ad::detach(v));
  return out;
}

template <class T>
ad::Var<T> lsgan_d_loss(ad::Var<T> real, ad::Var<T> fake) {
  auto r = ad::scale(ad::mean(ad::square(ad::add_scalar(real, T(-1)))), T(0.5));
  auto f = ad::scale(ad::mean(ad::square(fake)), T(0.5));
  return ad::add(r, f);
}

template <class T>
ad::Var<T> lsgan_g_loss(ad::Var<T> fake) {
  return ad::mean(ad::square(ad::add_scalar(fake, T(-1))));
}

template <class T>
struct Losses {
  ad::Var<T> l_g;
  ad::Var<T> l_d;
  ad::Var<T> mss;
};

/// L_G = MSS + lambda/R * sum_i g_loss(D_i(y_hat)) with D frozen;
/// L_D = 1/R * sum_i d_loss(D_i(y), D_i(y_hat)) with y_hat frozen.
template <class T>
Losses<T> total_losses(ad::Var<T> y, ad::Var<T> y_hat, const DiscParams<T>& d, const DiscriminatorConfig& dcfg,
                       const MssConfig& mss_cfg, double lambda) {
  if (!(lambda >= 0.0)) throw InvalidArgument("total_losses: lambda must be >= 0");
  dcfg.validate();
  Losses<T> out;
  out.mss = mss_loss(y, y_hat, mss_cfg);
  out.l_g = out.mss;
  const T inv_r = static_cast<T>(1.0 / static_cast<double>(dcfg.resolutions()));
  const auto frozen = detached(d);
  auto y_const = ad::detach(y);
  auto y_hat_const = ad::detach(y_hat);
  ad::Var<T> adv, disc;
  for (std::size_t i = 0; i < dcfg.resolutions(); ++i) {
    if (lambda > 0.0) {
      auto g = lsgan_g_loss(discriminator_forward(y_hat, frozen, dcfg, i));
      adv = adv.valid() ? ad::add(adv, g) : g;
    }
    auto dl = lsgan_d_loss(discriminator_forward(y_const, d, dcfg, i), discriminator_forward(y_hat_const, d, dcfg, i));
    disc = disc.valid() ? ad::add(disc, dl) : dl;
  }
  if (lambda > 0.0) out.l_g = ad::add(out.mss, ad::scale(adv, static_cast<T>(lambda) * inv_r));
  out.l_d = ad::scale(disc, inv_r);
  return out;
}

}  // namespace ddsp::loss
