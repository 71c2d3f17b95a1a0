#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "ddsp/autodiff/grad_check.hpp"
#include "ddsp/synth/generator.hpp"
#include "oracles.hpp"

using namespace ddsp;
using namespace ddsp::synth;

namespace {

SynthControls<float> constant_controls(std::size_t frames, std::size_t K, std::size_t M, float f0, float a,
                                       float a_tilde, float h) {
  SynthControls<float> s;
  s.harmonics = K;
  s.bands = M;
  s.a.assign(frames, a);
  s.a_tilde.assign(frames, a_tilde);
  s.c.assign(frames * K, 1.0f / static_cast<float>(K));
  s.c_tilde.assign(frames * K, 1.0f / static_cast<float>(K));
  s.H.assign(frames * M, h);
  s.f0_hz.assign(frames, f0);
  return s;
}

// Random valid controls: softmax rows, Nyquist-masked.
SynthControls<float> random_controls(std::mt19937_64& rng, std::size_t frames, std::size_t K, std::size_t M) {
  std::uniform_real_distribution<float> u01(0.0f, 1.0f), f0d(0.0f, 1200.0f), logit(-4.0f, 4.0f);
  SynthControls<float> s;
  s.harmonics = K;
  s.bands = M;
  for (std::size_t t = 0; t < frames; ++t) {
    s.f0_hz.push_back(u01(rng) < 0.2f ? 0.0f : f0d(rng));
    s.a.push_back(2.0f * u01(rng) + 1e-7f);
    s.a_tilde.push_back(2.0f * u01(rng) + 1e-7f);
  }
  auto dist = [&](std::vector<float>& out) {
    std::vector<float> logits(frames * K);
    for (auto& v : logits) v = logit(rng);
    const auto masked = mask_above_nyquist<float>(logits, s.f0_hz);
    ad::Tape<float> t;
    auto y = ad::softmax(t.constant({frames, K}, masked));
    out.assign(y.value().begin(), y.value().end());
  };
  dist(s.c);
  dist(s.c_tilde);
  for (std::size_t i = 0; i < frames * M; ++i) s.H.push_back(2.0f * u01(rng) + 1e-7f);
  return s;
}

std::vector<double> as_double(const AudioBuffer& b) { return {b.samples.begin(), b.samples.end()}; }

}  // namespace

TEST(Oscillator, PureSineAt200Hz) {
  auto s = constant_controls(100, 1, 9, 200.0f, 1.0f, 0.0f, 0.0f);
  const auto x = oscillator_bank(s);
  ASSERT_EQ(x.size(), 8000u);
  auto p = oracle::dft_power(as_double(x));  // 2 Hz bins
  const std::size_t peak = 100;
  std::size_t best = 0;
  for (std::size_t b = 0; b < p.size(); ++b)
    if (p[b] > p[best]) best = b;
  EXPECT_EQ(best, peak);
  for (std::size_t b = 0; b < p.size(); ++b)
    if (b != peak) {
      EXPECT_LT(std::sqrt(p[b]), 0.01 * std::sqrt(p[peak])) << "bin " << b;
    }
}

TEST(Oscillator, ZeroAmplitudesGiveSilence) {
  auto s = constant_controls(10, 6, 9, 150.0f, 0.0f, 0.0f, 0.0f);
  for (float v : oscillator_bank(s).samples) EXPECT_EQ(v, 0.0f);
}

TEST(Oscillator, InclusivePhaseSum) {
  const std::vector<float> f0(4, 200.0f);
  const auto phase = fundamental_phase<float>(f0, FrameGrid{});
  EXPECT_NEAR(phase[0], 2.0 * std::numbers::pi * 0.0125, 1e-12);
  // 80 inclusive terms of 0.0125 cycles complete exactly one cycle at n = 79.
  EXPECT_NEAR(std::sin(phase[79]), 0.0, 1e-9);
  for (double v : phase) {
    EXPECT_GE(v, 0.0);
    EXPECT_LT(v, 2.0 * std::numbers::pi);
  }
}

TEST(Oscillator, NegativeF0Rejected) {
  auto s = constant_controls(5, 2, 9, 100.0f, 1.0f, 0.0f, 0.0f);
  s.f0_hz[2] = -1.0f;
  EXPECT_THROW(oscillator_bank(s), InvalidArgument);
}

TEST(Oscillator, UnnormalizedDistributionIsContractViolation) {
  auto s = constant_controls(5, 2, 9, 100.0f, 1.0f, 0.0f, 0.0f);
  s.c[0] = 0.9f;
  EXPECT_THROW(oscillator_bank(s), ContractViolation);
}

TEST(Oscillator, AmplitudeBound) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const auto s = random_controls(rng, 12, 10, 5);
    const auto x = oscillator_bank(s);
    const auto a_up = upsample_control<float>(s.a, FrameGrid{});
    const auto at_up = upsample_control<float>(s.a_tilde, FrameGrid{});
    for (std::size_t n = 0; n < x.size(); ++n) EXPECT_LE(std::abs(x.samples[n]), a_up[n] + at_up[n] + 1e-5f);
  }
}

TEST(Oscillator, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(22);
  const std::size_t F = 4, K = 3;
  std::vector<ad::Tensor<double>> pts{
      {{F}, oracle::random_vector(rng, F, 0.1, 1.0)},
      {{F, K}, oracle::random_vector(rng, F * K, 0.0, 1.0)},
      {{F}, oracle::random_vector(rng, F, 0.1, 1.0)},
      {{F, K}, oracle::random_vector(rng, F * K, 0.0, 1.0)},
  };
  const std::vector<double> f0{120.0, 180.0, 0.0, 400.0};
  auto phase = std::make_shared<const std::vector<double>>(fundamental_phase<double>(f0, FrameGrid{}));
  const auto w = oracle::random_vector(rng, F * 80);
  const auto report = ad::grad_check(
      [&](ad::Tape<double>& t, std::span<const ad::Var<double>> v) {
        auto y = harmonic_oscillator(v[0], v[1], v[2], v[3], phase, FrameGrid{});
        return ad::sum(ad::mul(y, t.constant({F * 80}, w)));
      },
      pts, 1e-6);
  EXPECT_LT(report.max_rel_error, 1e-6);
}

TEST(NyquistMask, ThresholdAt200Hz) {
  const std::vector<float> f0{200.0f};
  const auto m = nyquist_mask<float>(f0, 50);
  for (std::size_t k = 1; k <= 50; ++k) EXPECT_EQ(m[k - 1] != 0, k >= 41) << "k=" << k;
}

TEST(NyquistMask, ZeroF0MasksNothing) {
  const std::vector<float> f0{0.0f};
  for (auto v : nyquist_mask<float>(f0, 50)) EXPECT_EQ(v, 0);
}

TEST(NyquistMask, UniformSoftmaxOverSurvivors) {
  const std::vector<float> f0{200.0f};
  const auto logits = mask_above_nyquist<float>(std::vector<float>(50, 0.3f), f0);
  ad::Tape<float> t;
  auto y = ad::softmax(t.constant({1, 50}, logits));
  for (std::size_t k = 0; k < 50; ++k) {
    if (k < 40) EXPECT_NEAR(y.value()[k], 1.0f / 40.0f, 1e-7f);
    else EXPECT_EQ(y.value()[k], 0.0f);
  }
}

TEST(NyquistMask, MaskedHarmonicsContributeExactlyZero) {
  std::mt19937_64 rng(23);
  const auto s = random_controls(rng, 30, 40, 5);
  auto zeroed = s;
  const auto mask = nyquist_mask<float>(s.f0_hz, s.harmonics);
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) {
      EXPECT_EQ(s.c[i], 0.0f);
      zeroed.c[i] = 0.0f;
      zeroed.c_tilde[i] = 0.0f;
    }
  EXPECT_EQ(oscillator_bank(s).samples, oscillator_bank(zeroed).samples);
}

TEST(NoiseFilter, ZeroResponseGivesSilence) {
  const std::vector<float> H(20 * 65, 0.0f);
  for (float v : noise_filter_bank(H, 65, FrameGrid{}, 0.01, 3).samples) EXPECT_EQ(v, 0.0f);
}

TEST(NoiseFilter, LinearInGamma) {
  std::mt19937_64 rng(24);
  std::vector<float> H(30 * 65);
  for (auto& v : H) v = std::uniform_real_distribution<float>(0.0f, 2.0f)(rng);
  const auto a = noise_filter_bank(H, 65, FrameGrid{}, 0.01, 9);
  const auto b = noise_filter_bank(H, 65, FrameGrid{}, 0.02, 9);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(b.samples[i], 2.0f * a.samples[i]);
}

TEST(NoiseFilter, OutputLengthAndDeterminism) {
  const std::vector<float> H(17 * 65, 1.0f);
  const auto a = noise_filter_bank(H, 65, FrameGrid{}, 0.01, 5);
  const auto b = noise_filter_bank(H, 65, FrameGrid{}, 0.01, 5);
  const auto c = noise_filter_bank(H, 65, FrameGrid{}, 0.01, 6);
  EXPECT_EQ(a.size(), 17u * 80u);
  EXPECT_EQ(a.samples, b.samples);
  EXPECT_NE(a.samples, c.samples);
}

TEST(NoiseFilter, NonPositiveGammaRejected) {
  const std::vector<float> H(2 * 65, 1.0f);
  EXPECT_THROW(noise_filter_bank(H, 65, FrameGrid{}, 0.0, 1), InvalidArgument);
  ad::Tape<float> t;
  EXPECT_THROW(filtered_noise(t.constant({2, 65}, H), -0.1, 1, FrameGrid{}), InvalidArgument);
}

TEST(NoiseFilter, ImpulseResponseIsLinearPhase) {
  std::mt19937_64 rng(25);
  const auto bands = oracle::random_vector(rng, 65, 0.0, 2.0);
  // Zero-phase taps are even about index 0.
  const auto zp = zero_phase_ir(bands);
  for (std::size_t i = 1; i < zp.size(); ++i) EXPECT_NEAR(zp[i], zp[zp.size() - i], 1e-6);
  // After the causal shift and taper the taps are even about the center tap.
  const auto h = causal_windowed_ir(bands, 1.0);
  ASSERT_EQ(h.size(), 128u);
  for (std::size_t d = 1; d < 64; ++d) EXPECT_NEAR(h[64 + d], h[64 - d], 1e-6);
  EXPECT_EQ(h[0], 0.0);
}

TEST(NoiseFilter, DesignMatrixMatchesDirectDesign) {
  std::mt19937_64 rng(26);
  const auto bands = oracle::random_vector(rng, 33, 0.0, 2.0);
  const auto direct = causal_windowed_ir(bands, 0.37);
  const auto m = noise_filter_matrix<double>(33, 0.37);
  for (std::size_t i = 0; i < direct.size(); ++i) {
    double acc = 0;
    for (std::size_t b = 0; b < 33; ++b) acc += m->data[i * 33 + b] * bands[b];
    EXPECT_NEAR(acc, direct[i], 1e-12);
  }
}

TEST(NoiseFilter, TapePathMatchesPlainPath) {
  std::mt19937_64 rng(27);
  std::vector<float> H(25 * 65);
  for (auto& v : H) v = std::uniform_real_distribution<float>(0.0f, 2.0f)(rng);
  const auto plain = noise_filter_bank(H, 65, FrameGrid{}, 0.3, 11);
  ad::Tape<float> t;
  auto y = filtered_noise(t.constant({25, 65}, H), 0.3, 11, FrameGrid{});
  for (std::size_t i = 0; i < plain.size(); ++i) EXPECT_NEAR(y.value()[i], plain.samples[i], 1e-6);
}

TEST(NoiseFilter, LowpassResponseAttenuatesTopQuarter) {
  const std::size_t M = 65, F = 200;
  std::vector<float> H(F * M, 0.0f);
  for (std::size_t f = 0; f < F; ++f)
    for (std::size_t b = 0; b < M / 4; ++b) H[f * M + b] = 1.0f;
  const auto y = noise_filter_bank(H, M, FrameGrid{}, 1.0, 31);
  const auto s = stft_magnitude<float>(y.samples, 128, 32);
  std::vector<double> mean_power(s.bins(), 0.0);
  for (std::size_t f = 0; f < s.frames; ++f)
    for (std::size_t b = 0; b < s.bins(); ++b) mean_power[b] += static_cast<double>(s.at(f, b)) * s.at(f, b);
  const std::size_t q = s.bins() / 4;
  double low = 0, high = 0;
  for (std::size_t b = 0; b < q; ++b) low += mean_power[b];
  for (std::size_t b = s.bins() - q; b < s.bins(); ++b) high += mean_power[b];
  EXPECT_GE(10.0 * std::log10(low / high), 20.0);
}

TEST(NoiseFilter, MeanSpectrumTracksResponse) {
  const std::size_t M = 65, F = 240;
  std::vector<double> response(M);
  for (std::size_t b = 0; b < M; ++b)
    response[b] = 1.0 + 0.8 * std::sin(2.0 * std::numbers::pi * 1.5 * static_cast<double>(b) / (M - 1));
  std::vector<float> H(F * M);
  for (std::size_t f = 0; f < F; ++f)
    for (std::size_t b = 0; b < M; ++b) H[f * M + b] = static_cast<float>(response[b]);
  const auto y = noise_filter_bank(H, M, FrameGrid{}, 1.0, 41);
  const auto s = stft_magnitude<float>(y.samples, 128, 32);
  std::vector<double> mean_mag(s.bins(), 0.0);
  for (std::size_t f = 0; f < s.frames; ++f)
    for (std::size_t b = 0; b < s.bins(); ++b) mean_mag[b] += s.at(f, b);
  EXPECT_GT(oracle::pearson(mean_mag, response), 0.9);
}

TEST(NoiseFilter, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(28);
  const std::size_t F = 4, M = 9;
  const ad::Tensor<double> H({F, M}, oracle::random_vector(rng, F * M, 0.0, 2.0));
  const auto w = oracle::random_vector(rng, F * 80);
  const double err = ad::grad_check(
      [&](ad::Tape<double>& t, ad::Var<double> v) {
        return ad::sum(ad::mul(filtered_noise(v, 0.5, 3, FrameGrid{}), t.constant({F * 80}, w)));
      },
      H, 1e-6);
  EXPECT_LT(err, 1e-6);
}

TEST(PostFilter, IdentityKernel) {
  std::mt19937_64 rng(29);
  AudioBuffer x;
  for (double v : oracle::random_vector(rng, 3000)) x.samples.push_back(static_cast<float>(v));
  const auto k = identity_kernel();
  const auto y = post_filter(x, k);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_FLOAT_EQ(y.samples[i], x.samples[i]);
}

TEST(PostFilter, HalfImpulseHalves) {
  AudioBuffer x;
  x.samples = {1.0f, -2.0f, 0.5f, 4.0f, 0.25f};
  auto k = identity_kernel(9);
  k[4] = 0.5f;
  const auto y = post_filter(x, k);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_FLOAT_EQ(y.samples[i], 0.5f * x.samples[i]);
}

TEST(PostFilter, MatchesDirectConvolution) {
  std::mt19937_64 rng(30);
  const auto x = oracle::random_vector(rng, 4000);
  const auto k = oracle::random_vector(rng, 1025);
  ad::Tape<double> t;
  auto y = post_conv(t.constant({x.size()}, x), t.constant({k.size()}, k));
  const auto full = oracle::direct_convolve(x, k);
  double worst = 0;
  for (std::size_t i = 0; i < x.size(); ++i) worst = std::max(worst, std::abs(y.value()[i] - full[i + 512]));
  EXPECT_LT(worst, 1e-9 * std::max(1.0, oracle::max_abs(full)));
}

TEST(PostFilter, EvenKernelRejected) {
  AudioBuffer x;
  x.samples.assign(10, 1.0f);
  EXPECT_THROW(post_filter(x, std::vector<float>(4, 0.25f)), InvalidArgument);
}

TEST(PostFilter, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(31);
  std::vector<ad::Tensor<double>> pts{{{60}, oracle::random_vector(rng, 60)}, {{9}, oracle::random_vector(rng, 9)}};
  const auto w = oracle::random_vector(rng, 60);
  const auto report = ad::grad_check(
      [&](ad::Tape<double>& t, std::span<const ad::Var<double>> v) {
        return ad::sum(ad::mul(post_conv(v[0], v[1]), t.constant({60}, w)));
      },
      pts, 1e-6);
  EXPECT_LT(report.max_rel_error, 1e-6);
}

TEST(FrequencyResponse, ImpulseIsAllpass) {
  for (double m : filter_frequency_response<float>(identity_kernel(), 512)) EXPECT_NEAR(m, 1.0, 1e-12);
}

TEST(FrequencyResponse, TwoTapAverage) {
  const std::vector<double> k{0.5, 0.5};
  const auto r = filter_frequency_response<double>(k, 64);
  for (std::size_t i = 0; i < r.size(); ++i) {
    const double w = std::numbers::pi * static_cast<double>(i) / 63.0;
    EXPECT_NEAR(r[i], std::abs(std::cos(w / 2.0)), 1e-12);
  }
}

TEST(FrequencyResponse, MatchesDirectDtft) {
  std::mt19937_64 rng(32);
  const auto k = oracle::random_vector(rng, 1025);
  const auto r = filter_frequency_response<double>(k, 512);
  ASSERT_EQ(r.size(), 512u);
  for (std::size_t i = 0; i < r.size(); i += 7)
    EXPECT_NEAR(r[i], oracle::dtft_magnitude(k, std::numbers::pi * static_cast<double>(i) / 511.0), 1e-9);
}

TEST(FrequencyResponse, TooFewPointsRejected) {
  EXPECT_THROW(filter_frequency_response<float>(identity_kernel(), 1), InvalidArgument);
}

TEST(Synthesize, ZeroControlsGiveSilence) {
  const auto s = constant_controls(10, 4, 9, 100.0f, 0.0f, 0.0f, 0.0f);
  const auto out = synthesize(s, identity_kernel());
  for (float v : out.final.samples) EXPECT_EQ(v, 0.0f);
}

TEST(Synthesize, DecompositionIdentity) {
  std::mt19937_64 rng(33);
  const auto s = random_controls(rng, 20, 16, 17);
  std::vector<float> kernel(1025);
  for (auto& v : kernel) v = std::uniform_real_distribution<float>(-0.05f, 0.05f)(rng);
  const auto out = synthesize(s, kernel, FrameGrid{}, 0.01, 4);
  ASSERT_EQ(out.harmonic.size(), 1600u);
  ASSERT_EQ(out.final.size(), 1600u);
  for (std::size_t i = 0; i < out.mixed_pre_post.size(); ++i)
    EXPECT_NEAR(out.mixed_pre_post.samples[i], out.harmonic.samples[i] + out.noise.samples[i], 1e-6);
}

TEST(Synthesize, IdentityKernelPassesMixedThrough) {
  std::mt19937_64 rng(34);
  const auto s = random_controls(rng, 15, 8, 9);
  const auto out = synthesize(s, identity_kernel(), FrameGrid{}, 0.01, 5);
  for (std::size_t i = 0; i < out.final.size(); ++i)
    EXPECT_NEAR(out.final.samples[i], out.harmonic.samples[i] + out.noise.samples[i], 1e-5);
}

TEST(Synthesize, VoicedHarmonicIsLessFlatThanNoise) {
  const auto s = constant_controls(40, 20, 65, 150.0f, 1.5f, 1.0f, 0.05f);
  const auto out = synthesize(s, identity_kernel(), FrameGrid{}, 0.01, 6);
  auto segment = [](const AudioBuffer& b) { return std::vector<double>(b.samples.begin() + 800, b.samples.begin() + 2848); };
  const double flat_h = oracle::spectral_flatness(oracle::dft_power(segment(out.harmonic)));
  const double flat_n = oracle::spectral_flatness(oracle::dft_power(segment(out.noise)));
  EXPECT_LT(flat_h, flat_n);
}

TEST(Synthesize, DeterministicUnderSeed) {
  std::mt19937_64 rng(36);
  const auto s = random_controls(rng, 12, 8, 9);
  const auto a = synthesize(s, identity_kernel(), FrameGrid{}, 0.01, 77);
  const auto b = synthesize(s, identity_kernel(), FrameGrid{}, 0.01, 77);
  EXPECT_EQ(a.final.samples, b.final.samples);
}

TEST(Synthesize, FuzzedControlsStayFinite) {
  std::mt19937_64 rng(37);
  const auto kernel = identity_kernel(31);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto s = random_controls(rng, 5, 8, 9);
    const auto out = synthesize(s, kernel, FrameGrid{}, 0.01, static_cast<std::uint64_t>(trial));
    ASSERT_TRUE(all_finite<float>(out.final.samples)) << "trial " << trial;
  }
}
