#pragma once

// (EMA, F0, loudness) at the control rate -> synthesizer controls.
//
// Datapath per frame sequence of length F:
//   [ema(12) | f0 feature | loudness] -> 1x1 projection -> n_stacks x
//   blocks_per_stack dilated ResBlocks -> FiLM(loudness) -> two MLP heads.

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ddsp/autodiff/ops.hpp"
#include "ddsp/synth/controls.hpp"
#include "ddsp/synth/post_filter.hpp"

namespace ddsp::encoder {

inline constexpr std::size_t kEmaChannels = 12;
inline constexpr std::size_t kInputChannels = kEmaChannels + 2;
inline constexpr float kLeakySlope = 0.1f;
inline constexpr double kMaxF0Hz = 8000.0;

struct ControlTrack {
  std::vector<float> ema;  // [frames x 12]
  std::vector<float> f0_hz;
  std::vector<float> loudness;

  std::size_t frames() const { return f0_hz.size(); }

  void validate() const {
    const std::size_t f = frames();
    if (f == 0) throw InvalidArgument("control track: no frames");
    if (loudness.size() != f || ema.size() != f * kEmaChannels)
      throw InvalidArgument("control track: frame count mismatch (f0 " + std::to_string(f) + ", loudness " +
                            std::to_string(loudness.size()) + ", ema " + std::to_string(ema.size()) + "/12)");
    for (float v : f0_hz)
      if (!(v >= 0.0f)) throw InvalidArgument("control track: negative or NaN f0");
  }
};

struct EncoderConfig {
  std::size_t hidden_dim = 256;
  std::size_t n_stacks = 4;
  std::size_t blocks_per_stack = 5;
  std::vector<std::size_t> dilations{1, 2, 4, 8, 16};
  std::size_t kernel = 3;
  std::size_t convs_per_block = 2;
  std::size_t K = 50;
  std::size_t M = 65;
  std::size_t mlp_depth = 3;

  void validate() const {
    if (hidden_dim == 0) throw ConfigError("encoder config: hidden_dim must be positive");
    if (dilations.size() != blocks_per_stack)
      throw ConfigError("encoder config: dilations length " + std::to_string(dilations.size()) +
                        " != blocks_per_stack " + std::to_string(blocks_per_stack));
    for (auto d : dilations)
      if (d == 0) throw ConfigError("encoder config: dilation must be >= 1");
    if (kernel % 2 == 0) throw ConfigError("encoder config: kernel must be odd");
    if (convs_per_block == 0) throw ConfigError("encoder config: convs_per_block must be >= 1");
    if (K < 1) throw ConfigError("encoder config: K must be >= 1");
    if (M < 2) throw ConfigError("encoder config: M must be >= 2");
  }

  /// Frames on either side of an output frame that can influence it through
  /// the EMA/F0 path.
  std::size_t receptive_radius() const {
    std::size_t per_stack = 0;
    for (auto d : dilations) per_stack += (kernel / 2) * (d + (convs_per_block - 1));
    return n_stacks * per_stack;
  }

  bool operator==(const EncoderConfig&) const = default;
};

/// Named float tensors. Iteration order (sorted by name) is the canonical order
/// for serialization and optimizer state.
struct WeightSet {
  std::map<std::string, ad::Tensor<float>> tensors;

  const ad::Tensor<float>& at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw ShapeError("weight set: missing tensor '" + name + "'");
    return it->second;
  }
  ad::Tensor<float>& at(const std::string& name) {
    return const_cast<ad::Tensor<float>&>(static_cast<const WeightSet&>(*this).at(name));
  }
  bool contains(const std::string& name) const { return tensors.count(name) != 0; }
  bool empty() const { return tensors.empty(); }
};

inline std::size_t param_count(const WeightSet& w) {
  std::size_t n = 0;
  for (const auto& [name, t] : w.tensors) n += t.data.size();
  return n;
}

enum class Init { uniform, zeros, ones, impulse };

struct TensorSpec {
  std::string name;
  ad::Shape shape;
  Init init;
  std::size_t fan_in = 0;
};

namespace names {

inline std::string res(std::size_t stack, std::size_t block, std::size_t conv, const char* part) {
  return "res." + std::to_string(stack) + "." + std::to_string(block) + ".conv" + std::to_string(conv) + "." + part;
}
inline std::string film(std::size_t layer, const char* part) {
  return "film.conv" + std::to_string(layer) + "." + part;
}
inline std::string head(int h, const std::string& layer, const char* part) {
  return "head" + std::to_string(h) + "." + layer + "." + part;
}
inline const char* kPostKernel = "post.kernel";

}  // namespace names

inline std::size_t head1_width(const EncoderConfig& cfg) { return 2 * (cfg.K + 1); }

/// Every generator tensor in creation order. Init draws follow this order.
inline std::vector<TensorSpec> weight_specs(const EncoderConfig& cfg) {
  cfg.validate();
  const std::size_t h = cfg.hidden_dim, k = cfg.kernel;
  std::vector<TensorSpec> s;
  s.push_back({"in.w", {1, kInputChannels, h}, Init::uniform, kInputChannels});
  s.push_back({"in.b", {h}, Init::zeros});
  for (std::size_t st = 0; st < cfg.n_stacks; ++st)
    for (std::size_t b = 0; b < cfg.blocks_per_stack; ++b)
      for (std::size_t c = 0; c < cfg.convs_per_block; ++c) {
        s.push_back({names::res(st, b, c, "w"), {k, h, h}, Init::uniform, k * h});
        s.push_back({names::res(st, b, c, "b"), {h}, Init::zeros});
      }
  const std::size_t film_in[3] = {1, h, h}, film_out[3] = {h, h, 2 * h};
  for (std::size_t l = 0; l < 3; ++l) {
    s.push_back({names::film(l, "w"), {k, film_in[l], film_out[l]}, Init::uniform, k * film_in[l]});
    s.push_back({names::film(l, "b"), {film_out[l]}, Init::zeros});
  }
  const std::size_t out_dims[2] = {head1_width(cfg), cfg.M};
  for (int hd = 1; hd <= 2; ++hd) {
    for (std::size_t l = 0; l < cfg.mlp_depth; ++l) {
      const std::string ln = "ln" + std::to_string(l), fc = "fc" + std::to_string(l);
      s.push_back({names::head(hd, ln, "g"), {h}, Init::ones});
      s.push_back({names::head(hd, ln, "b"), {h}, Init::zeros});
      s.push_back({names::head(hd, fc, "w"), {h, h}, Init::uniform, h});
      s.push_back({names::head(hd, fc, "b"), {h}, Init::zeros});
    }
    s.push_back({names::head(hd, "out", "w"), {h, out_dims[hd - 1]}, Init::uniform, h});
    s.push_back({names::head(hd, "out", "b"), {out_dims[hd - 1]}, Init::zeros});
  }
  s.push_back({names::kPostKernel, {synth::kPostKernelSize}, Init::impulse});
  return s;
}

inline std::size_t param_count(const EncoderConfig& cfg) {
  std::size_t n = 0;
  for (const auto& s : weight_specs(cfg)) n += ad::numel(s.shape);
  return n;
}

inline WeightSet init_weights(const EncoderConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  WeightSet w;
  for (const auto& s : weight_specs(cfg)) {
    auto t = ad::Tensor<float>::zeros(s.shape);
    switch (s.init) {
      case Init::uniform: {
        const float b = static_cast<float>(std::sqrt(1.0 / static_cast<double>(s.fan_in)));
        std::uniform_real_distribution<float> d(-b, b);
        for (auto& v : t.data) v = d(rng);
        break;
      }
      case Init::ones: std::fill(t.data.begin(), t.data.end(), 1.0f); break;
      case Init::impulse: t.data[t.data.size() / 2] = 1.0f; break;
      case Init::zeros: break;
    }
    w.tensors.emplace(s.name, std::move(t));
  }
  return w;
}

/// Throws ShapeError unless w holds exactly the tensors cfg calls for.
inline void check_weights(const WeightSet& w, const EncoderConfig& cfg) {
  const auto specs = weight_specs(cfg);
  for (const auto& s : specs) {
    const auto& t = w.at(s.name);
    if (t.shape != s.shape)
      throw ShapeError("weight '" + s.name + "': shape " + ad::to_string(t.shape) + ", config expects " +
                       ad::to_string(s.shape));
  }
  if (w.tensors.size() != specs.size())
    throw ShapeError("weight set: " + std::to_string(w.tensors.size()) + " tensors, config expects " +
                     std::to_string(specs.size()));
}

template <class T>
using ParamMap = std::map<std::string, ad::Var<T>>;

template <class T>
ad::Var<T> param(const ParamMap<T>& p, const std::string& name) {
  auto it = p.find(name);
  if (it == p.end()) throw ShapeError("encoder: missing parameter '" + name + "'");
  return it->second;
}

/// Leaves that reference w's storage; w must outlive the tape.
inline ParamMap<float> bind(ad::Tape<float>& tape, const WeightSet& w, bool requires_grad) {
  ParamMap<float> p;
  for (const auto& [name, t] : w.tensors)
    p.emplace(name, tape.leaf_view(t.shape, std::span<const float>(t.data), requires_grad));
  return p;
}

/// Leaves holding copies converted to T.
template <class T>
ParamMap<T> bind_copy(ad::Tape<T>& tape, const WeightSet& w, bool requires_grad) {
  ParamMap<T> p;
  for (const auto& [name, t] : w.tensors) p.emplace(name, tape.leaf(t.template cast<T>(), requires_grad));
  return p;
}

inline double f0_feature(double f0_hz) { return std::log1p(f0_hz) / std::log1p(kMaxF0Hz); }

/// [F x 14] network input in the fixed channel order.
template <class T>
std::vector<T> input_features(const ControlTrack& track) {
  track.validate();
  const std::size_t f = track.frames();
  std::vector<T> x(f * kInputChannels);
  for (std::size_t t = 0; t < f; ++t) {
    T* row = x.data() + t * kInputChannels;
    for (std::size_t c = 0; c < kEmaChannels; ++c) row[c] = static_cast<T>(track.ema[t * kEmaChannels + c]);
    row[kEmaChannels] = static_cast<T>(f0_feature(track.f0_hz[t]));
    row[kEmaChannels + 1] = static_cast<T>(track.loudness[t]);
  }
  return x;
}

template <class T>
struct FilmVars {
  ad::Var<T> w[3];
  ad::Var<T> b[3];
};

template <class T>
FilmVars<T> film_params(const ParamMap<T>& p) {
  FilmVars<T> f;
  for (std::size_t l = 0; l < 3; ++l) {
    f.w[l] = param(p, names::film(l, "w"));
    f.b[l] = param(p, names::film(l, "b"));
  }
  return f;
}

/// features: [F x h], loudness: [F x 1]. Returns scale * features + shift with
/// (scale, shift) = split of the third conv's 2h channels.
template <class T>
ad::Var<T> film_modulate(ad::Var<T> features, ad::Var<T> loudness, const FilmVars<T>& film) {
  if (features.shape().size() != 2 || loudness.shape().size() != 2 || loudness.shape()[1] != 1 ||
      loudness.shape()[0] != features.shape()[0])
    throw ShapeError("film_modulate: features " + ad::to_string(features.shape()) + " vs loudness " +
                     ad::to_string(loudness.shape()));
  const std::size_t h = features.shape()[1];
  if (film.w[2].shape().size() != 3 || film.w[2].shape()[2] != 2 * h)
    throw ShapeError("film_modulate: final conv " + ad::to_string(film.w[2].shape()) + " does not produce 2x" +
                     std::to_string(h) + " channels");
  auto z = ad::leaky_relu(ad::conv1d(loudness, film.w[0], film.b[0]), T(kLeakySlope));
  z = ad::leaky_relu(ad::conv1d(z, film.w[1], film.b[1]), T(kLeakySlope));
  z = ad::conv1d(z, film.w[2], film.b[2]);
  return ad::add(ad::mul(ad::slice(z, 1, 0, h), features), ad::slice(z, 1, h, 2 * h));
}

template <class T>
ad::Var<T> mlp_head(ad::Var<T> x, const ParamMap<T>& p, int hd, const EncoderConfig& cfg) {
  for (std::size_t l = 0; l < cfg.mlp_depth; ++l) {
    const std::string ln = "ln" + std::to_string(l), fc = "fc" + std::to_string(l);
    x = ad::layer_norm(x, param(p, names::head(hd, ln, "g")), param(p, names::head(hd, ln, "b")));
    x = ad::add(ad::matmul(x, param(p, names::head(hd, fc, "w"))), param(p, names::head(hd, fc, "b")));
    x = ad::leaky_relu(x, T(kLeakySlope));
  }
  return ad::add(ad::matmul(x, param(p, names::head(hd, "out", "w"))), param(p, names::head(hd, "out", "b")));
}

/// Softmax over K harmonics after Nyquist masking; rows with every harmonic
/// masked come out all zero.
template <class T>
ad::Var<T> harmonic_distribution(ad::Var<T> logits, std::span<const T> f0_hz) {
  const std::size_t k = logits.shape()[1];
  const auto mask = synth::nyquist_mask(f0_hz, k);
  auto probs = ad::softmax(synth::mask_above_nyquist(logits, f0_hz));
  std::vector<T> keep(mask.size());
  bool any_dead_row = false;
  for (std::size_t t = 0; t < f0_hz.size(); ++t) {
    bool alive = false;
    for (std::size_t j = 0; j < k; ++j) {
      keep[t * k + j] = mask[t * k + j] ? T(0) : T(1);
      alive = alive || !mask[t * k + j];
    }
    any_dead_row = any_dead_row || !alive;
  }
  if (!any_dead_row) return probs;
  return ad::mul(probs, logits.tape().constant(logits.shape(), std::move(keep)));
}

/// Differentiable encoder. `p` must hold every tensor of weight_specs(cfg).
template <class T>
synth::ControlVars<T> encode(const ControlTrack& track, const ParamMap<T>& p, const EncoderConfig& cfg) {
  cfg.validate();
  const std::size_t f = track.frames(), h = cfg.hidden_dim, K = cfg.K;
  auto& tape = p.begin()->second.tape();
  auto x = tape.constant({f, kInputChannels}, input_features<T>(track));
  std::vector<T> loud(track.loudness.begin(), track.loudness.end());
  auto loudness = tape.constant({f, 1}, std::move(loud));

  auto z = ad::conv1d(x, param(p, "in.w"), param(p, "in.b"));
  for (std::size_t st = 0; st < cfg.n_stacks; ++st)
    for (std::size_t b = 0; b < cfg.blocks_per_stack; ++b) {
      auto r = z;
      for (std::size_t c = 0; c < cfg.convs_per_block; ++c) {
        r = ad::leaky_relu(r, T(kLeakySlope));
        r = ad::conv1d(r, param(p, names::res(st, b, c, "w")), param(p, names::res(st, b, c, "b")),
                       c == 0 ? cfg.dilations[b] : 1);
      }
      z = ad::add(z, r);
    }
  if (z.shape() != ad::Shape{f, h}) throw ShapeError("encoder: trunk produced " + ad::to_string(z.shape()));
  z = film_modulate(z, loudness, film_params(p));

  auto y1 = mlp_head(z, p, 1, cfg);
  auto y2 = mlp_head(z, p, 2, cfg);

  synth::ControlVars<T> out;
  out.f0_hz.assign(track.f0_hz.begin(), track.f0_hz.end());
  const std::span<const T> f0(out.f0_hz);
  out.a = ad::reshape(ad::exp_sigmoid(ad::slice(y1, 1, 0, 1)), {f});
  out.c = harmonic_distribution(ad::slice(y1, 1, 1, K + 1), f0);
  out.a_tilde = ad::reshape(ad::exp_sigmoid(ad::slice(y1, 1, K + 1, K + 2)), {f});
  out.c_tilde = harmonic_distribution(ad::slice(y1, 1, K + 2, 2 * K + 2), f0);
  out.H = ad::exp_sigmoid(y2);
  return out;
}

inline synth::SynthControls<float> to_controls(const synth::ControlVars<float>& v, const EncoderConfig& cfg) {
  synth::SynthControls<float> s;
  auto copy = [](ad::Var<float> x) { return std::vector<float>(x.value().begin(), x.value().end()); };
  s.a = copy(v.a);
  s.a_tilde = copy(v.a_tilde);
  s.c = copy(v.c);
  s.c_tilde = copy(v.c_tilde);
  s.H = copy(v.H);
  s.f0_hz = v.f0_hz;
  s.harmonics = cfg.K;
  s.bands = cfg.M;
  return s;
}

/// Inference-only encode on plain weights.
inline synth::SynthControls<float> encode(const ControlTrack& track, const WeightSet& w, const EncoderConfig& cfg) {
  check_weights(w, cfg);
  ad::Tape<float> tape;
  return to_controls(encode<float>(track, bind(tape, w, false), cfg), cfg);
}

}  // namespace ddsp::encoder
