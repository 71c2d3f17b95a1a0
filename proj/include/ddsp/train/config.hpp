#pragma once

// Flat `key = value` run configuration with `#` comments.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ddsp/encoder/encoder.hpp"
#include "ddsp/io/dataset.hpp"
#include "ddsp/loss/adversarial.hpp"
#include "ddsp/loss/spectral.hpp"
#include "ddsp/synth/generator.hpp"

namespace ddsp::train {

struct TrainConfig {
  double lr_g = 3e-4;
  double lr_d = 3e-6;
  double beta1 = 0.9;
  double beta2 = 0.999;
  std::size_t batch_size = 32;
  double lambda = 5.0;
  std::size_t epochs = 6400;
  std::vector<std::size_t> milestones{2400, 4800};
  double milestone_gamma = 0.3;
  std::uint64_t seed = 0;
  std::size_t crop_frames = 200;
  std::size_t checkpoint_every = 0;  // epochs; 0 writes only the final checkpoint
  double noise_gamma = synth::kDefaultGamma;

  void validate() const {
    if (!(lr_g > 0) || !(lr_d > 0)) throw ConfigError("train config: learning rates must be positive");
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1))
      throw ConfigError("train config: betas must lie in [0, 1)");
    if (batch_size == 0) throw ConfigError("train config: batch_size must be >= 1");
    if (!(lambda >= 0)) throw ConfigError("train config: lambda must be >= 0");
    if (!(milestone_gamma > 0 && milestone_gamma < 1))
      throw ConfigError("train config: milestone_gamma must lie in (0, 1)");
    for (std::size_t i = 1; i < milestones.size(); ++i)
      if (milestones[i] <= milestones[i - 1]) throw ConfigError("train config: milestones must be strictly increasing");
    if (crop_frames == 0) throw ConfigError("train config: crop_frames must be >= 1");
    if (!(noise_gamma > 0)) throw ConfigError("train config: noise_gamma must be positive");
  }
};

/// Base rates scaled by gamma^(milestones <= epoch).
inline std::pair<double, double> lr_at_epoch(const TrainConfig& cfg, std::size_t epoch) {
  double f = 1.0;
  for (auto m : cfg.milestones)
    if (m <= epoch) f *= cfg.milestone_gamma;
  return {cfg.lr_g * f, cfg.lr_d * f};
}

struct RunConfig {
  TrainConfig train;
  encoder::EncoderConfig encoder;
  loss::MssConfig mss;
  loss::DiscriminatorConfig disc;
  io::SplitRatios split;

  void validate() const {
    train.validate();
    encoder.validate();
    mss.validate();
    disc.validate();
    const std::size_t crop_samples = train.crop_frames * kFrameSize;
    if (crop_samples < mss.max_fft())
      throw ConfigError("run config: crop of " + std::to_string(crop_samples) + " samples is shorter than mss fft " +
                        std::to_string(mss.max_fft()));
    if (train.lambda > 0)
      for (auto n : disc.fft_sizes)
        if (crop_samples < n)
          throw ConfigError("run config: crop is shorter than discriminator fft " + std::to_string(n));
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <class N>
N parse_number(const std::string& s, const std::string& where) {
  N v{};
  const auto* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end) throw ConfigError(where + ": cannot parse '" + s + "' as a number");
  return v;
}

template <class N>
std::vector<N> parse_list(const std::string& s, const std::string& where) {
  std::vector<N> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) out.push_back(parse_number<N>(trim(item), where));
  if (out.empty()) throw ConfigError(where + ": empty list");
  return out;
}

}  // namespace detail

/// Keys absent from the text keep their defaults. Unknown keys are errors.
inline RunConfig parse_run_config(const std::string& text, const std::string& origin = "config") {
  RunConfig c;
  std::stringstream in(text);
  std::string line;
  for (std::size_t no = 1; std::getline(in, line); ++no) {
    if (const auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = detail::trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(no);
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq)), val = detail::trim(line.substr(eq + 1));
    if (val.empty()) throw ConfigError(where + ": missing value for '" + key + "'");
    auto num = [&]<class N>(N& dst) { dst = detail::parse_number<N>(val, where); };
    auto list = [&]<class N>(std::vector<N>& dst) { dst = detail::parse_list<N>(val, where); };
    auto& t = c.train;
    auto& e = c.encoder;
    if (key == "lr_g") num(t.lr_g);
    else if (key == "lr_d") num(t.lr_d);
    else if (key == "beta1") num(t.beta1);
    else if (key == "beta2") num(t.beta2);
    else if (key == "batch_size") num(t.batch_size);
    else if (key == "lambda") num(t.lambda);
    else if (key == "epochs") num(t.epochs);
    else if (key == "milestones") {
      if (val == "none") t.milestones.clear();
      else list(t.milestones);
    }
    else if (key == "milestone_gamma") num(t.milestone_gamma);
    else if (key == "seed") num(t.seed);
    else if (key == "crop_frames") num(t.crop_frames);
    else if (key == "checkpoint_every") num(t.checkpoint_every);
    else if (key == "noise_gamma") num(t.noise_gamma);
    else if (key == "hidden_dim") num(e.hidden_dim);
    else if (key == "n_stacks") num(e.n_stacks);
    else if (key == "blocks_per_stack") num(e.blocks_per_stack);
    else if (key == "dilations") list(e.dilations);
    else if (key == "kernel") num(e.kernel);
    else if (key == "convs_per_block") num(e.convs_per_block);
    else if (key == "K") num(e.K);
    else if (key == "M") num(e.M);
    else if (key == "mlp_depth") num(e.mlp_depth);
    else if (key == "mss_fft_sizes") list(c.mss.fft_sizes);
    else if (key == "mss_overlap") num(c.mss.overlap);
    else if (key == "mss_alpha") num(c.mss.alpha);
    else if (key == "disc_fft_sizes") list(c.disc.fft_sizes);
    else if (key == "disc_overlap") num(c.disc.overlap);
    else if (key == "disc_channels") list(c.disc.channels);
    else if (key == "split_train") num(c.split.train);
    else if (key == "split_val") num(c.split.val);
    else if (key == "split_test") num(c.split.test);
    else throw ConfigError(where + ": unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

inline RunConfig read_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open config");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path);
}

}  // namespace ddsp::train
