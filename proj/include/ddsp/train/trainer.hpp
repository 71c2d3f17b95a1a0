#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ddsp/encoder/checkpoint.hpp"
#include "ddsp/train/config.hpp"
#include "ddsp/train/optimizer.hpp"

namespace ddsp::train {

/// splitmix64 finalizer over a running combination; used to derive every
/// per-epoch and per-step seed from the run seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  std::uint64_t z = seed;
  for (std::uint64_t v : {a, b}) {
    z += 0x9E3779B97F4A7C15ull + v;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    z ^= z >> 31;
  }
  return z;
}

/// FNV-1a over names, shapes and raw float bits.
inline std::uint64_t weight_hash(const encoder::WeightSet& w) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto eat = [&](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) h = (h ^ b[i]) * 0x100000001b3ull;
  };
  for (const auto& [name, t] : w.tensors) {
    eat(name.data(), name.size());
    for (auto d : t.shape) eat(&d, sizeof d);
    eat(t.data.data(), t.data.size() * sizeof(float));
  }
  return h;
}

struct TrainState {
  encoder::EncoderConfig encoder;
  encoder::WeightSet generator;
  loss::DiscriminatorSet disc;
  encoder::WeightSet aux;
  OptimizerState opt_g, opt_d;
  std::uint64_t epoch = 0;  // epochs completed
  std::uint64_t step = 0;   // batches completed

  bool operator==(const TrainState& o) const {
    return encoder == o.encoder && weight_hash(generator) == weight_hash(o.generator) &&
           weight_hash(disc.weights) == weight_hash(o.disc.weights) && opt_g == o.opt_g && opt_d == o.opt_d &&
           epoch == o.epoch && step == o.step;
  }
};

inline TrainState init_state(const RunConfig& cfg) {
  cfg.validate();
  TrainState s;
  s.encoder = cfg.encoder;
  s.generator = encoder::init_weights(cfg.encoder, mix_seed(cfg.train.seed, 1));
  s.disc = loss::init_discriminators(cfg.disc, mix_seed(cfg.train.seed, 2));
  return s;
}

inline encoder::Checkpoint to_checkpoint(const TrainState& s) {
  encoder::Checkpoint ck;
  ck.config = s.encoder;
  for (auto n : s.disc.config.fft_sizes) ck.disc_fft_sizes.push_back(static_cast<std::uint32_t>(n));
  ck.generator = s.generator;
  ck.discriminator = s.disc.weights;
  ck.aux = s.aux;
  io::Writer w;
  w.raw(encoder::kOptimizerMagic);
  w.u64(s.epoch);
  w.u64(s.step);
  write_state(w, s.opt_g);
  write_state(w, s.opt_d);
  ck.optimizer_block = w.bytes();
  return ck;
}

/// Recovers discriminator layer widths from the stored direction tensors.
inline loss::DiscriminatorConfig disc_config_from(const encoder::Checkpoint& ck, double overlap) {
  loss::DiscriminatorConfig c;
  c.overlap = overlap;
  c.fft_sizes.assign(ck.disc_fft_sizes.begin(), ck.disc_fft_sizes.end());
  c.channels.clear();
  if (c.fft_sizes.empty()) throw ConfigError("checkpoint: no discriminator resolutions");
  for (std::size_t l = 0;; ++l) {
    const auto name = loss::names::disc(0, l, "v");
    if (!ck.discriminator.contains(name)) break;
    const auto& sh = ck.discriminator.at(name).shape;
    if (sh.size() != 4) throw ConfigError("checkpoint: bad discriminator tensor " + name);
    c.channels.push_back(sh[3]);
  }
  if (c.channels.size() < 2 || c.channels.back() != 1) throw ConfigError("checkpoint: malformed discriminator");
  c.channels.pop_back();
  return c;
}

/// Discriminator tensors must be exactly those of a fresh set with config c.
inline void check_discriminator(const loss::DiscriminatorSet& d) {
  const auto ref = loss::init_discriminators(d.config, 0);
  if (ref.weights.tensors.size() != d.weights.tensors.size())
    throw ConfigError("checkpoint: discriminator tensor count mismatch");
  for (const auto& [name, t] : ref.weights.tensors)
    if (!d.weights.contains(name) || d.weights.at(name).shape != t.shape)
      throw ConfigError("checkpoint: discriminator tensor '" + name + "' missing or misshapen");
}

inline TrainState from_checkpoint(const encoder::Checkpoint& ck, double disc_overlap = 0.75) {
  TrainState s;
  s.encoder = ck.config;
  s.generator = ck.generator;
  s.disc.config = disc_config_from(ck, disc_overlap);
  s.disc.weights = ck.discriminator;
  check_discriminator(s.disc);
  s.aux = ck.aux;
  if (!ck.optimizer_block.empty()) {
    io::Reader r(ck.optimizer_block, "optimizer block");
    r.expect_magic(encoder::kOptimizerMagic);
    s.epoch = r.u64("epoch");
    s.step = r.u64("step");
    s.opt_g = read_state(r);
    s.opt_d = read_state(r);
    if (!r.at_end()) r.fail("trailing bytes");
    check_state(s.opt_g, s.generator, "generator");
    check_state(s.opt_d, s.disc.weights, "discriminator");
  }
  return s;
}

inline bool same_layout(const loss::DiscriminatorConfig& a, const loss::DiscriminatorConfig& b) {
  return a.fft_sizes == b.fft_sizes && a.channels == b.channels && a.overlap == b.overlap;
}

/// Swaps in a fresh discriminator with layout c. Only allowed while the
/// current one has never been updated (e.g. after a lambda = 0 phase).
inline void reset_discriminator(TrainState& s, const loss::DiscriminatorConfig& c, std::uint64_t seed) {
  if (s.opt_d.step != 0)
    throw ConfigError("discriminator layout differs from a checkpoint whose discriminator is trained");
  s.disc = loss::init_discriminators(c, mix_seed(seed, 2));
  s.opt_d = {};
}

struct BatchResult {
  Gradients grad_g, grad_d;  // batch means
  double mss = 0, l_g = 0, l_d = 0;
  std::size_t items = 0;
};

struct BatchItem {
  const io::Crop* crop;
  std::string id;
};

namespace detail {

inline void accumulate(Gradients& acc, const std::string& name, const std::vector<float>& g) {
  auto [it, fresh] = acc.try_emplace(name, g);
  if (!fresh)
    for (std::size_t i = 0; i < g.size(); ++i) it->second[i] += g[i];
}

}  // namespace detail

/// Forward and backward for each crop on its own tape; gradients are summed
/// in batch order, then divided by the batch size. With lambda == 0 the
/// discriminator is not evaluated and l_d is 0.
inline BatchResult batch_gradients(const TrainState& s, const std::vector<BatchItem>& batch, const RunConfig& cfg,
                                   std::uint64_t step) {
  if (batch.empty()) throw InvalidArgument("batch_gradients: empty batch");
  const double lambda = cfg.train.lambda;
  BatchResult out;
  for (std::size_t j = 0; j < batch.size(); ++j) {
    const auto& crop = *batch[j].crop;
    try {
      ad::Tape<float> tape;
      const auto gp = encoder::bind(tape, s.generator, true);
      const auto dp = encoder::bind(tape, s.disc.weights, lambda > 0);
      const auto controls = encoder::encode(crop.track, gp, s.encoder);
      const auto y_hat = synth::synthesize(controls, encoder::param(gp, encoder::names::kPostKernel), FrameGrid{},
                                           cfg.train.noise_gamma, mix_seed(mix_seed(cfg.train.seed, 3), step, j))
                             .final;
      const auto y = tape.leaf_view({crop.audio.size()}, std::span<const float>(crop.audio.samples), false);
      ad::Var<float> l_g, l_d, mss;
      if (lambda > 0) {
        const auto l = loss::total_losses(y, y_hat, dp, s.disc.config, cfg.mss, lambda);
        l_g = l.l_g;
        l_d = l.l_d;
        mss = l.mss;
      } else {
        mss = l_g = loss::mss_loss(y, y_hat, cfg.mss);
      }
      const double vg = l_g.item(), vm = mss.item(), vd = l_d.valid() ? static_cast<double>(l_d.item()) : 0.0;
      if (!std::isfinite(vg) || !std::isfinite(vd)) throw NumericError("non-finite loss");
      tape.backward(l_g);
      for (const auto& [name, v] : gp) detail::accumulate(out.grad_g, name, tape.grad(v));
      if (l_d.valid()) {
        tape.backward(l_d);
        for (const auto& [name, v] : dp) detail::accumulate(out.grad_d, name, tape.grad(v));
      }
      out.mss += vm;
      out.l_g += vg;
      out.l_d += vd;
    } catch (const NumericError& e) {
      throw NumericError("training aborted at step " + std::to_string(step) + ", batch item " + std::to_string(j) +
                         " (utterance " + batch[j].id + ", crop offset " + std::to_string(crop.offset) +
                         " frames): " + e.what());
    }
  }
  const auto n = static_cast<float>(batch.size());
  for (auto* g : {&out.grad_g, &out.grad_d})
    for (auto& [name, v] : *g)
      for (auto& x : v) x /= n;
  out.items = batch.size();
  out.mss /= n;
  out.l_g /= n;
  out.l_d /= n;
  return out;
}

inline void discriminator_update(TrainState& s, const BatchResult& b, double lr, const TrainConfig& cfg) {
  if (b.grad_d.empty()) return;
  adam_step(s.disc.weights, b.grad_d, s.opt_d, lr, cfg.beta1, cfg.beta2);
}

inline void generator_update(TrainState& s, const BatchResult& b, double lr, const TrainConfig& cfg) {
  adam_step(s.generator, b.grad_g, s.opt_g, lr, cfg.beta1, cfg.beta2);
}

struct EpochMetrics {
  std::uint64_t epoch = 0;  // zero-based index of the completed epoch
  std::uint64_t step = 0;   // batches completed after it
  double mss = 0, l_g = 0, l_d = 0, lr_g = 0, lr_d = 0;
};

inline constexpr const char* kMetricsHeader = "epoch,step,mss,l_g,l_d,lr_g,lr_d";

inline std::string metrics_row(const EpochMetrics& m) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%llu,%llu,%.9g,%.9g,%.9g,%.9g,%.9g", static_cast<unsigned long long>(m.epoch),
                static_cast<unsigned long long>(m.step), m.mss, m.l_g, m.l_d, m.lr_g, m.lr_d);
  return buf;
}

using EpochCallback = std::function<void(const EpochMetrics&, const TrainState&)>;

/// Runs epochs s.epoch .. cfg.train.epochs - 1. Each epoch visits every record
/// once in a seeded order with one seeded crop each; records shorter than the
/// crop are skipped. Per batch: one discriminator update, then one generator
/// update, both from gradients taken at the batch-start weights.
inline std::vector<EpochMetrics> train_loop(const std::vector<io::UtteranceRecord>& records, const RunConfig& cfg,
                                            TrainState& s, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (records.empty()) throw InvalidArgument("train_loop: empty training split");
  if (!(s.encoder == cfg.encoder)) throw ConfigError("train_loop: state encoder config differs from run config");
  if (!same_layout(s.disc.config, cfg.disc))
    throw ConfigError("train_loop: state discriminator layout differs from run config");
  std::vector<EpochMetrics> log;
  const auto& tc = cfg.train;
  for (; s.epoch < tc.epochs;) {
    const auto [lr_g, lr_d] = lr_at_epoch(tc, s.epoch);
    std::vector<std::size_t> order(records.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(mix_seed(mix_seed(tc.seed, 4), s.epoch));
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<io::Crop> crops;
    std::vector<std::string> ids;
    for (auto i : order) {
      auto c = io::align_and_crop(records[i], tc.crop_frames, mix_seed(mix_seed(tc.seed, 5), s.epoch, i));
      if (!c) continue;
      crops.push_back(std::move(*c));
      ids.push_back(records[i].id);
    }
    if (crops.empty())
      throw InvalidArgument("train_loop: every utterance is shorter than crop_frames " +
                            std::to_string(tc.crop_frames));
    EpochMetrics m;
    m.epoch = s.epoch;
    m.lr_g = lr_g;
    m.lr_d = lr_d;
    for (std::size_t b0 = 0; b0 < crops.size(); b0 += tc.batch_size) {
      std::vector<BatchItem> batch;
      for (std::size_t j = b0; j < std::min(crops.size(), b0 + tc.batch_size); ++j) batch.push_back({&crops[j], ids[j]});
      const auto r = batch_gradients(s, batch, cfg, s.step);
      discriminator_update(s, r, lr_d, tc);
      generator_update(s, r, lr_g, tc);
      ++s.step;
      const auto w = static_cast<double>(r.items);
      m.mss += r.mss * w;
      m.l_g += r.l_g * w;
      m.l_d += r.l_d * w;
    }
    const auto n = static_cast<double>(crops.size());
    m.mss /= n;
    m.l_g /= n;
    m.l_d /= n;
    m.step = s.step;
    ++s.epoch;
    log.push_back(m);
    if (on_epoch) on_epoch(m, s);
  }
  return log;
}

/// Normalizes EMA on the train split, trains, and writes `metrics.csv`,
/// periodic `epoch_N.ckpt` and `final.ckpt` under out_dir. Resuming appends
/// to the existing metrics file.
inline TrainState run_training(std::vector<io::UtteranceRecord> records, const RunConfig& cfg,
                               const std::string& out_dir, const std::optional<std::string>& resume = {},
                               const EpochCallback& progress = {}) {
  namespace fs = std::filesystem;
  cfg.validate();
  std::vector<std::string> ids;
  for (const auto& r : records) ids.push_back(r.id);
  const auto splits = io::split_dataset(ids, cfg.split, cfg.train.seed);
  std::vector<io::UtteranceRecord> train;
  for (std::size_t i = 0; i < records.size(); ++i)
    if (splits[i] == io::Split::train) train.push_back(std::move(records[i]));
  if (train.empty()) throw InvalidArgument("run_training: empty training split");

  TrainState s;
  if (resume) {
    s = from_checkpoint(encoder::load_checkpoint(*resume), cfg.disc.overlap);
    if (!(s.encoder == cfg.encoder)) throw ConfigError(*resume + ": encoder config differs from the run config");
    if (!same_layout(s.disc.config, cfg.disc)) reset_discriminator(s, cfg.disc, cfg.train.seed);
  } else {
    s = init_state(cfg);
    std::vector<const encoder::ControlTrack*> tracks;
    for (const auto& r : train) tracks.push_back(&r.track);
    io::EmaNorm::fit(tracks).store(s.aux);
  }
  const auto norm = io::EmaNorm::load(s.aux);
  for (auto& r : train) norm.apply(r.track);

  fs::create_directories(out_dir);
  const auto dir = fs::path(out_dir);
  const auto csv_path = dir / "metrics.csv";
  const bool append = resume && fs::exists(csv_path);
  std::ofstream csv(csv_path, append ? std::ios::app : std::ios::trunc);
  if (!csv) throw FormatError(csv_path.string() + ": cannot open for writing");
  if (!append) csv << kMetricsHeader << '\n' << std::flush;

  const auto every = cfg.train.checkpoint_every;
  try {
    train_loop(train, cfg, s, [&](const EpochMetrics& m, const TrainState& st) {
      csv << metrics_row(m) << '\n' << std::flush;
      if (progress) progress(m, st);
      if (every > 0 && st.epoch % every == 0)
        encoder::save_checkpoint((dir / ("epoch_" + std::to_string(st.epoch) + ".ckpt")).string(), to_checkpoint(st));
    });
  } catch (const NumericError& e) {
    std::ofstream(dir / "abort.txt") << e.what() << '\n';
    throw;
  }
  encoder::save_checkpoint((dir / "final.ckpt").string(), to_checkpoint(s));
  return s;
}

}  // namespace ddsp::train
