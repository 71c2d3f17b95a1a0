// ddspvoc: feature extraction, synthesis, training, benchmarking and
// post-filter inspection for the articulatory DDSP vocoder.

#include <CLI11.hpp>
#include <Eigen/Core>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "ddsp/bench.hpp"
#include "ddsp/encoder/checkpoint.hpp"
#include "ddsp/io/dataset.hpp"
#include "ddsp/io/synthetic.hpp"
#include "ddsp/train/trainer.hpp"

using namespace ddsp;

namespace {

/// Runs f with failures re-labelled by the flag that supplied the file.
template <class F>
auto from_flag(const char* flag, const std::string& path, F&& f) {
  try {
    return f(path);
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string(flag) + " " + path + ": " + e.what());
  }
}

struct ExtractArgs {
  std::string wav, f0, ema, out;
};

void cmd_extract(const ExtractArgs& a) {
  const auto audio = from_flag("--wav", a.wav, io::read_wav);
  const auto f0 = from_flag("--f0", a.f0, io::read_features);
  const auto ema = from_flag("--ema", a.ema, io::read_features);
  if (f0.channels != 1) throw ConfigError("--f0 " + a.f0 + ": expected 1 channel, got " + std::to_string(f0.channels));
  if (ema.channels != encoder::kEmaChannels)
    throw ConfigError("--ema " + a.ema + ": expected 12 channels, got " + std::to_string(ema.channels));
  const auto loud = io::extract_loudness(audio);
  const std::size_t frames = std::min({loud.size(), f0.frames, ema.frames});
  if (frames == 0) throw InvalidArgument("extract: no overlapping frames");
  encoder::ControlTrack t;
  t.ema.assign(ema.data.begin(), ema.data.begin() + static_cast<std::ptrdiff_t>(frames * encoder::kEmaChannels));
  for (std::size_t i = 0; i < frames; ++i) {
    const float v = f0.data[i];
    t.f0_hz.push_back(std::isfinite(v) && v > 0.0f ? v : 0.0f);
  }
  t.loudness.assign(loud.begin(), loud.begin() + static_cast<std::ptrdiff_t>(frames));
  io::write_features(a.out, io::combine_features(t));
  std::printf("wrote %s: %zu frames (%.3f s)\n", a.out.c_str(), frames, static_cast<double>(frames) / kFrameRateHz);
}

struct SynthArgs {
  std::string features, checkpoint, out, decompose;
  std::uint64_t seed = 0;
  double gamma = synth::kDefaultGamma;
};

void cmd_synth(const SynthArgs& a) {
  const auto ck = from_flag("--checkpoint", a.checkpoint, encoder::load_checkpoint);
  const auto feats = from_flag("--features", a.features, io::read_features);
  auto track = io::split_features(feats, a.features);
  io::EmaNorm::load(ck.aux).apply(track);
  const auto controls = encoder::encode(track, ck.generator, ck.config);
  const auto out = synth::synthesize(controls, ck.generator.at(encoder::names::kPostKernel).data, FrameGrid{}, a.gamma,
                                     a.seed);
  io::write_wav(a.out, out.final);
  if (!a.decompose.empty()) {
    const std::filesystem::path dir(a.decompose);
    std::filesystem::create_directories(dir);
    io::write_wav((dir / "harmonic.wav").string(), out.harmonic);
    io::write_wav((dir / "noise.wav").string(), out.noise);
    io::write_wav((dir / "mixed.wav").string(), out.mixed_pre_post);
  }
  std::printf("wrote %s: %zu samples (%.3f s)\n", a.out.c_str(), out.final.size(), out.final.seconds());
}

struct TrainArgs {
  std::string manifest, config, out, resume;
  std::optional<double> lambda;
  bool quiet = false;
};

void cmd_train(const TrainArgs& a) {
  auto cfg = train::read_run_config(a.config);
  if (a.lambda) {
    cfg.train.lambda = *a.lambda;
    cfg.validate();
  }
  auto records = from_flag("--manifest", a.manifest, io::load_dataset);
  std::optional<std::string> resume;
  if (!a.resume.empty()) resume = a.resume;
  const auto s = train::run_training(std::move(records), cfg, a.out, resume,
                                     [&](const train::EpochMetrics& m, const train::TrainState&) {
                                       if (!a.quiet) std::printf("%s\n", train::metrics_row(m).c_str());
                                     });
  std::printf("trained %llu epochs (%llu steps); checkpoint %s\n", static_cast<unsigned long long>(s.epoch),
              static_cast<unsigned long long>(s.step),
              (std::filesystem::path(a.out) / "final.ckpt").string().c_str());
}

struct BenchArgs {
  std::string checkpoint, csv;
  double min_s = 0.5, max_s = 10.0, step_s = 0.5;
  std::size_t repeats = 50;
  std::uint64_t seed = 0;
};

void cmd_bench(const BenchArgs& a) {
  Eigen::setNbThreads(1);
  const auto ck = from_flag("--checkpoint", a.checkpoint, encoder::load_checkpoint);
  auto r = bench::run_bench(ck.generator, ck.config, bench::duration_grid(a.min_s, a.max_s, a.step_s), a.repeats,
                            a.seed);
  r.threads = Eigen::nbThreads();
  const auto csv = bench::to_csv(r);
  if (a.csv.empty()) std::fputs(csv.c_str(), stdout);
  else io::write_file(a.csv, std::vector<char>(csv.begin(), csv.end()));
  std::fputs(bench::summary(r).c_str(), stdout);
}

struct FilterArgs {
  std::string checkpoint, out;
  std::size_t points = 512;
};

void cmd_filter_response(const FilterArgs& a) {
  const auto ck = from_flag("--checkpoint", a.checkpoint, encoder::load_checkpoint);
  const auto& k = ck.generator.at(encoder::names::kPostKernel).data;
  const auto mag = synth::filter_frequency_response(std::span<const float>(k), a.points);
  std::string csv = "omega_over_pi,magnitude\n";
  char buf[96];
  for (std::size_t i = 0; i < mag.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.9g,%.9g\n", static_cast<double>(i) / static_cast<double>(a.points - 1), mag[i]);
    csv += buf;
  }
  io::write_file(a.out, std::vector<char>(csv.begin(), csv.end()));
}

struct InitArgs {
  std::string config, out;
  std::optional<std::uint64_t> seed;
};

void cmd_init(const InitArgs& a) {
  auto cfg = a.config.empty() ? train::RunConfig{} : train::read_run_config(a.config);
  if (a.seed) cfg.train.seed = *a.seed;
  auto s = train::init_state(cfg);
  io::EmaNorm{}.store(s.aux);
  encoder::save_checkpoint(a.out, train::to_checkpoint(s));
  std::printf("wrote %s: %zu generator parameters\n", a.out.c_str(), encoder::param_count(s.generator));
}

struct SyntheticArgs {
  std::string out;
  double seconds = 2.0;
  std::size_t partials = 16;
  std::uint64_t seed = 0;
};

/// Writes <out>/synthetic.wav, synthetic.feat and manifest.tsv.
void cmd_synthetic(const SyntheticArgs& a) {
  io::SyntheticSpec sp;
  sp.seconds = a.seconds;
  sp.max_partials = a.partials;
  const auto rec = io::synthetic_utterance(sp, a.seed, "synthetic");
  const std::filesystem::path dir(a.out);
  std::filesystem::create_directories(dir);
  io::write_wav((dir / "synthetic.wav").string(), rec.audio);
  io::write_features((dir / "synthetic.feat").string(), io::combine_features(rec.track));
  const std::string manifest = "synthetic\tsynthetic.wav\tsynthetic.feat\n";
  io::write_file((dir / "manifest.tsv").string(), std::vector<char>(manifest.begin(), manifest.end()));
  std::printf("wrote %s: %zu frames (%.3f s)\n", (dir / "manifest.tsv").string().c_str(), rec.track.frames(),
              rec.audio.seconds());
}

std::string one_line(std::string s) {
  for (auto& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Articulatory DDSP vocoder"};
  app.require_subcommand(1);

  ExtractArgs ex;
  auto* extract = app.add_subcommand("extract", "Combine WAV, F0 and EMA into a 14-channel feature file");
  extract->add_option("--wav", ex.wav, "16 kHz mono PCM16 WAV")->required();
  extract->add_option("--f0", ex.f0, "1-channel feature file (Hz, 0 = unvoiced)")->required();
  extract->add_option("--ema", ex.ema, "12-channel feature file")->required();
  extract->add_option("--out", ex.out, "Output feature file")->required();

  SynthArgs sy;
  auto* synth_cmd = app.add_subcommand("synth", "Synthesize a WAV from features and a checkpoint");
  synth_cmd->add_option("--features", sy.features)->required();
  synth_cmd->add_option("--checkpoint", sy.checkpoint)->required();
  synth_cmd->add_option("--out", sy.out)->required();
  synth_cmd->add_option("--decompose", sy.decompose, "Directory for harmonic.wav, noise.wav, mixed.wav");
  synth_cmd->add_option("--seed", sy.seed, "Noise seed");
  synth_cmd->add_option("--gamma", sy.gamma, "Noise scale");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train from a manifest and a key = value config");
  train_cmd->add_option("--manifest", tr.manifest)->required();
  train_cmd->add_option("--config", tr.config)->required();
  train_cmd->add_option("--out", tr.out, "Output directory")->required();
  train_cmd->add_option("--resume", tr.resume, "Checkpoint to continue from");
  train_cmd->add_option("--lambda", tr.lambda, "Override the adversarial weight");
  train_cmd->add_flag("--quiet", tr.quiet, "Do not print per-epoch metrics");

  BenchArgs be;
  auto* bench_cmd = app.add_subcommand("bench", "Time encode + synthesize on random features");
  bench_cmd->add_option("--checkpoint", be.checkpoint)->required();
  bench_cmd->add_option("--min-s", be.min_s);
  bench_cmd->add_option("--max-s", be.max_s);
  bench_cmd->add_option("--step-s", be.step_s);
  bench_cmd->add_option("--repeats", be.repeats)->check(CLI::PositiveNumber);
  bench_cmd->add_option("--seed", be.seed);
  bench_cmd->add_option("--csv", be.csv, "Write the per-duration CSV here instead of stdout");

  FilterArgs fr;
  auto* filt = app.add_subcommand("filter-response", "Export the post filter magnitude response as CSV");
  filt->add_option("--checkpoint", fr.checkpoint)->required();
  filt->add_option("--out", fr.out)->required();
  filt->add_option("--points", fr.points)->check(CLI::Range(std::size_t{2}, std::size_t{1} << 20));

  InitArgs in;
  auto* init = app.add_subcommand("init", "Write a freshly initialized checkpoint");
  init->add_option("--out", in.out)->required();
  init->add_option("--config", in.config, "key = value config for the architecture");
  init->add_option("--seed", in.seed);

  SyntheticArgs sa;
  auto* synthetic = app.add_subcommand("synthetic", "Write a vibrato sawtooth + noise burst utterance and its manifest");
  synthetic->add_option("--out", sa.out, "Output directory")->required();
  synthetic->add_option("--seconds", sa.seconds)->check(CLI::PositiveNumber);
  synthetic->add_option("--partials", sa.partials, "Sawtooth partials (0 = all below Nyquist)");
  synthetic->add_option("--seed", sa.seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error: %s\n", one_line(e.what()).c_str());
    return 2;
  }

  try {
    if (extract->parsed()) cmd_extract(ex);
    else if (synth_cmd->parsed()) cmd_synth(sy);
    else if (train_cmd->parsed()) cmd_train(tr);
    else if (bench_cmd->parsed()) cmd_bench(be);
    else if (filt->parsed()) cmd_filter_response(fr);
    else if (init->parsed()) cmd_init(in);
    else if (synthetic->parsed()) cmd_synthetic(sa);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", one_line(e.what()).c_str());
    return 1;
  }
  return 0;
}
