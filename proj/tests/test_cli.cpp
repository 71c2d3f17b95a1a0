#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ddsp/encoder/checkpoint.hpp"
#include "ddsp/io/synthetic.hpp"
#include "ddsp/synth/post_filter.hpp"

using namespace ddsp;
namespace fs = std::filesystem;

#ifndef DDSPVOC_PATH
#error "DDSPVOC_PATH must name the ddspvoc binary"
#endif

namespace {

struct Result {
  int code;
  std::string out, err;
};

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("ddsp_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()) + "_" +
            std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  Result run(const std::string& args) const {
    const auto o = path("stdout.txt"), e = path("stderr.txt");
    const std::string cmd = std::string(DDSPVOC_PATH) + " " + args + " >" + o + " 2>" + e;
    const int status = std::system(cmd.c_str());
    return {WEXITSTATUS(status), slurp(o), slurp(e)};
  }

  static std::string slurp(const std::string& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  void write_text(const std::string& name, const std::string& text) const { std::ofstream(path(name)) << text; }

  // A small architecture keeps init/synth/train fast.
  std::string tiny_config(const std::string& extra = "") const {
    write_text("tiny.cfg",
               "hidden_dim = 8\nn_stacks = 1\nblocks_per_stack = 2\ndilations = 1, 2\nK = 4\nM = 5\n"
               "mlp_depth = 1\nmss_fft_sizes = 256, 128, 64\ndisc_fft_sizes = 256, 128\ndisc_channels = 2, 2, 2, 2\n"
               "crop_frames = 8\nbatch_size = 2\nmilestones = none\nsplit_train = 1\nsplit_val = 0\nsplit_test = 0\n" +
                   extra);
    return path("tiny.cfg");
  }

  std::string tiny_checkpoint() const {
    const auto cfg = tiny_config();
    EXPECT_EQ(run("init --config " + cfg + " --out " + path("init.ckpt")).code, 0);
    return path("init.ckpt");
  }

  std::string feature_file(std::size_t frames, std::size_t channels = 14) const {
    io::SyntheticSpec sp;
    sp.seconds = static_cast<double>(frames) / kFrameRateHz;
    const auto r = io::synthetic_utterance(sp, 1);
    auto f = io::combine_features(r.track);
    if (channels == 12) {
      io::FeatureFile e{12, f.frames, {}};
      for (std::size_t i = 0; i < f.frames; ++i)
        for (std::size_t c = 0; c < 12; ++c) e.data.push_back(f.at(i, c));
      f = e;
    }
    io::write_features(path("feat.artf"), f);
    return path("feat.artf");
  }

  fs::path dir_;
};

void expect_single_error_line(const Result& r) {
  EXPECT_NE(r.code, 0);
  ASSERT_TRUE(r.err.starts_with("error: ")) << r.err;
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1) << r.err;
}

}  // namespace

TEST_F(Cli, ExtractTwoSecondsGivesFourHundredFrames) {
  const auto rec = io::synthetic_utterance({}, 3);
  io::write_wav(path("a.wav"), rec.audio);
  io::FeatureFile f0{1, rec.frames(), rec.track.f0_hz};
  io::FeatureFile ema{12, rec.frames() + 7, rec.track.ema};
  ema.data.resize(12 * ema.frames, 0.5f);  // longer track is truncated
  io::write_features(path("f0.artf"), f0);
  io::write_features(path("ema.artf"), ema);
  const auto r = run("extract --wav " + path("a.wav") + " --f0 " + path("f0.artf") + " --ema " + path("ema.artf") +
                     " --out " + path("out.artf"));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto out = io::read_features(path("out.artf"));
  EXPECT_EQ(out.channels, 14u);
  EXPECT_EQ(out.frames, 400u);
  const auto t = io::split_features(out);
  EXPECT_EQ(t.f0_hz, rec.track.f0_hz);
  EXPECT_EQ(t.ema, std::vector<float>(rec.track.ema.begin(), rec.track.ema.end()));
  const auto quantized = io::read_wav(path("a.wav"));
  EXPECT_EQ(t.loudness, io::extract_loudness(quantized));
}

TEST_F(Cli, ExtractSilenceAndMissingFile) {
  AudioBuffer silent;
  silent.samples.assign(8000, 0.0f);
  io::write_wav(path("s.wav"), silent);
  io::write_features(path("f0.artf"), io::FeatureFile{1, 100, std::vector<float>(100, 120.0f)});
  io::write_features(path("ema.artf"), io::FeatureFile{12, 100, std::vector<float>(1200, 0.0f)});
  ASSERT_EQ(run("extract --wav " + path("s.wav") + " --f0 " + path("f0.artf") + " --ema " + path("ema.artf") +
                " --out " + path("o.artf"))
                .code,
            0);
  for (float v : io::split_features(io::read_features(path("o.artf"))).loudness) EXPECT_EQ(v, 0.0f);

  const auto r = run("extract --wav " + path("s.wav") + " --f0 " + path("nope.artf") + " --ema " + path("ema.artf") +
                     " --out " + path("o.artf"));
  expect_single_error_line(r);
  EXPECT_NE(r.err.find("--f0"), std::string::npos) << r.err;
  const auto usage = run("extract --wav " + path("s.wav") + " --ema " + path("ema.artf") + " --out x");
  expect_single_error_line(usage);
  EXPECT_NE(usage.err.find("--f0"), std::string::npos) << usage.err;
}

TEST_F(Cli, SynthLengthDeterminismAndDecomposition) {
  const auto ck = tiny_checkpoint();
  const auto feats = feature_file(200);
  const std::string base = "synth --features " + feats + " --checkpoint " + ck + " --seed 9";
  ASSERT_EQ(run(base + " --out " + path("a.wav") + " --decompose " + path("parts")).code, 0);
  ASSERT_EQ(run(base + " --out " + path("b.wav")).code, 0);
  EXPECT_EQ(io::read_file(path("a.wav")), io::read_file(path("b.wav")));
  const auto a = io::read_wav(path("a.wav"));
  EXPECT_EQ(a.size(), 16000u);
  EXPECT_DOUBLE_EQ(a.seconds(), 200.0 / kFrameRateHz);
  const auto h = io::read_wav(path("parts/harmonic.wav")), n = io::read_wav(path("parts/noise.wav")),
             m = io::read_wav(path("parts/mixed.wav"));
  // Each file is rounded to 16 bits independently.
  for (std::size_t i = 0; i < m.size(); ++i) EXPECT_LE(std::abs(h.samples[i] + n.samples[i] - m.samples[i]), 1.5f / 32768);
  ASSERT_EQ(run("synth --features " + feats + " --checkpoint " + ck + " --seed 10 --out " + path("c.wav")).code, 0);
  EXPECT_NE(io::read_file(path("a.wav")), io::read_file(path("c.wav")));
}

TEST_F(Cli, SynthRejectsMismatchedFeatures) {
  const auto ck = tiny_checkpoint();
  const auto r = run("synth --features " + feature_file(50, 12) + " --checkpoint " + ck + " --out " + path("x.wav"));
  expect_single_error_line(r);
  EXPECT_NE(r.err.find("14"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(path("x.wav")));
}

TEST_F(Cli, TrainZeroEpochsWritesInitialCheckpoint) {
  io::SyntheticSpec sp;
  sp.seconds = 0.1;
  io::write_wav(path("u.wav"), io::synthetic_utterance(sp, 1).audio);
  io::write_features(path("u.artf"), io::combine_features(io::synthetic_utterance(sp, 1).track));
  write_text("m.tsv", "u\tu.wav\tu.artf\n");
  const auto r = run("train --manifest " + path("m.tsv") + " --config " + tiny_config("epochs = 0\n") + " --out " +
                     path("run"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(path("run/final.ckpt")));
  EXPECT_EQ(slurp(path("run/metrics.csv")), "epoch,step,mss,l_g,l_d,lr_g,lr_d\n");
  const auto ck = encoder::load_checkpoint(path("run/final.ckpt"));
  EXPECT_EQ(ck.config.hidden_dim, 8u);
}

TEST_F(Cli, TrainLambdaZeroLogsZeroDiscriminatorLoss) {
  io::SyntheticSpec sp;
  sp.seconds = 0.1;
  for (int i = 0; i < 2; ++i) {
    const auto rec = io::synthetic_utterance(sp, static_cast<std::uint64_t>(i));
    io::write_wav(path("u" + std::to_string(i) + ".wav"), rec.audio);
    io::write_features(path("u" + std::to_string(i) + ".artf"), io::combine_features(rec.track));
  }
  write_text("m.tsv", "u0\tu0.wav\tu0.artf\nu1\tu1.wav\tu1.artf\n");
  const auto r = run("train --quiet --manifest " + path("m.tsv") + " --config " + tiny_config("epochs = 3\n") +
                     " --lambda 0 --out " + path("run"));
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream csv(slurp(path("run/metrics.csv")));
  std::string line;
  std::getline(csv, line);
  std::size_t rows = 0;
  while (std::getline(csv, line)) {
    ++rows;
    std::vector<std::string> cols;
    std::stringstream ls(line);
    for (std::string c; std::getline(ls, c, ',');) cols.push_back(c);
    ASSERT_EQ(cols.size(), 7u);
    EXPECT_EQ(cols[4], "0");
    EXPECT_TRUE(std::isfinite(std::stod(cols[2])));
  }
  EXPECT_EQ(rows, 3u);
}

TEST_F(Cli, TrainReportsConfigErrors) {
  write_text("bad.cfg", "hidden_dim = 8\nwhat = 1\n");
  write_text("m.tsv", "u\tu.wav\tu.artf\n");
  const auto r = run("train --manifest " + path("m.tsv") + " --config " + path("bad.cfg") + " --out " + path("run"));
  expect_single_error_line(r);
  EXPECT_NE(r.err.find("bad.cfg:2"), std::string::npos) << r.err;
}

TEST_F(Cli, BenchSingleRepeatHasZeroStd) {
  const auto ck = tiny_checkpoint();
  const auto r = run("bench --checkpoint " + ck + " --min-s 0.5 --max-s 1.0 --step-s 0.5 --repeats 1 --csv " +
                     path("b.csv"));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto csv = slurp(path("b.csv"));
  EXPECT_TRUE(csv.starts_with("input_seconds,repeats,mean_s_per_1s,std_s_per_1s\n0.500,1,")) << csv;
  EXPECT_NE(csv.find("\nall,1,"), std::string::npos);
  EXPECT_TRUE(csv.ends_with(",0\n")) << csv;
  EXPECT_NE(r.out.find("model_params " + std::to_string(encoder::param_count(encoder::load_checkpoint(ck).generator))),
            std::string::npos)
      << r.out;
  EXPECT_NE(r.out.find("threads 1"), std::string::npos);
}

TEST_F(Cli, FilterResponseOfIdentityIsFlat) {
  const auto ck = tiny_checkpoint();
  ASSERT_EQ(run("filter-response --checkpoint " + ck + " --out " + path("r.csv")).code, 0);
  std::istringstream in(slurp(path("r.csv")));
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "omega_over_pi,magnitude");
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    EXPECT_NEAR(std::stod(line.substr(line.find(',') + 1)), 1.0, 1e-6);
  }
  EXPECT_EQ(rows, 512u);

  ASSERT_EQ(run("filter-response --points 4 --checkpoint " + ck + " --out " + path("r4.csv")).code, 0);
  EXPECT_EQ(slurp(path("r4.csv")), "omega_over_pi,magnitude\n0,1\n0.333333333,1\n0.666666667,1\n1,1\n");
}

TEST_F(Cli, FilterResponseMatchesLibrary) {
  auto ck = encoder::load_checkpoint(tiny_checkpoint());
  auto& k = ck.generator.tensors.at(encoder::names::kPostKernel).data;
  for (std::size_t i = 0; i < k.size(); ++i) k[i] = std::sin(0.37 * static_cast<double>(i)) * 0.01f;
  encoder::save_checkpoint(path("k.ckpt"), ck);
  ASSERT_EQ(run("filter-response --points 33 --checkpoint " + path("k.ckpt") + " --out " + path("r.csv")).code, 0);
  const auto ref = synth::filter_frequency_response(std::span<const float>(k), 33);
  std::istringstream in(slurp(path("r.csv")));
  std::string line;
  std::getline(in, line);
  for (std::size_t i = 0; std::getline(in, line); ++i) {
    char expect[64];
    std::snprintf(expect, sizeof expect, "%.9g", ref[i]);
    EXPECT_EQ(line.substr(line.find(',') + 1), expect);
  }
}

TEST_F(Cli, UsageErrorsAreSingleLines) {
  expect_single_error_line(run(""));
  expect_single_error_line(run("synth --bogus"));
  expect_single_error_line(run("bench --checkpoint " + path("missing.ckpt")));
}

TEST_F(Cli, SyntheticWritesALoadableManifest) {
  const auto r = run("synthetic --out " + path("syn") + " --seconds 0.5 --seed 3");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto records = io::load_dataset(path("syn/manifest.tsv"));
  ASSERT_EQ(records.size(), 1u);
  io::SyntheticSpec sp;
  sp.seconds = 0.5;
  sp.max_partials = 16;
  const auto ref = io::synthetic_utterance(sp, 3);
  EXPECT_EQ(records[0].track.frames(), ref.track.frames());
  EXPECT_EQ(records[0].audio.size(), ref.audio.size());
  for (std::size_t i = 0; i < ref.audio.size(); ++i)
    ASSERT_NEAR(records[0].audio.samples[i], ref.audio.samples[i], 1.0 / 32768.0);
  const auto t = run("train --manifest " + path("syn/manifest.tsv") + " --config " + tiny_config("epochs = 1\n") +
                     " --out " + path("run") + " --quiet");
  EXPECT_EQ(t.code, 0) << t.err;
}
