#include <gtest/gtest.h>

#include <filesystem>

#include "test_util.hpp"

using namespace unisep;
using unisep::testing::random_matrix;

namespace {

GlobalConfig codec_config(int kernel, int stride, int dim) {
  GlobalConfig c = preset_config("toy");
  c.codec.kernel = kernel;
  c.codec.stride = stride;
  c.dim = dim;
  return c;
}

Waveform noise(int n, std::uint64_t seed) {
  Waveform w;
  Rng r(seed);
  std::normal_distribution<float> nd(0.f, 0.3f);
  for (int i = 0; i < n; ++i) w.samples.push_back(nd(r));
  return w;
}

}  // namespace

TEST(Codec, FrameCountFormula) {
  EXPECT_EQ(encoder_frames(16000, 16, 8), 1999);
  EXPECT_EQ(encoder_frames(160, 16, 8), 19);
  EXPECT_EQ(encoder_frames(16000, 64, 32), 499);
  EXPECT_EQ(encoder_frames(15, 16, 8), 0);
}

TEST(Codec, ZeroWaveformGivesZeroFeatures) {
  auto cfg = codec_config(16, 8, 64);
  nn::ParameterSet<float> ps;
  Rng rng(1);
  auto codec = Codec<float>::create(ps, cfg, rng);
  Waveform w;
  w.samples.assign(160, 0.f);
  Matrix<float> f = encode_waveform(codec, w);
  EXPECT_EQ(f.rows(), 19);
  EXPECT_EQ(f.cols(), 64);
  EXPECT_EQ(f.cwiseAbs().maxCoeff(), 0.f);
}

TEST(Codec, EncoderOutputIsNonnegative) {
  auto cfg = codec_config(16, 8, 32);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    nn::ParameterSet<float> ps;
    Rng rng(seed);
    auto codec = Codec<float>::create(ps, cfg, rng);
    Matrix<float> f = encode_waveform(codec, noise(800, seed + 10));
    EXPECT_GE(f.minCoeff(), 0.f);
    EXPECT_GT(f.maxCoeff(), 0.f);
  }
}

TEST(Codec, DecoderLengthAndZeroFeatures) {
  auto cfg = codec_config(16, 8, 16);
  nn::ParameterSet<float> ps;
  Rng rng(3);
  auto codec = Codec<float>::create(ps, cfg, rng);
  Waveform out = decode_features(codec, Matrix<float>(Matrix<float>::Zero(1999, 16)), 16000);
  EXPECT_EQ(out.length(), 16000u);
  for (float s : out.samples) ASSERT_EQ(s, 0.f);
  // Shape mismatches are rejected.
  EXPECT_THROW(decode_features(codec, Matrix<float>(Matrix<float>::Zero(1998, 16)), 16000), ShapeError);
  EXPECT_THROW(decode_features(codec, Matrix<float>(Matrix<float>::Zero(1999, 8)), 16000), ShapeError);
}

TEST(Codec, TrailingSamplesOutsideLastFrameArePadded) {
  auto cfg = codec_config(16, 8, 8);
  nn::ParameterSet<float> ps;
  Rng rng(4);
  auto codec = Codec<float>::create(ps, cfg, rng);
  // 165 samples -> 19 frames covering 160; five trailing zeros.
  Waveform out = decode_features(codec, Matrix<float>(Matrix<float>::Ones(19, 8)), 165);
  EXPECT_EQ(out.length(), 165u);
  for (int i = 160; i < 165; ++i) EXPECT_EQ(out.samples[static_cast<size_t>(i)], 0.f);
}

TEST(Codec, EmptyWaveformRejected) {
  auto cfg = codec_config(16, 8, 8);
  nn::ParameterSet<float> ps;
  Rng rng(5);
  auto codec = Codec<float>::create(ps, cfg, rng);
  EXPECT_THROW(encode_waveform(codec, Waveform{}), InvalidInput);
  Waveform shortw;
  shortw.samples.assign(10, 0.1f);
  EXPECT_THROW(encode_waveform(codec, shortw), InvalidInput);
  Waveform bad;
  bad.samples = {0.f, std::nanf(""), 0.f};
  EXPECT_THROW(bad.validate(), InvalidInput);
}

TEST(Codec, EncodeDecodeDeterministic) {
  auto cfg = codec_config(16, 8, 16);
  nn::ParameterSet<float> ps;
  Rng rng(6);
  auto codec = Codec<float>::create(ps, cfg, rng);
  const Waveform w = noise(400, 6);
  Matrix<float> a = encode_waveform(codec, w), b = encode_waveform(codec, w);
  EXPECT_EQ((a - b).cwiseAbs().maxCoeff(), 0.f);
  Waveform d1 = decode_features(codec, a, 400), d2 = decode_features(codec, a, 400);
  EXPECT_EQ(d1.samples, d2.samples);
}

TEST(Codec, AutoencoderFitReaches20dB) {
  // Identity task on a handful of signals: learn encoder + decoder jointly.
  auto cfg = codec_config(16, 8, 32);
  nn::ParameterSet<float> ps;
  Rng rng(7);
  auto codec = Codec<float>::create(ps, cfg, rng);
  std::vector<Matrix<float>> signals;
  for (int s = 0; s < 4; ++s) {
    Matrix<float> m(1, 400);
    for (int i = 0; i < 400; ++i) {
      m(0, i) = 0.5f * std::sin(0.07f * (s + 1) * i) + 0.2f * std::sin(0.31f * i + s);
    }
    signals.push_back(m);
  }
  Adam<float> adam(3e-3);
  auto params = ps.trainable();
  for (int it = 0; it < 1500; ++it) {
    ps.zero_grad();
    for (const auto& m : signals) {
      ad::Tape<float> t(true);
      auto x = t.constant(m);
      auto y = codec.decode(t, codec.encode(t, x), 1, 400);
      t.backward(ad::scale(ad::snr_db(x, y, 1e-8f, 60.f), -0.25f));
    }
    adam.step(params);
  }
  for (const auto& m : signals) {
    ad::Tape<float> t(false);
    auto y = codec.decode(t, codec.encode(t, t.constant(m)), 1, 400).value();
    // Ignore the 8-sample borders covered by a single frame.
    const double snr = snr_db_value<float>(m.middleCols(8, 384), y.middleCols(8, 384), {1e-8, 100.0});
    EXPECT_GE(snr, 20.0);
  }
}

TEST(Chunking, LayoutFormula) {
  auto l = chunk_layout(600, 250);
  EXPECT_EQ(l.hop, 125);
  EXPECT_EQ(l.chunks, 4);
  EXPECT_EQ(l.pad_tail, 25);
  auto one = chunk_layout(250, 250);
  EXPECT_EQ(one.chunks, 1);
  EXPECT_EQ(one.pad_tail, 0);
  auto shortl = chunk_layout(100, 250);
  EXPECT_EQ(shortl.chunks, 1);
  EXPECT_EQ(shortl.pad_tail, 150);
  auto toy = chunk_layout(499, 50);
  EXPECT_EQ(toy.chunks, 19);
  EXPECT_EQ(toy.pad_tail, 1);
}

TEST(Chunking, InvalidChunkSize) {
  EXPECT_THROW(chunk_layout(100, 0), ConfigError);
  EXPECT_THROW(chunk_layout(100, -4), ConfigError);
  EXPECT_THROW(chunk_layout(100, 7), ConfigError);
  try {
    chunk_layout(100, 7);
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "separator.chunk_size");
  }
}

TEST(Chunking, OverlapAddRoundTripExact) {
  for (auto [n, k] : std::vector<std::pair<int, int>>{{1000, 250}, {250, 250}, {600, 250}, {499, 50}, {37, 6}}) {
    Matrix<float> f = random_matrix<float>(n, 8, static_cast<std::uint64_t>(n + k));
    ChunkGrid<float> g = segment_chunks(f, k);
    EXPECT_EQ(g.values.rows(), g.layout.chunks * k);
    EXPECT_EQ(g.layout.chunks, n <= k ? 1 : (n - k + k / 2 - 1) / (k / 2) + 1);
    Matrix<float> back = overlap_add(g);
    ASSERT_EQ(back.rows(), n);
    EXPECT_LE((back - f).cwiseAbs().maxCoeff(), 1e-6f) << "N=" << n << " K=" << k;
  }
}

TEST(Chunking, PaddedPositionsAreZero) {
  Matrix<float> f = Matrix<float>::Ones(600, 2);
  ChunkGrid<float> g = segment_chunks(f, 250);
  EXPECT_EQ(g.values.bottomRows(25).cwiseAbs().maxCoeff(), 0.f);
  EXPECT_EQ(g.values.topRows(975).minCoeff(), 1.f);
}

TEST(Wav, RoundTripFloatAndPcm) {
  const auto dir = std::filesystem::temp_directory_path() / "unisep_wav_test";
  std::filesystem::create_directories(dir);
  Waveform w = noise(1234, 9);
  for (float& s : w.samples) s = std::clamp(s, -1.f, 1.f);
  write_wav((dir / "f.wav").string(), w, WavEncoding::kFloat32);
  Waveform r = read_wav((dir / "f.wav").string());
  EXPECT_EQ(r.sample_rate, 8000);
  EXPECT_EQ(r.samples, w.samples);
  write_wav((dir / "p.wav").string(), w, WavEncoding::kPcm16);
  Waveform p = read_wav((dir / "p.wav").string());
  ASSERT_EQ(p.length(), w.length());
  for (size_t i = 0; i < w.length(); ++i) EXPECT_NEAR(p.samples[i], w.samples[i], 1.0 / 32767);
  EXPECT_THROW(read_wav((dir / "missing.wav").string()), Error);
}
