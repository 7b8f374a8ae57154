#pragma once

// Learnable 1-D convolutional encoder / transposed-convolution decoder and
// the 50%-overlap chunking used by the separator.

#include <string>
#include <vector>

#include "unisep/config.hpp"
#include "unisep/nn.hpp"
#include "unisep/wav.hpp"

namespace unisep {

/// Placement of N frames into C overlapping chunks of K positions (hop K/2).
/// `index[c*K + k]` is the frame at that position, or -1 for tail padding.
struct ChunkLayout {
  int frames = 0;
  int chunk = 0;
  int hop = 0;
  int chunks = 0;
  int pad_tail = 0;
  std::vector<int> index;
  std::vector<int> overlap_count;  // per frame

  int positions() const { return chunks * chunk; }
};

inline ChunkLayout chunk_layout(int frames, int chunk) {
  if (chunk <= 0 || chunk % 2 != 0) throw ConfigError("separator.chunk_size", "must be positive and even");
  if (frames <= 0) throw InvalidInput("chunk_layout: no frames");
  ChunkLayout l;
  l.frames = frames;
  l.chunk = chunk;
  l.hop = chunk / 2;
  l.chunks = frames <= chunk ? 1 : (frames - chunk + l.hop - 1) / l.hop + 1;
  l.pad_tail = (l.chunks - 1) * l.hop + chunk - frames;
  l.index.resize(static_cast<size_t>(l.positions()));
  l.overlap_count.assign(static_cast<size_t>(frames), 0);
  for (int c = 0; c < l.chunks; ++c) {
    for (int k = 0; k < chunk; ++k) {
      const int f = c * l.hop + k;
      l.index[static_cast<size_t>(c * chunk + k)] = f < frames ? f : -1;
      if (f < frames) ++l.overlap_count[static_cast<size_t>(f)];
    }
  }
  return l;
}

/// [N x D] -> [C*K x D].
template <typename T>
ad::Var<T> segment_chunks(const ad::Var<T>& f, const ChunkLayout& l) {
  if (f.rows() != l.frames) throw ShapeError("segment_chunks: frame count does not match layout");
  return ad::gather_rows(f, l.index);
}

/// [S*C*K x D] -> [S*N x D]: sums overlapping positions and divides by the
/// per-frame overlap count; tail padding is dropped.
template <typename T>
ad::Var<T> overlap_add(const ad::Var<T>& g, const ChunkLayout& l, int signals = 1) {
  if (g.rows() != static_cast<Eigen::Index>(signals) * l.positions()) {
    throw ShapeError("overlap_add: row count does not match layout");
  }
  std::vector<int> idx(static_cast<size_t>(g.rows()));
  std::vector<T> wt(idx.size());
  for (int s = 0; s < signals; ++s) {
    for (int p = 0; p < l.positions(); ++p) {
      const size_t i = static_cast<size_t>(s * l.positions() + p);
      const int f = l.index[static_cast<size_t>(p)];
      idx[i] = f < 0 ? -1 : s * l.frames + f;
      wt[i] = f < 0 ? T(0) : T(1) / static_cast<T>(l.overlap_count[static_cast<size_t>(f)]);
    }
  }
  return ad::scatter_rows(g, std::move(idx), std::move(wt), signals * l.frames);
}

/// Value-level wrappers used outside of training.
template <typename T>
struct ChunkGrid {
  Matrix<T> values;  // [C*K x D]
  ChunkLayout layout;
};

template <typename T>
ChunkGrid<T> segment_chunks(const Matrix<T>& f, int chunk) {
  ad::Tape<T> tape(false);
  ChunkGrid<T> g;
  g.layout = chunk_layout(static_cast<int>(f.rows()), chunk);
  g.values = segment_chunks(tape.constant(f), g.layout).value();
  return g;
}

template <typename T>
Matrix<T> overlap_add(const ChunkGrid<T>& g) {
  ad::Tape<T> tape(false);
  return overlap_add(tape.constant(g.values), g.layout).value();
}

inline int encoder_frames(int length, int kernel, int stride) {
  if (length < kernel) return 0;
  return (length - kernel) / stride + 1;
}

template <typename T>
class Codec {
 public:
  static Codec create(nn::ParameterSet<T>& ps, const GlobalConfig& cfg, Rng& rng) {
    Codec c;
    c.kernel_ = cfg.codec.kernel;
    c.stride_ = cfg.codec.stride;
    c.dim_ = cfg.dim;
    c.enc_w_ = ps.add("codec.enc.w", nn::xavier_uniform<T>(c.kernel_, c.dim_, rng));
    c.enc_b_ = ps.add("codec.enc.b", Matrix<T>::Zero(1, c.dim_));
    c.dec_w_ = ps.add("codec.dec.w", nn::xavier_uniform<T>(c.dim_, c.kernel_, rng));
    return c;
  }

  int kernel() const { return kernel_; }
  int stride() const { return stride_; }
  int dim() const { return dim_; }
  int frames(int length) const { return encoder_frames(length, kernel_, stride_); }

  /// Waveform rows [1 x L] -> nonnegative features [N x D].
  ad::Var<T> encode(ad::Tape<T>& t, const ad::Var<T>& wave) const {
    if (wave.rows() != 1 || wave.cols() == 0) throw InvalidInput("encode: empty waveform");
    if (wave.cols() < kernel_) throw InvalidInput("encode: waveform shorter than one encoder frame");
    ad::Var<T> frames = ad::frame_signal(wave, kernel_, stride_);
    return ad::relu(ad::linear(frames, t.parameter(*enc_w_), t.parameter(*enc_b_)));
  }

  /// Features for `signals` sources stacked as [signals*N x D] -> [signals x L].
  ad::Var<T> decode(ad::Tape<T>& t, const ad::Var<T>& feats, int signals, int length) const {
    if (feats.cols() != dim_) throw ShapeError("decode: feature dimension does not match codec");
    if (signals <= 0 || feats.rows() % signals != 0 || feats.rows() / signals != frames(length)) {
      throw ShapeError("decode: frame count does not match codec config for this length");
    }
    ad::Var<T> fr = ad::matmul(feats, t.parameter(*dec_w_));
    return ad::overlap_add_frames(fr, signals, stride_, length);
  }

  ad::Parameter<T>& encoder_weight() { return *enc_w_; }
  ad::Parameter<T>& encoder_bias() { return *enc_b_; }
  ad::Parameter<T>& decoder_weight() { return *dec_w_; }

 private:
  int kernel_ = 16, stride_ = 8, dim_ = 0;
  ad::Parameter<T>* enc_w_ = nullptr;
  ad::Parameter<T>* enc_b_ = nullptr;
  ad::Parameter<T>* dec_w_ = nullptr;
};

/// Value-level helpers for callers outside a training step.
template <typename T>
Matrix<T> encode_waveform(Codec<T>& codec, const Waveform& w) {
  w.validate();
  ad::Tape<T> tape(false);
  Matrix<T> row(1, static_cast<Eigen::Index>(w.samples.size()));
  for (size_t i = 0; i < w.samples.size(); ++i) row(0, static_cast<Eigen::Index>(i)) = w.samples[i];
  return codec.encode(tape, tape.constant(row)).value();
}

template <typename T>
Waveform decode_features(Codec<T>& codec, const Matrix<T>& f, int length, int sample_rate = 8000) {
  ad::Tape<T> tape(false);
  Matrix<T> out = codec.decode(tape, tape.constant(f), 1, length).value();
  Waveform w;
  w.sample_rate = sample_rate;
  w.samples.resize(static_cast<size_t>(length));
  for (int i = 0; i < length; ++i) w.samples[static_cast<size_t>(i)] = static_cast<float>(out(0, i));
  return w;
}

}  // namespace unisep
