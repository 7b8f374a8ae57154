#pragma once

// The full network: codec, masking separator, attractor decoder and clue
// encoder sharing one parameter set.

#include <memory>
#include <vector>

#include "unisep/clue.hpp"
#include "unisep/codec.hpp"
#include "unisep/eda.hpp"
#include "unisep/separator.hpp"

namespace unisep {

template <typename T>
struct Analysis {
  ad::Var<T> X;  // encoder features [N x D]
  ChunkLayout layout;
  ad::Var<T> V;  // dual-path output [C*K x D]
  ad::Var<T> W;  // chunk summaries [C x D]
  int length = 0;
};

template <typename T>
class Model {
 public:
  explicit Model(const GlobalConfig& cfg) : cfg_(cfg) {
    validate(cfg_);
    Rng rng(derive_seed(cfg_.seed, "init"));
    codec_ = Codec<T>::create(params_, cfg_, rng);
    separator_ = Separator<T>::create(params_, cfg_, rng);
    eda_ = Eda<T>::create(params_, cfg_.dim, rng);
    clue_ = ClueNet<T>::create(params_, cfg_, rng);
  }
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  static std::unique_ptr<Model> make(const GlobalConfig& cfg) { return std::make_unique<Model>(cfg); }

  const GlobalConfig& config() const { return cfg_; }
  nn::ParameterSet<T>& params() { return params_; }
  const Codec<T>& codec() const { return codec_; }
  const Separator<T>& separator() const { return separator_; }
  const Eda<T>& eda() const { return eda_; }
  const ClueNet<T>& clue() const { return clue_; }
  ClueNet<T>& clue() { return clue_; }
  Eda<T>& eda() { return eda_; }

  /// Encoder, chunking and dual-path stack for a [1 x L] mixture.
  Analysis<T> analyze(ad::Tape<T>& t, const ad::Var<T>& mixture) const {
    Analysis<T> a;
    a.length = static_cast<int>(mixture.cols());
    a.X = codec_.encode(t, mixture);
    a.layout = chunk_layout(static_cast<int>(a.X.rows()), separator_.chunk());
    ad::Var<T> grid = separator_.project_and_segment(t, a.X, a.layout);
    DualPathOutput<T> d = separator_.dual_path_forward(t, grid, a.layout);
    a.V = d.V;
    a.W = d.W;
    return a;
  }

  /// Masks for each row of A applied to X and decoded; returns [J x L].
  ad::Var<T> separate_with(ad::Tape<T>& t, const Analysis<T>& a, const ad::Var<T>& A) const {
    const int J = static_cast<int>(A.rows());
    const int N = a.layout.frames;
    // Per-source row blocks keep every source's rows independent of its
    // position among the J sources.
    ad::Var<T> Z;
    {
      ad::RowBlockScope<T> scope(t, a.layout.positions());
      Z = separator_.modulate_and_refine(t, a.V, A, a.layout);
    }
    ad::RowBlockScope<T> scope(t, N);
    ad::Var<T> masks = separator_.emit_masks(t, Z, a.layout, J);
    std::vector<int> rep(static_cast<size_t>(J) * static_cast<size_t>(N));
    for (int j = 0; j < J; ++j) {
      for (int n = 0; n < N; ++n) rep[static_cast<size_t>(j * N + n)] = n;
    }
    ad::Var<T> masked = ad::mul(ad::gather_rows(a.X, std::move(rep)), masks);
    return codec_.decode(t, masked, J, a.length);
  }

  /// Pooled clue embeddings, one row per bundle.
  ad::Var<T> clue_embeddings(ad::Tape<T>& t, const Analysis<T>& a, const std::vector<ClueBundle>& bundles) const {
    if (bundles.empty()) throw InvalidInput("at least one clue bundle is required");
    std::vector<ad::Var<T>> rows;
    rows.reserve(bundles.size());
    for (const auto& b : bundles) rows.push_back(clue_.embed(t, a.W, b));
    return ad::concat_rows(rows);
  }

 private:
  GlobalConfig cfg_;
  nn::ParameterSet<T> params_;
  Codec<T> codec_;
  Separator<T> separator_;
  Eda<T> eda_;
  ClueNet<T> clue_;
};

template <typename T>
Matrix<T> waveform_row(const Waveform& w) {
  Matrix<T> m(1, static_cast<Eigen::Index>(w.samples.size()));
  for (size_t i = 0; i < w.samples.size(); ++i) m(0, static_cast<Eigen::Index>(i)) = static_cast<T>(w.samples[i]);
  return m;
}

template <typename T>
Waveform row_waveform(const Matrix<T>& m, Eigen::Index r, int sample_rate) {
  Waveform w;
  w.sample_rate = sample_rate;
  w.samples.resize(static_cast<size_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.cols(); ++i) w.samples[static_cast<size_t>(i)] = static_cast<float>(m(r, i));
  return w;
}

}  // namespace unisep
