#pragma once

// Encoder-decoder attractors: an LSTM reads the chunk summaries W, a second
// LSTM fed with zeros emits one attractor per step, and a sigmoid head scores
// whether each attractor corresponds to a present source.

#include <span>
#include <utility>
#include <vector>

#include "unisep/nn.hpp"

namespace unisep {

template <typename T>
struct AttractorSet {
  Matrix<T> attractors;         // accepted attractors only, [count x D]
  std::vector<T> probabilities;  // one per decoded step
  std::vector<bool> exists;      // probability > theta, per decoded step
  Matrix<T> decoded;            // every decoded step, including the rejected one
  int count = 0;

  bool no_source() const { return count == 0; }
};

/// Number of leading probabilities strictly above theta.
template <typename T>
int count_from_probabilities(std::span<const T> probs, T theta) {
  int n = 0;
  for (T p : probs) {
    if (!(p > theta)) break;
    ++n;
  }
  return n;
}

template <typename T>
struct EdaOutput {
  ad::Var<T> attractors;     // [S x D]
  ad::Var<T> probabilities;  // [S x 1]
};

template <typename T>
class Eda {
 public:
  static Eda create(nn::ParameterSet<T>& ps, int dim, Rng& rng) {
    Eda e;
    e.dim_ = dim;
    e.encoder_ = nn::Lstm<T>::create(ps, "eda.enc", dim, dim, rng);
    // The decoder only ever sees zero inputs, so it carries no input weights.
    e.decoder_ = nn::Lstm<T>::create(ps, "eda.dec", 0, dim, rng);
    e.w_exist_ = ps.add("eda.exist.w", nn::xavier_uniform<T>(dim, 1, rng));
    e.b_exist_ = ps.add("eda.exist.b", Matrix<T>::Zero(1, 1));
    return e;
  }

  /// Final (h, c) after reading every row of W from zero initial state.
  std::pair<ad::Var<T>, ad::Var<T>> encode_sequence(ad::Tape<T>& t, const ad::Var<T>& W) const {
    if (W.rows() < 1) throw InvalidInput("encode_sequence: empty summary sequence");
    if (W.cols() != dim_) throw ShapeError("encode_sequence: dimension mismatch");
    ad::Var<T> proj = encoder_.project(t, W);
    ad::Var<T> h = t.constant(Matrix<T>::Zero(1, dim_));
    ad::Var<T> c = t.constant(Matrix<T>::Zero(1, dim_));
    for (Eigen::Index r = 0; r < W.rows(); ++r) {
      std::tie(h, c) = encoder_.step(t, ad::slice_rows(proj, r, 1), h, c);
    }
    return {h, c};
  }

  /// `steps` attractors from a zero-input decoder started at (h, c).
  ad::Var<T> decode_attractors(ad::Tape<T>& t, ad::Var<T> h, ad::Var<T> c, int steps) const {
    if (steps < 1) throw InvalidInput("decode_attractors: steps must be >= 1");
    ad::Var<T> zero_proj = decoder_.project(t, t.constant(Matrix<T>::Zero(1, 0)));
    std::vector<ad::Var<T>> rows;
    rows.reserve(static_cast<size_t>(steps));
    for (int s = 0; s < steps; ++s) {
      std::tie(h, c) = decoder_.step(t, zero_proj, h, c);
      rows.push_back(h);
    }
    return ad::concat_rows(rows);
  }

  /// sigmoid(A * w + b) per row.
  ad::Var<T> existence_probability(ad::Tape<T>& t, const ad::Var<T>& A) const {
    return ad::sigmoid(ad::linear(A, t.parameter(*w_exist_), t.parameter(*b_exist_)));
  }

  EdaOutput<T> forward(ad::Tape<T>& t, const ad::Var<T>& W, int steps) const {
    auto [h, c] = encode_sequence(t, W);
    ad::Var<T> A = decode_attractors(t, h, c, steps);
    return {A, existence_probability(t, A)};
  }

  /// Decodes until the first probability <= theta or `max_steps`.
  AttractorSet<T> infer_count(ad::Tape<T>& t, const ad::Var<T>& W, T theta, int max_steps) const {
    if (!(theta > T(0) && theta < T(1))) throw ConfigError("eda.theta", "must lie in (0, 1)");
    auto [h, c] = encode_sequence(t, W);
    ad::Var<T> zero_proj = decoder_.project(t, t.constant(Matrix<T>::Zero(1, 0)));
    AttractorSet<T> out;
    std::vector<Matrix<T>> rows;
    for (int s = 0; s < max_steps; ++s) {
      std::tie(h, c) = decoder_.step(t, zero_proj, h, c);
      const T p = existence_probability(t, h).item();
      rows.push_back(h.value());
      out.probabilities.push_back(p);
      out.exists.push_back(p > theta);
      if (!(p > theta)) break;
    }
    out.count = count_from_probabilities<T>(out.probabilities, theta);
    out.decoded.resize(static_cast<Eigen::Index>(rows.size()), dim_);
    for (size_t i = 0; i < rows.size(); ++i) out.decoded.row(static_cast<Eigen::Index>(i)) = rows[i];
    out.attractors = out.decoded.topRows(out.count);
    return out;
  }

  ad::Parameter<T>& exist_weight() { return *w_exist_; }
  ad::Parameter<T>& exist_bias() { return *b_exist_; }
  const nn::Lstm<T>& encoder() const { return encoder_; }
  const nn::Lstm<T>& decoder() const { return decoder_; }

 private:
  int dim_ = 0;
  nn::Lstm<T> encoder_, decoder_;
  ad::Parameter<T>* w_exist_ = nullptr;
  ad::Parameter<T>* b_exist_ = nullptr;
};

}  // namespace unisep
