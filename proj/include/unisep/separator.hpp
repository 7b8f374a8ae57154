#pragma once

// Masking network: pre-projection, dual-path transformer stack with sequence
// aggregation, source-representation modulation, triple-path refinement and
// the gated mask head.

#include <string>
#include <vector>

#include "unisep/codec.hpp"
#include "unisep/nn.hpp"

namespace unisep {

/// Row orderings for the three attention axes of a [J x C x K x D] tensor
/// stored with row index (j*C + c)*K + k.
struct PathGroups {
  ad::RowGroups intra;    // over k inside one (j, c)
  ad::RowGroups inter;    // over c for one (j, k)
  ad::RowGroups channel;  // over j for one (c, k)
};

inline PathGroups path_groups(int sources, int chunks, int chunk) {
  PathGroups g;
  const int total = sources * chunks * chunk;
  g.intra = ad::contiguous_groups(total, chunk);
  g.inter.size = chunks;
  g.inter.order.reserve(static_cast<size_t>(total));
  for (int j = 0; j < sources; ++j) {
    for (int k = 0; k < chunk; ++k) {
      for (int c = 0; c < chunks; ++c) g.inter.order.push_back((j * chunks + c) * chunk + k);
    }
  }
  g.channel.size = sources;
  g.channel.order.reserve(static_cast<size_t>(total));
  for (int c = 0; c < chunks; ++c) {
    for (int k = 0; k < chunk; ++k) {
      for (int j = 0; j < sources; ++j) g.channel.order.push_back((j * chunks + c) * chunk + k);
    }
  }
  return g;
}

template <typename T>
struct DualPathOutput {
  ad::Var<T> V;  // [C*K x D]
  ad::Var<T> W;  // [C x D], one summary per chunk
};

template <typename T>
class Separator {
 public:
  static Separator create(nn::ParameterSet<T>& ps, const GlobalConfig& cfg, Rng& rng) {
    const int D = cfg.dim;
    const auto& sc = cfg.separator;
    Separator s;
    s.dim_ = D;
    s.chunk_ = sc.chunk_size;
    s.pre_norm_ = nn::LayerNorm<T>::create(ps, "sep.pre.ln", D);
    s.pre_linear_ = nn::Linear<T>::create(ps, "sep.pre.linear", D, D, rng);
    for (int l = 0; l < sc.dual_layers; ++l) {
      const std::string n = "sep.dual." + std::to_string(l);
      s.dual_.push_back({nn::TransformerBlock<T>::create(ps, n + ".intra", D, sc.heads, sc.ff_hidden, rng),
                         nn::TransformerBlock<T>::create(ps, n + ".inter", D, sc.heads, sc.ff_hidden, rng)});
    }
    s.layer_logits_ = ps.add("sep.agg.layer_logits", Matrix<T>::Zero(1, sc.dual_layers));
    s.pool_score_ = ps.add("sep.agg.score", nn::xavier_uniform<T>(D, 1, rng));
    for (int l = 0; l < sc.triple_layers; ++l) {
      const std::string n = "sep.triple." + std::to_string(l);
      s.triple_.push_back({nn::TransformerBlock<T>::create(ps, n + ".intra", D, sc.heads, sc.ff_hidden, rng),
                           nn::TransformerBlock<T>::create(ps, n + ".inter", D, sc.heads, sc.ff_hidden, rng),
                           nn::TransformerBlock<T>::create(ps, n + ".channel", D, sc.heads, sc.ff_hidden, rng)});
    }
    Matrix<T> alpha(1, 1);
    alpha(0, 0) = T(0.25);
    s.prelu_alpha_ = ps.add("sep.out.prelu", alpha);
    s.gate_tanh_ = nn::Linear<T>::create(ps, "sep.out.gate_tanh", D, D, rng);
    s.gate_sigmoid_ = nn::Linear<T>::create(ps, "sep.out.gate_sigmoid", D, D, rng);
    s.mask_ = nn::Linear<T>::create(ps, "sep.out.mask", D, D, rng);
    return s;
  }

  int chunk() const { return chunk_; }

  /// LayerNorm + linear on encoder features, then 50%-overlap chunking.
  ad::Var<T> project_and_segment(ad::Tape<T>& t, const ad::Var<T>& X, const ChunkLayout& layout) const {
    return segment_chunks(pre_linear_(t, pre_norm_(t, X)), layout);
  }

  DualPathOutput<T> dual_path_forward(ad::Tape<T>& t, const ad::Var<T>& grid, const ChunkLayout& layout) const {
    if (grid.rows() != layout.positions() || grid.cols() != dim_) {
      throw ShapeError("dual_path_forward: grid does not match layout");
    }
    const PathGroups g = path_groups(1, layout.chunks, layout.chunk);
    std::vector<ad::Var<T>> outputs;
    ad::Var<T> x = grid;
    for (const auto& layer : dual_) {
      x = layer.intra(t, x, g.intra);
      x = layer.inter(t, x, g.inter);
      outputs.push_back(x);
    }
    ad::Var<T> mixed = ad::softmax_mixture(outputs, t.parameter(*layer_logits_));
    ad::Var<T> W = ad::attention_pool(mixed, t.parameter(*pool_score_), layout.chunk);
    return {x, W};
  }

  /// Y[j,c,k,:] = V[c,k,:] * A[j,:], followed by the triple-path blocks.
  /// Returns Z as [J*C*K x D].
  ad::Var<T> modulate_and_refine(ad::Tape<T>& t, const ad::Var<T>& V, const ad::Var<T>& A,
                                 const ChunkLayout& layout) const {
    const int J = static_cast<int>(A.rows());
    if (J == 0) throw InvalidInput("modulate_and_refine: at least one source representation is required");
    if (A.cols() != dim_) throw ShapeError("modulate_and_refine: representation dimension mismatch");
    ad::Var<T> Y = modulate(V, A);
    const PathGroups g = path_groups(J, layout.chunks, layout.chunk);
    ad::Var<T> z = Y;
    for (const auto& layer : triple_) {
      z = layer.intra(t, z, g.intra);
      z = layer.inter(t, z, g.inter);
      z = layer.channel(t, z, g.channel);
    }
    return z;
  }

  /// Element-wise modulation only (exposed for tests).
  ad::Var<T> modulate(const ad::Var<T>& V, const ad::Var<T>& A) const {
    const int J = static_cast<int>(A.rows());
    const auto P = static_cast<int>(V.rows());
    std::vector<int> vidx(static_cast<size_t>(J * P)), aidx(static_cast<size_t>(J * P));
    for (int j = 0; j < J; ++j) {
      for (int p = 0; p < P; ++p) {
        vidx[static_cast<size_t>(j * P + p)] = p;
        aidx[static_cast<size_t>(j * P + p)] = j;
      }
    }
    return ad::mul(ad::gather_rows(V, std::move(vidx)), ad::gather_rows(A, std::move(aidx)));
  }

  /// PReLU -> overlap-add per source -> tanh/sigmoid gate -> ReLU mask.
  /// Returns masks as [J*N x D].
  ad::Var<T> emit_masks(ad::Tape<T>& t, const ad::Var<T>& Z, const ChunkLayout& layout, int sources) const {
    ad::Var<T> z = ad::prelu(Z, t.parameter(*prelu_alpha_));
    ad::Var<T> frames = overlap_add(z, layout, sources);
    ad::Var<T> gated = ad::mul(ad::tanh(gate_tanh_(t, frames)), ad::sigmoid(gate_sigmoid_(t, frames)));
    return ad::relu(mask_(t, gated));
  }

  const nn::Linear<T>& gate_tanh() const { return gate_tanh_; }
  const nn::Linear<T>& gate_sigmoid() const { return gate_sigmoid_; }
  const nn::Linear<T>& mask_head() const { return mask_; }

 private:
  struct DualLayer {
    nn::TransformerBlock<T> intra, inter;
  };
  struct TripleLayer {
    nn::TransformerBlock<T> intra, inter, channel;
  };

  int dim_ = 0;
  int chunk_ = 0;
  nn::LayerNorm<T> pre_norm_;
  nn::Linear<T> pre_linear_;
  std::vector<DualLayer> dual_;
  ad::Parameter<T>* layer_logits_ = nullptr;
  ad::Parameter<T>* pool_score_ = nullptr;
  std::vector<TripleLayer> triple_;
  ad::Parameter<T>* prelu_alpha_ = nullptr;
  nn::Linear<T> gate_tanh_, gate_sigmoid_, mask_;
};

}  // namespace unisep
