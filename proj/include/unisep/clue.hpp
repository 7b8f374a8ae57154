#pragma once

// Multi-modal clue encoder: frozen text/video stubs, a trainable tag table,
// presence-aware concatenation and cross-attention fusion against the
// mixture's chunk summaries.

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "unisep/config.hpp"
#include "unisep/nn.hpp"

namespace unisep {

enum Modality : unsigned { kTag = 1u, kText = 2u, kVideo = 4u };

/// Bitmask over {kTag, kText, kVideo}.
using ModalitySet = unsigned;

/// The seven non-empty subsets in the fixed training-cycle order.
inline constexpr std::array<ModalitySet, 7> kModalityCycle = {
    kTag | kText | kVideo, kTag | kText, kText | kVideo, kTag | kVideo, kTag, kText, kVideo};

inline std::string modality_name(ModalitySet m) {
  std::string s;
  auto add = [&](const char* n) {
    if (!s.empty()) s += ",";
    s += n;
  };
  if (m & kTag) add("tag");
  if (m & kText) add("text");
  if (m & kVideo) add("video");
  return s.empty() ? "none" : s;
}

/// Parses "tag,text,video" style lists.
inline ModalitySet parse_modalities(const std::string& list) {
  ModalitySet m = 0;
  size_t pos = 0;
  while (pos <= list.size()) {
    const size_t end = std::min(list.find(',', pos), list.size());
    const std::string tok = list.substr(pos, end - pos);
    if (tok == "tag") {
      m |= kTag;
    } else if (tok == "text") {
      m |= kText;
    } else if (tok == "video") {
      m |= kVideo;
    } else if (!tok.empty()) {
      throw InvalidInput("unknown modality '" + tok + "'");
    }
    pos = end + 1;
  }
  if (m == 0) throw InvalidInput("no modality selected");
  return m;
}

struct ClueBundle {
  std::optional<int> tag;
  std::optional<std::vector<int>> text;
  std::optional<std::vector<std::vector<float>>> video;
  int target_class = -1;

  bool empty() const { return !tag && !text && !video; }

  ModalitySet modalities() const {
    return (tag ? kTag : 0u) | (text ? kText : 0u) | (video ? kVideo : 0u);
  }

  ClueBundle restricted(ModalitySet keep) const {
    ClueBundle b = *this;
    if (!(keep & kTag)) b.tag.reset();
    if (!(keep & kText)) b.text.reset();
    if (!(keep & kVideo)) b.video.reset();
    return b;
  }
};

inline nlohmann::json clue_to_json(const ClueBundle& b) {
  nlohmann::json j = nlohmann::json::object();
  if (b.target_class >= 0) j["target_class"] = b.target_class;
  if (b.tag) j["tag"] = *b.tag;
  if (b.text) j["text"] = *b.text;
  if (b.video) j["video"] = *b.video;
  return j;
}

inline ClueBundle clue_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw InvalidInput("clue file must hold a JSON object");
  ClueBundle b;
  try {
    if (j.contains("target_class")) b.target_class = j.at("target_class").get<int>();
    if (j.contains("tag")) b.tag = j.at("tag").get<int>();
    if (j.contains("text")) b.text = j.at("text").get<std::vector<int>>();
    if (j.contains("video")) b.video = j.at("video").get<std::vector<std::vector<float>>>();
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("malformed clue: ") + e.what());
  }
  return b;
}

template <typename T>
struct ModalityEmbeddings {
  std::optional<ad::Var<T>> text;   // O [T_t x D]
  std::optional<ad::Var<T>> video;  // V [T_v x D]
  std::optional<ad::Var<T>> tag;    // E [1 x D]
};

template <typename T>
struct ClueEmbedding {
  ad::Var<T> fused;   // [C x D]
  ad::Var<T> pooled;  // [1 x D]
};

/// Presence-aware concatenation in (text; video; tag) order.
template <typename T>
ad::Var<T> concat_clues(const ModalityEmbeddings<T>& m) {
  std::vector<ad::Var<T>> parts;
  if (m.text) parts.push_back(*m.text);
  if (m.video) parts.push_back(*m.video);
  if (m.tag) parts.push_back(*m.tag);
  if (parts.empty()) throw InvalidInput("no clue provided");
  return ad::concat_rows(parts);
}

template <typename T>
class ClueNet {
 public:
  static ClueNet create(nn::ParameterSet<T>& ps, const GlobalConfig& cfg, Rng& rng) {
    const int D = cfg.dim;
    ClueNet n;
    n.dim_ = D;
    n.num_classes_ = cfg.num_classes();
    n.vocab_ = cfg.clue.vocab_size;
    n.video_dim_ = cfg.clue.video_dim;
    n.heads_ = cfg.clue.heads;
    n.tag_table_ = ps.add("clue.tag_table", nn::xavier_uniform<T>(n.num_classes_, D, rng));
    // Frozen stand-ins for pre-trained encoders, seeded independently of the
    // model initialization.
    Rng stub(derive_seed(cfg.clue.stub_seed, "clue-stubs"));
    std::normal_distribution<double> nd(0.0, 1.0);
    Matrix<T> text(n.vocab_, D), video(n.video_dim_, D);
    for (Eigen::Index i = 0; i < text.size(); ++i) text.data()[i] = static_cast<T>(nd(stub));
    const double vs = 1.0 / std::sqrt(static_cast<double>(n.video_dim_));
    for (Eigen::Index i = 0; i < video.size(); ++i) video.data()[i] = static_cast<T>(nd(stub) * vs);
    n.text_proj_ = ps.add("clue.text_stub", std::move(text), false);
    n.video_proj_ = ps.add("clue.video_stub", std::move(video), false);
    n.attn_ = nn::MultiHeadAttention<T>::create(ps, "clue.fuse", D, cfg.clue.heads, rng);
    n.norm_ = nn::LayerNorm<T>::create(ps, "clue.fuse.ln", D);
    return n;
  }

  ModalityEmbeddings<T> encode_modalities(ad::Tape<T>& t, const ClueBundle& b) const {
    ModalityEmbeddings<T> m;
    if (b.text) {
      if (b.text->empty()) throw InvalidInput("text clue has no tokens");
      std::vector<int> ids = *b.text;
      for (int id : ids) {
        if (id < 0 || id >= vocab_) throw InvalidInput("text token id out of vocabulary: " + std::to_string(id));
      }
      m.text = ad::gather_rows(t.parameter(*text_proj_), std::move(ids));
    }
    if (b.video) {
      if (b.video->empty()) throw InvalidInput("video clue has no frames");
      Matrix<T> frames(static_cast<Eigen::Index>(b.video->size()), video_dim_);
      for (size_t f = 0; f < b.video->size(); ++f) {
        const auto& row = (*b.video)[f];
        if (static_cast<int>(row.size()) != video_dim_) throw InvalidInput("video frame descriptor has wrong size");
        for (int d = 0; d < video_dim_; ++d) frames(static_cast<Eigen::Index>(f), d) = static_cast<T>(row[static_cast<size_t>(d)]);
      }
      m.video = ad::matmul(t.constant(std::move(frames)), t.parameter(*video_proj_));
    }
    if (b.tag) {
      if (*b.tag < 0 || *b.tag >= num_classes_) throw InvalidInput("tag out of range: " + std::to_string(*b.tag));
      m.tag = ad::gather_rows(t.parameter(*tag_table_), {*b.tag});
    }
    return m;
  }

  /// Cross-attention with W as query and U as key/value, no residual from
  /// the query path, then LayerNorm; pooled is the time mean.
  ClueEmbedding<T> fuse_clues(ad::Tape<T>& t, const ad::Var<T>& W, const ad::Var<T>& U) const {
    ad::RowGroups qg = ad::contiguous_groups(static_cast<int>(W.rows()), static_cast<int>(W.rows()));
    ad::RowGroups kg = ad::contiguous_groups(static_cast<int>(U.rows()), static_cast<int>(U.rows()));
    ad::Var<T> fused = norm_(t, attn_(t, W, U, qg, kg));
    return {fused, ad::mean_rows(fused)};
  }

  /// Pooled clue embedding [1 x D] for one bundle.
  ad::Var<T> embed(ad::Tape<T>& t, const ad::Var<T>& W, const ClueBundle& b) const {
    if (b.empty()) throw InvalidInput("no clue provided");
    return fuse_clues(t, W, concat_clues(encode_modalities(t, b))).pooled;
  }

  /// Checksum of the frozen stub weights.
  std::uint64_t frozen_checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto* p : {text_proj_, video_proj_}) {
      const auto* bytes = reinterpret_cast<const unsigned char*>(p->value.data());
      h = fnv1a64(std::string_view(reinterpret_cast<const char*>(bytes),
                                   static_cast<size_t>(p->value.size()) * sizeof(T)),
                  h);
    }
    return h;
  }

  ad::Parameter<T>& tag_table() { return *tag_table_; }
  ad::Parameter<T>& text_stub() { return *text_proj_; }
  ad::Parameter<T>& video_stub() { return *video_proj_; }
  const nn::MultiHeadAttention<T>& attention() const { return attn_; }

 private:
  int dim_ = 0, num_classes_ = 0, vocab_ = 0, video_dim_ = 0, heads_ = 1;
  ad::Parameter<T>* tag_table_ = nullptr;
  ad::Parameter<T>* text_proj_ = nullptr;
  ad::Parameter<T>* video_proj_ = nullptr;
  nn::MultiHeadAttention<T> attn_;
  nn::LayerNorm<T> norm_;
};

}  // namespace unisep
