#include <gtest/gtest.h>

#include <set>

#include "test_util.hpp"

using namespace unisep;
using unisep::testing::random_matrix;
using unisep::testing::tiny_config;

namespace {

struct ClueFixture {
  GlobalConfig cfg = tiny_config();
  nn::ParameterSet<double> ps;
  ClueNet<double> net;
  ClueFixture() {
    Rng rng(3);
    net = ClueNet<double>::create(ps, cfg, rng);
  }
  ClueBundle full() const {
    ClueBundle b;
    b.tag = 2;
    b.text = std::vector<int>{1, 4, 4, 0};
    b.video = std::vector<std::vector<float>>(3, std::vector<float>(static_cast<size_t>(cfg.clue.video_dim), 0.5f));
    return b;
  }
};

}  // namespace

TEST(Clue, StubsAreDeterministicAndIndependentOfInitSeed) {
  ClueFixture a;
  GlobalConfig c2 = a.cfg;
  nn::ParameterSet<double> ps2;
  Rng other(99);
  auto net2 = ClueNet<double>::create(ps2, c2, other);
  EXPECT_EQ(a.net.text_stub().value, net2.text_stub().value);
  EXPECT_EQ(a.net.video_stub().value, net2.video_stub().value);
  EXPECT_EQ(a.net.frozen_checksum(), net2.frozen_checksum());
  EXPECT_NE(a.net.tag_table().value, net2.tag_table().value);
  EXPECT_FALSE(a.net.text_stub().trainable);
  EXPECT_FALSE(a.net.video_stub().trainable);
  EXPECT_TRUE(a.net.tag_table().trainable);
}

TEST(Clue, TextAndTagLookups) {
  ClueFixture f;
  ad::Tape<double> t(false);
  ClueBundle b;
  b.text = std::vector<int>{3, 1, 3};
  b.tag = 5;
  auto m = f.net.encode_modalities(t, b);
  ASSERT_TRUE(m.text && m.tag && !m.video);
  const Eigen::MatrixXd O = m.text->value();
  ASSERT_EQ(O.rows(), 3);
  EXPECT_EQ(O.row(0), f.net.text_stub().value.row(3));
  EXPECT_EQ(O.row(1), f.net.text_stub().value.row(1));
  EXPECT_EQ(O.row(0), O.row(2));
  EXPECT_EQ(m.tag->value(), f.net.tag_table().value.row(5));
  auto m2 = f.net.encode_modalities(t, b);
  EXPECT_EQ(m2.text->value(), O);
}

TEST(Clue, VideoIsLinearInFrames) {
  ClueFixture f;
  ad::Tape<double> t(false);
  ClueBundle b;
  b.video = std::vector<std::vector<float>>{{1, 0, 0, 0, 0}, {0, 0, 2, 0, 0}};
  auto V = f.net.encode_modalities(t, b).video->value();
  EXPECT_LE((V.row(0) - f.net.video_stub().value.row(0)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((V.row(1) - 2.0 * f.net.video_stub().value.row(2)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Clue, ConcatenationLengthsForAllSubsets) {
  ClueFixture f;
  const ClueBundle full = f.full();
  std::set<ModalitySet> seen;
  for (ModalitySet m : kModalityCycle) {
    seen.insert(m);
    ad::Tape<double> t(false);
    auto U = concat_clues(f.net.encode_modalities(t, full.restricted(m)));
    const int expect = ((m & kText) ? 4 : 0) + ((m & kVideo) ? 3 : 0) + ((m & kTag) ? 1 : 0);
    EXPECT_EQ(U.rows(), expect) << modality_name(m);
    EXPECT_EQ(U.cols(), f.cfg.dim);
  }
  EXPECT_EQ(seen.size(), 7u);
  ClueBundle b;
  b.text = std::vector<int>{0, 1, 2, 3, 4};
  b.video = std::vector<std::vector<float>>(2, std::vector<float>(5, 0.f));
  ad::Tape<double> t(false);
  EXPECT_EQ(concat_clues(f.net.encode_modalities(t, b)).rows(), 7);
}

TEST(Clue, ConcatenationOrderIsTextVideoTag) {
  ClueFixture f;
  ad::Tape<double> t(false);
  ClueBundle b = f.full();
  auto m = f.net.encode_modalities(t, b);
  auto U = concat_clues(m).value();
  EXPECT_EQ(U.topRows(4), m.text->value());
  EXPECT_EQ(U.middleRows(4, 3), m.video->value());
  EXPECT_EQ(U.bottomRows(1), m.tag->value());
}

TEST(Clue, EmptyAndMalformedCluesAreRejected) {
  ClueFixture f;
  ad::Tape<double> t(false);
  auto W = t.constant(random_matrix<double>(3, f.cfg.dim, 1));
  try {
    f.net.embed(t, W, ClueBundle{});
    FAIL() << "expected InvalidInput";
  } catch (const InvalidInput& e) {
    EXPECT_NE(std::string(e.what()).find("no clue provided"), std::string::npos);
  }
  EXPECT_THROW(concat_clues(ModalityEmbeddings<double>{}), InvalidInput);
  ClueBundle bad;
  bad.tag = f.cfg.num_classes();
  EXPECT_THROW(f.net.encode_modalities(t, bad), InvalidInput);
  bad = {};
  bad.text = std::vector<int>{f.cfg.clue.vocab_size};
  EXPECT_THROW(f.net.encode_modalities(t, bad), InvalidInput);
  bad.text = std::vector<int>{};
  EXPECT_THROW(f.net.encode_modalities(t, bad), InvalidInput);
  bad = {};
  bad.video = std::vector<std::vector<float>>{{1.f}};
  EXPECT_THROW(f.net.encode_modalities(t, bad), InvalidInput);
}

TEST(Clue, SingleKeyFusionIsConstantOverTime) {
  ClueFixture f;
  ad::Tape<double> t(false);
  auto W = t.constant(random_matrix<double>(6, f.cfg.dim, 2));
  auto U = t.constant(random_matrix<double>(1, f.cfg.dim, 3));
  auto e = f.net.fuse_clues(t, W, U);
  const Eigen::MatrixXd F = e.fused.value();
  ASSERT_EQ(F.rows(), 6);
  for (int r = 1; r < 6; ++r) EXPECT_LE((F.row(r) - F.row(0)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((e.pooled.value() - F.colwise().mean()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Clue, PooledIsTimeMeanAndFusionIgnoresClueOrder) {
  ClueFixture f;
  ad::Tape<double> t(false);
  Eigen::MatrixXd W = random_matrix<double>(5, f.cfg.dim, 4);
  Eigen::MatrixXd U = random_matrix<double>(4, f.cfg.dim, 5);
  Eigen::MatrixXd Up(4, f.cfg.dim);
  Up << U.row(2), U.row(0), U.row(3), U.row(1);
  auto e = f.net.fuse_clues(t, t.constant(W), t.constant(U));
  auto ep = f.net.fuse_clues(t, t.constant(W), t.constant(Up));
  EXPECT_LE((e.pooled.value() - e.fused.value().colwise().mean()).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((e.fused.value() - ep.fused.value()).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(e.pooled.rows(), 1);
  EXPECT_EQ(e.pooled.cols(), f.cfg.dim);
}

TEST(Clue, GradientsReachTagTableAndAttentionButNotStubs) {
  ClueFixture f;
  Eigen::MatrixXd W = random_matrix<double>(4, f.cfg.dim, 6);
  Eigen::MatrixXd R = random_matrix<double>(1, f.cfg.dim, 7);
  const auto before = f.net.frozen_checksum();
  f.ps.zero_grad();
  ad::Tape<double> t(true);
  auto c = f.net.embed(t, t.constant(W), f.full());
  t.backward(ad::sum(ad::mul(c, t.constant(R))));
  EXPECT_EQ(f.net.text_stub().grad.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(f.net.video_stub().grad.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_GT(f.net.tag_table().grad.row(2).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(f.net.tag_table().grad.row(3).cwiseAbs().maxCoeff(), 0.0);
  int attn_nonzero = 0;
  for (auto* p : f.ps.all()) {
    if (p->name.rfind("clue.fuse", 0) == 0 && p->grad.cwiseAbs().maxCoeff() > 0) ++attn_nonzero;
  }
  EXPECT_GE(attn_nonzero, 6);
  EXPECT_EQ(f.net.frozen_checksum(), before);
}

TEST(Clue, EmbeddingGradientMatchesFiniteDifferences) {
  ClueFixture f;
  Eigen::MatrixXd W = random_matrix<double>(4, f.cfg.dim, 8);
  Eigen::MatrixXd R = random_matrix<double>(1, f.cfg.dim, 9);
  auto loss = [&](bool bw) {
    ad::Tape<double> t(bw);
    auto l = ad::sum(ad::mul(f.net.embed(t, t.constant(W), f.full()), t.constant(R)));
    if (bw) t.backward(l);
    return l.item();
  };
  auto r = unisep::testing::check_gradients(f.ps.trainable(), loss);
  EXPECT_LE(r.worst, 1e-5) << r.worst_name;
}

TEST(Clue, ModalityParsingAndJson) {
  EXPECT_EQ(parse_modalities("tag,text,video"), kTag | kText | kVideo);
  EXPECT_EQ(parse_modalities("video"), kVideo);
  EXPECT_EQ(modality_name(kText | kVideo), "text,video");
  EXPECT_THROW(parse_modalities("audio"), InvalidInput);
  EXPECT_THROW(parse_modalities(""), InvalidInput);
  ClueFixture f;
  ClueBundle b = f.full();
  b.target_class = 2;
  ClueBundle r = clue_from_json(clue_to_json(b));
  EXPECT_EQ(r.tag, b.tag);
  EXPECT_EQ(r.text, b.text);
  EXPECT_EQ(r.video, b.video);
  EXPECT_EQ(r.target_class, 2);
  EXPECT_EQ(b.restricted(kTag).modalities(), kTag);
  EXPECT_THROW(clue_from_json(nlohmann::json::array()), InvalidInput);
  EXPECT_THROW(clue_from_json(nlohmann::json{{"tag", "x"}}), InvalidInput);
}
