#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace unisep;
using unisep::testing::random_matrix;
using unisep::testing::tiny_config;

namespace {

GlobalConfig sep_config(int dim, int chunk, int heads) {
  GlobalConfig c = preset_config("toy");
  c.dim = dim;
  c.separator.chunk_size = chunk;
  c.separator.heads = heads;
  c.separator.ff_hidden = 2 * dim;
  return c;
}

template <typename T>
struct Fixture {
  nn::ParameterSet<T> ps;
  Separator<T> sep;
  explicit Fixture(const GlobalConfig& c, std::uint64_t seed = 1) {
    Rng rng(seed);
    sep = Separator<T>::create(ps, c, rng);
  }
};

}  // namespace

TEST(Separator, DualPathShapes) {
  auto cfg = sep_config(64, 250, 2);
  Fixture<float> f(cfg);
  const ChunkLayout l = chunk_layout(625, 250);
  ASSERT_EQ(l.chunks, 4);
  ad::Tape<float> t(false);
  auto grid = t.constant(random_matrix<float>(l.positions(), 64, 2));
  auto out = f.sep.dual_path_forward(t, grid, l);
  EXPECT_EQ(out.V.rows(), 4 * 250);
  EXPECT_EQ(out.V.cols(), 64);
  EXPECT_EQ(out.W.rows(), 4);
  EXPECT_EQ(out.W.cols(), 64);
  EXPECT_TRUE(out.V.value().allFinite());
  EXPECT_TRUE(out.W.value().allFinite());
  EXPECT_THROW(f.sep.dual_path_forward(t, t.constant(Matrix<float>::Zero(10, 64)), l), ShapeError);
}

TEST(Separator, ChunkOrderPermutesSummaries) {
  auto cfg = sep_config(8, 6, 2);
  Fixture<double> f(cfg, 3);
  const ChunkLayout l = chunk_layout(30, 6);  // 9 chunks
  Matrix<double> g = random_matrix<double>(l.positions(), 8, 4);
  const std::vector<int> perm = {3, 0, 8, 1, 7, 2, 6, 4, 5};
  Matrix<double> gp(g.rows(), g.cols());
  for (int c = 0; c < l.chunks; ++c) gp.middleRows(c * 6, 6) = g.middleRows(perm[static_cast<size_t>(c)] * 6, 6);
  ad::Tape<double> t(false);
  Matrix<double> W = f.sep.dual_path_forward(t, t.constant(g), l).W.value();
  Matrix<double> Wp = f.sep.dual_path_forward(t, t.constant(gp), l).W.value();
  for (int c = 0; c < l.chunks; ++c) {
    EXPECT_LE((Wp.row(c) - W.row(perm[static_cast<size_t>(c)])).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Separator, ZeroInputWithZeroOutputProjectionsIsZero) {
  auto cfg = sep_config(8, 6, 2);
  Fixture<double> f(cfg);
  for (auto* p : f.ps.all()) {
    if (p->name.find(".attn.o.w") != std::string::npos || p->name.find(".ff.down.w") != std::string::npos) {
      p->value.setZero();
    }
  }
  const ChunkLayout l = chunk_layout(20, 6);
  ad::Tape<double> t(false);
  auto out = f.sep.dual_path_forward(t, t.constant(Matrix<double>::Zero(l.positions(), 8)), l);
  EXPECT_TRUE(out.V.value().allFinite());
  EXPECT_EQ(out.V.value().cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(out.W.value().cwiseAbs().maxCoeff(), 0.0);
}

TEST(Separator, ModulationIsElementwise) {
  auto cfg = sep_config(8, 6, 2);
  Fixture<double> f(cfg);
  ad::Tape<double> t(false);
  Matrix<double> V = random_matrix<double>(12, 8, 5);
  Matrix<double> A = random_matrix<double>(3, 8, 6);
  A.row(1).setZero();
  A.row(2) = A.row(0);
  Matrix<double> Y = f.sep.modulate(t.constant(V), t.constant(A)).value();
  ASSERT_EQ(Y.rows(), 36);
  for (int j = 0; j < 3; ++j) {
    for (int p = 0; p < 12; ++p) {
      EXPECT_LE((Y.row(j * 12 + p) - V.row(p).cwiseProduct(A.row(j))).cwiseAbs().maxCoeff(), 1e-14);
    }
  }
  EXPECT_EQ(Y.middleRows(12, 12).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ((Y.middleRows(24, 12) - Y.topRows(12)).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Separator, SingleChannelAttentionIsValuePath) {
  // With one key per group the softmax weight is 1, so attention returns V.
  ad::Tape<double> t(false);
  Matrix<double> q = random_matrix<double>(5, 4, 1), k = random_matrix<double>(5, 4, 2), v = random_matrix<double>(5, 4, 3);
  const PathGroups g = path_groups(1, 1, 5);
  ASSERT_EQ(g.channel.size, 1);
  auto out = ad::attention(t.constant(q), t.constant(k), t.constant(v), 2, g.channel, g.channel);
  EXPECT_LE((out.value() - v).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Separator, RefineShapesAndErrors) {
  auto cfg = sep_config(8, 6, 2);
  Fixture<float> f(cfg);
  const ChunkLayout l = chunk_layout(20, 6);
  ad::Tape<float> t(false);
  auto V = t.constant(random_matrix<float>(l.positions(), 8, 7));
  auto Z = f.sep.modulate_and_refine(t, V, t.constant(random_matrix<float>(1, 8, 8)), l);
  EXPECT_EQ(Z.rows(), l.positions());
  EXPECT_TRUE(Z.value().allFinite());
  EXPECT_THROW(f.sep.modulate_and_refine(t, V, t.constant(Matrix<float>(0, 8)), l), InvalidInput);
  EXPECT_THROW(f.sep.modulate_and_refine(t, V, t.constant(Matrix<float>::Ones(2, 4)), l), ShapeError);
}

TEST(Separator, MasksNonnegativeWithExpectedShape) {
  auto cfg = sep_config(64, 50, 2);
  Fixture<float> f(cfg);
  const ChunkLayout l = chunk_layout(1999, 50);
  ad::Tape<float> t(false);
  auto Z = t.constant(random_matrix<float>(3 * l.positions(), 64, 9));
  auto m = f.sep.emit_masks(t, Z, l, 3);
  EXPECT_EQ(m.rows(), 3 * 1999);
  EXPECT_EQ(m.cols(), 64);
  EXPECT_GE(m.value().minCoeff(), 0.f);
  EXPECT_GT(m.value().maxCoeff(), 0.f);
}

TEST(Separator, ZeroGateWeightsGiveZeroMasks) {
  auto cfg = sep_config(8, 6, 2);
  Fixture<double> f(cfg);
  f.sep.gate_tanh().weight->value.setZero();
  f.sep.gate_sigmoid().weight->value.setZero();
  const ChunkLayout l = chunk_layout(20, 6);
  ad::Tape<double> t(false);
  auto m = f.sep.emit_masks(t, t.constant(random_matrix<double>(2 * l.positions(), 8, 10)), l, 2);
  // tanh(0) * sigmoid(0) = 0 and the mask bias starts at zero.
  EXPECT_EQ(m.value().cwiseAbs().maxCoeff(), 0.0);
}

TEST(Separator, FullForwardEquivariantInA) {
  auto cfg = tiny_config();
  Model<double> model(cfg);
  Matrix<double> mix = random_matrix<double>(1, cfg.samples_per_clip(), 11, 0.3);
  Matrix<double> A = random_matrix<double>(3, cfg.dim, 12);
  const std::vector<int> perm = {2, 0, 1};
  Matrix<double> Ap(3, cfg.dim);
  for (int j = 0; j < 3; ++j) Ap.row(j) = A.row(perm[static_cast<size_t>(j)]);
  ad::Tape<double> t(false);
  auto a = model.analyze(t, t.constant(mix));
  Matrix<double> e = model.separate_with(t, a, t.constant(A)).value();
  Matrix<double> ep = model.separate_with(t, a, t.constant(Ap)).value();
  for (int j = 0; j < 3; ++j) EXPECT_EQ(ep.row(j), e.row(perm[static_cast<size_t>(j)]));
}

TEST(Separator, FullForwardEquivariantInAFloatToyShapes) {
  auto cfg = preset_config("toy");
  cfg.data.duration_s = 0.25;
  Model<float> model(cfg);
  Matrix<float> mix = random_matrix<float>(1, cfg.samples_per_clip(), 15, 0.3);
  Matrix<float> A = random_matrix<float>(3, cfg.dim, 16, 0.5);
  Matrix<float> Ap(3, cfg.dim);
  Ap << A.row(1), A.row(2), A.row(0);
  ad::Tape<float> t(false);
  auto a = model.analyze(t, t.constant(mix));
  Matrix<float> e = model.separate_with(t, a, t.constant(A)).value();
  Matrix<float> ep = model.separate_with(t, a, t.constant(Ap)).value();
  EXPECT_EQ(ep.row(0), e.row(1));
  EXPECT_EQ(ep.row(1), e.row(2));
  EXPECT_EQ(ep.row(2), e.row(0));
}

TEST(Separator, SeparationLossGradientMatchesFiniteDifferences) {
  auto cfg = tiny_config();
  Model<double> model(cfg);
  Matrix<double> targets = random_matrix<double>(2, cfg.samples_per_clip(), 13, 0.3);
  Matrix<double> mix = targets.colwise().sum();
  Matrix<double> A = random_matrix<double>(2, cfg.dim, 14);
  std::vector<ad::Parameter<double>*> ps;
  for (auto* p : model.params().trainable()) {
    if (p->name.rfind("sep.", 0) == 0) ps.push_back(p);
  }
  auto loss = [&](bool bw) {
    ad::Tape<double> t(bw);
    auto a = model.analyze(t, t.constant(mix));
    auto l = pit_snr_loss(t.constant(targets), model.separate_with(t, a, t.constant(A))).loss;
    if (bw) t.backward(l);
    return l.item();
  };
  auto r = unisep::testing::check_gradients(ps, loss, 3);
  EXPECT_LE(r.worst, 1e-4) << r.worst_name;
  EXPECT_GT(r.tensors, 40);
}
