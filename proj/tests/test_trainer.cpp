#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "test_util.hpp"

using namespace unisep;
using unisep::testing::tiny_config;

namespace {

GlobalConfig train_config() {
  GlobalConfig c = tiny_config();
  c.data.duration_s = 0.02;
  c.data.train_per_order = 8;
  c.data.valid_per_order = 2;
  c.data.test_per_order = 0;
  c.trainer.batch_size = 4;
  c.trainer.stage1_epochs = 2;
  c.trainer.stage2_epochs = 2;
  c.trainer.stage1_lr = 1e-3;
  c.trainer.stage2_lr = 1e-3;
  return c;
}

std::vector<MixtureItem> split_of(const std::vector<MixtureItem>& all, const std::string& s) {
  std::vector<MixtureItem> out;
  for (const auto& it : all) {
    if (it.split == s) out.push_back(it);
  }
  return out;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("unisep_trainer_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

template <typename T>
double max_param_diff(Model<T>& a, Model<T>& b) {
  double d = 0;
  auto pa = a.params().all();
  auto pb = b.params().all();
  for (size_t i = 0; i < pa.size(); ++i) {
    if (pa[i]->value.size() == 0) continue;
    d = std::max(d, static_cast<double>((pa[i]->value - pb[i]->value).cwiseAbs().maxCoeff()));
  }
  return d;
}

bool is_key_bias(const std::string& n) { return n.size() > 8 && n.compare(n.size() - 8, 8, ".attn.k.b") == 0; }

}  // namespace

TEST(Trainer, CheckpointRoundTripIsBitExact) {
  auto cfg = train_config();
  auto dir = temp_dir("roundtrip");
  Model<float> m(cfg);
  Adam<float> opt(1e-3);
  for (auto* p : m.params().trainable()) p->grad.setConstant(0.25f);
  opt.step(m.params().trainable());
  opt.step(m.params().trainable());
  CheckpointMeta meta;
  meta.stage = 1;
  meta.epoch = 3;
  save_checkpoint((dir / "ck").string(), m, &opt, meta);

  GlobalConfig other = cfg;
  other.seed = 77;
  Model<float> r(cfg);
  for (auto* p : r.params().all()) p->value.setRandom();
  Adam<float> ropt(1e-3);
  auto back = load_checkpoint((dir / "ck.bin").string(), r, &ropt, config_hash(cfg));
  EXPECT_EQ(max_param_diff(m, r), 0.0);
  EXPECT_EQ(back.epoch, 3);
  EXPECT_EQ(ropt.steps(), 2);
  for (const auto& [name, mom] : opt.state()) {
    EXPECT_EQ(ropt.state().at(name).m, mom.m);
    EXPECT_EQ(ropt.state().at(name).v, mom.v);
  }
  auto loaded = load_model<float>((dir / "ck.json").string());
  EXPECT_EQ(max_param_diff(m, *loaded), 0.0);
  std::filesystem::remove_all(dir);
}

TEST(Trainer, CorruptedBlobIsRejected) {
  auto cfg = train_config();
  auto dir = temp_dir("corrupt");
  Model<float> m(cfg);
  save_checkpoint((dir / "ck").string(), m, static_cast<const Adam<float>*>(nullptr), {});
  const auto bin = (dir / "ck.bin").string();
  std::string blob = read_file(bin);
  blob[blob.size() / 2] = static_cast<char>(blob[blob.size() / 2] ^ 0x5a);
  std::ofstream(bin, std::ios::binary).write(blob.data(), static_cast<std::streamsize>(blob.size()));
  Model<float> r(cfg);
  EXPECT_THROW(load_checkpoint(bin, r), IntegrityError);
  // Consistent sidecar but damaged payload still fails the internal checksum.
  std::string good = read_file(bin);
  good[good.size() / 3] ^= 1;
  EXPECT_THROW(deserialize_parameters(good, r, static_cast<Adam<float>*>(nullptr)), IntegrityError);
  EXPECT_THROW(deserialize_parameters(std::string("short"), r, static_cast<Adam<float>*>(nullptr)),
               IntegrityError);
  std::filesystem::remove_all(dir);
}

TEST(Trainer, ConfigHashMismatchRefusesResume) {
  auto cfg = train_config();
  auto dir = temp_dir("hash");
  Model<float> m(cfg);
  save_checkpoint((dir / "ck").string(), m, static_cast<const Adam<float>*>(nullptr), {});
  GlobalConfig changed = cfg;
  changed.trainer.stage1_lr = 5e-4;
  ASSERT_NE(config_hash(changed), config_hash(cfg));
  Model<float> r(changed);
  try {
    load_checkpoint((dir / "ck").string(), r, static_cast<Adam<float>*>(nullptr), config_hash(changed));
    FAIL() << "expected IntegrityError";
  } catch (const IntegrityError& e) {
    EXPECT_NE(std::string(e.what()).find("config hash mismatch"), std::string::npos);
  }
  GlobalConfig bigger = cfg;
  bigger.dim = 12;
  Model<float> wrong(bigger);
  EXPECT_THROW(load_checkpoint((dir / "ck").string(), wrong), IntegrityError);
  std::filesystem::remove_all(dir);
}

TEST(Trainer, BranchFrequenciesAndModalityCycle) {
  Rng rng(derive_seed(0, "branch"));
  BranchScheduler s(rng, 0.3);
  int attractor = 0;
  std::vector<ModalitySet> clue_draws;
  for (int i = 0; i < 10000; ++i) {
    auto d = s.next();
    if (d.attractor) {
      ++attractor;
    } else {
      clue_draws.push_back(d.modalities);
    }
  }
  EXPECT_NEAR(attractor / 10000.0, 0.3, 0.02);
  EXPECT_NEAR(static_cast<double>(clue_draws.size()) / 10000.0, 0.7, 0.02);
  for (size_t start = 0; start + 7 <= clue_draws.size(); start += 7) {
    std::set<ModalitySet> cycle(clue_draws.begin() + static_cast<std::ptrdiff_t>(start),
                                clue_draws.begin() + static_cast<std::ptrdiff_t>(start + 7));
    ASSERT_EQ(cycle.size(), 7u) << "cycle starting at " << start;
  }
  for (size_t i = 0; i < clue_draws.size(); ++i) EXPECT_EQ(clue_draws[i], kModalityCycle[i % 7]);
  EXPECT_EQ(s.cycle_position(), clue_draws.size());
}

TEST(Trainer, StageTwoGradientFlow) {
  auto cfg = train_config();
  auto items = split_of(generate_dataset(cfg), "train");
  auto samples = make_samples<float>(items);
  Model<float> m(cfg);
  const auto checksum = m.clue().frozen_checksum();
  for (bool attractor : {false, true}) {
    m.params().zero_grad();
    for (int i = 0; i < 4; ++i) {
      BranchScheduler::Draw d;
      d.attractor = attractor;
      d.modalities = kModalityCycle[static_cast<size_t>(i) % 7];
      item_loss(m, samples[static_cast<size_t>(i)], 2, d, 0.25f);
    }
    EXPECT_EQ(m.clue().text_stub().grad.cwiseAbs().maxCoeff(), 0.f);
    EXPECT_EQ(m.clue().video_stub().grad.cwiseAbs().maxCoeff(), 0.f);
    for (auto* p : m.params().trainable()) {
      // Softmax is invariant to a key bias, so its gradient is zero up to roundoff.
      if (p->value.size() == 0 || is_key_bias(p->name)) continue;
      // A single dual-path layer makes the layer-mixing softmax constant.
      if (p->name == "sep.agg.layer_logits" && p->value.size() == 1) continue;
      EXPECT_GT(p->grad.cwiseAbs().maxCoeff(), 0.f) << p->name << (attractor ? " (attractor)" : " (clue)");
    }
  }
  EXPECT_EQ(m.clue().frozen_checksum(), checksum);
}

TEST(Trainer, StageOneLeavesClueNetworkUntouched) {
  auto cfg = train_config();
  auto samples = make_samples<float>(split_of(generate_dataset(cfg), "train"));
  Model<float> m(cfg);
  m.params().zero_grad();
  item_loss(m, samples[0], 1, {}, 1.0f);
  for (auto* p : m.params().trainable()) {
    if (p->name.rfind("clue.", 0) == 0 && p->grad.size() > 0) EXPECT_EQ(p->grad.cwiseAbs().maxCoeff(), 0.f) << p->name;
  }
  auto l = item_loss(m, samples[0], 1, {}, 1.0f, false);
  EXPECT_EQ(l.mse, 0.0);
  EXPECT_EQ(l.infonce, 0.0);
  EXPECT_EQ(l.permutation.size(), static_cast<size_t>(samples[0].order()));
}

TEST(Trainer, DivergenceGuard) {
  auto cfg = train_config();
  auto samples = make_samples<float>(split_of(generate_dataset(cfg), "train"));
  Model<float> m(cfg);
  samples[0].mixture(0, 3) = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(item_loss(m, samples[0], 1, {}, 1.0f), TrainingDiverged);
}

TEST(Trainer, RunsAreDeterministic) {
  auto cfg = train_config();
  cfg.trainer.stage1_epochs = 1;
  auto all = generate_dataset(cfg);
  auto train = split_of(all, "train"), valid = split_of(all, "valid");
  std::vector<double> loss;
  for (int run = 0; run < 2; ++run) {
    auto dir = temp_dir("det" + std::to_string(run));
    Model<float> m(cfg);
    RngRegistry rngs(cfg.seed);
    auto res = Trainer<float>(m, rngs).run(1, train, valid, {dir.string()});
    loss.push_back(res.epochs.at(0).total);
    std::filesystem::remove_all(dir);
  }
  EXPECT_NEAR(loss[0], loss[1], 1e-6);
}

TEST(Trainer, TrainingReducesLoss) {
  auto cfg = train_config();
  cfg.data.train_per_order = 16;
  cfg.trainer.stage1_epochs = 6;
  cfg.trainer.valid_items = 0;
  auto train = split_of(generate_dataset(cfg), "train");
  auto dir = temp_dir("decrease");
  Model<float> m(cfg);
  RngRegistry rngs(cfg.seed);
  auto res = Trainer<float>(m, rngs).run(1, train, {}, {dir.string()});
  ASSERT_EQ(res.epochs.size(), 6u);
  EXPECT_LT(res.epochs.back().total, res.epochs.front().total);
  std::ifstream log(dir / "train_log.jsonl");
  int lines = 0;
  for (std::string l; std::getline(log, l);) {
    auto j = json::parse(l);
    EXPECT_EQ(j.at("stage"), 1);
    ++lines;
  }
  EXPECT_EQ(lines, 6);
  EXPECT_TRUE(std::filesystem::exists(res.best_checkpoint + ".bin"));
  std::filesystem::remove_all(dir);
}

TEST(Trainer, ResumeMatchesUninterruptedRun) {
  auto cfg = train_config();
  auto all = generate_dataset(cfg);
  auto train = split_of(all, "train"), valid = split_of(all, "valid");
  auto full_dir = temp_dir("full"), part_dir = temp_dir("part");

  Model<float> s1(cfg);
  RngRegistry r1(cfg.seed);
  Trainer<float>(s1, r1).run(1, train, valid, {full_dir.string()});
  Model<float> full(cfg);
  load_checkpoint((full_dir / "stage1_last").string(), full);
  RngRegistry rf(cfg.seed);
  rf.restore(read_checkpoint_meta((full_dir / "stage1_last").string()).rng_state);
  Trainer<float>(full, rf).run(2, train, valid, {full_dir.string()});

  Model<float> part(cfg);
  load_checkpoint((full_dir / "stage1_last").string(), part);
  RngRegistry rp(cfg.seed);
  rp.restore(read_checkpoint_meta((full_dir / "stage1_last").string()).rng_state);
  {
    // Interrupt stage 2 after its first epoch.
    TrainOptions o{part_dir.string()};
    int seen = 0;
    o.on_epoch = [&](const EpochLog&) {
      if (++seen == 1) throw std::runtime_error("interrupt");
    };
    EXPECT_THROW(Trainer<float>(part, rp).run(2, train, valid, o), std::runtime_error);
  }
  Model<float> resumed(cfg);
  RngRegistry rr(cfg.seed);
  TrainOptions o{part_dir.string()};
  o.resume = (part_dir / "stage2_last").string();
  auto res = Trainer<float>(resumed, rr).run(2, train, valid, o);
  ASSERT_EQ(res.epochs.size(), 1u);
  EXPECT_EQ(res.epochs[0].epoch, 2);
  EXPECT_EQ(max_param_diff(full, resumed), 0.0);
  std::filesystem::remove_all(full_dir);
  std::filesystem::remove_all(part_dir);
}

TEST(Trainer, RejectsBadInputs) {
  auto cfg = train_config();
  Model<float> m(cfg);
  RngRegistry rngs(cfg.seed);
  Trainer<float> t(m, rngs);
  auto dir = temp_dir("bad");
  EXPECT_THROW(t.run(3, split_of(generate_dataset(cfg), "train"), {}, {dir.string()}), InvalidInput);
  EXPECT_THROW(t.run(1, {}, {}, {dir.string()}), InvalidInput);
  std::filesystem::remove_all(dir);
}
