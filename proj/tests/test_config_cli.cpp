#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "test_util.hpp"
#include "unisep/cli.hpp"

using namespace unisep;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("unisep_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string config_error_key(const json& j) {
  try {
    config_from_json(j);
  } catch (const ConfigError& e) {
    return e.key();
  }
  return "<none>";
}

int run(std::vector<std::string> args, std::string* err_text = nullptr) {
  args.insert(args.begin(), "unisep");
  std::ostringstream err;
  const int code = cli::dispatch(args, err);
  if (err_text) *err_text = err.str();
  return code;
}

void write_json(const fs::path& p, const json& j) { std::ofstream(p) << j.dump(2); }

}  // namespace

TEST(Config, EmptyObjectGivesDefaults) {
  const GlobalConfig c = config_from_json(json::object());
  EXPECT_EQ(c.preset, "paper");
  EXPECT_DOUBLE_EQ(c.eda.theta, 0.5);
  EXPECT_EQ(c.dim, 256);
  EXPECT_EQ(c.separator.chunk_size, 250);
  EXPECT_EQ(c.eda.max_steps, 6);
  EXPECT_DOUBLE_EQ(c.loss.tau, 0.1);
  EXPECT_DOUBLE_EQ(c.trainer.attractor_prob, 0.3);
  EXPECT_EQ(c.seed, 0u);
}

TEST(Config, PresetAndOverridesCompose) {
  const GlobalConfig c = config_from_json({{"preset", "toy"}, {"seed", 7}, {"eda", {{"theta", 0.4}}}});
  EXPECT_EQ(c.dim, 64);
  EXPECT_EQ(c.seed, 7u);
  EXPECT_DOUBLE_EQ(c.eda.theta, 0.4);
  EXPECT_EQ(c.separator.chunk_size, 50);
  EXPECT_EQ(config_error_key({{"preset", "huge"}}), "preset");
  EXPECT_EQ(config_error_key({{"preset", 3}}), "preset");
}

TEST(Config, InvalidValuesNameTheirKey) {
  EXPECT_EQ(config_error_key({{"eda", {{"theta", 1.5}}}}), "eda.theta");
  EXPECT_EQ(config_error_key({{"eda", {{"theta", 0.0}}}}), "eda.theta");
  EXPECT_EQ(config_error_key({{"separator", {{"chunk_size", 7}}}}), "separator.chunk_size");
  EXPECT_EQ(config_error_key({{"separator", {{"heads", 3}}}}), "separator.heads");
  EXPECT_EQ(config_error_key({{"codec", {{"stride", 0}}}}), "codec.stride");
  EXPECT_EQ(config_error_key({{"loss", {{"tau", -1.0}}}}), "loss.tau");
  EXPECT_EQ(config_error_key({{"trainer", {{"attractor_prob", 1.2}}}}), "trainer.attractor_prob");
  EXPECT_EQ(config_error_key({{"data", {{"mix_orders", {2, 9}}}}}), "data.mix_orders");
  EXPECT_EQ(config_error_key({{"data", {{"seen_classes", 10}}}}), "data.seen_classes");
  try {
    config_from_json({{"eda", {{"theta", 1.5}}}});
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("eda.theta"), std::string::npos);
  }
}

TEST(Config, UnknownKeysAndWrongTypesRejected) {
  EXPECT_EQ(config_error_key({{"thetaa", 0.5}}), "thetaa");
  EXPECT_EQ(config_error_key({{"eda", {{"thetaa", 0.5}}}}), "eda.thetaa");
  EXPECT_EQ(config_error_key({{"dim", "big"}}), "dim");
  EXPECT_EQ(config_error_key({{"eda", 3}}), "eda");
  EXPECT_EQ(config_error_key(json::array()), "<root>");
}

TEST(Config, FileRoundTripPreservesEverything) {
  const auto dir = temp_dir("roundtrip");
  GlobalConfig c = preset_config("toy");
  c.seed = 42;
  c.eda.theta = 0.35;
  c.data.mix_orders = {1, 2, 3};
  c.clue.stub_seed = 99;
  save_config(c, (dir / "c.json").string());
  const GlobalConfig back = load_config((dir / "c.json").string());
  EXPECT_EQ(config_to_json(back), config_to_json(c));
  EXPECT_EQ(config_hash(back), config_hash(c));

  std::ofstream(dir / "bad.json") << "{ not json";
  EXPECT_THROW(load_config((dir / "bad.json").string()), ConfigError);
  EXPECT_THROW(load_config((dir / "missing.json").string()), ConfigError);
}

TEST(Config, HashIsStableAndSensitive) {
  const GlobalConfig a = preset_config("toy");
  EXPECT_EQ(config_hash(a), config_hash(preset_config("toy")));
  EXPECT_EQ(config_hash(a).size(), 16u);
  GlobalConfig b = a;
  b.loss.tau = 0.2;
  GlobalConfig c = a;
  c.seed = 1;
  GlobalConfig d = a;
  d.data.mix_orders = {3, 2};
  std::set<std::string> hashes{config_hash(a), config_hash(b), config_hash(c), config_hash(d),
                               config_hash(preset_config("paper"))};
  EXPECT_EQ(hashes.size(), 5u);
}

TEST(Rng, DerivedSeedsAreDistinctAndUniform) {
  std::set<std::uint64_t> seen;
  for (const char* n : {"data", "init", "branch", "clue-noise", "class-prototypes"}) seen.insert(derive_seed(0, n));
  for (std::uint64_t i = 0; i < 1000; ++i) seen.insert(derive_seed(0, i));
  EXPECT_EQ(seen.size(), 1005u);
  EXPECT_NE(derive_seed(0, "data"), derive_seed(1, "data"));

  // Top 4 bits of the first draw of 4000 sibling streams: chi-square, 15 dof, p = 0.001 cut-off 37.70.
  std::array<int, 16> hist{};
  for (std::uint64_t i = 0; i < 4000; ++i) {
    Rng r(derive_seed(123, i));
    ++hist[r() >> 60];
  }
  double chi2 = 0;
  for (int h : hist) chi2 += (h - 250.0) * (h - 250.0) / 250.0;
  EXPECT_LT(chi2, 37.70);
}

TEST(Rng, NamedStreamsAreUncorrelated) {
  RngRegistry reg(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int n = 20000;
  double sx = 0, sy = 0, sxy = 0, sxx = 0, syy = 0;
  for (int i = 0; i < n; ++i) {
    const double x = u(reg.stream("data"));
    const double y = u(reg.stream("init"));
    sx += x;
    sy += y;
    sxy += x * y;
    sxx += x * x;
    syy += y * y;
  }
  const double cov = sxy / n - sx / n * sy / n;
  const double r = cov / std::sqrt((sxx / n - sx * sx / n / n) * (syy / n - sy * sy / n / n));
  EXPECT_LT(std::abs(r), 5.0 / std::sqrt(n));
}

TEST(Rng, StreamsDoNotDependOnAccessOrder) {
  RngRegistry a(9), b(9);
  const auto a1 = a.stream("data")();
  const auto a2 = a.stream("init")();
  const auto b2 = b.stream("init")();
  const auto b1 = b.stream("data")();
  EXPECT_EQ(a1, b1);
  EXPECT_EQ(a2, b2);
  EXPECT_EQ(seed_everything(9).stream("branch")(), RngRegistry(9).stream("branch")());
}

TEST(Rng, SerializeRestoreContinuesExactly) {
  RngRegistry a(11);
  for (int i = 0; i < 37; ++i) a.stream("data")();
  for (int i = 0; i < 5; ++i) a.stream("branch")();
  const auto state = a.serialize();
  EXPECT_EQ(state.size(), 2u);
  RngRegistry b(11);
  b.restore(state);
  for (int i = 0; i < 100; ++i) {
    EXPECT_EQ(a.stream("data")(), b.stream("data")());
    EXPECT_EQ(a.stream("branch")(), b.stream("branch")());
  }
  EXPECT_EQ(a.stream("fresh")(), b.stream("fresh")());
}

TEST(Cli, IntListParsing) {
  EXPECT_EQ(cli::parse_int_list("3,1,4"), (std::vector<int>{3, 1, 4}));
  EXPECT_EQ(cli::parse_int_list("7"), (std::vector<int>{7}));
  EXPECT_ANY_THROW(cli::parse_int_list("3,x"));
}

TEST(Cli, ParseErrorsExitOne) {
  std::string err;
  EXPECT_EQ(run({"frobnicate"}, &err), 1);
  EXPECT_NE(err.find("error"), std::string::npos);
  EXPECT_EQ(run({}), 1);
  EXPECT_EQ(run({"synth"}), 1);
  EXPECT_EQ(run({"train", "--manifest", "m.jsonl", "--stage", "3"}), 1);
  EXPECT_EQ(run({"eval", "--ckpt", "c", "--manifest", "m", "--out", "o", "--mode", "bogus"}), 1);
  EXPECT_EQ(run({"--version"}), 0);
}

TEST(Cli, RuntimeErrorsExitTwo) {
  const auto dir = temp_dir("runtime");
  std::string err;
  write_json(dir / "bad.json", {{"eda", {{"theta", 1.5}}}});
  EXPECT_EQ(run({"synth", "--out", (dir / "d").string(), "--config", (dir / "bad.json").string()}, &err), 2);
  EXPECT_NE(err.find("eda.theta"), std::string::npos);
  EXPECT_EQ(run({"separate", "--ckpt", (dir / "none.bin").string(), "--in", "x.wav", "--out-dir",
                 (dir / "o").string()}),
            2);
  EXPECT_EQ(run({"train", "--manifest", (dir / "none.jsonl").string()}), 2);
}

TEST(Cli, SynthWritesManifestAndRunInfo) {
  const auto dir = temp_dir("synth");
  GlobalConfig c = unisep::testing::tiny_config();
  c.data.duration_s = 0.02;
  c.data.train_per_order = 2;
  c.data.valid_per_order = 1;
  c.data.test_per_order = 1;
  save_config(c, (dir / "cfg.json").string());
  const auto out = dir / "data";
  ASSERT_EQ(run({"synth", "--out", out.string(), "--config", (dir / "cfg.json").string()}), 0);
  EXPECT_TRUE(fs::exists(out / "config.json"));
  std::ifstream info(out / "run_info.json");
  const json j = json::parse(info);
  EXPECT_EQ(j.at("command"), "synth");
  EXPECT_EQ(j.at("config_hash"), config_hash(c));
  EXPECT_EQ(config_hash(load_config((out / "config.json").string())), config_hash(c));

  std::string err;
  EXPECT_EQ(run({"train", "--stage", "2", "--manifest", (out / "manifest.jsonl").string(), "--config",
                 (dir / "cfg.json").string(), "--out", (dir / "run").string()},
                &err),
            2);
  EXPECT_NE(err.find("--init"), std::string::npos);
}
