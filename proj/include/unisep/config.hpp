#pragma once

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "unisep/errors.hpp"
#include "unisep/rng.hpp"

namespace unisep {

using json = nlohmann::json;

struct CodecConfig {
  int sample_rate = 8000;
  int kernel = 16;
  int stride = 8;
};

struct SeparatorConfig {
  int chunk_size = 250;
  int heads = 4;
  int dual_layers = 2;
  int triple_layers = 1;
  int ff_hidden = 1024;
};

struct EdaConfig {
  double theta = 0.5;
  int max_steps = 6;
};

struct ClueConfig {
  std::uint64_t stub_seed = 1234;
  int vocab_size = 48;
  int text_len = 6;
  int video_frames = 4;
  int video_dim = 16;
  int heads = 4;
};

struct LossConfig {
  double tau = 0.1;
  double lambda_count = 1.0;
  double lambda_align = 1.0;
  double snr_clamp_db = 30.0;
  double snr_eps = 1e-8;
  double bce_eps = 1e-7;
};

struct TrainerConfig {
  double stage1_lr = 1e-4;
  int stage1_epochs = 70;
  double stage2_lr = 3e-5;
  int stage2_epochs = 30;
  int batch_size = 8;
  double grad_clip = 5.0;
  double attractor_prob = 0.3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int valid_items = 200;  // per mix order; 0 disables validation
};

struct DataConfig {
  double duration_s = 2.0;
  std::vector<int> mix_orders = {2, 3};
  int train_per_order = 2000;
  int valid_per_order = 200;
  int test_per_order = 200;
  double gain_db = 2.5;
  int seen_classes = 8;
  int unseen_classes = 4;
  double train_quality_min = 0.5;
  double test_quality = 0.8;
};

struct EvalConfig {
  int max_items = 0;  // 0 = all items of the selected split
};

/// Full run configuration. Loaded from JSON over a named preset.
struct GlobalConfig {
  std::string preset = "paper";
  std::uint64_t seed = 0;
  int dim = 256;
  CodecConfig codec;
  SeparatorConfig separator;
  EdaConfig eda;
  ClueConfig clue;
  LossConfig loss;
  TrainerConfig trainer;
  DataConfig data;
  EvalConfig eval;

  int num_classes() const { return data.seen_classes + data.unseen_classes; }
  int samples_per_clip() const {
    return static_cast<int>(data.duration_s * codec.sample_rate + 0.5);
  }
};

/// `paper`: D=256, K=250, 70+30 epochs. `toy`: desk-scale settings.
inline GlobalConfig preset_config(const std::string& name) {
  GlobalConfig c;
  c.preset = name;
  if (name == "paper") return c;
  if (name != "toy") throw ConfigError("preset", "unknown preset '" + name + "'");
  c.dim = 64;
  c.codec.kernel = 64;
  c.codec.stride = 32;
  c.separator.chunk_size = 50;
  c.separator.heads = 2;
  c.separator.dual_layers = 1;
  c.separator.triple_layers = 1;
  c.separator.ff_hidden = 128;
  c.clue.heads = 2;
  c.trainer.stage1_lr = 1e-3;
  c.trainer.stage1_epochs = 12;
  c.trainer.stage2_lr = 3e-4;
  c.trainer.stage2_epochs = 15;
  c.trainer.valid_items = 40;
  c.data.train_per_order = 1000;
  c.data.valid_per_order = 40;
  c.data.test_per_order = 200;
  return c;
}

namespace detail {

class ConfigReader {
 public:
  ConfigReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  template <typename V>
  void get(const char* key, V& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<V>();
    } catch (const json::exception& e) {
      throw ConfigError(full(key), std::string("wrong type: ") + e.what());
    }
  }

  template <typename F>
  void section(const char* key, F&& fn) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    ConfigReader sub(j_.at(key), full(key));
    fn(sub);
    sub.finish();
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(full(it.key()), "unknown key");
    }
  }

  std::string full(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline void require(bool ok, const std::string& key, const std::string& what) {
  if (!ok) throw ConfigError(key, what);
}

}  // namespace detail

inline void validate(const GlobalConfig& c) {
  using detail::require;
  require(c.dim > 0, "dim", "must be positive");
  require(c.codec.sample_rate > 0, "codec.sample_rate", "must be positive");
  require(c.codec.kernel > 0, "codec.kernel", "must be positive");
  require(c.codec.stride > 0 && c.codec.stride <= c.codec.kernel, "codec.stride", "must be in [1, kernel]");
  require(c.separator.chunk_size > 0 && c.separator.chunk_size % 2 == 0, "separator.chunk_size",
          "must be positive and even");
  require(c.separator.heads > 0 && c.dim % c.separator.heads == 0, "separator.heads", "must divide dim");
  require(c.separator.dual_layers >= 1, "separator.dual_layers", "must be >= 1");
  require(c.separator.triple_layers >= 1, "separator.triple_layers", "must be >= 1");
  require(c.separator.ff_hidden > 0, "separator.ff_hidden", "must be positive");
  require(c.eda.theta > 0.0 && c.eda.theta < 1.0, "eda.theta", "must lie in (0, 1)");
  require(c.eda.max_steps >= 1, "eda.max_steps", "must be >= 1");
  require(c.clue.vocab_size > 1, "clue.vocab_size", "must be > 1");
  require(c.clue.text_len >= 1, "clue.text_len", "must be >= 1");
  require(c.clue.video_frames >= 1, "clue.video_frames", "must be >= 1");
  require(c.clue.video_dim >= 1, "clue.video_dim", "must be >= 1");
  require(c.clue.heads > 0 && c.dim % c.clue.heads == 0, "clue.heads", "must divide dim");
  require(c.loss.tau > 0.0, "loss.tau", "must be positive");
  require(c.loss.lambda_count >= 0.0, "loss.lambda_count", "must be >= 0");
  require(c.loss.lambda_align >= 0.0, "loss.lambda_align", "must be >= 0");
  require(c.loss.snr_eps > 0.0, "loss.snr_eps", "must be positive");
  require(c.loss.bce_eps > 0.0 && c.loss.bce_eps < 0.5, "loss.bce_eps", "must lie in (0, 0.5)");
  require(c.trainer.stage1_lr > 0.0, "trainer.stage1_lr", "must be positive");
  require(c.trainer.stage2_lr > 0.0, "trainer.stage2_lr", "must be positive");
  require(c.trainer.stage1_epochs >= 0, "trainer.stage1_epochs", "must be >= 0");
  require(c.trainer.stage2_epochs >= 0, "trainer.stage2_epochs", "must be >= 0");
  require(c.trainer.batch_size >= 1, "trainer.batch_size", "must be >= 1");
  require(c.trainer.grad_clip > 0.0, "trainer.grad_clip", "must be positive");
  require(c.trainer.attractor_prob >= 0.0 && c.trainer.attractor_prob <= 1.0, "trainer.attractor_prob",
          "must lie in [0, 1]");
  require(c.trainer.valid_items >= 0, "trainer.valid_items", "must be >= 0");
  require(c.data.duration_s > 0.0, "data.duration_s", "must be positive");
  require(c.samples_per_clip() >= c.codec.kernel, "data.duration_s", "clip shorter than one encoder frame");
  require(!c.data.mix_orders.empty(), "data.mix_orders", "must not be empty");
  for (int j : c.data.mix_orders) {
    require(j >= 1 && j <= c.eda.max_steps && j <= c.data.seen_classes, "data.mix_orders",
            "mix order must be in [1, min(eda.max_steps, seen_classes)]");
  }
  require(c.data.train_per_order >= 0 && c.data.valid_per_order >= 0 && c.data.test_per_order >= 0,
          "data.train_per_order", "item counts must be >= 0");
  require(c.data.gain_db >= 0.0, "data.gain_db", "must be >= 0");
  require(c.data.seen_classes >= 1, "data.seen_classes", "must be >= 1");
  require(c.data.unseen_classes >= 0, "data.unseen_classes", "must be >= 0");
  require(c.num_classes() <= 12, "data.seen_classes", "at most 12 synthetic classes are defined");
  require(c.data.train_quality_min >= 0.0 && c.data.train_quality_min <= 1.0, "data.train_quality_min",
          "must lie in [0, 1]");
  require(c.data.test_quality >= 0.0 && c.data.test_quality <= 1.0, "data.test_quality", "must lie in [0, 1]");
  require(c.eval.max_items >= 0, "eval.max_items", "must be >= 0");
}

inline GlobalConfig config_from_json(const json& j) {
  std::string preset = "paper";
  if (j.is_object() && j.contains("preset")) {
    if (!j.at("preset").is_string()) throw ConfigError("preset", "must be a string");
    preset = j.at("preset").get<std::string>();
  }
  GlobalConfig c = preset_config(preset);
  detail::ConfigReader r(j, "");
  r.get("preset", c.preset);
  r.get("seed", c.seed);
  r.get("dim", c.dim);
  r.section("codec", [&](auto& s) {
    s.get("sample_rate", c.codec.sample_rate);
    s.get("kernel", c.codec.kernel);
    s.get("stride", c.codec.stride);
  });
  r.section("separator", [&](auto& s) {
    s.get("chunk_size", c.separator.chunk_size);
    s.get("heads", c.separator.heads);
    s.get("dual_layers", c.separator.dual_layers);
    s.get("triple_layers", c.separator.triple_layers);
    s.get("ff_hidden", c.separator.ff_hidden);
  });
  r.section("eda", [&](auto& s) {
    s.get("theta", c.eda.theta);
    s.get("max_steps", c.eda.max_steps);
  });
  r.section("clue", [&](auto& s) {
    s.get("stub_seed", c.clue.stub_seed);
    s.get("vocab_size", c.clue.vocab_size);
    s.get("text_len", c.clue.text_len);
    s.get("video_frames", c.clue.video_frames);
    s.get("video_dim", c.clue.video_dim);
    s.get("heads", c.clue.heads);
  });
  r.section("loss", [&](auto& s) {
    s.get("tau", c.loss.tau);
    s.get("lambda_count", c.loss.lambda_count);
    s.get("lambda_align", c.loss.lambda_align);
    s.get("snr_clamp_db", c.loss.snr_clamp_db);
    s.get("snr_eps", c.loss.snr_eps);
    s.get("bce_eps", c.loss.bce_eps);
  });
  r.section("trainer", [&](auto& s) {
    s.get("stage1_lr", c.trainer.stage1_lr);
    s.get("stage1_epochs", c.trainer.stage1_epochs);
    s.get("stage2_lr", c.trainer.stage2_lr);
    s.get("stage2_epochs", c.trainer.stage2_epochs);
    s.get("batch_size", c.trainer.batch_size);
    s.get("grad_clip", c.trainer.grad_clip);
    s.get("attractor_prob", c.trainer.attractor_prob);
    s.get("beta1", c.trainer.beta1);
    s.get("beta2", c.trainer.beta2);
    s.get("adam_eps", c.trainer.adam_eps);
    s.get("valid_items", c.trainer.valid_items);
  });
  r.section("data", [&](auto& s) {
    s.get("duration_s", c.data.duration_s);
    s.get("mix_orders", c.data.mix_orders);
    s.get("train_per_order", c.data.train_per_order);
    s.get("valid_per_order", c.data.valid_per_order);
    s.get("test_per_order", c.data.test_per_order);
    s.get("gain_db", c.data.gain_db);
    s.get("seen_classes", c.data.seen_classes);
    s.get("unseen_classes", c.data.unseen_classes);
    s.get("train_quality_min", c.data.train_quality_min);
    s.get("test_quality", c.data.test_quality);
  });
  r.section("eval", [&](auto& s) { s.get("max_items", c.eval.max_items); });
  r.finish();
  validate(c);
  return c;
}

inline json config_to_json(const GlobalConfig& c) {
  return json{
      {"preset", c.preset},
      {"seed", c.seed},
      {"dim", c.dim},
      {"codec", {{"sample_rate", c.codec.sample_rate}, {"kernel", c.codec.kernel}, {"stride", c.codec.stride}}},
      {"separator",
       {{"chunk_size", c.separator.chunk_size},
        {"heads", c.separator.heads},
        {"dual_layers", c.separator.dual_layers},
        {"triple_layers", c.separator.triple_layers},
        {"ff_hidden", c.separator.ff_hidden}}},
      {"eda", {{"theta", c.eda.theta}, {"max_steps", c.eda.max_steps}}},
      {"clue",
       {{"stub_seed", c.clue.stub_seed},
        {"vocab_size", c.clue.vocab_size},
        {"text_len", c.clue.text_len},
        {"video_frames", c.clue.video_frames},
        {"video_dim", c.clue.video_dim},
        {"heads", c.clue.heads}}},
      {"loss",
       {{"tau", c.loss.tau},
        {"lambda_count", c.loss.lambda_count},
        {"lambda_align", c.loss.lambda_align},
        {"snr_clamp_db", c.loss.snr_clamp_db},
        {"snr_eps", c.loss.snr_eps},
        {"bce_eps", c.loss.bce_eps}}},
      {"trainer",
       {{"stage1_lr", c.trainer.stage1_lr},
        {"stage1_epochs", c.trainer.stage1_epochs},
        {"stage2_lr", c.trainer.stage2_lr},
        {"stage2_epochs", c.trainer.stage2_epochs},
        {"batch_size", c.trainer.batch_size},
        {"grad_clip", c.trainer.grad_clip},
        {"attractor_prob", c.trainer.attractor_prob},
        {"beta1", c.trainer.beta1},
        {"beta2", c.trainer.beta2},
        {"adam_eps", c.trainer.adam_eps},
        {"valid_items", c.trainer.valid_items}}},
      {"data",
       {{"duration_s", c.data.duration_s},
        {"mix_orders", c.data.mix_orders},
        {"train_per_order", c.data.train_per_order},
        {"valid_per_order", c.data.valid_per_order},
        {"test_per_order", c.data.test_per_order},
        {"gain_db", c.data.gain_db},
        {"seen_classes", c.data.seen_classes},
        {"unseen_classes", c.data.unseen_classes},
        {"train_quality_min", c.data.train_quality_min},
        {"test_quality", c.data.test_quality}}},
      {"eval", {{"max_items", c.eval.max_items}}},
  };
}

inline GlobalConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("<file>", "cannot open config file '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError("<file>", std::string("invalid JSON: ") + e.what());
  }
  return config_from_json(j);
}

inline void save_config(const GlobalConfig& c, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write config file '" + path + "'");
  out << config_to_json(c).dump(2) << "\n";
}

/// Stable hash of the canonical (sorted-key) JSON form.
inline std::string config_hash(const GlobalConfig& c) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(config_to_json(c).dump());
  return os.str();
}

}  // namespace unisep
