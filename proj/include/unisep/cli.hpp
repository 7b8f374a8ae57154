#pragma once

// Command suite: synth, train, separate, extract, eval, embed-dump.
// Exit codes: 0 success, 1 usage error, 2 runtime error.

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "unisep/trainer.hpp"

namespace unisep::cli {

inline constexpr const char* kVersion = "0.1.0";

namespace fs = std::filesystem;

/// Relative output paths land under $USE_RUN_DIR when it is set.
inline std::string output_path(const std::string& p) {
  const char* root = std::getenv("USE_RUN_DIR");
  if (root == nullptr || *root == '\0' || fs::path(p).is_absolute()) return p;
  return (fs::path(root) / p).string();
}

inline std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

/// Inputs, seed and version of a run, written next to its outputs.
inline void write_run_info(const std::string& dir, const std::string& command, const std::vector<std::string>& args,
                           const json& extra = json::object()) {
  fs::create_directories(dir);
  json j{{"command", command},
         {"argv", args},
         {"version", kVersion},
         {"started_utc", utc_now()},
         {"threads", 1},
         {"eigen_version", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                               std::to_string(EIGEN_MINOR_VERSION)}};
  for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
  std::ofstream(fs::path(dir) / "run_info.json") << j.dump(2) << "\n";
}

inline GlobalConfig config_or_default(const std::string& path) {
  if (path.empty()) return config_from_json(json::object());
  return load_config(path);
}

inline std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    try {
      size_t used = 0;
      out.push_back(std::stoi(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw InvalidInput("not an integer list: '" + s + "'");
    }
  }
  return out;
}

inline void write_outputs(const SeparationResult& r, const std::string& dir, const json& extra) {
  fs::create_directories(dir);
  const auto waves = r.waveforms();
  json files = json::array();
  for (size_t j = 0; j < waves.size(); ++j) {
    const std::string name = "source_" + std::to_string(j) + ".wav";
    write_wav((fs::path(dir) / name).string(), waves[j]);
    files.push_back(name);
  }
  json res = r.to_json();
  res["files"] = files;
  for (auto it = extra.begin(); it != extra.end(); ++it) res[it.key()] = it.value();
  std::ofstream(fs::path(dir) / "result.json") << res.dump(2) << "\n";
}

struct Args {
  std::string config, out, manifest, ckpt, input, resume, init, mode = "ss-fixed-count",
      modalities = "tag,text,video", split;
  int stage = 1;
  int num_sources = 0;
  int max_items = 0;
  bool strict = false;
  std::vector<std::string> clues, text_tokens, video_desc;
  std::vector<int> tags;
};

inline int run_synth(const Args& a, const std::vector<std::string>& argv) {
  const GlobalConfig cfg = config_or_default(a.config);
  const std::string dir = output_path(a.out);
  const auto items = generate_dataset(cfg);
  const std::string manifest = emit_manifest(items, dir);
  save_config(cfg, (fs::path(dir) / "config.json").string());
  write_run_info(dir, "synth", argv, {{"seed", cfg.seed}, {"config_hash", config_hash(cfg)}, {"items", items.size()}});
  std::cout << "wrote " << items.size() << " items to " << manifest << "\n";
  return 0;
}

inline int run_train(const Args& a, const std::vector<std::string>& argv) {
  const GlobalConfig cfg = config_or_default(a.config);
  const std::string dir = output_path(a.out.empty() ? "train-stage" + std::to_string(a.stage) : a.out);
  auto train = load_manifest(a.manifest, "train");
  auto valid = load_manifest(a.manifest, "valid");
  Model<float> model(cfg);
  RngRegistry rngs = seed_everything(cfg.seed);
  if (a.stage == 2 && a.resume.empty()) {
    if (a.init.empty()) throw InvalidInput("stage 2 needs --init <stage-1 checkpoint> or --resume");
    CheckpointMeta m = load_checkpoint(a.init, model, static_cast<Adam<float>*>(nullptr), config_hash(cfg));
    if (m.stage != 1) throw IntegrityError("--init must be a stage-1 checkpoint");
  }
  write_run_info(dir, "train", argv,
                 {{"seed", cfg.seed}, {"config_hash", config_hash(cfg)}, {"config", config_to_json(cfg)}, {"stage", a.stage}});
  save_config(cfg, (fs::path(dir) / "config.json").string());
  TrainOptions opt;
  opt.out_dir = dir;
  if (!a.resume.empty()) opt.resume = a.resume;
  opt.max_items = a.max_items;
  opt.on_epoch = [](const EpochLog& l) { std::cerr << l.to_json().dump() << "\n"; };
  Trainer<float> trainer(model, rngs);
  TrainResult r = trainer.run(a.stage, train, valid, opt);
  std::cout << "last checkpoint: " << r.last_checkpoint << "\nbest checkpoint: " << r.best_checkpoint << "\n";
  return 0;
}

inline int run_separate(const Args& a, const std::vector<std::string>& argv) {
  auto model = load_model<float>(a.ckpt);
  const Waveform mix = read_wav(a.input);
  std::optional<int> count;
  if (a.num_sources > 0) count = a.num_sources;
  SeparationResult r = separate(*model, mix, count, a.strict);
  const std::string dir = output_path(a.out);
  write_outputs(r, dir, {{"mode", "separate"}});
  write_run_info(dir, "separate", argv, {{"checkpoint", a.ckpt}, {"input", a.input}});
  std::cout << "wrote " << r.count() << " estimates to " << dir << "\n";
  return 0;
}

inline std::vector<ClueBundle> gather_bundles(const Args& a) {
  std::vector<ClueBundle> out;
  for (const auto& path : a.clues) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open clue file " + path);
    json j;
    try {
      in >> j;
    } catch (const json::parse_error& e) {
      throw InvalidInput("clue file " + path + ": " + e.what());
    }
    out.push_back(clue_from_json(j));
  }
  const size_t inline_targets = std::max({a.tags.size(), a.text_tokens.size(), a.video_desc.size()});
  for (size_t i = 0; i < inline_targets; ++i) {
    ClueBundle b;
    if (i < a.tags.size()) b.tag = a.tags[i];
    if (i < a.text_tokens.size()) b.text = parse_int_list(a.text_tokens[i]);
    if (i < a.video_desc.size()) {
      std::ifstream in(a.video_desc[i]);
      if (!in) throw InvalidInput("cannot open video descriptor file " + a.video_desc[i]);
      json j;
      in >> j;
      b.video = j.get<std::vector<std::vector<float>>>();
    }
    out.push_back(std::move(b));
  }
  return out;
}

inline int run_extract(const Args& a, const std::vector<std::string>& argv) {
  auto model = load_model<float>(a.ckpt);
  const Waveform mix = read_wav(a.input);
  const auto bundles = gather_bundles(a);
  SeparationResult r = extract(*model, mix, bundles);
  const std::string dir = output_path(a.out);
  json mods = json::array();
  for (const auto& b : bundles) mods.push_back(modality_name(b.modalities()));
  write_outputs(r, dir, {{"mode", "extract"}, {"clue_modalities", mods}});
  write_run_info(dir, "extract", argv, {{"checkpoint", a.ckpt}, {"input", a.input}});
  std::cout << "wrote " << r.count() << " estimates to " << dir << "\n";
  return 0;
}

inline int run_eval(const Args& a, const std::vector<std::string>& argv) {
  CheckpointMeta meta;
  auto model = load_model<float>(a.ckpt, &meta);
  const auto items = load_manifest(a.manifest, a.split);
  if (items.empty()) throw InvalidInput("no manifest items match the requested split");
  EvalOptions opt;
  opt.mode = parse_mode(a.mode);
  opt.modalities = parse_modalities(a.modalities);
  opt.max_items = a.max_items > 0 ? a.max_items : model->config().eval.max_items;
  EvalReport rep = evaluate_separation(*model, items, opt);
  json j = rep.to_json();
  const CountReport cr = counting_accuracy(*model, items, model->config().eda.theta, opt.max_items);
  json counting = json::object();
  for (const auto& [o, p] : cr.by_order) counting[std::to_string(o) + "mix"] = cr.accuracy(o);
  j["counting_accuracy"] = counting;
  const MatchReport mr = matching_accuracy(*model, items, opt.max_items);
  json matching = json::object();
  for (const auto& [o, p] : mr.by_order) matching[std::to_string(o) + "mix"] = mr.accuracy(o);
  j["matching_accuracy"] = matching;
  j["checkpoint"] = a.ckpt;
  j["config_hash"] = meta.config_hash;
  const std::string out = output_path(a.out);
  const auto parent = fs::path(out).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  std::ofstream(out) << j.dump(2) << "\n";
  write_run_info(parent.empty() ? "." : parent.string(), "eval", argv, {{"checkpoint", a.ckpt}, {"manifest", a.manifest}});
  std::cout << rep.mode << " mean SNRi " << rep.overall.snri << " dB over " << rep.overall.items << " items\n";
  return 0;
}

inline int run_embed_dump(const Args& a, const std::vector<std::string>& argv) {
  auto model = load_model<float>(a.ckpt);
  const auto items = load_manifest(a.manifest, a.split);
  const std::string out = output_path(a.out);
  const auto parent = fs::path(out).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  const int rows = export_embeddings(*model, items, out, a.max_items);
  write_run_info(parent.empty() ? "." : parent.string(), "embed-dump", argv, {{"checkpoint", a.ckpt}});
  std::cout << "wrote " << rows << " rows to " << out << "\n";
  return 0;
}

inline int dispatch(const std::vector<std::string>& argv_in, std::ostream& err = std::cerr) {
  Args a;
  CLI::App app{"Unified sound separation and target sound extraction", "unisep"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1, 1);

  auto* synth = app.add_subcommand("synth", "generate the synthetic dataset");
  synth->add_option("--out", a.out, "output directory")->required();
  synth->add_option("--config", a.config, "JSON config");

  auto* train = app.add_subcommand("train", "run one training stage");
  train->add_option("--stage", a.stage, "1 or 2")->check(CLI::IsMember({1, 2}));
  train->add_option("--config", a.config, "JSON config");
  train->add_option("--manifest", a.manifest, "dataset manifest")->required();
  train->add_option("--init", a.init, "stage-1 checkpoint to start stage 2 from");
  train->add_option("--resume", a.resume, "checkpoint of this stage to continue");
  train->add_option("--out", a.out, "run directory");
  train->add_option("--max-items", a.max_items, "items per epoch (0 = all)");

  auto* sep = app.add_subcommand("separate", "separate all sources (SS mode)");
  sep->add_option("--ckpt", a.ckpt)->required();
  sep->add_option("--in", a.input)->required();
  sep->add_option("--num-sources", a.num_sources, "skip counting and decode N attractors");
  sep->add_flag("--strict", a.strict, "fail instead of falling back when no source is detected");
  sep->add_option("--out-dir", a.out)->required();

  auto* ext = app.add_subcommand("extract", "extract clue-specified sources (TSE mode)");
  ext->add_option("--ckpt", a.ckpt)->required();
  ext->add_option("--in", a.input)->required();
  ext->add_option("--clue", a.clues, "clue bundle JSON, one per target");
  ext->add_option("--tag", a.tags, "tag id per target");
  ext->add_option("--text-tokens", a.text_tokens, "comma-separated token ids per target");
  ext->add_option("--video-desc", a.video_desc, "JSON frame-descriptor array per target");
  ext->add_option("--out-dir", a.out)->required();

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a manifest");
  ev->add_option("--ckpt", a.ckpt)->required();
  ev->add_option("--manifest", a.manifest)->required();
  ev->add_option("--mode", a.mode)->check(CLI::IsMember({"ss-fixed-count", "ss-predicted-count", "tse"}));
  ev->add_option("--modalities", a.modalities, "subset used in tse mode");
  ev->add_option("--split", a.split, "restrict to one split");
  ev->add_option("--max-items", a.max_items);
  ev->add_option("--out", a.out)->required();

  auto* emb = app.add_subcommand("embed-dump", "export attractor and clue embeddings");
  emb->add_option("--ckpt", a.ckpt)->required();
  emb->add_option("--manifest", a.manifest)->required();
  emb->add_option("--split", a.split);
  emb->add_option("--max-items", a.max_items);
  emb->add_option("--out", a.out)->required();

  std::vector<std::string> rev(argv_in.rbegin(), argv_in.rend() - 1);
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::CallForVersion&) {
    std::cout << kVersion << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return 1;
  }
  const std::vector<std::string> argv(argv_in.begin(), argv_in.end());
  try {
    if (synth->parsed()) return run_synth(a, argv);
    if (train->parsed()) return run_train(a, argv);
    if (sep->parsed()) return run_separate(a, argv);
    if (ext->parsed()) return run_extract(a, argv);
    if (ev->parsed()) return run_eval(a, argv);
    if (emb->parsed()) return run_embed_dump(a, argv);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  err << app.help();
  return 1;
}

inline int dispatch(int argc, char** argv) {
  return dispatch(std::vector<std::string>(argv, argv + argc));
}

}  // namespace unisep::cli
