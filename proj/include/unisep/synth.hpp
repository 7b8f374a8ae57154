#pragma once

// Parametric sound classes, mixture construction, class-conditioned clue
// bundles and the JSON-lines dataset manifest.

#include <algorithm>
#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "unisep/clue.hpp"
#include "unisep/config.hpp"
#include "unisep/wav.hpp"

namespace unisep {

enum class SoundKind { kSine, kHarmonic, kChirp, kAmNoise, kBandNoise, kSquare, kClickTrain, kFmTone };

inline std::string kind_name(SoundKind k) {
  switch (k) {
    case SoundKind::kSine: return "sine";
    case SoundKind::kHarmonic: return "harmonic";
    case SoundKind::kChirp: return "chirp";
    case SoundKind::kAmNoise: return "am-noise";
    case SoundKind::kBandNoise: return "band-noise";
    case SoundKind::kSquare: return "square";
    case SoundKind::kClickTrain: return "click-train";
    case SoundKind::kFmTone: return "fm-tone";
  }
  return "?";
}

struct SoundClassSpec {
  int class_id = 0;
  SoundKind kind = SoundKind::kSine;
  double band_lo = 0;  // Hz
  double band_hi = 0;
  bool seen = true;
};

namespace detail {
struct ClassTemplate {
  SoundKind kind;
  double lo, hi;
};
// Disjoint bands; the held-out kinds sit between the seen ones.
inline const std::vector<ClassTemplate>& seen_templates() {
  static const std::vector<ClassTemplate> t = {
      {SoundKind::kSine, 120, 330},        {SoundKind::kHarmonic, 650, 900},
      {SoundKind::kChirp, 950, 1200},      {SoundKind::kAmNoise, 1550, 1800},
      {SoundKind::kBandNoise, 1850, 2150}, {SoundKind::kSquare, 2550, 2850},
      {SoundKind::kSine, 2900, 3200},      {SoundKind::kAmNoise, 3550, 3850},
  };
  return t;
}
inline const std::vector<ClassTemplate>& unseen_templates() {
  static const std::vector<ClassTemplate> t = {
      {SoundKind::kClickTrain, 380, 600},
      {SoundKind::kFmTone, 1250, 1500},
      {SoundKind::kClickTrain, 2200, 2500},
      {SoundKind::kFmTone, 3250, 3500},
  };
  return t;
}
}  // namespace detail

/// Seen classes take ids [0, seen), unseen classes [seen, seen + unseen).
inline std::vector<SoundClassSpec> class_table(const DataConfig& d) {
  const auto& st = detail::seen_templates();
  const auto& ut = detail::unseen_templates();
  if (d.seen_classes > static_cast<int>(st.size()) || d.unseen_classes > static_cast<int>(ut.size())) {
    throw ConfigError("data.seen_classes", "more classes requested than defined");
  }
  std::vector<SoundClassSpec> out;
  for (int i = 0; i < d.seen_classes; ++i) {
    out.push_back({i, st[static_cast<size_t>(i)].kind, st[static_cast<size_t>(i)].lo, st[static_cast<size_t>(i)].hi, true});
  }
  for (int i = 0; i < d.unseen_classes; ++i) {
    out.push_back({d.seen_classes + i, ut[static_cast<size_t>(i)].kind, ut[static_cast<size_t>(i)].lo,
                   ut[static_cast<size_t>(i)].hi, false});
  }
  return out;
}

/// Zeroes every FFT bin outside [lo, hi] Hz.
inline void band_limit(std::vector<float>& x, double lo, double hi, int sample_rate) {
  const size_t n = x.size();
  if (n == 0) return;
  Eigen::FFT<float> fft;
  std::vector<std::complex<float>> spec;
  fft.fwd(spec, x);
  for (size_t k = 0; k < spec.size(); ++k) {
    const size_t kk = k <= n / 2 ? k : n - k;
    const double f = static_cast<double>(kk) * sample_rate / static_cast<double>(n);
    if (f < lo || f > hi) spec[k] = 0;
  }
  std::vector<float> out;
  fft.inv(out, spec);
  x.assign(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(n));
}

inline constexpr double kSourceRms = 0.1;

/// Deterministic in (spec, seed). Output has RMS kSourceRms and peak <= 1.
inline Waveform render_source(const SoundClassSpec& spec, std::uint64_t seed, double duration_s,
                              int sample_rate = 8000) {
  const int n = static_cast<int>(duration_s * sample_rate + 0.5);
  if (n <= 0) throw InvalidInput("render_source: non-positive duration");
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> nd(0.0, 1.0);
  const double pi2 = 2.0 * std::numbers::pi;
  const double lo = spec.band_lo, hi = spec.band_hi, w = hi - lo;
  const double dt = 1.0 / sample_rate;
  std::vector<float> x(static_cast<size_t>(n), 0.0f);
  auto at = [&](int i) -> float& { return x[static_cast<size_t>(i)]; };
  bool filter = true;

  switch (spec.kind) {
    case SoundKind::kSine: {
      const double f = lo + w * (0.2 + 0.6 * u(rng));
      const double ph = pi2 * u(rng);
      for (int i = 0; i < n; ++i) at(i) = static_cast<float>(std::sin(pi2 * f * i * dt + ph));
      filter = false;
      break;
    }
    case SoundKind::kHarmonic: {
      const double f0 = w * (0.2 + 0.13 * u(rng));
      for (int k = static_cast<int>(std::ceil(lo / f0)); k * f0 <= hi; ++k) {
        const double ph = pi2 * u(rng);
        const double amp = 1.0 / std::sqrt(static_cast<double>(k));
        for (int i = 0; i < n; ++i) at(i) += static_cast<float>(amp * std::sin(pi2 * k * f0 * i * dt + ph));
      }
      break;
    }
    case SoundKind::kChirp: {
      const double period = 0.25 + 0.75 * u(rng);
      const bool up = u(rng) < 0.5;
      double phase = pi2 * u(rng);
      for (int i = 0; i < n; ++i) {
        const double frac = std::fmod(i * dt, period) / period;
        const double f = lo + w * (0.05 + 0.9 * (up ? frac : 1.0 - frac));
        phase += pi2 * f * dt;
        at(i) = static_cast<float>(std::sin(phase));
      }
      break;
    }
    case SoundKind::kAmNoise:
    case SoundKind::kBandNoise: {
      for (int i = 0; i < n; ++i) at(i) = static_cast<float>(nd(rng));
      band_limit(x, lo, hi, sample_rate);
      if (spec.kind == SoundKind::kAmNoise) {
        const double rate = 2.0 + 6.0 * u(rng);
        const double ph = pi2 * u(rng);
        for (int i = 0; i < n; ++i) at(i) *= static_cast<float>(1.0 + 0.9 * std::sin(pi2 * rate * i * dt + ph));
      }
      filter = spec.kind == SoundKind::kAmNoise;
      break;
    }
    case SoundKind::kSquare: {
      const double f0 = w * (0.125 + 0.2 * u(rng));
      const double ph = u(rng);
      for (int i = 0; i < n; ++i) {
        const double cyc = std::fmod(f0 * i * dt + ph, 1.0);
        at(i) = cyc < 0.5 ? 1.0f : -1.0f;
      }
      break;
    }
    case SoundKind::kClickTrain: {
      const double rate = 20.0 + 40.0 * u(rng);
      double t = u(rng) / rate;
      while (t < duration_s) {
        const int i = static_cast<int>(t * sample_rate);
        if (i < n) at(i) += 1.0f;
        t += (0.85 + 0.3 * u(rng)) / rate;
      }
      break;
    }
    case SoundKind::kFmTone: {
      const double fc = lo + w * (0.4 + 0.2 * u(rng));
      const double rate = 3.0 + 7.0 * u(rng);
      const double dev = w * (0.15 + 0.15 * u(rng));
      const double ph = pi2 * u(rng);
      for (int i = 0; i < n; ++i) {
        const double t = i * dt;
        at(i) = static_cast<float>(std::sin(pi2 * fc * t + (dev / rate) * std::sin(pi2 * rate * t) + ph));
      }
      break;
    }
  }
  if (filter) band_limit(x, lo, hi, sample_rate);

  double ss = 0;
  for (float v : x) ss += static_cast<double>(v) * v;
  const double rms = std::sqrt(ss / n);
  if (!(rms > 1e-9)) throw InvalidInput("render_source: " + kind_name(spec.kind) + " class rendered silence; clip too short");
  double g = kSourceRms / rms;
  float peak = 0;
  for (float v : x) peak = std::max(peak, std::abs(v));
  if (peak * g > 1.0) g = 1.0 / peak;
  Waveform out;
  out.sample_rate = sample_rate;
  out.samples.resize(x.size());
  for (size_t i = 0; i < x.size(); ++i) out.samples[i] = static_cast<float>(x[i] * g);
  return out;
}

// ---- clue synthesis ------------------------------------------------------

/// Fixed per-class caption: class-unique tokens interleaved with shared ones.
inline std::vector<int> class_caption(int class_id, const ClueConfig& c, int num_classes) {
  const int shared = std::max(1, c.vocab_size / 4);
  const int unique_per_class = (c.vocab_size - shared) / num_classes;
  if (unique_per_class < 1) throw ConfigError("clue.vocab_size", "too small for the number of classes");
  std::vector<int> cap(static_cast<size_t>(c.text_len));
  for (int i = 0; i < c.text_len; ++i) {
    if (i % 2 == 0) {
      cap[static_cast<size_t>(i)] = class_id * unique_per_class + (i / 2) % unique_per_class;
    } else {
      const int base = num_classes * unique_per_class;
      cap[static_cast<size_t>(i)] = base + (class_id * 5 + i) % shared;
    }
  }
  return cap;
}

/// [video_frames x video_dim] prototype frames for each class.
inline std::vector<std::vector<std::vector<float>>> video_prototypes(const GlobalConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, "class-prototypes"));
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<std::vector<std::vector<float>>> out(static_cast<size_t>(cfg.num_classes()));
  for (auto& cls : out) {
    std::vector<double> base(static_cast<size_t>(cfg.clue.video_dim));
    for (auto& b : base) b = nd(rng);
    for (int f = 0; f < cfg.clue.video_frames; ++f) {
      std::vector<float> row(base.size());
      for (size_t d = 0; d < base.size(); ++d) row[d] = static_cast<float>(base[d] + 0.3 * nd(rng));
      cls.push_back(std::move(row));
    }
  }
  return out;
}

/// Tag = class id; each caption token is replaced by a random token with
/// probability 1 - quality; video = prototypes + N(0, (1 - quality)^2).
inline ClueBundle make_clue_bundle(int class_id, double quality, std::uint64_t seed, const GlobalConfig& cfg) {
  if (!(quality >= 0.0 && quality <= 1.0)) throw InvalidInput("clue quality must lie in [0, 1]");
  if (class_id < 0 || class_id >= cfg.num_classes()) throw InvalidInput("class id out of range");
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> tok(0, cfg.clue.vocab_size - 1);
  std::normal_distribution<double> nd(0.0, 1.0);
  ClueBundle b;
  b.target_class = class_id;
  b.tag = class_id;
  std::vector<int> text = class_caption(class_id, cfg.clue, cfg.num_classes());
  for (int& t : text) {
    if (u(rng) >= quality) t = tok(rng);
  }
  b.text = std::move(text);
  static thread_local std::pair<std::string, std::vector<std::vector<std::vector<float>>>> cache;
  const std::string key = config_hash(cfg);
  if (cache.first != key) cache = {key, video_prototypes(cfg)};
  auto video = cache.second[static_cast<size_t>(class_id)];
  const double sigma = 1.0 - quality;
  for (auto& row : video) {
    for (auto& v : row) v = static_cast<float>(v + sigma * nd(rng));
  }
  b.video = std::move(video);
  return b;
}

// ---- mixtures ------------------------------------------------------------

struct MixtureItem {
  std::string id;
  std::string split;
  Waveform mixture;
  std::vector<Waveform> sources;  // gain-scaled stems
  std::vector<int> class_ids;
  std::vector<double> gains_db;
  std::vector<ClueBundle> clues;
  std::uint64_t seed = 0;

  int order() const { return static_cast<int>(sources.size()); }
};

/// Stems are scaled by their gains and summed sample-wise into the mixture.
inline MixtureItem build_mixture(const std::vector<SoundClassSpec>& specs, const std::vector<double>& gains_db,
                                 std::uint64_t seed, double duration_s, int sample_rate = 8000) {
  if (specs.empty()) throw InvalidInput("build_mixture: no sources");
  if (specs.size() != gains_db.size()) throw InvalidInput("build_mixture: one gain per source is required");
  for (size_t i = 0; i < specs.size(); ++i) {
    for (size_t k = i + 1; k < specs.size(); ++k) {
      if (specs[i].class_id == specs[k].class_id) throw InvalidInput("build_mixture: classes must be distinct");
    }
  }
  MixtureItem m;
  m.seed = seed;
  for (size_t j = 0; j < specs.size(); ++j) {
    Waveform s = render_source(specs[j], derive_seed(seed, static_cast<std::uint64_t>(j)), duration_s, sample_rate);
    const auto g = static_cast<float>(std::pow(10.0, gains_db[j] / 20.0));
    for (float& v : s.samples) v *= g;
    m.sources.push_back(std::move(s));
    m.class_ids.push_back(specs[j].class_id);
    m.gains_db.push_back(gains_db[j]);
  }
  m.mixture.sample_rate = sample_rate;
  m.mixture.samples.assign(m.sources[0].samples.size(), 0.0f);
  for (const auto& s : m.sources) {
    for (size_t i = 0; i < s.samples.size(); ++i) m.mixture.samples[i] += s.samples[i];
  }
  return m;
}

inline const std::vector<std::string>& split_names() {
  static const std::vector<std::string> s = {"train", "valid", "seen-test", "unseen-test"};
  return s;
}

/// Every item of every split, generated from the root seed.
inline std::vector<MixtureItem> generate_dataset(const GlobalConfig& cfg) {
  const auto classes = class_table(cfg.data);
  std::vector<int> seen, unseen;
  for (const auto& c : classes) (c.seen ? seen : unseen).push_back(c.class_id);
  const std::uint64_t data_seed = derive_seed(cfg.seed, "data");
  const std::uint64_t clue_seed = derive_seed(cfg.seed, "clue-noise");
  std::vector<MixtureItem> items;
  for (const auto& split : split_names()) {
    const bool held_out = split == "unseen-test";
    const std::vector<int>& pool = held_out ? unseen : seen;
    const int per_order = split == "train" ? cfg.data.train_per_order
                          : split == "valid" ? cfg.data.valid_per_order
                                             : cfg.data.test_per_order;
    for (int order : cfg.data.mix_orders) {
      if (order > static_cast<int>(pool.size())) {
        if (per_order > 0 && !pool.empty() && !held_out) {
          throw ConfigError("data.mix_orders", "mix order exceeds available classes");
        }
        continue;
      }
      for (int i = 0; i < per_order; ++i) {
        const std::string id = split + "-" + std::to_string(order) + "mix-" + std::to_string(i);
        const std::uint64_t seed = derive_seed(data_seed, id);
        Rng rng(seed);
        std::vector<int> picks = pool;
        std::shuffle(picks.begin(), picks.end(), rng);
        picks.resize(static_cast<size_t>(order));
        std::uniform_real_distribution<double> gain(-cfg.data.gain_db, cfg.data.gain_db);
        std::vector<SoundClassSpec> specs;
        std::vector<double> gains;
        for (int c : picks) {
          specs.push_back(classes[static_cast<size_t>(c)]);
          gains.push_back(gain(rng));
        }
        MixtureItem m = build_mixture(specs, gains, seed, cfg.data.duration_s, cfg.codec.sample_rate);
        m.id = id;
        m.split = split;
        std::uniform_real_distribution<double> q(cfg.data.train_quality_min, 1.0);
        for (size_t j = 0; j < picks.size(); ++j) {
          const double quality = (split == "train" || split == "valid") ? q(rng) : cfg.data.test_quality;
          m.clues.push_back(make_clue_bundle(picks[j], quality, derive_seed(clue_seed, id + "/" + std::to_string(j)), cfg));
        }
        items.push_back(std::move(m));
      }
    }
  }
  return items;
}

// ---- manifest ------------------------------------------------------------

struct ManifestRecord {
  std::string id;
  std::string split;
  std::string mix;
  std::vector<std::string> sources;
  std::vector<std::string> clues;
  std::vector<int> class_ids;
  std::vector<double> gains_db;
  std::uint64_t seed = 0;

  int order() const { return static_cast<int>(sources.size()); }
};

inline json record_to_json(const ManifestRecord& r) {
  return json{{"id", r.id},       {"split", r.split},         {"mix", r.mix},           {"sources", r.sources},
              {"clues", r.clues}, {"class_ids", r.class_ids}, {"gains_db", r.gains_db}, {"seed", r.seed}};
}

inline ManifestRecord record_from_json(const json& j) {
  ManifestRecord r;
  try {
    r.id = j.at("id").get<std::string>();
    r.split = j.at("split").get<std::string>();
    r.mix = j.at("mix").get<std::string>();
    r.sources = j.at("sources").get<std::vector<std::string>>();
    r.clues = j.at("clues").get<std::vector<std::string>>();
    r.class_ids = j.at("class_ids").get<std::vector<int>>();
    r.gains_db = j.at("gains_db").get<std::vector<double>>();
    r.seed = j.value("seed", std::uint64_t{0});
  } catch (const json::exception& e) {
    throw InvalidInput(std::string("malformed manifest record: ") + e.what());
  }
  if (r.sources.size() != r.class_ids.size() || r.clues.size() != r.class_ids.size()) {
    throw InvalidInput("manifest record " + r.id + ": sources, clues and class ids differ in length");
  }
  return r;
}

/// Writes WAVs and clue JSON under `dir` and returns the manifest path.
inline std::string emit_manifest(const std::vector<MixtureItem>& items, const std::string& dir,
                                 const std::string& name = "manifest.jsonl") {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "audio");
  fs::create_directories(fs::path(dir) / "clues");
  const fs::path manifest = fs::path(dir) / name;
  std::ofstream out(manifest);
  if (!out) throw Error("cannot write manifest " + manifest.string());
  for (const auto& it : items) {
    ManifestRecord r;
    r.id = it.id;
    r.split = it.split;
    r.seed = it.seed;
    r.class_ids = it.class_ids;
    r.gains_db = it.gains_db;
    r.mix = "audio/" + it.id + "_mix.wav";
    write_wav((fs::path(dir) / r.mix).string(), it.mixture);
    for (size_t j = 0; j < it.sources.size(); ++j) {
      const std::string s = "audio/" + it.id + "_s" + std::to_string(j) + ".wav";
      write_wav((fs::path(dir) / s).string(), it.sources[j]);
      r.sources.push_back(s);
      const std::string c = "clues/" + it.id + "_c" + std::to_string(j) + ".json";
      std::ofstream cf(fs::path(dir) / c);
      cf << clue_to_json(j < it.clues.size() ? it.clues[j] : ClueBundle{}).dump() << "\n";
      r.clues.push_back(c);
    }
    out << record_to_json(r).dump() << "\n";
  }
  return manifest.string();
}

inline std::vector<ManifestRecord> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open manifest " + path);
  std::vector<ManifestRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(record_from_json(json::parse(line)));
    } catch (const json::parse_error& e) {
      throw InvalidInput("manifest " + path + ": " + e.what());
    }
  }
  return out;
}

/// Loads audio and clues for the records of `split` (all splits when empty).
inline std::vector<MixtureItem> load_manifest(const std::string& path, const std::string& split = "",
                                              int max_items = 0) {
  namespace fs = std::filesystem;
  const fs::path root = fs::path(path).parent_path();
  std::vector<MixtureItem> items;
  for (const auto& r : read_manifest(path)) {
    if (!split.empty() && r.split != split) continue;
    if (max_items > 0 && static_cast<int>(items.size()) >= max_items) break;
    MixtureItem m;
    m.id = r.id;
    m.split = r.split;
    m.seed = r.seed;
    m.class_ids = r.class_ids;
    m.gains_db = r.gains_db;
    m.mixture = read_wav((root / r.mix).string());
    for (size_t j = 0; j < r.sources.size(); ++j) {
      m.sources.push_back(read_wav((root / r.sources[j]).string()));
      std::ifstream cf(root / r.clues[j]);
      if (!cf) throw InvalidInput("cannot open clue file " + r.clues[j]);
      json cj;
      try {
        cf >> cj;
      } catch (const json::parse_error& e) {
        throw InvalidInput("clue file " + r.clues[j] + ": " + e.what());
      }
      m.clues.push_back(clue_from_json(cj));
    }
    items.push_back(std::move(m));
  }
  return items;
}

}  // namespace unisep
