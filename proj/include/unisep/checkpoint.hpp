#pragma once

// Checkpoint pair: a versioned binary parameter blob (<base>.bin) and a JSON
// sidecar (<base>.json) with config, progress, metrics and RNG state.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <string>

#include "unisep/model.hpp"
#include "unisep/optim.hpp"

namespace unisep {

inline constexpr char kCheckpointMagic[8] = {'U', 'S', 'E', 'P', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  std::string config_hash;
  json config;
  int stage = 0;
  int epoch = 0;
  long optimizer_steps = 0;
  json metrics = json::object();
  std::map<std::string, std::string> rng_state;
  std::uint64_t blob_checksum = 0;
};

/// "<base>", "<base>.bin" and "<base>.json" all name the same checkpoint.
inline std::string checkpoint_base(const std::string& path) {
  for (const char* ext : {".bin", ".json"}) {
    const std::string e(ext);
    if (path.size() > e.size() && path.compare(path.size() - e.size(), e.size(), e) == 0) {
      return path.substr(0, path.size() - e.size());
    }
  }
  return path;
}

namespace detail {

template <typename V>
void put_pod(std::string& b, V v) {
  b.append(reinterpret_cast<const char*>(&v), sizeof(V));
}

class BlobReader {
 public:
  BlobReader(const std::string& b, size_t end) : b_(b), end_(end) {}
  template <typename V>
  V pod() {
    need(sizeof(V));
    V v;
    std::memcpy(&v, b_.data() + pos_, sizeof(V));
    pos_ += sizeof(V);
    return v;
  }
  std::string bytes(size_t n) {
    need(n);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == end_; }

 private:
  void need(size_t n) const {
    if (pos_ + n > end_) throw IntegrityError("checkpoint blob truncated");
  }
  const std::string& b_;
  size_t end_;
  size_t pos_ = 0;
};

template <typename T>
void put_entry(std::string& b, const std::string& name, const Matrix<T>& m) {
  put_pod<std::uint32_t>(b, static_cast<std::uint32_t>(name.size()));
  b += name;
  put_pod<std::int64_t>(b, m.rows());
  put_pod<std::int64_t>(b, m.cols());
  b.append(reinterpret_cast<const char*>(m.data()), static_cast<size_t>(m.size()) * sizeof(T));
}

}  // namespace detail

template <typename T>
std::string serialize_parameters(Model<T>& model, const Adam<T>* opt) {
  std::string b(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put_pod<std::uint32_t>(b, kCheckpointVersion);
  detail::put_pod<std::uint32_t>(b, static_cast<std::uint32_t>(sizeof(T)));
  auto ps = model.params().all();
  std::uint32_t count = static_cast<std::uint32_t>(ps.size());
  if (opt) count += static_cast<std::uint32_t>(2 * opt->state().size());
  detail::put_pod<std::uint32_t>(b, count);
  for (const auto* p : ps) detail::put_entry(b, p->name, p->value);
  if (opt) {
    for (const auto& [name, s] : opt->state()) {
      detail::put_entry(b, "optim/" + name + "/m", s.m);
      detail::put_entry(b, "optim/" + name + "/v", s.v);
    }
  }
  detail::put_pod<std::uint64_t>(b, fnv1a64(b));
  return b;
}

/// Verifies the trailing checksum and restores every parameter (and the
/// optimizer moments when `opt` is given). Throws IntegrityError on any
/// mismatch.
template <typename T>
void deserialize_parameters(const std::string& blob, Model<T>& model, Adam<T>* opt) {
  if (blob.size() < sizeof(kCheckpointMagic) + 12 + 8) throw IntegrityError("checkpoint blob too short");
  const size_t body = blob.size() - 8;
  std::uint64_t stored;
  std::memcpy(&stored, blob.data() + body, 8);
  if (fnv1a64(std::string_view(blob.data(), body)) != stored) throw IntegrityError("checkpoint checksum mismatch");
  detail::BlobReader r(blob, body);
  if (r.bytes(sizeof(kCheckpointMagic)) != std::string(kCheckpointMagic, sizeof(kCheckpointMagic))) {
    throw IntegrityError("not a checkpoint blob");
  }
  if (r.pod<std::uint32_t>() != kCheckpointVersion) throw IntegrityError("unsupported checkpoint version");
  if (r.pod<std::uint32_t>() != sizeof(T)) throw IntegrityError("checkpoint scalar type differs");
  const auto count = r.pod<std::uint32_t>();
  std::map<std::string, Matrix<T>> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.pod<std::uint32_t>();
    std::string name = r.bytes(len);
    const auto rows = r.pod<std::int64_t>();
    const auto cols = r.pod<std::int64_t>();
    if (rows < 0 || cols < 0) throw IntegrityError("negative shape in checkpoint");
    Matrix<T> m(rows, cols);
    const std::string data = r.bytes(static_cast<size_t>(rows * cols) * sizeof(T));
    std::memcpy(m.data(), data.data(), data.size());
    entries.emplace(std::move(name), std::move(m));
  }
  if (!r.done()) throw IntegrityError("trailing bytes in checkpoint blob");
  for (auto* p : model.params().all()) {
    auto it = entries.find(p->name);
    if (it == entries.end()) throw IntegrityError("checkpoint lacks parameter " + p->name);
    if (it->second.rows() != p->value.rows() || it->second.cols() != p->value.cols()) {
      throw IntegrityError("shape mismatch for parameter " + p->name);
    }
    p->value = it->second;
    p->zero_grad();
  }
  if (opt) {
    opt->state().clear();
    for (auto* p : model.params().trainable()) {
      auto m = entries.find("optim/" + p->name + "/m");
      auto v = entries.find("optim/" + p->name + "/v");
      if (m == entries.end() || v == entries.end()) continue;
      opt->state()[p->name] = {m->second, v->second};
    }
  }
}

inline json meta_to_json(const CheckpointMeta& m) {
  return json{{"format", "unisep-checkpoint"},
              {"version", kCheckpointVersion},
              {"config_hash", m.config_hash},
              {"config", m.config},
              {"stage", m.stage},
              {"epoch", m.epoch},
              {"optimizer_steps", m.optimizer_steps},
              {"metrics", m.metrics},
              {"rng_state", m.rng_state},
              {"blob_checksum", m.blob_checksum}};
}

inline CheckpointMeta read_checkpoint_meta(const std::string& path) {
  const std::string file = checkpoint_base(path) + ".json";
  std::ifstream in(file);
  if (!in) throw InvalidInput("cannot open checkpoint metadata " + file);
  CheckpointMeta m;
  try {
    json j;
    in >> j;
    m.config_hash = j.at("config_hash").get<std::string>();
    m.config = j.at("config");
    m.stage = j.at("stage").get<int>();
    m.epoch = j.at("epoch").get<int>();
    m.optimizer_steps = j.value("optimizer_steps", 0L);
    m.metrics = j.value("metrics", json::object());
    m.rng_state = j.value("rng_state", std::map<std::string, std::string>{});
    m.blob_checksum = j.at("blob_checksum").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw IntegrityError("malformed checkpoint metadata " + file + ": " + e.what());
  }
  return m;
}

template <typename T>
void save_checkpoint(const std::string& path, Model<T>& model, const Adam<T>* opt, CheckpointMeta meta) {
  const std::string base = checkpoint_base(path);
  const auto parent = std::filesystem::path(base).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  const std::string blob = serialize_parameters(model, opt);
  {
    std::ofstream out(base + ".bin", std::ios::binary);
    if (!out) throw Error("cannot write " + base + ".bin");
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  }
  meta.config = config_to_json(model.config());
  meta.config_hash = config_hash(model.config());
  meta.blob_checksum = fnv1a64(blob);
  if (opt) meta.optimizer_steps = opt->steps();
  std::ofstream out(base + ".json");
  if (!out) throw Error("cannot write " + base + ".json");
  out << meta_to_json(meta).dump(2) << "\n";
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Restores `model` (and `opt`) in place. When `expected_hash` is non-empty
/// the sidecar's config hash must equal it.
template <typename T>
CheckpointMeta load_checkpoint(const std::string& path, Model<T>& model, Adam<T>* opt = nullptr,
                               const std::string& expected_hash = "") {
  const std::string base = checkpoint_base(path);
  CheckpointMeta meta = read_checkpoint_meta(base);
  if (!expected_hash.empty() && meta.config_hash != expected_hash) {
    throw IntegrityError("config hash mismatch: checkpoint " + meta.config_hash + ", current config " +
                         expected_hash + "; refusing to resume");
  }
  const std::string blob = read_file(base + ".bin");
  if (fnv1a64(blob) != meta.blob_checksum) throw IntegrityError("checkpoint blob does not match its metadata");
  deserialize_parameters(blob, model, opt);
  if (opt) opt->set_steps(meta.optimizer_steps);
  return meta;
}

/// Builds a model from the config stored alongside the checkpoint.
template <typename T>
std::unique_ptr<Model<T>> load_model(const std::string& path, CheckpointMeta* meta_out = nullptr) {
  CheckpointMeta meta = read_checkpoint_meta(path);
  auto model = Model<T>::make(config_from_json(meta.config));
  meta = load_checkpoint(path, *model);
  if (meta_out) *meta_out = meta;
  return model;
}

}  // namespace unisep
