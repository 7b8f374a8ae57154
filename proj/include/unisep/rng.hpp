#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <string_view>

namespace unisep {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Seed of the child stream `name` under `parent`.
constexpr std::uint64_t derive_seed(std::uint64_t parent, std::string_view name) {
  return splitmix64(parent ^ splitmix64(fnv1a64(name)));
}

constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index) {
  return splitmix64(parent ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

/// Named, independently seeded generators derived from one root seed.
/// Streams in use: "data", "init", "branch", "clue-noise".
class RngRegistry {
 public:
  explicit RngRegistry(std::uint64_t root_seed = 0) : root_(root_seed) {}

  std::uint64_t root_seed() const { return root_; }

  Rng& stream(const std::string& name) {
    auto it = streams_.find(name);
    if (it == streams_.end()) it = streams_.emplace(name, Rng(derive_seed(root_, name))).first;
    return it->second;
  }

  /// Textual engine state per stream, for checkpoints.
  std::map<std::string, std::string> serialize() const {
    std::map<std::string, std::string> out;
    for (const auto& [name, eng] : streams_) {
      std::ostringstream os;
      os << eng;
      out.emplace(name, os.str());
    }
    return out;
  }

  void restore(const std::map<std::string, std::string>& state) {
    for (const auto& [name, text] : state) {
      std::istringstream is(text);
      is >> stream(name);
    }
  }

 private:
  std::uint64_t root_;
  std::map<std::string, Rng> streams_;
};

inline RngRegistry seed_everything(std::uint64_t root_seed) { return RngRegistry(root_seed); }

}  // namespace unisep
