#pragma once

// Mono RIFF/WAVE reading and writing (16-bit PCM and 32-bit float).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "unisep/errors.hpp"

namespace unisep {

struct Waveform {
  std::vector<float> samples;
  int sample_rate = 8000;

  size_t length() const { return samples.size(); }

  /// Throws InvalidInput unless non-empty and finite.
  void validate() const {
    if (samples.empty()) throw InvalidInput("empty waveform");
    for (float s : samples) {
      if (!std::isfinite(s)) throw InvalidInput("waveform contains non-finite samples");
    }
  }
};

enum class WavEncoding { kPcm16, kFloat32 };

namespace detail {
inline void put_u32(std::string& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u16(std::string& b, std::uint16_t v) {
  b.push_back(static_cast<char>(v & 0xff));
  b.push_back(static_cast<char>(v >> 8));
}
inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
inline std::uint16_t get_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
}  // namespace detail

inline void write_wav(const std::string& path, const Waveform& w, WavEncoding enc = WavEncoding::kFloat32) {
  const bool is_float = enc == WavEncoding::kFloat32;
  const std::uint16_t bits = is_float ? 32 : 16;
  const std::uint16_t block = bits / 8;
  const auto data_bytes = static_cast<std::uint32_t>(w.samples.size() * block);
  std::string b;
  b.reserve(44 + data_bytes);
  b += "RIFF";
  detail::put_u32(b, 36 + data_bytes);
  b += "WAVEfmt ";
  detail::put_u32(b, 16);
  detail::put_u16(b, is_float ? 3 : 1);
  detail::put_u16(b, 1);
  detail::put_u32(b, static_cast<std::uint32_t>(w.sample_rate));
  detail::put_u32(b, static_cast<std::uint32_t>(w.sample_rate) * block);
  detail::put_u16(b, block);
  detail::put_u16(b, bits);
  b += "data";
  detail::put_u32(b, data_bytes);
  for (float s : w.samples) {
    if (is_float) {
      std::uint32_t u;
      std::memcpy(&u, &s, 4);
      detail::put_u32(b, u);
    } else {
      const float c = std::clamp(s, -1.0f, 1.0f);
      const auto q = static_cast<std::int16_t>(std::lrint(c * 32767.0f));
      detail::put_u16(b, static_cast<std::uint16_t>(q));
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write WAV file '" + path + "'");
  out.write(b.data(), static_cast<std::streamsize>(b.size()));
}

inline Waveform read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open WAV file '" + path + "'");
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4) != 0 || std::memcmp(buf.data() + 8, "WAVE", 4) != 0) {
    throw InvalidInput("not a RIFF/WAVE file: '" + path + "'");
  }
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::uint32_t data_len = 0;
  size_t pos = 12;
  while (pos + 8 <= buf.size()) {
    const unsigned char* ck = buf.data() + pos;
    const std::uint32_t len = detail::get_u32(ck + 4);
    if (pos + 8 + len > buf.size()) throw InvalidInput("truncated WAV chunk in '" + path + "'");
    if (std::memcmp(ck, "fmt ", 4) == 0) {
      if (len < 16) throw InvalidInput("short fmt chunk in '" + path + "'");
      format = detail::get_u16(ck + 8);
      channels = detail::get_u16(ck + 10);
      rate = detail::get_u32(ck + 12);
      bits = detail::get_u16(ck + 22);
      if (format == 0xFFFE && len >= 40) format = detail::get_u16(ck + 8 + 24);
    } else if (std::memcmp(ck, "data", 4) == 0) {
      data = ck + 8;
      data_len = len;
    }
    pos += 8 + len + (len & 1u);
  }
  if (data == nullptr || format == 0) throw InvalidInput("WAV file lacks fmt/data chunk: '" + path + "'");
  if (channels != 1) throw InvalidInput("only mono WAV is supported: '" + path + "'");
  Waveform w;
  w.sample_rate = static_cast<int>(rate);
  if (format == 3 && bits == 32) {
    w.samples.resize(data_len / 4);
    std::memcpy(w.samples.data(), data, w.samples.size() * 4);
  } else if (format == 1 && bits == 16) {
    w.samples.resize(data_len / 2);
    for (size_t i = 0; i < w.samples.size(); ++i) {
      const auto v = static_cast<std::int16_t>(detail::get_u16(data + 2 * i));
      w.samples[i] = static_cast<float>(v) / 32767.0f;
    }
  } else {
    throw InvalidInput("unsupported WAV encoding (need 16-bit PCM or 32-bit float): '" + path + "'");
  }
  return w;
}

}  // namespace unisep
