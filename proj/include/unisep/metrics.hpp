#pragma once

// Numeric evaluation metrics on plain sample vectors.

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "unisep/errors.hpp"

namespace unisep::metrics {

inline constexpr double kEps = 1e-8;
inline constexpr double kClampDb = 30.0;

namespace detail {
inline void check(std::span<const float> ref, std::span<const float> est) {
  if (ref.size() != est.size()) throw ShapeError("metric: reference and estimate lengths differ");
  if (ref.empty()) throw InvalidInput("metric: empty signal");
}
}  // namespace detail

/// 10 log10(|s|^2 / (|est - s|^2 + eps)), capped at `clamp_db`.
inline double snr(std::span<const float> ref, std::span<const float> est, double clamp_db = kClampDb,
                  double eps = kEps) {
  detail::check(ref, est);
  double sig = 0, err = 0;
  for (size_t i = 0; i < ref.size(); ++i) {
    const double r = ref[i], d = static_cast<double>(est[i]) - r;
    sig += r * r;
    err += d * d;
  }
  return std::min(10.0 * std::log10(sig / (err + eps)), clamp_db);
}

/// Scale-invariant SNR: the estimate's projection onto s is the target.
inline double si_snr(std::span<const float> ref, std::span<const float> est, double clamp_db = kClampDb,
                     double eps = kEps) {
  detail::check(ref, est);
  double dot = 0, rr = 0;
  for (size_t i = 0; i < ref.size(); ++i) {
    dot += static_cast<double>(ref[i]) * est[i];
    rr += static_cast<double>(ref[i]) * ref[i];
  }
  if (rr <= 0) throw InvalidInput("si_snr: reference is all zeros");
  const double a = dot / rr;
  double sig = 0, err = 0;
  for (size_t i = 0; i < ref.size(); ++i) {
    const double t = a * ref[i];
    const double d = static_cast<double>(est[i]) - t;
    sig += t * t;
    err += d * d;
  }
  return std::min(10.0 * std::log10((sig + eps) / (err + eps)), clamp_db);
}

inline double snri(std::span<const float> ref, std::span<const float> est, std::span<const float> mix) {
  return snr(ref, est) - snr(ref, mix);
}

inline double si_snri(std::span<const float> ref, std::span<const float> est, std::span<const float> mix) {
  return si_snr(ref, est) - si_snr(ref, mix);
}

inline double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace unisep::metrics
