#pragma once

// Training objectives: PIT-SNR separation loss, existence BCE, and the two
// attractor/clue alignment terms.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <vector>

#include "unisep/ops.hpp"

namespace unisep {

struct SnrGuard {
  double eps = 1e-8;
  double clamp_db = 30.0;
};

/// Per-pair SNR in dB, capped at `g.clamp_db`.
template <typename T>
T snr_db_value(const Eigen::Ref<const Eigen::Matrix<T, 1, Eigen::Dynamic>>& ref,
               const Eigen::Ref<const Eigen::Matrix<T, 1, Eigen::Dynamic>>& est, SnrGuard g = {}) {
  if (ref.size() != est.size()) throw ShapeError("snr: length mismatch");
  const double sig = ref.template cast<double>().squaredNorm();
  const double err = (est - ref).template cast<double>().squaredNorm();
  const double v = 10.0 * std::log10(sig / (err + g.eps));
  return static_cast<T>(std::min(v, g.clamp_db));
}

/// score(k, e): SNR of estimate e against target k.
template <typename T>
Matrix<T> pairwise_snr(const Matrix<T>& targets, const Matrix<T>& estimates, SnrGuard g = {}) {
  Matrix<T> s(targets.rows(), estimates.rows());
  for (Eigen::Index k = 0; k < targets.rows(); ++k) {
    for (Eigen::Index e = 0; e < estimates.rows(); ++e) s(k, e) = snr_db_value<T>(targets.row(k), estimates.row(e), g);
  }
  return s;
}

/// Exhaustive search for the assignment maximizing sum_k score(k, perm[k]).
/// Ties keep the lexicographically first permutation.
template <typename T>
std::vector<int> best_permutation(const Matrix<T>& score) {
  const auto J = static_cast<int>(score.rows());
  if (J != score.cols()) throw ShapeError("best_permutation: score matrix must be square");
  std::vector<int> perm(static_cast<size_t>(J));
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<int> best = perm;
  double best_val = -std::numeric_limits<double>::infinity();
  std::vector<double> pairs(static_cast<size_t>(J));
  do {
    for (int k = 0; k < J; ++k) pairs[static_cast<size_t>(k)] = static_cast<double>(score(k, perm[static_cast<size_t>(k)]));
    std::sort(pairs.begin(), pairs.end());
    const double v = std::accumulate(pairs.begin(), pairs.end(), 0.0);
    if (v > best_val) {
      best_val = v;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

inline std::vector<int> invert_permutation(const std::vector<int>& p) {
  std::vector<int> inv(p.size());
  for (size_t i = 0; i < p.size(); ++i) inv[static_cast<size_t>(p[i])] = static_cast<int>(i);
  return inv;
}

template <typename T>
struct PitResult {
  ad::Var<T> loss;
  /// permutation[k] = index of the estimate assigned to target k.
  std::vector<int> permutation;
};

/// L_sep = -max_pi sum_k SNR(s_k, est_pi(k)). Targets/estimates are [J x L].
template <typename T>
PitResult<T> pit_snr_loss(const ad::Var<T>& targets, const ad::Var<T>& estimates, SnrGuard g = {}) {
  const Eigen::Index J = targets.rows();
  if (J == 0) throw InvalidInput("pit_snr_loss: no sources");
  if (estimates.rows() != J || estimates.cols() != targets.cols()) {
    throw ShapeError("pit_snr_loss: targets and estimates must have equal counts and lengths");
  }
  if (J > 6) throw InvalidInput("pit_snr_loss: exhaustive search supports at most 6 sources");
  const Matrix<T> score = pairwise_snr<T>(targets.value(), estimates.value(), g);
  std::vector<int> perm = best_permutation(score);
  std::vector<ad::Var<T>> terms;
  for (Eigen::Index k = 0; k < J; ++k) {
    terms.push_back(ad::snr_db(ad::slice_rows(targets, k, 1), ad::slice_rows(estimates, perm[static_cast<size_t>(k)], 1),
                               static_cast<T>(g.eps), static_cast<T>(g.clamp_db)));
  }
  // Summing in ascending value order makes the loss bitwise independent of source order.
  std::stable_sort(terms.begin(), terms.end(), [](const ad::Var<T>& a, const ad::Var<T>& b) { return a.item() < b.item(); });
  return {ad::weighted_scalar_sum(terms, std::vector<T>(terms.size(), T(-1))), std::move(perm)};
}

/// Separation loss with estimate k tied to target k (clue-driven extraction).
template <typename T>
ad::Var<T> fixed_order_snr_loss(const ad::Var<T>& targets, const ad::Var<T>& estimates, SnrGuard g = {}) {
  if (estimates.rows() != targets.rows() || estimates.cols() != targets.cols() || targets.rows() == 0) {
    throw ShapeError("fixed_order_snr_loss: shape mismatch");
  }
  std::vector<ad::Var<T>> terms;
  for (Eigen::Index k = 0; k < targets.rows(); ++k) {
    terms.push_back(ad::snr_db(ad::slice_rows(targets, k, 1), ad::slice_rows(estimates, k, 1),
                               static_cast<T>(g.eps), static_cast<T>(g.clamp_db)));
  }
  return ad::weighted_scalar_sum(terms, std::vector<T>(terms.size(), T(-1)));
}

/// -sum [y log p + (1-y) log(1-p)], p clamped to [eps, 1-eps].
template <typename T>
ad::Var<T> counting_bce(const ad::Var<T>& probs, const std::vector<bool>& labels, T eps = T(1e-7)) {
  return ad::bce_sum(probs, labels, eps);
}

/// Existence labels for J sources decoded with one extra step.
inline std::vector<bool> existence_labels(int sources) {
  std::vector<bool> y(static_cast<size_t>(sources) + 1, true);
  y.back() = false;
  return y;
}

/// (1/M) sum_m (1/D) |a_{perm[m]} - c_m|^2, with perm from the PIT search.
template <typename T>
ad::Var<T> align_mse(const ad::Var<T>& attractors, const ad::Var<T>& clues, const std::vector<int>& perm) {
  if (attractors.cols() != clues.cols() || static_cast<size_t>(clues.rows()) != perm.size()) {
    throw ShapeError("align_mse: shape mismatch");
  }
  ad::Var<T> matched = ad::gather_rows(attractors, perm);
  ad::Var<T> diff = ad::sub(matched, clues);
  return ad::mean(ad::mul(diff, diff));
}

/// Mean over attractors i of -log softmax_j(z_ai . z_cj / tau) at the clue
/// matched to attractor i. Rows are L2-normalized first.
template <typename T>
ad::Var<T> align_infonce(const ad::Var<T>& attractors, const ad::Var<T>& clues, const std::vector<int>& perm,
                         T tau) {
  const Eigen::Index N = attractors.rows();
  if (clues.rows() != N || static_cast<Eigen::Index>(perm.size()) != N || attractors.cols() != clues.cols()) {
    throw ShapeError("align_infonce: shape mismatch");
  }
  if (!(tau > T(0))) throw InvalidInput("align_infonce: tau must be positive");
  // perm maps clue (= target) index to attractor index; invert it to find
  // each attractor's clue.
  const std::vector<int> clue_of = invert_permutation(perm);
  ad::Var<T> za = ad::l2_normalize_rows(attractors);
  ad::Var<T> zc = ad::l2_normalize_rows(clues);
  ad::Var<T> logits = ad::scale(ad::matmul_nt(za, zc), T(1) / tau);
  ad::Var<T> logp = ad::log_softmax_rows(logits);
  std::vector<ad::Var<T>> terms;
  for (Eigen::Index i = 0; i < N; ++i) terms.push_back(ad::pick(logp, i, clue_of[static_cast<size_t>(i)]));
  return ad::weighted_scalar_sum(terms, std::vector<T>(terms.size(), T(-1) / static_cast<T>(N)));
}

/// Weights of (sep, count, mse, infonce) in the total objective.
struct LossWeights {
  double lambda_count = 1.0;
  double lambda_align = 1.0;
};

inline std::array<double, 4> stage_weights(int stage, LossWeights w) {
  if (stage != 1 && stage != 2) throw InvalidInput("stage must be 1 or 2");
  const double a = stage == 2 ? w.lambda_align : 0.0;
  return {1.0, w.lambda_count, a, a};
}

/// Stage 1: sep + lc*count. Stage 2 adds la*(mse + infonce).
inline double total_loss(double sep, double count, double mse, double infonce, int stage, LossWeights w) {
  const auto k = stage_weights(stage, w);
  return k[0] * sep + k[1] * count + k[2] * mse + k[3] * infonce;
}

template <typename T>
struct LossBreakdown {
  double sep = 0, count = 0, mse = 0, infonce = 0, align = 0, total = 0;
  std::vector<int> permutation;
};

template <typename T>
struct LossTerms {
  ad::Var<T> sep;
  ad::Var<T> count;
  std::optional<ad::Var<T>> mse;
  std::optional<ad::Var<T>> infonce;
};

template <typename T>
ad::Var<T> total_loss(const LossTerms<T>& parts, int stage, LossWeights w, LossBreakdown<T>* out = nullptr) {
  const auto k = stage_weights(stage, w);
  std::vector<ad::Var<T>> xs{parts.sep, parts.count};
  std::vector<T> ws{static_cast<T>(k[0]), static_cast<T>(k[1])};
  if (stage == 2) {
    if (!parts.mse || !parts.infonce) throw InvalidInput("stage 2 loss needs both alignment terms");
    xs.push_back(*parts.mse);
    xs.push_back(*parts.infonce);
    ws.push_back(static_cast<T>(k[2]));
    ws.push_back(static_cast<T>(k[3]));
  }
  ad::Var<T> tot = ad::weighted_scalar_sum(xs, ws);
  if (out) {
    out->sep = parts.sep.item();
    out->count = parts.count.item();
    out->mse = parts.mse ? parts.mse->item() : 0.0;
    out->infonce = parts.infonce ? parts.infonce->item() : 0.0;
    out->align = out->mse + out->infonce;
    out->total = tot.item();
  }
  return tot;
}

}  // namespace unisep
