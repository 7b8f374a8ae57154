#pragma once

// Clue-free separation (attractors) and clue-driven extraction over one
// shared separator.

#include <optional>
#include <string>
#include <vector>

#include "unisep/losses.hpp"
#include "unisep/metrics.hpp"
#include "unisep/model.hpp"

namespace unisep {

struct SeparationResult {
  Matrix<float> estimates;       // [count x L], one row per source
  Matrix<float> representations;  // rows of A that drove the separator
  int inferred_count = 0;        // attractors accepted by the decoder
  std::vector<double> probabilities;
  std::vector<std::string> origins;  // "attractor" or "clue"
  bool fallback = false;             // no source detected, first attractor used
  int sample_rate = 8000;

  int count() const { return static_cast<int>(estimates.rows()); }
  std::vector<Waveform> waveforms() const {
    std::vector<Waveform> out;
    for (Eigen::Index j = 0; j < estimates.rows(); ++j) out.push_back(row_waveform(estimates, j, sample_rate));
    return out;
  }
  json to_json() const {
    return json{{"inferred_count", inferred_count}, {"num_estimates", count()},
                {"probabilities", probabilities},  {"origins", origins},
                {"fallback", fallback}};
  }
};

template <typename T>
Matrix<float> to_float(const Matrix<T>& m) {
  return m.template cast<float>();
}

/// SS mode. With `count_override` exactly that many attractors are decoded;
/// otherwise decoding stops at the first probability <= theta. When nothing
/// is detected, `strict` raises NoSourceDetected, else the first attractor
/// is used alone.
template <typename T>
SeparationResult separate(const Model<T>& model, const Waveform& mixture, std::optional<int> count_override = {},
                          bool strict = false) {
  mixture.validate();
  const auto& cfg = model.config();
  if (count_override && *count_override < 1) throw InvalidInput("--num-sources must be >= 1");
  ad::Tape<T> t(false);
  Analysis<T> a = model.analyze(t, t.constant(waveform_row<T>(mixture)));
  SeparationResult r;
  r.sample_rate = mixture.sample_rate;
  Matrix<T> A;
  if (count_override) {
    EdaOutput<T> e = model.eda().forward(t, a.W, *count_override);
    A = e.attractors.value();
    for (Eigen::Index i = 0; i < e.probabilities.rows(); ++i) r.probabilities.push_back(e.probabilities.value()(i, 0));
    r.inferred_count = *count_override;
  } else {
    AttractorSet<T> s = model.eda().infer_count(t, a.W, static_cast<T>(cfg.eda.theta), cfg.eda.max_steps);
    for (T p : s.probabilities) r.probabilities.push_back(p);
    r.inferred_count = s.count;
    if (s.no_source()) {
      if (strict) throw NoSourceDetected();
      r.fallback = true;
      A = s.decoded.topRows(1);
    } else {
      A = s.attractors;
    }
  }
  r.estimates = to_float<T>(model.separate_with(t, a, t.constant(A)).value());
  r.representations = to_float<T>(A);
  r.origins.assign(static_cast<size_t>(A.rows()), "attractor");
  return r;
}

/// TSE mode: one estimate per bundle, in bundle order.
template <typename T>
SeparationResult extract(const Model<T>& model, const Waveform& mixture, const std::vector<ClueBundle>& bundles) {
  mixture.validate();
  if (bundles.empty()) throw InvalidInput("at least one clue bundle is required");
  for (const auto& b : bundles) {
    if (b.empty()) throw InvalidInput("no clue provided");
  }
  ad::Tape<T> t(false);
  Analysis<T> a = model.analyze(t, t.constant(waveform_row<T>(mixture)));
  ad::Var<T> C = model.clue_embeddings(t, a, bundles);
  SeparationResult r;
  r.sample_rate = mixture.sample_rate;
  r.inferred_count = static_cast<int>(bundles.size());
  r.estimates = to_float<T>(model.separate_with(t, a, C).value());
  r.representations = to_float<T>(C.value());
  r.origins.assign(bundles.size(), "clue");
  return r;
}

inline std::span<const float> row_span(const Matrix<float>& m, Eigen::Index r) {
  return {m.data() + r * m.cols(), static_cast<size_t>(m.cols())};
}

inline std::span<const float> wave_span(const Waveform& w) { return {w.samples.data(), w.samples.size()}; }

inline double cosine(const Eigen::Ref<const Eigen::RowVectorXf>& a, const Eigen::Ref<const Eigen::RowVectorXf>& b) {
  const double na = a.cast<double>().norm(), nb = b.cast<double>().norm();
  if (na == 0 || nb == 0) return 0.0;
  return a.cast<double>().dot(b.cast<double>()) / (na * nb);
}

struct ConsistencyRow {
  int source = 0;
  int class_id = -1;
  double snri_ss = 0;
  double snri_tse = 0;
  double delta = 0;  // tse - ss
  double cosine = 0;  // attractor matched to this source vs its clue embedding
};

/// Runs both modes on one mixture with known stems. SS uses as many
/// attractors as bundles; its estimates are matched to the stems by PIT.
template <typename T>
std::vector<ConsistencyRow> hybrid_consistency_check(const Model<T>& model, const Waveform& mixture,
                                                     const std::vector<Waveform>& sources,
                                                     const std::vector<ClueBundle>& bundles) {
  if (sources.size() != bundles.size()) throw InvalidInput("one clue bundle per source is required");
  const int J = static_cast<int>(sources.size());
  SeparationResult ss = separate(model, mixture, J);
  SeparationResult tse = extract(model, mixture, bundles);
  Matrix<double> score(J, J);
  for (int k = 0; k < J; ++k) {
    for (int e = 0; e < J; ++e) score(k, e) = metrics::snr(wave_span(sources[static_cast<size_t>(k)]), row_span(ss.estimates, e));
  }
  const std::vector<int> perm = best_permutation(score);
  std::vector<ConsistencyRow> rows;
  for (int k = 0; k < J; ++k) {
    const auto s = wave_span(sources[static_cast<size_t>(k)]);
    ConsistencyRow r;
    r.source = k;
    r.class_id = bundles[static_cast<size_t>(k)].target_class;
    r.snri_ss = metrics::snri(s, row_span(ss.estimates, perm[static_cast<size_t>(k)]), wave_span(mixture));
    r.snri_tse = metrics::snri(s, row_span(tse.estimates, k), wave_span(mixture));
    r.delta = r.snri_tse - r.snri_ss;
    r.cosine = cosine(ss.representations.row(perm[static_cast<size_t>(k)]), tse.representations.row(k));
    rows.push_back(r);
  }
  return rows;
}

inline json consistency_to_json(const std::vector<ConsistencyRow>& rows) {
  json a = json::array();
  for (const auto& r : rows) {
    a.push_back({{"source", r.source},
                 {"class_id", r.class_id},
                 {"snri_ss", r.snri_ss},
                 {"snri_tse", r.snri_tse},
                 {"delta", r.delta},
                 {"cosine", r.cosine}});
  }
  return a;
}

}  // namespace unisep
