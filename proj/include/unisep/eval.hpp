#pragma once

// Evaluation protocol: SNRi / SI-SNRi with the count-mismatch rules,
// counting accuracy, attractor-clue matching and embedding export.

#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "unisep/inference.hpp"
#include "unisep/synth.hpp"

namespace unisep {

inline constexpr int kReportSchemaVersion = 1;

enum class EvalMode { kFixedCount, kPredictedCount, kTse };

inline std::string mode_name(EvalMode m) {
  switch (m) {
    case EvalMode::kFixedCount: return "ss-fixed-count";
    case EvalMode::kPredictedCount: return "ss-predicted-count";
    case EvalMode::kTse: return "tse";
  }
  return "?";
}

inline EvalMode parse_mode(const std::string& s) {
  if (s == "ss-fixed-count") return EvalMode::kFixedCount;
  if (s == "ss-predicted-count") return EvalMode::kPredictedCount;
  if (s == "tse") return EvalMode::kTse;
  throw InvalidInput("unknown eval mode '" + s + "'");
}

struct ItemScore {
  std::vector<double> snri;
  std::vector<double> si_snri;
  std::vector<int> permutation;  // estimate index per source after padding
  int estimated = 0;
};

/// Keeps the first J estimates when there are more, pads with silence when
/// there are fewer; the result always has J rows.
inline Matrix<float> match_count(const Matrix<float>& est, int J, Eigen::Index length) {
  Matrix<float> out = Matrix<float>::Zero(J, length);
  const auto k = std::min<Eigen::Index>(J, est.rows());
  if (k > 0) out.topRows(k) = est.topRows(k);
  return out;
}

/// SNRi per source. With `use_pit` the (truncated / zero-filled) estimates
/// are assigned by the best permutation; otherwise estimate j scores source j.
inline ItemScore score_item(const std::vector<Waveform>& sources, const Matrix<float>& estimates,
                            const Waveform& mixture, bool use_pit = true) {
  const int J = static_cast<int>(sources.size());
  if (J == 0) throw InvalidInput("score_item: no reference sources");
  const auto L = static_cast<Eigen::Index>(mixture.samples.size());
  if (estimates.rows() > 0 && estimates.cols() != L) throw ShapeError("score_item: estimate length differs");
  const Matrix<float> est = match_count(estimates, J, L);
  ItemScore s;
  s.estimated = static_cast<int>(estimates.rows());
  if (use_pit) {
    Matrix<double> score(J, J);
    for (int k = 0; k < J; ++k) {
      for (int e = 0; e < J; ++e) score(k, e) = metrics::snr(wave_span(sources[static_cast<size_t>(k)]), row_span(est, e));
    }
    s.permutation = best_permutation(score);
  } else {
    s.permutation.resize(static_cast<size_t>(J));
    for (int k = 0; k < J; ++k) s.permutation[static_cast<size_t>(k)] = k;
  }
  for (int k = 0; k < J; ++k) {
    const auto ref = wave_span(sources[static_cast<size_t>(k)]);
    const auto e = row_span(est, s.permutation[static_cast<size_t>(k)]);
    s.snri.push_back(metrics::snri(ref, e, wave_span(mixture)));
    s.si_snri.push_back(metrics::si_snri(ref, e, wave_span(mixture)));
  }
  return s;
}

struct EvalOptions {
  EvalMode mode = EvalMode::kFixedCount;
  ModalitySet modalities = kTag | kText | kVideo;
  int max_items = 0;
};

struct ItemRecord {
  std::string id;
  std::string split;
  int order = 0;
  int estimated = 0;
  double snri = 0;     // mean over sources
  double si_snri = 0;
  std::vector<double> source_snri;
};

struct Aggregate {
  int items = 0;
  int sources = 0;
  double snri = 0;
  double si_snri = 0;
};

struct EvalReport {
  std::string mode;
  std::string modalities;
  std::vector<ItemRecord> items;
  std::map<std::string, Aggregate> groups;  // key "<split>/<order>mix"
  Aggregate overall;

  double mean_snri(const std::string& key) const {
    auto it = groups.find(key);
    return it == groups.end() ? 0.0 : it->second.snri;
  }

  json to_json() const {
    json g = json::object();
    for (const auto& [k, a] : groups) {
      g[k] = {{"items", a.items}, {"sources", a.sources}, {"snri", a.snri}, {"si_snri", a.si_snri}};
    }
    json it = json::array();
    for (const auto& r : items) {
      it.push_back({{"id", r.id},
                    {"split", r.split},
                    {"order", r.order},
                    {"estimated", r.estimated},
                    {"snri", r.snri},
                    {"si_snri", r.si_snri},
                    {"source_snri", r.source_snri}});
    }
    return json{{"schema_version", kReportSchemaVersion},
                {"kind", "separation"},
                {"mode", mode},
                {"modalities", modalities},
                {"overall", {{"items", overall.items}, {"sources", overall.sources}, {"snri", overall.snri}, {"si_snri", overall.si_snri}}},
                {"groups", g},
                {"items", it}};
  }
};

inline std::string group_key(const std::string& split, int order) {
  return split + "/" + std::to_string(order) + "mix";
}

/// Aggregates are means of the per-item means.
inline void finalize(EvalReport& rep) {
  std::map<std::string, std::vector<const ItemRecord*>> by;
  for (const auto& r : rep.items) by[group_key(r.split, r.order)].push_back(&r);
  auto agg = [](const std::vector<const ItemRecord*>& rs) {
    Aggregate a;
    a.items = static_cast<int>(rs.size());
    for (const auto* r : rs) {
      a.sources += r->order;
      a.snri += r->snri;
      a.si_snri += r->si_snri;
    }
    if (a.items > 0) {
      a.snri /= a.items;
      a.si_snri /= a.items;
    }
    return a;
  };
  rep.groups.clear();
  std::vector<const ItemRecord*> all;
  for (const auto& [k, rs] : by) {
    rep.groups[k] = agg(rs);
    all.insert(all.end(), rs.begin(), rs.end());
  }
  rep.overall = agg(all);
}

inline void check_compatible(const GlobalConfig& cfg, const MixtureItem& it) {
  if (it.mixture.sample_rate != cfg.codec.sample_rate) {
    throw InvalidInput("item " + it.id + ": sample rate differs from the model config");
  }
  for (int c : it.class_ids) {
    if (c < 0 || c >= cfg.num_classes()) throw InvalidInput("item " + it.id + ": class id outside the model's class table");
  }
}

template <typename T>
EvalReport evaluate_separation(const Model<T>& model, const std::vector<MixtureItem>& items, const EvalOptions& opt) {
  EvalReport rep;
  rep.mode = mode_name(opt.mode);
  rep.modalities = opt.mode == EvalMode::kTse ? modality_name(opt.modalities) : "";
  int n = 0;
  for (const auto& it : items) {
    if (opt.max_items > 0 && n >= opt.max_items) break;
    ++n;
    check_compatible(model.config(), it);
    SeparationResult res;
    bool pit = true;
    switch (opt.mode) {
      case EvalMode::kFixedCount: res = separate(model, it.mixture, it.order()); break;
      case EvalMode::kPredictedCount: res = separate(model, it.mixture); break;
      case EvalMode::kTse: {
        std::vector<ClueBundle> bs;
        for (const auto& b : it.clues) bs.push_back(b.restricted(opt.modalities));
        res = extract(model, it.mixture, bs);
        pit = false;
        break;
      }
    }
    const ItemScore s = score_item(it.sources, res.estimates, it.mixture, pit);
    ItemRecord r;
    r.id = it.id;
    r.split = it.split;
    r.order = it.order();
    r.estimated = s.estimated;
    r.snri = metrics::mean(s.snri);
    r.si_snri = metrics::mean(s.si_snri);
    r.source_snri = s.snri;
    rep.items.push_back(std::move(r));
  }
  finalize(rep);
  return rep;
}

struct CountReport {
  std::map<int, std::pair<int, int>> by_order;  // order -> (correct, total)
  std::map<int, int> histogram;                 // predicted count -> items

  double accuracy(int order) const {
    auto it = by_order.find(order);
    return it == by_order.end() || it->second.second == 0 ? 0.0
                                                          : static_cast<double>(it->second.first) / it->second.second;
  }
  double accuracy() const {
    int c = 0, t = 0;
    for (const auto& [o, p] : by_order) {
      c += p.first;
      t += p.second;
    }
    return t == 0 ? 0.0 : static_cast<double>(c) / t;
  }
};

/// Fraction of items where the decoder's count equals the true count, given
/// a callable item -> predicted count.
template <typename F>
CountReport counting_accuracy_with(const std::vector<MixtureItem>& items, F&& predict, int max_items = 0) {
  CountReport r;
  int n = 0;
  for (const auto& it : items) {
    if (max_items > 0 && n++ >= max_items) break;
    const int p = predict(it);
    auto& slot = r.by_order[it.order()];
    slot.first += p == it.order() ? 1 : 0;
    slot.second += 1;
    r.histogram[p] += 1;
  }
  return r;
}

template <typename T>
CountReport counting_accuracy(const Model<T>& model, const std::vector<MixtureItem>& items, double theta,
                              int max_items = 0) {
  const auto& cfg = model.config();
  return counting_accuracy_with(
      items,
      [&](const MixtureItem& it) {
        ad::Tape<T> t(false);
        Analysis<T> a = model.analyze(t, t.constant(waveform_row<T>(it.mixture)));
        return model.eda().infer_count(t, a.W, static_cast<T>(theta), cfg.eda.max_steps).count;
      },
      max_items);
}

/// Attractors (J decoder steps, matched to stems by PIT over their
/// estimates) and pooled full-bundle clue embeddings for one item.
template <typename T>
struct ItemEmbeddings {
  Matrix<T> attractors;  // row k belongs to source k
  Matrix<T> clues;       // row k belongs to source k
};

template <typename T>
ItemEmbeddings<T> item_embeddings(const Model<T>& model, const MixtureItem& it) {
  const int J = it.order();
  ad::Tape<T> t(false);
  Analysis<T> a = model.analyze(t, t.constant(waveform_row<T>(it.mixture)));
  EdaOutput<T> e = model.eda().forward(t, a.W, J);
  Matrix<float> est = to_float<T>(model.separate_with(t, a, e.attractors).value());
  Matrix<double> score(J, J);
  for (int k = 0; k < J; ++k) {
    for (int j = 0; j < J; ++j) score(k, j) = metrics::snr(wave_span(it.sources[static_cast<size_t>(k)]), row_span(est, j));
  }
  const std::vector<int> perm = best_permutation(score);
  ItemEmbeddings<T> out;
  out.attractors = ad::gather_rows(e.attractors, perm).value();
  out.clues = model.clue_embeddings(t, a, it.clues).value();
  return out;
}

/// Each attractor is assigned to the clue with the highest cosine
/// similarity (many-to-one allowed); correct when that clue's class equals
/// the attractor's class.
template <typename T>
std::pair<int, int> match_counts(const Matrix<T>& attractors, const Matrix<T>& clues, const std::vector<int>& attractor_class,
                                 const std::vector<int>& clue_class) {
  int correct = 0;
  for (Eigen::Index i = 0; i < attractors.rows(); ++i) {
    Eigen::Index best = 0;
    double bv = -2.0;
    for (Eigen::Index j = 0; j < clues.rows(); ++j) {
      const double c = cosine(attractors.row(i).template cast<float>(), clues.row(j).template cast<float>());
      if (c > bv) {
        bv = c;
        best = j;
      }
    }
    if (clue_class[static_cast<size_t>(best)] == attractor_class[static_cast<size_t>(i)]) ++correct;
  }
  return {correct, static_cast<int>(attractors.rows())};
}

struct MatchReport {
  std::map<int, std::pair<int, int>> by_order;
  double accuracy(int order) const {
    auto it = by_order.find(order);
    return it == by_order.end() || it->second.second == 0 ? 0.0
                                                          : static_cast<double>(it->second.first) / it->second.second;
  }
};

template <typename T>
MatchReport matching_accuracy(const Model<T>& model, const std::vector<MixtureItem>& items, int max_items = 0) {
  MatchReport r;
  int n = 0;
  for (const auto& it : items) {
    if (max_items > 0 && n++ >= max_items) break;
    ItemEmbeddings<T> e = item_embeddings(model, it);
    auto [c, t] = match_counts<T>(e.attractors, e.clues, it.class_ids, it.class_ids);
    r.by_order[it.order()].first += c;
    r.by_order[it.order()].second += t;
  }
  return r;
}

/// JSON lines {kind, class_id, item, vector}; J attractor rows and J clue
/// rows per item.
template <typename T>
int export_embeddings(const Model<T>& model, const std::vector<MixtureItem>& items, const std::string& path,
                      int max_items = 0) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  int rows = 0, n = 0;
  for (const auto& it : items) {
    if (max_items > 0 && n++ >= max_items) break;
    ItemEmbeddings<T> e = item_embeddings(model, it);
    auto dump = [&](const char* kind, const Matrix<T>& m) {
      for (Eigen::Index k = 0; k < m.rows(); ++k) {
        std::vector<double> v(static_cast<size_t>(m.cols()));
        for (Eigen::Index d = 0; d < m.cols(); ++d) v[static_cast<size_t>(d)] = static_cast<double>(m(k, d));
        out << json{{"kind", kind}, {"class_id", it.class_ids[static_cast<size_t>(k)]}, {"item", it.id}, {"vector", v}}.dump()
            << "\n";
        ++rows;
      }
    };
    dump("attractor", e.attractors);
    dump("clue", e.clues);
  }
  return rows;
}

}  // namespace unisep
