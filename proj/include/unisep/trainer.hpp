#pragma once

// Two-stage training: stage 1 fits separator + attractor decoder with PIT
// and counting losses; stage 2 feeds the separator either attractors or clue
// embeddings and aligns the two embedding families.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "unisep/checkpoint.hpp"
#include "unisep/eval.hpp"

namespace unisep {

template <typename T>
struct TrainSample {
  std::string id;
  Matrix<T> mixture;  // [1 x L]
  Matrix<T> targets;  // [J x L]
  std::vector<ClueBundle> clues;

  int order() const { return static_cast<int>(targets.rows()); }
};

template <typename T>
std::vector<TrainSample<T>> make_samples(const std::vector<MixtureItem>& items) {
  std::vector<TrainSample<T>> out;
  out.reserve(items.size());
  for (const auto& it : items) {
    TrainSample<T> s;
    s.id = it.id;
    s.mixture = waveform_row<T>(it.mixture);
    s.targets.resize(it.order(), static_cast<Eigen::Index>(it.mixture.samples.size()));
    for (int j = 0; j < it.order(); ++j) s.targets.row(j) = waveform_row<T>(it.sources[static_cast<size_t>(j)]);
    s.clues = it.clues;
    out.push_back(std::move(s));
  }
  return out;
}

/// Per-item stage-2 choice of separator input and, for clue items, the
/// modality subset. Subsets advance through the fixed cycle only on clue
/// items.
class BranchScheduler {
 public:
  struct Draw {
    bool attractor = false;
    ModalitySet modalities = kTag | kText | kVideo;
  };

  BranchScheduler(Rng& rng, double attractor_prob) : rng_(&rng), p_(attractor_prob) {}

  Draw next() {
    Draw d;
    d.attractor = std::uniform_real_distribution<double>(0.0, 1.0)(*rng_) < p_;
    if (!d.attractor) {
      d.modalities = kModalityCycle[cycle_ % kModalityCycle.size()];
      ++cycle_;
    }
    return d;
  }

  size_t cycle_position() const { return cycle_; }
  void set_cycle_position(size_t c) { cycle_ = c; }

 private:
  Rng* rng_;
  double p_;
  size_t cycle_ = 0;
};

/// Loss of one item on a fresh tape. The total is back-propagated with
/// weight `grad_scale` so a batch accumulates its mean gradient.
template <typename T>
LossBreakdown<T> item_loss(const Model<T>& model, const TrainSample<T>& s, int stage,
                           const BranchScheduler::Draw& draw, T grad_scale, bool backward = true) {
  const auto& cfg = model.config();
  const SnrGuard guard{cfg.loss.snr_eps, cfg.loss.snr_clamp_db};
  const LossWeights w{cfg.loss.lambda_count, cfg.loss.lambda_align};
  const int J = s.order();
  ad::Tape<T> t(backward);
  Analysis<T> a = model.analyze(t, t.constant(s.mixture));
  EdaOutput<T> e = model.eda().forward(t, a.W, J + 1);
  ad::Var<T> A = ad::slice_rows(e.attractors, 0, J);
  ad::Var<T> targets = t.constant(s.targets);
  LossTerms<T> parts;
  parts.count = counting_bce(e.probabilities, existence_labels(J), static_cast<T>(cfg.loss.bce_eps));
  std::vector<int> perm;
  if (stage == 1) {
    PitResult<T> pit = pit_snr_loss(targets, model.separate_with(t, a, A), guard);
    parts.sep = pit.loss;
    perm = pit.permutation;
  } else {
    std::vector<ClueBundle> bundles;
    for (const auto& b : s.clues) bundles.push_back(draw.attractor ? b : b.restricted(draw.modalities));
    ad::Var<T> C = model.clue_embeddings(t, a, bundles);
    if (draw.attractor) {
      PitResult<T> pit = pit_snr_loss(targets, model.separate_with(t, a, A), guard);
      parts.sep = pit.loss;
      perm = pit.permutation;
    } else {
      parts.sep = fixed_order_snr_loss(targets, model.separate_with(t, a, C), guard);
      // The alignment permutation always comes from attractor-driven PIT;
      // this pass only supplies values and is not differentiated.
      ad::Var<T> est = model.separate_with(t, a, t.constant(A.value()));
      perm = best_permutation(pairwise_snr<T>(s.targets, est.value(), guard));
    }
    parts.mse = align_mse(A, C, perm);
    parts.infonce = align_infonce(A, C, perm, static_cast<T>(cfg.loss.tau));
  }
  LossBreakdown<T> out;
  ad::Var<T> total = total_loss(parts, stage, w, &out);
  out.permutation = perm;
  if (!std::isfinite(out.total)) throw TrainingDiverged("non-finite loss on item " + s.id);
  if (backward) t.backward(ad::scale(total, grad_scale));
  return out;
}

struct EpochLog {
  int stage = 0;
  int epoch = 0;
  int items = 0;
  double total = 0, sep = 0, count = 0, mse = 0, infonce = 0;
  double grad_norm = 0;
  int attractor_items = 0, clue_items = 0;
  double val_snri_fixed = 0, val_snri_predicted = 0, val_count_acc = 0;
  bool validated = false;
  double seconds = 0;
  std::vector<double> item_losses;

  json to_json() const {
    json j{{"stage", stage},
           {"epoch", epoch},
           {"items", items},
           {"loss", {{"total", total}, {"sep", sep}, {"count", count}, {"mse", mse}, {"infonce", infonce}}},
           {"grad_norm", grad_norm},
           {"seconds", seconds}};
    if (stage == 2) j["branches"] = {{"attractor", attractor_items}, {"clue", clue_items}};
    if (validated) {
      j["valid"] = {{"snri_fixed_count", val_snri_fixed},
                    {"snri_predicted_count", val_snri_predicted},
                    {"count_accuracy", val_count_acc}};
    }
    return j;
  }
};

struct TrainOptions {
  std::string out_dir;
  std::optional<std::string> resume;       // checkpoint of this stage to continue from
  std::function<void(const EpochLog&)> on_epoch;
  int max_items = 0;                       // per epoch; 0 = all (tests use small values)
};

struct TrainResult {
  std::vector<EpochLog> epochs;
  std::string last_checkpoint;
  std::string best_checkpoint;
  double best_val = -1e300;
};

template <typename T>
class Trainer {
 public:
  Trainer(Model<T>& model, RngRegistry& rngs) : model_(model), rngs_(rngs) {}

  /// Runs `stage` on `train`; `valid` drives model selection.
  TrainResult run(int stage, const std::vector<MixtureItem>& train, const std::vector<MixtureItem>& valid,
                  const TrainOptions& opt) {
    if (stage != 1 && stage != 2) throw InvalidInput("stage must be 1 or 2");
    if (train.empty()) throw InvalidInput("no training items");
    const auto& cfg = model_.config();
    const auto& tc = cfg.trainer;
    for (const auto& it : train) check_compatible(cfg, it);
    const auto samples = make_samples<T>(train);
    const std::vector<MixtureItem> val = select_valid(valid, tc.valid_items);
    const int epochs = stage == 1 ? tc.stage1_epochs : tc.stage2_epochs;
    Adam<T> adam(stage == 1 ? tc.stage1_lr : tc.stage2_lr, tc.beta1, tc.beta2, tc.adam_eps);
    BranchScheduler sched(rngs_.stream("branch"), tc.attractor_prob);
    namespace fs = std::filesystem;
    fs::create_directories(opt.out_dir);
    const std::string prefix = (fs::path(opt.out_dir) / ("stage" + std::to_string(stage))).string();
    TrainResult res;
    res.last_checkpoint = prefix + "_last";
    res.best_checkpoint = prefix + "_best";
    int start = 0;
    if (opt.resume) {
      CheckpointMeta m = load_checkpoint(*opt.resume, model_, &adam, config_hash(cfg));
      if (m.stage != stage) throw IntegrityError("resume checkpoint belongs to stage " + std::to_string(m.stage));
      rngs_.restore(m.rng_state);
      sched.set_cycle_position(m.metrics.value("cycle_position", size_t{0}));
      res.best_val = m.metrics.value("best_val", -1e300);
      start = m.epoch;
    }
    std::ofstream log((fs::path(opt.out_dir) / "train_log.jsonl").string(), std::ios::app);
    std::vector<size_t> order(samples.size());
    auto params = model_.params().trainable();
    for (int epoch = start + 1; epoch <= epochs; ++epoch) {
      const auto t0 = std::chrono::steady_clock::now();
      std::iota(order.begin(), order.end(), size_t{0});
      std::shuffle(order.begin(), order.end(), rngs_.stream("data"));
      size_t n = order.size();
      if (opt.max_items > 0) n = std::min(n, static_cast<size_t>(opt.max_items));
      EpochLog lg;
      lg.stage = stage;
      lg.epoch = epoch;
      int steps = 0;
      for (size_t b0 = 0; b0 < n; b0 += static_cast<size_t>(tc.batch_size)) {
        const size_t b1 = std::min(n, b0 + static_cast<size_t>(tc.batch_size));
        model_.params().zero_grad();
        const T scale = T(1) / static_cast<T>(b1 - b0);
        for (size_t i = b0; i < b1; ++i) {
          BranchScheduler::Draw d;
          if (stage == 2) d = sched.next();
          LossBreakdown<T> l = item_loss(model_, samples[order[i]], stage, d, scale);
          lg.total += l.total;
          lg.sep += l.sep;
          lg.count += l.count;
          lg.mse += l.mse;
          lg.infonce += l.infonce;
          lg.item_losses.push_back(l.total);
          if (stage == 2) (d.attractor ? lg.attractor_items : lg.clue_items) += 1;
        }
        lg.grad_norm += clip_grad_norm(params, tc.grad_clip);
        adam.step(params);
        ++steps;
      }
      lg.items = static_cast<int>(n);
      const double inv = 1.0 / std::max<size_t>(n, 1);
      lg.total *= inv;
      lg.sep *= inv;
      lg.count *= inv;
      lg.mse *= inv;
      lg.infonce *= inv;
      lg.grad_norm /= std::max(steps, 1);
      if (!val.empty()) {
        lg.validated = true;
        lg.val_snri_fixed = evaluate_separation(model_, val, {EvalMode::kFixedCount}).overall.snri;
        lg.val_snri_predicted = evaluate_separation(model_, val, {EvalMode::kPredictedCount}).overall.snri;
        lg.val_count_acc = counting_accuracy(model_, val, cfg.eda.theta).accuracy();
      }
      lg.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      const double score = lg.validated ? lg.val_snri_predicted : -lg.total;
      const bool improved = score > res.best_val;
      if (improved) res.best_val = score;
      CheckpointMeta meta;
      meta.stage = stage;
      meta.epoch = epoch;
      meta.rng_state = rngs_.serialize();
      meta.metrics = lg.to_json();
      meta.metrics["cycle_position"] = sched.cycle_position();
      meta.metrics["best_val"] = res.best_val;
      save_checkpoint(res.last_checkpoint, model_, &adam, meta);
      if (improved) save_checkpoint(res.best_checkpoint, model_, static_cast<const Adam<T>*>(nullptr), meta);
      json row = lg.to_json();
      log << row.dump() << "\n";
      log.flush();
      if (opt.on_epoch) opt.on_epoch(lg);
      res.epochs.push_back(std::move(lg));
    }
    if (epochs == 0 || start >= epochs) {
      CheckpointMeta meta;
      meta.stage = stage;
      meta.epoch = std::max(start, epochs);
      meta.rng_state = rngs_.serialize();
      save_checkpoint(res.last_checkpoint, model_, &adam, meta);
      save_checkpoint(res.best_checkpoint, model_, static_cast<const Adam<T>*>(nullptr), meta);
    }
    return res;
  }

 private:
  static std::vector<MixtureItem> select_valid(const std::vector<MixtureItem>& valid, int per_order) {
    if (per_order <= 0) return {};
    std::map<int, int> taken;
    std::vector<MixtureItem> out;
    for (const auto& it : valid) {
      if (taken[it.order()]++ < per_order) out.push_back(it);
    }
    return out;
  }

  Model<T>& model_;
  RngRegistry& rngs_;
};

}  // namespace unisep
