#pragma once

// Loss, metrics, fold splitting and the training loop.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "mdt/data_io.hpp"
#include "mdt/model.hpp"
#include "mdt/optim.hpp"
#include "mdt/rng.hpp"

namespace mdt {

struct TrainConfig {
  std::size_t batch_size = 48;  // labeled comments per update; whole discussions only
  std::size_t epochs = 10;
  std::size_t patience = 2;     // epochs without validation F1 improvement before stopping
  double weight_neutral = 1.0;
  double weight_hateful = 1.5;
  std::uint64_t seed = 1;
  LrSchedule schedule{};
  AdamConfig adam{};
  std::size_t folds = 7;
  std::size_t max_updates = 0;  // 0: no cap
  double val_fraction = 0.1;
  double stop_at_train_accuracy = 0.0;  // 0: off; otherwise stop once reached
  bool eval_train = false;      // score the training set after every epoch
  std::size_t max_vocab = 0;    // 0: keep every token seen in training text
  std::size_t min_count = 1;

  void validate() const {
    if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
    if (epochs == 0) throw ConfigError("epochs must be at least 1");
    if (!(weight_neutral > 0.0) || !(weight_hateful > 0.0)) throw ConfigError("class weights must be positive");
    if (folds < 1) throw ConfigError("folds must be at least 1 (1 trains on everything)");
    if (val_fraction < 0.0 || val_fraction >= 1.0) throw ConfigError("val_fraction must be in [0, 1)");
    schedule.validate();
  }
};

template <class C, class V>
  requires std::same_as<std::remove_const_t<C>, TrainConfig>
void visit_fields(C& c, V&& v) {
  v("batch_size", c.batch_size);
  v("epochs", c.epochs);
  v("patience", c.patience);
  v("weight_neutral", c.weight_neutral);
  v("weight_hateful", c.weight_hateful);
  v("seed", c.seed);
  v("peak_lr", c.schedule.peak_lr);
  v("end_lr", c.schedule.end_lr);
  v("warmup_updates", c.schedule.warmup_updates);
  v("total_updates", c.schedule.total_updates);
  v("lr_power", c.schedule.power);
  v("adam_beta1", c.adam.beta1);
  v("adam_beta2", c.adam.beta2);
  v("adam_eps", c.adam.eps);
  v("folds", c.folds);
  v("max_updates", c.max_updates);
  v("val_fraction", c.val_fraction);
  v("stop_at_train_accuracy", c.stop_at_train_accuracy);
  v("eval_train", c.eval_train);
  v("max_vocab", c.max_vocab);
  v("min_count", c.min_count);
}

// -w_label * log softmax(logits)[label] for a single comment.
inline double weighted_ce(std::span<const double> logits, int label, const std::vector<double>& weights) {
  Tensor<double> t({1, logits.size()}, std::vector<double>(logits.begin(), logits.end()));
  return weighted_cross_entropy_sum(t, {label}, weights).item();
}

// ---------------------------------------------------------------------------
// Metrics

inline constexpr std::size_t kClasses = 2;

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;    // true count
  std::size_t predicted = 0;  // predicted count
  bool no_predictions = false;  // precision set to 0 by convention
};

struct MetricsReport {
  std::size_t total = 0;
  double accuracy = 0.0;
  double precision = 0.0;  // support-weighted
  double recall = 0.0;
  double f1 = 0.0;
  std::array<std::array<std::size_t, kClasses>, kClasses> confusion{};  // [true][pred]
  std::array<ClassMetrics, kClasses> per_class{};
};

inline MetricsReport metrics(const std::vector<int>& y_true, const std::vector<int>& y_pred) {
  if (y_true.size() != y_pred.size())
    throw ShapeError("metrics: " + std::to_string(y_true.size()) + " true labels but " +
                     std::to_string(y_pred.size()) + " predictions");
  if (y_true.empty()) throw ShapeError("metrics: no examples");
  MetricsReport r;
  r.total = y_true.size();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const auto t = static_cast<std::size_t>(y_true[i]), p = static_cast<std::size_t>(y_pred[i]);
    if (t >= kClasses || p >= kClasses) throw ShapeError("metrics: labels must be 0 or 1");
    ++r.confusion[t][p];
    correct += t == p;
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(r.total);
  for (std::size_t c = 0; c < kClasses; ++c) {
    auto& m = r.per_class[c];
    const std::size_t tp = r.confusion[c][c];
    for (std::size_t o = 0; o < kClasses; ++o) {
      m.support += r.confusion[c][o];
      m.predicted += r.confusion[o][c];
    }
    m.no_predictions = m.predicted == 0;
    m.precision = m.predicted ? static_cast<double>(tp) / static_cast<double>(m.predicted) : 0.0;
    m.recall = m.support ? static_cast<double>(tp) / static_cast<double>(m.support) : 0.0;
    m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    // Classes absent from y_true carry zero weight.
    const double w = static_cast<double>(m.support) / static_cast<double>(r.total);
    r.precision += w * m.precision;
    r.recall += w * m.recall;
    r.f1 += w * m.f1;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Stratified k-fold

using FoldSplit = std::vector<std::vector<std::size_t>>;

// Indices of each class are shuffled with one seeded generator (classes in
// ascending order), then dealt round-robin; the dealer position carries
// over from one class to the next. Folds are returned sorted.
inline FoldSplit stratified_kfold(const std::vector<int>& labels, std::size_t k = 7, std::uint64_t seed = 1) {
  if (k < 2) throw ConfigError("stratified_kfold: k must be at least 2");
  int max_label = -1;
  for (int l : labels) {
    if (l < 0) throw DataError("stratified_kfold: negative label");
    max_label = std::max(max_label, l);
  }
  Rng rng(seed);
  FoldSplit folds(k);
  std::size_t dealer = 0;
  for (int c = 0; c <= max_label; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == c) members.push_back(i);
    if (members.empty()) continue;
    if (members.size() < k)
      throw DataError("stratified_kfold: class " + std::to_string(c) + " has " + std::to_string(members.size()) +
                      " examples, fewer than k = " + std::to_string(k));
    rng.shuffle(members);
    for (auto i : members) folds[dealer++ % k].push_back(i);
  }
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

// Fold stratification key of a discussion: whether any comment is Hateful.
inline std::vector<int> discussion_strata(const Dataset& ds) {
  std::vector<int> out;
  for (const auto& d : ds.discussions) {
    int s = 0;
    for (const auto& n : d.tree.nodes())
      if (n.label == Label::Hateful) s = 1;
    out.push_back(s);
  }
  return out;
}

// Seeded carve-out of a validation subset: returns (train, val).
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_validation(std::vector<std::size_t> pool,
                                                                                    double fraction,
                                                                                    std::uint64_t seed) {
  Rng rng(seed);
  rng.shuffle(pool);
  std::size_t nval = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(pool.size())));
  if (fraction > 0.0 && nval == 0 && pool.size() >= 2) nval = 1;
  std::vector<std::size_t> val(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(nval));
  std::vector<std::size_t> train(pool.begin() + static_cast<std::ptrdiff_t>(nval), pool.end());
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());
  return {train, val};
}

// ---------------------------------------------------------------------------
// Early stopping

class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

  // Records one epoch's score; returns true when training should stop.
  bool update(double score) {
    ++epochs_;
    if (score > best_) {
      best_ = score;
      best_epoch_ = epochs_;
      bad_ = 0;
      return false;
    }
    return ++bad_ >= patience_;
  }

  bool improved_last() const noexcept { return best_epoch_ == epochs_; }
  std::size_t best_epoch() const noexcept { return best_epoch_; }  // 1-based; 0 before any epoch
  double best() const noexcept { return best_; }

 private:
  std::size_t patience_;
  std::size_t epochs_ = 0;
  std::size_t best_epoch_ = 0;
  std::size_t bad_ = 0;
  double best_ = -std::numeric_limits<double>::infinity();
};

// ---------------------------------------------------------------------------
// Batching, evaluation and the loop

// Consecutive runs of whole discussions holding at least batch_size labeled
// comments (the last batch may hold fewer).
inline std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& order,
                                                          const std::vector<DiscussionInput>& data,
                                                          std::size_t batch_size) {
  std::vector<std::vector<std::size_t>> batches;
  std::vector<std::size_t> cur;
  std::size_t labeled = 0;
  for (auto i : order) {
    const std::size_t l = data[i].labeled();
    if (l == 0) continue;
    cur.push_back(i);
    labeled += l;
    if (labeled >= batch_size) {
      batches.push_back(std::move(cur));
      cur.clear();
      labeled = 0;
    }
  }
  if (!cur.empty()) batches.push_back(std::move(cur));
  return batches;
}

inline int argmax2(double neutral, double hateful) { return hateful > neutral ? 1 : 0; }

struct Predictions {
  std::vector<int> y_true;
  std::vector<int> y_pred;
};

template <class T>
Predictions predict(const MdtModel<T>& model, const std::vector<DiscussionInput>& data) {
  Predictions p;
  for (const auto& in : data) {
    auto logits = model.forward(in);
    for (std::size_t c = 0; c < in.size(); ++c) {
      if (in.targets[c] < 0) continue;
      p.y_true.push_back(in.targets[c]);
      p.y_pred.push_back(argmax2(logits.at(c, 0), logits.at(c, 1)));
    }
  }
  return p;
}

template <class T>
MetricsReport evaluate(const MdtModel<T>& model, const std::vector<DiscussionInput>& data) {
  auto p = predict(model, data);
  return metrics(p.y_true, p.y_pred);
}

struct EpochReport {
  std::size_t epoch = 0;    // 1-based
  std::size_t updates = 0;  // cumulative
  double mean_loss = 0.0;
  std::optional<MetricsReport> train;
  std::optional<MetricsReport> val;
};

struct TrainResult {
  std::vector<EpochReport> epochs;
  std::size_t best_epoch = 0;
  double best_score = 0.0;
  std::size_t updates = 0;
  bool stopped_early = false;
  std::optional<std::size_t> reached_train_target_at;  // update count
};

using EpochCallback = std::function<void(const EpochReport&)>;

// Trains in place and leaves the model at its best-scoring epoch (validation
// weighted F1, or training F1 when no validation set is given).
template <class T>
TrainResult train(MdtModel<T>& model, const std::vector<DiscussionInput>& train_set,
                  const std::vector<DiscussionInput>& val_set, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (train_set.empty()) throw DataError("train: empty training set");
  auto& params = model.params();
  auto state = make_optimizer_state(params, cfg.adam);
  const std::vector<T> weights{static_cast<T>(cfg.weight_neutral), static_cast<T>(cfg.weight_hateful)};
  DropoutStream stream;
  stream.enabled = true;
  stream.seed = hash_combine(cfg.seed, 0x64726f70ULL);
  const bool need_train_eval = cfg.eval_train || val_set.empty() || cfg.stop_at_train_accuracy > 0.0;

  TrainResult result;
  EarlyStopping stopper(cfg.patience);
  auto best = model.snapshot();
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng shuffler(hash_combine(cfg.seed, epoch));
    shuffler.shuffle(order);
    const auto batches = make_batches(order, train_set, cfg.batch_size);
    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    bool capped = false;
    for (const auto& batch : batches) {
      if (cfg.max_updates && result.updates >= cfg.max_updates) {
        capped = true;
        break;
      }
      std::size_t labeled = 0;
      for (auto i : batch) labeled += train_set[i].labeled();
      const T inv = T(1) / static_cast<T>(labeled);
      stream.step = result.updates;
      stream.calls = 0;
      zero_grads(params);
      double batch_loss = 0.0;
      auto batch_ids = [&] {
        std::string s;
        for (auto i : batch) s += (s.empty() ? "" : ", ") + train_set[i].id;
        return s;
      };
      try {
        for (auto i : batch) {
          ForwardOptions opt;
          opt.dropout = &stream;
          auto logits = model.forward(train_set[i], opt);
          auto loss = scale(weighted_cross_entropy_sum(logits, train_set[i].targets, weights), inv);
          const double v = static_cast<double>(loss.item());
          if (!std::isfinite(v)) throw NumericError("non-finite loss");
          batch_loss += v;
          loss.backward();
        }
        adam_step(params, state, lr_at(cfg.schedule, static_cast<std::int64_t>(result.updates) + 1));
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " at update " + std::to_string(result.updates + 1) +
                           "; batch discussions: " + batch_ids());
      }
      ++result.updates;
      loss_sum += batch_loss;
      ++loss_count;
    }

    EpochReport rep;
    rep.epoch = epoch;
    rep.updates = result.updates;
    rep.mean_loss = loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0;
    if (need_train_eval) rep.train = evaluate(model, train_set);
    if (!val_set.empty()) rep.val = evaluate(model, val_set);
    result.epochs.push_back(rep);
    if (on_epoch) on_epoch(rep);

    const double score = rep.val ? rep.val->f1 : rep.train->f1;
    const bool stop = stopper.update(score);
    if (stopper.improved_last()) best = model.snapshot();
    if (cfg.stop_at_train_accuracy > 0.0 && rep.train && rep.train->accuracy >= cfg.stop_at_train_accuracy) {
      result.reached_train_target_at = result.updates;
      best = model.snapshot();
      result.best_epoch = epoch;
      result.best_score = score;
      result.stopped_early = epoch < cfg.epochs;
      return result;
    }
    if (stop) {
      result.stopped_early = epoch < cfg.epochs;
      break;
    }
    if (capped || (cfg.max_updates && result.updates >= cfg.max_updates)) break;
  }
  model.restore(best);
  result.best_epoch = stopper.best_epoch();
  result.best_score = stopper.best();
  return result;
}

// ---------------------------------------------------------------------------
// Fold aggregation

struct FoldMetrics {
  std::size_t fold = 0;
  MetricsReport report;
  std::size_t epochs_ran = 0;
};

struct MeanMetrics {
  double acc = 0, pre = 0, rec = 0, f1 = 0, epochs_ran = 0;
};

inline MeanMetrics mean_metrics(const std::vector<FoldMetrics>& folds) {
  MeanMetrics m;
  if (folds.empty()) return m;
  for (const auto& f : folds) {
    m.acc += f.report.accuracy;
    m.pre += f.report.precision;
    m.rec += f.report.recall;
    m.f1 += f.report.f1;
    m.epochs_ran += static_cast<double>(f.epochs_ran);
  }
  const double k = static_cast<double>(folds.size());
  m.acc /= k;
  m.pre /= k;
  m.rec /= k;
  m.f1 /= k;
  m.epochs_ran /= k;
  return m;
}

inline std::string fold_json(const FoldMetrics& f) {
  nlohmann::ordered_json j;
  j["fold"] = f.fold;
  j["acc"] = f.report.accuracy;
  j["pre"] = f.report.precision;
  j["rec"] = f.report.recall;
  j["f1"] = f.report.f1;
  j["epochs_ran"] = f.epochs_ran;
  return j.dump();
}

inline std::string mean_json(const MeanMetrics& m) {
  nlohmann::ordered_json j;
  j["fold"] = "mean";
  j["acc"] = m.acc;
  j["pre"] = m.pre;
  j["rec"] = m.rec;
  j["f1"] = m.f1;
  j["epochs_ran"] = m.epochs_ran;
  return j.dump();
}

// Paired t statistic over per-fold scores (informational).
struct PairedT {
  double t = 0.0;
  std::size_t df = 0;
};

inline PairedT paired_t(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) throw ShapeError("paired_t: need two equal-length samples of size >= 2");
  const std::size_t n = a.size();
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += a[i] - b[i];
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (std::size_t i = 0; i < n; ++i) var += (a[i] - b[i] - mean) * (a[i] - b[i] - mean);
  var /= static_cast<double>(n - 1);
  PairedT r;
  r.df = n - 1;
  r.t = var > 0.0 ? mean / std::sqrt(var / static_cast<double>(n))
                  : (mean == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), mean));
  return r;
}

}  // namespace mdt
