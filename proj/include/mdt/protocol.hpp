#pragma once

// Stratified k-fold protocol over discussions: per fold, carve a validation
// share out of the training folds, fit the vocabulary on the training part
// only, train with early stopping and score the held-out fold.

#include <functional>
#include <string>
#include <vector>

#include "mdt/data_io.hpp"
#include "mdt/model.hpp"
#include "mdt/training.hpp"

namespace mdt {

struct FoldPlan {
  std::size_t fold = 0;
  std::vector<std::size_t> train, val, test;  // discussion indices
  bool test_is_train = false;                 // folds == 1: no held-out part
};

// folds == 1 trains on every discussion and reports training-set metrics.
inline std::vector<FoldPlan> plan_folds(const Dataset& ds, const TrainConfig& cfg) {
  std::vector<FoldPlan> plans;
  std::vector<std::size_t> all(ds.discussions.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  if (cfg.folds == 1) {
    FoldPlan p;
    std::tie(p.train, p.val) = split_validation(all, cfg.val_fraction, cfg.seed);
    p.test = p.train;
    p.test_is_train = true;
    plans.push_back(std::move(p));
    return plans;
  }
  const auto folds = stratified_kfold(discussion_strata(ds), cfg.folds, cfg.seed);
  for (std::size_t f = 0; f < folds.size(); ++f) {
    FoldPlan p;
    p.fold = f;
    p.test = folds[f];
    std::vector<std::size_t> pool;
    for (std::size_t g = 0; g < folds.size(); ++g)
      if (g != f) pool.insert(pool.end(), folds[g].begin(), folds[g].end());
    std::sort(pool.begin(), pool.end());
    std::tie(p.train, p.val) = split_validation(pool, cfg.val_fraction, hash_combine(cfg.seed, f));
    plans.push_back(std::move(p));
  }
  return plans;
}

inline std::vector<DiscussionInput> make_inputs(const Dataset& ds, const std::vector<std::size_t>& which,
                                                const Tokenizer& tok, const ModelConfig& cfg) {
  std::vector<DiscussionInput> out;
  out.reserve(which.size());
  for (auto i : which) out.push_back(make_input(ds.discussions[i], tok, cfg));
  return out;
}

struct FoldOutcome {
  FoldPlan plan;
  Tokenizer tokenizer;
  ModelConfig model_config;  // vocab_size resolved from the tokenizer
  TrainResult result;
  MetricsReport test;
  FoldMetrics metrics() const { return {plan.fold, test, result.epochs.size()}; }
};

struct ProtocolHooks {
  std::size_t run_folds = 0;  // 0 runs every fold
  std::function<void(std::size_t fold, const EpochReport&)> on_epoch;
  std::function<void(const FoldOutcome&, const MdtModel<float>&)> on_fold;
};

inline std::vector<FoldOutcome> cross_validate(const Dataset& ds, ModelConfig model_cfg, const TrainConfig& cfg,
                                               const ProtocolHooks& hooks = {}) {
  cfg.validate();
  auto plans = plan_folds(ds, cfg);
  if (hooks.run_folds && hooks.run_folds < plans.size()) plans.resize(hooks.run_folds);
  std::vector<FoldOutcome> out;
  for (auto& plan : plans) {
    FoldOutcome o;
    o.tokenizer = Tokenizer::build(dataset_texts(ds, plan.train), cfg.max_vocab, cfg.min_count);
    o.model_config = model_cfg;
    o.model_config.vocab_size = o.tokenizer.vocab_size();
    const auto train_set = make_inputs(ds, plan.train, o.tokenizer, o.model_config);
    const auto val_set = make_inputs(ds, plan.val, o.tokenizer, o.model_config);
    MdtModel<float> model(o.model_config);
    const std::size_t fold = plan.fold;
    o.result = train(model, train_set, val_set, cfg, [&](const EpochReport& r) {
      if (hooks.on_epoch) hooks.on_epoch(fold, r);
    });
    o.test = plan.test_is_train ? evaluate(model, train_set)
                                : evaluate(model, make_inputs(ds, plan.test, o.tokenizer, o.model_config));
    o.plan = std::move(plan);
    if (hooks.on_fold) hooks.on_fold(o, model);
    out.push_back(std::move(o));
  }
  return out;
}

}  // namespace mdt
