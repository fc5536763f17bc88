#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"

namespace mdt {
namespace {

TEST(WeightedCe, Examples) {
  const std::vector<double> w{1.0, 1.5};
  const std::vector<double> uniform{0.0, 0.0}, confident{10.0, -10.0};
  EXPECT_NEAR(weighted_ce(uniform, 1, w), 1.0397207708399179, 1e-12);
  EXPECT_NEAR(weighted_ce(uniform, 0, w), 0.6931471805599453, 1e-12);
  EXPECT_NEAR(weighted_ce(confident, 0, w), std::log1p(std::exp(-20.0)), 1e-22);
  EXPECT_NEAR(weighted_ce(confident, 0, w), 2e-9, 1e-10);
  const std::vector<double> bad{NAN, 0.0};
  EXPECT_THROW(weighted_ce(bad, 0, w), NumericError);
}

std::vector<std::size_t> fold_counts(const FoldSplit& f, const std::vector<int>& labels, int cls) {
  std::vector<std::size_t> out;
  for (const auto& fold : f)
    out.push_back(static_cast<std::size_t>(std::count_if(fold.begin(), fold.end(), [&](auto i) { return labels[i] == cls; })));
  return out;
}

TEST(StratifiedKFold, ExactDivisibility) {
  std::vector<int> labels(14);
  for (std::size_t i = 0; i < 7; ++i) labels[i] = 1;
  auto f = stratified_kfold(labels, 7, 1);
  EXPECT_EQ(fold_counts(f, labels, 0), std::vector<std::size_t>(7, 1));
  EXPECT_EQ(fold_counts(f, labels, 1), std::vector<std::size_t>(7, 1));
}

TEST(StratifiedKFold, PartitionOfIndexSet) {
  Rng rng(3);
  std::vector<int> labels(123);
  for (auto& l : labels) l = rng.bernoulli(0.4) ? 1 : 0;
  auto f = stratified_kfold(labels, 7, 1);
  std::vector<int> seen(labels.size(), 0);
  for (const auto& fold : f)
    for (auto i : fold) ++seen[i];
  EXPECT_EQ(seen, std::vector<int>(labels.size(), 1));
}

TEST(StratifiedKFold, ThirtyPercentPositive) {
  std::vector<int> labels(100, 0);
  for (std::size_t i = 0; i < 30; ++i) labels[i * 3] = 1;
  auto f = stratified_kfold(labels, 7, 1);
  // 70 negatives deal 10 per fold, so the positives start at fold 0: 5, 5, 4, 4, 4, 4, 4.
  EXPECT_EQ(fold_counts(f, labels, 1), (std::vector<std::size_t>{5, 5, 4, 4, 4, 4, 4}));
  EXPECT_EQ(fold_counts(f, labels, 0), std::vector<std::size_t>(7, 10));
}

TEST(StratifiedKFold, ProportionsWithinOneExample) {
  Rng rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 20 + rng.below(200), k = 2 + rng.below(8);
    std::vector<int> labels(n);
    for (auto& l : labels) l = rng.bernoulli(0.35) ? 1 : 0;
    const auto pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
    if (pos < k || n - pos < k) continue;
    auto f = stratified_kfold(labels, k, 1);
    for (int c : {0, 1}) {
      const double global = static_cast<double>(c ? pos : n - pos) / static_cast<double>(k);
      for (auto cnt : fold_counts(f, labels, c)) EXPECT_LE(std::abs(static_cast<double>(cnt) - global), 1.0);
    }
  }
}

TEST(StratifiedKFold, DeterministicAndSeedSensitive) {
  std::vector<int> labels(60);
  for (std::size_t i = 0; i < 60; ++i) labels[i] = i % 4 == 0;
  EXPECT_EQ(stratified_kfold(labels, 7, 1), stratified_kfold(labels, 7, 1));
  EXPECT_NE(stratified_kfold(labels, 7, 1), stratified_kfold(labels, 7, 2));
}

TEST(StratifiedKFold, TooFewExamplesOfAClass) {
  std::vector<int> labels(20, 0);
  for (std::size_t i = 0; i < 6; ++i) labels[i] = 1;
  EXPECT_THROW(stratified_kfold(labels, 7, 1), DataError);
}

TEST(Metrics, PerfectPrediction) {
  auto r = metrics({1, 0, 1, 1}, {1, 0, 1, 1});
  EXPECT_EQ(r.accuracy, 1.0);
  EXPECT_EQ(r.precision, 1.0);
  EXPECT_EQ(r.recall, 1.0);
  EXPECT_EQ(r.f1, 1.0);
}

TEST(Metrics, WorkedExample) {
  auto r = metrics({1, 1, 0, 0}, {1, 0, 0, 0});
  EXPECT_EQ(r.accuracy, 0.75);
  EXPECT_NEAR(r.f1, (2.0 / 3.0 + 0.8) / 2.0, 1e-15);
  EXPECT_EQ(r.confusion[1][0], 1u);
  EXPECT_EQ(r.confusion[0][0], 2u);
}

TEST(Metrics, DegenerateClassExcluded) {
  auto r = metrics({0, 0, 0}, {0, 0, 0});
  EXPECT_EQ(r.accuracy, 1.0);
  EXPECT_EQ(r.f1, 1.0);
  EXPECT_EQ(r.per_class[1].support, 0u);
  EXPECT_TRUE(r.per_class[1].no_predictions);

  auto z = metrics({0, 1, 1}, {0, 0, 0});
  EXPECT_TRUE(z.per_class[1].no_predictions);
  EXPECT_EQ(z.per_class[1].precision, 0.0);
}

TEST(Metrics, LengthMismatch) {
  EXPECT_THROW(metrics({0, 1}, {0}), ShapeError);
  EXPECT_THROW(metrics({}, {}), ShapeError);
}

// Reference built from raw tp/fp/fn counts.
std::array<double, 3> reference_weighted(const std::vector<int>& t, const std::vector<int>& p) {
  std::array<double, 3> out{0, 0, 0};
  for (int c : {0, 1}) {
    double tp = 0, fp = 0, fn = 0, support = 0;
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (t[i] == c && p[i] == c) ++tp;
      if (t[i] != c && p[i] == c) ++fp;
      if (t[i] == c && p[i] != c) ++fn;
      if (t[i] == c) ++support;
    }
    const double prec = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    const double rec = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    const double f1 = tp > 0 ? 2 * tp / (2 * tp + fp + fn) : 0.0;
    const double w = support / static_cast<double>(t.size());
    out[0] += w * prec;
    out[1] += w * rec;
    out[2] += w * f1;
  }
  return out;
}

TEST(Metrics, MatchesConfusionReference) {
  Rng rng(77);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.below(60);
    std::vector<int> t(n), p(n);
    const double bias = rng.uniform();
    for (std::size_t i = 0; i < n; ++i) {
      t[i] = rng.bernoulli(bias) ? 1 : 0;
      p[i] = rng.bernoulli(0.5) ? t[i] : 1 - t[i];
    }
    const auto r = metrics(t, p);
    const auto ref = reference_weighted(t, p);
    EXPECT_NEAR(r.precision, ref[0], 1e-12);
    EXPECT_NEAR(r.recall, ref[1], 1e-12);
    EXPECT_NEAR(r.f1, ref[2], 1e-12);
  }
}

TEST(EarlyStopping, PatienceArithmetic) {
  EarlyStopping s(2);
  const std::vector<double> f1{0.5, 0.6, 0.55, 0.58};
  std::size_t stopped_at = 0;
  for (std::size_t e = 0; e < f1.size(); ++e)
    if (s.update(f1[e])) {
      stopped_at = e + 1;
      break;
    }
  EXPECT_EQ(stopped_at, 4u);
  EXPECT_EQ(s.best_epoch(), 2u);
}

TEST(EarlyStopping, BestNeverBelowEarlierEpoch) {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    EarlyStopping s(1 + rng.below(4));
    std::vector<double> seen;
    for (int e = 0; e < 15; ++e) {
      seen.push_back(rng.uniform());
      const bool stop = s.update(seen.back());
      const double best = seen[s.best_epoch() - 1];
      for (double v : seen) EXPECT_GE(best, v);
      if (stop) break;
    }
  }
}

struct SmallData {
  ModelConfig cfg;
  Tokenizer tok;
  std::vector<DiscussionInput> inputs;
};

SmallData small_synthetic(std::size_t discussions) {
  SynthConfig sc;
  sc.discussions = discussions;
  sc.image_size = 4;
  sc.marker_size = 2;
  sc.max_comments = 6;
  auto out = synth_generate(sc);
  auto dir = testing::scratch_dir("train_small_" + std::to_string(discussions));
  auto ds = load_dataset(write_synth(out, dir));
  SmallData d;
  d.tok = Tokenizer::build(dataset_texts(ds, [&] {
    std::vector<std::size_t> all(ds.discussions.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return all;
  }()));
  d.cfg = testing::tiny_config();
  d.cfg.vocab_size = d.tok.vocab_size();
  d.cfg.attention_dropout = d.cfg.activation_dropout = 0.1;
  d.cfg.graph_dropout = 0.1;
  for (const auto& x : ds.discussions) d.inputs.push_back(make_input(x, d.tok, d.cfg));
  return d;
}

TrainConfig quick_train() {
  TrainConfig t;
  t.batch_size = 8;
  t.epochs = 3;
  t.schedule.peak_lr = 1e-3;
  t.schedule.end_lr = 1e-5;
  t.schedule.warmup_updates = 5;
  t.schedule.total_updates = 50;
  return t;
}

TEST(Batches, WholeDiscussionsReachingBudget) {
  auto d = small_synthetic(12);
  std::vector<std::size_t> order(d.inputs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  auto batches = make_batches(order, d.inputs, 8);
  std::vector<std::size_t> flat;
  for (std::size_t b = 0; b < batches.size(); ++b) {
    std::size_t labeled = 0;
    for (auto i : batches[b]) {
      labeled += d.inputs[i].labeled();
      flat.push_back(i);
    }
    if (b + 1 < batches.size()) EXPECT_GE(labeled, 8u);
  }
  EXPECT_EQ(flat, order);
}

TEST(Train, IdenticalRunsGiveBitwiseEqualTrajectories) {
  auto d = small_synthetic(10);
  auto run = [&] {
    MdtModel<float> model(d.cfg);
    auto r = train(model, {d.inputs.begin(), d.inputs.begin() + 8}, {d.inputs.begin() + 8, d.inputs.end()}, quick_train());
    std::vector<double> losses;
    for (const auto& e : r.epochs) losses.push_back(e.mean_loss);
    return std::make_pair(losses, model.snapshot());
  };
  auto a = run(), b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
}

TEST(Train, RestoresBestValidationEpoch) {
  auto d = small_synthetic(12);
  MdtModel<float> model(d.cfg);
  std::vector<DiscussionInput> tr(d.inputs.begin(), d.inputs.begin() + 9), val(d.inputs.begin() + 9, d.inputs.end());
  auto cfg = quick_train();
  cfg.epochs = 5;
  auto r = train(model, tr, val, cfg);
  ASSERT_GE(r.best_epoch, 1u);
  EXPECT_EQ(evaluate(model, val).f1, r.best_score);
  for (std::size_t e = 0; e < r.best_epoch - 1; ++e) EXPECT_LE(r.epochs[e].val->f1, r.best_score);
}

TEST(Train, MaxUpdatesCapsTheRun) {
  auto d = small_synthetic(10);
  MdtModel<float> model(d.cfg);
  auto cfg = quick_train();
  cfg.max_updates = 2;
  cfg.epochs = 10;
  auto r = train(model, d.inputs, {}, cfg);
  EXPECT_EQ(r.updates, 2u);
}

TEST(Train, NonFiniteLossNamesBatch) {
  auto d = small_synthetic(6);
  MdtModel<float> model(d.cfg);
  model.param("head.text.b").mutable_data()[0] = NAN;
  try {
    train(model, d.inputs, {}, quick_train());
    FAIL();
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("batch discussions: d00"), std::string::npos) << msg;
  }
}

TEST(Train, UnlabeledCommentsAddContextButNoLoss) {
  auto cfg = testing::tiny_config();
  MdtModel<double> model(cfg);
  const auto tok = testing::tiny_tokenizer();
  const std::vector<double> w{1.0, 1.5};
  auto labeled_only = [&](const Tensor<double>& logits, const DiscussionInput& in) {
    double s = 0;
    for (std::size_t c = 0; c < in.size(); ++c)
      if (in.targets[c] >= 0) s += weighted_ce(std::vector<double>{logits.at(c, 0), logits.at(c, 1)}, in.targets[c], w);
    return s;
  };

  auto recs = testing::sample_tree_records();
  auto in = make_input(testing::make_discussion("f", recs), tok, cfg);
  auto logits = model.forward(in);
  EXPECT_NEAR(weighted_cross_entropy_sum(logits, in.targets, w).item(), labeled_only(logits, in), 1e-12);

  // An extra unlabeled reply moves its neighbours' logits but adds no loss term.
  recs.push_back(testing::record("u", "x", "ctx ctx"));
  auto with_u = make_input(testing::make_discussion("f", recs), tok, cfg);
  auto l2 = model.forward(with_u);
  double moved = 0;
  for (std::size_t c = 0; c < in.size(); ++c) {
    const auto k = static_cast<std::size_t>(
        std::find(with_u.comment_ids.begin(), with_u.comment_ids.end(), in.comment_ids[c]) - with_u.comment_ids.begin());
    moved += std::abs(l2.at(k, 1) - logits.at(c, 1));
  }
  EXPECT_GT(moved, 1e-9);
  EXPECT_NEAR(weighted_cross_entropy_sum(l2, with_u.targets, w).item(), labeled_only(l2, with_u), 1e-12);
}

TEST(SplitValidation, DeterministicDisjointCarveOut) {
  std::vector<std::size_t> pool(50);
  for (std::size_t i = 0; i < 50; ++i) pool[i] = i * 2;
  auto [tr, val] = split_validation(pool, 0.1, 9);
  EXPECT_EQ(val.size(), 5u);
  EXPECT_EQ(tr.size(), 45u);
  auto again = split_validation(pool, 0.1, 9);
  EXPECT_EQ(again.second, val);
  for (auto v : val) EXPECT_EQ(std::count(tr.begin(), tr.end(), v), 0);
}

TEST(PairedT, KnownValue) {
  // Differences 1, 2, 3: mean 2, sd 1, t = 2 / (1 / sqrt(3)).
  auto r = paired_t({2, 4, 6}, {1, 2, 3});
  EXPECT_NEAR(r.t, 2.0 * std::sqrt(3.0), 1e-12);
  EXPECT_EQ(r.df, 2u);
}

TEST(FoldJson, FieldOrderAndMeanRow) {
  FoldMetrics f{3, metrics({1, 1, 0, 0}, {1, 0, 0, 0}), 4};
  EXPECT_EQ(fold_json(f).rfind(R"({"fold":3,"acc":0.75,"pre":)", 0), 0u);
  auto m = mean_metrics({f, f});
  EXPECT_EQ(m.acc, 0.75);
  EXPECT_NE(mean_json(m).find(R"("fold":"mean")"), std::string::npos);
  EXPECT_NE(mean_json(m).find(R"("epochs_ran":4.0)"), std::string::npos);
}

}  // namespace
}  // namespace mdt
