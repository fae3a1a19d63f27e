// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "ctxda/synthetic.hpp"
#include "ctxda/trainer.hpp"
#include "test_support.hpp"

namespace {

using namespace ctxda;
using namespace ctxda::trainer;
using classifier::ContextRNNParams;
using classifier::MLPParams;
using corpus::Dataset;
using corpus::Split;

/// One conversation per window, two classes separated by the sign of the
/// first coordinate.
struct Toy {
  Dataset ds;
  Matrix<float> vectors;
};

Toy separable_toy(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Toy toy;
  toy.ds.labels = corpus::TagMapper::standard().vocab();
  toy.vectors = Matrix<float>(n, 4);
  for (std::size_t i = 0; i < n; ++i) {
    corpus::Utterance u;
    u.conversation_id = "c" + std::to_string(i);
    u.label = static_cast<int>(i % 2);
    u.speaker = corpus::Speaker::A;
    toy.ds.conversations.push_back({u.conversation_id, {u}});
    toy.ds.splits.push_back(Split::kTrain);
    toy.vectors(i, 0) = u.label == 0 ? 1.0f : -1.0f;
    for (std::size_t k = 1; k < 4; ++k) toy.vectors(i, k) = static_cast<float>(rng.uniform(-0.2, 0.2));
  }
  return toy;
}

/// Conversations whose utterance vectors are a one-hot of their own label,
/// and a hand-set RNN that reads the label straight off the input.
struct Oracle {
  Dataset ds;
  Matrix<float> vectors;
  ContextRNNParams<float> params;
};

Oracle label_oracle() {
  Oracle o;
  const auto parsed = corpus::parse_corpus(ctxda::testing::fixture("sw_tiny.csv"));
  o.ds.labels = corpus::TagMapper::standard().vocab();
  o.ds.conversations = parsed.conversations;
  o.ds.splits = corpus::assign_splits(o.ds.conversations, {"2121"});
  o.vectors = Matrix<float>(o.ds.utterance_count(), 42);
  std::size_t r = 0;
  for (const auto& c : o.ds.conversations)
    for (const auto& u : c.utterances) o.vectors(r++, static_cast<std::size_t>(u.label)) = 1.0f;
  o.params = ContextRNNParams<float>::zeros(42, 42);
  for (std::size_t k = 0; k < 42; ++k) {
    o.params.w_in(k, k) = 10.0f;
    o.params.b[k] = -5.0f;
    o.params.w_out(k, k) = 10.0f;
  }
  return o;
}

TEST(Examples, SpeakerOneHotOnEveryStep) {
  const auto o = label_oracle();
  const auto ex = Examples::from(o.ds, o.vectors, true);
  EXPECT_EQ(ex.input_dim(), 44u);
  const auto windows = o.ds.windows(Split::kTrain, 2);
  const auto& w = windows[3];  // utterances 1..3 of the first conversation: A, B, A
  const auto b = ex.batch<float>(std::span<const ContextWindow>(&w, 1));
  ASSERT_EQ(b.steps.size(), 3u);
  const float want_a[] = {1, 0, 1};
  for (std::size_t t = 0; t < 3; ++t) {
    EXPECT_EQ(b.steps[t](42, 0), want_a[t]);
    EXPECT_EQ(b.steps[t](43, 0), 1.0f - want_a[t]);
    const auto& u = o.ds.conversations[0].utterances[1 + t];
    EXPECT_EQ(b.steps[t](static_cast<std::size_t>(u.label), 0), 1.0f);
  }
  EXPECT_EQ(b.targets, std::vector<int>{w.label});
  EXPECT_THROW(Examples::from(o.ds, Matrix<float>(3, 42), false), ShapeError);
}

TEST(Batches, CoverEveryWindowOnceWithUniformLength) {
  Rng rng(1);
  Dataset ds;
  ds.labels = corpus::TagMapper::standard().vocab();
  for (int c = 0; c < 20; ++c) {
    corpus::Conversation conv{"c" + std::to_string(c), {}};
    for (std::uint64_t t = 0, n = 1 + rng.below(9); t < n; ++t) {
      corpus::Utterance u;
      u.index = t;
      conv.utterances.push_back(u);
    }
    ds.conversations.push_back(conv);
    ds.splits.push_back(Split::kTrain);
  }
  const auto windows = ds.windows(Split::kTrain, 3);
  const auto batches = detail::make_batches(windows, 5, rng);
  std::multiset<std::pair<std::size_t, std::size_t>> seen;
  for (const auto& b : batches) {
    ASSERT_FALSE(b.empty());
    EXPECT_LE(b.size(), 5u);
    for (const auto& w : b) {
      EXPECT_EQ(w.length(), b.front().length());
      seen.insert({w.conversation, w.end});
    }
  }
  EXPECT_EQ(seen.size(), windows.size());
  EXPECT_EQ(std::set(seen.begin(), seen.end()).size(), windows.size());
}

TrainConfig toy_config() {
  TrainConfig cfg;
  cfg.hidden = 8;
  cfg.seed = 3;
  return cfg;
}

TEST(Train, OverfitsSeparableToy) {
  // Default lr 1e-4 moves too little in 500 single-batch epochs; 1e-2 is
  // used here so the check is about the optimizer, not the schedule.
  const auto toy = separable_toy(8, 2);
  const auto ex = Examples::from(toy.ds, toy.vectors, false);
  const auto windows = toy.ds.windows(Split::kTrain, 0);
  auto cfg = toy_config();
  cfg.learning_rate = 1e-2;
  cfg.max_epochs = 500;
  cfg.patience = 500;
  const auto out = train_classifier<ContextRNNParams<float>>(ex, windows, cfg);
  EXPECT_EQ(evaluate(out.params, ex, std::span<const ContextWindow>(windows)).accuracy, 1.0);
  EXPECT_LT(out.log.back().train_loss, out.log.front().train_loss);

  cfg.kind = ModelKind::kMlp;
  const auto mlp = train_classifier<MLPParams<float>>(ex, windows, cfg);
  EXPECT_EQ(evaluate(mlp.params, ex, std::span<const ContextWindow>(windows)).accuracy, 1.0);
}

TEST(Train, LearningRateDecaysLinearly) {
  const auto toy = separable_toy(10, 4);
  const auto ex = Examples::from(toy.ds, toy.vectors, false);
  auto cfg = toy_config();
  cfg.learning_rate = 1e-3;
  cfg.max_epochs = 8;
  cfg.patience = 100;
  const auto out = train_classifier<ContextRNNParams<float>>(ex, toy.ds.windows(Split::kTrain, 0), cfg);
  ASSERT_EQ(out.log.size(), 8u);
  for (std::size_t e = 0; e < 8; ++e) {
    EXPECT_EQ(out.log[e].epoch, e);
    EXPECT_NEAR(out.log[e].lr, 1e-3 * (1.0 - static_cast<double>(e) / 8.0), 1e-15);
  }
  EXPECT_EQ(cfg.learning_rate_at(8), 0.0);
}

/// Epochs an early-stopping rule with this patience runs, replayed from
/// the logged validation losses.
std::size_t replay_stop(const std::vector<EpochLog>& log, std::size_t patience, std::size_t max_epochs) {
  double best = INFINITY;
  std::size_t stale = 0;
  for (std::size_t e = 0; e < max_epochs && e < log.size(); ++e) {
    if (log[e].val_loss < best) {
      best = log[e].val_loss;
      stale = 0;
    } else if (++stale >= std::max<std::size_t>(patience, 1)) {
      return e + 1;
    }
  }
  return std::min(max_epochs, log.size());
}

TEST(Train, EarlyStoppingAndBestCheckpoint) {
  // Pure-noise labels and inputs: validation loss turns upward once
  // training starts memorizing.
  auto toy = separable_toy(40, 5);
  Rng noise(50);
  for (auto& c : toy.ds.conversations) c.utterances[0].label = static_cast<int>(noise.below(2));
  for (float& v : toy.vectors.values()) v = static_cast<float>(noise.uniform(-2, 2));
  const auto ex = Examples::from(toy.ds, toy.vectors, false);
  const auto windows = toy.ds.windows(Split::kTrain, 0);
  for (std::size_t patience : {0u, 1u, 3u}) {
    auto cfg = toy_config();
    cfg.learning_rate = 0.05;  // large enough to overshoot and trigger stopping
    cfg.max_epochs = 60;
    cfg.patience = patience;
    const auto out = train_classifier<ContextRNNParams<float>>(ex, windows, cfg);
    // The full-length reference log tells where the rule must stop.
    auto full_cfg = cfg;
    full_cfg.patience = 1000;
    const auto full = train_classifier<ContextRNNParams<float>>(ex, windows, full_cfg);
    EXPECT_EQ(out.log.size(), replay_stop(full.log, patience, cfg.max_epochs)) << patience;
    if (patience == 0) {
      EXPECT_LT(out.log.size(), cfg.max_epochs);
    }
    for (std::size_t e = 0; e < out.log.size(); ++e) EXPECT_EQ(out.log[e].val_loss, full.log[e].val_loss);

    const auto best = std::min_element(out.log.begin(), out.log.end(),
                                       [](const EpochLog& a, const EpochLog& b) {
                                         return a.val_loss < b.val_loss;
                                       });
    EXPECT_EQ(out.best_epoch, static_cast<std::size_t>(best - out.log.begin()));
    EXPECT_EQ(out.best_val_loss, best->val_loss);
    for (std::size_t e = 0; e < out.log.size(); ++e) EXPECT_GE(out.log[e].val_loss, out.best_val_loss);
  }
}

TEST(Train, SameSeedIsReproducible) {
  const auto toy = separable_toy(20, 6);
  const auto ex = Examples::from(toy.ds, toy.vectors, true);
  const auto windows = toy.ds.windows(Split::kTrain, 0);
  auto cfg = toy_config();
  cfg.max_epochs = 5;
  const auto a = train_classifier<ContextRNNParams<float>>(ex, windows, cfg);
  const auto b = train_classifier<ContextRNNParams<float>>(ex, windows, cfg);
  EXPECT_EQ(a.params, b.params);
  EXPECT_EQ(format_log(a.log), format_log(b.log));
  cfg.seed = 4;
  EXPECT_FALSE(train_classifier<ContextRNNParams<float>>(ex, windows, cfg).params == a.params);
}

TEST(Train, WarnsOnSingleClassAndRejectsBadConfig) {
  auto toy = separable_toy(6, 7);
  for (auto& c : toy.ds.conversations) c.utterances[0].label = 5;
  const auto ex = Examples::from(toy.ds, toy.vectors, false);
  auto cfg = toy_config();
  cfg.max_epochs = 2;
  const auto out = train_classifier<ContextRNNParams<float>>(ex, toy.ds.windows(Split::kTrain, 0), cfg);
  ASSERT_FALSE(out.warnings.empty());
  EXPECT_NE(out.warnings[0].find("one label"), std::string::npos);

  cfg.validation_fraction = 1.0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = toy_config();
  cfg.learning_rate = 0;
  EXPECT_THROW(cfg.validate(), Error);
  EXPECT_THROW(train_classifier<ContextRNNParams<float>>(ex, {}, toy_config()), Error);
}

TEST(Evaluate, HandSetOracleIsPerfect) {
  const auto o = label_oracle();
  const auto ex = Examples::from(o.ds, o.vectors, false);
  for (std::size_t n : {0u, 2u}) {
    for (Split s : {Split::kTrain, Split::kTest}) {
      const auto windows = o.ds.windows(s, n);
      const auto r = evaluate(o.params, ex, std::span<const ContextWindow>(windows));
      EXPECT_EQ(r.accuracy, 1.0);
      EXPECT_EQ(r.total, windows.size());
      std::size_t sum = 0, diag = 0;
      for (std::size_t i = 0; i < 42; ++i) {
        for (std::size_t j = 0; j < 42; ++j) sum += r.at(i, j);
        diag += r.at(i, i);
      }
      EXPECT_EQ(sum, r.total);
      EXPECT_EQ(diag, r.correct);
    }
  }
}

TEST(Evaluate, ConfusionCountsMistakes) {
  auto o = label_oracle();
  // Swap the outputs of "qw" and "sd".
  const auto& v = o.ds.labels;
  const auto qw = static_cast<std::size_t>(v.index("qw")), sd = static_cast<std::size_t>(v.index("sd"));
  o.params.w_out(qw, qw) = 0;
  o.params.w_out(sd, sd) = 0;
  o.params.w_out(qw, sd) = 10;
  o.params.w_out(sd, qw) = 10;
  const auto ex = Examples::from(o.ds, o.vectors, false);
  const auto windows = o.ds.windows(Split::kTrain, 0);  // other qw sd qw qy^d b
  const auto r = evaluate(o.params, ex, std::span<const ContextWindow>(windows));
  EXPECT_EQ(r.correct, 3u);
  EXPECT_EQ(r.at(qw, sd), 2u);
  EXPECT_EQ(r.at(sd, qw), 1u);
  EXPECT_DOUBLE_EQ(r.accuracy, 0.5);
}

TEST(Evaluate, SavedClassifierNeedsSameVocabulary) {
  const auto o = label_oracle();
  const auto ex = Examples::from(o.ds, o.vectors, false);
  classifier::SavedClassifier clf;
  clf.config.input_dim = 42;
  clf.config.hidden = 42;
  clf.labels = o.ds.labels;
  clf.params = o.params;
  const auto windows = o.ds.windows(Split::kTest, 1);
  EXPECT_EQ(evaluate(clf, o.ds.labels, ex, std::span<const ContextWindow>(windows)).accuracy, 1.0);
  auto labels = o.ds.labels.labels();
  std::swap(labels[0], labels[1]);
  EXPECT_THROW(evaluate(clf, corpus::LabelVocab(labels), ex, std::span<const ContextWindow>(windows)),
               Error);
}

TEST(Baseline, MajorityExamples) {
  const std::vector<int> train{0, 0, 1}, test{0, 1};
  EXPECT_DOUBLE_EQ(majority_baseline(train, test), 0.5);
  const std::vector<int> one{3, 3}, one_test{3};
  EXPECT_DOUBLE_EQ(majority_baseline(one, one_test), 1.0);
  const std::vector<int> tie{4, 2};
  EXPECT_EQ(majority_label(tie, 42), 2);
  EXPECT_THROW(majority_baseline(std::vector<int>{}, test), Error);
}

TEST(Stats, SampleStandardDeviation) {
  const std::vector<double> two{0.5, 0.7};
  const auto [m, sd] = mean_and_sd(two);
  EXPECT_DOUBLE_EQ(m, 0.6);
  EXPECT_NEAR(sd, 0.1414, 5e-5);
  EXPECT_NEAR(sd, std::sqrt(0.02), 1e-15);
  const std::vector<double> single{0.3};
  EXPECT_EQ(mean_and_sd(single).second, 0.0);
}

TEST(Experiment, RepeatedRunsAndReport) {
  corpus::SyntheticConfig sc;
  sc.conversations = 40;
  sc.seed = 8;
  const auto ds = corpus::generate_synthetic(sc);
  // Vector = one-hot of the keyword, so context 1 decides the label.
  Matrix<float> vectors(ds.utterance_count(), corpus::kSyntheticKeywords.size());
  std::size_t r = 0;
  for (const auto& c : ds.conversations) {
    for (const auto& u : c.utterances) {
      for (std::size_t k = 0; k < corpus::kSyntheticKeywords.size(); ++k) {
        if (u.clean_text.find(corpus::kSyntheticKeywords[k].word) != std::string::npos) vectors(r, k) = 1;
      }
      ++r;
    }
  }
  auto cfg = toy_config();
  cfg.context = 1;
  cfg.max_epochs = 4;
  const auto one = run_experiment(ds, vectors, cfg, 3, 1);
  const auto many = run_experiment(ds, vectors, cfg, 3, 3);
  EXPECT_EQ(one.accuracies, many.accuracies);
  ASSERT_EQ(one.accuracies.size(), 3u);
  const auto [m, sd] = mean_and_sd(one.accuracies);
  EXPECT_EQ(one.mean, m);
  EXPECT_EQ(one.sd, sd);
  for (double a : one.accuracies) {
    EXPECT_GE(a, 0.0);
    EXPECT_LE(a, 1.0);
  }
  // Run r uses seed + r.
  auto c1 = cfg;
  c1.seed = cfg.seed + 1;
  EXPECT_EQ(run_experiment(ds, vectors, c1, 1).accuracies[0], one.accuracies[1]);

  const auto text = format_report({{setup_name(cfg), 100 * one.mean, 100 * one.sd, true}}, "test");
  std::size_t rows = 0;
  for (std::size_t p = 0; (p = text.find('\n', p)) != std::string::npos; ++p) ++rows;
  EXPECT_EQ(rows, 4u);  // 2 comments, column header, one row
  EXPECT_NE(text.find("RNN (1 utt. in context)"), std::string::npos);
}

TEST(Experiment, SetupNames) {
  TrainConfig c;
  EXPECT_EQ(setup_name(c), "RNN (without context)");
  c.context = 3;
  c.speaker = true;
  EXPECT_EQ(setup_name(c), "RNN (3 utts. in context) w. SpeakerID");
  c.kind = ModelKind::kMlp;
  c.speaker = false;
  EXPECT_EQ(setup_name(c), "MLP (without context)");
}

}  // namespace
