// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "ctxda/classifier.hpp"
#include "ctxda/gradcheck.hpp"
#include "test_support.hpp"

namespace {

using namespace ctxda;
using namespace ctxda::classifier;
using ctxda::testing::TempDir;
using Window = std::vector<std::vector<double>>;

Window random_window(std::size_t len, std::size_t dim, Rng& rng) {
  Window w(len, std::vector<double>(dim));
  for (auto& v : w)
    for (double& x : v) x = rng.uniform(-1, 1);
  return w;
}

template <typename Params>
std::vector<Matrix<double>> grad_copies(const Params& g) {
  std::vector<Matrix<double>> out;
  for (const auto* m : g.tensors()) out.push_back(*m);
  return out;
}

double window_loss(const ContextRNNParams<double>& p, const Window& w, int target) {
  const auto out = rnn_forward(p, w);
  return -std::log(out.distribution[static_cast<std::size_t>(target)]);
}

TEST(ContextRnn, ScalarHandComputedStates) {
  // W_h = I = 1, b = 0, inputs 1 then -1:
  // h1 = sigmoid(1), h2 = sigmoid(h1 - 1).
  auto p = ContextRNNParams<double>::zeros(1, 1, 3);
  p.w_h.fill(1.0);
  p.w_in.fill(1.0);
  const auto out = rnn_forward(p, Window{{1.0}, {-1.0}});
  ASSERT_EQ(out.hidden.size(), 2u);
  EXPECT_NEAR(out.hidden[0][0], 0.7311, 5e-5);
  EXPECT_NEAR(out.hidden[1][0], 0.4332, 5e-5);
  EXPECT_NEAR(out.hidden[1][0], 1.0 / (1.0 + std::exp(1.0 - out.hidden[0][0])), 1e-15);
  // W_out = 0 gives a uniform distribution over the 3 classes.
  for (double q : out.distribution) EXPECT_NEAR(q, 1.0 / 3.0, 1e-15);
}

TEST(ContextRnn, ZeroParamsGiveHalfStatesAndUniformOutput) {
  const auto p = ContextRNNParams<double>::zeros(5, 4);
  Rng rng(1);
  const auto out = rnn_forward(p, random_window(3, 5, rng));
  for (const auto& h : out.hidden)
    for (double v : h) EXPECT_EQ(v, 0.5);
  ASSERT_EQ(out.distribution.size(), 42u);
  for (double q : out.distribution) EXPECT_NEAR(q, 1.0 / 42.0, 1e-15);
}

TEST(ContextRnn, StatesInOpenUnitIntervalAndDistributionNormalized) {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    auto p = ContextRNNParams<double>::initialize(6, 5, rng);
    for (double& v : p.b.values()) v = rng.uniform(-3, 3);
    const auto out = rnn_forward(p, random_window(1 + rng.below(5), 6, rng));
    for (const auto& h : out.hidden) {
      for (double v : h) {
        EXPECT_GT(v, 0.0);
        EXPECT_LT(v, 1.0);
      }
    }
    double sum = 0;
    for (double q : out.distribution) {
      EXPECT_GE(q, 0.0);
      sum += q;
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(ContextRnn, LengthOneIsAFeedForwardLayer) {
  // With no context the recurrent matrix has no effect.
  Rng rng(3);
  auto p = ContextRNNParams<double>::initialize(4, 6, rng);
  const auto w = random_window(1, 4, rng);
  const auto before = rnn_forward(p, w);
  for (double& v : p.w_h.values()) v = rng.uniform(-5, 5);
  const auto after = rnn_forward(p, w);
  EXPECT_EQ(before.distribution, after.distribution);
  for (std::size_t r = 0; r < 6; ++r) {
    double pre = p.b[r];
    for (std::size_t k = 0; k < 4; ++k) pre += p.w_in(r, k) * w[0][k];
    EXPECT_NEAR(after.hidden[0][r], 1.0 / (1.0 + std::exp(-pre)), 1e-15);
  }
  const auto g = rnn_backward(p, w, 7);
  for (double v : g.w_h.values()) EXPECT_EQ(v, 0.0);
}

TEST(ContextRnn, GradientsMatchFiniteDifferences) {
  Rng rng(4);
  for (std::size_t len = 1; len <= 5; ++len) {
    auto p = ContextRNNParams<double>::initialize(6, 8, rng);
    for (double& v : p.b.values()) v = rng.uniform(-0.5, 0.5);
    const auto w = random_window(len, 6, rng);
    const int target = static_cast<int>(rng.below(42));
    const auto analytic = grad_copies(rnn_backward(p, w, target));
    auto params = p.tensors();
    auto loss = [&] { return window_loss(p, w, target); };
    const auto r = finite_difference_check(loss, std::span(params),
                                           std::span<const Matrix<double>>(analytic), rng, 1e-5, 100000);
    EXPECT_LT(r.max_relative_error, 1e-5)
        << "len " << len << " tensor " << r.worst_tensor << " index " << r.worst_index;
  }
}

TEST(ContextRnn, BatchGradientIsMeanOfWindowGradients) {
  Rng rng(5);
  const auto p = ContextRNNParams<double>::initialize(5, 7, rng);
  std::vector<Window> windows;
  std::vector<int> targets;
  for (int b = 0; b < 4; ++b) {
    windows.push_back(random_window(3, 5, rng));
    targets.push_back(static_cast<int>(rng.below(42)));
  }
  Batch<double> batch;
  for (std::size_t t = 0; t < 3; ++t) {
    Matrix<double> step(5, 4);
    for (std::size_t b = 0; b < 4; ++b)
      for (std::size_t k = 0; k < 5; ++k) step(k, b) = windows[b][t][k];
    batch.steps.push_back(step);
  }
  batch.targets = targets;
  auto grads = p.zeros_like();
  const double loss = batch_loss_and_gradients(p, batch, grads);

  double mean_loss = 0;
  auto mean = p.zeros_like();
  for (std::size_t b = 0; b < 4; ++b) {
    mean_loss += window_loss(p, windows[b], targets[b]) / 4;
    const auto g = rnn_backward(p, windows[b], targets[b]);
    auto dst = mean.tensors();
    auto src = g.tensors();
    for (std::size_t k = 0; k < dst.size(); ++k)
      for (std::size_t i = 0; i < dst[k]->size(); ++i) (*dst[k])[i] += (*src[k])[i] / 4;
  }
  EXPECT_NEAR(loss, mean_loss, 1e-12);
  auto got = grads.tensors();
  auto want = mean.tensors();
  for (std::size_t k = 0; k < got.size(); ++k)
    for (std::size_t i = 0; i < got[k]->size(); ++i) EXPECT_NEAR((*got[k])[i], (*want[k])[i], 1e-12);
}

TEST(ContextRnn, SaturatedStatesHaveVanishingGradient) {
  auto p = ContextRNNParams<double>::zeros(2, 3);
  p.w_in.fill(40.0);
  Rng rng(6);
  for (double& v : p.w_out.values()) v = rng.uniform(-1, 1);
  const auto g = rnn_backward(p, Window{{1.0, 1.0}}, 0);
  for (double v : g.w_in.values()) EXPECT_LT(std::abs(v), 1e-6);
  for (double v : g.b.values()) EXPECT_LT(std::abs(v), 1e-6);
}

TEST(ContextRnn, RejectsWrongInputDimAndEmptyWindow) {
  const auto p = ContextRNNParams<double>::zeros(3, 2);
  EXPECT_THROW(rnn_forward(p, Window{{1.0, 2.0}}), ShapeError);
  EXPECT_THROW(rnn_forward(p, Window{}), ShapeError);
  EXPECT_THROW(rnn_backward(p, Window{{1.0, 2.0, 3.0}}, 42), ShapeError);
}

TEST(Mlp, GradientsMatchFiniteDifferences) {
  Rng rng(7);
  auto p = MLPParams<double>::initialize(6, 8, rng);
  for (double& v : p.b1.values()) v = rng.uniform(-0.5, 0.5);
  for (double& v : p.b2.values()) v = rng.uniform(-0.5, 0.5);
  // Context steps are ignored; only the last vector counts.
  const auto w = random_window(3, 6, rng);
  Batch<double> batch{window_steps(std::span<const std::vector<double>>(w)), {11}};
  auto grads = p.zeros_like();
  batch_loss_and_gradients(p, batch, grads);
  const auto analytic = grad_copies(grads);
  auto params = p.tensors();
  auto loss = [&] { return -std::log(mlp_forward(p, w.back())[11]); };
  const auto r = finite_difference_check(loss, std::span(params),
                                         std::span<const Matrix<double>>(analytic), rng, 1e-5, 100000);
  EXPECT_LT(r.max_relative_error, 1e-5);
}

TEST(Mlp, IgnoresContext) {
  Rng rng(8);
  const auto p = MLPParams<double>::initialize(4, 5, rng);
  const auto w = random_window(4, 4, rng);
  EXPECT_EQ(predict(p, w), predict(p, Window{w.back()}));
  const auto q = mlp_forward(p, w.back());
  double sum = 0;
  for (double v : q) sum += v;
  EXPECT_NEAR(sum, 1.0, 1e-12);
}

TEST(Predict, TieGoesToLowestIndex) {
  const auto p = ContextRNNParams<double>::zeros(2, 2);
  EXPECT_EQ(predict(p, Window{{0.3, -0.1}}), 0u);
  auto q = ContextRNNParams<double>::zeros(2, 2);
  q.w_out(9, 0) = 1.0;
  q.w_out(4, 0) = 1.0;
  EXPECT_EQ(predict(q, Window{{0.3, -0.1}}), 4u);
}

TEST(Predict, BatchColumnsMatchSingleWindows) {
  Rng rng(9);
  const auto p = ContextRNNParams<float>::initialize(3, 4, rng);
  std::vector<Matrix<float>> steps(2, Matrix<float>(3, 5));
  for (auto& s : steps)
    for (float& v : s.values()) v = static_cast<float>(rng.uniform(-1, 1));
  const auto probs = batch_probabilities(p, steps);
  for (std::size_t b = 0; b < 5; ++b) {
    std::vector<std::vector<float>> w(2, std::vector<float>(3));
    for (std::size_t t = 0; t < 2; ++t)
      for (std::size_t k = 0; k < 3; ++k) w[t][k] = steps[t](k, b);
    const auto single = rnn_forward(p, w).distribution;
    for (std::size_t c = 0; c < 42; ++c) EXPECT_EQ(probs(c, b), single[c]);
  }
}

SavedClassifier sample_classifier(ModelKind kind) {
  Rng rng(10);
  SavedClassifier c;
  c.config.kind = kind;
  c.config.mode = encoder::VectorMode::kConcat;
  c.config.input_dim = 6;
  c.config.hidden = 5;
  c.config.context = 3;
  c.config.speaker = true;
  c.labels = corpus::TagMapper::standard().vocab();
  if (kind == ModelKind::kRnn) {
    c.params = ContextRNNParams<float>::initialize(6, 5, rng);
  } else {
    c.params = MLPParams<float>::initialize(6, 5, rng);
  }
  return c;
}

TEST(ClassifierFile, RoundTrip) {
  TempDir dir("clf");
  for (auto kind : {ModelKind::kRnn, ModelKind::kMlp}) {
    const auto c = sample_classifier(kind);
    save_classifier(c, dir.file("c.bin"));
    const auto back = load_classifier(dir.file("c.bin"));
    EXPECT_EQ(back.config, c.config);
    EXPECT_EQ(back.labels, c.labels);
    EXPECT_EQ(back.params, c.params);
    EXPECT_EQ(serialize_classifier(back), serialize_classifier(c));
    EXPECT_EQ(ctxda::testing::slurp(dir.file("c.bin")).substr(0, 10), "CTXDA-CLF1");
  }
}

TEST(ClassifierFile, RejectsDamage) {
  TempDir dir("clfbad");
  const auto bytes = serialize_classifier(sample_classifier(ModelKind::kRnn));
  auto magic = bytes;
  magic[0] = 'c';
  ctxda::testing::spit(dir.file("magic.bin"), magic);
  EXPECT_THROW(load_classifier(dir.file("magic.bin")), FormatError);
  ctxda::testing::spit(dir.file("cut.bin"), bytes.substr(0, bytes.size() - 7));
  EXPECT_THROW(load_classifier(dir.file("cut.bin")), FormatError);
  auto kind = bytes;
  kind[10] = 9;
  ctxda::testing::spit(dir.file("kind.bin"), kind);
  EXPECT_THROW(load_classifier(dir.file("kind.bin")), FormatError);
  auto dim = bytes;
  dim[18] = 7;  // input_dim no longer matches the I section
  ctxda::testing::spit(dir.file("dim.bin"), dim);
  EXPECT_THROW(load_classifier(dir.file("dim.bin")), FormatError);
  EXPECT_THROW(load_classifier(dir.file("missing.bin")), FormatError);

  auto mismatched = sample_classifier(ModelKind::kRnn);
  mismatched.config.kind = ModelKind::kMlp;
  EXPECT_THROW(serialize_classifier(mismatched), FormatError);
}

TEST(Kinds, Names) {
  EXPECT_EQ(parse_kind("mlp"), ModelKind::kMlp);
  EXPECT_EQ(kind_name(ModelKind::kRnn), "rnn");
  EXPECT_THROW(parse_kind("lstm"), Error);
}

}  // namespace
