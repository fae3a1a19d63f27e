// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <string>
#include <vector>

#include "ctxda/charlm.hpp"
#include "ctxda/gradcheck.hpp"
#include "test_support.hpp"

namespace {

using namespace ctxda;
using namespace ctxda::charlm;
using ctxda::testing::TempDir;

std::vector<std::uint8_t> bytes_of(std::string_view s) { return {s.begin(), s.end()}; }

CharLMParams<double> random_params(std::size_t d, std::size_t e, std::uint64_t seed) {
  Rng rng(seed);
  auto p = CharLMParams<double>::initialize(d, e, rng);
  // The output projection starts at zero; give it values so every other
  // tensor receives gradient.
  for (double& v : p.w_out.values()) v = rng.uniform(-0.5, 0.5);
  for (double& v : p.b_out.values()) v = rng.uniform(-0.5, 0.5);
  return p;
}

std::vector<Matrix<double>> copies(const CharLMParams<double>& g) {
  std::vector<Matrix<double>> out;
  for (const auto* m : g.tensors()) out.push_back(*m);
  return out;
}

TEST(MLstmStep, ZeroModelGivesZeroState) {
  auto p = CharLMParams<double>::zeros(5, 3);
  auto s = mlstm_step(p, LMState<double>::zeros(5), 'x');
  for (double v : s.c.values()) EXPECT_EQ(v, 0.0);
  for (double v : s.h.values()) EXPECT_EQ(v, 0.0);
}

TEST(MLstmStep, ScalarHandComputedRecurrence) {
  // d = e = 1, every weight 1, biases 0, x = 1, h_prev = 1, c_prev = 0:
  // m = 1, gates sigmoid(2), candidate tanh(2), c = sigmoid(2) tanh(2),
  // h = sigmoid(2) tanh(c).
  auto p = CharLMParams<double>::zeros(1, 1);
  p.embedding.fill(1.0);
  p.w_mx.fill(1.0);
  p.w_mh.fill(1.0);
  p.w_x.fill(1.0);
  p.w_m.fill(1.0);
  auto prev = LMState<double>::zeros(1);
  prev.h.fill(1.0);
  const auto s = mlstm_step(p, prev, 65);
  const double g = 1.0 / (1.0 + std::exp(-2.0));
  EXPECT_NEAR(g, 0.8808, 5e-5);
  EXPECT_NEAR(std::tanh(2.0), 0.9640, 5e-5);
  EXPECT_NEAR(s.c[0], g * std::tanh(2.0), 1e-15);
  EXPECT_NEAR(s.c[0], 0.8491, 5e-5);
  EXPECT_NEAR(s.h[0], 0.6083, 5e-5);
}

TEST(MLstmStep, ShapeAndByteRange) {
  Rng rng(1);
  auto p = CharLMParams<float>::initialize(64, 16, rng);
  auto s = mlstm_step(p, LMState<float>::zeros(64), 200);
  EXPECT_EQ(s.h.rows(), 64u);
  EXPECT_EQ(s.c.rows(), 64u);
  EXPECT_THROW(mlstm_step(p, LMState<float>::zeros(64), 256), ShapeError);
  EXPECT_THROW(mlstm_step(p, LMState<float>::zeros(64), -1), ShapeError);
}

TEST(MLstmStep, BatchColumnsEqualSingleSteps) {
  Rng rng(2);
  auto p = CharLMParams<float>::initialize(12, 4, rng);
  const std::vector<std::uint8_t> bytes{'a', 'Z', ' '};
  auto batch = LMState<float>::zeros(12, 3);
  forward_step(p, batch, std::span<const std::uint8_t>(bytes));
  for (std::size_t b = 0; b < 3; ++b) {
    auto one = mlstm_step(p, LMState<float>::zeros(12), bytes[b]);
    for (std::size_t r = 0; r < 12; ++r) EXPECT_EQ(batch.h(r, b), one.h[r]);
  }
}

TEST(LmLoss, ZeroProjectionIsExactlyEightBits) {
  Rng rng(3);
  const auto p = CharLMParams<double>::initialize(16, 8, rng);
  const auto text = bytes_of("In the beginning God created the heaven and the earth.");
  const auto loss = lm_loss(p, std::span<const std::uint8_t>(text));
  EXPECT_NEAR(loss.bits_per_char, 8.0, 1e-12);
  EXPECT_NEAR(loss.nats, std::log(256.0), 1e-12);
  const auto pf = CharLMParams<float>::initialize(16, 8, rng);
  EXPECT_NEAR(evaluate_bpc(pf, std::span<const std::uint8_t>(text), 4), 8.0, 1e-6);
}

TEST(LmLoss, NeedsTwoBytesAndIsDeterministic) {
  Rng rng(4);
  const auto p = random_params(6, 3, 5);
  const auto one = bytes_of("a");
  EXPECT_THROW(lm_loss(p, std::span<const std::uint8_t>(one)), ShapeError);
  const auto text = bytes_of("hello there");
  const auto a = lm_loss(p, std::span<const std::uint8_t>(text));
  const auto b = lm_loss(p, std::span<const std::uint8_t>(text));
  EXPECT_EQ(a.nats, b.nats);
  EXPECT_GE(a.bits_per_char, 0.0);
  EXPECT_NEAR(a.bits_per_char, a.nats / std::log(2.0), 1e-15);
}

TEST(LmGradient, MatchesFiniteDifferences) {
  auto p = random_params(8, 4, 11);
  Rng rng(12);
  std::vector<std::uint8_t> seq(12);
  for (auto& b : seq) b = static_cast<std::uint8_t>('a' + rng.below(6));
  auto grads = CharLMParams<double>::zeros(8, 4);
  lm_loss_and_gradients(p, std::span<const std::uint8_t>(seq), grads);
  const auto analytic = copies(grads);
  auto params = p.tensors();
  auto loss = [&] { return lm_loss(p, std::span<const std::uint8_t>(seq)).nats; };
  const auto r = finite_difference_check(loss, std::span(params),
                                         std::span<const Matrix<double>>(analytic), rng, 1e-5, 300);
  EXPECT_EQ(r.coordinates_checked, 300u);
  EXPECT_LT(r.max_relative_error, 1e-4)
      << "tensor " << r.worst_tensor << " index " << r.worst_index << " analytic "
      << r.worst_analytic << " numeric " << r.worst_numeric;
}

TEST(LmGradient, BatchedChunkMatchesFiniteDifferences) {
  // Three streams with a non-zero carried-in state, as during training.
  auto p = random_params(5, 3, 21);
  Rng rng(22);
  std::vector<std::uint8_t> chunk(3 * 7);
  for (auto& b : chunk) b = static_cast<std::uint8_t>(rng.below(256));
  auto start = LMState<double>::zeros(5, 3);
  for (double& v : start.h.values()) v = rng.uniform(-0.5, 0.5);
  for (double& v : start.c.values()) v = rng.uniform(-0.5, 0.5);

  auto grads = CharLMParams<double>::zeros(5, 3);
  auto state = start;
  chunk_loss(p, std::span<const std::uint8_t>(chunk), 3, state, &grads);
  const auto analytic = copies(grads);
  auto params = p.tensors();
  auto loss = [&] {
    auto s = start;
    return chunk_loss(p, std::span<const std::uint8_t>(chunk), 3, s);
  };
  const auto r = finite_difference_check(loss, std::span(params),
                                         std::span<const Matrix<double>>(analytic), rng, 1e-5, 200);
  EXPECT_LT(r.max_relative_error, 1e-4);
}

TEST(TrainLm, ConstantTextBecomesPredictable) {
  const std::vector<std::uint8_t> text(1000, 'a');
  LMTrainConfig cfg;
  cfg.hidden = 16;
  cfg.embed = 8;
  cfg.sequence_length = 32;
  cfg.batch_size = 4;
  cfg.steps = 200;
  cfg.seed = 1;
  const auto trained = train_lm(std::span<const std::uint8_t>(text), cfg);
  const std::vector<std::uint8_t> probe(200, 'a');
  EXPECT_LT(lm_loss(trained.params, std::span<const std::uint8_t>(probe)).bits_per_char, 0.5);
  EXPECT_LT(trained.report.final_heldout_bpc, trained.report.initial_heldout_bpc);
  EXPECT_EQ(trained.report.step_loss.size(), 200u);
}

TEST(TrainLm, ZeroStepsReturnsInitialization) {
  const auto text = bytes_of(std::string(300, 'x') + std::string(300, 'y'));
  LMTrainConfig cfg;
  cfg.hidden = 8;
  cfg.embed = 4;
  cfg.sequence_length = 16;
  cfg.steps = 0;
  cfg.seed = 99;
  const auto trained = train_lm(std::span<const std::uint8_t>(text), cfg);
  Rng rng(99);
  EXPECT_EQ(trained.params, CharLMParams<float>::initialize(8, 4, rng));
}

TEST(TrainLm, SameSeedSameParams) {
  std::string s;
  for (int i = 0; i < 40; ++i) s += "the quick brown fox jumps over the lazy dog. ";
  const auto text = bytes_of(s);
  LMTrainConfig cfg;
  cfg.hidden = 8;
  cfg.embed = 4;
  cfg.sequence_length = 16;
  cfg.batch_size = 4;
  cfg.steps = 20;
  cfg.seed = 5;
  const auto a = train_lm(std::span<const std::uint8_t>(text), cfg);
  const auto b = train_lm(std::span<const std::uint8_t>(text), cfg);
  EXPECT_EQ(a.params, b.params);
  cfg.seed = 6;
  EXPECT_FALSE(train_lm(std::span<const std::uint8_t>(text), cfg).params == a.params);
}

TEST(TrainLm, RejectsShortCorpus) {
  const auto text = bytes_of("short");
  LMTrainConfig cfg;
  cfg.sequence_length = 16;
  EXPECT_THROW(train_lm(std::span<const std::uint8_t>(text), cfg), CorpusError);
  EXPECT_THROW(train_lm(std::span<const std::uint8_t>(), cfg), CorpusError);
}

TEST(LmFile, RoundTripIsBitExact) {
  TempDir dir("lm");
  Rng rng(7);
  auto p = CharLMParams<float>::initialize(10, 6, rng);
  for (float& v : p.w_out.values()) v = static_cast<float>(rng.uniform(-1, 1));
  save_lm(p, dir.file("lm.bin"));
  const auto q = load_lm<float>(dir.file("lm.bin"));
  EXPECT_EQ(p, q);
  EXPECT_EQ(serialize(p), serialize(q));
  const auto bytes = ctxda::testing::slurp(dir.file("lm.bin"));
  EXPECT_EQ(bytes.substr(0, 9), "CTXDA-LM1");
}

TEST(LmFile, RejectsBadMagicTruncationAndDimensionMismatch) {
  TempDir dir("lmbad");
  Rng rng(8);
  const auto p = CharLMParams<float>::initialize(6, 3, rng);
  std::string bytes = serialize(p);

  auto bad = bytes;
  bad[0] = 'X';
  ctxda::testing::spit(dir.file("magic.bin"), bad);
  EXPECT_THROW(load_lm<float>(dir.file("magic.bin")), FormatError);

  // Cut in the middle of the last matrix.
  ctxda::testing::spit(dir.file("cut.bin"), bytes.substr(0, bytes.size() - 50));
  EXPECT_THROW(load_lm<float>(dir.file("cut.bin")), FormatError);

  auto wrong_dim = bytes;
  wrong_dim[9] = 7;  // header says d = 7
  ctxda::testing::spit(dir.file("dim.bin"), wrong_dim);
  EXPECT_THROW(load_lm<float>(dir.file("dim.bin")), FormatError);

  EXPECT_THROW(load_lm<float>(dir.file("missing.bin")), FormatError);
}

}  // namespace
