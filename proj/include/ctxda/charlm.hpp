// SPDX-License-Identifier: Apache-2.0
#pragma once

// Byte-level multiplicative LSTM language model.
//
// One step with byte embedding x, previous state (h, c):
//   m = (W_mx x) * (W_mh h)                       elementwise product
//   i = sigmoid(W_ix x + W_im m + b_i)
//   f = sigmoid(W_fx x + W_fm m + b_f)
//   o = sigmoid(W_ox x + W_om m + b_o)
//   u = tanh   (W_cx x + W_cm m + b_c)
//   c' = f * c + i * u
//   h' = o * tanh(c')
// Next-byte distribution: softmax(W_out h' + b_out).

#include <chrono>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ctxda/binary_io.hpp"
#include "ctxda/error.hpp"
#include "ctxda/matrix.hpp"
#include "ctxda/numkernel.hpp"
#include "ctxda/rng.hpp"

namespace ctxda::charlm {

inline constexpr std::size_t kVocab = 256;
inline constexpr std::string_view kMagic = "CTXDA-LM1";

/// Gate row blocks inside the stacked gate matrices.
enum Gate : std::size_t { kInput = 0, kForget = 1, kOutput = 2, kCandidate = 3 };

template <typename T>
struct CharLMParams {
  std::size_t hidden = 0;
  std::size_t embed = 0;
  Matrix<T> embedding;  // 256 x e
  Matrix<T> w_mx;       // d x e
  Matrix<T> w_mh;       // d x d
  Matrix<T> w_x;        // 4d x e, row blocks i, f, o, candidate
  Matrix<T> w_m;        // 4d x d
  Matrix<T> bias;       // 4d x 1
  Matrix<T> w_out;      // 256 x d
  Matrix<T> b_out;      // 256 x 1

  static CharLMParams zeros(std::size_t hidden, std::size_t embed) {
    CharLMParams p;
    p.hidden = hidden;
    p.embed = embed;
    p.embedding = Matrix<T>(kVocab, embed);
    p.w_mx = Matrix<T>(hidden, embed);
    p.w_mh = Matrix<T>(hidden, hidden);
    p.w_x = Matrix<T>(4 * hidden, embed);
    p.w_m = Matrix<T>(4 * hidden, hidden);
    p.bias = Matrix<T>(4 * hidden, 1);
    p.w_out = Matrix<T>(kVocab, hidden);
    p.b_out = Matrix<T>(kVocab, 1);
    return p;
  }

  /// Recurrent weights uniform in +-1/sqrt(fan_in), embedding in +-1,
  /// forget bias +1, output projection zero (the untrained model predicts
  /// the uniform distribution, i.e. exactly 8 bits per byte).
  static CharLMParams initialize(std::size_t hidden, std::size_t embed, Rng& rng) {
    CharLMParams p = zeros(hidden, embed);
    init_uniform_fan_in(p.embedding, 1, rng);
    init_uniform_fan_in(p.w_mx, embed, rng);
    init_uniform_fan_in(p.w_mh, hidden, rng);
    init_uniform_fan_in(p.w_x, embed, rng);
    init_uniform_fan_in(p.w_m, hidden, rng);
    for (std::size_t r = 0; r < hidden; ++r) p.bias[kForget * hidden + r] = T(1);
    return p;
  }

  std::vector<Matrix<T>*> tensors() {
    return {&embedding, &w_mx, &w_mh, &w_x, &w_m, &bias, &w_out, &b_out};
  }
  std::vector<const Matrix<T>*> tensors() const {
    return {&embedding, &w_mx, &w_mh, &w_x, &w_m, &bias, &w_out, &b_out};
  }

  template <typename U>
  CharLMParams<U> cast() const {
    CharLMParams<U> p;
    p.hidden = hidden;
    p.embed = embed;
    p.embedding = embedding.template cast<U>();
    p.w_mx = w_mx.template cast<U>();
    p.w_mh = w_mh.template cast<U>();
    p.w_x = w_x.template cast<U>();
    p.w_m = w_m.template cast<U>();
    p.bias = bias.template cast<U>();
    p.w_out = w_out.template cast<U>();
    p.b_out = b_out.template cast<U>();
    return p;
  }

  friend bool operator==(const CharLMParams&, const CharLMParams&) = default;
};

/// Recurrent state for a batch of sequences, one per column.
template <typename T>
struct LMState {
  Matrix<T> h;  // d x B
  Matrix<T> c;  // d x B

  static LMState zeros(std::size_t hidden, std::size_t batch = 1) {
    return {Matrix<T>(hidden, batch), Matrix<T>(hidden, batch)};
  }
};

/// Intermediate values of one step, kept for backpropagation.
template <typename T>
struct StepCache {
  std::vector<std::uint8_t> bytes;
  Matrix<T> x, mx, mh, m, gates, c_prev, c, tanh_c, h_prev, h;
};

namespace detail {

template <typename T>
Matrix<T> gather_embeddings(const CharLMParams<T>& p, std::span<const std::uint8_t> bytes) {
  Matrix<T> x(p.embed, bytes.size());
  for (std::size_t b = 0; b < bytes.size(); ++b) {
    auto row = p.embedding.row(bytes[b]);
    for (std::size_t k = 0; k < p.embed; ++k) x(k, b) = row[k];
  }
  return x;
}

}  // namespace detail

/// Advances every column of `state` by one byte. When `cache` is given it
/// receives everything backpropagation needs.
template <typename T>
void forward_step(const CharLMParams<T>& p, LMState<T>& state,
                  std::span<const std::uint8_t> bytes, StepCache<T>* cache = nullptr) {
  const std::size_t d = p.hidden, n = bytes.size();
  if (state.h.rows() != d || state.h.cols() != n || !state.c.same_shape(state.h)) {
    throw ShapeError("mlstm step: state " + shape_string(state.h) + " for hidden " +
                     std::to_string(d) + " and batch " + std::to_string(n));
  }
  Matrix<T> x = detail::gather_embeddings(p, bytes);
  Matrix<T> mx(d, n), mh(d, n);
  gemm_nn(p.w_mx, x, mx);
  gemm_nn(p.w_mh, state.h, mh);
  Matrix<T> m(d, n);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = mx[i] * mh[i];

  Matrix<T> gates(4 * d, n);
  gemm_nn(p.w_x, x, gates);
  gemm_nn(p.w_m, m, gates);
  add_column_broadcast(gates, p.bias);
  const std::size_t block = d * n;
  for (std::size_t i = 0; i < 3 * block; ++i) gates[i] = sigmoid(gates[i]);
  for (std::size_t i = 3 * block; i < 4 * block; ++i) gates[i] = std::tanh(gates[i]);

  Matrix<T> c(d, n), tanh_c(d, n), h(d, n);
  for (std::size_t i = 0; i < block; ++i) {
    const T ig = gates[kInput * block + i], fg = gates[kForget * block + i];
    const T og = gates[kOutput * block + i], ug = gates[kCandidate * block + i];
    c[i] = fg * state.c[i] + ig * ug;
    tanh_c[i] = std::tanh(c[i]);
    h[i] = og * tanh_c[i];
  }

  if (cache != nullptr) {
    cache->bytes.assign(bytes.begin(), bytes.end());
    cache->x = std::move(x);
    cache->mx = std::move(mx);
    cache->mh = std::move(mh);
    cache->m = std::move(m);
    cache->gates = std::move(gates);
    cache->c_prev = state.c;
    cache->h_prev = state.h;
    cache->c = c;
    cache->tanh_c = std::move(tanh_c);
    cache->h = h;
  }
  state.h = std::move(h);
  state.c = std::move(c);
}

/// Single-sequence step.
template <typename T>
LMState<T> mlstm_step(const CharLMParams<T>& p, const LMState<T>& state, int byte) {
  if (byte < 0 || byte > 255) {
    throw ShapeError("mlstm_step: byte " + std::to_string(byte) + " out of range 0..255");
  }
  require_finite(state.h, "mlstm_step");
  require_finite(state.c, "mlstm_step");
  LMState<T> next = state;
  const std::uint8_t b = static_cast<std::uint8_t>(byte);
  forward_step(p, next, std::span<const std::uint8_t>(&b, 1));
  return next;
}

/// Next-byte distribution (256 x B) for the hidden states in `h`.
template <typename T>
Matrix<T> output_distribution(const CharLMParams<T>& p, const Matrix<T>& h) {
  Matrix<T> logits(kVocab, h.cols());
  gemm_nn(p.w_out, h, logits);
  add_column_broadcast(logits, p.b_out);
  softmax_columns(logits);
  return logits;
}

/// Teacher-forced loss over `streams` equal-length byte rows, starting from
/// `state` (updated to the final state). Row b of `chunk` holds
/// steps+1 bytes: inputs are positions 0..steps-1, targets 1..steps.
/// Returns the mean cross-entropy in nats; when `grads` is non-null it
/// receives (accumulates) the gradient of that mean.
template <typename T>
double chunk_loss(const CharLMParams<T>& p, std::span<const std::uint8_t> chunk,
                  std::size_t streams, LMState<T>& state, CharLMParams<T>* grads = nullptr) {
  if (streams == 0 || chunk.size() % streams != 0 || chunk.size() / streams < 2) {
    throw ShapeError("chunk_loss: need at least 2 bytes per stream");
  }
  const std::size_t width = chunk.size() / streams;
  const std::size_t steps = width - 1;
  const std::size_t d = p.hidden;
  const T inv_count = T(1) / static_cast<T>(steps * streams);

  std::vector<StepCache<T>> caches(grads != nullptr ? steps : 0);
  std::vector<Matrix<T>> probs(grads != nullptr ? steps : 0);
  std::vector<std::uint8_t> inputs(streams), targets(streams);
  double total = 0.0;
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t b = 0; b < streams; ++b) {
      inputs[b] = chunk[b * width + t];
      targets[b] = chunk[b * width + t + 1];
    }
    forward_step(p, state, std::span<const std::uint8_t>(inputs),
                 grads != nullptr ? &caches[t] : nullptr);
    Matrix<T> dist = output_distribution(p, state.h);
    for (std::size_t b = 0; b < streams; ++b) {
      const T prob = std::max(dist(targets[b], b), static_cast<T>(kProbabilityFloor));
      total += -static_cast<double>(std::log(prob));
    }
    if (grads != nullptr) probs[t] = std::move(dist);
  }
  const double mean = total / static_cast<double>(steps * streams);
  if (!std::isfinite(mean)) throw NumericError("chunk_loss: non-finite loss");
  if (grads == nullptr) return mean;

  Matrix<T> dh_next(d, streams), dc_next(d, streams);
  Matrix<T> dgates(4 * d, streams);
  const std::size_t block = d * streams;
  for (std::size_t t = steps; t-- > 0;) {
    const StepCache<T>& s = caches[t];
    Matrix<T>& dlogits = probs[t];
    for (std::size_t b = 0; b < streams; ++b) dlogits(chunk[b * width + t + 1], b) -= T(1);
    for (T& v : dlogits.values()) v *= inv_count;
    gemm_nt(dlogits, s.h, grads->w_out);
    accumulate_row_sums(dlogits, grads->b_out);

    Matrix<T> dh = dh_next;
    gemm_tn(p.w_out, dlogits, dh);

    for (std::size_t i = 0; i < block; ++i) {
      const T ig = s.gates[kInput * block + i], fg = s.gates[kForget * block + i];
      const T og = s.gates[kOutput * block + i], ug = s.gates[kCandidate * block + i];
      const T tc = s.tanh_c[i];
      const T dc = dc_next[i] + dh[i] * og * (T(1) - tc * tc);
      dgates[kInput * block + i] = dc * ug * ig * (T(1) - ig);
      dgates[kForget * block + i] = dc * s.c_prev[i] * fg * (T(1) - fg);
      dgates[kOutput * block + i] = dh[i] * tc * og * (T(1) - og);
      dgates[kCandidate * block + i] = dc * ig * (T(1) - ug * ug);
      dc_next[i] = dc * fg;
    }
    gemm_nt(dgates, s.x, grads->w_x);
    gemm_nt(dgates, s.m, grads->w_m);
    accumulate_row_sums(dgates, grads->bias);

    Matrix<T> dm(d, streams), dx(p.embed, streams);
    gemm_tn(p.w_m, dgates, dm);
    gemm_tn(p.w_x, dgates, dx);

    Matrix<T> dmx(d, streams), dmh(d, streams);
    for (std::size_t i = 0; i < block; ++i) {
      dmx[i] = dm[i] * s.mh[i];
      dmh[i] = dm[i] * s.mx[i];
    }
    gemm_nt(dmx, s.x, grads->w_mx);
    gemm_tn(p.w_mx, dmx, dx);
    gemm_nt(dmh, s.h_prev, grads->w_mh);
    dh_next.set_zero();
    gemm_tn(p.w_mh, dmh, dh_next);

    for (std::size_t b = 0; b < streams; ++b) {
      auto row = grads->embedding.row(s.bytes[b]);
      for (std::size_t k = 0; k < p.embed; ++k) row[k] += dx(k, b);
    }
  }
  return mean;
}

struct SequenceLoss {
  double nats = 0.0;
  double bits_per_char = 0.0;
};

/// Mean next-byte cross-entropy of one sequence from the zero state.
template <typename T>
SequenceLoss lm_loss(const CharLMParams<T>& p, std::span<const std::uint8_t> sequence) {
  if (sequence.size() < 2) throw ShapeError("lm_loss: sequence needs at least 2 bytes");
  LMState<T> state = LMState<T>::zeros(p.hidden, 1);
  const double nats = chunk_loss(p, sequence, 1, state);
  return {nats, nats / std::log(2.0)};
}

/// Loss and gradients of `lm_loss` (mean over positions), for checking and
/// for single-sequence training.
template <typename T>
double lm_loss_and_gradients(const CharLMParams<T>& p, std::span<const std::uint8_t> sequence,
                             CharLMParams<T>& grads) {
  LMState<T> state = LMState<T>::zeros(p.hidden, 1);
  return chunk_loss(p, sequence, 1, state, &grads);
}

/// Bits per character over `text`, split into `streams` contiguous pieces
/// each started from the zero state. Forward only.
template <typename T>
double evaluate_bpc(const CharLMParams<T>& p, std::span<const std::uint8_t> text,
                    std::size_t streams = 32) {
  if (text.size() < 2) throw ShapeError("evaluate_bpc: text needs at least 2 bytes");
  streams = std::max<std::size_t>(1, std::min(streams, text.size() / 2));
  const std::size_t width = text.size() / streams;
  std::vector<std::uint8_t> chunk(streams * width);
  for (std::size_t b = 0; b < streams; ++b) {
    std::copy_n(text.begin() + static_cast<std::ptrdiff_t>(b * width), width,
                chunk.begin() + static_cast<std::ptrdiff_t>(b * width));
  }
  LMState<T> state = LMState<T>::zeros(p.hidden, streams);
  return chunk_loss(p, std::span<const std::uint8_t>(chunk), streams, state) / std::log(2.0);
}

struct LMTrainConfig {
  std::size_t hidden = 256;
  std::size_t embed = 16;
  std::size_t sequence_length = 128;
  std::size_t batch_size = 16;
  std::size_t steps = 1000;
  std::uint64_t seed = 0;
  double learning_rate = 2e-3;
  double clip_norm = 1.0;
  double heldout_fraction = 0.05;
  bool evaluate_heldout = true;
  std::size_t eval_streams = 32;
};

struct LMTrainReport {
  std::size_t train_bytes = 0;
  std::size_t heldout_bytes = 0;
  std::size_t streams = 0;
  double initial_heldout_bpc = 0.0;
  double final_heldout_bpc = 0.0;
  std::vector<double> step_loss;  // mean nats per step
  double seconds = 0.0;
};

struct TrainedLM {
  CharLMParams<float> params;
  LMTrainReport report;
};

/// Truncated BPTT over `batch_size` contiguous streams of the leading
/// (1 - heldout_fraction) of the corpus; the trailing slice is held out.
/// State carries across chunks and resets when a stream wraps around.
inline TrainedLM train_lm(std::span<const std::uint8_t> corpus, const LMTrainConfig& cfg) {
  const std::size_t len = cfg.sequence_length;
  if (corpus.empty()) throw CorpusError("train_lm: empty corpus");
  if (len == 0 || corpus.size() < len + 1) {
    throw CorpusError("train_lm: corpus of " + std::to_string(corpus.size()) +
                      " bytes is shorter than sequence_length " + std::to_string(len));
  }
  const auto start = std::chrono::steady_clock::now();

  std::size_t heldout = static_cast<std::size_t>(static_cast<double>(corpus.size()) *
                                                 cfg.heldout_fraction);
  if (corpus.size() - heldout < len + 1) heldout = corpus.size() - (len + 1);
  const auto train = corpus.first(corpus.size() - heldout);
  const auto test = corpus.last(heldout);

  Rng rng(cfg.seed);
  TrainedLM out{CharLMParams<float>::initialize(cfg.hidden, cfg.embed, rng), {}};
  auto& rep = out.report;
  rep.train_bytes = train.size();
  rep.heldout_bytes = test.size();
  const bool eval = cfg.evaluate_heldout && test.size() >= 2;
  if (eval) rep.initial_heldout_bpc = evaluate_bpc(out.params, test, cfg.eval_streams);

  const std::size_t streams =
      std::max<std::size_t>(1, std::min(cfg.batch_size, train.size() / (len + 1)));
  const std::size_t segment = train.size() / streams;
  rep.streams = streams;

  AdamState<float> adam;
  adam.learning_rate = cfg.learning_rate;
  auto grads = CharLMParams<float>::zeros(cfg.hidden, cfg.embed);
  auto param_ptrs = out.params.tensors();
  auto grad_ptrs = grads.tensors();
  std::vector<const Matrix<float>*> grad_view(grad_ptrs.begin(), grad_ptrs.end());

  LMState<float> state = LMState<float>::zeros(cfg.hidden, streams);
  std::vector<std::uint8_t> chunk(streams * (len + 1));
  std::size_t pos = 0;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    if (pos + len + 1 > segment) {
      pos = 0;
      state = LMState<float>::zeros(cfg.hidden, streams);
    }
    for (std::size_t b = 0; b < streams; ++b) {
      std::copy_n(train.begin() + static_cast<std::ptrdiff_t>(b * segment + pos), len + 1,
                  chunk.begin() + static_cast<std::ptrdiff_t>(b * (len + 1)));
    }
    for (auto* g : grad_ptrs) g->set_zero();
    const double loss =
        chunk_loss(out.params, std::span<const std::uint8_t>(chunk), streams, state, &grads);
    clip_global_norm<float>(grad_ptrs, cfg.clip_norm);
    adam_step<float>(param_ptrs, grad_view, adam);
    rep.step_loss.push_back(loss);
    pos += len;
  }

  if (eval) rep.final_heldout_bpc = evaluate_bpc(out.params, test, cfg.eval_streams);
  rep.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

namespace detail {

inline constexpr const char* kGateNames[4] = {"i", "f", "o", "c"};

template <typename T>
Matrix<T> row_block(const Matrix<T>& m, std::size_t block, std::size_t rows) {
  Matrix<T> out(rows, m.cols());
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy(m.row(block * rows + r).begin(), m.row(block * rows + r).end(),
              out.row(r).begin());
  }
  return out;
}

template <typename T>
void put_row_block(Matrix<T>& m, std::size_t block, const Matrix<T>& part) {
  for (std::size_t r = 0; r < part.rows(); ++r) {
    std::copy(part.row(r).begin(), part.row(r).end(), m.row(block * part.rows() + r).begin());
  }
}

}  // namespace detail

/// Serialized model file bytes.
template <typename T>
std::string serialize(const CharLMParams<T>& p) {
  ByteWriter w;
  w.bytes(kMagic);
  w.u32(ByteWriter::checked_u32(p.hidden));
  w.u32(ByteWriter::checked_u32(p.embed));
  w.section("embedding", p.embedding);
  w.section("W_mx", p.w_mx);
  w.section("W_mh", p.w_mh);
  for (std::size_t g = 0; g < 4; ++g) {
    const std::string gate = detail::kGateNames[g];
    w.section("W_" + gate + "x", detail::row_block(p.w_x, g, p.hidden));
    w.section("W_" + gate + "m", detail::row_block(p.w_m, g, p.hidden));
    w.section("b_" + gate, detail::row_block(p.bias, g, p.hidden));
  }
  w.section("W_out", p.w_out);
  w.section("b_out", p.b_out);
  return w.buffer();
}

template <typename T>
CharLMParams<T> deserialize(ByteReader reader) {
  reader.expect_magic(kMagic);
  const std::size_t d = reader.u32();
  const std::size_t e = reader.u32();
  if (d == 0 || e == 0) throw FormatError(reader.origin() + ": zero model dimension");
  auto sections = reader.sections();
  const std::string& origin = reader.origin();
  CharLMParams<T> p = CharLMParams<T>::zeros(d, e);
  p.embedding = take_section<T>(sections, "embedding", kVocab, e, origin);
  p.w_mx = take_section<T>(sections, "W_mx", d, e, origin);
  p.w_mh = take_section<T>(sections, "W_mh", d, d, origin);
  for (std::size_t g = 0; g < 4; ++g) {
    const std::string gate = detail::kGateNames[g];
    detail::put_row_block(p.w_x, g, take_section<T>(sections, "W_" + gate + "x", d, e, origin));
    detail::put_row_block(p.w_m, g, take_section<T>(sections, "W_" + gate + "m", d, d, origin));
    detail::put_row_block(p.bias, g, take_section<T>(sections, "b_" + gate, d, 1, origin));
  }
  p.w_out = take_section<T>(sections, "W_out", kVocab, d, origin);
  p.b_out = take_section<T>(sections, "b_out", kVocab, 1, origin);
  if (!sections.empty()) {
    throw FormatError(origin + ": unexpected section " + sections.begin()->first);
  }
  for (const auto* m : p.tensors()) require_finite(*m, "load_lm");
  return p;
}

template <typename T>
void save_lm(const CharLMParams<T>& p, const std::string& path) {
  ByteWriter w;
  w.bytes(serialize(p));
  w.write_file(path);
}

template <typename T = float>
CharLMParams<T> load_lm(const std::string& path) {
  return deserialize<T>(ByteReader::from_file(path));
}

}  // namespace ctxda::charlm
