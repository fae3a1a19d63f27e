// SPDX-License-Identifier: Apache-2.0
#pragma once

// Two heads over utterance vectors:
//   context RNN   h_t = sigmoid(W_h h_{t-1} + I s_t + b),  h_0 = 0
//                 p   = softmax(W_out h_T)        (T = current utterance)
//   MLP baseline  p   = softmax(W2 tanh(W1 s + b1) + b2)
// Batched inputs hold one window per column; all windows of a batch have
// the same length.

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "ctxda/binary_io.hpp"
#include "ctxda/corpus.hpp"
#include "ctxda/encoder.hpp"
#include "ctxda/error.hpp"
#include "ctxda/matrix.hpp"
#include "ctxda/numkernel.hpp"
#include "ctxda/rng.hpp"

namespace ctxda::classifier {

inline constexpr std::size_t kDefaultHidden = 64;

template <typename T>
struct ContextRNNParams {
  Matrix<T> w_h;    // d_h x d_h
  Matrix<T> w_in;   // d_h x d_in  (I)
  Matrix<T> b;      // d_h x 1
  Matrix<T> w_out;  // classes x d_h

  std::size_t input_dim() const noexcept { return w_in.cols(); }
  std::size_t hidden() const noexcept { return w_h.rows(); }
  std::size_t classes() const noexcept { return w_out.rows(); }

  static ContextRNNParams zeros(std::size_t input_dim, std::size_t hidden,
                                std::size_t classes = corpus::kNumClasses) {
    return {Matrix<T>(hidden, hidden), Matrix<T>(hidden, input_dim), Matrix<T>(hidden, 1),
            Matrix<T>(classes, hidden)};
  }

  static ContextRNNParams initialize(std::size_t input_dim, std::size_t hidden, Rng& rng,
                                     std::size_t classes = corpus::kNumClasses) {
    auto p = zeros(input_dim, hidden, classes);
    init_uniform_fan_in(p.w_h, hidden, rng);
    init_uniform_fan_in(p.w_in, input_dim, rng);
    init_uniform_fan_in(p.w_out, hidden, rng);
    return p;
  }

  ContextRNNParams zeros_like() const { return zeros(input_dim(), hidden(), classes()); }

  std::vector<Matrix<T>*> tensors() { return {&w_h, &w_in, &b, &w_out}; }
  std::vector<const Matrix<T>*> tensors() const { return {&w_h, &w_in, &b, &w_out}; }

  template <typename U>
  ContextRNNParams<U> cast() const {
    return {w_h.template cast<U>(), w_in.template cast<U>(), b.template cast<U>(),
            w_out.template cast<U>()};
  }

  friend bool operator==(const ContextRNNParams&, const ContextRNNParams&) = default;
};

template <typename T>
struct MLPParams {
  Matrix<T> w1;  // hidden x d_in
  Matrix<T> b1;  // hidden x 1
  Matrix<T> w2;  // classes x hidden
  Matrix<T> b2;  // classes x 1

  std::size_t input_dim() const noexcept { return w1.cols(); }
  std::size_t hidden() const noexcept { return w1.rows(); }
  std::size_t classes() const noexcept { return w2.rows(); }

  static MLPParams zeros(std::size_t input_dim, std::size_t hidden,
                         std::size_t classes = corpus::kNumClasses) {
    return {Matrix<T>(hidden, input_dim), Matrix<T>(hidden, 1), Matrix<T>(classes, hidden),
            Matrix<T>(classes, 1)};
  }

  static MLPParams initialize(std::size_t input_dim, std::size_t hidden, Rng& rng,
                              std::size_t classes = corpus::kNumClasses) {
    auto p = zeros(input_dim, hidden, classes);
    init_uniform_fan_in(p.w1, input_dim, rng);
    init_uniform_fan_in(p.w2, hidden, rng);
    return p;
  }

  MLPParams zeros_like() const { return zeros(input_dim(), hidden(), classes()); }

  std::vector<Matrix<T>*> tensors() { return {&w1, &b1, &w2, &b2}; }
  std::vector<const Matrix<T>*> tensors() const { return {&w1, &b1, &w2, &b2}; }

  template <typename U>
  MLPParams<U> cast() const {
    return {w1.template cast<U>(), b1.template cast<U>(), w2.template cast<U>(),
            b2.template cast<U>()};
  }

  friend bool operator==(const MLPParams&, const MLPParams&) = default;
};

/// steps[t] is (d_in x B); targets has B entries.
template <typename T>
struct Batch {
  std::vector<Matrix<T>> steps;
  std::vector<int> targets;

  std::size_t size() const noexcept { return targets.size(); }
};

namespace detail {

template <typename T>
void check_steps(const std::vector<Matrix<T>>& steps, std::size_t input_dim) {
  if (steps.empty()) throw ShapeError("classifier: empty window");
  for (const auto& s : steps) {
    if (s.rows() != input_dim || s.cols() != steps.front().cols()) {
      throw ShapeError("classifier: step input " + shape_string(s) + ", expected " +
                       std::to_string(input_dim) + " rows");
    }
  }
}

template <typename T>
void check_targets(const std::vector<int>& targets, std::size_t batch, std::size_t classes) {
  if (targets.size() != batch) throw ShapeError("classifier: target count mismatch");
  for (int t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= classes) {
      throw ShapeError("classifier: target class " + std::to_string(t) + " out of range");
    }
  }
}

/// (p - onehot) / B, in place, and the summed cross-entropy.
template <typename T>
double softmax_grad(Matrix<T>& probs, const std::vector<int>& targets) {
  double loss = 0.0;
  const T inv = T(1) / static_cast<T>(targets.size());
  for (std::size_t b = 0; b < targets.size(); ++b) {
    const T p = std::max(probs(targets[b], b), static_cast<T>(kProbabilityFloor));
    loss -= static_cast<double>(std::log(p));
    probs(targets[b], b) -= T(1);
  }
  for (T& v : probs.values()) v *= inv;
  return loss;
}

template <typename T>
Matrix<T> batch_of_one(std::span<const std::vector<T>> window, std::size_t t) {
  return Matrix<T>::column(std::span<const T>(window[t]));
}

}  // namespace detail

/// Hidden trajectory h_1..h_T (each d_h x B) and class distribution of h_T.
template <typename T>
struct RnnTrace {
  std::vector<Matrix<T>> hidden;
  Matrix<T> probs;  // classes x B
};

template <typename T>
RnnTrace<T> rnn_forward_batch(const ContextRNNParams<T>& p, const std::vector<Matrix<T>>& steps) {
  detail::check_steps(steps, p.input_dim());
  const std::size_t n = steps.front().cols(), d = p.hidden();
  RnnTrace<T> trace;
  Matrix<T> h(d, n);
  for (const auto& s : steps) {
    Matrix<T> pre(d, n);
    gemm_nn(p.w_h, h, pre);
    gemm_nn(p.w_in, s, pre);
    add_column_broadcast(pre, p.b);
    for (T& v : pre.values()) v = sigmoid(v);
    h = pre;
    trace.hidden.push_back(std::move(pre));
  }
  trace.probs = Matrix<T>(p.classes(), n);
  gemm_nn(p.w_out, h, trace.probs);
  softmax_columns(trace.probs);
  return trace;
}

/// Mean cross-entropy over the batch; its gradient is added to `grads`.
template <typename T>
double batch_loss_and_gradients(const ContextRNNParams<T>& p, const Batch<T>& batch,
                                ContextRNNParams<T>& grads) {
  RnnTrace<T> trace = rnn_forward_batch(p, batch.steps);
  const std::size_t n = batch.size(), d = p.hidden();
  detail::check_targets<T>(batch.targets, batch.steps.front().cols(), p.classes());
  Matrix<T>& dlogits = trace.probs;
  const double loss = detail::softmax_grad(dlogits, batch.targets);

  const std::size_t len = batch.steps.size();
  gemm_nt(dlogits, trace.hidden.back(), grads.w_out);
  Matrix<T> dh(d, n);
  gemm_tn(p.w_out, dlogits, dh);
  for (std::size_t t = len; t-- > 0;) {
    const Matrix<T>& h = trace.hidden[t];
    Matrix<T> dpre(d, n);
    for (std::size_t i = 0; i < dpre.size(); ++i) dpre[i] = dh[i] * h[i] * (T(1) - h[i]);
    if (t > 0) gemm_nt(dpre, trace.hidden[t - 1], grads.w_h);  // h_0 = 0 adds nothing
    gemm_nt(dpre, batch.steps[t], grads.w_in);
    accumulate_row_sums(dpre, grads.b);
    if (t > 0) {
      dh.set_zero();
      gemm_tn(p.w_h, dpre, dh);
    }
  }
  return loss / static_cast<double>(n);
}

template <typename T>
Matrix<T> batch_probabilities(const ContextRNNParams<T>& p, const std::vector<Matrix<T>>& steps) {
  return rnn_forward_batch(p, steps).probs;
}

template <typename T>
Matrix<T> mlp_hidden_batch(const MLPParams<T>& p, const Matrix<T>& input) {
  Matrix<T> hidden(p.hidden(), input.cols());
  gemm_nn(p.w1, input, hidden);
  add_column_broadcast(hidden, p.b1);
  for (T& v : hidden.values()) v = std::tanh(v);
  return hidden;
}

/// The MLP looks only at the last (current) step of each window.
template <typename T>
Matrix<T> batch_probabilities(const MLPParams<T>& p, const std::vector<Matrix<T>>& steps) {
  detail::check_steps(steps, p.input_dim());
  Matrix<T> hidden = mlp_hidden_batch(p, steps.back());
  Matrix<T> probs(p.classes(), hidden.cols());
  gemm_nn(p.w2, hidden, probs);
  add_column_broadcast(probs, p.b2);
  softmax_columns(probs);
  return probs;
}

template <typename T>
double batch_loss_and_gradients(const MLPParams<T>& p, const Batch<T>& batch,
                                MLPParams<T>& grads) {
  detail::check_steps(batch.steps, p.input_dim());
  detail::check_targets<T>(batch.targets, batch.steps.front().cols(), p.classes());
  const Matrix<T>& input = batch.steps.back();
  Matrix<T> hidden = mlp_hidden_batch(p, input);
  Matrix<T> dlogits(p.classes(), hidden.cols());
  gemm_nn(p.w2, hidden, dlogits);
  add_column_broadcast(dlogits, p.b2);
  softmax_columns(dlogits);
  const double loss = detail::softmax_grad(dlogits, batch.targets);

  gemm_nt(dlogits, hidden, grads.w2);
  accumulate_row_sums(dlogits, grads.b2);
  Matrix<T> dhidden(p.hidden(), hidden.cols());
  gemm_tn(p.w2, dlogits, dhidden);
  for (std::size_t i = 0; i < dhidden.size(); ++i) dhidden[i] *= T(1) - hidden[i] * hidden[i];
  gemm_nt(dhidden, input, grads.w1);
  accumulate_row_sums(dhidden, grads.b1);
  return loss / static_cast<double>(batch.size());
}

// Single-window forms.

template <typename T>
struct RnnOutput {
  std::vector<std::vector<T>> hidden;  // h_1..h_T
  std::vector<T> distribution;
};

template <typename T>
std::vector<Matrix<T>> window_steps(std::span<const std::vector<T>> window) {
  std::vector<Matrix<T>> steps;
  for (std::size_t t = 0; t < window.size(); ++t) steps.push_back(detail::batch_of_one(window, t));
  return steps;
}

template <typename T>
RnnOutput<T> rnn_forward(const ContextRNNParams<T>& p, std::span<const std::vector<T>> window) {
  auto trace = rnn_forward_batch(p, window_steps(window));
  RnnOutput<T> out;
  for (auto& h : trace.hidden) out.hidden.emplace_back(h.values().begin(), h.values().end());
  out.distribution.assign(trace.probs.values().begin(), trace.probs.values().end());
  return out;
}

template <typename T>
RnnOutput<T> rnn_forward(const ContextRNNParams<T>& p, const std::vector<std::vector<T>>& window) {
  return rnn_forward(p, std::span<const std::vector<T>>(window));
}

/// Gradients of cross-entropy(softmax(W_out h_T), target) for one window.
template <typename T>
ContextRNNParams<T> rnn_backward(const ContextRNNParams<T>& p,
                                 const std::vector<std::vector<T>>& window, int target) {
  Batch<T> batch{window_steps(std::span<const std::vector<T>>(window)), {target}};
  auto grads = p.zeros_like();
  batch_loss_and_gradients(p, batch, grads);
  return grads;
}

template <typename T>
std::vector<T> mlp_forward(const MLPParams<T>& p, std::span<const T> vector) {
  if (vector.size() != p.input_dim()) {
    throw ShapeError("mlp_forward: input of " + std::to_string(vector.size()) +
                     " values, expected " + std::to_string(p.input_dim()));
  }
  std::vector<Matrix<T>> steps{Matrix<T>::column(vector)};
  Matrix<T> probs = batch_probabilities(p, steps);
  return {probs.values().begin(), probs.values().end()};
}

template <typename T>
std::vector<T> mlp_forward(const MLPParams<T>& p, const std::vector<T>& vector) {
  return mlp_forward(p, std::span<const T>(vector));
}

/// Argmax of the class distribution; ties go to the lowest index.
template <typename Params, typename T>
std::size_t predict(const Params& p, const std::vector<std::vector<T>>& window) {
  Matrix<T> probs = batch_probabilities(p, window_steps(std::span<const std::vector<T>>(window)));
  return argmax(std::span<const T>(probs.values()));
}

// Classifier file.

enum class ModelKind : std::uint32_t { kRnn = 0, kMlp = 1 };

inline std::string_view kind_name(ModelKind k) { return k == ModelKind::kRnn ? "rnn" : "mlp"; }

inline ModelKind parse_kind(std::string_view s) {
  if (s == "rnn") return ModelKind::kRnn;
  if (s == "mlp") return ModelKind::kMlp;
  throw Error("unknown model kind '" + std::string(s) + "' (rnn|mlp)");
}

struct ClassifierConfig {
  ModelKind kind = ModelKind::kRnn;
  encoder::VectorMode mode = encoder::VectorMode::kAverage;
  std::size_t input_dim = 0;
  std::size_t hidden = kDefaultHidden;
  std::size_t context = 0;
  bool speaker = false;

  friend bool operator==(const ClassifierConfig&, const ClassifierConfig&) = default;
};

using AnyParams = std::variant<ContextRNNParams<float>, MLPParams<float>>;

struct SavedClassifier {
  ClassifierConfig config;
  corpus::LabelVocab labels;
  AnyParams params;
};

inline constexpr std::string_view kClassifierMagic = "CTXDA-CLF1";

inline std::string serialize_classifier(const SavedClassifier& c) {
  ByteWriter w;
  w.bytes(kClassifierMagic);
  w.u32(static_cast<std::uint32_t>(c.config.kind));
  w.u32(static_cast<std::uint32_t>(c.config.mode));
  w.u32(ByteWriter::checked_u32(c.config.input_dim));
  w.u32(ByteWriter::checked_u32(c.config.hidden));
  w.u32(ByteWriter::checked_u32(c.config.context));
  w.u32(c.config.speaker ? 1 : 0);
  w.u32(ByteWriter::checked_u32(c.labels.size()));
  for (const auto& l : c.labels.labels()) w.string(l);
  if (const auto* rnn = std::get_if<ContextRNNParams<float>>(&c.params)) {
    if (c.config.kind != ModelKind::kRnn) throw FormatError("classifier kind/params mismatch");
    w.section("W_h", rnn->w_h);
    w.section("I", rnn->w_in);
    w.section("b", rnn->b);
    w.section("W_out", rnn->w_out);
  } else {
    const auto& mlp = std::get<MLPParams<float>>(c.params);
    if (c.config.kind != ModelKind::kMlp) throw FormatError("classifier kind/params mismatch");
    w.section("W1", mlp.w1);
    w.section("b1", mlp.b1);
    w.section("W2", mlp.w2);
    w.section("b2", mlp.b2);
  }
  return w.buffer();
}

inline void save_classifier(const SavedClassifier& c, const std::string& path) {
  ByteWriter w;
  w.bytes(serialize_classifier(c));
  w.write_file(path);
}

inline SavedClassifier load_classifier(const std::string& path) {
  ByteReader r = ByteReader::from_file(path);
  r.expect_magic(kClassifierMagic);
  SavedClassifier c;
  const std::uint32_t kind = r.u32();
  if (kind > 1) throw FormatError(path + ": unknown model kind");
  c.config.kind = static_cast<ModelKind>(kind);
  c.config.mode = encoder::mode_from_tag(r.u32());
  c.config.input_dim = r.u32();
  c.config.hidden = r.u32();
  c.config.context = r.u32();
  c.config.speaker = r.u32() != 0;
  const std::size_t nlabels = r.u32();
  if (nlabels != corpus::kNumClasses) throw FormatError(path + ": label count is not 42");
  std::vector<std::string> labels;
  for (std::size_t i = 0; i < nlabels; ++i) labels.push_back(r.string());
  c.labels = corpus::LabelVocab(std::move(labels));
  auto sections = r.sections();
  const std::size_t din = c.config.input_dim, dh = c.config.hidden, k = nlabels;
  if (din == 0 || dh == 0) throw FormatError(path + ": zero model dimension");
  if (c.config.kind == ModelKind::kRnn) {
    ContextRNNParams<float> p;
    p.w_h = take_section<float>(sections, "W_h", dh, dh, path);
    p.w_in = take_section<float>(sections, "I", dh, din, path);
    p.b = take_section<float>(sections, "b", dh, 1, path);
    p.w_out = take_section<float>(sections, "W_out", k, dh, path);
    c.params = std::move(p);
  } else {
    MLPParams<float> p;
    p.w1 = take_section<float>(sections, "W1", dh, din, path);
    p.b1 = take_section<float>(sections, "b1", dh, 1, path);
    p.w2 = take_section<float>(sections, "W2", k, dh, path);
    p.b2 = take_section<float>(sections, "b2", k, 1, path);
    c.params = std::move(p);
  }
  if (!sections.empty()) throw FormatError(path + ": unexpected section " + sections.begin()->first);
  return c;
}

}  // namespace ctxda::classifier
