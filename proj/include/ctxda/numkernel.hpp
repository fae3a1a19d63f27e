// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ctxda/error.hpp"
#include "ctxda/matrix.hpp"
#include "ctxda/rng.hpp"

namespace ctxda {

template <typename T>
using Vector = std::vector<T>;

template <typename T>
inline T sigmoid(T x) noexcept {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
void require_finite(std::span<const T> values, const char* what) {
  for (T v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string(what) + ": non-finite value");
  }
}

/// Probability distribution over logits, computed after subtracting the max.
template <typename T>
Vector<T> softmax(std::span<const T> logits) {
  if (logits.empty()) throw ShapeError("softmax: empty input");
  require_finite(logits, "softmax");
  const T peak = *std::max_element(logits.begin(), logits.end());
  Vector<T> out(logits.size());
  T total = T(0);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - peak);
    total += out[i];
  }
  for (T& v : out) v /= total;
  return out;
}

template <typename T>
Vector<T> softmax(const Vector<T>& logits) {
  return softmax(std::span<const T>(logits));
}

/// Column-wise softmax of a (classes x batch) matrix, in place.
template <typename T>
void softmax_columns(Matrix<T>& logits) {
  require_finite(logits, "softmax");
  const std::size_t k = logits.rows(), n = logits.cols();
  std::vector<T> peak(n), total(n, T(0));
  for (std::size_t j = 0; j < n; ++j) peak[j] = logits(0, j);
  for (std::size_t i = 1; i < k; ++i) {
    for (std::size_t j = 0; j < n; ++j) peak[j] = std::max(peak[j], logits(i, j));
  }
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      logits(i, j) = std::exp(logits(i, j) - peak[j]);
      total[j] += logits(i, j);
    }
  }
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < n; ++j) logits(i, j) /= total[j];
  }
}

inline constexpr double kProbabilityFloor = 1e-12;

/// -ln p[target], with p clamped from below at 1e-12.
template <typename T>
T cross_entropy(std::span<const T> probabilities, std::size_t target) {
  if (target >= probabilities.size()) {
    throw ShapeError("cross_entropy: class " + std::to_string(target) + " out of range " +
                     std::to_string(probabilities.size()));
  }
  const T p = std::max(probabilities[target], static_cast<T>(kProbabilityFloor));
  return -std::log(p);
}

template <typename T>
T cross_entropy(const Vector<T>& probabilities, std::size_t target) {
  return cross_entropy(std::span<const T>(probabilities), target);
}

/// Lowest index among the maxima.
template <typename T>
std::size_t argmax(std::span<const T> values) {
  if (values.empty()) throw ShapeError("argmax: empty input");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

template <typename T>
double global_norm(std::span<const Matrix<T>* const> tensors) {
  double sq = 0.0;
  for (const Matrix<T>* m : tensors) {
    for (T v : m->values()) sq += static_cast<double>(v) * static_cast<double>(v);
  }
  return std::sqrt(sq);
}

/// Rescales all gradients together when their joint L2 norm exceeds
/// `max_norm`. Returns the norm measured before clipping.
template <typename T>
double clip_global_norm(std::span<Matrix<T>* const> gradients, double max_norm) {
  if (!(max_norm > 0.0)) throw NumericError("clip_global_norm: max_norm must be positive");
  for (const Matrix<T>* g : gradients) require_finite(*g, "clip_global_norm");
  std::vector<const Matrix<T>*> view(gradients.begin(), gradients.end());
  const double norm = global_norm<T>(view);
  if (norm > max_norm) {
    const T scale = static_cast<T>(max_norm / norm);
    for (Matrix<T>* g : gradients) {
      for (T& v : g->values()) v *= scale;
    }
  }
  return norm;
}

template <typename T>
std::vector<Matrix<T>> clip_global_norm(std::vector<Matrix<T>> gradients, double max_norm) {
  std::vector<Matrix<T>*> ptrs;
  for (auto& g : gradients) ptrs.push_back(&g);
  clip_global_norm<T>(ptrs, max_norm);
  return gradients;
}

/// Adam moments and hyperparameters for one parameter set.
template <typename T>
struct AdamState {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t step = 0;
  std::vector<Matrix<T>> first_moment;
  std::vector<Matrix<T>> second_moment;
};

/// One bias-corrected Adam update. Moments are allocated (as zeros) on the
/// first call.
template <typename T>
void adam_step(std::span<Matrix<T>* const> params, std::span<const Matrix<T>* const> gradients,
               AdamState<T>& state) {
  if (params.size() != gradients.size()) {
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " parameters but " +
                     std::to_string(gradients.size()) + " gradients");
  }
  if (state.first_moment.empty()) {
    if (state.step != 0) throw ShapeError("adam_step: moments missing after step 0");
    for (const Matrix<T>* p : params) {
      state.first_moment.emplace_back(p->rows(), p->cols());
      state.second_moment.emplace_back(p->rows(), p->cols());
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw ShapeError("adam_step: state tracks a different parameter list");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_same_shape(*params[i], *gradients[i], "adam_step");
    require_same_shape(*params[i], state.first_moment[i], "adam_step");
    require_finite(*gradients[i], "adam_step");
  }

  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);
  const T b1 = static_cast<T>(state.beta1), b2 = static_cast<T>(state.beta2);
  const T lr = static_cast<T>(state.learning_rate);
  const T c1 = static_cast<T>(correction1), c2 = static_cast<T>(correction2);
  const T eps = static_cast<T>(state.epsilon);

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i]->values();
    auto g = gradients[i]->values();
    auto m = state.first_moment[i].values();
    auto v = state.second_moment[i].values();
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = b1 * m[j] + (T(1) - b1) * g[j];
      v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
      const T m_hat = m[j] / c1;
      const T v_hat = v[j] / c2;
      w[j] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
    require_finite(*params[i], "adam_step");
  }
}

/// Fills with draws from U[-1/sqrt(fan_in), 1/sqrt(fan_in)].
template <typename T>
void init_uniform_fan_in(Matrix<T>& m, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (T& v : m.values()) v = static_cast<T>(rng.uniform(-bound, bound));
}

}  // namespace ctxda
