// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "ctxda/classifier.hpp"
#include "ctxda/corpus.hpp"
#include "ctxda/encoder.hpp"
#include "ctxda/error.hpp"
#include "ctxda/matrix.hpp"
#include "ctxda/numkernel.hpp"
#include "ctxda/rng.hpp"

namespace ctxda::trainer {

using classifier::Batch;
using classifier::ModelKind;
using corpus::ContextWindow;

/// Utterance vectors of a whole dataset plus what is needed to turn a
/// window into classifier input.
struct Examples {
  Matrix<float> vectors;                  // one row per utterance, corpus order
  std::vector<corpus::Speaker> speakers;  // per row
  std::vector<std::size_t> offsets;       // first row of each conversation
  bool speaker_ids = false;

  static Examples from(const corpus::Dataset& ds, Matrix<float> vectors, bool speaker_ids) {
    if (vectors.rows() != ds.utterance_count()) {
      throw ShapeError("vector table has " + std::to_string(vectors.rows()) +
                       " rows for " + std::to_string(ds.utterance_count()) + " utterances");
    }
    Examples ex;
    ex.vectors = std::move(vectors);
    ex.offsets = ds.offsets();
    for (const auto& c : ds.conversations) {
      for (const auto& u : c.utterances) ex.speakers.push_back(u.speaker);
    }
    ex.speaker_ids = speaker_ids;
    return ex;
  }

  std::size_t input_dim() const noexcept {
    return vectors.cols() + (speaker_ids ? encoder::kSpeakerDims : 0);
  }

  std::size_t row(const ContextWindow& w, std::size_t t) const {
    return offsets.at(w.conversation) + w.begin + t;
  }

  /// Input for all windows, which must share one length.
  template <typename T = float>
  Batch<T> batch(std::span<const ContextWindow> windows) const {
    if (windows.empty()) throw ShapeError("batch: no windows");
    const std::size_t len = windows.front().length(), n = windows.size();
    const std::size_t base = vectors.cols();
    Batch<T> out;
    for (std::size_t t = 0; t < len; ++t) out.steps.emplace_back(input_dim(), n);
    for (std::size_t b = 0; b < n; ++b) {
      const ContextWindow& w = windows[b];
      if (w.length() != len) throw ShapeError("batch: windows differ in length");
      out.targets.push_back(w.label);
      for (std::size_t t = 0; t < len; ++t) {
        const std::size_t r = row(w, t);
        Matrix<T>& step = out.steps[t];
        auto src = vectors.row(r);
        for (std::size_t k = 0; k < base; ++k) step(k, b) = static_cast<T>(src[k]);
        if (speaker_ids) {
          step(base, b) = speakers[r] == corpus::Speaker::A ? T(1) : T(0);
          step(base + 1, b) = speakers[r] == corpus::Speaker::B ? T(1) : T(0);
        }
      }
    }
    return out;
  }

  /// The window as a list of vectors (for the single-window API).
  template <typename T = float>
  std::vector<std::vector<T>> window_vectors(const ContextWindow& w) const {
    Batch<T> b = batch<T>(std::span<const ContextWindow>(&w, 1));
    std::vector<std::vector<T>> out;
    for (auto& s : b.steps) out.emplace_back(s.values().begin(), s.values().end());
    return out;
  }
};

struct TrainConfig {
  double learning_rate = 1e-4;
  double clip_norm = 1.0;
  double validation_fraction = 0.2;
  std::size_t patience = 5;
  std::size_t max_epochs = 100;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  std::size_t context = 0;
  bool speaker = false;
  encoder::VectorMode mode = encoder::VectorMode::kAverage;
  std::size_t hidden = classifier::kDefaultHidden;
  ModelKind kind = ModelKind::kRnn;

  void validate() const {
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
      throw Error("validation fraction must be in (0,1)");
    }
    if (!(learning_rate > 0.0) || !(clip_norm > 0.0)) {
      throw Error("learning rate and clip norm must be positive");
    }
    if (max_epochs == 0 || batch_size == 0 || hidden == 0) {
      throw Error("max_epochs, batch_size and hidden must be positive");
    }
  }

  /// Linear decay: learning_rate at epoch 0, zero at max_epochs.
  double learning_rate_at(std::size_t epoch) const {
    if (epoch >= max_epochs) return 0.0;
    return learning_rate * (1.0 - static_cast<double>(epoch) / static_cast<double>(max_epochs));
  }
};

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
};

/// `epoch, train_loss, val_loss, lr` per line.
inline std::string format_log(const std::vector<EpochLog>& log) {
  std::string out;
  char line[128];
  for (const auto& e : log) {
    std::snprintf(line, sizeof line, "%zu, %.9g, %.9g, %.9g\n", e.epoch, e.train_loss, e.val_loss,
                  e.lr);
    out += line;
  }
  return out;
}

template <typename Params>
struct TrainOutcome {
  Params params;
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  std::vector<std::string> warnings;
};

namespace detail {

/// Windows grouped by length and cut into batches; the grouping is
/// shuffled with `rng`, then batch order is shuffled too.
inline std::vector<std::vector<ContextWindow>> make_batches(std::vector<ContextWindow> windows,
                                                            std::size_t batch_size, Rng& rng) {
  rng.shuffle(std::span(windows));
  std::stable_sort(windows.begin(), windows.end(),
                   [](const ContextWindow& a, const ContextWindow& b) {
                     return a.length() < b.length();
                   });
  std::vector<std::vector<ContextWindow>> batches;
  for (std::size_t i = 0; i < windows.size();) {
    std::vector<ContextWindow> group;
    const std::size_t len = windows[i].length();
    while (i < windows.size() && windows[i].length() == len && group.size() < batch_size) {
      group.push_back(windows[i++]);
    }
    batches.push_back(std::move(group));
  }
  rng.shuffle(std::span(batches));
  return batches;
}

/// Windows grouped by length, in original order within a group.
inline std::vector<std::vector<std::size_t>> groups_by_length(
    std::span<const ContextWindow> windows, std::size_t max_group = 256) {
  std::map<std::size_t, std::vector<std::size_t>> by_len;
  for (std::size_t i = 0; i < windows.size(); ++i) by_len[windows[i].length()].push_back(i);
  std::vector<std::vector<std::size_t>> out;
  for (auto& [len, idx] : by_len) {
    for (std::size_t s = 0; s < idx.size(); s += max_group) {
      out.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(s),
                       idx.begin() + static_cast<std::ptrdiff_t>(std::min(idx.size(), s + max_group)));
    }
  }
  return out;
}

template <typename Params>
Params initialize(const TrainConfig& cfg, std::size_t input_dim, Rng& rng) {
  return Params::initialize(input_dim, cfg.hidden, rng);
}

}  // namespace detail

/// Class distribution for every window (classes x windows), forward only.
template <typename Params>
Matrix<float> predict_distributions(const Params& params, const Examples& ex,
                                    std::span<const ContextWindow> windows) {
  Matrix<float> out(params.classes(), std::max<std::size_t>(1, windows.size()));
  for (const auto& group : detail::groups_by_length(windows)) {
    std::vector<ContextWindow> ws;
    for (auto i : group) ws.push_back(windows[i]);
    auto batch = ex.batch<float>(ws);
    Matrix<float> probs = classifier::batch_probabilities(params, batch.steps);
    for (std::size_t b = 0; b < group.size(); ++b) {
      for (std::size_t k = 0; k < params.classes(); ++k) out(k, group[b]) = probs(k, b);
    }
  }
  return out;
}

template <typename Params>
double mean_loss(const Params& params, const Examples& ex, std::span<const ContextWindow> windows) {
  if (windows.empty()) return 0.0;
  Matrix<float> probs = predict_distributions(params, ex, windows);
  double total = 0.0;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    total -= std::log(std::max(static_cast<double>(probs(windows[i].label, i)), kProbabilityFloor));
  }
  return total / static_cast<double>(windows.size());
}

/// Adam with global-norm clipping and linear learning-rate decay. A seeded
/// 20% of the windows is held out; training stops once validation loss has
/// not improved for `patience` consecutive epochs (at least one) and the
/// best-validation parameters are returned.
template <typename Params>
TrainOutcome<Params> train_classifier(const Examples& ex, const std::vector<ContextWindow>& windows,
                                      const TrainConfig& cfg) {
  cfg.validate();
  if (windows.empty()) throw Error("train_classifier: empty training set");
  Rng rng(cfg.seed);
  TrainOutcome<Params> out{detail::initialize<Params>(cfg, ex.input_dim(), rng), {}, 0, 0.0, {}};

  const bool one_class = std::all_of(windows.begin(), windows.end(), [&](const ContextWindow& w) {
    return w.label == windows.front().label;
  });
  if (one_class) out.warnings.push_back("all training windows share one label");

  std::vector<ContextWindow> shuffled = windows;
  rng.shuffle(std::span(shuffled));
  std::size_t n_val = static_cast<std::size_t>(
      std::llround(cfg.validation_fraction * static_cast<double>(shuffled.size())));
  if (shuffled.size() >= 2) n_val = std::clamp<std::size_t>(n_val, 1, shuffled.size() - 1);
  else n_val = 0;
  std::vector<ContextWindow> val(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<ContextWindow> train(shuffled.begin() + static_cast<std::ptrdiff_t>(n_val), shuffled.end());
  if (val.empty()) out.warnings.push_back("no validation windows; early stopping uses training loss");

  Params params = out.params;
  Params grads = params.zeros_like();
  auto param_ptrs = params.tensors();
  auto grad_ptrs = grads.tensors();
  std::vector<const Matrix<float>*> grad_view(grad_ptrs.begin(), grad_ptrs.end());
  AdamState<float> adam;

  double best = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    adam.learning_rate = cfg.learning_rate_at(epoch);
    double total = 0.0;
    for (const auto& group : detail::make_batches(train, cfg.batch_size, rng)) {
      auto batch = ex.batch<float>(group);
      for (auto* g : grad_ptrs) g->set_zero();
      const double loss = classifier::batch_loss_and_gradients(params, batch, grads);
      if (!std::isfinite(loss)) throw NumericError("train_classifier: non-finite loss");
      total += loss * static_cast<double>(group.size());
      clip_global_norm<float>(grad_ptrs, cfg.clip_norm);
      adam_step<float>(param_ptrs, grad_view, adam);
    }
    EpochLog entry;
    entry.epoch = epoch;
    entry.train_loss = total / static_cast<double>(train.size());
    entry.val_loss = val.empty() ? entry.train_loss : mean_loss(params, ex, val);
    entry.lr = adam.learning_rate;
    out.log.push_back(entry);

    if (entry.val_loss < best) {
      best = entry.val_loss;
      out.params = params;
      out.best_epoch = epoch;
      stale = 0;
    } else if (++stale >= std::max<std::size_t>(cfg.patience, 1)) {
      break;
    }
  }
  out.best_val_loss = best;
  return out;
}

struct EvalResult {
  double accuracy = 0.0;
  std::size_t total = 0;
  std::size_t correct = 0;
  std::vector<std::size_t> confusion;  // row = true class, column = predicted
  std::size_t classes = 0;

  std::size_t at(std::size_t truth, std::size_t predicted) const {
    return confusion[truth * classes + predicted];
  }
};

template <typename Params>
EvalResult evaluate(const Params& params, const Examples& ex, std::span<const ContextWindow> windows) {
  EvalResult r;
  r.classes = params.classes();
  r.confusion.assign(r.classes * r.classes, 0);
  if (windows.empty()) return r;
  Matrix<float> probs = predict_distributions(params, ex, windows);
  std::vector<float> column(r.classes);
  for (std::size_t i = 0; i < windows.size(); ++i) {
    for (std::size_t k = 0; k < r.classes; ++k) column[k] = probs(k, i);
    const std::size_t pred = argmax(std::span<const float>(column));
    const auto truth = static_cast<std::size_t>(windows[i].label);
    ++r.confusion[truth * r.classes + pred];
    if (pred == truth) ++r.correct;
  }
  r.total = windows.size();
  r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.total);
  return r;
}

/// Evaluates a saved classifier after checking its label vocabulary.
inline EvalResult evaluate(const classifier::SavedClassifier& clf, const corpus::LabelVocab& labels,
                           const Examples& ex, std::span<const ContextWindow> windows) {
  if (!(clf.labels == labels)) throw Error("evaluate: classifier and corpus label vocabularies differ");
  return std::visit([&](const auto& p) { return evaluate(p, ex, windows); }, clf.params);
}

/// Most frequent training label (lowest index on ties).
inline int majority_label(std::span<const int> train_labels, std::size_t classes) {
  if (train_labels.empty()) throw Error("majority baseline: empty training set");
  std::vector<std::size_t> counts(classes, 0);
  for (int l : train_labels) ++counts.at(static_cast<std::size_t>(l));
  return static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

inline double majority_baseline(std::span<const int> train_labels, std::span<const int> test_labels,
                                std::size_t classes = corpus::kNumClasses) {
  const int label = majority_label(train_labels, classes);
  if (test_labels.empty()) return 0.0;
  const auto hits = std::count(test_labels.begin(), test_labels.end(), label);
  return static_cast<double>(hits) / static_cast<double>(test_labels.size());
}

inline std::vector<int> labels_of(std::span<const ContextWindow> windows) {
  std::vector<int> out;
  for (const auto& w : windows) out.push_back(w.label);
  return out;
}

/// Mean and sample (n-1) standard deviation; SD is 0 for a single value.
inline std::pair<double, double> mean_and_sd(std::span<const double> values) {
  if (values.empty()) return {0.0, 0.0};
  const double mean =
      std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  if (values.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / static_cast<double>(values.size() - 1))};
}

struct RunResult {
  std::vector<double> accuracies;
  double mean = 0.0;
  double sd = 0.0;
  TrainConfig config;

  static RunResult from(std::vector<double> accuracies, const TrainConfig& cfg) {
    RunResult r;
    r.accuracies = std::move(accuracies);
    std::tie(r.mean, r.sd) = mean_and_sd(r.accuracies);
    r.config = cfg;
    return r;
  }
};

/// Trains and evaluates one model of the configured kind.
inline double train_and_test(const Examples& ex, const std::vector<ContextWindow>& train,
                             const std::vector<ContextWindow>& test, const TrainConfig& cfg) {
  if (cfg.kind == ModelKind::kRnn) {
    auto o = train_classifier<classifier::ContextRNNParams<float>>(ex, train, cfg);
    return evaluate(o.params, ex, test).accuracy;
  }
  auto o = train_classifier<classifier::MLPParams<float>>(ex, train, cfg);
  return evaluate(o.params, ex, test).accuracy;
}

/// `repeats` independent runs with seeds seed+0 .. seed+repeats-1, run on
/// up to `threads` threads; results are ordered by run index.
inline RunResult run_experiment(const corpus::Dataset& ds, const Matrix<float>& vectors,
                                const TrainConfig& cfg, std::size_t repeats = 10,
                                std::size_t threads = 1) {
  if (repeats == 0) throw Error("run_experiment: repeats must be positive");
  const Examples ex = Examples::from(ds, vectors, cfg.speaker);
  const auto train = ds.windows(corpus::Split::kTrain, cfg.context);
  const auto test = ds.windows(corpus::Split::kTest, cfg.context);
  if (test.empty()) throw Error("run_experiment: empty test split");

  std::vector<double> acc(repeats, 0.0);
  auto worker = [&](std::size_t first, std::size_t stride) {
    for (std::size_t r = first; r < repeats; r += stride) {
      TrainConfig c = cfg;
      c.seed = cfg.seed + r;
      acc[r] = train_and_test(ex, train, test, c);
    }
  };
  threads = std::max<std::size_t>(1, std::min(threads, repeats));
  if (threads == 1) {
    worker(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker, t, threads);
  }
  return RunResult::from(std::move(acc), cfg);
}

struct ReportRow {
  std::string setup;
  double accuracy_percent = 0.0;
  double sd_percent = 0.0;
  bool has_sd = true;
};

/// Plain-text table: setup, mean accuracy (%), SD.
inline std::string format_report(const std::vector<ReportRow>& rows, const std::string& header_line) {
  std::string out = "# " + header_line + "\n";
  out += "# SD is the sample standard deviation (n-1 denominator) over runs.\n";
  char line[256];
  std::snprintf(line, sizeof line, "%-40s %8s %6s\n", "Model setup", "Acc.(%)", "SD");
  out += line;
  for (const auto& r : rows) {
    if (r.has_sd) {
      std::snprintf(line, sizeof line, "%-40s %8.2f %6.2f\n", r.setup.c_str(), r.accuracy_percent,
                    r.sd_percent);
    } else {
      std::snprintf(line, sizeof line, "%-40s %8.2f %6s\n", r.setup.c_str(), r.accuracy_percent, "");
    }
    out += line;
  }
  return out;
}

inline std::string setup_name(const TrainConfig& cfg) {
  std::string s;
  if (cfg.kind == ModelKind::kMlp) {
    s = "MLP (without context)";
  } else if (cfg.context == 0) {
    s = "RNN (without context)";
  } else {
    s = "RNN (" + std::to_string(cfg.context) + (cfg.context == 1 ? " utt." : " utts.") + " in context)";
  }
  if (cfg.speaker) s += " w. SpeakerID";
  return s;
}

}  // namespace ctxda::trainer
