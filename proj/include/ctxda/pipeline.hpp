// SPDX-License-Identifier: Apache-2.0
#pragma once

// File-level operations behind the command-line tool. Every operation that
// writes files also writes a JSON snapshot of its configuration next to them.
// Snapshots carry no timestamps so identical runs produce identical files.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctxda/charlm.hpp"
#include "ctxda/classifier.hpp"
#include "ctxda/corpus.hpp"
#include "ctxda/csv.hpp"
#include "ctxda/encoder.hpp"
#include "ctxda/synthetic.hpp"
#include "ctxda/trainer.hpp"

namespace ctxda::pipeline {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw Error("cannot write " + path.string());
}

inline std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_snapshot(const fs::path& path, const ordered_json& j) {
  write_text(path, j.dump(2) + "\n");
}

inline fs::path with_suffix(const fs::path& p, std::string_view suffix) {
  return fs::path(p.string() + std::string(suffix));
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// prep

struct PrepSummary {
  std::size_t conversations = 0;
  std::size_t utterances = 0;
  std::size_t train = 0;
  std::size_t test = 0;
  std::size_t excluded = 0;
  std::size_t fallback_tags = 0;
};

inline PrepSummary summarize(const corpus::Dataset& ds, std::size_t fallback_tags) {
  return {ds.conversations.size(), ds.utterance_count(), ds.count(corpus::Split::kTrain),
          ds.count(corpus::Split::kTest), ds.count(corpus::Split::kExcluded), fallback_tags};
}

inline ordered_json to_json(const PrepSummary& s) {
  return {{"conversations", s.conversations}, {"utterances", s.utterances},
          {"train_conversations", s.train},   {"test_conversations", s.test},
          {"excluded_conversations", s.excluded}, {"fallback_tags", s.fallback_tags}};
}

struct PrepSwdaOptions {
  std::string swda;
  std::string map;  // empty: built-in 42-class map
  std::string test_ids;
  std::string exclude_ids;
  std::string out;
};

inline PrepSummary prep_swda(const PrepSwdaOptions& o) {
  const corpus::TagMapper mapper =
      o.map.empty() ? corpus::TagMapper::standard() : corpus::TagMapper::from_file(o.map);
  auto parsed = corpus::parse_corpus(o.swda, mapper);
  const auto test_ids = corpus::read_id_list(o.test_ids);
  const auto excluded =
      o.exclude_ids.empty() ? std::vector<std::string>{} : corpus::read_id_list(o.exclude_ids);
  corpus::Dataset ds;
  ds.labels = mapper.vocab();
  ds.splits = corpus::assign_splits(parsed.conversations, test_ids, excluded);
  ds.conversations = std::move(parsed.conversations);
  corpus::save_dataset(ds, o.out);
  const PrepSummary s = summarize(ds, parsed.fallback_tags);
  write_snapshot(fs::path(o.out) / "config.json",
                 {{"command", "prep"}, {"source", "swda"}, {"swda", o.swda}, {"map", o.map},
                  {"test_ids", o.test_ids}, {"exclude_ids", o.exclude_ids},
                  {"normalization", corpus::NormalizeConfig{}.tag()}, {"summary", to_json(s)}});
  return s;
}

inline PrepSummary prep_synthetic(const corpus::SyntheticConfig& cfg, const std::string& out) {
  const corpus::Dataset ds = corpus::generate_synthetic(cfg);
  corpus::save_dataset(ds, out);
  const PrepSummary s = summarize(ds, 0);
  write_snapshot(fs::path(out) / "config.json",
                 {{"command", "prep"}, {"source", "synthetic"}, {"conversations", cfg.conversations},
                  {"min_length", cfg.min_length}, {"max_length", cfg.max_length},
                  {"test_every", cfg.test_every}, {"seed", cfg.seed}, {"summary", to_json(s)}});
  return s;
}

// train-lm

inline charlm::LMTrainReport train_lm_file(const std::string& corpus_path,
                                           const charlm::LMTrainConfig& cfg,
                                           const std::string& out) {
  const std::string text = read_bytes(corpus_path);
  const auto bytes = std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size());
  auto trained = charlm::train_lm(bytes, cfg);
  charlm::save_lm(trained.params, out);
  const auto& r = trained.report;
  write_snapshot(with_suffix(out, ".config.json"),
                 {{"command", "train-lm"}, {"corpus", corpus_path}, {"hidden", cfg.hidden},
                  {"embed", cfg.embed}, {"seq_len", cfg.sequence_length},
                  {"batch", cfg.batch_size}, {"steps", cfg.steps}, {"seed", cfg.seed},
                  {"learning_rate", cfg.learning_rate}, {"clip_norm", cfg.clip_norm},
                  {"heldout_fraction", cfg.heldout_fraction},
                  {"train_bytes", r.train_bytes}, {"heldout_bytes", r.heldout_bytes},
                  {"initial_heldout_bpc", r.initial_heldout_bpc},
                  {"final_heldout_bpc", r.final_heldout_bpc}});
  return trained.report;
}

// encode

struct EncodedCorpus {
  corpus::Dataset dataset;
  encoder::VectorTable table;
};

inline fs::path utterance_sidecar(const fs::path& vecs) { return with_suffix(vecs, ".utterances.tsv"); }
inline fs::path labels_sidecar(const fs::path& vecs) { return with_suffix(vecs, ".labels.txt"); }

inline std::vector<std::string> dataset_texts(const corpus::Dataset& ds) {
  std::vector<std::string> texts;
  for (const auto& c : ds.conversations) {
    for (const auto& u : c.utterances) texts.push_back(u.clean_text);
  }
  return texts;
}

/// Encodes a prepared dataset directory into `out` and copies the dataset
/// next to it so later commands need only the vector file.
inline encoder::EncodeResult encode_dataset(const std::string& lm_path, const std::string& data_dir,
                                            encoder::VectorMode mode, const std::string& out,
                                            const encoder::EncodeOptions& opts = {}) {
  const auto params = charlm::load_lm<float>(lm_path);
  const corpus::Dataset ds = corpus::load_dataset(data_dir);
  const auto texts = dataset_texts(ds);
  auto result = encoder::encode_corpus(params, texts, mode, out, opts);
  const fs::path dir(data_dir);
  fs::copy_file(dir / "utterances.tsv", utterance_sidecar(out), fs::copy_options::overwrite_existing);
  fs::copy_file(dir / "labels.txt", labels_sidecar(out), fs::copy_options::overwrite_existing);
  write_snapshot(with_suffix(out, ".config.json"),
                 {{"command", "encode"}, {"lm", lm_path}, {"data", data_dir},
                  {"mode", encoder::mode_name(mode)}, {"normalization", opts.normalization},
                  {"batch", opts.batch}, {"key", hex64(result.table.key)},
                  {"utterances", result.table.count()}, {"dim", result.table.dim()}});
  return result;
}

inline EncodedCorpus load_encoded(const std::string& vecs) {
  EncodedCorpus e;
  e.table = encoder::load_table(vecs);
  e.dataset = corpus::load_dataset(utterance_sidecar(vecs), labels_sidecar(vecs));
  if (e.table.count() != e.dataset.utterance_count()) {
    throw FormatError(vecs + ": " + std::to_string(e.table.count()) + " vectors for " +
                      std::to_string(e.dataset.utterance_count()) + " utterances");
  }
  return e;
}

// train

inline ordered_json to_json(const trainer::TrainConfig& c) {
  return {{"kind", classifier::kind_name(c.kind)}, {"mode", encoder::mode_name(c.mode)},
          {"context", c.context}, {"speaker", c.speaker}, {"hidden", c.hidden},
          {"learning_rate", c.learning_rate}, {"clip_norm", c.clip_norm},
          {"validation_fraction", c.validation_fraction}, {"patience", c.patience},
          {"max_epochs", c.max_epochs}, {"batch_size", c.batch_size}, {"seed", c.seed}};
}

struct TrainSummary {
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  std::vector<std::string> warnings;
};

/// Trains on the train split and writes the classifier, `<out>.train.log`
/// and `<out>.config.json`.
inline TrainSummary train_file(const std::string& vecs, trainer::TrainConfig cfg,
                               const std::string& out) {
  const EncodedCorpus e = load_encoded(vecs);
  cfg.mode = e.table.mode;
  const auto ex = trainer::Examples::from(e.dataset, e.table.rows, cfg.speaker);
  const auto windows = e.dataset.windows(corpus::Split::kTrain, cfg.context);

  classifier::SavedClassifier saved;
  saved.config = {cfg.kind, cfg.mode, ex.input_dim(), cfg.hidden, cfg.context, cfg.speaker};
  saved.labels = e.dataset.labels;
  TrainSummary s;
  std::vector<trainer::EpochLog> log;
  auto finish = [&](auto&& outcome) {
    log = outcome.log;
    s.best_epoch = outcome.best_epoch;
    s.best_val_loss = outcome.best_val_loss;
    s.warnings = outcome.warnings;
    saved.params = std::move(outcome.params);
  };
  if (cfg.kind == classifier::ModelKind::kRnn) {
    finish(trainer::train_classifier<classifier::ContextRNNParams<float>>(ex, windows, cfg));
  } else {
    finish(trainer::train_classifier<classifier::MLPParams<float>>(ex, windows, cfg));
  }
  s.epochs_run = log.size();
  classifier::save_classifier(saved, out);
  write_text(with_suffix(out, ".train.log"), trainer::format_log(log));
  ordered_json snap{{"command", "train"}, {"vecs", vecs}, {"vecs_key", hex64(e.table.key)}};
  snap["config"] = to_json(cfg);
  snap["train_windows"] = windows.size();
  snap["epochs_run"] = s.epochs_run;
  snap["best_epoch"] = s.best_epoch;
  snap["best_val_loss"] = s.best_val_loss;
  write_snapshot(with_suffix(out, ".config.json"), snap);
  return s;
}

// eval

struct EvalSummary {
  trainer::EvalResult result;
  double majority_accuracy = 0.0;
  std::string majority_label;
};

inline trainer::Examples examples_for(const classifier::SavedClassifier& clf, const EncodedCorpus& e,
                                      const std::string& vecs) {
  if (clf.config.mode != e.table.mode) {
    throw Error(vecs + ": vectors are '" + std::string(encoder::mode_name(e.table.mode)) +
                "' but the classifier expects '" + std::string(encoder::mode_name(clf.config.mode)) + "'");
  }
  auto ex = trainer::Examples::from(e.dataset, e.table.rows, clf.config.speaker);
  if (ex.input_dim() != clf.config.input_dim) {
    throw ShapeError("classifier input dimension " + std::to_string(clf.config.input_dim) +
                     " does not match vectors (" + std::to_string(ex.input_dim()) + ")");
  }
  return ex;
}

inline EvalSummary eval_file(const std::string& clf_path, const std::string& vecs, corpus::Split split) {
  const auto clf = classifier::load_classifier(clf_path);
  const EncodedCorpus e = load_encoded(vecs);
  const auto ex = examples_for(clf, e, vecs);
  const auto windows = e.dataset.windows(split, clf.config.context);
  if (windows.empty()) throw Error("no utterances in split '" + std::string(corpus::split_name(split)) + "'");
  EvalSummary s;
  s.result = trainer::evaluate(clf, e.dataset.labels, ex, windows);
  const auto train_labels = trainer::labels_of(e.dataset.windows(corpus::Split::kTrain, 0));
  if (!train_labels.empty()) {
    const auto test_labels = trainer::labels_of(windows);
    s.majority_accuracy = trainer::majority_baseline(train_labels, test_labels);
    s.majority_label = e.dataset.labels.name(trainer::majority_label(train_labels, corpus::kNumClasses));
  }
  return s;
}

// experiment

struct ExperimentOptions {
  std::string vecs;
  std::vector<std::size_t> contexts{0, 1, 2, 3, 4};
  std::size_t repeats = 10;
  std::uint64_t seed = 0;
  bool speaker = false;
  bool mlp = false;  // add an MLP row
  std::size_t threads = 1;
  std::string out_dir = "runs";
  trainer::TrainConfig base;  // hidden, epochs, patience, ...
};

struct ExperimentReport {
  fs::path dir;
  std::vector<trainer::RunResult> results;
  double majority_accuracy = 0.0;
  std::string text;
};

inline std::string local_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  localtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%d %H:%M:%S", &tm);
  return buf;
}

inline std::vector<trainer::TrainConfig> experiment_configs(const ExperimentOptions& o,
                                                            encoder::VectorMode mode) {
  std::vector<trainer::TrainConfig> out;
  auto make = [&](classifier::ModelKind kind, std::size_t context) {
    trainer::TrainConfig c = o.base;
    c.kind = kind;
    c.context = context;
    c.speaker = o.speaker;
    c.seed = o.seed;
    c.mode = mode;
    return c;
  };
  if (o.mlp) out.push_back(make(classifier::ModelKind::kMlp, 0));
  for (auto n : o.contexts) out.push_back(make(classifier::ModelKind::kRnn, n));
  return out;
}

/// One run_experiment per configured setup; writes report.txt,
/// results.json and config.json under <out_dir>/<config hash>/.
inline ExperimentReport experiment_file(const ExperimentOptions& o) {
  if (o.contexts.empty() && !o.mlp) throw Error("experiment: nothing to run");
  const EncodedCorpus e = load_encoded(o.vecs);
  const auto configs = experiment_configs(o, e.table.mode);

  ordered_json snap{{"command", "experiment"}, {"vecs", o.vecs}, {"vecs_key", hex64(e.table.key)},
                    {"repeats", o.repeats}, {"seed", o.seed}};
  snap["setups"] = ordered_json::array();
  for (const auto& c : configs) snap["setups"].push_back(to_json(c));
  Fnv1a h;
  h.update(snap.dump());

  ExperimentReport rep;
  rep.dir = fs::path(o.out_dir) / hex64(h.digest());
  const auto train_labels = trainer::labels_of(e.dataset.windows(corpus::Split::kTrain, 0));
  const auto test_labels = trainer::labels_of(e.dataset.windows(corpus::Split::kTest, 0));
  rep.majority_accuracy = trainer::majority_baseline(train_labels, test_labels);

  std::vector<trainer::ReportRow> rows;
  ordered_json results = ordered_json::array();
  for (const auto& c : configs) {
    auto r = trainer::run_experiment(e.dataset, e.table.rows, c, o.repeats, o.threads);
    rows.push_back({trainer::setup_name(c), 100.0 * r.mean, 100.0 * r.sd, true});
    results.push_back({{"setup", trainer::setup_name(c)}, {"config", to_json(c)},
                       {"accuracies", r.accuracies}, {"mean", r.mean}, {"sd", r.sd}});
    rep.results.push_back(std::move(r));
  }
  char majority[96];
  std::snprintf(majority, sizeof majority, "# Most common class: %.2f%%\n", 100.0 * rep.majority_accuracy);
  rep.text = trainer::format_report(rows, "generated " + local_timestamp()) + majority;

  write_text(rep.dir / "report.txt", rep.text);
  write_snapshot(rep.dir / "results.json",
                 {{"majority_accuracy", rep.majority_accuracy}, {"results", results}});
  write_snapshot(rep.dir / "config.json", snap);
  return rep;
}

// export-states

struct ExportSummary {
  std::size_t rows = 0;
  std::size_t hidden = 0;
  std::vector<std::string> warnings;
};

/// Final RNN state h_T for the first `count` test utterances (corpus order),
/// one CSV row each: h0..h{d-1},label,conversation,index.
inline ExportSummary export_states(const std::string& clf_path, const std::string& vecs,
                                   std::size_t count, std::size_t context, const std::string& out) {
  const auto clf = classifier::load_classifier(clf_path);
  const auto* rnn = std::get_if<classifier::ContextRNNParams<float>>(&clf.params);
  if (rnn == nullptr) throw Error("export-states needs an RNN classifier");
  const EncodedCorpus e = load_encoded(vecs);
  const auto ex = examples_for(clf, e, vecs);
  auto windows = e.dataset.windows(corpus::Split::kTest, context);

  ExportSummary s;
  s.hidden = rnn->hidden();
  if (count > windows.size()) {
    s.warnings.push_back("requested " + std::to_string(count) + " states but the test split has " +
                         std::to_string(windows.size()) + " utterances; exporting all");
    count = windows.size();
  }
  windows.resize(count);

  Matrix<float> states(s.hidden, std::max<std::size_t>(1, count));
  for (const auto& group : trainer::detail::groups_by_length(windows)) {
    std::vector<corpus::ContextWindow> ws;
    for (auto i : group) ws.push_back(windows[i]);
    auto batch = ex.batch<float>(ws);
    auto trace = classifier::rnn_forward_batch(*rnn, batch.steps);
    for (std::size_t b = 0; b < group.size(); ++b) {
      for (std::size_t k = 0; k < s.hidden; ++k) states(k, group[b]) = trace.hidden.back()(k, b);
    }
  }

  std::string text;
  std::vector<std::string> fields;
  for (std::size_t k = 0; k < s.hidden; ++k) fields.push_back("h" + std::to_string(k));
  fields.insert(fields.end(), {"label", "conversation", "index"});
  text += csv::join(fields) + "\r\n";
  char num[32];
  for (std::size_t i = 0; i < count; ++i) {
    fields.clear();
    for (std::size_t k = 0; k < s.hidden; ++k) {
      std::snprintf(num, sizeof num, "%.9g", static_cast<double>(states(k, i)));
      fields.emplace_back(num);
    }
    const auto& conv = e.dataset.conversations[windows[i].conversation];
    const auto& u = conv.utterances[windows[i].current()];
    fields.push_back(e.dataset.labels.name(u.label));
    fields.push_back(conv.id);
    fields.push_back(std::to_string(u.index));
    text += csv::join(fields) + "\r\n";
  }
  write_text(out, text);
  s.rows = count;
  write_snapshot(with_suffix(out, ".config.json"),
                 {{"command", "export-states"}, {"clf", clf_path}, {"vecs", vecs},
                  {"count", count}, {"context", context}, {"rows", s.rows}, {"hidden", s.hidden}});
  return s;
}

}  // namespace ctxda::pipeline
