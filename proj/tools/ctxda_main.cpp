// SPDX-License-Identifier: Apache-2.0
//
// ctxda: dialogue act recognition from the command line.
//   prep -> train-lm -> encode -> train / eval / experiment / export-states

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ctxda/pipeline.hpp"

namespace {

using namespace ctxda;

bool on_off(const std::string& v) { return v == "on"; }

void print_warnings(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dialogue act recognition with a character-level mLSTM encoder and a context RNN"};
  app.require_subcommand(1);

  // prep
  auto* prep = app.add_subcommand("prep", "Parse a corpus (or generate the synthetic one) into a dataset dir");
  pipeline::PrepSwdaOptions swda;
  corpus::SyntheticConfig syn;
  bool synthetic = false;
  std::string prep_out;
  auto* o_swda = prep->add_option("--swda", swda.swda, "SwDA CSV directory or file");
  prep->add_option("--map", swda.map, "Tag map file (default: built-in 42-class map)");
  prep->add_option("--test-ids", swda.test_ids, "Test conversation IDs, one per line");
  prep->add_option("--exclude-ids", swda.exclude_ids, "Conversation IDs to leave out of both splits");
  auto* o_syn = prep->add_flag("--synthetic", synthetic, "Generate the synthetic context benchmark");
  prep->add_option("--conversations", syn.conversations, "Synthetic conversations")->capture_default_str();
  prep->add_option("--seed", syn.seed, "Synthetic generator seed")->capture_default_str();
  prep->add_option("--out", prep_out, "Output dataset directory")->required();
  o_swda->excludes(o_syn);

  // train-lm
  auto* tlm = app.add_subcommand("train-lm", "Train the character-level mLSTM language model");
  charlm::LMTrainConfig lm_cfg;
  std::string lm_corpus, lm_out;
  tlm->add_option("--corpus", lm_corpus, "Training text file")->required();
  tlm->add_option("--hidden", lm_cfg.hidden)->capture_default_str();
  tlm->add_option("--embed", lm_cfg.embed)->capture_default_str();
  tlm->add_option("--seq-len", lm_cfg.sequence_length)->capture_default_str();
  tlm->add_option("--batch", lm_cfg.batch_size)->capture_default_str();
  tlm->add_option("--steps", lm_cfg.steps)->capture_default_str();
  tlm->add_option("--lr", lm_cfg.learning_rate)->capture_default_str();
  tlm->add_option("--seed", lm_cfg.seed)->capture_default_str();
  tlm->add_option("--out", lm_out)->required();

  // encode
  auto* enc = app.add_subcommand("encode", "Encode every utterance of a dataset into a vector file");
  std::string enc_lm, enc_data, enc_mode = "average", enc_out;
  encoder::EncodeOptions enc_opts;
  enc->add_option("--lm", enc_lm)->required();
  enc->add_option("--data", enc_data, "Dataset directory written by prep")->required();
  enc->add_option("--mode", enc_mode)->check(CLI::IsMember({"average", "last", "concat"}))->capture_default_str();
  enc->add_option("--workers", enc_opts.workers)->capture_default_str();
  enc->add_flag("--force", enc_opts.overwrite_stale, "Replace an existing vector file built from other inputs");
  enc->add_option("--out", enc_out)->required();

  // train
  auto* trn = app.add_subcommand("train", "Train a classifier on the train split");
  trainer::TrainConfig tcfg;
  std::string trn_vecs, trn_out, trn_speaker = "off", trn_model = "rnn";
  trn->add_option("--vecs", trn_vecs)->required();
  trn->add_option("--context", tcfg.context)->capture_default_str();
  trn->add_option("--speaker", trn_speaker)->check(CLI::IsMember({"on", "off"}))->capture_default_str();
  trn->add_option("--hidden", tcfg.hidden)->capture_default_str();
  trn->add_option("--model", trn_model)->check(CLI::IsMember({"rnn", "mlp"}))->capture_default_str();
  trn->add_option("--max-epochs", tcfg.max_epochs)->capture_default_str();
  trn->add_option("--patience", tcfg.patience)->capture_default_str();
  trn->add_option("--lr", tcfg.learning_rate)->capture_default_str();
  trn->add_option("--seed", tcfg.seed)->capture_default_str();
  trn->add_option("--out", trn_out)->required();

  // eval
  auto* evl = app.add_subcommand("eval", "Accuracy of a classifier on a split");
  std::string ev_clf, ev_vecs, ev_split = "test";
  evl->add_option("--clf", ev_clf)->required();
  evl->add_option("--vecs", ev_vecs)->required();
  evl->add_option("--split", ev_split)->check(CLI::IsMember({"train", "test"}))->capture_default_str();

  // experiment
  auto* exp = app.add_subcommand("experiment", "Repeated runs per context size; writes a report");
  pipeline::ExperimentOptions xo;
  std::string xo_speaker = "off";
  exp->add_option("--vecs", xo.vecs)->required();
  exp->add_option("--contexts", xo.contexts)->delimiter(',')->capture_default_str();
  exp->add_option("--repeats", xo.repeats)->capture_default_str();
  exp->add_option("--seed", xo.seed)->capture_default_str();
  exp->add_option("--speaker", xo_speaker)->check(CLI::IsMember({"on", "off"}))->capture_default_str();
  exp->add_flag("--mlp", xo.mlp, "Add the context-free MLP row");
  exp->add_option("--hidden", xo.base.hidden)->capture_default_str();
  exp->add_option("--max-epochs", xo.base.max_epochs)->capture_default_str();
  exp->add_option("--patience", xo.base.patience)->capture_default_str();
  exp->add_option("--threads", xo.threads)->capture_default_str();
  exp->add_option("--out-dir", xo.out_dir)->capture_default_str();

  // export-states
  auto* exs = app.add_subcommand("export-states", "Write final RNN states of test utterances as CSV");
  std::string xs_clf, xs_vecs, xs_out;
  std::size_t xs_count = 2000, xs_context = 2;
  exs->add_option("--clf", xs_clf)->required();
  exs->add_option("--vecs", xs_vecs)->required();
  exs->add_option("--count", xs_count)->capture_default_str();
  exs->add_option("--context", xs_context)->capture_default_str();
  exs->add_option("--out", xs_out)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*prep) {
      pipeline::PrepSummary s;
      if (synthetic) {
        s = pipeline::prep_synthetic(syn, prep_out);
      } else {
        if (swda.swda.empty() || swda.test_ids.empty()) {
          std::cerr << "prep: give --synthetic, or --swda with --test-ids\n";
          return 2;
        }
        swda.out = prep_out;
        s = pipeline::prep_swda(swda);
      }
      std::printf("conversations %zu (train %zu, test %zu, excluded %zu), utterances %zu\n",
                  s.conversations, s.train, s.test, s.excluded, s.utterances);
      if (s.fallback_tags > 0) {
        std::fprintf(stderr, "warning: %zu tags fell through to the catch-all label\n", s.fallback_tags);
      }
    } else if (*tlm) {
      const auto r = pipeline::train_lm_file(lm_corpus, lm_cfg, lm_out);
      std::printf("held-out bpc %.4f -> %.4f (%zu steps, %.1f s)\n", r.initial_heldout_bpc,
                  r.final_heldout_bpc, r.step_loss.size(), r.seconds);
    } else if (*enc) {
      const auto r = pipeline::encode_dataset(enc_lm, enc_data, encoder::parse_mode(enc_mode), enc_out, enc_opts);
      if (r.cache_hit) {
        std::printf("%s is up to date (%zu vectors)\n", enc_out.c_str(), r.table.count());
      } else {
        std::printf("encoded %zu utterances (%zu distinct texts), dim %zu\n", r.table.count(),
                    r.unique_texts, r.table.dim());
      }
    } else if (*trn) {
      tcfg.speaker = on_off(trn_speaker);
      tcfg.kind = classifier::parse_kind(trn_model);
      const auto s = pipeline::train_file(trn_vecs, tcfg, trn_out);
      print_warnings(s.warnings);
      std::printf("%zu epochs, best epoch %zu, validation loss %.6f\n", s.epochs_run, s.best_epoch,
                  s.best_val_loss);
    } else if (*evl) {
      const auto s = pipeline::eval_file(ev_clf, ev_vecs, corpus::parse_split(ev_split));
      std::printf("accuracy %.4f (%zu/%zu)\n", s.result.accuracy, s.result.correct, s.result.total);
      std::printf("majority baseline %.4f (label %s)\n", s.majority_accuracy, s.majority_label.c_str());
    } else if (*exp) {
      xo.speaker = on_off(xo_speaker);
      const auto r = pipeline::experiment_file(xo);
      std::fputs(r.text.c_str(), stdout);
      std::printf("written to %s\n", r.dir.string().c_str());
    } else if (*exs) {
      const auto s = pipeline::export_states(xs_clf, xs_vecs, xs_count, xs_context, xs_out);
      print_warnings(s.warnings);
      std::printf("wrote %zu rows of %zu states to %s\n", s.rows, s.hidden, xs_out.c_str());
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
