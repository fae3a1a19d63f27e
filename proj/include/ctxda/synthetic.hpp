// SPDX-License-Identifier: Apache-2.0
#pragma once

// Synthetic corpus in which context is necessary: utterance texts are drawn
// i.i.d. from a template pool, and the label of utterance t is determined by
// the keyword inside utterance t-1 (utterance 0 gets a fixed opening label).
// A classifier that sees only the current utterance can do no better than
// the majority class; one that sees the previous utterance can be perfect.

#include <array>
#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>
#include <vector>

#include "ctxda/corpus.hpp"
#include "ctxda/rng.hpp"

namespace ctxda::corpus {

struct SyntheticConfig {
  std::size_t conversations = 5000;
  std::size_t min_length = 4;
  std::size_t max_length = 8;
  std::size_t test_every = 10;  // every test_every-th conversation is test
  std::uint64_t seed = 0;
};

struct SyntheticKeyword {
  std::string_view word;
  std::string_view next_label;  // label of the following utterance
};

inline constexpr std::array<SyntheticKeyword, 8> kSyntheticKeywords{{
    {"weather", "sd"},
    {"garden", "b"},
    {"budget", "sv"},
    {"movie", "aa"},
    {"school", "qy"},
    {"travel", "ny"},
    {"dinner", "qw"},
    {"music", "ba"},
}};

inline constexpr std::array<std::string_view, 4> kSyntheticCarriers{{
    "we talked about the {} yesterday.",
    "the {} is nice",
    "Well, I think the {} was fine, you know.",
    "what about your {}?",
}};

inline constexpr std::string_view kSyntheticOpeningLabel = "fp";

inline std::string synthetic_text(std::size_t carrier, std::size_t keyword) {
  std::string text(kSyntheticCarriers.at(carrier));
  const auto slot = text.find("{}");
  text.replace(slot, 2, kSyntheticKeywords.at(keyword).word);
  return text;
}

inline Dataset generate_synthetic(const SyntheticConfig& cfg) {
  if (cfg.conversations == 0 || cfg.min_length == 0 || cfg.max_length < cfg.min_length) {
    throw CorpusError("synthetic corpus: invalid configuration");
  }
  Rng rng(cfg.seed);
  Dataset ds;
  ds.labels = TagMapper::standard().vocab();
  const int opening = ds.labels.index(kSyntheticOpeningLabel);

  char id[32];
  for (std::size_t c = 0; c < cfg.conversations; ++c) {
    std::snprintf(id, sizeof id, "syn%05zu", c);
    Conversation conv{id, {}};
    const std::size_t length =
        cfg.min_length + static_cast<std::size_t>(rng.below(cfg.max_length - cfg.min_length + 1));
    int next_label = opening;
    for (std::size_t t = 0; t < length; ++t) {
      const auto carrier = static_cast<std::size_t>(rng.below(kSyntheticCarriers.size()));
      const auto keyword = static_cast<std::size_t>(rng.below(kSyntheticKeywords.size()));
      Utterance u;
      u.conversation_id = conv.id;
      u.index = t;
      u.speaker = rng.below(2) == 0 ? Speaker::A : Speaker::B;
      u.raw_text = synthetic_text(carrier, keyword);
      u.clean_text = u.raw_text;
      u.label = next_label;
      u.raw_tag = ds.labels.name(u.label);
      conv.utterances.push_back(std::move(u));
      next_label = ds.labels.index(kSyntheticKeywords[keyword].next_label);
    }
    ds.conversations.push_back(std::move(conv));
    ds.splits.push_back(cfg.test_every > 0 && c % cfg.test_every == cfg.test_every - 1
                            ? Split::kTest
                            : Split::kTrain);
  }
  return ds;
}

}  // namespace ctxda::corpus
