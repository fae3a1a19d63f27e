// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ctxda/csv.hpp"
#include "ctxda/default_tagmap.hpp"
#include "ctxda/error.hpp"

namespace ctxda::corpus {

inline constexpr std::size_t kNumClasses = 42;
inline constexpr std::string_view kContinuationLabel = "+";
inline constexpr std::string_view kOtherLabel = "other";

enum class Speaker { A, B };

inline char speaker_char(Speaker s) { return s == Speaker::A ? 'A' : 'B'; }

inline Speaker parse_speaker(std::string_view s) {
  if (s == "A") return Speaker::A;
  if (s == "B") return Speaker::B;
  throw CorpusError("unknown speaker label '" + std::string(s) + "' (expected A or B)");
}

struct Utterance {
  std::string conversation_id;
  std::size_t index = 0;
  Speaker speaker = Speaker::A;
  std::string raw_text;
  std::string clean_text;
  std::string raw_tag;
  int label = 0;
};

struct Conversation {
  std::string id;
  std::vector<Utterance> utterances;
};

/// Collapsed label <-> class index. Always holds exactly 42 labels.
class LabelVocab {
 public:
  LabelVocab() = default;

  explicit LabelVocab(std::vector<std::string> labels) : labels_(std::move(labels)) {
    if (labels_.size() != kNumClasses) {
      throw CorpusError("label vocabulary has " + std::to_string(labels_.size()) +
                        " labels, expected " + std::to_string(kNumClasses));
    }
    for (std::size_t i = 0; i < labels_.size(); ++i) {
      if (!index_.emplace(labels_[i], static_cast<int>(i)).second) {
        throw CorpusError("duplicate label '" + labels_[i] + "'");
      }
    }
  }

  std::size_t size() const noexcept { return labels_.size(); }
  const std::vector<std::string>& labels() const noexcept { return labels_; }
  const std::string& name(int index) const { return labels_.at(static_cast<std::size_t>(index)); }

  int index(std::string_view label) const {
    auto it = index_.find(std::string(label));
    if (it == index_.end()) throw CorpusError("unknown label '" + std::string(label) + "'");
    return it->second;
  }
  bool contains(std::string_view label) const { return index_.count(std::string(label)) > 0; }

  friend bool operator==(const LabelVocab& a, const LabelVocab& b) {
    return a.labels_ == b.labels_;
  }

 private:
  std::vector<std::string> labels_;
  std::unordered_map<std::string, int> index_;
};

/// Pattern table from a mapping file: `pattern<TAB>label` per line, first
/// match wins, a trailing `*` matches any suffix, `#` starts a comment.
class TagMapper {
 public:
  static TagMapper from_text(std::string_view text, const std::string& origin = "<map>") {
    TagMapper m;
    std::vector<std::string> order;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line[0] == '#') continue;
      const auto tab = line.find('\t');
      if (tab == std::string::npos || tab == 0 || tab + 1 == line.size()) {
        throw CorpusError(origin + ":" + std::to_string(lineno) +
                          ": expected pattern<TAB>label");
      }
      Rule rule;
      rule.pattern = line.substr(0, tab);
      rule.label = line.substr(tab + 1);
      rule.prefix = !rule.pattern.empty() && rule.pattern.back() == '*';
      if (rule.prefix) rule.pattern.pop_back();
      if (rule.label != kContinuationLabel &&
          std::find(order.begin(), order.end(), rule.label) == order.end()) {
        order.push_back(rule.label);
      }
      m.rules_.push_back(std::move(rule));
    }
    if (m.rules_.empty() || !m.rules_.back().prefix || !m.rules_.back().pattern.empty()) {
      throw CorpusError(origin + ": mapping must end with a catch-all '*' line");
    }
    m.vocab_ = LabelVocab(std::move(order));
    m.fallback_label_ = m.rules_.back().label;
    return m;
  }

  static TagMapper from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw CorpusError("cannot open mapping file " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return from_text(text, path);
  }

  static const TagMapper& standard() {
    static const TagMapper mapper = from_text(kDefaultTagMap, "<default map>");
    return mapper;
  }

  const LabelVocab& vocab() const noexcept { return vocab_; }
  const std::string& fallback_label() const noexcept { return fallback_label_; }

  /// Tag as matched: first element of a multi-tag, without ()@* or spaces.
  static std::string canonical(std::string_view raw) {
    const auto cut = raw.find_first_of(",;");
    std::string_view first = raw.substr(0, cut);
    std::string out;
    for (char ch : first) {
      if (ch == '(' || ch == ')' || ch == '@' || ch == '*' || ch == ' ' || ch == '\t') continue;
      out.push_back(ch);
    }
    return out;
  }

  /// Collapsed label, possibly "+" for continuations. Total: anything the
  /// patterns do not cover falls through to the catch-all line, which is
  /// counted in fallback_count().
  std::string collapse(std::string_view raw_tag) const {
    const std::string tag = canonical(raw_tag);
    for (std::size_t i = 0; i < rules_.size(); ++i) {
      const Rule& r = rules_[i];
      const bool hit = r.prefix ? tag.compare(0, r.pattern.size(), r.pattern) == 0 &&
                                      tag.size() >= r.pattern.size()
                                : tag == r.pattern;
      if (hit) {
        if (i + 1 == rules_.size()) ++fallbacks_;
        return r.label;
      }
    }
    ++fallbacks_;
    return fallback_label_;
  }

  std::size_t fallback_count() const noexcept { return fallbacks_; }
  void reset_fallback_count() const noexcept { fallbacks_ = 0; }

 private:
  struct Rule {
    std::string pattern;
    std::string label;
    bool prefix = false;
  };
  std::vector<Rule> rules_;
  LabelVocab vocab_;
  std::string fallback_label_;
  mutable std::size_t fallbacks_ = 0;
};

inline std::string collapse_tag(std::string_view raw_tag,
                                const TagMapper& mapper = TagMapper::standard()) {
  return mapper.collapse(raw_tag);
}

struct NormalizeConfig {
  // "{D So, }" -> "So," when true, dropped entirely when false.
  bool keep_brace_content = true;
  bool strip_angle_markers = true;
  bool strip_slash_terminators = true;

  std::string tag() const {
    std::string t = "norm1:";
    t += keep_brace_content ? 'k' : 'd';
    t += strip_angle_markers ? 'a' : '-';
    t += strip_slash_terminators ? 's' : '-';
    return t;
  }
};

/// Transcript cleanup: removes {X ...} annotation codes (keeping or dropping
/// their content), <...> event markers and trailing "/" or "-/"
/// terminators, then collapses whitespace. Case and punctuation are kept.
inline std::string normalize_text(std::string_view raw, const NormalizeConfig& cfg = {}) {
  std::string out;
  out.reserve(raw.size());
  int drop_depth = 0;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const char ch = raw[i];
    if (ch == '{') {
      if (!cfg.keep_brace_content || drop_depth > 0) {
        ++drop_depth;
        continue;
      }
      while (i + 1 < raw.size() && raw[i + 1] >= 'A' && raw[i + 1] <= 'Z') ++i;
      continue;
    }
    if (ch == '}') {
      if (drop_depth > 0) --drop_depth;
      continue;
    }
    if (drop_depth > 0) continue;
    if (ch == '<' && cfg.strip_angle_markers) {
      const auto close = raw.find('>', i + 1);
      if (close != std::string_view::npos) {
        i = close;
        out.push_back(' ');
        continue;
      }
    }
    out.push_back(ch);
  }

  std::string collapsed;
  bool pending_space = false;
  for (char ch : out) {
    if (ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r') {
      pending_space = !collapsed.empty();
      continue;
    }
    if (pending_space) collapsed.push_back(' ');
    pending_space = false;
    collapsed.push_back(ch);
  }

  if (cfg.strip_slash_terminators) {
    while (!collapsed.empty() && collapsed.back() == '/') {
      collapsed.pop_back();
      if (!collapsed.empty() && collapsed.back() == '-') collapsed.pop_back();
      while (!collapsed.empty() && collapsed.back() == ' ') collapsed.pop_back();
    }
  }
  return collapsed;
}

/// Gives "+" utterances the label of the same speaker's previous utterance.
inline void resolve_continuations(Conversation& conv, const std::vector<std::string>& collapsed,
                                  const LabelVocab& vocab, const std::string& fallback) {
  int last[2] = {-1, -1};
  for (std::size_t i = 0; i < conv.utterances.size(); ++i) {
    Utterance& u = conv.utterances[i];
    const int who = u.speaker == Speaker::A ? 0 : 1;
    if (collapsed[i] == kContinuationLabel) {
      u.label = last[who] >= 0 ? last[who] : vocab.index(fallback);
    } else {
      u.label = vocab.index(collapsed[i]);
    }
    last[who] = u.label;
  }
}

struct ParseOptions {
  NormalizeConfig normalize;
  std::string conversation_column = "conversation_no";
  std::string speaker_column = "caller";
  std::string tag_column = "act_tag";
  std::string text_column = "text";
};

struct ParsedCorpus {
  std::vector<Conversation> conversations;
  std::size_t fallback_tags = 0;
};

namespace detail {

inline std::vector<std::filesystem::path> csv_files(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  if (!fs::exists(root)) throw CorpusError("corpus path does not exist: " + root.string());
  std::vector<fs::path> files;
  if (fs::is_regular_file(root)) {
    files.push_back(root);
  } else {
    for (const auto& entry : fs::recursive_directory_iterator(root)) {
      if (entry.is_regular_file() && entry.path().extension() == ".csv") {
        files.push_back(entry.path());
      }
    }
    std::sort(files.begin(), files.end());
  }
  if (files.empty()) throw CorpusError("no .csv transcript files under " + root.string());
  return files;
}

inline std::size_t column(const csv::Record& header, const std::string& name,
                          const std::string& origin) {
  auto it = std::find(header.fields.begin(), header.fields.end(), name);
  if (it == header.fields.end()) {
    throw CorpusError(origin + ": missing required column '" + name + "'");
  }
  return static_cast<std::size_t>(it - header.fields.begin());
}

}  // namespace detail

/// Reads SwDA-release transcript CSVs (a directory tree or one file) in
/// sorted path order. Rows keep file order; conversations appear in order
/// of first occurrence. Either the whole corpus parses or an error is
/// thrown.
inline ParsedCorpus parse_corpus(const std::filesystem::path& root,
                                 const TagMapper& mapper = TagMapper::standard(),
                                 const ParseOptions& opts = {}) {
  const std::size_t fallback_before = mapper.fallback_count();
  std::vector<Conversation> convs;
  std::vector<std::vector<std::string>> collapsed;
  std::unordered_map<std::string, std::size_t> by_id;

  for (const auto& path : detail::csv_files(root)) {
    const std::string origin = path.string();
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CorpusError("cannot open " + origin);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    auto records = csv::parse(text, origin);
    if (records.size() < 2) throw CorpusError(origin + ": empty file");
    const auto& header = records.front();
    const std::size_t c_conv = detail::column(header, opts.conversation_column, origin);
    const std::size_t c_spk = detail::column(header, opts.speaker_column, origin);
    const std::size_t c_tag = detail::column(header, opts.tag_column, origin);
    const std::size_t c_text = detail::column(header, opts.text_column, origin);
    const std::size_t needed = std::max({c_conv, c_spk, c_tag, c_text}) + 1;

    for (std::size_t r = 1; r < records.size(); ++r) {
      const auto& rec = records[r];
      const std::string where = origin + ":" + std::to_string(rec.line);
      if (rec.fields.size() < needed) {
        throw CorpusError(where + ": malformed row (" + std::to_string(rec.fields.size()) +
                          " fields)");
      }
      const std::string& conv_id = rec.fields[c_conv];
      if (conv_id.empty()) throw CorpusError(where + ": empty conversation id");
      if (rec.fields[c_tag].empty()) throw CorpusError(where + ": empty act tag");
      Utterance u;
      try {
        u.speaker = parse_speaker(rec.fields[c_spk]);
      } catch (const CorpusError& e) {
        throw CorpusError(where + ": " + e.what());
      }
      auto [it, fresh] = by_id.emplace(conv_id, convs.size());
      if (fresh) {
        convs.push_back(Conversation{conv_id, {}});
        collapsed.emplace_back();
      }
      Conversation& conv = convs[it->second];
      u.conversation_id = conv_id;
      u.index = conv.utterances.size();
      u.raw_text = rec.fields[c_text];
      u.clean_text = normalize_text(u.raw_text, opts.normalize);
      u.raw_tag = rec.fields[c_tag];
      collapsed[it->second].push_back(mapper.collapse(u.raw_tag));
      conv.utterances.push_back(std::move(u));
    }
  }

  for (std::size_t i = 0; i < convs.size(); ++i) {
    resolve_continuations(convs[i], collapsed[i], mapper.vocab(), mapper.fallback_label());
  }
  return {std::move(convs), mapper.fallback_count() - fallback_before};
}

/// One conversation ID per line; blank lines and `#` comments ignored. A
/// leading "sw" is stripped so "sw2121" and "2121" name the same call.
inline std::vector<std::string> read_id_list(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot open ID list " + path);
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (line.rfind("sw", 0) == 0) line = line.substr(2);
    ids.push_back(line);
  }
  return ids;
}

enum class Split { kTrain, kTest, kExcluded };

inline std::string_view split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kTest: return "test";
    case Split::kExcluded: return "excluded";
  }
  return "?";
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::kTrain;
  if (s == "test") return Split::kTest;
  if (s == "excluded") return Split::kExcluded;
  throw CorpusError("unknown split '" + std::string(s) + "'");
}

/// Split marker per conversation: listed test IDs go to test, listed
/// excluded IDs (e.g. a development set) are left out, the rest train.
inline std::vector<Split> assign_splits(const std::vector<Conversation>& convs,
                                        const std::vector<std::string>& test_ids,
                                        const std::vector<std::string>& excluded_ids = {}) {
  std::set<std::string> present;
  for (const auto& c : convs) present.insert(c.id);
  for (const auto& id : test_ids) {
    if (!present.count(id)) throw CorpusError("test conversation " + id + " not found in corpus");
  }
  const std::set<std::string> test(test_ids.begin(), test_ids.end());
  const std::set<std::string> excluded(excluded_ids.begin(), excluded_ids.end());
  std::vector<Split> out;
  out.reserve(convs.size());
  for (const auto& c : convs) {
    if (test.count(c.id)) {
      out.push_back(Split::kTest);
    } else if (excluded.count(c.id)) {
      out.push_back(Split::kExcluded);
    } else {
      out.push_back(Split::kTrain);
    }
  }
  return out;
}

struct TrainTest {
  std::vector<Conversation> train;
  std::vector<Conversation> test;
};

/// Disjoint (train, test) partition preserving corpus order.
inline TrainTest split_corpus(const std::vector<Conversation>& convs,
                              const std::vector<std::string>& test_ids,
                              const std::vector<std::string>& excluded_ids = {}) {
  const auto splits = assign_splits(convs, test_ids, excluded_ids);
  TrainTest out;
  for (std::size_t i = 0; i < convs.size(); ++i) {
    if (splits[i] == Split::kTrain) out.train.push_back(convs[i]);
    if (splits[i] == Split::kTest) out.test.push_back(convs[i]);
  }
  return out;
}

/// The current utterance plus up to n predecessors of one conversation:
/// utterances [begin, end) of conversation `conversation`.
struct ContextWindow {
  std::size_t conversation = 0;
  std::size_t begin = 0;
  std::size_t end = 0;
  int label = 0;

  std::size_t length() const noexcept { return end - begin; }
  std::size_t current() const noexcept { return end - 1; }
};

/// One window per utterance; windows at the conversation start are short.
inline std::vector<ContextWindow> make_windows(const Conversation& conv, std::size_t context,
                                               std::size_t conversation_index = 0) {
  std::vector<ContextWindow> out;
  out.reserve(conv.utterances.size());
  for (std::size_t t = 0; t < conv.utterances.size(); ++t) {
    ContextWindow w;
    w.conversation = conversation_index;
    w.begin = t - std::min(t, context);
    w.end = t + 1;
    w.label = conv.utterances[t].label;
    out.push_back(w);
  }
  return out;
}

/// A labelled corpus with split markers, as written by `prep`.
struct Dataset {
  LabelVocab labels;
  std::vector<Conversation> conversations;
  std::vector<Split> splits;

  std::size_t utterance_count() const {
    std::size_t n = 0;
    for (const auto& c : conversations) n += c.utterances.size();
    return n;
  }

  /// Row of each conversation's first utterance in the flat utterance order.
  std::vector<std::size_t> offsets() const {
    std::vector<std::size_t> out;
    std::size_t n = 0;
    for (const auto& c : conversations) {
      out.push_back(n);
      n += c.utterances.size();
    }
    return out;
  }

  std::size_t count(Split s) const {
    return static_cast<std::size_t>(std::count(splits.begin(), splits.end(), s));
  }

  /// Windows of every conversation in split `s`, corpus order.
  std::vector<ContextWindow> windows(Split s, std::size_t context) const {
    std::vector<ContextWindow> out;
    for (std::size_t i = 0; i < conversations.size(); ++i) {
      if (splits[i] != s) continue;
      auto w = make_windows(conversations[i], context, i);
      out.insert(out.end(), w.begin(), w.end());
    }
    return out;
  }
};

inline constexpr std::string_view kUtteranceHeader =
    "conversation\tindex\tspeaker\tsplit\traw_tag\tlabel\ttext";

/// Writes utterances.tsv and labels.txt into `dir`.
inline void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "labels.txt", std::ios::binary | std::ios::trunc);
    for (const auto& l : ds.labels.labels()) out << l << '\n';
    if (!out) throw CorpusError("cannot write " + (dir / "labels.txt").string());
  }
  std::ofstream out(dir / "utterances.tsv", std::ios::binary | std::ios::trunc);
  out << kUtteranceHeader << '\n';
  for (std::size_t i = 0; i < ds.conversations.size(); ++i) {
    for (const auto& u : ds.conversations[i].utterances) {
      out << u.conversation_id << '\t' << u.index << '\t' << speaker_char(u.speaker) << '\t'
          << split_name(ds.splits[i]) << '\t' << u.raw_tag << '\t' << ds.labels.name(u.label)
          << '\t' << u.clean_text << '\n';
    }
  }
  if (!out) throw CorpusError("cannot write " + (dir / "utterances.tsv").string());
}

inline LabelVocab read_labels(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot open " + path.string());
  std::vector<std::string> labels;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) labels.push_back(line);
  }
  return LabelVocab(std::move(labels));
}

/// Reads a dataset written by save_dataset from `utterances` and `labels`.
inline Dataset load_dataset(const std::filesystem::path& utterances,
                            const std::filesystem::path& labels) {
  Dataset ds;
  ds.labels = read_labels(labels);
  std::ifstream in(utterances, std::ios::binary);
  if (!in) throw CorpusError("cannot open " + utterances.string());
  std::string line;
  if (!std::getline(in, line) || line != kUtteranceHeader) {
    throw CorpusError(utterances.string() + ": missing header");
  }
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    std::vector<std::string> f;
    std::size_t start = 0;
    for (int k = 0; k < 6; ++k) {
      const auto tab = line.find('\t', start);
      if (tab == std::string::npos) {
        throw CorpusError(utterances.string() + ":" + std::to_string(lineno) + ": malformed row");
      }
      f.push_back(line.substr(start, tab - start));
      start = tab + 1;
    }
    f.push_back(line.substr(start));
    if (ds.conversations.empty() || ds.conversations.back().id != f[0]) {
      ds.conversations.push_back(Conversation{f[0], {}});
      ds.splits.push_back(parse_split(f[3]));
    }
    Utterance u;
    u.conversation_id = f[0];
    u.index = ds.conversations.back().utterances.size();
    if (std::to_string(u.index) != f[1]) {
      throw CorpusError(utterances.string() + ":" + std::to_string(lineno) +
                        ": utterance index out of sequence");
    }
    u.speaker = parse_speaker(f[2]);
    u.raw_tag = f[4];
    u.label = ds.labels.index(f[5]);
    u.clean_text = f[6];
    u.raw_text = f[6];
    ds.conversations.back().utterances.push_back(std::move(u));
  }
  return ds;
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  return load_dataset(dir / "utterances.tsv", dir / "labels.txt");
}

}  // namespace ctxda::corpus
