// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <vector>

#include "ctxda/binary_io.hpp"
#include "ctxda/charlm.hpp"
#include "ctxda/corpus.hpp"
#include "ctxda/error.hpp"
#include "ctxda/matrix.hpp"

namespace ctxda::encoder {

enum class VectorMode : std::uint32_t { kLast = 0, kAverage = 1, kConcat = 2 };

inline std::string_view mode_name(VectorMode m) {
  switch (m) {
    case VectorMode::kLast: return "last";
    case VectorMode::kAverage: return "average";
    case VectorMode::kConcat: return "concat";
  }
  return "?";
}

inline VectorMode parse_mode(std::string_view s) {
  if (s == "last") return VectorMode::kLast;
  if (s == "average") return VectorMode::kAverage;
  if (s == "concat") return VectorMode::kConcat;
  throw Error("unknown vector mode '" + std::string(s) + "' (last|average|concat)");
}

inline VectorMode mode_from_tag(std::uint32_t tag) {
  if (tag > 2) throw FormatError("unknown vector mode tag " + std::to_string(tag));
  return static_cast<VectorMode>(tag);
}

inline std::size_t mode_dim(VectorMode m, std::size_t hidden) {
  return m == VectorMode::kConcat ? 2 * hidden : hidden;
}

inline constexpr std::size_t kSpeakerDims = 2;

template <typename T>
struct UtteranceVector {
  std::vector<T> values;
  VectorMode mode = VectorMode::kAverage;
  bool speaker_augmented = false;

  std::size_t dim() const noexcept { return values.size(); }
};

/// Empty utterances are encoded as a single space.
inline std::string_view encodable_text(std::string_view text) {
  return text.empty() ? std::string_view(" ") : text;
}

/// Encodes several texts at once, one column per text. Row i of the result
/// is the vector of texts[i]. Columns never interact, so the result for a
/// text does not depend on which other texts share the batch.
template <typename T>
Matrix<T> encode_batch(const charlm::CharLMParams<T>& params,
                       std::span<const std::string_view> texts, VectorMode mode) {
  const std::size_t n = texts.size(), d = params.hidden;
  if (n == 0) throw ShapeError("encode_batch: no texts");
  std::size_t longest = 0;
  for (auto t : texts) {
    if (t.empty()) throw Error("encode: empty text (substitute a placeholder first)");
    longest = std::max(longest, t.size());
  }
  auto state = charlm::LMState<T>::zeros(d, n);
  Matrix<T> sum(d, n), last(d, n);
  std::vector<std::uint8_t> bytes(n);
  for (std::size_t step = 0; step < longest; ++step) {
    for (std::size_t b = 0; b < n; ++b) {
      bytes[b] = step < texts[b].size() ? static_cast<std::uint8_t>(texts[b][step]) : 0x20;
    }
    charlm::forward_step(params, state, std::span<const std::uint8_t>(bytes));
    for (std::size_t b = 0; b < n; ++b) {
      if (step >= texts[b].size()) continue;
      for (std::size_t r = 0; r < d; ++r) sum(r, b) += state.h(r, b);
      if (step + 1 == texts[b].size()) {
        for (std::size_t r = 0; r < d; ++r) last(r, b) = state.h(r, b);
      }
    }
  }
  Matrix<T> out(n, mode_dim(mode, d));
  for (std::size_t b = 0; b < n; ++b) {
    const T len = static_cast<T>(texts[b].size());
    auto row = out.row(b);
    for (std::size_t r = 0; r < d; ++r) {
      const T avg = sum(r, b) / len;
      switch (mode) {
        case VectorMode::kLast: row[r] = last(r, b); break;
        case VectorMode::kAverage: row[r] = avg; break;
        case VectorMode::kConcat:
          row[r] = last(r, b);
          row[d + r] = avg;
          break;
      }
    }
  }
  return out;
}

/// Vector for one utterance, state starting at zero.
template <typename T>
UtteranceVector<T> encode(const charlm::CharLMParams<T>& params, std::string_view text,
                          VectorMode mode) {
  const std::string_view one[1] = {text};
  Matrix<T> m = encode_batch(params, std::span<const std::string_view>(one), mode);
  return {std::vector<T>(m.values().begin(), m.values().end()), mode, false};
}

/// Appends the speaker one-hot: A -> [1,0], B -> [0,1].
template <typename T>
UtteranceVector<T> attach_speaker(UtteranceVector<T> v, corpus::Speaker speaker) {
  if (v.speaker_augmented) throw Error("attach_speaker: vector already carries a speaker id");
  v.values.push_back(speaker == corpus::Speaker::A ? T(1) : T(0));
  v.values.push_back(speaker == corpus::Speaker::B ? T(1) : T(0));
  v.speaker_augmented = true;
  return v;
}

template <typename T>
UtteranceVector<T> attach_speaker(UtteranceVector<T> v, std::string_view speaker) {
  return attach_speaker(std::move(v), corpus::parse_speaker(speaker));
}

inline constexpr std::string_view kCacheMagic = "CTXDA-VEC1";

/// One vector per utterance, in corpus order.
struct VectorTable {
  VectorMode mode = VectorMode::kAverage;
  std::uint64_t key = 0;
  Matrix<float> rows;  // count x dim

  std::size_t count() const noexcept { return rows.rows(); }
  std::size_t dim() const noexcept { return rows.cols(); }
};

/// Cache identity: the serialized encoder, the mode, the text
/// normalization and the texts themselves.
inline std::uint64_t cache_key(std::string_view params_bytes, VectorMode mode,
                               std::string_view normalization,
                               std::span<const std::string> texts) {
  Fnv1a h;
  h.update(params_bytes).update_u64(static_cast<std::uint64_t>(mode)).update(normalization);
  h.update_u64(texts.size());
  for (const auto& t : texts) h.update_u64(t.size()).update(t);
  return h.digest();
}

inline std::string serialize_table(const VectorTable& t) {
  ByteWriter w;
  w.bytes(kCacheMagic);
  w.u32(static_cast<std::uint32_t>(t.mode));
  w.u32(ByteWriter::checked_u32(t.dim()));
  w.u32(ByteWriter::checked_u32(t.count()));
  w.u64(t.key);
  for (float v : t.rows.values()) w.f32(v);
  return w.buffer();
}

inline void save_table(const VectorTable& t, const std::string& path) {
  ByteWriter w;
  w.bytes(serialize_table(t));
  w.write_file(path);
}

inline VectorTable load_table(const std::string& path) {
  ByteReader r = ByteReader::from_file(path);
  r.expect_magic(kCacheMagic);
  VectorTable t;
  t.mode = mode_from_tag(r.u32());
  const std::size_t dim = r.u32();
  const std::size_t count = r.u32();
  t.key = r.u64();
  if (dim == 0 || count == 0) throw FormatError(path + ": empty vector table");
  if (r.remaining() != dim * count * 4) {
    throw FormatError(path + ": expected " + std::to_string(count) + " records of " +
                      std::to_string(dim) + " floats");
  }
  std::vector<float> values(dim * count);
  for (auto& v : values) v = r.f32();
  t.rows = Matrix<float>(count, dim, std::move(values));
  return t;
}

struct EncodeOptions {
  std::size_t workers = 1;
  std::size_t batch = 64;
  std::string normalization = corpus::NormalizeConfig{}.tag();
  bool overwrite_stale = false;
};

struct EncodeResult {
  VectorTable table;
  bool cache_hit = false;
  std::size_t unique_texts = 0;
};

/// Encodes every text (duplicates once), optionally through a cache file.
/// An existing cache with a different key is rejected unless
/// `overwrite_stale` is set.
inline EncodeResult encode_corpus(const charlm::CharLMParams<float>& params,
                                  std::span<const std::string> texts, VectorMode mode,
                                  const std::string& cache_path = {},
                                  const EncodeOptions& opts = {}) {
  if (texts.empty()) throw Error("encode_corpus: no utterances");
  const std::string params_bytes = charlm::serialize(params);
  const std::uint64_t key = cache_key(params_bytes, mode, opts.normalization, texts);
  const std::size_t dim = mode_dim(mode, params.hidden);

  if (!cache_path.empty() && std::filesystem::exists(cache_path)) {
    VectorTable cached = load_table(cache_path);
    const bool matches = cached.key == key && cached.mode == mode && cached.dim() == dim &&
                         cached.count() == texts.size();
    if (matches) return {std::move(cached), true, 0};
    if (!opts.overwrite_stale) {
      throw StaleCacheError(cache_path + ": cache was built from different inputs");
    }
  }

  std::vector<std::string_view> unique;
  std::unordered_map<std::string_view, std::size_t> slot;
  std::vector<std::size_t> row_of(texts.size());
  for (std::size_t i = 0; i < texts.size(); ++i) {
    const std::string_view t = encodable_text(texts[i]);
    auto [it, fresh] = slot.emplace(t, unique.size());
    if (fresh) unique.push_back(t);
    row_of[i] = it->second;
  }

  // Similar lengths share batches to limit padding steps.
  std::vector<std::size_t> order(unique.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return unique[a].size() < unique[b].size(); });

  Matrix<float> unique_rows(unique.size(), dim);
  const std::size_t batch = std::max<std::size_t>(1, opts.batch);
  const std::size_t batches = (order.size() + batch - 1) / batch;
  auto run = [&](std::size_t first_batch, std::size_t stride) {
    std::vector<std::string_view> group;
    for (std::size_t bi = first_batch; bi < batches; bi += stride) {
      group.clear();
      const std::size_t lo = bi * batch, hi = std::min(order.size(), lo + batch);
      for (std::size_t k = lo; k < hi; ++k) group.push_back(unique[order[k]]);
      Matrix<float> rows = encode_batch(params, std::span<const std::string_view>(group), mode);
      for (std::size_t k = lo; k < hi; ++k) {
        auto src = rows.row(k - lo);
        std::copy(src.begin(), src.end(), unique_rows.row(order[k]).begin());
      }
    }
  };
  const std::size_t workers = std::max<std::size_t>(1, std::min(opts.workers, batches));
  if (workers == 1) {
    run(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run, w, workers);
  }

  EncodeResult result;
  result.unique_texts = unique.size();
  result.table.mode = mode;
  result.table.key = key;
  result.table.rows = Matrix<float>(texts.size(), dim);
  for (std::size_t i = 0; i < texts.size(); ++i) {
    auto src = unique_rows.row(row_of[i]);
    std::copy(src.begin(), src.end(), result.table.rows.row(i).begin());
  }
  if (!cache_path.empty()) save_table(result.table, cache_path);
  return result;
}

}  // namespace ctxda::encoder
