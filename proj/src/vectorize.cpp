#include "triage/vectorize.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <unordered_set>

#include "triage/error.hpp"

namespace triage {

Vocabulary::Vocabulary(std::vector<std::string> tokens, std::vector<std::size_t> doc_freq,
                       std::size_t total_docs)
    : tokens_(std::move(tokens)), doc_freq_(std::move(doc_freq)), total_docs_(total_docs) {
  if (tokens_.size() != doc_freq_.size())
    throw UsageError("vocabulary: token and document-frequency lists differ in length");
  index_.reserve(tokens_.size());
  for (std::size_t i = 0; i < tokens_.size(); ++i)
    if (!index_.emplace(tokens_[i], i).second)
      throw UsageError("vocabulary: duplicate token '" + tokens_[i] + "'");
}

std::int64_t Vocabulary::index_of(std::string_view token) const {
  auto it = index_.find(token);
  return it == index_.end() ? -1 : static_cast<std::int64_t>(it->second);
}

namespace {

template <typename DocRange, typename Get>
Vocabulary build_vocab_impl(const DocRange& docs, Get get, const VocabOptions& opts) {
  if (docs.empty()) throw UsageError("build_vocab: no training documents");
  if (opts.min_df < 1 || opts.max_size < 1)
    throw UsageError("build_vocab: min_df and max_size must be at least 1");

  std::unordered_map<std::string, std::size_t> df;
  std::unordered_set<std::string_view> seen;
  for (const auto& item : docs) {
    const CleanDocument& d = get(item);
    seen.clear();
    for (const auto& t : d.tokens)
      if (seen.insert(t).second) ++df[t];
  }

  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [tok, n] : df)
    if (n >= opts.min_df) kept.emplace_back(tok, n);
  if (kept.empty()) throw DataError("build_vocab: no token reaches min_df");

  if (kept.size() > opts.max_size) {
    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
      return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    kept.resize(opts.max_size);
  }
  std::sort(kept.begin(), kept.end());

  std::vector<std::string> tokens;
  std::vector<std::size_t> freq;
  tokens.reserve(kept.size());
  freq.reserve(kept.size());
  for (auto& [tok, n] : kept) {
    tokens.push_back(std::move(tok));
    freq.push_back(n);
  }
  return Vocabulary(std::move(tokens), std::move(freq), docs.size());
}

}  // namespace

Vocabulary build_vocab(std::span<const CleanDocument> train_docs, const VocabOptions& opts) {
  return build_vocab_impl(train_docs, [](const CleanDocument& d) -> const CleanDocument& { return d; },
                          opts);
}

Vocabulary build_vocab(std::span<const CleanDocument* const> train_docs,
                       const VocabOptions& opts) {
  return build_vocab_impl(
      train_docs, [](const CleanDocument* d) -> const CleanDocument& { return *d; }, opts);
}

CountVector bow_counts(std::span<const std::string> tokens, const Vocabulary& vocab) {
  std::map<std::size_t, std::uint32_t> counts;
  for (const auto& t : tokens) {
    const auto idx = vocab.index_of(t);
    if (idx >= 0) ++counts[static_cast<std::size_t>(idx)];
  }
  CountVector v;
  v.dim = vocab.size();
  v.entries.assign(counts.begin(), counts.end());
  return v;
}

TfidfVector tfidf_transform(const CountVector& counts, const Vocabulary& vocab) {
  TfidfVector out;
  out.dim = vocab.size();
  if (counts.empty()) return out;
  const auto n = static_cast<double>(vocab.total_docs());
  const auto& df = vocab.doc_freq();
  double norm_sq = 0.0;
  out.entries.reserve(counts.entries.size());
  for (auto [idx, c] : counts.entries) {
    const double idf = std::log((1.0 + n) / (1.0 + static_cast<double>(df[idx]))) + 1.0;
    const double w = static_cast<double>(c) * idf;
    out.entries.emplace_back(idx, w);
    norm_sq += w * w;
  }
  if (norm_sq > 0.0) {
    const double inv = 1.0 / std::sqrt(norm_sq);
    for (auto& e : out.entries) e.second *= inv;
  }
  return out;
}

TokenSequence encode_sequence(std::span<const std::string> tokens, const Vocabulary& vocab,
                              std::size_t max_len) {
  if (max_len < 1) throw UsageError("encode_sequence: max_len must be at least 1");
  TokenSequence seq;
  seq.ids.assign(max_len, Vocabulary::kPad);
  seq.true_length = std::min(tokens.size(), max_len);
  for (std::size_t i = 0; i < seq.true_length; ++i) {
    const auto idx = vocab.index_of(tokens[i]);
    seq.ids[i] = idx < 0 ? Vocabulary::kUnk : static_cast<std::int32_t>(idx) + Vocabulary::kOffset;
  }
  return seq;
}

}  // namespace triage
