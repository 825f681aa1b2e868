#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <functional>
#include <unordered_map>
#include <utility>
#include <vector>

#include "triage/corpus.hpp"

namespace triage {

struct StringHash {
  using is_transparent = void;
  std::size_t operator()(std::string_view s) const noexcept {
    return std::hash<std::string_view>{}(s);
  }
};

/// Token/index map fitted on training documents. Sequence encodings shift
/// every index by two to reserve PAD and UNK.
class Vocabulary {
 public:
  static constexpr std::int32_t kPad = 0;
  static constexpr std::int32_t kUnk = 1;
  static constexpr std::int32_t kOffset = 2;

  Vocabulary() = default;
  /// Tokens in index order; throws UsageError on duplicates or size mismatch.
  Vocabulary(std::vector<std::string> tokens, std::vector<std::size_t> doc_freq,
             std::size_t total_docs);

  std::size_t size() const { return tokens_.size(); }
  std::size_t total_docs() const { return total_docs_; }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::vector<std::size_t>& doc_freq() const { return doc_freq_; }

  /// Index in [0, size()) or -1 when out of vocabulary.
  std::int64_t index_of(std::string_view token) const;

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.tokens_ == b.tokens_ && a.doc_freq_ == b.doc_freq_ && a.total_docs_ == b.total_docs_;
  }

 private:
  std::vector<std::string> tokens_;
  std::vector<std::size_t> doc_freq_;
  std::size_t total_docs_ = 0;
  std::unordered_map<std::string, std::size_t, StringHash, std::equal_to<>> index_;
};

struct VocabOptions {
  std::size_t min_df = 2;
  std::size_t max_size = 50'000;
};

/// Keeps tokens with df >= min_df; if more than max_size remain, the
/// highest-df ones win with ties broken lexicographically. Retained tokens are
/// indexed in lexicographic order. Throws DataError if nothing survives.
Vocabulary build_vocab(std::span<const CleanDocument> train_docs, const VocabOptions& opts = {});
Vocabulary build_vocab(std::span<const CleanDocument* const> train_docs,
                       const VocabOptions& opts = {});

/// Sparse vector with strictly increasing indices.
template <typename T>
struct SparseVector {
  std::vector<std::pair<std::size_t, T>> entries;
  std::size_t dim = 0;

  bool empty() const { return entries.empty(); }
  friend bool operator==(const SparseVector&, const SparseVector&) = default;
};

using CountVector = SparseVector<std::uint32_t>;
using TfidfVector = SparseVector<double>;

CountVector bow_counts(std::span<const std::string> tokens, const Vocabulary& vocab);
inline CountVector bow_counts(const CleanDocument& doc, const Vocabulary& vocab) {
  return bow_counts(doc.tokens, vocab);
}

/// weight = count * (ln((1 + N) / (1 + df)) + 1), then L2-normalized.
TfidfVector tfidf_transform(const CountVector& counts, const Vocabulary& vocab);

struct TokenSequence {
  std::vector<std::int32_t> ids;  // length max_len
  std::size_t true_length = 0;
};

TokenSequence encode_sequence(std::span<const std::string> tokens, const Vocabulary& vocab,
                              std::size_t max_len);
inline TokenSequence encode_sequence(const CleanDocument& doc, const Vocabulary& vocab,
                                     std::size_t max_len) {
  return encode_sequence(doc.tokens, vocab, max_len);
}

}  // namespace triage
