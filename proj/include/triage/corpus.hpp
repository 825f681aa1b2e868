#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "triage/label.hpp"

namespace triage {

struct RawTicket {
  std::string subject;
  std::string body;
  std::string label_text;
  std::optional<std::string> language_tag;
  std::size_t source_row = 0;  // 1-based data row
  bool missing_field = false;  // row was shorter than the header
};

struct ColumnMap {
  std::string subject = "subject";
  std::string body = "body";
  std::string label = "type";         // empty: no label column (unlabeled input)
  std::string language = "language";  // used only if the header has it
};

/// Reads tickets from CSV with a header row. Rows shorter than the header
/// are emitted with empty fields and `missing_field` set.
std::vector<RawTicket> read_tickets(std::istream& in, const ColumnMap& columns = {});
std::vector<RawTicket> load_csv(const std::filesystem::path& path, const ColumnMap& columns = {});

class Stopwords {
 public:
  Stopwords() = default;
  explicit Stopwords(std::vector<std::string> words);

  /// The shipped 179-entry English list.
  static const Stopwords& english();
  /// One token per line; blank lines and surrounding whitespace ignored.
  static Stopwords from_file(const std::filesystem::path& path);

  bool contains(std::string_view token) const { return set_.contains(std::string(token)); }
  const std::vector<std::string>& words() const { return words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_set<std::string> set_;
};

/// Lowercase, map everything outside [a-z0-9] to a space, collapse spaces,
/// trim and drop stopwords. Works bytewise, so multi-byte UTF-8 sequences
/// become separators.
std::string clean_text(std::string_view raw, const Stopwords& stopwords = Stopwords::english());

std::vector<std::string> split_tokens(std::string_view cleaned);

struct CleanDocument {
  std::size_t doc_id = 0;
  std::string text;
  std::vector<std::string> tokens;
  Label label = Label::Change;
};

struct DropReasons {
  std::size_t missing_field = 0;
  std::size_t unknown_label = 0;
  std::size_t non_english = 0;
  std::size_t empty_after_clean = 0;

  std::size_t total() const { return missing_field + unknown_label + non_english + empty_after_clean; }
};

struct Dataset {
  std::vector<CleanDocument> documents;  // doc_id == position
  PerClass<std::size_t> class_counts{};
  std::size_t dropped_count = 0;
  DropReasons drop_reasons;

  std::size_t size() const { return documents.size(); }
  std::vector<Label> labels() const;
  /// SHA-256 over the cleaned texts and labels in order.
  std::string content_hash() const;
};

Dataset build_dataset(std::span<const RawTicket> tickets,
                      const Stopwords& stopwords = Stopwords::english());

/// Dataset built from already-cleaned documents (doc ids are reassigned).
Dataset make_dataset(std::vector<CleanDocument> docs);

/// Throws DataError if some class has no documents.
void require_usable(const Dataset& ds);

struct FoldAssignment {
  std::size_t k = 0;
  std::size_t repeat_index = 0;
  std::vector<std::size_t> fold_of_doc;  // indexed by doc_id

  std::vector<std::size_t> test_ids(std::size_t fold) const;
  std::vector<std::size_t> train_ids(std::size_t fold) const;
};

/// Stratified fold assignment. Each class is shuffled with a generator keyed
/// on (seed, repeat_index, class) and dealt round-robin; the dealing position
/// carries over between classes so fold sizes also differ by at most one.
/// Throws DataError when a class that is present has fewer than k documents.
FoldAssignment assign_folds(const Dataset& ds, std::size_t k, std::size_t repeat_index,
                            std::uint64_t seed);

/// Same dealing procedure over an arbitrary label list; returns fold per item.
std::vector<std::size_t> stratified_deal(std::span<const Label> labels, std::size_t k,
                                         std::uint64_t seed);

/// Stratified holdout: per class, ceil(fraction * n_c) items (at least one,
/// at most n_c - 1) go to the second list. Throws DataError when a class has
/// fewer than two items.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_holdout(
    std::span<const Label> labels, double fraction, std::uint64_t seed);

}  // namespace triage
