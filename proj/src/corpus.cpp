#include "triage/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <unordered_map>

#include "triage/csv.hpp"
#include "triage/error.hpp"
#include "triage/hash.hpp"
#include "triage/rng.hpp"

namespace triage {

// ---------------------------------------------------------------------------
// Labels

std::string_view label_name(Label l) noexcept {
  switch (l) {
    case Label::Change: return "Change";
    case Label::Problem: return "Problem";
    case Label::Request: return "Request";
  }
  return "?";
}

std::string_view label_slug(Label l) noexcept {
  switch (l) {
    case Label::Change: return "change";
    case Label::Problem: return "problem";
    case Label::Request: return "request";
  }
  return "?";
}

std::optional<Label> parse_label(std::string_view text) noexcept {
  auto is_space = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
  while (!text.empty() && is_space(text.front())) text.remove_prefix(1);
  while (!text.empty() && is_space(text.back())) text.remove_suffix(1);
  std::string lower(text);
  for (auto& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  for (Label l : kAllLabels)
    if (lower == label_slug(l)) return l;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// CSV ingestion

std::vector<RawTicket> read_tickets(std::istream& in, const ColumnMap& columns) {
  CsvReader reader(in);
  auto header = reader.next();
  if (!header) throw DataError("CSV input has no header row");

  auto find = [&](const std::string& name) -> std::optional<std::size_t> {
    const auto& f = header->fields;
    // Tolerate a UTF-8 byte order mark on the first column name.
    for (std::size_t i = 0; i < f.size(); ++i) {
      std::string_view h = f[i];
      if (i == 0 && h.starts_with("\xEF\xBB\xBF")) h.remove_prefix(3);
      if (h == name) return i;
    }
    return std::nullopt;
  };
  auto require = [&](const std::string& name) {
    auto idx = find(name);
    if (!idx) throw DataError("CSV header lacks column '" + name + "'");
    return *idx;
  };
  const std::size_t subject_col = require(columns.subject);
  const std::size_t body_col = require(columns.body);
  const auto label_col =
      columns.label.empty() ? std::nullopt : std::optional<std::size_t>(require(columns.label));
  const auto language_col = columns.language.empty() ? std::nullopt : find(columns.language);
  const std::size_t width = header->fields.size();

  std::vector<RawTicket> out;
  while (auto rec = reader.next()) {
    // A blank physical line is not a record.
    if (rec->fields.size() == 1 && rec->fields[0].empty()) continue;
    if (rec->fields.size() > width)
      throw DataError("malformed CSV at row " + std::to_string(rec->record) + " (line " +
                      std::to_string(rec->first_line) + "): " +
                      std::to_string(rec->fields.size()) + " fields, header has " +
                      std::to_string(width));
    RawTicket t;
    t.source_row = rec->record;
    auto field = [&](std::size_t col) -> std::string {
      if (col < rec->fields.size()) return std::move(rec->fields[col]);
      t.missing_field = true;
      return {};
    };
    t.subject = field(subject_col);
    t.body = field(body_col);
    if (label_col) t.label_text = field(*label_col);
    if (language_col) t.language_tag = field(*language_col);
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<RawTicket> load_csv(const std::filesystem::path& path, const ColumnMap& columns) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open data file: " + path.string());
  return read_tickets(in, columns);
}

// ---------------------------------------------------------------------------
// Cleaning

Stopwords::Stopwords(std::vector<std::string> words) : words_(std::move(words)) {
  set_.reserve(words_.size());
  for (const auto& w : words_) set_.insert(w);
}

Stopwords Stopwords::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open stopword file: " + path.string());
  std::vector<std::string> words;
  std::string line;
  while (std::getline(in, line)) {
    auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    auto e = line.find_last_not_of(" \t\r");
    words.push_back(line.substr(b, e - b + 1));
  }
  return Stopwords(std::move(words));
}

std::string clean_text(std::string_view raw, const Stopwords& stopwords) {
  std::string out;
  out.reserve(raw.size());
  std::string token;
  auto flush = [&] {
    if (!token.empty() && !stopwords.contains(token)) {
      if (!out.empty()) out.push_back(' ');
      out += token;
    }
    token.clear();
  };
  for (char ch : raw) {
    const auto u = static_cast<unsigned char>(ch);
    if (u >= 'A' && u <= 'Z') {
      token.push_back(static_cast<char>(u - 'A' + 'a'));
    } else if ((u >= 'a' && u <= 'z') || (u >= '0' && u <= '9')) {
      token.push_back(ch);
    } else {
      flush();
    }
  }
  flush();
  return out;
}

std::vector<std::string> split_tokens(std::string_view cleaned) {
  std::vector<std::string> tokens;
  std::size_t pos = 0;
  while (pos < cleaned.size()) {
    auto end = cleaned.find(' ', pos);
    if (end == std::string_view::npos) end = cleaned.size();
    if (end > pos) tokens.emplace_back(cleaned.substr(pos, end - pos));
    pos = end + 1;
  }
  return tokens;
}

// ---------------------------------------------------------------------------
// Dataset

std::vector<Label> Dataset::labels() const {
  std::vector<Label> out;
  out.reserve(documents.size());
  for (const auto& d : documents) out.push_back(d.label);
  return out;
}

std::string Dataset::content_hash() const {
  Sha256 h;
  for (const auto& d : documents) {
    h.update(label_slug(d.label));
    h.update("\t");
    h.update(d.text);
    h.update("\n");
  }
  return h.hex_digest();
}

Dataset build_dataset(std::span<const RawTicket> tickets, const Stopwords& stopwords) {
  std::vector<CleanDocument> docs;
  DropReasons reasons;
  for (const auto& t : tickets) {
    if (t.missing_field) {
      ++reasons.missing_field;
      continue;
    }
    auto label = parse_label(t.label_text);
    if (!label) {
      ++reasons.unknown_label;
      continue;
    }
    if (t.language_tag && *t.language_tag != "en") {
      ++reasons.non_english;
      continue;
    }
    std::string text = clean_text(t.subject + " " + t.body, stopwords);
    if (text.empty()) {
      ++reasons.empty_after_clean;
      continue;
    }
    CleanDocument d;
    d.tokens = split_tokens(text);
    d.text = std::move(text);
    d.label = *label;
    docs.push_back(std::move(d));
  }
  Dataset ds = make_dataset(std::move(docs));
  ds.drop_reasons = reasons;
  ds.dropped_count = reasons.total();
  return ds;
}

Dataset make_dataset(std::vector<CleanDocument> docs) {
  Dataset ds;
  ds.documents = std::move(docs);
  for (std::size_t i = 0; i < ds.documents.size(); ++i) {
    ds.documents[i].doc_id = i;
    ++ds.class_counts[index_of(ds.documents[i].label)];
  }
  return ds;
}

void require_usable(const Dataset& ds) {
  for (Label l : kAllLabels)
    if (ds.class_counts[index_of(l)] == 0)
      throw DataError("dataset unusable: class " + std::string(label_name(l)) +
                      " has no documents");
}

// ---------------------------------------------------------------------------
// Folds

std::vector<std::size_t> FoldAssignment::test_ids(std::size_t fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < fold_of_doc.size(); ++i)
    if (fold_of_doc[i] == fold) out.push_back(i);
  return out;
}

std::vector<std::size_t> FoldAssignment::train_ids(std::size_t fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < fold_of_doc.size(); ++i)
    if (fold_of_doc[i] != fold) out.push_back(i);
  return out;
}

namespace {

PerClass<std::vector<std::size_t>> shuffled_members(std::span<const Label> labels,
                                                    std::uint64_t seed) {
  PerClass<std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < labels.size(); ++i) members[index_of(labels[i])].push_back(i);
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    Rng rng(derive_seed({seed, c}));
    rng.shuffle(std::span(members[c]));
  }
  return members;
}

}  // namespace

std::vector<std::size_t> stratified_deal(std::span<const Label> labels, std::size_t k,
                                         std::uint64_t seed) {
  if (k < 2) throw UsageError("fold count must be at least 2");
  auto members = shuffled_members(labels, seed);
  std::vector<std::size_t> fold(labels.size(), 0);
  std::size_t next = 0;
  for (const auto& m : members) {
    for (std::size_t idx : m) {
      fold[idx] = next;
      next = (next + 1) % k;
    }
  }
  return fold;
}

FoldAssignment assign_folds(const Dataset& ds, std::size_t k, std::size_t repeat_index,
                            std::uint64_t seed) {
  if (k < 2) throw UsageError("fold count must be at least 2");
  for (Label l : kAllLabels) {
    // Absent classes are left to require_usable; present ones must fill every fold.
    const auto n = ds.class_counts[index_of(l)];
    if (n > 0 && n < k)
      throw DataError("class " + std::string(label_name(l)) + " has " +
                      std::to_string(ds.class_counts[index_of(l)]) + " documents, fewer than k=" +
                      std::to_string(k));
  }
  const auto labels = ds.labels();
  FoldAssignment fa;
  fa.k = k;
  fa.repeat_index = repeat_index;
  fa.fold_of_doc = stratified_deal(labels, k, derive_seed({seed, repeat_index}));
  return fa;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_holdout(
    std::span<const Label> labels, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0))
    throw UsageError("holdout fraction must lie in (0, 1)");
  auto members = shuffled_members(labels, seed);
  std::vector<std::size_t> keep, held;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const auto& m = members[c];
    if (m.size() < 2)
      throw DataError("degenerate split: class " + std::string(label_name(label_at(c))) +
                      " needs at least two documents for a validation holdout");
    auto n_held = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(m.size())));
    n_held = std::clamp<std::size_t>(n_held, 1, m.size() - 1);
    held.insert(held.end(), m.begin(), m.begin() + static_cast<std::ptrdiff_t>(n_held));
    keep.insert(keep.end(), m.begin() + static_cast<std::ptrdiff_t>(n_held), m.end());
  }
  std::sort(keep.begin(), keep.end());
  std::sort(held.begin(), held.end());
  return {std::move(keep), std::move(held)};
}

}  // namespace triage
