#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <unistd.h>

#include "triage/corpus.hpp"
#include "triage/rng.hpp"
#include "triage/vectorize.hpp"

namespace triage::test {

inline CleanDocument doc(const std::string& text, Label label, std::size_t id = 0) {
  CleanDocument d;
  d.doc_id = id;
  d.text = text;
  d.tokens = split_tokens(text);
  d.label = label;
  return d;
}

/// Vocabulary over the given tokens (index order as given), each with df 1.
inline std::shared_ptr<const Vocabulary> vocab_of(std::vector<std::string> tokens,
                                                  std::size_t total_docs = 1) {
  std::vector<std::size_t> df(tokens.size(), 1);
  return std::make_shared<const Vocabulary>(std::move(tokens), std::move(df), total_docs);
}

/// |a - b| / max(|a|, |b|, 1e-5). Central differences at eps 1e-5 on an O(1)
/// loss carry about 1e-11 of rounding noise, so components smaller than the
/// floor are judged by absolute error instead.
inline double rel_error(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-5});
  return std::abs(a - b) / scale;
}

/// A temporary directory removed at scope exit.
struct TempDir {
  std::filesystem::path path;
  TempDir() {
    static std::uint64_t counter = 0;
    Rng rng(static_cast<std::uint64_t>(::getpid()) * 1000003u + ++counter);
    path = std::filesystem::temp_directory_path() / ("triage-test-" + std::to_string(rng.next()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  std::filesystem::path operator/(const std::string& name) const { return path / name; }
};

}  // namespace triage::test
