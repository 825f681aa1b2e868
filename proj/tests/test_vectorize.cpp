#include <doctest.h>

#include <cmath>

#include "support.hpp"
#include "triage/error.hpp"
#include "triage/vectorize.hpp"

using namespace triage;
using triage::test::doc;

namespace {

std::vector<CleanDocument> docs(std::initializer_list<const char*> texts) {
  std::vector<CleanDocument> out;
  for (const char* t : texts) out.push_back(doc(t, Label::Problem, out.size()));
  return out;
}

double norm(const TfidfVector& v) {
  double s = 0;
  for (auto [i, w] : v.entries) s += w * w;
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("build_vocab examples") {
  const auto d = docs({"crash crash", "help"});
  const auto v = build_vocab(d, {.min_df = 1});
  CHECK(v.tokens() == std::vector<std::string>{"crash", "help"});
  CHECK(v.doc_freq() == std::vector<std::size_t>{1, 1});
  CHECK(v.total_docs() == 2);
  CHECK_THROWS_AS(build_vocab(d, {.min_df = 2}), DataError);

  const auto v2 = build_vocab(docs({"a b", "b c", "b"}), {.min_df = 2});
  CHECK(v2.tokens() == std::vector<std::string>{"b"});
  CHECK(v2.doc_freq() == std::vector<std::size_t>{3});
}

TEST_CASE("build_vocab: max_size keeps highest df, ties lexicographic") {
  const auto d = docs({"x y z", "x y", "x w", "w z"});
  // df: x=3, w=2, y=2, z=2 -> keep x plus the lexicographically first of the df-2 tie.
  const auto v = build_vocab(d, {.min_df = 1, .max_size = 2});
  CHECK(v.tokens() == std::vector<std::string>{"w", "x"});
  CHECK(v.index_of("x") == 1);
  CHECK(v.index_of("y") == -1);
}

TEST_CASE("build_vocab: permutation invariant and leakage free") {
  auto d = docs({"alpha beta", "beta gamma", "gamma delta beta", "alpha delta"});
  const auto v = build_vocab(d, {.min_df = 1});
  std::vector<CleanDocument> shuffled(d.rbegin(), d.rend());
  CHECK(build_vocab(shuffled, {.min_df = 1}) == v);

  // Fold A is documents 0..1; mutating fold B leaves A's vocabulary unchanged.
  std::vector<const CleanDocument*> fold_a{&d[0], &d[1]};
  const auto before = build_vocab(std::span<const CleanDocument* const>(fold_a), {.min_df = 1});
  d[2] = doc("zzz yyy", Label::Change);
  d[3] = doc("qqq", Label::Request);
  CHECK(build_vocab(std::span<const CleanDocument* const>(fold_a), {.min_df = 1}) == before);
}

TEST_CASE("vocabulary rejects duplicates") {
  CHECK_THROWS_AS(Vocabulary({"a", "a"}, {1, 1}, 1), UsageError);
  CHECK_THROWS_AS(Vocabulary({"a"}, {1, 1}, 1), UsageError);
}

TEST_CASE("bow_counts examples") {
  const auto v = test::vocab_of({"crash", "help"});
  CHECK(bow_counts(split_tokens("crash crash help"), *v).entries ==
        std::vector<std::pair<std::size_t, std::uint32_t>>{{0, 2}, {1, 1}});
  CHECK(bow_counts(split_tokens("unknown words only"), *v).empty());
  const auto ab = test::vocab_of({"a", "b"});
  const auto c = bow_counts(split_tokens("b a b"), *ab);
  CHECK(c.entries == std::vector<std::pair<std::size_t, std::uint32_t>>{{0, 1}, {1, 2}});
  CHECK(c.dim == 2);
}

TEST_CASE("tfidf_transform examples") {
  const Vocabulary v3({"t"}, {3}, 3);
  CHECK(tfidf_transform(CountVector{{}, 1}, v3).empty());
  const auto one = tfidf_transform(CountVector{{{0, 1}}, 1}, v3);
  REQUIRE(one.entries.size() == 1);
  CHECK(one.entries[0].second == doctest::Approx(1.0).epsilon(1e-12));

  const Vocabulary v2({"a", "b"}, {1, 2}, 2);
  const auto w = tfidf_transform(CountVector{{{0, 2}, {1, 1}}, 2}, v2);
  REQUIRE(w.entries.size() == 2);
  // Pre-norm weights 2.8109302162163288 and 1.0.
  CHECK(std::abs(w.entries[0].second - 0.9421556246632359) < 1e-12);
  CHECK(std::abs(w.entries[1].second - 0.33517574332792605) < 1e-12);
}

TEST_CASE("tfidf norm is 0 or 1 on random counts") {
  Rng rng(3);
  std::vector<std::string> toks;
  std::vector<std::size_t> df;
  for (int i = 0; i < 30; ++i) {
    toks.push_back("t" + std::to_string(100 + i));
    df.push_back(1 + rng.below(50));
  }
  const Vocabulary v(toks, df, 50);
  for (int trial = 0; trial < 500; ++trial) {
    CountVector c;
    c.dim = v.size();
    for (std::size_t i = 0; i < v.size(); ++i)
      if (rng.below(4) == 0) c.entries.emplace_back(i, static_cast<std::uint32_t>(1 + rng.below(9)));
    const auto t = tfidf_transform(c, v);
    const double n = norm(t);
    if (c.empty()) CHECK(n == 0.0);
    else CHECK(std::abs(n - 1.0) < 1e-9);
    for (auto [i, x] : t.entries) CHECK((std::isfinite(x) && x >= 0));
  }
}

TEST_CASE("encode_sequence examples") {
  const auto v = test::vocab_of({"crash", "help"});
  const auto s = encode_sequence(split_tokens("crash help"), *v, 4);
  CHECK(s.ids == std::vector<std::int32_t>{2, 3, 0, 0});
  CHECK(s.true_length == 2);
  const auto u = encode_sequence(split_tokens("x y z"), *v, 2);
  CHECK(u.ids == std::vector<std::int32_t>{1, 1});
  CHECK(u.true_length == 2);
}

TEST_CASE("encode_sequence decodes to the in-vocabulary prefix") {
  Rng rng(11);
  const std::vector<std::string> all{"a", "b", "c", "d", "e", "f"};
  const auto v = test::vocab_of({"a", "c", "e"});
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<std::string> tokens;
    for (std::size_t n = 1 + rng.below(12); n > 0; --n) tokens.push_back(all[rng.below(all.size())]);
    const std::size_t max_len = 1 + rng.below(10);
    const auto s = encode_sequence(tokens, *v, max_len);
    REQUIRE(s.ids.size() == max_len);
    CHECK(s.true_length == std::min(tokens.size(), max_len));
    std::vector<std::string> decoded, expected;
    for (std::size_t t = 0; t < max_len; ++t) {
      if (t < s.true_length) CHECK(s.ids[t] != Vocabulary::kPad);
      else CHECK(s.ids[t] == Vocabulary::kPad);
      if (s.ids[t] >= Vocabulary::kOffset) decoded.push_back(v->tokens()[s.ids[t] - Vocabulary::kOffset]);
    }
    for (std::size_t t = 0; t < s.true_length; ++t)
      if (v->index_of(tokens[t]) >= 0) expected.push_back(tokens[t]);
    CHECK(decoded == expected);
  }
}
