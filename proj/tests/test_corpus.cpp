#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "support.hpp"
#include "triage/csv.hpp"
#include "triage/corpus.hpp"
#include "triage/error.hpp"
#include "triage/rng.hpp"

using namespace triage;

namespace {

std::vector<RawTicket> read(const std::string& text, const ColumnMap& cols = {}) {
  std::istringstream in(text);
  return read_tickets(in, cols);
}

RawTicket ticket(std::string subject, std::string body, std::string label) {
  RawTicket t;
  t.subject = std::move(subject);
  t.body = std::move(body);
  t.label_text = std::move(label);
  return t;
}

Dataset synthetic_dataset(const PerClass<std::size_t>& counts) {
  std::vector<CleanDocument> docs;
  for (std::size_t c = 0; c < kNumClasses; ++c)
    for (std::size_t i = 0; i < counts[c]; ++i) docs.push_back(test::doc("w" + std::to_string(i), label_at(c)));
  return make_dataset(std::move(docs));
}

}  // namespace

TEST_CASE("csv: quoting, embedded newlines and CRLF") {
  std::istringstream in("a,b\r\n\"x, y\",\"say \"\"hi\"\"\"\r\n\"multi\nline\",z\n");
  CsvReader r(in);
  auto h = r.next();
  REQUIRE(h);
  CHECK(h->fields == std::vector<std::string>{"a", "b"});
  auto r1 = r.next();
  REQUIRE(r1);
  CHECK(r1->fields == std::vector<std::string>{"x, y", "say \"hi\""});
  auto r2 = r.next();
  REQUIRE(r2);
  CHECK(r2->fields == std::vector<std::string>{"multi\nline", "z"});
  CHECK(r2->first_line == 3);
  CHECK_FALSE(r.next());
}

TEST_CASE("csv: malformed input reports an error") {
  std::istringstream unterminated("a\n\"open\n");
  CsvReader r(unterminated);
  r.next();
  CHECK_THROWS_AS(r.next(), DataError);

  std::istringstream stray("a\n\"x\"y\n");
  CsvReader r2(stray);
  r2.next();
  CHECK_THROWS_AS(r2.next(), DataError);
}

TEST_CASE("load_csv: field passthrough") {
  const auto t = read("subject,body,type\n\"VPN down\",\"cannot connect\",\"Problem\"\n");
  REQUIRE(t.size() == 1);
  CHECK(t[0].subject == "VPN down");
  CHECK(t[0].body == "cannot connect");
  CHECK(t[0].label_text == "Problem");
  CHECK(t[0].source_row == 1);
  CHECK_FALSE(t[0].language_tag);
}

TEST_CASE("load_csv: header only gives no tickets") {
  CHECK(read("subject,body,type\n").empty());
}

TEST_CASE("load_csv: columns by name, language tag, short rows") {
  const auto t = read("type,language,body,subject\nChange,de,b1,s1\nRequest\n");
  REQUIRE(t.size() == 2);
  CHECK(t[0].subject == "s1");
  CHECK(t[0].body == "b1");
  CHECK(t[0].label_text == "Change");
  REQUIRE(t[0].language_tag);
  CHECK(*t[0].language_tag == "de");
  CHECK(t[1].missing_field);
  CHECK(t[1].source_row == 2);
}

TEST_CASE("load_csv: header missing a mapped column") {
  CHECK_THROWS_AS(read("subject,text,type\n"), DataError);
  ColumnMap unlabeled;
  unlabeled.label.clear();
  CHECK(read("subject,body\na,b\n", unlabeled).size() == 1);
}

TEST_CASE("load_csv: missing file") {
  CHECK_THROWS_AS(load_csv("/nonexistent/tickets.csv"), DataError);
}

TEST_CASE("clean_text examples") {
  CHECK(clean_text("") == "");
  CHECK(clean_text("The Printer is BROKEN!!!") == "printer broken");
  CHECK(clean_text("VPN-issue #42") == "vpn issue 42");
  CHECK(clean_text("caf\xc3\xa9 au lait") == "caf au lait");
  CHECK(clean_text("  a  ") == "");
}

TEST_CASE("clean_text properties over random byte strings") {
  Rng rng(99);
  const std::string pool = "aAbZ09 -!\t\n\xc3\xa9\xe2\x80\x94 the is THE Is";
  for (int trial = 0; trial < 2000; ++trial) {
    std::string s;
    const auto n = rng.below(40);
    for (std::size_t i = 0; i < n; ++i) s += pool[rng.below(pool.size())];
    if (rng.below(4) == 0) s += " the printer ";
    const auto c = clean_text(s);
    CHECK(clean_text(c) == c);
    CHECK(std::all_of(c.begin(), c.end(),
                      [](char ch) { return (ch >= 'a' && ch <= 'z') || (ch >= '0' && ch <= '9') || ch == ' '; }));
    CHECK(c.find("  ") == std::string::npos);
    if (!c.empty()) {
      CHECK(c.front() != ' ');
      CHECK(c.back() != ' ');
    }
    for (const auto& tok : split_tokens(c)) CHECK_FALSE(Stopwords::english().contains(tok));
  }
}

TEST_CASE("stopwords: shipped file matches the embedded list") {
  const auto& embedded = Stopwords::english();
  CHECK(embedded.words().size() == 179);
  const auto file = Stopwords::from_file(TRIAGE_DEFAULT_STOPWORDS);
  CHECK(file.words() == embedded.words());
}

TEST_CASE("build_dataset: drop reasons and counts") {
  std::vector<RawTicket> t;
  t.push_back(ticket("A", "!!!", "Change"));              // empty after clean
  t.push_back(ticket("printer", "broken", "PROBLEM"));    // accepted
  t.push_back(ticket("printer", "broken", "Incident"));   // unknown label
  t.push_back(ticket("drucker", "kaputt", "Problem"));
  t.back().language_tag = "de";                           // non-English
  t.push_back(ticket("vpn", "access", " request "));      // accepted
  t.push_back(ticket("", "", ""));
  t.back().missing_field = true;

  const auto ds = build_dataset(t);
  CHECK(ds.size() == 2);
  CHECK(ds.dropped_count == 4);
  CHECK(ds.drop_reasons.empty_after_clean == 1);
  CHECK(ds.drop_reasons.unknown_label == 1);
  CHECK(ds.drop_reasons.non_english == 1);
  CHECK(ds.drop_reasons.missing_field == 1);
  CHECK(ds.size() + ds.dropped_count == t.size());
  CHECK(ds.documents[0].label == Label::Problem);
  CHECK(ds.documents[0].text == "printer broken");
  CHECK(ds.documents[1].label == Label::Request);
  CHECK(ds.documents[1].doc_id == 1);
  CHECK(ds.class_counts == PerClass<std::size_t>{0, 1, 1});
  CHECK_THROWS_AS(require_usable(ds), DataError);
}

TEST_CASE("build_dataset: lone empty ticket") {
  const std::vector<RawTicket> t{ticket("A", "!!!", "Change")};
  const auto ds = build_dataset(t);
  CHECK(ds.size() == 0);
  CHECK(ds.dropped_count == 1);
  CHECK(ds.drop_reasons.empty_after_clean == 1);
}

TEST_CASE("build_dataset: english language tag is kept") {
  std::vector<RawTicket> t{ticket("server", "down", "Problem")};
  t[0].language_tag = "en";
  CHECK(build_dataset(t).size() == 1);
}

TEST_CASE("build_dataset: conservation and determinism on random tickets") {
  Rng rng(5);
  const std::vector<std::string> labels{"Change", "problem", "REQUEST", "other", ""};
  const std::vector<std::string> words{"the", "vpn", "!!", "printer", "is", "down", "\xc3\xa9"};
  std::vector<RawTicket> t;
  for (int i = 0; i < 500; ++i) {
    std::string s, b;
    for (std::size_t k = rng.below(4); k > 0; --k) s += words[rng.below(words.size())] + " ";
    for (std::size_t k = rng.below(6); k > 0; --k) b += words[rng.below(words.size())] + " ";
    t.push_back(ticket(s, b, labels[rng.below(labels.size())]));
  }
  const auto a = build_dataset(t), b = build_dataset(t);
  CHECK(a.size() + a.dropped_count == t.size());
  CHECK(a.dropped_count == a.drop_reasons.total());
  CHECK(a.class_counts[0] + a.class_counts[1] + a.class_counts[2] == a.size());
  CHECK(a.content_hash() == b.content_hash());
  for (const auto& d : a.documents) CHECK_FALSE(d.tokens.empty());
}

TEST_CASE("assign_folds: balanced exact division") {
  const auto ds = synthetic_dataset({5, 5, 0});
  const auto f = assign_folds(ds, 5, 0, 1);
  for (std::size_t k = 0; k < 5; ++k) {
    const auto ids = f.test_ids(k);
    REQUIRE(ids.size() == 2);
    CHECK(ds.documents[ids[0]].label != ds.documents[ids[1]].label);
  }
}

TEST_CASE("assign_folds: deterministic, disjoint and stratified") {
  const auto ds = synthetic_dataset({37, 211, 104});
  for (std::size_t repeat = 0; repeat < 3; ++repeat) {
    const auto f = assign_folds(ds, 5, repeat, 42);
    CHECK(f.fold_of_doc == assign_folds(ds, 5, repeat, 42).fold_of_doc);
    std::vector<int> seen(ds.size(), 0);
    std::size_t min_size = ds.size(), max_size = 0;
    for (std::size_t k = 0; k < 5; ++k) {
      const auto test = f.test_ids(k);
      const auto train = f.train_ids(k);
      CHECK(test.size() + train.size() == ds.size());
      min_size = std::min(min_size, test.size());
      max_size = std::max(max_size, test.size());
      PerClass<std::size_t> per{};
      for (auto id : test) {
        ++seen[id];
        ++per[index_of(ds.documents[id].label)];
      }
      for (std::size_t c = 0; c < kNumClasses; ++c) {
        const double share = static_cast<double>(ds.class_counts[c]) / 5.0;
        CHECK(std::abs(static_cast<double>(per[c]) - share) <= 1.0);
      }
    }
    CHECK(max_size - min_size <= 1);
    CHECK(std::all_of(seen.begin(), seen.end(), [](int n) { return n == 1; }));
  }
  CHECK(assign_folds(ds, 5, 0, 42).fold_of_doc != assign_folds(ds, 5, 1, 42).fold_of_doc);
}

TEST_CASE("assign_folds: full-dataset fold sizes") {
  const auto ds = synthetic_dataset({1280, 7120, 3479});
  const auto f = assign_folds(ds, 5, 0, 0);
  for (std::size_t k = 0; k < 5; ++k) {
    const auto ids = f.test_ids(k);
    CHECK((ids.size() == 2375 || ids.size() == 2376));
    const auto change = std::count_if(ids.begin(), ids.end(),
                                      [&](auto id) { return ds.documents[id].label == Label::Change; });
    CHECK(change == 256);
  }
}

TEST_CASE("assign_folds: preconditions") {
  const auto ds = synthetic_dataset({3, 10, 10});
  CHECK_THROWS_AS(assign_folds(ds, 5, 0, 0), DataError);
  CHECK_THROWS_AS(assign_folds(ds, 1, 0, 0), UsageError);
}

TEST_CASE("stratified_holdout: every class on both sides") {
  std::vector<Label> labels;
  for (int i = 0; i < 3; ++i) labels.push_back(Label::Change);
  for (int i = 0; i < 50; ++i) labels.push_back(Label::Problem);
  for (int i = 0; i < 20; ++i) labels.push_back(Label::Request);
  const auto [train, val] = stratified_holdout(labels, 0.1, 7);
  CHECK(train.size() + val.size() == labels.size());
  std::map<Label, int> tv, vv;
  for (auto i : train) ++tv[labels[i]];
  for (auto i : val) ++vv[labels[i]];
  CHECK(vv[Label::Change] == 1);
  CHECK(vv[Label::Problem] == 5);
  CHECK(vv[Label::Request] == 2);
  CHECK(tv.size() == 3);

  const std::vector<Label> tiny{Label::Change, Label::Problem, Label::Problem};
  CHECK_THROWS_AS(stratified_holdout(tiny, 0.1, 7), DataError);
}

TEST_CASE("label parsing") {
  CHECK(parse_label("PROBLEM") == Label::Problem);
  CHECK(parse_label("  change\t") == Label::Change);
  CHECK_FALSE(parse_label("requests"));
  CHECK(argmax_lowest(PerClass<double>{0.4, 0.4, 0.2}) == 0);
  CHECK(argmax_lowest(PerClass<double>{0.2, 0.4, 0.4}) == 1);
}
