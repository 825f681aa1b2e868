#include "triage/synth.hpp"

#include <array>
#include <numeric>
#include <string>
#include <string_view>

#include "triage/error.hpp"
#include "triage/rng.hpp"

namespace triage {

namespace {

constexpr std::array<std::string_view, 24> kProblemWords{
    "crash",   "error",     "failure",  "outage",  "broken",    "freeze",
    "bug",     "timeout",   "unreachable", "corrupted", "fault", "stopped",
    "failing", "disconnect", "slow",   "overheating", "glitch", "lost",
    "unresponsive", "exception", "offline", "hang", "defect", "incident"};

constexpr std::array<std::string_view, 24> kRequestWords{
    "access",  "install",   "account",   "information", "provide", "advice",
    "question", "setup",    "license",   "permission",  "order",   "quote",
    "guidance", "assistance", "procedure", "documentation", "training", "onboarding",
    "purchase", "request",  "enable",    "invite",      "clarify", "recommend"};

constexpr std::array<std::string_view, 12> kChangeWords{
    "upgrade", "migration", "rollout",  "patch",    "release",  "deploy",
    "modify",  "replace",   "rollback", "firmware", "cutover",  "hotfix"};

constexpr std::array<std::string_view, 40> kSharedWords{
    "system",  "user",     "server",  "email",   "laptop",   "printer",  "network", "database",
    "portal",  "office",   "team",    "client",  "software", "hardware", "vpn",     "login",
    "report",  "customer", "device",  "service", "platform", "website",  "app",     "file",
    "monday",  "morning",  "support", "project", "data",     "cloud",    "storage", "backup",
    "mobile",  "desktop",  "browser", "ticket",  "keyboard", "module",   "screen",  "dashboard"};

constexpr std::array<std::string_view, 16> kStopwords{
    "the", "is", "a", "our", "we", "it", "has", "been", "to", "of",
    "and", "was", "on", "this", "for", "with"};

// Words that mark a recurring fault. Problem tickets that mention a change
// keyword ("since the upgrade ...") carry one of these; Change tickets never do.
constexpr std::array<std::string_view, 4> kRecurrenceWords{"recurring", "intermittent",
                                                           "repeatedly", "persistent"};

template <std::size_t N>
std::string_view pick_uniform(const std::array<std::string_view, N>& words, Rng& rng) {
  return words[rng.below(N)];
}

template <std::size_t N>
std::string_view pick(const std::array<std::string_view, N>& words, Rng& rng) {
  // Mildly skewed toward the front of each list.
  const auto a = rng.below(N), b = rng.below(N);
  return words[std::min(a, b)];
}

// Background text: per token, a Problem keyword with probability `problem`,
// a Request keyword with probability `request`, else shared vocabulary.
std::vector<std::string_view> background(std::size_t length, double problem, double request,
                                         Rng& rng) {
  std::vector<std::string_view> out;
  for (std::size_t i = 0; i < length; ++i) {
    const double u = rng.unit();
    if (u < problem) out.push_back(pick(kProblemWords, rng));
    else if (u < problem + request) out.push_back(pick(kRequestWords, rng));
    else out.push_back(pick(kSharedWords, rng));
  }
  return out;
}

void insert_at_random(std::vector<std::string_view>& words, std::string_view w, Rng& rng) {
  words.insert(words.begin() + static_cast<std::ptrdiff_t>(rng.below(words.size() + 1)), w);
}

std::vector<std::string_view> make_words(Label label, std::size_t length, Rng& rng) {
  std::vector<std::string_view> words;
  switch (label) {
    case Label::Problem:
      words = background(length, 0.40, 0.02, rng);
      if (rng.unit() < 0.40) {
        // "... recurring since the upgrade ...": marker right before the keyword.
        const auto at = static_cast<std::ptrdiff_t>(rng.below(words.size() + 1));
        words.insert(words.begin() + at, pick_uniform(kChangeWords, rng));
        words.insert(words.begin() + at, pick(kRecurrenceWords, rng));
        insert_at_random(words, pick(kRecurrenceWords, rng), rng);
      }
      break;
    case Label::Change: {
      words = background(length, 0.40, 0.02, rng);
      const double u = rng.unit();
      const std::size_t n = u < 0.30 ? 2 : u < 0.80 ? 3 : 4;
      for (std::size_t i = 0; i < n; ++i) insert_at_random(words, pick_uniform(kChangeWords, rng), rng);
      break;
    }
    case Label::Request:
      words = background(length, 0.04, 0.30, rng);
      insert_at_random(words, pick(kRequestWords, rng), rng);
      break;
  }
  return words;
}

std::string render(std::span<const std::string_view> words, Rng& rng) {
  std::string out;
  for (auto w : words) {
    if (!out.empty()) out += ' ';
    if (rng.unit() < 0.25) {
      out += pick(kStopwords, rng);
      out += ' ';
    }
    std::string word(w);
    if (rng.unit() < 0.1) word[0] = static_cast<char>(word[0] - 'a' + 'A');
    out += word;
    if (rng.unit() < 0.08) out += rng.unit() < 0.5 ? "," : "!";
  }
  return out;
}

}  // namespace

std::vector<RawTicket> generate_synthetic(const SynthOptions& opts) {
  const std::size_t parts = std::accumulate(opts.ratio.begin(), opts.ratio.end(), std::size_t{0});
  if (parts == 0) throw UsageError("synthetic: class ratio must not be all zero");

  // Largest-remainder apportionment of the document count.
  PerClass<std::size_t> per_class{};
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    per_class[c] = opts.documents * opts.ratio[c] / parts;
    assigned += per_class[c];
  }
  for (std::size_t c = 0; assigned < opts.documents; c = (c + 1) % kNumClasses) {
    if (opts.ratio[c] == 0) continue;
    ++per_class[c];
    ++assigned;
  }

  std::vector<Label> labels;
  for (std::size_t c = 0; c < kNumClasses; ++c) labels.insert(labels.end(), per_class[c], label_at(c));
  Rng rng(derive_seed({opts.seed, 0x5917}));
  rng.shuffle(std::span(labels));

  std::vector<RawTicket> out;
  out.reserve(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    RawTicket t;
    // Generate one word sequence and split it into subject and body.
    const auto words = make_words(labels[i], 8 + rng.below(18), rng);
    const std::size_t cut = std::min<std::size_t>(2 + rng.below(4), words.size() - 1);
    t.subject = render(std::span(words).first(cut), rng);
    t.body = render(std::span(words).subspan(cut), rng);
    t.label_text = std::string(label_name(labels[i]));
    t.source_row = i + 1;
    out.push_back(std::move(t));
  }
  return out;
}

void write_tickets_csv(std::ostream& out, std::span<const RawTicket> tickets) {
  auto quote = [](const std::string& s) {
    std::string q = "\"";
    for (char c : s) {
      if (c == '"') q += '"';
      q += c;
    }
    return q + "\"";
  };
  out << "subject,body,type\n";
  for (const auto& t : tickets) out << quote(t.subject) << ',' << quote(t.body) << ',' << t.label_text << '\n';
}

}  // namespace triage
