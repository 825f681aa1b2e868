#include "triage/router.hpp"

#include <cstdlib>
#include <ctime>
#include <random>
#include <sstream>

#include <fmt/format.h>
#include <httplib.h>
#include <spdlog/spdlog.h>

#include "triage/corpus.hpp"
#include "triage/rng.hpp"

namespace triage {

using ojson = nlohmann::ordered_json;

std::string_view state_name(TicketState s) noexcept {
  switch (s) {
    case TicketState::Received: return "received";
    case TicketState::Classified: return "classified";
    case TicketState::Routed: return "routed";
    case TicketState::Failed: return "failed";
  }
  return "?";
}

std::string utc_now() {
  using namespace std::chrono;
  const auto now = system_clock::now();
  const auto ms = duration_cast<milliseconds>(now.time_since_epoch()).count() % 1000;
  const std::time_t t = system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  return fmt::format("{:04}-{:02}-{:02}T{:02}:{:02}:{:02}.{:03}Z", tm.tm_year + 1900, tm.tm_mon + 1,
                     tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, ms);
}

ojson record_to_json(const TicketRecord& r) {
  ojson j;
  j["ticket_id"] = r.ticket_id;
  j["subject"] = r.subject;
  j["body"] = r.body;
  j["state"] = state_name(r.state);
  j["label"] = r.label ? ojson(label_name(*r.label)) : ojson(nullptr);
  j["confidence"] = r.confidence ? ojson(*r.confidence) : ojson(nullptr);
  j["model_fingerprint"] = r.model_fingerprint;
  if (r.state == TicketState::Failed) j["failure_reason"] = r.failure_reason;
  ojson ts = ojson::object();
  for (const auto& [s, when] : r.transitions) ts[std::string(state_name(s))] = when;
  j["timestamps"] = std::move(ts);
  return j;
}

// ---------------------------------------------------------------------------

TicketRecord worker_step(const TicketRecord& record, const TrainedModel& model,
                         const std::string& timestamp) {
  if (record.state != TicketState::Received)
    throw UsageError("worker_step: ticket " + record.ticket_id + " is " +
                     std::string(state_name(record.state)) + ", expected received");
  TicketRecord out = record;
  auto fail = [&](std::string reason) {
    out.state = TicketState::Failed;
    out.failure_reason = std::move(reason);
    out.transitions.emplace_back(TicketState::Failed, timestamp);
    return out;
  };
  const std::string text = clean_text(record.subject + " " + record.body);
  if (text.empty()) return fail("empty-after-clean");
  try {
    check_consistency(model);
    const auto p = predict_tokens(model, split_tokens(text));
    out.state = TicketState::Classified;
    out.label = p.label;
    out.confidence = p.probs;
    out.model_fingerprint = model.fingerprint;
    out.transitions.emplace_back(TicketState::Classified, timestamp);
    return out;
  } catch (const std::exception& e) {
    return fail(std::string("model-error: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Sinks

int http_post(const std::string& url, const std::string& body, const std::string& idempotency_key) {
  // Split http://host[:port]/path into origin and path.
  const auto scheme = url.find("://");
  const auto path_at = url.find('/', scheme == std::string::npos ? 0 : scheme + 3);
  const std::string origin = path_at == std::string::npos ? url : url.substr(0, path_at);
  const std::string path = path_at == std::string::npos ? "/" : url.substr(path_at);
  httplib::Client cli(origin);
  cli.set_connection_timeout(std::chrono::seconds(2));
  cli.set_read_timeout(std::chrono::seconds(5));
  const httplib::Headers headers{{"Idempotency-Key", idempotency_key}};
  auto res = cli.Post(path, headers, body, "application/json");
  return res ? res->status : 0;
}

SinkSet::SinkSet(PerClass<SinkSpec> specs, RetryPolicy retry, WebhookPoster poster)
    : specs_(std::move(specs)), retry_(retry), poster_(std::move(poster)) {
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    if (!specs_[c].directory) continue;
    const auto& dir = *specs_[c].directory;
    std::filesystem::create_directories(dir);
    const auto file = dir / (std::string(label_slug(label_at(c))) + ".jsonl");
    if (std::filesystem::exists(file)) {
      std::string content;
      {
        std::ifstream in(file, std::ios::binary);
        std::ostringstream ss;
        ss << in.rdbuf();
        content = ss.str();
      }
      if (!content.empty() && content.back() != '\n') {
        const auto keep = content.rfind('\n') == std::string::npos ? 0 : content.rfind('\n') + 1;
        spdlog::warn("sink {}: dropping partial final line ({} bytes)", file.string(),
                     content.size() - keep);
        content.resize(keep);
        std::filesystem::resize_file(file, keep);
      }
      std::istringstream lines(content);
      std::string line;
      while (std::getline(lines, line)) {
        if (line.empty()) continue;
        try {
          delivered_.insert(ojson::parse(line).at("ticket_id").get<std::string>());
        } catch (const std::exception& e) {
          throw DataError("sink " + file.string() + " has a corrupt line: " + e.what());
        }
      }
    }
    files_[c] = std::make_unique<std::ofstream>(file, std::ios::binary | std::ios::app);
    if (!*files_[c]) throw Error("cannot open sink file " + file.string());
  }
}

bool SinkSet::delivered(const std::string& ticket_id) const { return delivered_.contains(ticket_id); }

std::string SinkSet::sink_line(const TicketRecord& r, const std::string& timestamp) {
  ojson j;
  j["ticket_id"] = r.ticket_id;
  j["label"] = r.label ? ojson(label_name(*r.label)) : ojson(nullptr);
  j["confidence"] = r.confidence ? ojson(*r.confidence) : ojson::array();
  j["ts"] = timestamp;
  return j.dump();
}

std::optional<std::string> SinkSet::deliver(const TicketRecord& record,
                                            const std::string& timestamp) {
  if (!record.label) return "record has no label";
  if (delivered_.contains(record.ticket_id)) return std::nullopt;
  const std::size_t c = index_of(*record.label);
  const auto& spec = specs_[c];
  if (!spec.directory && !spec.webhook_url)
    return "no sink configured for " + std::string(label_name(*record.label));

  const std::string line = sink_line(record, timestamp);
  if (spec.webhook_url) {
    bool ok = false;
    auto delay = retry_.base_delay;
    for (std::size_t attempt = 0; attempt < retry_.attempts; ++attempt) {
      const int status = poster_(*spec.webhook_url, line, record.ticket_id);
      if (status >= 200 && status < 300) {
        ok = true;
        break;
      }
      spdlog::warn("webhook {} attempt {} for {} returned {}", *spec.webhook_url, attempt + 1,
                   record.ticket_id, status);
      if (attempt + 1 < retry_.attempts) {
        std::this_thread::sleep_for(delay);
        delay *= 2;
      }
    }
    if (!ok) return "webhook-unreachable";
  }
  if (files_[c]) {
    *files_[c] << line << '\n';
    files_[c]->flush();
    if (!*files_[c]) return "sink file write failed";
    if (after_write) after_write();
  }
  delivered_.insert(record.ticket_id);
  return std::nullopt;
}

TicketRecord route(const TicketRecord& record, SinkSet& sinks, const std::string& timestamp) {
  if (record.state != TicketState::Classified)
    throw UsageError("route: ticket " + record.ticket_id + " is " +
                     std::string(state_name(record.state)) + ", expected classified");
  TicketRecord out = record;
  if (auto err = sinks.deliver(record, timestamp)) {
    out.state = TicketState::Failed;
    out.failure_reason = *err;
    out.transitions.emplace_back(TicketState::Failed, timestamp);
  } else {
    out.state = TicketState::Routed;
    out.transitions.emplace_back(TicketState::Routed, timestamp);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Event log

std::string event_line(const Event& e) {
  ojson j;
  j["ts"] = e.ts;
  j["ticket_id"] = e.ticket_id;
  j["event"] = e.event;
  j["payload"] = e.payload;
  return j.dump();
}

EventLog::EventLog(const std::filesystem::path& path)
    : out_(path, std::ios::binary | std::ios::app) {
  if (!out_) throw Error("cannot open event log " + path.string());
}

void EventLog::append(const Event& e) {
  out_ << event_line(e) << '\n';
  out_.flush();
  if (!out_) throw Error("event log write failed");
}

namespace {

Event parse_event(const std::string& line) {
  const auto j = ojson::parse(line);
  Event e;
  e.ts = j.at("ts").get<std::string>();
  e.ticket_id = j.at("ticket_id").get<std::string>();
  e.event = j.at("event").get<std::string>();
  e.payload = j.at("payload");
  return e;
}

std::optional<TicketState> parse_state(std::string_view s) {
  for (auto st : {TicketState::Received, TicketState::Classified, TicketState::Routed,
                  TicketState::Failed})
    if (state_name(st) == s) return st;
  return std::nullopt;
}

}  // namespace

void apply_event(std::map<std::string, TicketRecord>& records, const Event& e) {
  const auto st = parse_state(e.event);
  if (!st) throw DataError("event log: unknown event '" + e.event + "'");
  if (*st == TicketState::Received) {
    TicketRecord r;
    r.ticket_id = e.ticket_id;
    r.subject = e.payload.value("subject", "");
    r.body = e.payload.value("body", "");
    r.transitions.emplace_back(TicketState::Received, e.ts);
    records.emplace(e.ticket_id, std::move(r));
    return;
  }
  auto it = records.find(e.ticket_id);
  if (it == records.end())
    throw DataError("event log: " + e.event + " event for unknown ticket " + e.ticket_id);
  TicketRecord& r = it->second;
  r.state = *st;
  r.transitions.emplace_back(*st, e.ts);
  if (*st == TicketState::Classified) {
    auto label = parse_label(e.payload.at("label").get<std::string>());
    if (!label) throw DataError("event log: bad label for " + e.ticket_id);
    r.label = label;
    r.confidence = e.payload.at("confidence").get<PerClass<double>>();
    r.model_fingerprint = e.payload.at("model_fingerprint").get<std::string>();
  } else if (*st == TicketState::Failed) {
    r.failure_reason = e.payload.value("reason", "");
  }
}

RecoveredState recover(const std::filesystem::path& path) {
  RecoveredState out;
  if (!std::filesystem::exists(path)) return out;
  std::string content;
  {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read event log " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    content = ss.str();
  }

  std::vector<std::pair<std::size_t, std::string>> lines;  // (start offset, text)
  std::size_t pos = 0;
  std::size_t good_end = 0;
  while (pos < content.size()) {
    const auto nl = content.find('\n', pos);
    if (nl == std::string::npos) {
      out.warnings.push_back("event log: ignoring incomplete final line (" +
                             std::to_string(content.size() - pos) + " bytes)");
      break;
    }
    lines.emplace_back(pos, content.substr(pos, nl - pos));
    pos = nl + 1;
    good_end = pos;
  }

  std::map<std::string, TicketRecord> records;
  std::vector<std::string> order;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].second.empty()) continue;
    Event e;
    try {
      e = parse_event(lines[i].second);
    } catch (const std::exception& ex) {
      if (i + 1 == lines.size()) {
        out.warnings.push_back(std::string("event log: ignoring corrupt final line: ") + ex.what());
        good_end = lines[i].first;
        break;
      }
      throw DataError("event log " + path.string() + ": corrupt line " + std::to_string(i + 1) +
                      ": " + ex.what());
    }
    if (e.event == "received" && !records.contains(e.ticket_id)) order.push_back(e.ticket_id);
    apply_event(records, e);
  }
  if (good_end < content.size()) std::filesystem::resize_file(path, good_end);

  for (const auto& id : order) {
    const auto& r = records.at(id);
    if (r.state == TicketState::Received) out.pending_classify.push_back(id);
    if (r.state == TicketState::Classified) out.pending_route.push_back(id);
    out.records.push_back(r);
  }
  for (const auto& w : out.warnings) spdlog::warn("{}", w);
  return out;
}

// ---------------------------------------------------------------------------
// Configuration

RouterConfig read_router_config(const std::filesystem::path& path) {
  const auto kv = read_config_file(path);
  const auto base = path.parent_path();
  auto resolve = [&](const std::string& p) {
    std::filesystem::path fp(p);
    return fp.is_absolute() ? fp : base / fp;
  };
  auto number = [](const std::string& k, const std::string& v) {
    try {
      std::size_t used = 0;
      const auto n = std::stoull(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return static_cast<std::size_t>(n);
    } catch (const std::exception&) {
      throw UsageError("router config: invalid number '" + v + "' for " + k);
    }
  };

  RouterConfig cfg;
  std::optional<std::filesystem::path> default_dir;
  for (const auto& [k, v] : kv) {
    if (k == "queue_capacity") cfg.queue_capacity = number(k, v);
    else if (k == "worker_count") cfg.worker_count = number(k, v);
    else if (k == "model") cfg.model_path = resolve(v);
    else if (k == "persistence") cfg.persistence_path = resolve(v);
    else if (k == "webhook_attempts") cfg.webhook_retry.attempts = number(k, v);
    else if (k == "webhook_backoff_ms")
      cfg.webhook_retry.base_delay = std::chrono::milliseconds(number(k, v));
    else if (k == "listen") {
      const auto colon = v.rfind(':');
      if (colon == std::string::npos) throw UsageError("router config: listen must be host:port");
      cfg.listen_host = v.substr(0, colon);
      cfg.listen_port = static_cast<int>(number(k, v.substr(colon + 1)));
    } else if (k == "sink_dir") {
      default_dir = resolve(v);
    } else if (k == "crash_after") {
      const auto colon = v.find(':');
      if (colon == std::string::npos) throw UsageError("router config: crash_after is stage:count");
      cfg.crash_point = CrashPoint{v.substr(0, colon), number(k, v.substr(colon + 1))};
    } else if (k.starts_with("sink.")) {
      const auto dot = k.find('.', 5);
      const auto label = parse_label(k.substr(5, dot == std::string::npos ? std::string::npos : dot - 5));
      const std::string field = dot == std::string::npos ? "" : k.substr(dot + 1);
      if (!label || (field != "dir" && field != "webhook"))
        throw UsageError("router config: unknown key '" + k + "'");
      auto& s = cfg.sinks[index_of(*label)];
      if (field == "dir") s.directory = resolve(v);
      else s.webhook_url = v;
    } else {
      throw UsageError("router config: unknown key '" + k + "'");
    }
  }
  // sink.<label>.dir wins over sink_dir.
  if (default_dir)
    for (auto& s : cfg.sinks)
      if (!s.directory) s.directory = default_dir;
  if (cfg.queue_capacity < 1) throw UsageError("router config: queue_capacity must be at least 1");
  if (cfg.worker_count < 1) throw UsageError("router config: worker_count must be at least 1");
  return cfg;
}

// ---------------------------------------------------------------------------
// Service

ojson snapshot_to_json(const ServiceSnapshot& s) {
  return {{"counts",
           {{"accepted", s.accepted},
            {"classified", s.classified},
            {"routed", s.routed},
            {"failed", s.failed},
            {"in_flight", s.in_flight}}},
          {"queue_depth", s.queue_depth},
          {"worker_processed", s.worker_processed},
          {"model_fingerprint", s.model_fingerprint},
          {"uptime_seconds", s.uptime_seconds}};
}

namespace {

std::mutex g_crash_mu;

}  // namespace

RouterService::RouterService(RouterConfig config, std::shared_ptr<const TrainedModel> model)
    : config_(std::move(config)), model_(std::move(model)) {
  RecoveredState rec = recover(config_.persistence_path);
  warnings_ = rec.warnings;
  for (auto& r : rec.records) {
    ++totals_.accepted;
    for (const auto& [st, ts] : r.transitions) {
      if (st == TicketState::Classified) ++totals_.classified;
      if (st == TicketState::Routed) ++totals_.routed;
      if (st == TicketState::Failed) ++totals_.failed;
    }
    records_.emplace(r.ticket_id, std::move(r));
  }
  totals_.in_flight = totals_.accepted - totals_.routed - totals_.failed;
  intake_.assign(rec.pending_classify.begin(), rec.pending_classify.end());
  routing_.assign(rec.pending_route.begin(), rec.pending_route.end());
  if (!rec.pending_classify.empty() || !rec.pending_route.empty())
    spdlog::info("recovered {} tickets: {} to classify, {} to route", records_.size(),
                 rec.pending_classify.size(), rec.pending_route.size());

  log_ = std::make_unique<EventLog>(config_.persistence_path);
  sinks_ = std::make_unique<SinkSet>(config_.sinks, config_.webhook_retry);
  sinks_->after_write = [this] { maybe_crash("sink"); };
  processed_.assign(config_.worker_count, 0);
  std::random_device rd;
  id_salt_ = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
  started_ = std::chrono::steady_clock::now();
}

RouterService::~RouterService() { stop(); }

void RouterService::start() {
  std::lock_guard lock(mu_);
  if (running_ || !model_) return;
  running_ = true;
  stopping_ = false;
  for (std::size_t w = 0; w < config_.worker_count; ++w)
    workers_.emplace_back([this, w] { worker_loop(w); });
  router_ = std::thread([this] { router_loop(); });
}

void RouterService::stop() {
  {
    std::lock_guard lock(mu_);
    if (!running_) return;
    stopping_ = true;
  }
  intake_cv_.notify_all();
  routing_cv_.notify_all();
  for (auto& t : workers_) t.join();
  workers_.clear();
  if (router_.joinable()) router_.join();
  std::lock_guard lock(mu_);
  running_ = false;
}

void RouterService::maybe_crash(const std::string& stage) {
  if (!config_.crash_point || config_.crash_point->stage != stage) return;
  std::lock_guard lock(g_crash_mu);
  if (++crash_counters_[stage] >= config_.crash_point->after) {
    spdlog::error("injected crash at stage '{}' after {} events", stage, crash_counters_[stage]);
    std::_Exit(86);
  }
}

std::string RouterService::new_ticket_id() {
  // UUID-shaped (version 4 layout); unique within the process by the counter.
  const std::uint64_t hi = mix64(id_salt_ ^ mix64(++id_counter_));
  const std::uint64_t lo = mix64(hi ^ id_counter_);
  return fmt::format("{:08x}-{:04x}-4{:03x}-{:04x}-{:012x}", hi >> 32, (hi >> 16) & 0xffff, hi & 0xfff,
                     0x8000 | (lo >> 48 & 0x3fff), lo & 0xffffffffffffULL);
}

void RouterService::record_event(const Event& e) {
  log_->append(e);
  apply_event(records_, e);
  if (e.event == "received") ++totals_.accepted;
  else if (e.event == "classified") ++totals_.classified;
  else if (e.event == "routed") ++totals_.routed;
  else if (e.event == "failed") ++totals_.failed;
  totals_.in_flight = totals_.accepted - totals_.routed - totals_.failed;
  if (totals_.in_flight == 0) idle_cv_.notify_all();
}

SubmitResult RouterService::submit(const std::optional<std::string>& ticket_id,
                                   const std::string& subject, const std::string& body) {
  if (!model_) throw ServiceUnavailable("no model loaded");
  if (subject.empty() && body.empty()) throw UsageError("ticket needs a subject or a body");
  std::unique_lock lock(mu_);
  const std::string id = ticket_id && !ticket_id->empty() ? *ticket_id : new_ticket_id();
  if (records_.contains(id)) return {id, SubmitStatus::Duplicate};
  if (intake_.size() >= config_.queue_capacity) return {id, SubmitStatus::RejectedFull};
  record_event({utc_now(), id, "received", {{"subject", subject}, {"body", body}}});
  intake_.push_back(id);
  intake_cv_.notify_one();
  maybe_crash("received");
  return {id, SubmitStatus::Accepted};
}

void RouterService::worker_loop(std::size_t worker) {
  for (;;) {
    TicketRecord rec;
    {
      std::unique_lock lock(mu_);
      intake_cv_.wait(lock, [&] { return stopping_ || !intake_.empty(); });
      if (stopping_) return;
      rec = records_.at(intake_.front());
      intake_.pop_front();
    }
    TicketRecord out = worker_step(rec, *model_);
    std::lock_guard lock(mu_);
    const std::string& ts = out.transitions.back().second;
    if (out.state == TicketState::Classified) {
      record_event({ts, out.ticket_id, "classified",
                    {{"label", label_name(*out.label)},
                     {"confidence", *out.confidence},
                     {"model_fingerprint", out.model_fingerprint}}});
      routing_.push_back(out.ticket_id);
      routing_cv_.notify_one();
    } else {
      record_event({ts, out.ticket_id, "failed", {{"reason", out.failure_reason}}});
    }
    ++processed_[worker];
    maybe_crash("classified");
  }
}

void RouterService::router_loop() {
  for (;;) {
    TicketRecord rec;
    {
      std::unique_lock lock(mu_);
      routing_cv_.wait(lock, [&] { return stopping_ || !routing_.empty(); });
      if (stopping_) return;
      rec = records_.at(routing_.front());
      routing_.pop_front();
    }
    const TicketRecord out = route(rec, *sinks_);
    std::lock_guard lock(mu_);
    const std::string& ts = out.transitions.back().second;
    if (out.state == TicketState::Routed)
      record_event({ts, out.ticket_id, "routed", ojson::object()});
    else
      record_event({ts, out.ticket_id, "failed", {{"reason", out.failure_reason}}});
    maybe_crash("routed");
  }
}

std::optional<TicketRecord> RouterService::lookup(const std::string& ticket_id) const {
  std::lock_guard lock(mu_);
  auto it = records_.find(ticket_id);
  if (it == records_.end()) return std::nullopt;
  return it->second;
}

ServiceSnapshot RouterService::snapshot() const {
  std::lock_guard lock(mu_);
  ServiceSnapshot s = totals_;
  s.queue_depth = intake_.size() + routing_.size();
  s.worker_processed = processed_;
  s.model_fingerprint = model_ ? model_->fingerprint : "";
  s.uptime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
  return s;
}

bool RouterService::wait_idle(std::chrono::milliseconds timeout) const {
  std::unique_lock lock(mu_);
  return idle_cv_.wait_for(lock, timeout, [&] { return totals_.in_flight == 0; });
}

}  // namespace triage
