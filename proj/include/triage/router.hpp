#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "triage/error.hpp"
#include "triage/label.hpp"
#include "triage/model.hpp"

namespace triage {

enum class TicketState { Received, Classified, Routed, Failed };

std::string_view state_name(TicketState s) noexcept;

/// A ticket's lifecycle. States only move forward (received -> classified ->
/// routed) or to failed; label and confidence are present iff the ticket
/// was classified.
struct TicketRecord {
  std::string ticket_id;
  std::string subject;
  std::string body;
  TicketState state = TicketState::Received;
  std::optional<Label> label;
  std::optional<PerClass<double>> confidence;
  std::string model_fingerprint;
  std::string failure_reason;
  std::vector<std::pair<TicketState, std::string>> transitions;  // state, ISO-8601 time

  friend bool operator==(const TicketRecord&, const TicketRecord&) = default;
};

nlohmann::ordered_json record_to_json(const TicketRecord& r);

/// UTC timestamp with millisecond precision, e.g. 2026-01-02T03:04:05.678Z.
std::string utc_now();

/// Thrown by the service when it cannot accept work (no model loaded).
class ServiceUnavailable : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Stateless classification step

/// Cleans subject + " " + body with the default stopword list, vectorizes for
/// the model family and predicts. Never throws for data or model problems:
/// those produce a failed record. Throws UsageError if the record is not in
/// the received state.
TicketRecord worker_step(const TicketRecord& record, const TrainedModel& model,
                         const std::string& timestamp = utc_now());

// ---------------------------------------------------------------------------
// Sinks

struct SinkSpec {
  std::optional<std::filesystem::path> directory;  // appends to <dir>/<label>.jsonl
  std::optional<std::string> webhook_url;          // http://host[:port]/path
};

/// POSTs a JSON body; returns the HTTP status or 0 when unreachable.
using WebhookPoster = std::function<int(const std::string& url, const std::string& body,
                                        const std::string& idempotency_key)>;
int http_post(const std::string& url, const std::string& body, const std::string& idempotency_key);

struct RetryPolicy {
  std::size_t attempts = 3;
  std::chrono::milliseconds base_delay{100};  // doubled after each failure
};

/// Per-label destinations. Directory sinks are idempotent by ticket id: ids
/// already present in the files are loaded at construction (a partial final
/// line left by a crash is cut off first) and never written again.
class SinkSet {
 public:
  SinkSet(PerClass<SinkSpec> specs, RetryPolicy retry = {}, WebhookPoster poster = http_post);

  /// Delivers a classified record. Returns an error reason on failure.
  std::optional<std::string> deliver(const TicketRecord& record, const std::string& timestamp);

  bool delivered(const std::string& ticket_id) const;
  static std::string sink_line(const TicketRecord& record, const std::string& timestamp);

  /// Called after a sink line reaches the file but before the record is
  /// marked routed (crash-injection hook).
  std::function<void()> after_write;

 private:
  PerClass<SinkSpec> specs_;
  RetryPolicy retry_;
  WebhookPoster poster_;
  std::set<std::string> delivered_;
  PerClass<std::unique_ptr<std::ofstream>> files_;
};

/// Appends the record to its label's sinks and marks it routed, or failed
/// with the sink error. Throws UsageError unless the record is classified.
TicketRecord route(const TicketRecord& record, SinkSet& sinks,
                   const std::string& timestamp = utc_now());

// ---------------------------------------------------------------------------
// Event log

/// One line per state transition:
///   {"ts":..., "ticket_id":..., "event":"received|classified|routed|failed", "payload":{...}}
struct Event {
  std::string ts;
  std::string ticket_id;
  std::string event;
  nlohmann::ordered_json payload;
};

std::string event_line(const Event& e);  // without trailing newline

class EventLog {
 public:
  explicit EventLog(const std::filesystem::path& path);
  void append(const Event& e);  // writes one line and flushes it to the OS

 private:
  std::ofstream out_;
};

struct RecoveredState {
  std::vector<TicketRecord> records;              // in first-seen order
  std::vector<std::string> pending_classify;      // state received
  std::vector<std::string> pending_route;         // state classified
  std::vector<std::string> warnings;
};

/// Replays the log. A final line that is incomplete or unparsable is ignored
/// with a warning and cut from the file; any other corrupt line is a
/// DataError. A missing file is an empty state.
RecoveredState recover(const std::filesystem::path& path);

/// Applies one event to a record map (shared by replay and the live service).
void apply_event(std::map<std::string, TicketRecord>& records, const Event& e);

// ---------------------------------------------------------------------------
// Service

struct CrashPoint {
  std::string stage;  // received | classified | sink | routed
  std::size_t after = 0;
};

struct RouterConfig {
  std::size_t queue_capacity = 1024;
  std::size_t worker_count = 2;
  std::filesystem::path model_path;
  PerClass<SinkSpec> sinks;
  std::string listen_host = "127.0.0.1";
  int listen_port = 8080;  // 0 picks a free port
  std::filesystem::path persistence_path = "router-events.log";
  RetryPolicy webhook_retry;
  std::optional<CrashPoint> crash_point;  // test-only fault injection
};

/// Flat key = value file (see docs/router.md); relative paths resolve
/// against the file's directory.
RouterConfig read_router_config(const std::filesystem::path& path);

enum class SubmitStatus { Accepted, Duplicate, RejectedFull };

struct SubmitResult {
  std::string ticket_id;
  SubmitStatus status;
};

struct ServiceSnapshot {
  std::size_t accepted = 0;  // tickets ever recorded as received
  std::size_t classified = 0;
  std::size_t routed = 0;
  std::size_t failed = 0;
  std::size_t in_flight = 0;  // currently received or classified
  std::size_t queue_depth = 0;
  std::vector<std::size_t> worker_processed;
  std::string model_fingerprint;
  double uptime_seconds = 0.0;
};

nlohmann::ordered_json snapshot_to_json(const ServiceSnapshot& s);

class RouterService {
 public:
  /// Replays the persistence log; unfinished tickets are queued again.
  RouterService(RouterConfig config, std::shared_ptr<const TrainedModel> model);
  ~RouterService();
  RouterService(const RouterService&) = delete;
  RouterService& operator=(const RouterService&) = delete;

  void start();
  /// Stops workers after their current item; queued tickets stay in the log.
  void stop();

  /// Throws UsageError when subject and body are both empty and
  /// ServiceUnavailable when no model is loaded.
  SubmitResult submit(const std::optional<std::string>& ticket_id, const std::string& subject,
                      const std::string& body);

  std::optional<TicketRecord> lookup(const std::string& ticket_id) const;
  ServiceSnapshot snapshot() const;
  /// Blocks until nothing is in flight or the timeout passes.
  bool wait_idle(std::chrono::milliseconds timeout) const;
  const std::vector<std::string>& recovery_warnings() const { return warnings_; }

 private:
  void worker_loop(std::size_t worker);
  void router_loop();
  void record_event(const Event& e);  // requires mu_
  void maybe_crash(const std::string& stage);
  std::string new_ticket_id();

  RouterConfig config_;
  std::shared_ptr<const TrainedModel> model_;
  std::unique_ptr<EventLog> log_;
  std::unique_ptr<SinkSet> sinks_;
  std::vector<std::string> warnings_;

  mutable std::mutex mu_;
  mutable std::condition_variable idle_cv_;
  std::condition_variable intake_cv_;
  std::condition_variable routing_cv_;
  std::map<std::string, TicketRecord> records_;
  std::deque<std::string> intake_;
  std::deque<std::string> routing_;
  std::vector<std::size_t> processed_;
  ServiceSnapshot totals_;
  std::map<std::string, std::size_t> crash_counters_;
  bool stopping_ = false;
  bool running_ = false;
  std::uint64_t id_counter_ = 0;
  std::uint64_t id_salt_ = 0;

  std::vector<std::thread> workers_;
  std::thread router_;
  std::chrono::steady_clock::time_point started_;
};

}  // namespace triage
