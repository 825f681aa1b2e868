#include <doctest.h>

#include <fstream>

#include "support.hpp"
#include "triage/error.hpp"
#include "triage/model.hpp"
#include "triage/router.hpp"

using namespace triage;
using namespace std::chrono_literals;

namespace {

// NB model whose vocabulary makes "printer broken" a Problem, "upgrade" a
// Change and "access" a Request.
std::shared_ptr<TrainedModel> toy_model() {
  auto vocab = test::vocab_of({"access", "broken", "printer", "upgrade"});
  auto cv = [](std::initializer_list<std::pair<std::size_t, std::uint32_t>> e) {
    return CountVector{std::vector<std::pair<std::size_t, std::uint32_t>>(e), 4};
  };
  const std::vector<Labeled<CountVector>> data{
      {cv({{3, 3}}), Label::Change},
      {cv({{1, 2}, {2, 2}}), Label::Problem},
      {cv({{0, 3}}), Label::Request},
  };
  auto tm = std::make_shared<TrainedModel>();
  tm->model = nb_train(data, 1.0, vocab);
  stamp_fingerprint(*tm);
  return tm;
}

TicketRecord received(std::string id, std::string subject, std::string body = "") {
  TicketRecord r;
  r.ticket_id = std::move(id);
  r.subject = std::move(subject);
  r.body = std::move(body);
  r.transitions.emplace_back(TicketState::Received, "2026-01-01T00:00:00.000Z");
  return r;
}

std::vector<std::string> read_lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

void write_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream(p, std::ios::binary) << content;
}

std::string ev(const std::string& id, const std::string& event, nlohmann::ordered_json payload) {
  return event_line({"2026-01-01T00:00:00.000Z", id, event, std::move(payload)}) + "\n";
}

std::string classified_payload(const char* label) {
  return nlohmann::ordered_json{{"label", label}, {"confidence", {0.1, 0.8, 0.1}}, {"model_fingerprint", "f"}}
      .dump();
}

PerClass<SinkSpec> dir_sinks(const std::filesystem::path& dir) {
  PerClass<SinkSpec> s;
  for (auto& x : s) x.directory = dir;
  return s;
}

RouterConfig service_config(const test::TempDir& dir, std::size_t capacity = 64) {
  RouterConfig c;
  c.queue_capacity = capacity;
  c.worker_count = 2;
  c.persistence_path = dir / "events.log";
  c.sinks = dir_sinks(dir / "sinks");
  return c;
}

std::size_t sink_lines_total(const std::filesystem::path& dir) {
  std::size_t n = 0;
  for (auto l : kAllLabels) n += read_lines(dir / (std::string(label_slug(l)) + ".jsonl")).size();
  return n;
}

}  // namespace

TEST_CASE("worker_step classifies like the model") {
  const auto model = toy_model();
  const auto out = worker_step(received("t-1", "printer broken"), *model, "ts");
  CHECK(out.state == TicketState::Classified);
  REQUIRE(out.label);
  CHECK(*out.label == Label::Problem);
  CHECK(out.model_fingerprint == model->fingerprint);
  CHECK(out.transitions.back() == std::pair{TicketState::Classified, std::string("ts")});

  const auto direct = predict_tokens(*model, split_tokens(clean_text("printer broken ")));
  CHECK(*out.confidence == direct.probs);
}

TEST_CASE("worker_step failure paths") {
  const auto model = toy_model();
  const auto empty = worker_step(received("t-2", "!!!", "???"), *model, "ts");
  CHECK(empty.state == TicketState::Failed);
  CHECK(empty.failure_reason == "empty-after-clean");
  CHECK_FALSE(empty.label);

  const auto classified = worker_step(received("t-3", "upgrade"), *model, "ts");
  const auto copy = classified;
  CHECK_THROWS_AS(worker_step(classified, *model, "ts"), UsageError);
  CHECK(classified == copy);

  auto broken = *model;
  std::get<NBModel>(broken.model).token_log_likelihood.resize(5);
  const auto bad = worker_step(received("t-4", "printer"), broken, "ts");
  CHECK(bad.state == TicketState::Failed);
  CHECK(bad.failure_reason.starts_with("model-error"));
}

TEST_CASE("worker_step is stateless across worker threads") {
  const auto model = toy_model();
  const auto rec = received("t-5", "access printer upgrade broken", "printer");
  const auto reference = worker_step(rec, *model, "ts");
  std::vector<TicketRecord> results(4);
  std::vector<std::thread> threads;
  for (std::size_t w = 0; w < results.size(); ++w)
    threads.emplace_back([&, w] { results[w] = worker_step(rec, *model, "ts"); });
  for (auto& t : threads) t.join();
  for (const auto& r : results) CHECK(r == reference);
}

TEST_CASE("route appends once per ticket and is idempotent") {
  test::TempDir dir;
  const auto model = toy_model();
  SinkSet sinks(dir_sinks(dir.path));
  const auto c = worker_step(received("c-1", "upgrade"), *model, "ts");
  REQUIRE(*c.label == Label::Change);
  const auto routed = route(c, sinks, "ts2");
  CHECK(routed.state == TicketState::Routed);
  auto lines = read_lines(dir / "change.jsonl");
  REQUIRE(lines.size() == 1);
  const auto j = nlohmann::json::parse(lines[0]);
  CHECK(j["ticket_id"] == "c-1");
  CHECK(j["label"] == "Change");
  CHECK(j["confidence"].size() == 3);
  CHECK(j["ts"] == "ts2");

  CHECK(route(c, sinks, "ts3").state == TicketState::Routed);
  CHECK(read_lines(dir / "change.jsonl").size() == 1);

  // A fresh SinkSet over the same directory remembers delivered ids.
  SinkSet reopened(dir_sinks(dir.path));
  CHECK(reopened.delivered("c-1"));
  route(c, reopened, "ts4");
  CHECK(read_lines(dir / "change.jsonl").size() == 1);

  CHECK_THROWS_AS(route(received("x", "printer"), sinks, "ts"), UsageError);
}

TEST_CASE("route without a sink for the label fails the record") {
  const auto model = toy_model();
  SinkSet none(PerClass<SinkSpec>{});
  const auto r = route(worker_step(received("n-1", "access"), *model, "ts"), none, "ts");
  CHECK(r.state == TicketState::Failed);
  CHECK(r.failure_reason == "no sink configured for Request");
}

TEST_CASE("webhook retries three times with backoff, then fails") {
  const auto model = toy_model();
  PerClass<SinkSpec> specs;
  specs[1].webhook_url = "http://127.0.0.1:9/hook";
  std::vector<std::chrono::steady_clock::time_point> calls;
  SinkSet sinks(specs, RetryPolicy{3, 5ms}, [&](const std::string&, const std::string&, const std::string& key) {
    calls.push_back(std::chrono::steady_clock::now());
    CHECK(key == "w-1");
    return 503;
  });
  const auto r = route(worker_step(received("w-1", "printer broken"), *model, "ts"), sinks, "ts");
  CHECK(r.state == TicketState::Failed);
  CHECK(r.failure_reason == "webhook-unreachable");
  REQUIRE(calls.size() == 3);
  CHECK(calls[1] - calls[0] >= 5ms);
  CHECK(calls[2] - calls[1] >= 10ms);

  int attempts = 0;
  SinkSet flaky(specs, RetryPolicy{3, 1ms}, [&](const std::string&, const std::string& body, const std::string&) {
    CHECK(nlohmann::json::parse(body)["ticket_id"] == "w-2");
    return ++attempts < 3 ? 500 : 200;
  });
  const auto ok = route(worker_step(received("w-2", "printer broken"), *model, "ts"), flaky, "ts");
  CHECK(ok.state == TicketState::Routed);
  CHECK(attempts == 3);
}

TEST_CASE("sink reload trims a partial final line and rejects a corrupt middle line") {
  test::TempDir dir;
  write_file(dir / "problem.jsonl", "{\"ticket_id\":\"a\"}\n{\"ticket_id\":\"b\"}\n{\"ticket_i");
  SinkSet sinks(dir_sinks(dir.path));
  CHECK(sinks.delivered("a"));
  CHECK(sinks.delivered("b"));
  CHECK(read_lines(dir / "problem.jsonl").size() == 2);

  write_file(dir / "problem.jsonl", "{\"ticket_id\":\"a\"}\nnot json\n{\"ticket_id\":\"b\"}\n");
  CHECK_THROWS_AS(SinkSet(dir_sinks(dir.path)), DataError);
}

TEST_CASE("recover: replay semantics") {
  test::TempDir dir;
  const auto log = dir / "events.log";
  CHECK(recover(log).records.empty());

  std::string s;
  for (int i = 0; i < 5; ++i) s += ev("r" + std::to_string(i), "received", {{"subject", "s"}, {"body", "b"}});
  for (int i = 0; i < 3; ++i) {
    s += event_line({"t", "r" + std::to_string(i), "classified", nlohmann::ordered_json::parse(classified_payload("Problem"))}) + "\n";
    s += ev("r" + std::to_string(i), "routed", nlohmann::ordered_json::object());
  }
  write_file(log, s);
  const auto rec = recover(log);
  CHECK(rec.records.size() == 5);
  CHECK(rec.pending_classify == std::vector<std::string>{"r3", "r4"});
  CHECK(rec.pending_route.empty());
  CHECK(rec.warnings.empty());
  CHECK(rec.records[0].state == TicketState::Routed);
  CHECK(*rec.records[0].label == Label::Problem);
  CHECK(rec.records[0].transitions.size() == 3);
}

TEST_CASE("recover: truncated tail is cut with a warning") {
  test::TempDir dir;
  const auto log = dir / "events.log";
  const std::string good = ev("a", "received", {{"subject", "s"}, {"body", ""}}) +
                           event_line({"t", "a", "classified", nlohmann::ordered_json::parse(classified_payload("Change"))}) + "\n";
  write_file(log, good + "{\"ts\":\"2026");
  const auto rec = recover(log);
  CHECK(rec.warnings.size() == 1);
  CHECK(rec.pending_route == std::vector<std::string>{"a"});
  CHECK(std::filesystem::file_size(log) == good.size());

  // A complete but unparsable final line is treated the same way.
  write_file(log, good + "garbage\n");
  const auto again = recover(log);
  CHECK(again.warnings.size() == 1);
  CHECK(std::filesystem::file_size(log) == good.size());

  write_file(log, "garbage\n" + good);
  CHECK_THROWS_AS(recover(log), DataError);
}

TEST_CASE("service: submit, duplicate, lookup") {
  test::TempDir dir;
  RouterService svc(service_config(dir), toy_model());
  const auto snap = svc.snapshot();
  CHECK(snap.accepted == 0);
  CHECK(snap.routed == 0);
  CHECK(snap.queue_depth == 0);

  const auto a = svc.submit("t-1", "printer broken", "");
  CHECK(a.status == SubmitStatus::Accepted);
  CHECK(svc.lookup("t-1")->state == TicketState::Received);
  const auto before = *svc.lookup("t-1");
  CHECK(svc.submit("t-1", "something else", "entirely").status == SubmitStatus::Duplicate);
  CHECK(*svc.lookup("t-1") == before);
  CHECK_FALSE(svc.lookup("nope"));

  const auto gen = svc.submit(std::nullopt, "access", "");
  CHECK(gen.ticket_id.size() == 36);
  CHECK(gen.ticket_id[14] == '4');
  CHECK_THROWS_AS(svc.submit(std::nullopt, "", ""), UsageError);
}

TEST_CASE("service: backpressure rejects without persisting") {
  test::TempDir dir;
  RouterService svc(service_config(dir, 2), toy_model());
  CHECK(svc.submit("a", "printer", "").status == SubmitStatus::Accepted);
  CHECK(svc.submit("b", "printer", "").status == SubmitStatus::Accepted);
  CHECK(svc.submit("c", "printer", "").status == SubmitStatus::RejectedFull);
  CHECK_FALSE(svc.lookup("c"));
  CHECK(read_lines(dir / "events.log").size() == 2);
}

TEST_CASE("service: no model means unavailable") {
  test::TempDir dir;
  RouterService svc(service_config(dir), nullptr);
  CHECK_THROWS_AS(svc.submit("a", "printer", ""), ServiceUnavailable);
}

TEST_CASE("service: end-to-end routing, conservation and recovery") {
  test::TempDir dir;
  const auto model = toy_model();
  {
    RouterService svc(service_config(dir), model);
    svc.start();
    const char* texts[] = {"printer broken", "upgrade", "access", "!!!", "printer"};
    for (int i = 0; i < 5; ++i) svc.submit("e" + std::to_string(i), texts[i], "");
    REQUIRE(svc.wait_idle(10s));
    const auto s = svc.snapshot();
    CHECK(s.accepted == 5);
    CHECK(s.routed == 4);
    CHECK(s.failed == 1);
    CHECK(s.in_flight == 0);
    CHECK(s.queue_depth == 0);
    CHECK(s.accepted == s.routed + s.failed + s.in_flight);
    CHECK(s.worker_processed[0] + s.worker_processed[1] == 5);
    CHECK(svc.lookup("e3")->failure_reason == "empty-after-clean");
    const auto j = snapshot_to_json(s);
    CHECK(j["counts"]["routed"] == 4);

    // Router output equals calling the model directly.
    const auto rec = *svc.lookup("e0");
    const auto direct = predict_tokens(*model, split_tokens(clean_text("printer broken ")));
    CHECK(*rec.confidence == direct.probs);
    svc.stop();
  }
  CHECK(sink_lines_total(dir / "sinks") == 4);

  // Unfinished tickets in the log are picked up again after a restart.
  std::ofstream(dir / "events.log", std::ios::app) << ev("late", "received", {{"subject", "upgrade"}, {"body", ""}});
  RouterService again(service_config(dir), model);
  CHECK(again.snapshot().in_flight == 1);
  again.start();
  REQUIRE(again.wait_idle(10s));
  CHECK(again.lookup("late")->state == TicketState::Routed);
  CHECK(again.snapshot().accepted == 6);
  CHECK(sink_lines_total(dir / "sinks") == 5);
}

TEST_CASE("router config file") {
  test::TempDir dir;
  write_file(dir / "router.conf",
             "queue_capacity = 16\nworker_count = 3\nmodel = m/nb.model\npersistence = ev.log\n"
             "listen = 0.0.0.0:9090\nsink_dir = out\nsink.change.webhook = http://127.0.0.1:7000/x\n"
             "sink.problem.dir = /abs/problem\nwebhook_attempts = 5\nwebhook_backoff_ms = 10\n"
             "crash_after = sink:7\n");
  const auto c = read_router_config(dir / "router.conf");
  CHECK(c.queue_capacity == 16);
  CHECK(c.worker_count == 3);
  CHECK(c.model_path == dir / "m/nb.model");
  CHECK(c.persistence_path == dir / "ev.log");
  CHECK(c.listen_host == "0.0.0.0");
  CHECK(c.listen_port == 9090);
  CHECK(*c.sinks[0].directory == dir / "out");
  CHECK(*c.sinks[0].webhook_url == "http://127.0.0.1:7000/x");
  CHECK(*c.sinks[1].directory == "/abs/problem");
  CHECK(c.webhook_retry.attempts == 5);
  CHECK(c.webhook_retry.base_delay == 10ms);
  REQUIRE(c.crash_point);
  CHECK(c.crash_point->stage == "sink");
  CHECK(c.crash_point->after == 7);

  write_file(dir / "bad.conf", "worker_count = 0\n");
  CHECK_THROWS_AS(read_router_config(dir / "bad.conf"), UsageError);
  write_file(dir / "bad.conf", "sink.incident.dir = x\n");
  CHECK_THROWS_AS(read_router_config(dir / "bad.conf"), UsageError);
}
