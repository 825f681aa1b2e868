#include "triage/http_server.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

namespace triage {

using ojson = nlohmann::ordered_json;

struct HttpFrontend::Impl {
  RouterService& service;
  httplib::Server server;

  explicit Impl(RouterService& s) : service(s) {}
};

namespace {

void reply(httplib::Response& res, int status, const ojson& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

std::optional<std::string> string_field(const ojson& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  if (!j[key].is_string()) throw UsageError(std::string("field '") + key + "' must be a string");
  return j[key].get<std::string>();
}

}  // namespace

HttpFrontend::HttpFrontend(RouterService& service) : impl_(std::make_unique<Impl>(service)) {
  auto& srv = impl_->server;
  RouterService& svc = service;
  srv.set_tcp_nodelay(true);  // small JSON replies otherwise wait on delayed ACKs

  srv.Post("/tickets", [&svc](const httplib::Request& req, httplib::Response& res) {
    ojson body;
    try {
      body = ojson::parse(req.body);
      if (!body.is_object()) throw UsageError("body must be a JSON object");
      const auto id = string_field(body, "ticket_id");
      const auto subject = string_field(body, "subject").value_or("");
      const auto text = string_field(body, "body").value_or("");
      const auto r = svc.submit(id, subject, text);
      switch (r.status) {
        case SubmitStatus::Accepted:
          return reply(res, 202, {{"ticket_id", r.ticket_id}, {"status", "accepted"}});
        case SubmitStatus::Duplicate:
          return reply(res, 409, {{"ticket_id", r.ticket_id}, {"status", "duplicate"}});
        case SubmitStatus::RejectedFull:
          return reply(res, 429, {{"ticket_id", r.ticket_id}, {"status", "rejected-full"}});
      }
    } catch (const ojson::exception& e) {
      reply(res, 400, {{"error", std::string("invalid JSON: ") + e.what()}});
    } catch (const UsageError& e) {
      reply(res, 400, {{"error", e.what()}});
    } catch (const ServiceUnavailable& e) {
      reply(res, 503, {{"error", e.what()}});
    } catch (const std::exception& e) {
      spdlog::error("submit failed: {}", e.what());
      reply(res, 500, {{"error", e.what()}});
    }
  });

  srv.Get(R"(/tickets/([^/]+))", [&svc](const httplib::Request& req, httplib::Response& res) {
    const auto rec = svc.lookup(req.matches[1]);
    if (!rec) return reply(res, 404, {{"error", "not-found"}, {"ticket_id", req.matches[1]}});
    reply(res, 200, record_to_json(*rec));
  });

  srv.Get("/metrics", [&svc](const httplib::Request&, httplib::Response& res) {
    reply(res, 200, snapshot_to_json(svc.snapshot()));
  });

  srv.Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
    reply(res, 200, {{"status", "ok"}});
  });
}

HttpFrontend::~HttpFrontend() { stop(); }

int HttpFrontend::bind(const std::string& host, int port) {
  auto& srv = impl_->server;
  if (port == 0) {
    const int p = srv.bind_to_any_port(host);
    if (p < 0) throw Error("cannot bind " + host);
    return p;
  }
  if (!srv.bind_to_port(host, port)) throw Error("cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void HttpFrontend::serve() { impl_->server.listen_after_bind(); }

void HttpFrontend::stop() {
  if (impl_) impl_->server.stop();
}

}  // namespace triage
