#pragma once

#include <memory>
#include <string>

#include "triage/router.hpp"

namespace triage {

/// HTTP front end for a RouterService:
///   POST /tickets       202 accepted, 409 duplicate, 429 queue full, 400 bad payload, 503 no model
///   GET  /tickets/{id}  200 record, 404 not-found
///   GET  /metrics       service snapshot
///   GET  /healthz       200
class HttpFrontend {
 public:
  explicit HttpFrontend(RouterService& service);
  ~HttpFrontend();
  HttpFrontend(const HttpFrontend&) = delete;
  HttpFrontend& operator=(const HttpFrontend&) = delete;

  /// Binds and returns the port (port 0 picks a free one). Throws Error on failure.
  int bind(const std::string& host, int port);
  /// Serves until stop() is called from another thread.
  void serve();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace triage
