#pragma once

#include <memory>
#include <string>
#include <thread>

#include <httplib.h>

#include "specbench/backends.hpp"

namespace specbench::testing {

// A ScorerServer on an ephemeral localhost port, served from a thread.
class RunningServer {
 public:
  explicit RunningServer(std::shared_ptr<ScorerBackend> backend)
      : server_(std::move(backend)) {
    port_ = server_.bind_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.serve(); });
    wait_ready(url());
  }
  ~RunningServer() {
    server_.stop();
    thread_.join();
  }

  int port() const { return port_; }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

  static void wait_ready(const std::string& url) {
    for (int i = 0; i < 200; ++i) {
      httplib::Client c(url);
      if (auto r = c.Get("/v1/info")) return;
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
  }

 private:
  ScorerServer server_;
  int port_ = -1;
  std::thread thread_;
};

}  // namespace specbench::testing
