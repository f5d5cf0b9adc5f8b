#pragma once

#include <atomic>
#include <filesystem>
#include <memory>
#include <thread>

#include "softtwin/twin.hpp"

namespace httplib {
class Server;
}

namespace softtwin::twin {

// JSON API over a running engine:
//   GET  /state    latest TwinState
//   GET  /config   effective TwinConfig
//   POST /command  {"type":"set_pos_target","value":100.0} -> CommandAck
//   GET  /stream   server-sent events, one `data:` line per published state
//   GET  /health   link and publication counters
class TwinHttpServer {
public:
  TwinHttpServer(TwinEngine& engine, net::Endpoint bind, std::filesystem::path static_dir = {});
  ~TwinHttpServer();
  TwinHttpServer(const TwinHttpServer&) = delete;
  TwinHttpServer& operator=(const TwinHttpServer&) = delete;

  // Binds (throws net::BindError) and serves on a background thread.
  void start();
  void stop();
  std::uint16_t port() const { return port_; }

private:
  void install_routes();

  TwinEngine& engine_;
  net::Endpoint bind_;
  std::filesystem::path static_dir_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  std::atomic<bool> stopping_{false};
  std::uint16_t port_ = 0;
};

}  // namespace softtwin::twin
