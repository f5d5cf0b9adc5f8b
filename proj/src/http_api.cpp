#include "softtwin/http_api.hpp"

#include <httplib.h>

namespace softtwin::twin {

using nlohmann::json;
using namespace std::chrono_literals;

namespace {

void reply_json(httplib::Response& res, const json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

}  // namespace

TwinHttpServer::TwinHttpServer(TwinEngine& engine, net::Endpoint bind, std::filesystem::path static_dir)
    : engine_(engine), bind_(std::move(bind)), static_dir_(std::move(static_dir)), server_(std::make_unique<httplib::Server>()) {
  install_routes();
}

TwinHttpServer::~TwinHttpServer() { stop(); }

void TwinHttpServer::install_routes() {
  auto& srv = *server_;

  srv.Get("/state", [this](const httplib::Request&, httplib::Response& res) {
    const auto state = engine_.latest();
    if (!state) return reply_json(res, {{"error", "no state published yet"}}, 503);
    reply_json(res, to_json(*state));
  });

  srv.Get("/config", [this](const httplib::Request&, httplib::Response& res) { reply_json(res, to_json(engine_.config())); });

  srv.Get("/health", [this](const httplib::Request&, httplib::Response& res) {
    const auto state = engine_.latest();
    reply_json(res, {{"status", "ok"},
                     {"link_ok", state ? state->link_ok : false},
                     {"published", engine_.sequence()},
                     {"polling", engine_.running()}});
  });

  srv.Post("/command", [this](const httplib::Request& req, httplib::Response& res) {
    Command cmd;
    try {
      cmd = command_from_json(json::parse(req.body));
    } catch (const std::exception& e) {
      return reply_json(res, {{"ok", false}, {"error", e.what()}}, 400);
    }
    try {
      const CommandAck ack = engine_.command(cmd);
      reply_json(res, to_json(ack), ack.ok ? 200 : 409);
    } catch (const InvalidArgument& e) {
      reply_json(res, {{"ok", false}, {"error", e.what()}}, 422);
    } catch (const Unavailable& e) {
      reply_json(res, {{"ok", false}, {"error", e.what()}}, 503);
    }
  });

  srv.Get("/stream", [this](const httplib::Request&, httplib::Response& res) {
    auto last_seq = std::make_shared<std::uint64_t>(0);
    res.set_header("Cache-Control", "no-cache");
    res.set_chunked_content_provider("text/event-stream", [this, last_seq](std::size_t, httplib::DataSink& sink) {
      while (!stopping_) {
        auto [state, seq] = engine_.wait_for_update(*last_seq, 200ms);
        if (!state || seq <= *last_seq) continue;
        *last_seq = seq;
        const std::string event = "data: " + to_json(*state).dump() + "\n\n";
        return sink.write(event.data(), event.size());
      }
      sink.done();
      return false;
    });
  });

  if (!static_dir_.empty()) srv.set_mount_point("/", static_dir_.string());
}

void TwinHttpServer::start() {
  if (thread_.joinable()) return;
  stopping_ = false;
  const std::string host = bind_.host.empty() ? "0.0.0.0" : bind_.host;
  if (bind_.port == 0) {
    const int port = server_->bind_to_any_port(host);
    if (port < 0) throw net::BindError("cannot bind HTTP server to " + host + ":0");
    port_ = static_cast<std::uint16_t>(port);
  } else {
    if (!server_->bind_to_port(host, bind_.port)) throw net::BindError("cannot bind HTTP server to " + bind_.to_string());
    port_ = bind_.port;
  }
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
}

void TwinHttpServer::stop() {
  stopping_ = true;
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace softtwin::twin
