#include <array>
#include <chrono>

#include <sys/socket.h>

#include "softtwin/controller.hpp"

namespace softtwin::controller {

using namespace std::chrono_literals;

namespace {
constexpr auto kPollSlice = 50ms;
}

ControllerServer::ControllerServer(std::shared_ptr<Controller> controller, ServerOptions options)
    : controller_(std::move(controller)), options_(std::move(options)) {}

ControllerServer::~ControllerServer() { stop(); }

void ControllerServer::start() {
  if (running_) return;
  listener_ = net::listen_tcp(options_.bind);
  port_ = net::local_port(listener_);
  stopping_ = false;
  running_ = true;
  accept_thread_ = std::thread([this] { accept_loop(); });
  if (!options_.external_clock) tick_thread_ = std::thread([this] { tick_loop(); });
}

void ControllerServer::stop() {
  if (!running_) return;
  stopping_ = true;
  if (accept_thread_.joinable()) accept_thread_.join();
  if (tick_thread_.joinable()) tick_thread_.join();
  listener_.close();

  std::lock_guard lock(connections_mutex_);
  for (auto& conn : connections_)
    if (conn.thread.joinable()) conn.thread.join();
  connections_.clear();
  running_ = false;
}

void ControllerServer::tick_loop() {
  const double hz = options_.tick_hz > 0 ? options_.tick_hz : 100.0;
  const auto period = std::chrono::duration_cast<std::chrono::steady_clock::duration>(std::chrono::duration<double>(1.0 / hz));
  auto last = std::chrono::steady_clock::now();
  auto next = last + period;
  while (!stopping_) {
    std::this_thread::sleep_until(next);
    const auto now = std::chrono::steady_clock::now();
    controller_->advance(std::chrono::duration<double>(now - last).count());
    last = now;
    next += period;
    if (next < now) next = now + period;  // fell behind; do not burst
  }
}

void ControllerServer::accept_loop() {
  while (!stopping_) {
    reap_finished();
    if (!net::wait_readable(listener_, kPollSlice)) continue;
    net::Socket client(::accept4(listener_.fd(), nullptr, nullptr, SOCK_CLOEXEC));
    if (!client.valid()) continue;

    std::lock_guard lock(connections_mutex_);
    auto& conn = connections_.emplace_back();
    conn.socket = std::move(client);
    conn.thread = std::thread([this, &conn] { serve_connection(conn); });
  }
}

void ControllerServer::reap_finished() {
  std::lock_guard lock(connections_mutex_);
  for (auto it = connections_.begin(); it != connections_.end();) {
    if (it->done) {
      if (it->thread.joinable()) it->thread.join();
      it = connections_.erase(it);
    } else {
      ++it;
    }
  }
}

void ControllerServer::serve_connection(Connection& conn) {
  modbus::FrameAssembler assembler;
  std::array<std::uint8_t, 512> buf{};
  try {
    while (!stopping_) {
      const std::size_t n = net::recv_some(conn.socket, buf, kPollSlice);
      if (n == 0) continue;
      assembler.feed(std::span<const std::uint8_t>(buf.data(), n));

      while (auto item = assembler.next()) {
        if (auto* frame = std::get_if<modbus::Frame>(&*item)) {
          const modbus::Pdu response = controller_->handle(frame->pdu);
          net::send_all(conn.socket, modbus::encode_frame(frame->header, response));
          continue;
        }
        const auto& err = std::get<modbus::DecodeError>(*item);
        if (!err.recoverable() || !err.header) throw net::LinkError(err.message);
        const auto code = err.kind == modbus::DecodeErrorKind::unsupported_function
                              ? modbus::ExceptionCode::illegal_function
                              : modbus::ExceptionCode::illegal_data_value;
        const std::uint8_t fc = err.function & 0x7F;
        net::send_all(conn.socket, modbus::encode_frame(*err.header, modbus::ExceptionResponse{fc ? fc : std::uint8_t(0x7F), code}));
      }
    }
  } catch (const std::exception&) {
    // peer went away or sent an unrecoverable stream; drop this connection only
  }
  conn.socket.close();
  conn.done = true;
}

}  // namespace softtwin::controller
