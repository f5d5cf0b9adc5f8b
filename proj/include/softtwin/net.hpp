#pragma once

// Minimal blocking TCP helpers over POSIX sockets.

#include <chrono>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>

namespace softtwin::net {

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;

  std::string to_string() const { return host + ":" + std::to_string(port); }
};

// "host:port"; a bare port means 0.0.0.0.
Endpoint parse_endpoint(const std::string& text);

class BindError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Connection refused, reset, closed by peer or timed out.
class LinkError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class Socket {
public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  ~Socket() { close(); }
  Socket(Socket&& other) noexcept : fd_(other.release()) {}
  Socket& operator=(Socket&& other) noexcept;
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;

  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  int release() {
    const int fd = fd_;
    fd_ = -1;
    return fd;
  }
  void close();
  // Stops pending reads/writes without releasing the descriptor.
  void shutdown();

private:
  int fd_ = -1;
};

Socket listen_tcp(const Endpoint& ep, int backlog = 16);
std::uint16_t local_port(const Socket& s);

Socket connect_tcp(const Endpoint& ep, std::chrono::milliseconds timeout);

// True when fd is readable within timeout.
bool wait_readable(const Socket& s, std::chrono::milliseconds timeout);

void send_all(const Socket& s, std::span<const std::uint8_t> bytes);

// Reads whatever is available (blocking up to timeout). Returns 0 bytes on
// timeout; throws LinkError when the peer closed or the socket failed.
std::size_t recv_some(const Socket& s, std::span<std::uint8_t> buffer, std::chrono::milliseconds timeout);

}  // namespace softtwin::net
