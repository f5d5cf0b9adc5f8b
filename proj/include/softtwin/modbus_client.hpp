#pragma once

#include <chrono>
#include <mutex>
#include <vector>

#include "softtwin/modbus.hpp"
#include "softtwin/net.hpp"

namespace softtwin::modbus {

// Exception response returned by the server, surfaced as-is.
class ModbusException : public std::runtime_error {
public:
  ModbusException(std::uint8_t function, ExceptionCode code);
  std::uint8_t function() const noexcept { return function_; }
  ExceptionCode code() const noexcept { return code_; }

private:
  std::uint8_t function_;
  ExceptionCode code_;
};

// Synchronous Modbus TCP client. One request in flight at a time; calls are
// serialized internally so several threads may share one client.
class ModbusClient {
public:
  ModbusClient(net::Endpoint server, std::uint8_t unit_id = 1,
               std::chrono::milliseconds timeout = std::chrono::milliseconds(250));

  void connect();
  void close();
  bool connected() const;

  std::vector<std::uint16_t> read_holding(std::uint16_t address, std::uint16_t count);
  void write_single(std::uint16_t address, std::uint16_t value);
  void write_multiple(std::uint16_t address, std::span<const std::uint16_t> values);

  // Sends one request and returns the matching response PDU. Link failures
  // close the connection and throw net::LinkError.
  Pdu transact(const Pdu& request);

  const net::Endpoint& server() const { return server_; }

private:
  Pdu transact_locked(const Pdu& request);

  net::Endpoint server_;
  std::uint8_t unit_id_;
  std::chrono::milliseconds timeout_;
  mutable std::mutex mutex_;
  net::Socket socket_;
  std::uint16_t next_transaction_ = 1;
};

}  // namespace softtwin::modbus
