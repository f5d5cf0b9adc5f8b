#include "softtwin/modbus_client.hpp"

#include <array>

namespace softtwin::modbus {

ModbusException::ModbusException(std::uint8_t function, ExceptionCode code)
    : std::runtime_error("modbus exception " + std::to_string(static_cast<int>(code)) + " (" + to_string(code) +
                         ") for function " + std::to_string(function)),
      function_(function),
      code_(code) {}

ModbusClient::ModbusClient(net::Endpoint server, std::uint8_t unit_id, std::chrono::milliseconds timeout)
    : server_(std::move(server)), unit_id_(unit_id), timeout_(timeout) {}

void ModbusClient::connect() {
  std::lock_guard lock(mutex_);
  if (!socket_.valid()) socket_ = net::connect_tcp(server_, timeout_);
}

void ModbusClient::close() {
  std::lock_guard lock(mutex_);
  socket_.close();
}

bool ModbusClient::connected() const {
  std::lock_guard lock(mutex_);
  return socket_.valid();
}

Pdu ModbusClient::transact(const Pdu& request) {
  std::lock_guard lock(mutex_);
  try {
    return transact_locked(request);
  } catch (const net::LinkError&) {
    socket_.close();
    throw;
  }
}

Pdu ModbusClient::transact_locked(const Pdu& request) {
  if (!socket_.valid()) socket_ = net::connect_tcp(server_, timeout_);

  const std::uint16_t txn = next_transaction_++;
  const Bytes frame = encode_frame(MbapHeader{txn, 0, 0, unit_id_}, request);
  net::send_all(socket_, frame);

  FrameAssembler assembler;
  std::array<std::uint8_t, 512> buf{};
  const auto deadline = std::chrono::steady_clock::now() + timeout_;
  for (;;) {
    while (auto item = assembler.next()) {
      if (auto* err = std::get_if<DecodeError>(&*item)) {
        throw net::LinkError(std::string("bad response from server: ") + err->message);
      }
      auto& response = std::get<Frame>(*item);
      // Stale replies to an earlier, timed-out request are skipped.
      if (response.header.transaction_id != txn) continue;
      return std::move(response.pdu);
    }
    const auto now = std::chrono::steady_clock::now();
    if (now >= deadline) throw net::LinkError("timed out waiting for response from " + server_.to_string());
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now) + std::chrono::milliseconds(1);
    const std::size_t n = net::recv_some(socket_, buf, left);
    assembler.feed(std::span<const std::uint8_t>(buf.data(), n));
  }
}

std::vector<std::uint16_t> ModbusClient::read_holding(std::uint16_t address, std::uint16_t count) {
  const Pdu response = transact(ReadHoldingRequest{address, count});
  if (const auto* ex = std::get_if<ExceptionResponse>(&response)) throw ModbusException(ex->function, ex->code);
  const auto* values = std::get_if<ReadHoldingResponse>(&response);
  if (!values || values->values.size() != count) throw net::LinkError("unexpected response to read holding registers");
  return values->values;
}

void ModbusClient::write_single(std::uint16_t address, std::uint16_t value) {
  const Pdu response = transact(WriteSingleRegister{address, value});
  if (const auto* ex = std::get_if<ExceptionResponse>(&response)) throw ModbusException(ex->function, ex->code);
  const auto* echo = std::get_if<WriteSingleRegister>(&response);
  if (!echo || echo->address != address || echo->value != value) throw net::LinkError("unexpected response to write single register");
}

void ModbusClient::write_multiple(std::uint16_t address, std::span<const std::uint16_t> values) {
  const Pdu response = transact(WriteMultipleRequest{address, {values.begin(), values.end()}});
  if (const auto* ex = std::get_if<ExceptionResponse>(&response)) throw ModbusException(ex->function, ex->code);
  const auto* ack = std::get_if<WriteMultipleResponse>(&response);
  if (!ack || ack->address != address || ack->count != values.size()) {
    throw net::LinkError("unexpected response to write multiple registers");
  }
}

}  // namespace softtwin::modbus
