#pragma once

// Modbus TCP framing (MBAP header + PDU) for holding registers only:
// function codes 0x03, 0x06 and 0x10 plus exception responses.

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace softtwin::modbus {

using Bytes = std::vector<std::uint8_t>;

inline constexpr std::size_t kMbapSize = 7;        // header bytes including unit id
inline constexpr std::uint16_t kMaxLength = 260;   // largest accepted MBAP length field
inline constexpr std::uint16_t kMaxReadCount = 125;
inline constexpr std::uint16_t kMaxWriteCount = 123;

enum class FunctionCode : std::uint8_t {
  read_holding_registers = 0x03,
  write_single_register = 0x06,
  write_multiple_registers = 0x10,
};

enum class ExceptionCode : std::uint8_t {
  illegal_function = 0x01,
  illegal_data_address = 0x02,
  illegal_data_value = 0x03,
  server_device_failure = 0x04,
};

const char* to_string(ExceptionCode code);

struct MbapHeader {
  std::uint16_t transaction_id = 0;
  std::uint16_t protocol_id = 0;
  std::uint16_t length = 0;  // bytes after this field, unit id included
  std::uint8_t unit_id = 1;

  bool operator==(const MbapHeader&) const = default;
};

struct ReadHoldingRequest {
  std::uint16_t address = 0;
  std::uint16_t count = 1;
  bool operator==(const ReadHoldingRequest&) const = default;
};

struct ReadHoldingResponse {
  std::vector<std::uint16_t> values;
  bool operator==(const ReadHoldingResponse&) const = default;
};

// Request and its echo response share one layout.
struct WriteSingleRegister {
  std::uint16_t address = 0;
  std::uint16_t value = 0;
  bool operator==(const WriteSingleRegister&) const = default;
};

struct WriteMultipleRequest {
  std::uint16_t address = 0;
  std::vector<std::uint16_t> values;
  bool operator==(const WriteMultipleRequest&) const = default;
};

struct WriteMultipleResponse {
  std::uint16_t address = 0;
  std::uint16_t count = 0;
  bool operator==(const WriteMultipleResponse&) const = default;
};

struct ExceptionResponse {
  std::uint8_t function = 0;  // the rejected function code, high bit clear
  ExceptionCode code = ExceptionCode::illegal_function;
  bool operator==(const ExceptionResponse&) const = default;
};

using Pdu = std::variant<ReadHoldingRequest, ReadHoldingResponse, WriteSingleRegister, WriteMultipleRequest,
                         WriteMultipleResponse, ExceptionResponse>;

std::uint8_t function_code(const Pdu& pdu);

struct Frame {
  MbapHeader header;
  Pdu pdu;
  bool operator==(const Frame&) const = default;
};

class EncodeError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

Bytes encode_pdu(const Pdu& pdu);

// The length field is computed from the PDU; header.length is ignored.
Bytes encode_frame(const MbapHeader& header, const Pdu& pdu);

struct NeedMoreBytes {
  std::size_t count = 0;  // minimum additional bytes before anything can be decided
  bool operator==(const NeedMoreBytes&) const = default;
};

enum class DecodeErrorKind { protocol_error, frame_too_long, unsupported_function, malformed_pdu };

const char* to_string(DecodeErrorKind kind);

struct DecodeError {
  DecodeErrorKind kind = DecodeErrorKind::protocol_error;
  std::optional<MbapHeader> header;  // set once the full MBAP header was read
  std::uint8_t function = 0;         // raw function byte, when available
  std::size_t frame_size = 0;        // bytes to skip to resynchronize; 0 if the stream is lost
  std::string message;

  bool recoverable() const { return frame_size > 0; }
};

struct Decoded {
  Frame frame;
  std::size_t consumed = 0;
};

using DecodeResult = std::variant<Decoded, NeedMoreBytes, DecodeError>;

// Decodes the first frame in `bytes`. Never throws; every input yields a
// frame, a typed error or the number of bytes still missing.
DecodeResult decode_frame(std::span<const std::uint8_t> bytes) noexcept;

// Incremental decoder for one TCP stream.
class FrameAssembler {
public:
  using Item = std::variant<Frame, DecodeError>;

  void feed(std::span<const std::uint8_t> bytes);

  // Next frame or error; nullopt while a frame is incomplete. After an
  // unrecoverable error the assembler stays failed and drops further input.
  std::optional<Item> next();

  std::size_t buffered() const { return buffer_.size() - offset_; }
  bool failed() const { return failed_; }

private:
  Bytes buffer_;
  std::size_t offset_ = 0;
  bool failed_ = false;
};

// Signed pressure in 0.1 kPa per LSB, two's complement.
inline constexpr double kPressureLsbKpa = 0.1;
inline constexpr double kMaxEncodablePressure = 3276.7;

std::uint16_t pressure_to_register(double kpa);
double register_to_pressure(std::uint16_t raw) noexcept;

}  // namespace softtwin::modbus
