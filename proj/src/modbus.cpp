#include "softtwin/modbus.hpp"

#include <cmath>

namespace softtwin::modbus {
namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

void put16(Bytes& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
}

std::uint16_t get16(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint16_t>((b[at] << 8) | b[at + 1]);
}

void check_window(std::uint16_t address, std::size_t count, std::size_t max_count, const char* what) {
  if (count < 1 || count > max_count) {
    throw EncodeError(std::string(what) + ": register count " + std::to_string(count) + " outside [1, " +
                      std::to_string(max_count) + "]");
  }
  if (std::size_t(address) + count > 0x10000) throw EncodeError(std::string(what) + ": register window exceeds address space");
}

DecodeError make_error(DecodeErrorKind kind, std::string message) {
  DecodeError e;
  e.kind = kind;
  e.message = std::move(message);
  return e;
}

}  // namespace

const char* to_string(ExceptionCode code) {
  switch (code) {
    case ExceptionCode::illegal_function: return "illegal-function";
    case ExceptionCode::illegal_data_address: return "illegal-data-address";
    case ExceptionCode::illegal_data_value: return "illegal-data-value";
    case ExceptionCode::server_device_failure: return "server-device-failure";
  }
  return "unknown-exception";
}

const char* to_string(DecodeErrorKind kind) {
  switch (kind) {
    case DecodeErrorKind::protocol_error: return "protocol-error";
    case DecodeErrorKind::frame_too_long: return "frame-too-long";
    case DecodeErrorKind::unsupported_function: return "unsupported-function";
    case DecodeErrorKind::malformed_pdu: return "malformed-pdu";
  }
  return "unknown";
}

std::uint8_t function_code(const Pdu& pdu) {
  return std::visit(overloaded{
                        [](const ReadHoldingRequest&) -> std::uint8_t { return 0x03; },
                        [](const ReadHoldingResponse&) -> std::uint8_t { return 0x03; },
                        [](const WriteSingleRegister&) -> std::uint8_t { return 0x06; },
                        [](const WriteMultipleRequest&) -> std::uint8_t { return 0x10; },
                        [](const WriteMultipleResponse&) -> std::uint8_t { return 0x10; },
                        [](const ExceptionResponse& e) -> std::uint8_t { return e.function | 0x80; },
                    },
                    pdu);
}

Bytes encode_pdu(const Pdu& pdu) {
  Bytes out;
  out.push_back(function_code(pdu));
  std::visit(overloaded{
                 [&](const ReadHoldingRequest& r) {
                   check_window(r.address, r.count, kMaxReadCount, "read holding registers");
                   put16(out, r.address);
                   put16(out, r.count);
                 },
                 [&](const ReadHoldingResponse& r) {
                   if (r.values.empty() || r.values.size() > kMaxReadCount) {
                     throw EncodeError("read response must carry 1..125 registers");
                   }
                   out.push_back(static_cast<std::uint8_t>(2 * r.values.size()));
                   for (auto v : r.values) put16(out, v);
                 },
                 [&](const WriteSingleRegister& w) {
                   put16(out, w.address);
                   put16(out, w.value);
                 },
                 [&](const WriteMultipleRequest& w) {
                   check_window(w.address, w.values.size(), kMaxWriteCount, "write multiple registers");
                   put16(out, w.address);
                   put16(out, static_cast<std::uint16_t>(w.values.size()));
                   out.push_back(static_cast<std::uint8_t>(2 * w.values.size()));
                   for (auto v : w.values) put16(out, v);
                 },
                 [&](const WriteMultipleResponse& w) {
                   check_window(w.address, w.count, kMaxWriteCount, "write multiple response");
                   put16(out, w.address);
                   put16(out, w.count);
                 },
                 [&](const ExceptionResponse& e) {
                   if (e.function == 0 || (e.function & 0x80)) throw EncodeError("exception function code must be 1..0x7F");
                   out.push_back(static_cast<std::uint8_t>(e.code));
                 },
             },
             pdu);
  return out;
}

Bytes encode_frame(const MbapHeader& header, const Pdu& pdu) {
  if (header.protocol_id != 0) throw EncodeError("MBAP protocol id must be 0");
  const Bytes body = encode_pdu(pdu);
  Bytes out;
  out.reserve(kMbapSize + body.size());
  put16(out, header.transaction_id);
  put16(out, 0);
  put16(out, static_cast<std::uint16_t>(body.size() + 1));
  out.push_back(header.unit_id);
  out.insert(out.end(), body.begin(), body.end());
  return out;
}

namespace {

// Decodes a PDU whose function byte is fc and payload follows it. Request and
// response layouts of 0x03 and 0x10 differ in length parity, so no direction
// hint is needed.
std::variant<Pdu, DecodeError> decode_pdu(std::uint8_t fc, std::span<const std::uint8_t> payload) {
  const std::size_t n = payload.size();
  auto malformed = [&](std::string why) {
    auto e = make_error(DecodeErrorKind::malformed_pdu, std::move(why));
    e.function = fc;
    return e;
  };

  if (fc & 0x80) {
    if (n != 1) return malformed("exception response must carry exactly one code byte");
    if ((fc & 0x7F) == 0) return malformed("exception for function 0");
    const std::uint8_t code = payload[0];
    if (code < 0x01 || code > 0x04) return malformed("unknown exception code " + std::to_string(code));
    return Pdu{ExceptionResponse{static_cast<std::uint8_t>(fc & 0x7F), static_cast<ExceptionCode>(code)}};
  }

  switch (fc) {
    case 0x03: {
      if (n == 4) {
        const ReadHoldingRequest r{get16(payload, 0), get16(payload, 2)};
        if (r.count < 1 || r.count > kMaxReadCount) return malformed("read count outside [1, 125]");
        if (std::size_t(r.address) + r.count > 0x10000) return malformed("read window exceeds address space");
        return Pdu{r};
      }
      if (n >= 3 && (n % 2) == 1) {
        const std::size_t byte_count = payload[0];
        if (byte_count != n - 1 || byte_count == 0 || byte_count > 2 * kMaxReadCount) {
          return malformed("read response byte count does not match payload");
        }
        ReadHoldingResponse r;
        for (std::size_t i = 1; i < n; i += 2) r.values.push_back(get16(payload, i));
        return Pdu{std::move(r)};
      }
      return malformed("bad payload length for function 0x03");
    }
    case 0x06:
      if (n != 4) return malformed("bad payload length for function 0x06");
      return Pdu{WriteSingleRegister{get16(payload, 0), get16(payload, 2)}};
    case 0x10: {
      if (n == 4) {
        const WriteMultipleResponse r{get16(payload, 0), get16(payload, 2)};
        if (r.count < 1 || r.count > kMaxWriteCount) return malformed("write count outside [1, 123]");
        if (std::size_t(r.address) + r.count > 0x10000) return malformed("write window exceeds address space");
        return Pdu{r};
      }
      if (n >= 7) {
        const std::uint16_t address = get16(payload, 0);
        const std::uint16_t count = get16(payload, 2);
        const std::size_t byte_count = payload[4];
        if (count < 1 || count > kMaxWriteCount) return malformed("write count outside [1, 123]");
        if (byte_count != 2u * count || n != 5 + byte_count) return malformed("write byte count does not match payload");
        if (std::size_t(address) + count > 0x10000) return malformed("write window exceeds address space");
        WriteMultipleRequest r{address, {}};
        for (std::size_t i = 5; i < n; i += 2) r.values.push_back(get16(payload, i));
        return Pdu{std::move(r)};
      }
      return malformed("bad payload length for function 0x10");
    }
    default: {
      auto e = make_error(DecodeErrorKind::unsupported_function, "unsupported function code " + std::to_string(fc));
      e.function = fc;
      return e;
    }
  }
}

}  // namespace

DecodeResult decode_frame(std::span<const std::uint8_t> bytes) noexcept {
  try {
    if (bytes.size() >= 4 && get16(bytes, 2) != 0) {
      return make_error(DecodeErrorKind::protocol_error, "MBAP protocol id " + std::to_string(get16(bytes, 2)) + " != 0");
    }
    if (bytes.size() < kMbapSize) return NeedMoreBytes{kMbapSize - bytes.size()};

    MbapHeader header{get16(bytes, 0), get16(bytes, 2), get16(bytes, 4), bytes[6]};
    if (header.length > kMaxLength) {
      auto e = make_error(DecodeErrorKind::frame_too_long, "MBAP length " + std::to_string(header.length) + " exceeds 260");
      e.header = header;
      return e;
    }
    if (header.length < 2) {
      auto e = make_error(DecodeErrorKind::protocol_error, "MBAP length " + std::to_string(header.length) + " too short for a PDU");
      e.header = header;
      return e;
    }

    const std::size_t total = 6 + std::size_t(header.length);
    if (bytes.size() < total) return NeedMoreBytes{total - bytes.size()};

    const std::uint8_t fc = bytes[kMbapSize];
    auto pdu = decode_pdu(fc, bytes.subspan(kMbapSize + 1, total - kMbapSize - 1));
    if (auto* err = std::get_if<DecodeError>(&pdu)) {
      err->header = header;
      err->frame_size = total;
      return std::move(*err);
    }
    return Decoded{Frame{header, std::move(std::get<Pdu>(pdu))}, total};
  } catch (const std::exception& e) {
    return make_error(DecodeErrorKind::protocol_error, std::string("decoder failure: ") + e.what());
  }
}

void FrameAssembler::feed(std::span<const std::uint8_t> bytes) {
  if (failed_) return;
  if (offset_ > 0 && offset_ == buffer_.size()) {
    buffer_.clear();
    offset_ = 0;
  }
  buffer_.insert(buffer_.end(), bytes.begin(), bytes.end());
}

std::optional<FrameAssembler::Item> FrameAssembler::next() {
  if (failed_) return std::nullopt;
  const auto pending = std::span<const std::uint8_t>(buffer_).subspan(offset_);
  auto result = decode_frame(pending);
  if (std::holds_alternative<NeedMoreBytes>(result)) {
    if (offset_ > 4096) {
      buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(offset_));
      offset_ = 0;
    }
    return std::nullopt;
  }
  if (auto* err = std::get_if<DecodeError>(&result)) {
    if (err->recoverable()) {
      offset_ += err->frame_size;
    } else {
      failed_ = true;
      buffer_.clear();
      offset_ = 0;
    }
    return Item{std::move(*err)};
  }
  auto& decoded = std::get<Decoded>(result);
  offset_ += decoded.consumed;
  return Item{std::move(decoded.frame)};
}

std::uint16_t pressure_to_register(double kpa) {
  if (!std::isfinite(kpa)) throw EncodeError("pressure must be finite");
  // Range is checked on the rounded count so values that print as +/-3276.7 encode.
  const double scaled = std::round(kpa * 10.0);
  if (std::abs(scaled) > 32767.0) throw EncodeError("pressure " + std::to_string(kpa) + " kPa outside +/-3276.7");
  return static_cast<std::uint16_t>(static_cast<std::int16_t>(scaled));
}

double register_to_pressure(std::uint16_t raw) noexcept {
  return static_cast<std::int16_t>(raw) / 10.0;
}

}  // namespace softtwin::modbus
