#include "softtwin/controller.hpp"

#include <algorithm>
#include <cmath>

namespace softtwin::controller {

using modbus::ExceptionCode;
using modbus::ExceptionResponse;
using modbus::Pdu;

RegisterBlock encode_registers(const ControllerState& s) {
  return {static_cast<std::uint16_t>(s.pos_trigger ? 1 : 0),
          static_cast<std::uint16_t>(s.neg_trigger ? 1 : 0),
          modbus::pressure_to_register(s.pos_target),
          modbus::pressure_to_register(s.neg_target),
          modbus::pressure_to_register(std::clamp(s.true_pressure, kPressureMin, kPressureMax)),
          s.fault_flags};
}

ControllerState refresh_faults(ControllerState s) {
  if (s.pos_trigger && s.neg_trigger) {
    s.fault_flags |= kFaultConflictingTriggers;
  } else {
    s.fault_flags &= static_cast<std::uint16_t>(~kFaultConflictingTriggers);
  }
  return s;
}

ControllerState tick(ControllerState s, double dt, double tau, IdleBehavior idle) {
  if (!(dt > 0.0) || !(tau > 0.0)) return s;

  if (s.pos_trigger && s.neg_trigger) {
    // keep settling toward whatever target was active before the conflict
  } else if (s.pos_trigger) {
    s.active_target = s.pos_target;
  } else if (s.neg_trigger) {
    s.active_target = s.neg_target;
  } else {
    s.active_target = idle == IdleBehavior::vent ? 0.0 : s.true_pressure;
  }
  s = refresh_faults(s);

  const double target = s.active_target;
  s.true_pressure = target + (s.true_pressure - target) * std::exp(-dt / tau);
  s.true_pressure = std::clamp(s.true_pressure, kPressureMin, kPressureMax);
  return s;
}

namespace {

ExceptionResponse reject(std::uint8_t function, ExceptionCode code) { return {function, code}; }

bool writable(std::uint16_t address) { return address < reg::true_pressure; }

// Validates a raw register value for a writable address and applies it.
bool apply_write(ControllerState& s, std::uint16_t address, std::uint16_t raw) {
  const auto signed_raw = static_cast<std::int16_t>(raw);
  switch (address) {
    case reg::pos_trigger:
      if (raw > 1) return false;
      s.pos_trigger = raw == 1;
      return true;
    case reg::neg_trigger:
      if (raw > 1) return false;
      s.neg_trigger = raw == 1;
      return true;
    case reg::pos_target:
      if (signed_raw < 0 || signed_raw > static_cast<int>(kPosTargetMax * 10)) return false;
      s.pos_target = modbus::register_to_pressure(raw);
      return true;
    case reg::neg_target:
      if (signed_raw > 0 || signed_raw < static_cast<int>(kNegTargetMin * 10)) return false;
      s.neg_target = modbus::register_to_pressure(raw);
      return true;
    default:
      return false;
  }
}

HandleResult apply_writes(const ControllerState& state, std::uint8_t fc, std::uint16_t address,
                          std::span<const std::uint16_t> values, Pdu ok_response) {
  if (std::size_t(address) + values.size() > reg::count) return {state, reject(fc, ExceptionCode::illegal_data_address)};
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!writable(static_cast<std::uint16_t>(address + i))) return {state, reject(fc, ExceptionCode::illegal_data_address)};
  }
  ControllerState next = state;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!apply_write(next, static_cast<std::uint16_t>(address + i), values[i])) {
      return {state, reject(fc, ExceptionCode::illegal_data_value)};
    }
  }
  return {refresh_faults(next), std::move(ok_response)};
}

}  // namespace

HandleResult handle_request(const ControllerState& state, const Pdu& request) {
  const std::uint8_t fc = modbus::function_code(request) & 0x7F;

  if (const auto* read = std::get_if<modbus::ReadHoldingRequest>(&request)) {
    if (read->count < 1 || std::size_t(read->address) + read->count > reg::count) {
      return {state, reject(fc, ExceptionCode::illegal_data_address)};
    }
    const RegisterBlock regs = encode_registers(state);
    modbus::ReadHoldingResponse response;
    response.values.assign(regs.begin() + read->address, regs.begin() + read->address + read->count);
    return {state, std::move(response)};
  }

  if (const auto* write = std::get_if<modbus::WriteSingleRegister>(&request)) {
    const std::uint16_t value = write->value;
    return apply_writes(state, fc, write->address, std::span<const std::uint16_t>(&value, 1), *write);
  }

  if (const auto* write = std::get_if<modbus::WriteMultipleRequest>(&request)) {
    return apply_writes(state, fc, write->address, write->values,
                        modbus::WriteMultipleResponse{write->address, static_cast<std::uint16_t>(write->values.size())});
  }

  if (std::holds_alternative<ExceptionResponse>(request)) return {state, reject(fc, ExceptionCode::illegal_function)};

  // Response-shaped PDUs of a supported function are not valid requests.
  return {state, reject(fc, ExceptionCode::illegal_data_value)};
}

Controller::Controller(ControllerParams params, ControllerState initial)
    : params_(params), state_(refresh_faults(initial)) {}

Pdu Controller::handle(const Pdu& request) {
  std::lock_guard lock(mutex_);
  auto result = handle_request(state_, request);
  state_ = result.state;
  return std::move(result.response);
}

void Controller::advance(double dt) {
  std::lock_guard lock(mutex_);
  state_ = tick(state_, dt, params_.tau, params_.idle);
}

ControllerState Controller::snapshot() const {
  std::lock_guard lock(mutex_);
  return state_;
}

}  // namespace softtwin::controller
