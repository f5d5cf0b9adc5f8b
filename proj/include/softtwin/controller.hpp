#pragma once

// Simulated pneumatic pressure controller exposed as a Modbus TCP server.
//
// Holding register map (version 1):
//
//   addr    item            encoding                      access
//   0x0000  pos_trigger     0/1                           R/W
//   0x0001  neg_trigger     0/1                           R/W
//   0x0002  pos_target      0.1 kPa signed, [0, 2000]     R/W
//   0x0003  neg_target      0.1 kPa signed, [-1000, 0]    R/W
//   0x0004  true_pressure   0.1 kPa signed                R
//   0x0005  fault_flags     bit0 = conflicting triggers   R

#include <array>
#include <atomic>
#include <cstdint>
#include <list>
#include <memory>
#include <mutex>
#include <thread>

#include "softtwin/modbus.hpp"
#include "softtwin/net.hpp"

namespace softtwin::controller {

inline constexpr std::uint16_t kRegisterMapVersion = 1;

namespace reg {
inline constexpr std::uint16_t pos_trigger = 0x0000;
inline constexpr std::uint16_t neg_trigger = 0x0001;
inline constexpr std::uint16_t pos_target = 0x0002;
inline constexpr std::uint16_t neg_target = 0x0003;
inline constexpr std::uint16_t true_pressure = 0x0004;
inline constexpr std::uint16_t fault_flags = 0x0005;
inline constexpr std::uint16_t count = 6;
}  // namespace reg

inline constexpr std::uint16_t kFaultConflictingTriggers = 0x0001;

inline constexpr double kPosTargetMax = 200.0;    // kPa
inline constexpr double kNegTargetMin = -100.0;   // kPa
inline constexpr double kPressureMin = -100.0;    // kPa
inline constexpr double kPressureMax = 200.0;     // kPa

struct ControllerState {
  bool pos_trigger = false;
  bool neg_trigger = false;
  double pos_target = 0;     // kPa, [0, 200]
  double neg_target = 0;     // kPa, [-100, 0]
  double true_pressure = 0;  // kPa, [-100, 200]
  std::uint16_t fault_flags = 0;
  double active_target = 0;  // target the pressure is currently settling toward

  bool operator==(const ControllerState&) const = default;
};

// What the valve does with no trigger set.
enum class IdleBehavior { vent, hold };

using RegisterBlock = std::array<std::uint16_t, reg::count>;

RegisterBlock encode_registers(const ControllerState& state);

// Recomputes fault bits from trigger state.
ControllerState refresh_faults(ControllerState state);

// First-order lag toward the effective target:
//   P <- target + (P - target) * exp(-dt / tau), clamped to the envelope.
// Conflicting triggers keep the previous target and raise fault bit0.
ControllerState tick(ControllerState state, double dt, double tau, IdleBehavior idle = IdleBehavior::vent);

struct HandleResult {
  ControllerState state;
  modbus::Pdu response;
};

// Applies one request to the register map. Invalid requests leave the state
// untouched and produce an exception response.
HandleResult handle_request(const ControllerState& state, const modbus::Pdu& request);

struct ControllerParams {
  double tau = 0.15;  // s
  IdleBehavior idle = IdleBehavior::vent;
};

// Thread-safe owner of the live state. Requests and ticks serialize on one
// mutex, so a multi-register write is never observed half applied.
class Controller {
public:
  explicit Controller(ControllerParams params = {}, ControllerState initial = {});

  modbus::Pdu handle(const modbus::Pdu& request);
  void advance(double dt);
  ControllerState snapshot() const;
  const ControllerParams& params() const { return params_; }

private:
  ControllerParams params_;
  mutable std::mutex mutex_;
  ControllerState state_;
};

struct ServerOptions {
  net::Endpoint bind{"0.0.0.0", 1502};
  double tick_hz = 100.0;
  // When set, no tick thread runs and the owner drives Controller::advance.
  bool external_clock = false;
};

class ControllerServer {
public:
  ControllerServer(std::shared_ptr<Controller> controller, ServerOptions options);
  ~ControllerServer();
  ControllerServer(const ControllerServer&) = delete;
  ControllerServer& operator=(const ControllerServer&) = delete;

  // Binds and starts serving; throws net::BindError naming the address.
  void start();
  // Stops accepting, lets every connection finish the request it is on and
  // joins all threads.
  void stop();

  bool running() const { return running_; }
  std::uint16_t port() const { return port_; }
  Controller& controller() { return *controller_; }

private:
  struct Connection {
    net::Socket socket;
    std::thread thread;
    std::atomic<bool> done{false};
  };

  void accept_loop();
  void tick_loop();
  void serve_connection(Connection& conn);
  void reap_finished();

  std::shared_ptr<Controller> controller_;
  ServerOptions options_;
  net::Socket listener_;
  std::uint16_t port_ = 0;
  std::atomic<bool> running_{false};
  std::atomic<bool> stopping_{false};
  std::thread accept_thread_;
  std::thread tick_thread_;
  std::mutex connections_mutex_;
  std::list<Connection> connections_;
};

}  // namespace softtwin::controller
