#include <doctest.h>

#include <atomic>
#include <random>
#include <thread>

#include "softtwin/controller.hpp"
#include "softtwin/modbus_client.hpp"
#include "support/oracles.hpp"

using namespace softtwin;
using namespace softtwin::controller;
using modbus::ExceptionCode;
using modbus::ExceptionResponse;

namespace {

ExceptionCode exception_of(const modbus::Pdu& pdu) {
  REQUIRE(std::holds_alternative<ExceptionResponse>(pdu));
  return std::get<ExceptionResponse>(pdu).code;
}

ControllerState apply(const ControllerState& s, const modbus::Pdu& req) { return handle_request(s, req).state; }

ControllerState decode_registers(const RegisterBlock& r) {
  ControllerState s;
  s.pos_trigger = r[reg::pos_trigger] != 0;
  s.neg_trigger = r[reg::neg_trigger] != 0;
  s.pos_target = modbus::register_to_pressure(r[reg::pos_target]);
  s.neg_target = modbus::register_to_pressure(r[reg::neg_target]);
  s.true_pressure = modbus::register_to_pressure(r[reg::true_pressure]);
  s.fault_flags = r[reg::fault_flags];
  return s;
}

std::shared_ptr<Controller> make_sim(double tau = 0.05) { return std::make_shared<Controller>(ControllerParams{tau, IdleBehavior::vent}); }

ServerOptions local_options(bool external_clock = false) {
  ServerOptions o;
  o.bind = {"127.0.0.1", 0};
  o.tick_hz = 200;
  o.external_clock = external_clock;
  return o;
}

}  // namespace

TEST_SUITE("controller dynamics") {
  TEST_CASE("one time constant from rest") {
    ControllerState s;
    s.pos_trigger = true;
    s.pos_target = 100;
    const auto next = tick(s, 0.15, 0.15);
    CHECK(next.true_pressure == doctest::Approx(63.212).epsilon(1e-5));
    CHECK(next.true_pressure == doctest::Approx(oracle::first_order(0, 100, 0.15, 0.15)).epsilon(1e-14));
  }

  TEST_CASE("target is a fixed point") {
    ControllerState s;
    s.pos_trigger = true;
    s.pos_target = 42.5;
    s.true_pressure = 42.5;
    for (double dt : {0.0001, 0.01, 1.0, 100.0}) CHECK(tick(s, dt, 0.15).true_pressure == 42.5);
  }

  TEST_CASE("ticks compose into the closed form") {
    ControllerState s;
    s.pos_trigger = true;
    s.pos_target = 120;
    for (int i = 0; i < 25; ++i) s = tick(s, 0.01, 0.05);
    CHECK(s.true_pressure == doctest::Approx(oracle::first_order(0, 120, 0.25, 0.05)).epsilon(1e-12));
  }

  TEST_CASE("approach is monotone and never overshoots") {
    for (double target : {50.0, 100.0, 120.0, -90.0}) {
      ControllerState s;
      if (target >= 0) s.pos_trigger = true, s.pos_target = target;
      else s.neg_trigger = true, s.neg_target = target;
      double prev_gap = std::abs(target);
      for (int i = 0; i < 500; ++i) {
        s = tick(s, 0.001, 0.05);
        const double gap = std::abs(s.true_pressure - target);
        REQUIRE(gap <= prev_gap);
        prev_gap = gap;
      }
    }
  }

  TEST_CASE("negative trigger drives toward the negative target") {
    ControllerState s;
    s.neg_trigger = true;
    s.neg_target = -90;
    s = tick(s, 1.0, 0.05);
    CHECK(s.true_pressure == doctest::Approx(-90.0).epsilon(1e-6));
  }

  TEST_CASE("idle behaviour") {
    ControllerState s;
    s.true_pressure = 80;
    s.active_target = 80;
    CHECK(tick(s, 0.05, 0.05, IdleBehavior::vent).true_pressure == doctest::Approx(80 * std::exp(-1.0)));
    CHECK(tick(s, 0.05, 0.05, IdleBehavior::hold).true_pressure == 80.0);
  }

  TEST_CASE("conflicting triggers keep the previous target and flag a fault") {
    ControllerState s;
    s.pos_trigger = true;
    s.pos_target = 100;
    s = tick(s, 0.05, 0.05);
    s.neg_trigger = true;
    s.neg_target = -50;
    const double before = s.true_pressure;
    s = tick(s, 0.05, 0.05);
    CHECK(s.true_pressure > before);
    CHECK(s.active_target == 100.0);
    CHECK((s.fault_flags & kFaultConflictingTriggers) != 0);
    s.neg_trigger = false;
    s = tick(s, 0.01, 0.05);
    CHECK((s.fault_flags & kFaultConflictingTriggers) == 0);
  }

  TEST_CASE("pressure stays in the physical envelope") {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-1000, 1000), dt(0, 2);
    for (int i = 0; i < 1000; ++i) {
      ControllerState s;
      s.true_pressure = u(rng);
      s.pos_trigger = true;
      s.pos_target = 200;
      s = tick(s, dt(rng), 0.05);
      CHECK(s.true_pressure >= kPressureMin);
      CHECK(s.true_pressure <= kPressureMax);
    }
  }

  TEST_CASE("degenerate time steps change nothing") {
    ControllerState s;
    s.pos_trigger = true;
    s.pos_target = 100;
    CHECK(tick(s, 0.0, 0.05) == s);
    CHECK(tick(s, -1.0, 0.05) == s);
    CHECK(tick(s, 0.1, 0.0) == s);
  }
}

TEST_SUITE("controller register map") {
  TEST_CASE("write then read a target") {
    const auto s = apply({}, modbus::WriteSingleRegister{reg::pos_target, 1000});
    CHECK(s.pos_target == 100.0);
    const auto r = handle_request(s, modbus::ReadHoldingRequest{reg::pos_target, 1});
    CHECK(std::get<modbus::ReadHoldingResponse>(r.response).values == std::vector<std::uint16_t>{1000});
  }

  TEST_CASE("write echoes the request") {
    const modbus::Pdu req = modbus::WriteSingleRegister{reg::pos_trigger, 1};
    CHECK(handle_request({}, req).response == req);
  }

  TEST_CASE("read-only registers") {
    CHECK(exception_of(handle_request({}, modbus::WriteSingleRegister{reg::true_pressure, 5}).response) ==
          ExceptionCode::illegal_data_address);
    CHECK(exception_of(handle_request({}, modbus::WriteSingleRegister{reg::fault_flags, 0}).response) ==
          ExceptionCode::illegal_data_address);
  }

  TEST_CASE("values outside register ranges") {
    CHECK(exception_of(handle_request({}, modbus::WriteSingleRegister{reg::pos_trigger, 2}).response) ==
          ExceptionCode::illegal_data_value);
    CHECK(exception_of(handle_request({}, modbus::WriteSingleRegister{reg::pos_target, 2001}).response) ==
          ExceptionCode::illegal_data_value);
    CHECK(exception_of(handle_request({}, modbus::WriteSingleRegister{reg::pos_target, modbus::pressure_to_register(-5)}).response) ==
          ExceptionCode::illegal_data_value);
    CHECK(exception_of(handle_request({}, modbus::WriteSingleRegister{reg::neg_target, 1}).response) ==
          ExceptionCode::illegal_data_value);
    CHECK(exception_of(handle_request({}, modbus::WriteSingleRegister{reg::neg_target, modbus::pressure_to_register(-100.1)}).response) ==
          ExceptionCode::illegal_data_value);
    CHECK(handle_request({}, modbus::WriteSingleRegister{reg::neg_target, modbus::pressure_to_register(-100)}).state.neg_target == -100.0);
  }

  TEST_CASE("addresses outside the map") {
    CHECK(exception_of(handle_request({}, modbus::ReadHoldingRequest{5, 2}).response) == ExceptionCode::illegal_data_address);
    CHECK(exception_of(handle_request({}, modbus::ReadHoldingRequest{6, 1}).response) == ExceptionCode::illegal_data_address);
    CHECK(exception_of(handle_request({}, modbus::WriteSingleRegister{9, 0}).response) == ExceptionCode::illegal_data_address);
  }

  TEST_CASE("multi-register write is all or nothing") {
    const std::vector<std::uint16_t> ok{1, 0, 500, modbus::pressure_to_register(-20)};
    const auto s = apply({}, modbus::WriteMultipleRequest{0, ok});
    CHECK(s.pos_trigger);
    CHECK(s.pos_target == 50.0);
    CHECK(s.neg_target == -20.0);

    const std::vector<std::uint16_t> bad{1, 0, 500, 7};  // neg_target must be <= 0
    const auto r = handle_request({}, modbus::WriteMultipleRequest{0, bad});
    CHECK(exception_of(r.response) == ExceptionCode::illegal_data_value);
    CHECK(r.state == ControllerState{});

    const std::vector<std::uint16_t> spills{300, 0};  // reaches true_pressure
    CHECK(exception_of(handle_request({}, modbus::WriteMultipleRequest{3, spills}).response) == ExceptionCode::illegal_data_address);
  }

  TEST_CASE("register block reproduces the state") {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> bit(0, 1), pos(0, 2000), neg(-1000, 0);
    ControllerState s;
    for (int i = 0; i < 500; ++i) {
      const std::vector<std::uint16_t> block{static_cast<std::uint16_t>(bit(rng)), static_cast<std::uint16_t>(bit(rng)),
                                             static_cast<std::uint16_t>(pos(rng)), static_cast<std::uint16_t>(neg(rng))};
      s = apply(s, modbus::WriteMultipleRequest{0, block});
      s = tick(s, 0.013, 0.05);
      const auto regs = encode_registers(s);
      const auto back = decode_registers(regs);
      CHECK(back.pos_trigger == s.pos_trigger);
      CHECK(back.neg_trigger == s.neg_trigger);
      CHECK(back.pos_target == s.pos_target);
      CHECK(back.neg_target == s.neg_target);
      CHECK(std::abs(back.true_pressure - s.true_pressure) <= 0.05 + 1e-12);
      CHECK(back.fault_flags == s.fault_flags);
    }
  }

  TEST_CASE("a response pdu sent as a request is malformed") {
    CHECK(exception_of(handle_request({}, modbus::ReadHoldingResponse{{1}}).response) == ExceptionCode::illegal_data_value);
  }
}

TEST_SUITE("controller server") {
  TEST_CASE("initial snapshot is all zeros") {
    ControllerServer server(make_sim(), local_options());
    server.start();
    modbus::ModbusClient client({"127.0.0.1", server.port()});
    client.connect();
    CHECK(client.read_holding(0, 6) == std::vector<std::uint16_t>(6, 0));
    server.stop();
  }

  TEST_CASE("exceptions travel over the wire") {
    ControllerServer server(make_sim(), local_options());
    server.start();
    modbus::ModbusClient client({"127.0.0.1", server.port()});
    client.connect();
    try {
      client.write_single(reg::true_pressure, 1);
      FAIL("expected exception");
    } catch (const modbus::ModbusException& e) {
      CHECK(e.code() == ExceptionCode::illegal_data_address);
      CHECK(e.function() == 0x06);
    }
    try {
      client.write_single(reg::pos_trigger, 2);
      FAIL("expected exception");
    } catch (const modbus::ModbusException& e) {
      CHECK(e.code() == ExceptionCode::illegal_data_value);
    }
    CHECK(client.read_holding(reg::pos_trigger, 1) == std::vector<std::uint16_t>{0});
  }

  TEST_CASE("unsupported function code gets illegal function") {
    ControllerServer server(make_sim(), local_options());
    server.start();
    auto sock = net::connect_tcp({"127.0.0.1", server.port()}, std::chrono::milliseconds(500));
    net::send_all(sock, oracle::mbap(0x0102, 1, {0x04, 0x00, 0x00, 0x00, 0x01}));
    modbus::FrameAssembler a;
    std::optional<modbus::FrameAssembler::Item> item;
    std::array<std::uint8_t, 64> buf;
    for (int i = 0; i < 20 && !item; ++i) {
      const auto n = net::recv_some(sock, buf, std::chrono::milliseconds(100));
      a.feed(std::span(buf).first(n));
      item = a.next();
    }
    REQUIRE(item);
    const auto& f = std::get<modbus::Frame>(*item);
    CHECK(f.header.transaction_id == 0x0102);
    CHECK(std::get<ExceptionResponse>(f.pdu) == ExceptionResponse{0x04, ExceptionCode::illegal_function});
  }

  TEST_CASE("readings approach the target monotonically") {
    auto sim = make_sim(0.05);
    ControllerServer server(sim, local_options());
    server.start();
    modbus::ModbusClient client({"127.0.0.1", server.port()});
    client.connect();
    client.write_single(reg::pos_target, 500);
    client.write_single(reg::pos_trigger, 1);
    std::int32_t prev = 0;
    bool reached = false;
    const auto t0 = std::chrono::steady_clock::now();
    while (std::chrono::steady_clock::now() - t0 < std::chrono::milliseconds(600)) {
      const auto raw = static_cast<std::int16_t>(client.read_holding(reg::true_pressure, 1)[0]);
      CHECK(raw >= prev - 1);  // rounding allows one LSB of jitter
      CHECK(raw <= 500);
      prev = std::max<std::int32_t>(prev, raw);
      if (std::abs(500 - raw) < 1) reached = true;
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    CHECK(reached);
  }

  TEST_CASE("readers never observe a torn multi-register write") {
    auto sim = make_sim();
    ControllerServer server(sim, local_options(true));
    server.start();
    std::atomic<bool> done{false};
    std::atomic<int> torn{0}, reads{0};
    std::thread reader([&] {
      modbus::ModbusClient client({"127.0.0.1", server.port()});
      client.connect();
      while (!done) {
        const auto v = client.read_holding(reg::pos_target, 2);
        // The writer always stores pos_target = -10 * neg_target.
        if (modbus::register_to_pressure(v[0]) != -10 * modbus::register_to_pressure(v[1])) ++torn;
        ++reads;
      }
    });
    {
      modbus::ModbusClient writer({"127.0.0.1", server.port()});
      writer.connect();
      for (int i = 0; i <= 200; ++i) {
        const double neg = -(i % 20) * 1.0;
        const std::vector<std::uint16_t> values{modbus::pressure_to_register(-10 * neg), modbus::pressure_to_register(neg)};
        writer.write_multiple(reg::pos_target, values);
      }
    }
    while (reads < 50) std::this_thread::sleep_for(std::chrono::milliseconds(1));
    done = true;
    reader.join();
    CHECK(torn == 0);
  }

  TEST_CASE("several clients at once") {
    ControllerServer server(make_sim(), local_options());
    server.start();
    std::vector<std::thread> threads;
    std::atomic<int> failures{0};
    for (int c = 0; c < 4; ++c) {
      threads.emplace_back([&, c] {
        try {
          modbus::ModbusClient client({"127.0.0.1", server.port()}, static_cast<std::uint8_t>(c + 1));
          client.connect();
          for (int i = 0; i < 50; ++i) {
            if (client.read_holding(0, 6).size() != 6) ++failures;
          }
        } catch (...) {
          ++failures;
        }
      });
    }
    for (auto& t : threads) t.join();
    CHECK(failures == 0);
  }

  TEST_CASE("bind failure names the address") {
    ControllerServer first(make_sim(), local_options());
    first.start();
    ServerOptions o = local_options();
    o.bind.port = first.port();
    ControllerServer second(make_sim(), o);
    try {
      second.start();
      FAIL("expected BindError");
    } catch (const net::BindError& e) {
      CHECK(std::string(e.what()).find(std::to_string(first.port())) != std::string::npos);
    }
  }

  TEST_CASE("stop is prompt with idle clients connected") {
    ControllerServer server(make_sim(), local_options());
    server.start();
    modbus::ModbusClient client({"127.0.0.1", server.port()});
    client.connect();
    client.read_holding(0, 1);
    const auto t0 = std::chrono::steady_clock::now();
    server.stop();
    CHECK(std::chrono::steady_clock::now() - t0 < std::chrono::seconds(2));
    CHECK_FALSE(server.running());
  }
}
