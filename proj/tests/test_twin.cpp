#include <doctest.h>

#include <set>
#include <sstream>
#include <thread>

#include "softtwin/calibration_io.hpp"
#include "softtwin/controller.hpp"
#include "softtwin/http_api.hpp"
#include "softtwin/twin.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

// <resolv.h> from httplib defines `_res`; keep it after Eigen.
#include <httplib.h>

using namespace softtwin;
using namespace softtwin::twin;
using namespace std::chrono_literals;
using nlohmann::json;

namespace {

constexpr double kPi = 3.14159265358979323846;

struct LiveSim {
  explicit LiveSim(double tau = 0.05, controller::ControllerState initial = {},
                   controller::IdleBehavior idle = controller::IdleBehavior::vent, bool external_clock = false,
                   std::uint16_t port = 0)
      : sim(std::make_shared<controller::Controller>(controller::ControllerParams{tau, idle}, initial)),
        server(sim, [&] {
          controller::ServerOptions o;
          o.bind = {"127.0.0.1", port};
          o.tick_hz = 200;
          o.external_clock = external_clock;
          return o;
        }()) {
    server.start();
  }

  TwinConfig config(CubicFit fit = fixture::demo_fit(), double poll_hz = 50) const {
    TwinConfig cfg;
    cfg.controller = {"127.0.0.1", server.port()};
    cfg.fit = fit;
    cfg.poll_hz = poll_hz;
    return cfg;
  }

  std::shared_ptr<controller::Controller> sim;
  controller::ControllerServer server;
};

HomTransformd recompute(const TwinState& s, const TwinConfig& cfg) {
  return end_effector(s.flange_pose, config_from_thetas(s.thetas_deg, cfg), cfg.mount);
}

template <typename Pred>
bool eventually(Pred pred, std::chrono::milliseconds timeout) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  while (std::chrono::steady_clock::now() < deadline) {
    if (pred()) return true;
    std::this_thread::sleep_for(5ms);
  }
  return pred();
}

}  // namespace

TEST_SUITE("pipeline") {
  TEST_CASE("zero fit gives the straight finger") {
    TwinConfig cfg;
    cfg.fit = fixture::linear_fit({0, 0, 0, 0});
    const auto s = pipeline_step(0, cfg);
    CHECK(s.error.empty());
    CHECK(s.end_pose(0, 3) == 0.0);
    CHECK(s.end_pose(1, 3) == 0.0);
    CHECK(s.end_pose(2, 3) == doctest::Approx(55.71).epsilon(1e-12));
    CHECK_FALSE(s.extrapolated);
  }

  TEST_CASE("linear fit against the subdivision oracle") {
    TwinConfig cfg;
    cfg.fit = fixture::linear_fit({1, 1, 1, 1});
    const auto s = pipeline_step(90, cfg);
    // Cumulative 90° on every section: the whole bend sits in section one.
    const auto lengths = default_arc_lengths();
    const std::array<oracle::Arc, 4> arcs{oracle::Arc{kPi / 2 / lengths[0], 0, lengths[0]}, oracle::Arc{0, 0, lengths[1]},
                                          oracle::Arc{0, 0, lengths[2]}, oracle::Arc{0, 0, lengths[3]}};
    const auto O = oracle::subdivided_chain(arcs, Eigen::Matrix4d::Identity());
    CHECK((s.end_pose.topRightCorner<3, 1>() - O.topRightCorner<3, 1>()).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(s.kappas[1] == 0.0);
  }

  TEST_CASE("incremental interpretation") {
    TwinConfig cfg;
    cfg.fit = fixture::linear_fit({1, 1, 1, 1});
    cfg.angles = AngleInterpretation::incremental;
    const auto s = pipeline_step(10, cfg);
    for (int i = 0; i < 4; ++i) CHECK(s.kappas[i] == doctest::Approx(deg2rad(10) / cfg.arc_lengths[i]));
  }

  TEST_CASE("out-of-range pressure is clamped and flagged") {
    TwinConfig cfg;
    cfg.fit = fixture::linear_fit({0.1, 0.2, 0.3, 0.4}, -90, 120);
    const auto s = pipeline_step(200, cfg);
    CHECK(s.extrapolated);
    CHECK(s.pressure_kpa == 200.0);
    CHECK(s.end_pose == pipeline_step(120, cfg).end_pose);
  }

  TEST_CASE("pure function of its inputs") {
    TwinConfig cfg;
    cfg.fit = fixture::demo_fit();
    cfg.phis = {0.1, -0.2, 0.3, 0.05};
    for (double p : {-90.0, 0.0, 37.5, 120.0}) {
      const auto a = pipeline_step(p, cfg);
      const auto b = pipeline_step(p, cfg);
      CHECK(a.end_pose == b.end_pose);
      CHECK(a.thetas_deg == b.thetas_deg);
    }
  }

  TEST_CASE("end pose is consistent with the state's own angles") {
    TwinConfig cfg;
    cfg.fit = fixture::demo_fit();
    FlangePosed flange;
    flange.translation = {200, -50, 300};
    flange.orientation = Eigen::Quaterniond(Eigen::AngleAxisd(0.7, Eigen::Vector3d(1, 2, 3).normalized()));
    for (double p = -90; p <= 120; p += 7.5) {
      const auto s = pipeline_step(p, cfg, flange);
      CHECK((recompute(s, cfg) - s.end_pose).cwiseAbs().maxCoeff() <= 1e-9);
    }
  }

  TEST_CASE("kinematic failures become state") {
    TwinConfig cfg;
    cfg.fit = fixture::demo_fit();
    FlangePosed bad;
    bad.orientation = Eigen::Quaterniond(2, 0, 0, 0);
    const auto s = pipeline_step(10, cfg, bad);
    CHECK_FALSE(s.error.empty());
  }
}

TEST_SUITE("pose error") {
  TEST_CASE("reference examples") {
    TwinState s;
    s.end_pose(2, 3) = 100;
    CHECK(evaluate_pose_error(s, {0, 0, 100}).percent == 0.0);
    s.end_pose(2, 3) = 99.2;
    CHECK(evaluate_pose_error(s, {0, 0, 100}).percent == doctest::Approx(0.8).epsilon(1e-12));
    s.end_pose(2, 3) = 100;
    s.end_pose(1, 3) = 3.4;
    CHECK(evaluate_pose_error(s, {0, 0, 100}).percent == doctest::Approx(3.4).epsilon(1e-12));
  }

  TEST_CASE("zero reference is rejected") {
    CHECK_THROWS_AS(evaluate_pose_error(TwinState{}, {0, 0, 0}), InvalidArgument);
  }

  TEST_CASE("json fields") {
    TwinState s;
    s.end_pose(2, 3) = 99.2;
    const auto j = to_json(evaluate_pose_error(s, {0, 0, 100}));
    CHECK(j.at("error_percent").get<double>() == doctest::Approx(0.8));
    CHECK(j.at("reference_mm").size() == 3);
  }
}

TEST_SUITE("config") {
  TEST_CASE("file with relative fit path") {
    fixture::TempDir dir;
    save_cubic_fit(dir / "fit.json", fixture::demo_fit());
    dir.write("traj.csv", "t_ms,tx,ty,tz,qw,qx,qy,qz\n0,0,0,0,1,0,0,0\n100,10,0,0,1,0,0,0\n");
    dir.write("twin.json", R"({"controller":"10.0.0.2:1502","poll_hz":25,"fit":"fit.json","phis_deg":[12,8.8,6,3.3],
                               "flange":{"trajectory":"traj.csv"},"angles":"incremental","http":"127.0.0.1:9000"})");
    const auto cfg = load_twin_config(dir / "twin.json");
    CHECK(cfg.controller.host == "10.0.0.2");
    CHECK(cfg.poll_period() == 40ms);
    CHECK(cfg.phis[1] == doctest::Approx(deg2rad(8.8)));
    CHECK(cfg.angles == AngleInterpretation::incremental);
    CHECK(cfg.fit.B == fixture::demo_fit().B);
    CHECK(cfg.flange.at(50).translation.x() == 0.0);
    CHECK(cfg.flange.at(100).translation.x() == 10.0);
    CHECK(cfg.flange.at(5000).translation.x() == 10.0);
    CHECK(to_json(cfg).at("register_map_version") == controller::kRegisterMapVersion);
  }

  TEST_CASE("inline fit and fixed flange") {
    json j;
    j["fit"] = to_json(fixture::demo_fit());
    j["flange"] = {{"translation_mm", {1, 2, 3}}, {"quaternion_wxyz", {1, 0, 0, 0}}};
    const auto cfg = twin_config_from_json(j);
    CHECK(cfg.flange.at(0).translation == Eigen::Vector3d(1, 2, 3));
    const auto back = twin_config_from_json(to_json(cfg));
    CHECK(back.fit.B == cfg.fit.B);
    CHECK(back.flange.at(0).translation == cfg.flange.at(0).translation);
  }

  TEST_CASE("invalid configs") {
    json j;
    CHECK_THROWS_AS(twin_config_from_json(j), ParseError);
    j["fit"] = to_json(fixture::demo_fit());
    j["poll_hz"] = 0;
    CHECK_THROWS_AS(twin_config_from_json(j), ParseError);
    j["poll_hz"] = 50;
    j["flange"] = {{"translation_mm", {0, 0, 0}}, {"quaternion_wxyz", {1, 1, 0, 0}}};
    CHECK_THROWS_AS(twin_config_from_json(j), ParseError);
  }

  TEST_CASE("trajectory must be time ordered") {
    std::istringstream in("t_ms,tx,ty,tz,qw,qx,qy,qz\n10,0,0,0,1,0,0,0\n5,0,0,0,1,0,0,0\n");
    CHECK_THROWS_AS(FlangeSource::trajectory(read_flange_trajectory(in)), InvalidArgument);
  }
}

TEST_SUITE("commands") {
  TEST_CASE("targets map to scaled registers") {
    const auto w = to_register_write({CommandType::set_pos_target, 100.0});
    CHECK(w.address == controller::reg::pos_target);
    CHECK(w.value == 1000);
    const auto n = to_register_write({CommandType::set_neg_target, -90.0});
    CHECK(n.address == controller::reg::neg_target);
    CHECK(n.value == 0xFC7C);
  }

  TEST_CASE("local validation") {
    CHECK_THROWS_AS(to_register_write({CommandType::set_pos_target, -5.0}), InvalidArgument);
    CHECK_THROWS_AS(to_register_write({CommandType::set_pos_target, 200.1}), InvalidArgument);
    CHECK_THROWS_AS(to_register_write({CommandType::set_neg_target, 1.0}), InvalidArgument);
    CHECK_THROWS_AS(to_register_write({CommandType::set_pos_trigger, 0.5}), InvalidArgument);
    CHECK_THROWS_AS(to_register_write({CommandType::set_pos_target, std::nan("")}), InvalidArgument);
    CHECK(to_register_write({CommandType::set_neg_trigger, 1.0}).value == 1);
  }

  TEST_CASE("json commands") {
    const auto c = command_from_json(json::parse(R"({"type":"set_pos_trigger","value":true})"));
    CHECK(c.type == CommandType::set_pos_trigger);
    CHECK(c.value == 1.0);
    CHECK_THROWS(command_from_json(json::parse(R"({"type":"open_valve","value":1})")));
    CHECK_THROWS(command_from_json(json::parse(R"({"value":1})")));
  }
}

TEST_SUITE("engine") {
  TEST_CASE("published pressures rise monotonically to the target") {
    LiveSim live(0.05, {}, controller::IdleBehavior::vent, true);
    std::int64_t virtual_ms = 0;
    TwinEngine engine(live.config(fixture::demo_fit(), 100), [&] { return virtual_ms; });

    CHECK(engine.command({CommandType::set_pos_target, 100.0}).ok);
    CHECK(engine.command({CommandType::set_pos_trigger, 1.0}).ok);
    double prev = -1;
    std::int64_t prev_ts = -1;
    for (int step = 0; step <= 25; ++step) {  // 25 x 10 ms = 5 tau
      engine.poll_once();
      const auto s = engine.latest();
      REQUIRE(s);
      CHECK(s->link_ok);
      CHECK(s->pressure_kpa >= prev);
      CHECK(s->timestamp_ms > prev_ts);
      prev = s->pressure_kpa;
      prev_ts = s->timestamp_ms;
      live.sim->advance(0.010);
      virtual_ms += 10;
    }
    // 5 tau leaves e^-5 of the step: within 1% of the target.
    CHECK(std::abs(prev - 100.0) <= 1.0);
  }

  TEST_CASE("conflicting triggers surface as a fault") {
    LiveSim live;
    TwinEngine engine(live.config());
    CHECK(engine.command({CommandType::set_neg_trigger, 1.0}).ok);
    const auto ack = engine.command({CommandType::set_pos_trigger, 1.0});
    CHECK(ack.ok);
    CHECK(eventually([&] {
      engine.poll_once();
      const auto s = engine.latest();
      return s && (s->controller_faults & controller::kFaultConflictingTriggers);
    }, 1s));
  }

  TEST_CASE("invalid commands never reach the controller") {
    LiveSim live;
    TwinEngine engine(live.config());
    CHECK_THROWS_AS(engine.command({CommandType::set_pos_target, 250.0}), InvalidArgument);
    CHECK_THROWS_AS(engine.command({CommandType::set_neg_target, 5.0}), InvalidArgument);
    CHECK(live.sim->snapshot() == controller::ControllerState{});
  }

  TEST_CASE("link loss keeps the last state and recovers") {
    auto live = std::make_unique<LiveSim>(0.05, controller::ControllerState{false, false, 0, 0, 42.0, 0, 0},
                                          controller::IdleBehavior::hold);
    const std::uint16_t port = live->server.port();
    TwinConfig cfg = live->config();
    TwinEngine engine(cfg);
    engine.start();
    REQUIRE(eventually([&] { auto s = engine.latest(); return s && s->link_ok; }, 1s));
    const auto good = *engine.latest();
    CHECK(good.pressure_kpa == 42.0);

    live.reset();
    const auto killed = std::chrono::steady_clock::now();
    REQUIRE(eventually([&] { auto s = engine.latest(); return s && !s->link_ok; }, 1s));
    CHECK(std::chrono::steady_clock::now() - killed <= 2 * cfg.poll_period() + 30ms);
    const auto stale = *engine.latest();
    CHECK(stale.pressure_kpa == good.pressure_kpa);
    CHECK(stale.end_pose == good.end_pose);
    CHECK_THROWS_AS(engine.command({CommandType::set_pos_target, 10.0}), Unavailable);

    live = std::make_unique<LiveSim>(0.05, controller::ControllerState{false, false, 0, 0, 17.0, 0, 0},
                                     controller::IdleBehavior::hold, false, port);
    CHECK(eventually([&] { auto s = engine.latest(); return s && s->link_ok && s->pressure_kpa == 17.0; }, 4s));
    engine.stop();
  }

  TEST_CASE("first poll without a controller publishes an error state") {
    TwinConfig cfg;
    cfg.fit = fixture::demo_fit();
    cfg.controller = {"127.0.0.1", 1};  // nothing listens on port 1
    TwinEngine engine(cfg);
    engine.poll_once();
    const auto s = engine.latest();
    REQUIRE(s);
    CHECK_FALSE(s->link_ok);
    CHECK_FALSE(s->error.empty());
  }

  TEST_CASE("sustains the poll rate") {
    LiveSim live;
    TwinEngine engine(live.config(fixture::demo_fit(), 50));
    std::set<std::int64_t> stamps;
    std::uint64_t seen = 0;
    engine.start();
    const auto end = std::chrono::steady_clock::now() + 10s;
    while (std::chrono::steady_clock::now() < end) {
      auto [state, seq] = engine.wait_for_update(seen, 100ms);
      if (state && seq > seen) {
        seen = seq;
        stamps.insert(state->timestamp_ms);
      }
    }
    engine.stop();
    MESSAGE("distinct states in 10 s: ", stamps.size());
    CHECK(stamps.size() >= 480);
  }
}

TEST_SUITE("http api") {
  struct Stack {
    Stack() : live(0.05, controller::ControllerState{false, false, 0, 0, 80.0, 0, 0}, controller::IdleBehavior::hold),
              engine(live.config()),
              http(engine, {"127.0.0.1", 0}) {
      http.start();
      client_ptr = std::make_unique<httplib::Client>("127.0.0.1", http.port());
      client_ptr->set_read_timeout(2, 0);
    }
    ~Stack() {
      http.stop();
      engine.stop();
    }
    LiveSim live;
    TwinEngine engine;
    TwinHttpServer http;
    std::unique_ptr<httplib::Client> client_ptr;
    httplib::Client& client_ref() { return *client_ptr; }
  };

  TEST_CASE("state before and after the first poll") {
    Stack s;
    auto res = s.client_ref().Get("/state");
    REQUIRE(res);
    CHECK(res->status == 503);
    s.engine.poll_once();
    res = s.client_ref().Get("/state");
    REQUIRE(res);
    CHECK(res->status == 200);
    const auto j = json::parse(res->body);
    CHECK(j.at("pressure_kpa").get<double>() == 80.0);
    CHECK(j.at("link_ok").get<bool>());
    CHECK(j.at("thetas_deg").size() == 4);
    CHECK(j.at("end_pose").size() == 4);
    const auto local = pipeline_step(80.0, s.engine.config());
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) CHECK(j.at("end_pose").at(r).at(c).get<double>() == local.end_pose(r, c));
  }

  TEST_CASE("config and health") {
    Stack s;
    auto cfg = s.client_ref().Get("/config");
    REQUIRE(cfg);
    CHECK(cfg->status == 200);
    CHECK(json::parse(cfg->body).at("poll_hz").get<double>() == 50.0);
    s.engine.poll_once();
    auto health = s.client_ref().Get("/health");
    REQUIRE(health);
    const auto h = json::parse(health->body);
    CHECK(h.at("link_ok").get<bool>());
    CHECK(h.at("published").get<int>() == 1);
  }

  TEST_CASE("commands") {
    Stack s;
    auto ok = s.client_ref().Post("/command", R"({"type":"set_pos_target","value":100.0})", "application/json");
    REQUIRE(ok);
    CHECK(ok->status == 200);
    const auto ack = json::parse(ok->body);
    CHECK(ack.at("ok").get<bool>());
    CHECK(ack.at("register").get<int>() == controller::reg::pos_target);
    CHECK(ack.at("value").get<int>() == 1000);
    CHECK(s.live.sim->snapshot().pos_target == 100.0);

    auto invalid = s.client_ref().Post("/command", R"({"type":"set_pos_target","value":-5})", "application/json");
    REQUIRE(invalid);
    CHECK(invalid->status == 422);
    CHECK(s.live.sim->snapshot().pos_target == 100.0);

    auto garbage = s.client_ref().Post("/command", "{not json", "application/json");
    REQUIRE(garbage);
    CHECK(garbage->status == 400);
  }

  TEST_CASE("commands while the link is down") {
    Stack s;
    s.live.server.stop();
    s.engine.poll_once();
    auto res = s.client_ref().Post("/command", R"({"type":"set_pos_trigger","value":1})", "application/json");
    REQUIRE(res);
    CHECK(res->status == 503);
  }

  TEST_CASE("stream delivers published states") {
    Stack s;
    s.engine.start();
    std::string body;
    int events = 0;
    auto res = s.client_ref().Get("/stream", [&](const char* data, std::size_t n) {
      body.append(data, n);
      std::size_t pos = 0;
      events = 0;
      while ((pos = body.find("\n\n", pos)) != std::string::npos) ++events, pos += 2;
      return events < 3;
    });
    CHECK(events >= 3);
    REQUIRE(body.rfind("data: ", 0) == 0);
    const auto first = json::parse(body.substr(6, body.find("\n\n") - 6));
    CHECK(first.at("pressure_kpa").get<double>() == 80.0);
  }
}
