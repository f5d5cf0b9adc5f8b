#include "softtwin/demo.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>

namespace softtwin::demo {
namespace {

std::string format_double(double v) {
  char buf[32];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return ec == std::errc() ? std::string(buf, end) : std::string("nan");
}

double parse_value(const std::string& text, std::size_t line) {
  if (text == "true") return 1.0;
  if (text == "false") return 0.0;
  double v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || ec != std::errc() || ptr != text.data() + text.size()) throw ParseError(line, "bad value '" + text + "'");
  return v;
}

}  // namespace

std::vector<DemoStep> read_demo_script(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError(1, "missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "time_ms,type,value") throw ParseError(1, "expected header time_ms,type,value");

  std::vector<DemoStep> steps;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;

    std::vector<std::string> fields;
    std::istringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 3) throw ParseError(line_no, "expected 3 fields");

    DemoStep step;
    const double t = parse_value(fields[0], line_no);
    if (!std::isfinite(t) || t < 0) throw ParseError(line_no, "time_ms must be a non-negative number");
    step.time_ms = static_cast<std::int64_t>(std::llround(t));
    try {
      step.command.type = twin::parse_command_type(fields[1]);
      step.command.value = parse_value(fields[2], line_no);
      twin::to_register_write(step.command);
    } catch (const InvalidArgument& e) {
      throw ParseError(line_no, e.what());
    }
    if (!steps.empty() && step.time_ms < steps.back().time_ms) {
      throw ParseError(line_no, "time_ms decreases (" + std::to_string(step.time_ms) + " after " +
                                    std::to_string(steps.back().time_ms) + ")");
    }
    steps.push_back(step);
  }
  return steps;
}

std::vector<DemoStep> read_demo_script(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(0, "cannot open script " + path.string());
  return read_demo_script(in);
}

std::string demo_csv_header() {
  std::string h =
      "time_ms,pressure_kpa,theta1_deg,theta2_deg,theta3_deg,theta4_deg,kappa1,kappa2,kappa3,kappa4,"
      "extrapolated,controller_faults,link_ok";
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) h += ",T" + std::to_string(r) + std::to_string(c);
  return h;
}

std::string demo_csv_row(const twin::TwinState& s) {
  std::string row = std::to_string(s.timestamp_ms) + "," + format_double(s.pressure_kpa);
  for (double t : s.thetas_deg) row += "," + format_double(t);
  for (double k : s.kappas) row += "," + format_double(k);
  row += std::string(",") + (s.extrapolated ? "1" : "0");
  row += "," + std::to_string(s.controller_faults);
  row += std::string(",") + (s.link_ok ? "1" : "0");
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) row += "," + format_double(s.end_pose(r, c));
  return row;
}

namespace {

void send(twin::TwinEngine& engine, const DemoStep& step, std::ostream& diagnostics) {
  try {
    const auto ack = engine.command(step.command);
    if (!ack.ok) diagnostics << "t=" << step.time_ms << "ms " << twin::to_string(step.command.type) << ": " << ack.message << '\n';
  } catch (const std::exception& e) {
    diagnostics << "t=" << step.time_ms << "ms " << twin::to_string(step.command.type) << ": " << e.what() << '\n';
  }
}

void run_virtual(const std::vector<DemoStep>& script, const twin::TwinConfig& cfg, controller::Controller& sim,
                 const DemoOptions& options, std::ostream& csv, std::ostream& diagnostics) {
  std::int64_t virtual_ms = 0;
  twin::TwinEngine engine(cfg, [&virtual_ms] { return virtual_ms; });

  const std::int64_t period = cfg.poll_period().count();
  const std::int64_t end = script.back().time_ms + options.tail_ms;
  const int substeps = std::max(1, static_cast<int>(std::ceil(period / 1000.0 * options.tick_hz - 1e-9)));
  const double dt = period / 1000.0 / substeps;

  std::size_t next = 0;
  for (virtual_ms = 0; virtual_ms <= end; virtual_ms += period) {
    while (next < script.size() && script[next].time_ms <= virtual_ms) send(engine, script[next++], diagnostics);
    engine.poll_once();
    if (const auto state = engine.latest()) csv << demo_csv_row(*state) << '\n';
    for (int i = 0; i < substeps; ++i) sim.advance(dt);
  }
}

void run_wall_clock(const std::vector<DemoStep>& script, const twin::TwinConfig& cfg, const DemoOptions& options,
                    std::ostream& csv, std::ostream& diagnostics) {
  twin::TwinEngine engine(cfg);
  std::atomic<bool> recording{true};
  std::thread recorder([&] {
    std::uint64_t seen = 0;
    while (recording) {
      auto [state, seq] = engine.wait_for_update(seen, std::chrono::milliseconds(100));
      if (state && seq > seen) {
        seen = seq;
        csv << demo_csv_row(*state) << '\n';
      }
    }
  });

  const auto t0 = std::chrono::steady_clock::now();
  engine.start();
  for (const auto& step : script) {
    std::this_thread::sleep_until(t0 + std::chrono::milliseconds(step.time_ms));
    send(engine, step, diagnostics);
  }
  std::this_thread::sleep_until(t0 + std::chrono::milliseconds(script.back().time_ms + options.tail_ms));
  engine.stop();
  recording = false;
  recorder.join();
}

}  // namespace

void run_demo(const std::vector<DemoStep>& script, twin::TwinConfig cfg, const DemoOptions& options, std::ostream& csv,
              std::ostream& diagnostics) {
  auto sim = std::make_shared<controller::Controller>(controller::ControllerParams{options.tau, options.idle});
  controller::ServerOptions server_options;
  server_options.bind = options.bind;
  server_options.tick_hz = options.tick_hz;
  server_options.external_clock = options.deterministic;
  controller::ControllerServer server(sim, server_options);
  server.start();

  cfg.controller = {"127.0.0.1", server.port()};
  csv << demo_csv_header() << '\n';
  if (!script.empty()) {
    if (options.deterministic) {
      run_virtual(script, cfg, *sim, options, csv, diagnostics);
    } else {
      run_wall_clock(script, cfg, options, csv, diagnostics);
    }
  }
  server.stop();
  csv.flush();
}

}  // namespace softtwin::demo
