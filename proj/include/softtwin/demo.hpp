#pragma once

#include <filesystem>
#include <iosfwd>
#include <vector>

#include "softtwin/controller.hpp"
#include "softtwin/twin.hpp"

namespace softtwin::demo {

struct DemoStep {
  std::int64_t time_ms = 0;
  twin::Command command;
};

// CSV `time_ms,type,value` with non-decreasing times. Commands are validated
// against the controller's register limits while parsing.
std::vector<DemoStep> read_demo_script(std::istream& in);
std::vector<DemoStep> read_demo_script(const std::filesystem::path& path);

struct DemoOptions {
  bool deterministic = false;
  double tau = 0.15;       // s
  double tick_hz = 100.0;
  controller::IdleBehavior idle = controller::IdleBehavior::vent;
  net::Endpoint bind{"127.0.0.1", 0};
  std::int64_t tail_ms = 1000;  // recording continues this long after the last command
};

// Header of the recorded CSV; the trailing T00..T23 columns are the upper
// three rows of the tip pose, row-major.
std::string demo_csv_header();
std::string demo_csv_row(const twin::TwinState& state);

// Runs the controller simulator and the twin in-process, replays the script
// and writes one CSV row per published state. In deterministic mode the
// simulator and the twin share a virtual clock advanced in poll-period steps,
// so output depends only on the inputs. Throws net::BindError on port conflicts.
void run_demo(const std::vector<DemoStep>& script, twin::TwinConfig cfg, const DemoOptions& options,
              std::ostream& csv, std::ostream& diagnostics);

}  // namespace softtwin::demo
