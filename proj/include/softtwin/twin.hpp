#pragma once

// The live twin: controller pressure -> bending angles -> arc parameters ->
// gripper tip pose, published as immutable snapshots.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "softtwin/calibration.hpp"
#include "softtwin/kinematics.hpp"
#include "softtwin/modbus_client.hpp"

namespace softtwin::twin {

struct FlangeSample {
  std::int64_t t_ms = 0;
  FlangePosed pose;
};

// Robot flange pose over time: either fixed, or a sample-and-hold trajectory
// (CSV `t_ms,tx,ty,tz,qw,qx,qy,qz`, non-decreasing t_ms).
class FlangeSource {
public:
  FlangeSource() = default;
  static FlangeSource fixed(const FlangePosed& pose);
  static FlangeSource trajectory(std::vector<FlangeSample> samples, std::string origin = {});

  FlangePosed at(std::int64_t t_ms) const;
  bool is_trajectory() const { return !samples_.empty(); }
  const FlangePosed& fixed_pose() const { return fixed_; }
  const std::vector<FlangeSample>& samples() const { return samples_; }
  const std::string& origin() const { return origin_; }

private:
  FlangePosed fixed_ = FlangePosed::identity();
  std::vector<FlangeSample> samples_;
  std::string origin_;
};

std::vector<FlangeSample> read_flange_trajectory(std::istream& in);
std::vector<FlangeSample> read_flange_trajectory(const std::filesystem::path& path);

struct TwinConfig {
  net::Endpoint controller{"127.0.0.1", 1502};
  std::uint8_t unit_id = 1;
  double poll_hz = 50.0;
  CubicFit fit;
  std::array<double, kNumSections> arc_lengths = default_arc_lengths<double>();  // mm
  std::array<double, kNumSections> phis{};                                       // rad
  GripperMountd mount;
  FlangeSource flange;
  AngleInterpretation angles = AngleInterpretation::cumulative;
  net::Endpoint http{"0.0.0.0", 8080};

  void validate() const;
  std::chrono::milliseconds poll_period() const;
};

// Relative paths inside the file (fit, trajectory) resolve against its directory.
TwinConfig load_twin_config(const std::filesystem::path& path);
TwinConfig twin_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
nlohmann::json to_json(const TwinConfig& cfg);

struct TwinState {
  std::int64_t timestamp_ms = 0;  // monotonic
  double pressure_kpa = 0;
  std::array<double, kNumSections> thetas_deg{};  // as predicted by the fit
  std::array<double, kNumSections> kappas{};      // 1/mm, per section
  HomTransformd end_pose = HomTransformd::Identity();
  FlangePosed flange_pose;
  bool extrapolated = false;
  std::uint16_t controller_faults = 0;
  bool link_ok = false;
  std::string error;  // pipeline failure, empty when the pose is valid
};

nlohmann::json to_json(const TwinState& state);

// Pure pressure -> pose evaluation. Calibration or kinematics failures come
// back as a state with `error` set, never as an exception.
TwinState pipeline_step(double pressure_kpa, const TwinConfig& cfg, const FlangePosed& flange);
TwinState pipeline_step(double pressure_kpa, const TwinConfig& cfg);

// Arc parameters implied by a state's angles under cfg.
GripperConfigd config_from_thetas(const std::array<double, kNumSections>& thetas_deg, const TwinConfig& cfg);

struct PoseError {
  Eigen::Vector3d reference = Eigen::Vector3d::Zero();  // mm
  Eigen::Vector3d computed = Eigen::Vector3d::Zero();   // mm
  double percent = 0;  // ‖computed - reference‖ / ‖reference‖ · 100
};

PoseError evaluate_pose_error(const TwinState& state, const Eigen::Vector3d& reference);
nlohmann::json to_json(const PoseError& e);

enum class CommandType { set_pos_target, set_neg_target, set_pos_trigger, set_neg_trigger };

const char* to_string(CommandType type);
CommandType parse_command_type(const std::string& text);

struct Command {
  CommandType type = CommandType::set_pos_target;
  double value = 0;  // kPa for targets, 0/1 for triggers
};

Command command_from_json(const nlohmann::json& j);

struct RegisterWrite {
  std::uint16_t address = 0;
  std::uint16_t value = 0;
};

// Local validation against the controller's register constraints; throws
// InvalidArgument before anything reaches the wire.
RegisterWrite to_register_write(const Command& cmd);

struct CommandAck {
  bool ok = false;
  RegisterWrite write;
  std::optional<modbus::ExceptionCode> exception;
  std::string message;
};

nlohmann::json to_json(const CommandAck& ack);

// Controller link is down; the command was not sent.
class Unavailable : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class TwinEngine {
public:
  using Clock = std::function<std::int64_t()>;  // ms, monotonic

  explicit TwinEngine(TwinConfig cfg, Clock clock = {});
  ~TwinEngine();
  TwinEngine(const TwinEngine&) = delete;
  TwinEngine& operator=(const TwinEngine&) = delete;

  // One poll cycle: read pressure and faults, evaluate, publish. While the
  // link is down, reconnects follow an exponential backoff capped at 2 s.
  void poll_once();

  void start();
  void stop();
  bool running() const { return running_; }

  std::shared_ptr<const TwinState> latest() const;
  std::uint64_t sequence() const;
  // Waits for a state newer than `after`; returns {state, sequence}.
  std::pair<std::shared_ptr<const TwinState>, std::uint64_t> wait_for_update(std::uint64_t after,
                                                                              std::chrono::milliseconds timeout) const;

  CommandAck command(const Command& cmd);
  const TwinConfig& config() const { return cfg_; }

  static constexpr std::chrono::milliseconds kMaxBackoff{2000};

private:
  void publish(TwinState state);
  std::int64_t now_ms() const;

  TwinConfig cfg_;
  Clock clock_;
  std::int64_t epoch_ms_ = 0;
  modbus::ModbusClient client_;

  mutable std::mutex state_mutex_;
  mutable std::condition_variable state_cv_;
  std::shared_ptr<const TwinState> latest_;
  std::uint64_t sequence_ = 0;
  std::int64_t last_timestamp_ = -1;

  std::atomic<bool> link_ok_{false};
  std::int64_t next_retry_ms_ = 0;
  std::chrono::milliseconds backoff_{0};
  std::optional<TwinState> last_good_;

  std::atomic<bool> attempted_{false};
  std::atomic<bool> running_{false};
  std::mutex loop_mutex_;
  std::condition_variable loop_cv_;
  std::thread loop_;
};

}  // namespace softtwin::twin
