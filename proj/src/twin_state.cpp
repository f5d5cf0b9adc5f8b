#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "softtwin/calibration_io.hpp"
#include "softtwin/controller.hpp"
#include "softtwin/twin.hpp"

namespace softtwin::twin {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Flange source

FlangeSource FlangeSource::fixed(const FlangePosed& pose) {
  flange_transform(pose);  // validates
  FlangeSource s;
  s.fixed_ = pose;
  return s;
}

FlangeSource FlangeSource::trajectory(std::vector<FlangeSample> samples, std::string origin) {
  if (samples.empty()) throw InvalidArgument("flange trajectory is empty");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    flange_transform(samples[i].pose);
    if (i > 0 && samples[i].t_ms < samples[i - 1].t_ms) throw InvalidArgument("flange trajectory times must be non-decreasing");
  }
  FlangeSource s;
  s.fixed_ = samples.front().pose;
  s.samples_ = std::move(samples);
  s.origin_ = std::move(origin);
  return s;
}

FlangePosed FlangeSource::at(std::int64_t t_ms) const {
  if (samples_.empty()) return fixed_;
  auto it = std::upper_bound(samples_.begin(), samples_.end(), t_ms,
                             [](std::int64_t t, const FlangeSample& s) { return t < s.t_ms; });
  if (it == samples_.begin()) return samples_.front().pose;
  return std::prev(it)->pose;
}

std::vector<FlangeSample> read_flange_trajectory(std::istream& in) {
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line)) throw ParseError(1, "missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "t_ms,tx,ty,tz,qw,qx,qy,qz") throw ParseError(1, "expected header t_ms,tx,ty,tz,qw,qx,qy,qz");

  std::vector<FlangeSample> out;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::array<double, 8> v{};
    std::istringstream ss(line);
    std::string field;
    std::size_t k = 0;
    while (std::getline(ss, field, ',')) {
      if (k >= v.size()) throw ParseError(line_no, "too many fields");
      const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v[k]);
      if (ec != std::errc() || ptr != field.data() + field.size() || !std::isfinite(v[k])) {
        throw ParseError(line_no, "not a number: '" + field + "'");
      }
      ++k;
    }
    if (k != v.size()) throw ParseError(line_no, "expected 8 fields");
    FlangeSample s;
    s.t_ms = static_cast<std::int64_t>(std::llround(v[0]));
    s.pose.translation = {v[1], v[2], v[3]};
    s.pose.orientation = Eigen::Quaterniond(v[4], v[5], v[6], v[7]);
    out.push_back(s);
  }
  return out;
}

std::vector<FlangeSample> read_flange_trajectory(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(0, "cannot open trajectory " + path.string());
  return read_flange_trajectory(in);
}

// ---------------------------------------------------------------------------
// Config

void TwinConfig::validate() const {
  if (!(poll_hz >= 1.0 && poll_hz <= 500.0)) throw InvalidArgument("poll_hz must be within [1, 500]");
  fit.validate();
  for (double l : arc_lengths)
    if (!(l > 0.0) || !std::isfinite(l)) throw InvalidArgument("arc lengths must be positive");
  for (double p : phis)
    if (!std::isfinite(p)) throw InvalidArgument("phis must be finite");
  if (!is_rigid_transform(mount.mount_transform)) throw InvalidArgument("mount transform is not a rigid transform");
}

std::chrono::milliseconds TwinConfig::poll_period() const {
  return std::chrono::milliseconds(std::max<std::int64_t>(1, std::llround(1000.0 / poll_hz)));
}

namespace {

template <std::size_t N>
std::array<double, N> number_array(const json& j, const char* key) {
  if (!j.is_array() || j.size() != N) throw ParseError(0, std::string("'") + key + "' must be an array of " + std::to_string(N));
  std::array<double, N> out{};
  for (std::size_t i = 0; i < N; ++i) {
    if (!j[i].is_number()) throw ParseError(0, std::string("'") + key + "' must contain numbers");
    out[i] = j[i].get<double>();
  }
  return out;
}

FlangePosed flange_from_json(const json& j) {
  FlangePosed pose;
  if (j.contains("translation_mm")) {
    const auto t = number_array<3>(j.at("translation_mm"), "translation_mm");
    pose.translation = {t[0], t[1], t[2]};
  }
  if (j.contains("quaternion_wxyz")) {
    const auto q = number_array<4>(j.at("quaternion_wxyz"), "quaternion_wxyz");
    pose.orientation = Eigen::Quaterniond(q[0], q[1], q[2], q[3]);
  }
  return pose;
}

json flange_to_json(const FlangePosed& pose) {
  const auto& q = pose.orientation;
  return {{"translation_mm", {pose.translation.x(), pose.translation.y(), pose.translation.z()}},
          {"quaternion_wxyz", {q.w(), q.x(), q.y(), q.z()}}};
}

json matrix_to_json(const HomTransformd& T) {
  json rows = json::array();
  for (int r = 0; r < 4; ++r) rows.push_back({T(r, 0), T(r, 1), T(r, 2), T(r, 3)});
  return rows;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

}  // namespace

TwinConfig twin_config_from_json(const json& j, const std::filesystem::path& base_dir) {
  if (!j.is_object()) throw ParseError(0, "twin config must be a JSON object");
  TwinConfig cfg;
  try {
    if (j.contains("controller")) cfg.controller = net::parse_endpoint(j.at("controller").get<std::string>());
    if (j.contains("unit_id")) cfg.unit_id = j.at("unit_id").get<std::uint8_t>();
    if (j.contains("poll_hz")) cfg.poll_hz = j.at("poll_hz").get<double>();
    if (j.contains("http")) cfg.http = net::parse_endpoint(j.at("http").get<std::string>());
  } catch (const json::exception& e) {
    throw ParseError(0, e.what());
  } catch (const std::invalid_argument& e) {
    throw ParseError(0, e.what());
  }

  if (!j.contains("fit")) throw ParseError(0, "twin config is missing 'fit'");
  const auto& fit = j.at("fit");
  cfg.fit = fit.is_string() ? load_cubic_fit(resolve(base_dir, fit.get<std::string>())) : cubic_fit_from_json(fit);

  if (j.contains("arc_lengths_mm")) cfg.arc_lengths = number_array<4>(j.at("arc_lengths_mm"), "arc_lengths_mm");
  if (j.contains("phis_rad")) cfg.phis = number_array<4>(j.at("phis_rad"), "phis_rad");
  if (j.contains("phis_deg")) {
    const auto deg = number_array<4>(j.at("phis_deg"), "phis_deg");
    for (std::size_t i = 0; i < 4; ++i) cfg.phis[i] = deg2rad(deg[i]);
  }
  if (j.contains("mount")) {
    const auto& m = j.at("mount");
    if (!m.is_array() || m.size() != 4) throw ParseError(0, "'mount' must be a 4x4 array");
    for (int r = 0; r < 4; ++r) {
      const auto row = number_array<4>(m.at(r), "mount row");
      for (int c = 0; c < 4; ++c) cfg.mount.mount_transform(r, c) = row[c];
    }
  }
  if (j.contains("flange")) {
    const auto& f = j.at("flange");
    try {
      if (f.contains("trajectory")) {
        const auto path = resolve(base_dir, f.at("trajectory").get<std::string>());
        cfg.flange = FlangeSource::trajectory(read_flange_trajectory(path), path.string());
      } else {
        cfg.flange = FlangeSource::fixed(flange_from_json(f));
      }
    } catch (const InvalidArgument& e) {
      throw ParseError(0, std::string("flange: ") + e.what());
    }
  }
  if (j.contains("angles")) {
    const auto a = j.at("angles").get<std::string>();
    if (a == "cumulative") cfg.angles = AngleInterpretation::cumulative;
    else if (a == "incremental") cfg.angles = AngleInterpretation::incremental;
    else throw ParseError(0, "'angles' must be cumulative or incremental");
  }

  try {
    cfg.validate();
  } catch (const InvalidArgument& e) {
    throw ParseError(0, e.what());
  }
  return cfg;
}

TwinConfig load_twin_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(0, "cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ParseError(0, path.string() + ": " + e.what());
  }
  return twin_config_from_json(j, path.parent_path());
}

json to_json(const TwinConfig& cfg) {
  json j;
  j["controller"] = cfg.controller.to_string();
  j["unit_id"] = cfg.unit_id;
  j["poll_hz"] = cfg.poll_hz;
  j["fit"] = to_json(cfg.fit);
  j["arc_lengths_mm"] = cfg.arc_lengths;
  j["phis_rad"] = cfg.phis;
  j["mount"] = matrix_to_json(cfg.mount.mount_transform);
  if (cfg.flange.is_trajectory()) {
    j["flange"] = {{"trajectory", cfg.flange.origin()}, {"samples", cfg.flange.samples().size()}};
  } else {
    j["flange"] = flange_to_json(cfg.flange.fixed_pose());
  }
  j["angles"] = cfg.angles == AngleInterpretation::cumulative ? "cumulative" : "incremental";
  j["http"] = cfg.http.to_string();
  j["register_map_version"] = controller::kRegisterMapVersion;
  return j;
}

// ---------------------------------------------------------------------------
// Pipeline

GripperConfigd config_from_thetas(const std::array<double, kNumSections>& thetas_deg, const TwinConfig& cfg) {
  return thetas_to_config(section_bending(thetas_deg, cfg.angles), cfg.phis, cfg.arc_lengths);
}

TwinState pipeline_step(double pressure_kpa, const TwinConfig& cfg, const FlangePosed& flange) {
  TwinState s;
  s.pressure_kpa = pressure_kpa;
  s.flange_pose = flange;
  try {
    const ThetaPrediction prediction = predict_thetas(cfg.fit, pressure_kpa);
    s.thetas_deg = prediction.thetas;
    s.extrapolated = prediction.extrapolated;
    const GripperConfigd arcs = config_from_thetas(prediction.thetas, cfg);
    for (std::size_t i = 0; i < kNumSections; ++i) s.kappas[i] = arcs.sections[i].kappa;
    s.end_pose = end_effector(flange, arcs, cfg.mount);
  } catch (const std::exception& e) {
    s.error = e.what();
    s.end_pose = HomTransformd::Identity();
  }
  return s;
}

TwinState pipeline_step(double pressure_kpa, const TwinConfig& cfg) {
  return pipeline_step(pressure_kpa, cfg, cfg.flange.at(0));
}

json to_json(const TwinState& s) {
  const Eigen::Vector3d p = position_of(s.end_pose);
  const Eigen::Quaterniond q = orientation_of(s.end_pose);
  json j;
  j["timestamp_ms"] = s.timestamp_ms;
  j["pressure_kpa"] = s.pressure_kpa;
  j["thetas_deg"] = s.thetas_deg;
  j["kappas_per_mm"] = s.kappas;
  j["end_pose"] = matrix_to_json(s.end_pose);
  j["end_position_mm"] = {p.x(), p.y(), p.z()};
  j["end_quaternion_wxyz"] = {q.w(), q.x(), q.y(), q.z()};
  j["flange_pose"] = flange_to_json(s.flange_pose);
  j["extrapolated"] = s.extrapolated;
  j["controller_faults"] = s.controller_faults;
  j["link_ok"] = s.link_ok;
  j["error"] = s.error.empty() ? json(nullptr) : json(s.error);
  return j;
}

// ---------------------------------------------------------------------------
// Pose error

PoseError evaluate_pose_error(const TwinState& state, const Eigen::Vector3d& reference) {
  if (!reference.allFinite()) throw InvalidArgument("reference position must be finite");
  const double ref_norm = reference.norm();
  if (!(ref_norm > 0.0)) throw InvalidArgument("reference position must be non-zero");
  PoseError e;
  e.reference = reference;
  e.computed = position_of(state.end_pose);
  e.percent = (e.computed - reference).norm() / ref_norm * 100.0;
  return e;
}

json to_json(const PoseError& e) {
  return {{"reference_mm", {e.reference.x(), e.reference.y(), e.reference.z()}},
          {"computed_mm", {e.computed.x(), e.computed.y(), e.computed.z()}},
          {"error_percent", e.percent}};
}

// ---------------------------------------------------------------------------
// Commands

const char* to_string(CommandType type) {
  switch (type) {
    case CommandType::set_pos_target: return "set_pos_target";
    case CommandType::set_neg_target: return "set_neg_target";
    case CommandType::set_pos_trigger: return "set_pos_trigger";
    case CommandType::set_neg_trigger: return "set_neg_trigger";
  }
  return "unknown";
}

CommandType parse_command_type(const std::string& text) {
  for (auto t : {CommandType::set_pos_target, CommandType::set_neg_target, CommandType::set_pos_trigger,
                 CommandType::set_neg_trigger}) {
    if (text == to_string(t)) return t;
  }
  throw InvalidArgument("unknown command type '" + text + "'");
}

Command command_from_json(const json& j) {
  if (!j.is_object() || !j.contains("type") || !j.at("type").is_string() || !j.contains("value")) {
    throw InvalidArgument(R"(command must look like {"type":"set_pos_target","value":100.0})");
  }
  Command cmd;
  cmd.type = parse_command_type(j.at("type").get<std::string>());
  const auto& v = j.at("value");
  if (v.is_boolean()) cmd.value = v.get<bool>() ? 1.0 : 0.0;
  else if (v.is_number()) cmd.value = v.get<double>();
  else throw InvalidArgument("command value must be a number or boolean");
  return cmd;
}

RegisterWrite to_register_write(const Command& cmd) {
  if (!std::isfinite(cmd.value)) throw InvalidArgument("command value must be finite");
  switch (cmd.type) {
    case CommandType::set_pos_target:
      if (cmd.value < 0.0 || cmd.value > controller::kPosTargetMax) {
        throw InvalidArgument("positive target must be within [0, 200] kPa");
      }
      return {controller::reg::pos_target, modbus::pressure_to_register(cmd.value)};
    case CommandType::set_neg_target:
      if (cmd.value > 0.0 || cmd.value < controller::kNegTargetMin) {
        throw InvalidArgument("negative target must be within [-100, 0] kPa");
      }
      return {controller::reg::neg_target, modbus::pressure_to_register(cmd.value)};
    case CommandType::set_pos_trigger:
    case CommandType::set_neg_trigger:
      if (cmd.value != 0.0 && cmd.value != 1.0) throw InvalidArgument("trigger value must be 0 or 1");
      return {cmd.type == CommandType::set_pos_trigger ? controller::reg::pos_trigger : controller::reg::neg_trigger,
              static_cast<std::uint16_t>(cmd.value)};
  }
  throw InvalidArgument("unknown command type");
}

json to_json(const CommandAck& ack) {
  json j;
  j["ok"] = ack.ok;
  j["register"] = ack.write.address;
  j["value"] = ack.write.value;
  if (ack.exception) {
    j["exception"] = {{"code", static_cast<int>(*ack.exception)}, {"name", modbus::to_string(*ack.exception)}};
  } else {
    j["exception"] = nullptr;
  }
  j["message"] = ack.message;
  return j;
}

}  // namespace softtwin::twin
