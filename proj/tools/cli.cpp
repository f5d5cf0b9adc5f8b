#include "cli.hpp"

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "softtwin/calibration_io.hpp"
#include "softtwin/controller.hpp"
#include "softtwin/demo.hpp"
#include "softtwin/http_api.hpp"
#include "softtwin/twin.hpp"

// After Eigen: <resolv.h> defines a `_res` macro that collides with Eigen internals.
#include <httplib.h>

namespace softtwin::cli {
namespace {

class CliError : public std::runtime_error {
public:
  CliError(int code, const std::string& what) : std::runtime_error(what), code(code) {}
  int code;
};

template <std::size_t N>
std::array<double, N> parse_list(const std::string& text, const char* what) {
  std::array<double, N> out{};
  std::istringstream ss(text);
  std::string item;
  std::size_t i = 0;
  while (std::getline(ss, item, ',')) {
    if (i >= N) throw CliError(kBadInput, std::string(what) + ": expected " + std::to_string(N) + " comma-separated numbers");
    try {
      std::size_t used = 0;
      out[i] = std::stod(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw CliError(kBadInput, std::string(what) + ": not a number: '" + item + "'");
    }
    ++i;
  }
  if (i != N) throw CliError(kBadInput, std::string(what) + ": expected " + std::to_string(N) + " comma-separated numbers");
  return out;
}

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v == 0.0 ? 0.0 : v);  // no "-0.000000"
  return buf;
}

// Block termination signals before any thread starts so sigwait sees them.
sigset_t block_shutdown_signals() {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  return set;
}

int wait_for_shutdown(const sigset_t& set) {
  int sig = 0;
  sigwait(&set, &sig);
  return sig;
}

struct TwinSource {
  std::string config_path;
  std::string fit_path;

  twin::TwinConfig load() const {
    try {
      if (!config_path.empty()) return twin::load_twin_config(config_path);
      if (fit_path.empty()) throw CliError(kBadInput, "a fit is required: pass --fit fit.json or --config twin.json");
      twin::TwinConfig cfg;
      cfg.fit = load_cubic_fit(fit_path);
      return cfg;
    } catch (const ParseError& e) {
      throw CliError(kBadInput, e.what());
    }
  }
};

// ---------------------------------------------------------------------------

int cmd_fit(const std::string& csv_path, const std::string& out_path, std::ostream& out) {
  std::vector<PressureSample> samples;
  try {
    samples = read_calibration_csv(std::filesystem::path(csv_path));
  } catch (const ParseError& e) {
    throw CliError(kBadInput, csv_path + ": " + e.what());
  }

  CubicFit fit;
  try {
    fit = fit_cubic(samples);
  } catch (const InsufficientData& e) {
    throw CliError(kInsufficientData, "need ≥5 distinct pressures (" + std::string(e.what()) + ")");
  } catch (const ConditioningError& e) {
    throw CliError(kInsufficientData, e.what());
  }
  save_cubic_fit(out_path, fit);

  out << "samples " << samples.size() << "\n";
  out << "valid_range_kpa " << fit.p_min << " " << fit.p_max << "\n";
  for (int i = 0; i < 4; ++i) out << "theta" << i + 1 << " residual_rms_deg " << fixed(fit.residual_rms(i), 3) << "\n";
  return kOk;
}

struct MeasureArgs {
  std::string camera, markers, out, reference = "0,1", plane = "xz", pixels = "distorted";
};

int cmd_measure(const MeasureArgs& a, std::ostream& out) {
  MeasurementOptions opts;
  const auto dir = parse_list<2>(a.reference, "--reference");
  opts.reference.direction = {dir[0], dir[1]};
  if (a.plane == "xz") opts.plane = MeasurementPlane::xz;
  else if (a.plane == "xy") opts.plane = MeasurementPlane::xy;
  else if (a.plane == "yz") opts.plane = MeasurementPlane::yz;
  else throw CliError(kBadInput, "--plane must be xz, xy or yz");
  if (a.pixels == "distorted") opts.pixels = PixelModel::distorted;
  else if (a.pixels == "undistorted") opts.pixels = PixelModel::undistorted;
  else throw CliError(kBadInput, "--pixels must be distorted or undistorted");

  CameraModel camera;
  std::vector<MarkerRow> rows;
  try {
    camera = load_camera_model(a.camera);
    rows = read_marker_csv(std::filesystem::path(a.markers));
  } catch (const ParseError& e) {
    throw CliError(kBadInput, e.what());
  }

  std::vector<PressureSample> samples;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    try {
      samples.push_back(measure_sample(rows[i], camera, opts));
    } catch (const std::exception& e) {
      throw CliError(kBadInput, a.markers + ": sample " + std::to_string(i + 1) + ": " + e.what());
    }
  }

  if (a.out.empty()) {
    write_calibration_csv(out, samples);
  } else {
    std::ofstream file(a.out);
    if (!file) throw CliError(kFailure, "cannot write " + a.out);
    write_calibration_csv(file, samples);
  }
  return kOk;
}

struct PoseArgs {
  double pressure = 0;
  TwinSource source;
  std::string flange_t, flange_q, phis_deg, angles;
  bool json = false;
};

twin::TwinConfig pose_config(const PoseArgs& a) {
  twin::TwinConfig cfg = a.source.load();
  try {
    if (!a.flange_t.empty() || !a.flange_q.empty()) {
      FlangePosed pose = cfg.flange.fixed_pose();
      if (!a.flange_t.empty()) {
        const auto t = parse_list<3>(a.flange_t, "--flange-t");
        pose.translation = {t[0], t[1], t[2]};
      }
      if (!a.flange_q.empty()) {
        const auto q = parse_list<4>(a.flange_q, "--flange-q");
        pose.orientation = Eigen::Quaterniond(q[0], q[1], q[2], q[3]);
      }
      cfg.flange = twin::FlangeSource::fixed(pose);
    }
    if (!a.phis_deg.empty()) {
      const auto p = parse_list<4>(a.phis_deg, "--phis-deg");
      for (std::size_t i = 0; i < 4; ++i) cfg.phis[i] = deg2rad(p[i]);
    }
  } catch (const InvalidArgument& e) {
    throw CliError(kBadInput, e.what());
  }
  if (a.angles == "incremental") cfg.angles = AngleInterpretation::incremental;
  else if (a.angles == "cumulative") cfg.angles = AngleInterpretation::cumulative;
  else if (!a.angles.empty()) throw CliError(kBadInput, "--angles must be cumulative or incremental");
  return cfg;
}

int cmd_pose(const PoseArgs& a, std::ostream& out, std::ostream& err) {
  const twin::TwinConfig cfg = pose_config(a);
  const twin::TwinState state = twin::pipeline_step(a.pressure, cfg);
  if (!state.error.empty()) throw CliError(kBadInput, state.error);
  if (state.extrapolated) {
    err << "EXTRAPOLATED: pressure " << a.pressure << " kPa outside fit range [" << cfg.fit.p_min << ", " << cfg.fit.p_max
        << "], evaluated at the nearest bound\n";
  }

  if (a.json) {
    out << twin::to_json(state).dump(2) << "\n";
    return kOk;
  }
  const auto& T = state.end_pose;
  out << "T_F\n";
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) out << (c ? " " : "") << fixed(T(r, c));
    out << "\n";
  }
  const Eigen::Vector3d p = position_of(T);
  const Eigen::Quaterniond q = orientation_of(T);
  out << "position_mm " << fixed(p.x()) << " " << fixed(p.y()) << " " << fixed(p.z()) << "\n";
  out << "quaternion_wxyz " << fixed(q.w()) << " " << fixed(q.x()) << " " << fixed(q.y()) << " " << fixed(q.z()) << "\n";
  out << "thetas_deg";
  for (double t : state.thetas_deg) out << " " << fixed(t);
  out << "\nkappas_per_mm";
  for (double k : state.kappas) out << " " << fixed(k, 9);
  out << "\n";
  return kOk;
}

struct SimArgs {
  std::string bind = "0.0.0.0:1502";
  double tau = 0.15;
  double tick_hz = 100.0;
  bool hold_on_idle = false;
};

int cmd_controller_sim(const SimArgs& a, std::ostream& err) {
  if (!(a.tau > 0) || !(a.tick_hz > 0)) throw CliError(kBadInput, "--tau and --tick-hz must be positive");
  controller::ServerOptions options;
  try {
    options.bind = net::parse_endpoint(a.bind);
  } catch (const std::invalid_argument& e) {
    throw CliError(kBadInput, e.what());
  }
  options.tick_hz = a.tick_hz;

  const sigset_t signals = block_shutdown_signals();
  auto sim = std::make_shared<controller::Controller>(
      controller::ControllerParams{a.tau, a.hold_on_idle ? controller::IdleBehavior::hold : controller::IdleBehavior::vent});
  controller::ControllerServer server(sim, options);
  try {
    server.start();
  } catch (const net::BindError& e) {
    throw CliError(kBindFailure, e.what());
  }
  err << "controller-sim listening on " << options.bind.host << ":" << server.port() << " (tau " << a.tau << " s, "
      << a.tick_hz << " Hz, register map v" << controller::kRegisterMapVersion << ")\n";
  wait_for_shutdown(signals);
  err << "controller-sim shutting down\n";
  server.stop();
  return kOk;
}

struct ServeArgs {
  std::string config;
  std::string http;
  std::string static_dir;
};

int cmd_serve(const ServeArgs& a, std::ostream& err) {
  twin::TwinConfig cfg = TwinSource{a.config, {}}.load();
  if (!a.http.empty()) {
    try {
      cfg.http = net::parse_endpoint(a.http);
    } catch (const std::invalid_argument& e) {
      throw CliError(kBadInput, e.what());
    }
  }

  const sigset_t signals = block_shutdown_signals();
  twin::TwinEngine engine(cfg);
  twin::TwinHttpServer http(engine, cfg.http, a.static_dir);
  try {
    http.start();
  } catch (const net::BindError& e) {
    throw CliError(kBindFailure, e.what());
  }
  engine.start();
  err << "twin polling " << cfg.controller.to_string() << " at " << cfg.poll_hz << " Hz, HTTP on " << cfg.http.host << ":"
      << http.port() << "\n";
  wait_for_shutdown(signals);
  err << "twin shutting down\n";
  http.stop();
  engine.stop();
  return kOk;
}

struct DemoArgs {
  std::string script;
  TwinSource source;
  std::string out;
  bool deterministic = false;
  double tau = 0.15;
  double tick_hz = 100.0;
  int port = 0;
  std::int64_t tail_ms = 1000;
};

int cmd_demo(const DemoArgs& a, std::ostream& out, std::ostream& err) {
  std::vector<demo::DemoStep> script;
  try {
    script = demo::read_demo_script(std::filesystem::path(a.script));
  } catch (const ParseError& e) {
    throw CliError(kBadInput, a.script + ": " + e.what());
  }
  const twin::TwinConfig cfg = a.source.load();
  if (!(a.tau > 0) || !(a.tick_hz > 0) || a.tail_ms < 0) throw CliError(kBadInput, "--tau, --tick-hz must be positive, --tail-ms non-negative");
  if (a.port < 0 || a.port > 65535) throw CliError(kBadInput, "--port out of range");

  demo::DemoOptions options;
  options.deterministic = a.deterministic;
  options.tau = a.tau;
  options.tick_hz = a.tick_hz;
  options.bind = {"127.0.0.1", static_cast<std::uint16_t>(a.port)};
  options.tail_ms = a.tail_ms;

  std::ofstream file;
  if (!a.out.empty()) {
    file.open(a.out);
    if (!file) throw CliError(kFailure, "cannot write " + a.out);
  }
  try {
    demo::run_demo(script, cfg, options, a.out.empty() ? out : file, err);
  } catch (const net::BindError& e) {
    throw CliError(kBindFailure, e.what());
  }
  return kOk;
}

struct EvalArgs {
  std::string reference;
  std::optional<double> pressure;
  TwinSource source;
  std::string url = "http://127.0.0.1:8080";
};

twin::TwinState fetch_state(const std::string& url) {
  httplib::Client client(url);
  client.set_connection_timeout(2);
  auto res = client.Get("/state");
  if (!res) throw CliError(kFailure, "cannot reach twin at " + url);
  if (res->status != 200) throw CliError(kFailure, "twin returned HTTP " + std::to_string(res->status));
  const auto j = nlohmann::json::parse(res->body);
  twin::TwinState state;
  const auto& rows = j.at("end_pose");
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) state.end_pose(r, c) = rows.at(r).at(c).get<double>();
  state.pressure_kpa = j.at("pressure_kpa").get<double>();
  state.link_ok = j.at("link_ok").get<bool>();
  return state;
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const auto ref = parse_list<3>(a.reference, "--reference");
  twin::TwinState state;
  if (a.pressure) {
    state = twin::pipeline_step(*a.pressure, a.source.load());
    if (!state.error.empty()) throw CliError(kBadInput, state.error);
  } else {
    state = fetch_state(a.url);
  }
  try {
    const auto e = twin::evaluate_pose_error(state, {ref[0], ref[1], ref[2]});
    auto j = twin::to_json(e);
    j["pressure_kpa"] = state.pressure_kpa;
    out << j.dump(2) << "\n";
  } catch (const InvalidArgument& e) {
    throw CliError(kBadInput, e.what());
  }
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Desk-scale digital twin of a four-section pneumatic soft gripper", "twin"};
  app.require_subcommand(1);

  std::string csv_path, fit_out;
  auto* fit = app.add_subcommand("fit", "Fit per-section cubic pressure->angle curves from a calibration CSV");
  fit->add_option("--csv", csv_path, "pressure_kpa,theta1_deg..theta4_deg")->required();
  fit->add_option("--out", fit_out, "fit JSON to write")->required();

  MeasureArgs measure_args;
  auto* measure = app.add_subcommand("measure", "Bending angles from marker pixels, written as a calibration CSV");
  measure->add_option("--camera", measure_args.camera, "camera JSON: fx,fy,cx,cy,k1,k2,k3,p1,p2")->required();
  measure->add_option("--markers", measure_args.markers, "CSV pressure_kpa,u0,v0,z0,...,u4,v4,z4")->required();
  measure->add_option("--out", measure_args.out, "calibration CSV to write (default stdout)");
  measure->add_option("--reference", measure_args.reference, "reference direction dx,dy in the plane")->capture_default_str();
  measure->add_option("--plane", measure_args.plane, "measurement plane xz|xy|yz")->capture_default_str();
  measure->add_option("--pixels", measure_args.pixels, "distorted|undistorted")->capture_default_str();

  PoseArgs pose_args;
  auto* pose = app.add_subcommand("pose", "Evaluate the tip pose for one pressure");
  pose->add_option("--pressure", pose_args.pressure, "kPa")->required();
  pose->add_option("--fit", pose_args.source.fit_path, "fit JSON");
  pose->add_option("--config", pose_args.source.config_path, "twin.json (alternative to --fit)");
  pose->add_option("--flange-t", pose_args.flange_t, "flange translation x,y,z in mm");
  pose->add_option("--flange-q", pose_args.flange_q, "flange quaternion w,x,y,z");
  pose->add_option("--phis-deg", pose_args.phis_deg, "per-section phi in degrees");
  pose->add_option("--angles", pose_args.angles, "cumulative|incremental");
  pose->add_flag("--json", pose_args.json, "print the full TwinState as JSON");

  SimArgs sim_args;
  auto* sim = app.add_subcommand("controller-sim", "Run the simulated pneumatic controller (Modbus TCP server)");
  sim->add_option("--bind", sim_args.bind, "host:port")->capture_default_str();
  sim->add_option("--tau", sim_args.tau, "pressure time constant in seconds")->capture_default_str();
  sim->add_option("--tick-hz", sim_args.tick_hz, "dynamics update rate")->capture_default_str();
  sim->add_flag("--hold-on-idle", sim_args.hold_on_idle, "hold pressure when no trigger is set instead of venting");

  ServeArgs serve_args;
  auto* serve = app.add_subcommand("serve", "Run the live twin and its HTTP API");
  serve->add_option("--config", serve_args.config, "twin.json")->required();
  serve->add_option("--http", serve_args.http, "override HTTP bind host:port");
  serve->add_option("--static", serve_args.static_dir, "directory of console assets to serve at /");

  DemoArgs demo_args;
  auto* demo_cmd = app.add_subcommand("demo", "Replay a command script against an in-process simulator and record the twin");
  demo_cmd->add_option("--script", demo_args.script, "CSV time_ms,type,value")->required();
  demo_cmd->add_option("--fit", demo_args.source.fit_path, "fit JSON");
  demo_cmd->add_option("--config", demo_args.source.config_path, "twin.json (alternative to --fit)");
  demo_cmd->add_option("--out", demo_args.out, "CSV output (default stdout)");
  demo_cmd->add_flag("--deterministic", demo_args.deterministic, "virtual clock, byte-reproducible output");
  demo_cmd->add_option("--tau", demo_args.tau, "simulator time constant in seconds")->capture_default_str();
  demo_cmd->add_option("--tick-hz", demo_args.tick_hz, "simulator update rate")->capture_default_str();
  demo_cmd->add_option("--port", demo_args.port, "simulator port (0 = any free port)")->capture_default_str();
  demo_cmd->add_option("--tail-ms", demo_args.tail_ms, "keep recording after the last command")->capture_default_str();

  EvalArgs eval_args;
  double eval_pressure = 0;
  auto* eval = app.add_subcommand("eval", "Relative tip position error against a reference point");
  eval->add_option("--reference", eval_args.reference, "x,y,z in mm")->required();
  auto* eval_p = eval->add_option("--pressure", eval_pressure, "evaluate locally at this pressure instead of querying a twin");
  eval->add_option("--fit", eval_args.source.fit_path, "fit JSON (with --pressure)");
  eval->add_option("--config", eval_args.source.config_path, "twin.json (with --pressure)");
  eval->add_option("--url", eval_args.url, "running twin to query")->capture_default_str();

  std::vector<std::string> argv_storage{"twin"};
  argv_storage.insert(argv_storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_storage) argv.push_back(a.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kBadInput;
  }

  try {
    if (*fit) return cmd_fit(csv_path, fit_out, out);
    if (*measure) return cmd_measure(measure_args, out);
    if (*pose) return cmd_pose(pose_args, out, err);
    if (*sim) return cmd_controller_sim(sim_args, err);
    if (*serve) return cmd_serve(serve_args, err);
    if (*demo_cmd) return cmd_demo(demo_args, out, err);
    if (*eval) {
      if (eval_p->count()) eval_args.pressure = eval_pressure;
      return cmd_eval(eval_args, out);
    }
  } catch (const CliError& e) {
    err << "error: " << e.what() << "\n";
    return e.code;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}

}  // namespace softtwin::cli
