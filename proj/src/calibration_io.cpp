#include "softtwin/calibration_io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace softtwin {
namespace {

constexpr std::array<const char*, 5> kCsvColumns = {"pressure_kpa", "theta1_deg", "theta2_deg", "theta3_deg",
                                                    "theta4_deg"};

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

double parse_number(const std::string& text, std::size_t line, const char* column) {
  const std::string t = trim(text);
  double value = 0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size() || !std::isfinite(value)) {
    throw ParseError(line, std::string("column '") + column + "': not a finite number: '" + t + "'");
  }
  return value;
}

double number_at(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_number()) throw ParseError(0, std::string("missing numeric field '") + key + "'");
  const double v = j.at(key).get<double>();
  if (!std::isfinite(v)) throw ParseError(0, std::string("field '") + key + "' must be finite");
  return v;
}

}  // namespace

std::vector<PressureSample> read_calibration_csv(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw ParseError(1, "missing header");
  ++line_no;

  const auto header = split_csv(line);
  for (std::size_t i = 0; i < kCsvColumns.size(); ++i) {
    if (i >= header.size()) throw ParseError(line_no, std::string("missing column '") + kCsvColumns[i] + "'");
    const std::string name = trim(header[i]);
    if (name != kCsvColumns[i]) {
      throw ParseError(line_no, "unexpected column '" + name + "', expected '" + kCsvColumns[i] + "'");
    }
  }
  if (header.size() > kCsvColumns.size()) {
    throw ParseError(line_no, "unexpected extra column '" + trim(header[kCsvColumns.size()]) + "'");
  }

  std::vector<PressureSample> samples;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_csv(line);
    if (fields.size() != kCsvColumns.size()) {
      throw ParseError(line_no, "expected " + std::to_string(kCsvColumns.size()) + " fields, got " +
                                    std::to_string(fields.size()));
    }
    PressureSample s;
    s.pressure = parse_number(fields[0], line_no, kCsvColumns[0]);
    for (std::size_t k = 0; k < kNumSections; ++k) s.thetas[k] = parse_number(fields[k + 1], line_no, kCsvColumns[k + 1]);
    samples.push_back(s);
  }
  return samples;
}

std::vector<PressureSample> read_calibration_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(0, "cannot open " + path.string());
  return read_calibration_csv(in);
}

void write_calibration_csv(std::ostream& out, std::span<const PressureSample> samples) {
  out << "pressure_kpa,theta1_deg,theta2_deg,theta3_deg,theta4_deg\n";
  const auto old_precision = out.precision(17);
  for (const auto& s : samples) {
    out << s.pressure;
    for (double t : s.thetas) out << ',' << t;
    out << '\n';
  }
  out.precision(old_precision);
}

nlohmann::json to_json(const CubicFit& fit) {
  nlohmann::json j;
  j["intercept"] = {fit.intercept(0), fit.intercept(1), fit.intercept(2), fit.intercept(3)};
  auto rows = nlohmann::json::array();
  for (int i = 0; i < 4; ++i) rows.push_back({fit.B(i, 0), fit.B(i, 1), fit.B(i, 2)});
  j["B"] = rows;
  j["valid_range"] = {fit.p_min, fit.p_max};
  j["residual_rms_deg"] = {fit.residual_rms(0), fit.residual_rms(1), fit.residual_rms(2), fit.residual_rms(3)};
  return j;
}

CubicFit cubic_fit_from_json(const nlohmann::json& j) {
  auto numbers = [](const nlohmann::json& arr, std::size_t n, const char* what) {
    if (!arr.is_array() || arr.size() != n) throw ParseError(0, std::string("'") + what + "' must be an array of " + std::to_string(n));
    std::vector<double> out;
    for (const auto& v : arr) {
      if (!v.is_number()) throw ParseError(0, std::string("'") + what + "' must contain numbers");
      out.push_back(v.get<double>());
    }
    return out;
  };

  if (!j.is_object()) throw ParseError(0, "fit must be a JSON object");
  for (const char* key : {"intercept", "B", "valid_range"})
    if (!j.contains(key)) throw ParseError(0, std::string("fit is missing '") + key + "'");

  CubicFit fit;
  const auto intercept = numbers(j.at("intercept"), 4, "intercept");
  for (int i = 0; i < 4; ++i) fit.intercept(i) = intercept[i];

  const auto& B = j.at("B");
  if (!B.is_array() || B.size() != 4) throw ParseError(0, "'B' must be a 4x3 array");
  for (int i = 0; i < 4; ++i) {
    const auto row = numbers(B.at(i), 3, "B row");
    for (int k = 0; k < 3; ++k) fit.B(i, k) = row[k];
  }

  const auto range = numbers(j.at("valid_range"), 2, "valid_range");
  fit.p_min = range[0];
  fit.p_max = range[1];

  if (j.contains("residual_rms_deg")) {
    const auto rms = numbers(j.at("residual_rms_deg"), 4, "residual_rms_deg");
    for (int i = 0; i < 4; ++i) fit.residual_rms(i) = rms[i];
  }

  try {
    fit.validate();
  } catch (const InvalidArgument& e) {
    throw ParseError(0, e.what());
  }
  return fit;
}

CubicFit load_cubic_fit(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(0, "cannot open fit file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(0, path.string() + ": " + e.what());
  }
  return cubic_fit_from_json(j);
}

void save_cubic_fit(const std::filesystem::path& path, const CubicFit& fit) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_json(fit).dump(2) << '\n';
}

CameraModel camera_model_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError(0, "camera model must be a JSON object");
  CameraModel m;
  m.intrinsics = {number_at(j, "fx"), number_at(j, "fy"), number_at(j, "cx"), number_at(j, "cy")};
  auto optional = [&](const char* key) { return j.contains(key) ? number_at(j, key) : 0.0; };
  m.distortion = {optional("k1"), optional("k2"), optional("k3"), optional("p1"), optional("p2")};
  try {
    m.intrinsics.validate();
  } catch (const InvalidArgument& e) {
    throw ParseError(0, e.what());
  }
  return m;
}

nlohmann::json to_json(const CameraModel& m) {
  return {{"fx", m.intrinsics.fx}, {"fy", m.intrinsics.fy}, {"cx", m.intrinsics.cx}, {"cy", m.intrinsics.cy},
          {"k1", m.distortion.k1}, {"k2", m.distortion.k2}, {"k3", m.distortion.k3}, {"p1", m.distortion.p1},
          {"p2", m.distortion.p2}};
}

CameraModel load_camera_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(0, "cannot open camera model " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(0, path.string() + ": " + e.what());
  }
  return camera_model_from_json(j);
}

std::vector<MarkerRow> read_marker_csv(std::istream& in) {
  std::vector<std::string> columns{"pressure_kpa"};
  for (std::size_t m = 0; m <= kNumSections; ++m)
    for (const char* axis : {"u", "v", "z"}) columns.push_back(axis + std::to_string(m));

  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line)) throw ParseError(1, "missing header");
  const auto header = split_csv(line);
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (i >= header.size()) throw ParseError(line_no, "missing column '" + columns[i] + "'");
    if (trim(header[i]) != columns[i]) {
      throw ParseError(line_no, "unexpected column '" + trim(header[i]) + "', expected '" + columns[i] + "'");
    }
  }
  if (header.size() > columns.size()) throw ParseError(line_no, "unexpected extra column '" + trim(header[columns.size()]) + "'");

  std::vector<MarkerRow> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_csv(line);
    if (fields.size() != columns.size()) {
      throw ParseError(line_no, "expected " + std::to_string(columns.size()) + " fields, got " + std::to_string(fields.size()));
    }
    MarkerRow row;
    row.pressure = parse_number(fields[0], line_no, columns[0].c_str());
    for (std::size_t m = 0; m <= kNumSections; ++m) {
      auto& px = row.markers[m];
      px.u = parse_number(fields[1 + 3 * m], line_no, columns[1 + 3 * m].c_str());
      px.v = parse_number(fields[2 + 3 * m], line_no, columns[2 + 3 * m].c_str());
      px.z = parse_number(fields[3 + 3 * m], line_no, columns[3 + 3 * m].c_str());
      if (!(px.z > 0)) throw ParseError(line_no, "column '" + columns[3 + 3 * m] + "': depth must be positive");
    }
    rows.push_back(row);
  }
  return rows;
}

std::vector<MarkerRow> read_marker_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(0, "cannot open " + path.string());
  return read_marker_csv(in);
}

PressureSample measure_sample(const MarkerRow& row, const CameraModel& camera, const MeasurementOptions& opts) {
  std::array<CameraPoint<double>, kNumSections + 1> points;
  for (std::size_t m = 0; m <= kNumSections; ++m) {
    points[m] = opts.pixels == PixelModel::distorted
                    ? pixel_to_camera(row.markers[m], camera.intrinsics, camera.distortion)
                    : pixel_to_camera_forward(row.markers[m], camera.intrinsics, camera.distortion);
  }
  PressureSample s;
  s.pressure = row.pressure;
  for (std::size_t i = 0; i < kNumSections; ++i) s.thetas[i] = angle_from_points(points[i], points[i + 1], opts.reference, opts.plane);
  return s;
}

}  // namespace softtwin
