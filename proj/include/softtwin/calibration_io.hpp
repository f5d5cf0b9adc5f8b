#pragma once

#include <filesystem>
#include <iosfwd>
#include <vector>

#include <nlohmann/json.hpp>

#include "softtwin/calibration.hpp"

namespace softtwin {

// Calibration CSV: header `pressure_kpa,theta1_deg,theta2_deg,theta3_deg,theta4_deg`,
// one sample per row. Throws ParseError with the offending line.
std::vector<PressureSample> read_calibration_csv(std::istream& in);
std::vector<PressureSample> read_calibration_csv(const std::filesystem::path& path);
void write_calibration_csv(std::ostream& out, std::span<const PressureSample> samples);

nlohmann::json to_json(const CubicFit& fit);
CubicFit cubic_fit_from_json(const nlohmann::json& j);
CubicFit load_cubic_fit(const std::filesystem::path& path);
void save_cubic_fit(const std::filesystem::path& path, const CubicFit& fit);

struct CameraModel {
  CameraIntrinsicsd intrinsics;
  DistortionCoeffsd distortion;
};

// {"fx":..,"fy":..,"cx":..,"cy":..,"k1":..,"k2":..,"k3":..,"p1":..,"p2":..};
// distortion keys default to zero.
CameraModel camera_model_from_json(const nlohmann::json& j);
nlohmann::json to_json(const CameraModel& model);
CameraModel load_camera_model(const std::filesystem::path& path);

// Marker CSV: header `pressure_kpa,u0,v0,z0,u1,v1,z1,...,u4,v4,z4`. Marker 0 is
// the gripper base, marker i the distal end of section i (pixels, depth in mm).
struct MarkerRow {
  double pressure = 0;
  std::array<DepthPixeld, kNumSections + 1> markers;
};

std::vector<MarkerRow> read_marker_csv(std::istream& in);
std::vector<MarkerRow> read_marker_csv(const std::filesystem::path& path);

// distorted: observed pixels carry lens distortion and are undistorted first.
// undistorted: pixels are taken as ideal and the forward model is applied.
enum class PixelModel { distorted, undistorted };

struct MeasurementOptions {
  ReferenceLine<double> reference = ReferenceLine<double>::vertical();
  MeasurementPlane plane = MeasurementPlane::xz;
  PixelModel pixels = PixelModel::distorted;
};

// theta_i is the angle of marker i-1 -> marker i against the reference line,
// so every angle shares one reference (cumulative reading).
PressureSample measure_sample(const MarkerRow& row, const CameraModel& camera, const MeasurementOptions& opts = {});

}  // namespace softtwin
