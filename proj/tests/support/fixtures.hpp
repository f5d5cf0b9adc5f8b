#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "softtwin/calibration.hpp"

namespace fixture {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("softtwin-test-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

  std::filesystem::path write(const std::string& name, const std::string& content) const {
    const auto p = path_ / name;
    std::ofstream(p, std::ios::binary) << content;
    return p;
  }

private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// theta_i(p) = slope_i * p over [p_min, p_max].
inline softtwin::CubicFit linear_fit(std::array<double, 4> slopes, double p_min = -100, double p_max = 200) {
  softtwin::CubicFit fit;
  for (int i = 0; i < 4; ++i) fit.B(i, 0) = slopes[i];
  fit.p_min = p_min;
  fit.p_max = p_max;
  return fit;
}

// Cumulative angles that grow toward the tip, the usual shape of a
// calibration run.
inline softtwin::CubicFit demo_fit() {
  softtwin::CubicFit fit;
  const double slopes[4] = {0.10, 0.22, 0.31, 0.36};
  for (int i = 0; i < 4; ++i) {
    fit.B(i, 0) = slopes[i];
    fit.B(i, 1) = 2e-4 * (i + 1);
    fit.B(i, 2) = -1e-6;
  }
  fit.p_min = -90;
  fit.p_max = 120;
  return fit;
}

}  // namespace fixture
