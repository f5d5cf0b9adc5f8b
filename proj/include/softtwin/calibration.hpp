#pragma once

// Pressure-specific mapping: camera measurement of bending angles and the
// per-section cubic fit from pressure to bending angle.

#include <array>
#include <cmath>
#include <span>
#include <string>
#include <utility>

#include <Eigen/Core>
#include <Eigen/LU>

#include "softtwin/errors.hpp"
#include "softtwin/kinematics.hpp"

namespace softtwin {

template <typename Scalar>
using Vector2 = Eigen::Matrix<Scalar, 2, 1>;

template <typename Scalar = double>
struct CameraIntrinsics {
  Scalar fx{1}, fy{1};  // px
  Scalar cx{0}, cy{0};  // px

  void validate() const {
    using std::isfinite;
    if (!(fx > Scalar(0)) || !(fy > Scalar(0))) throw InvalidArgument("focal lengths must be positive");
    if (!isfinite(fx) || !isfinite(fy) || !isfinite(cx) || !isfinite(cy)) throw InvalidArgument("intrinsics must be finite");
  }
};

// Brown-Conrady model: radial k1..k3, tangential p1, p2.
template <typename Scalar = double>
struct DistortionCoeffs {
  Scalar k1{0}, k2{0}, k3{0};
  Scalar p1{0}, p2{0};

  bool is_zero() const { return k1 == 0 && k2 == 0 && k3 == 0 && p1 == 0 && p2 == 0; }
};

template <typename Scalar = double>
struct DepthPixel {
  Scalar u{0}, v{0};  // px
  Scalar z{1};        // mm
};

template <typename Scalar = double>
using CameraPoint = Vector3<Scalar>;  // mm, camera frame

using CameraIntrinsicsd = CameraIntrinsics<double>;
using DistortionCoeffsd = DistortionCoeffs<double>;
using DepthPixeld = DepthPixel<double>;

// Carries the last Newton iterate when undistortion gives up.
class ConvergenceError : public std::runtime_error {
public:
  ConvergenceError(const std::string& what, Eigen::Vector2d last) : std::runtime_error(what), last_(std::move(last)) {}
  const Eigen::Vector2d& last_iterate() const noexcept { return last_; }

private:
  Eigen::Vector2d last_;
};

template <typename Scalar>
Vector2<Scalar> normalize_pixel(Scalar u, Scalar v, const CameraIntrinsics<Scalar>& intr) {
  intr.validate();
  return {(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy};
}

template <typename Scalar>
Vector2<Scalar> distort(const Vector2<Scalar>& p, const DistortionCoeffs<Scalar>& d) {
  const Scalar x = p.x(), y = p.y();
  const Scalar r2 = x * x + y * y;
  const Scalar radial = Scalar(1) + r2 * (d.k1 + r2 * (d.k2 + r2 * d.k3));
  return {x * radial + Scalar(2) * d.p1 * x * y + d.p2 * (r2 + Scalar(2) * x * x),
          y * radial + d.p1 * (r2 + Scalar(2) * y * y) + Scalar(2) * d.p2 * x * y};
}

// d(distort)/d(x', y')
template <typename Scalar>
Eigen::Matrix<Scalar, 2, 2> distortion_jacobian(const Vector2<Scalar>& p, const DistortionCoeffs<Scalar>& d) {
  const Scalar x = p.x(), y = p.y();
  const Scalar r2 = x * x + y * y;
  const Scalar radial = Scalar(1) + r2 * (d.k1 + r2 * (d.k2 + r2 * d.k3));
  const Scalar dradial = d.k1 + r2 * (Scalar(2) * d.k2 + Scalar(3) * d.k3 * r2);  // d(radial)/d(r²)
  Eigen::Matrix<Scalar, 2, 2> J;
  J(0, 0) = radial + Scalar(2) * x * x * dradial + Scalar(2) * d.p1 * y + Scalar(6) * d.p2 * x;
  J(0, 1) = Scalar(2) * x * y * dradial + Scalar(2) * d.p1 * x + Scalar(2) * d.p2 * y;
  J(1, 0) = Scalar(2) * x * y * dradial + Scalar(2) * d.p1 * x + Scalar(2) * d.p2 * y;
  J(1, 1) = radial + Scalar(2) * y * y * dradial + Scalar(6) * d.p1 * y + Scalar(2) * d.p2 * x;
  return J;
}

// The distortion map is only invertible where it does not fold over. A point
// is inside the supported envelope when the Jacobian determinant stays above
// min_det along the ray from the optical axis to the point.
template <typename Scalar>
bool within_distortion_envelope(const Vector2<Scalar>& p, const DistortionCoeffs<Scalar>& d,
                                Scalar min_det = Scalar(0.05), int samples = 32) {
  for (int i = 1; i <= samples; ++i) {
    const Vector2<Scalar> q = p * (Scalar(i) / Scalar(samples));
    if (!(distortion_jacobian(q, d).determinant() > min_det)) return false;
  }
  return true;
}

struct UndistortOptions {
  int max_iterations = 50;
  double step_tolerance = 1e-12;
};

// Inverts the distortion map by Newton fixed-point iteration seeded at the
// distorted point itself.
template <typename Scalar>
Vector2<Scalar> undistort(const Vector2<Scalar>& distorted, const DistortionCoeffs<Scalar>& d,
                          const UndistortOptions& opts = {}) {
  using std::isfinite;
  if (!distorted.allFinite()) throw InvalidArgument("distorted point must be finite");
  if (d.is_zero()) return distorted;

  Vector2<Scalar> x = distorted;
  for (int it = 0; it < opts.max_iterations; ++it) {
    const Vector2<Scalar> residual = distort(x, d) - distorted;
    const Eigen::Matrix<Scalar, 2, 2> J = distortion_jacobian(x, d);
    const Scalar det = J.determinant();
    if (!isfinite(det) || std::abs(double(det)) < 1e-14) {
      throw ConvergenceError("undistort: singular distortion Jacobian", x.template cast<double>());
    }
    const Vector2<Scalar> step = J.inverse() * residual;
    x -= step;
    if (!x.allFinite()) throw ConvergenceError("undistort: iterate diverged", x.template cast<double>());
    if (double(step.norm()) < opts.step_tolerance) return x;
  }
  throw ConvergenceError("undistort: no convergence after " + std::to_string(opts.max_iterations) + " iterations",
                         x.template cast<double>());
}

// Observed pixel to camera-frame point: normalize, undistort, scale by depth.
template <typename Scalar>
CameraPoint<Scalar> pixel_to_camera(const DepthPixel<Scalar>& px, const CameraIntrinsics<Scalar>& intr,
                                    const DistortionCoeffs<Scalar>& d) {
  if (!(px.z > Scalar(0))) throw InvalidArgument("depth must be positive");
  const Vector2<Scalar> ideal = undistort(normalize_pixel(px.u, px.v, intr), d);
  return {ideal.x() * px.z, ideal.y() * px.z, px.z};
}

// Alternative reading in which the pixel is taken as undistorted and the
// forward model is applied before depth scaling. Kept so measurements taken
// either way can be reproduced.
template <typename Scalar>
CameraPoint<Scalar> pixel_to_camera_forward(const DepthPixel<Scalar>& px, const CameraIntrinsics<Scalar>& intr,
                                            const DistortionCoeffs<Scalar>& d) {
  if (!(px.z > Scalar(0))) throw InvalidArgument("depth must be positive");
  const Vector2<Scalar> xd = distort(normalize_pixel(px.u, px.v, intr), d);
  return {xd.x() * px.z, xd.y() * px.z, px.z};
}

template <typename Scalar = double>
struct ReferenceLine {
  Vector2<Scalar> origin = Vector2<Scalar>::Zero();
  Vector2<Scalar> direction = Vector2<Scalar>(Scalar(0), Scalar(1));  // vertical

  static ReferenceLine vertical() { return {}; }
};

enum class MeasurementPlane { xz, xy, yz };

// Unsigned angle in [0, 180) degrees between p1->p2 and the reference
// direction. An antiparallel segment lies on the reference line and reports 0.
template <typename Scalar>
Scalar angle_from_points(const Vector2<Scalar>& p1, const Vector2<Scalar>& p2,
                         const ReferenceLine<Scalar>& ref = ReferenceLine<Scalar>::vertical()) {
  using std::atan2;
  using std::abs;
  if (!p1.allFinite() || !p2.allFinite()) throw InvalidArgument("points must be finite");
  if (!(ref.direction.squaredNorm() > Scalar(0))) throw InvalidArgument("reference direction must be non-zero");
  const Vector2<Scalar> seg = p2 - p1;
  if (!(seg.squaredNorm() > Scalar(0))) throw InvalidArgument("points coincide");
  const Scalar cross = seg.x() * ref.direction.y() - seg.y() * ref.direction.x();
  const Scalar dot = seg.dot(ref.direction);
  Scalar deg = atan2(abs(cross), dot) * Scalar(180) / Scalar(EIGEN_PI);
  if (deg >= Scalar(180)) deg = Scalar(0);
  return deg;
}

template <typename Scalar>
Vector2<Scalar> project_to_plane(const CameraPoint<Scalar>& p, MeasurementPlane plane) {
  switch (plane) {
    case MeasurementPlane::xy: return {p.x(), p.y()};
    case MeasurementPlane::yz: return {p.y(), p.z()};
    case MeasurementPlane::xz: break;
  }
  return {p.x(), p.z()};
}

template <typename Scalar>
Scalar angle_from_points(const CameraPoint<Scalar>& p1, const CameraPoint<Scalar>& p2,
                         const ReferenceLine<Scalar>& ref = ReferenceLine<Scalar>::vertical(),
                         MeasurementPlane plane = MeasurementPlane::xz) {
  return angle_from_points(project_to_plane(p1, plane), project_to_plane(p2, plane), ref);
}

// ---------------------------------------------------------------------------
// Pressure -> bending angle fit

struct PressureSample {
  double pressure = 0;                        // kPa
  std::array<double, kNumSections> thetas{};  // deg
};

inline constexpr std::size_t kMinDistinctPressures = 5;

// theta_i(p) = intercept_i + B_i · [p, p², p³], angles in degrees.
struct CubicFit {
  Eigen::Vector4d intercept = Eigen::Vector4d::Zero();
  Eigen::Matrix<double, 4, 3> B = Eigen::Matrix<double, 4, 3>::Zero();
  double p_min = 0;
  double p_max = 0;
  Eigen::Vector4d residual_rms = Eigen::Vector4d::Zero();  // deg

  void validate() const;
};

CubicFit fit_cubic(std::span<const PressureSample> samples);

struct ThetaPrediction {
  std::array<double, kNumSections> thetas{};  // deg
  bool extrapolated = false;
  double evaluated_at = 0;  // kPa, after clamping
};

// Evaluates the fit, clamping p into the fitted range.
ThetaPrediction predict_thetas(const CubicFit& fit, double pressure);

// How measured angles relate to the sections: cumulative angles are all taken
// against the same reference line, incremental ones are already per section.
enum class AngleInterpretation { cumulative, incremental };

// Measured angles (deg) to per-section bending angles (rad).
std::array<double, kNumSections> section_bending(const std::array<double, kNumSections>& thetas_deg,
                                                 AngleInterpretation interpretation);

inline constexpr double deg2rad(double deg) { return deg * EIGEN_PI / 180.0; }
inline constexpr double rad2deg(double rad) { return rad * 180.0 / EIGEN_PI; }

}  // namespace softtwin
