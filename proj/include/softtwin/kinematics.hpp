#pragma once

// Piecewise-constant-curvature forward kinematics for the four-section
// pneumatic finger. Pressure-independent: arc parameters in, pose out.
//
// Conventions
//   * lengths in mm, angles in radians, curvature in 1/mm
//   * sections are ordered base (1) to tip (4)
//   * quaternions are scalar-first (w, x, y, z)
//   * one arc bends toward +x of its phi-rotated base frame; the end frame is
//     Rz(phi) * Ry(kappa * length), with no counter-rotation by -phi

#include <array>
#include <cmath>
#include <string>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "softtwin/errors.hpp"

namespace softtwin {

inline constexpr std::size_t kNumSections = 4;

template <typename Scalar>
using HomTransform = Eigen::Matrix<Scalar, 4, 4>;

template <typename Scalar>
using Vector3 = Eigen::Matrix<Scalar, 3, 1>;

template <typename Scalar>
using Matrix3 = Eigen::Matrix<Scalar, 3, 3>;

// Below this bending angle |kappa * length| the arc is treated as straight.
inline constexpr double kStraightArcThreshold = 1e-9;

template <typename Scalar = double>
struct ArcParams {
  Scalar kappa{0};   // 1/mm
  Scalar phi{0};     // rad, about the section's base z-axis
  Scalar length{1};  // mm

  Scalar bending_angle() const { return kappa * length; }
};

template <typename Scalar = double>
inline std::array<Scalar, kNumSections> default_arc_lengths() {
  return {Scalar(14), Scalar(14), Scalar(12.32), Scalar(15.39)};
}

template <typename Scalar = double>
struct GripperConfig {
  std::array<ArcParams<Scalar>, kNumSections> sections;

  // Straight finger with the default section lengths.
  static GripperConfig straight() {
    GripperConfig cfg;
    const auto lengths = default_arc_lengths<Scalar>();
    for (std::size_t i = 0; i < kNumSections; ++i) cfg.sections[i] = {Scalar(0), Scalar(0), lengths[i]};
    return cfg;
  }
};

template <typename Scalar = double>
struct FlangePose {
  Vector3<Scalar> translation = Vector3<Scalar>::Zero();  // mm
  Eigen::Quaternion<Scalar> orientation = Eigen::Quaternion<Scalar>::Identity();

  static FlangePose identity() { return {}; }
};

// Gripper base frame expressed in the flange frame.
template <typename Scalar = double>
struct GripperMount {
  HomTransform<Scalar> mount_transform = HomTransform<Scalar>::Identity();
};

using ArcParamsd = ArcParams<double>;
using GripperConfigd = GripperConfig<double>;
using FlangePosed = FlangePose<double>;
using GripperMountd = GripperMount<double>;
using HomTransformd = HomTransform<double>;

namespace detail {

template <typename Scalar>
void require_finite(Scalar v, const char* what) {
  using std::isfinite;
  if (!isfinite(v)) throw InvalidArgument(std::string(what) + " must be finite");
}

}  // namespace detail

// True when the bottom row is [0 0 0 1] exactly and the rotation block is
// orthonormal with determinant +1 within tol.
template <typename Derived>
bool is_rigid_transform(const Eigen::MatrixBase<Derived>& T, double tol = 1e-9) {
  using Scalar = typename Derived::Scalar;
  if (T.rows() != 4 || T.cols() != 4) return false;
  if (T(3, 0) != Scalar(0) || T(3, 1) != Scalar(0) || T(3, 2) != Scalar(0) || T(3, 3) != Scalar(1)) return false;
  if (!T.allFinite()) return false;
  const Matrix3<Scalar> R = T.template topLeftCorner<3, 3>();
  const Scalar ortho_err = (R.transpose() * R - Matrix3<Scalar>::Identity()).cwiseAbs().maxCoeff();
  using std::abs;
  return ortho_err <= Scalar(tol) && abs(R.determinant() - Scalar(1)) <= Scalar(tol);
}

template <typename Scalar>
void validate(const ArcParams<Scalar>& arc) {
  detail::require_finite(arc.kappa, "kappa");
  detail::require_finite(arc.phi, "phi");
  detail::require_finite(arc.length, "length");
  if (!(arc.length > Scalar(0))) throw InvalidArgument("arc length must be positive");
}

// Homogeneous transform of one constant-curvature arc, base to tip.
//
//   [ cφ·cθ  -sφ  cφ·sθ  cφ(1-cθ)/κ ]
//   [ sφ·cθ   cφ  sφ·sθ  sφ(1-cθ)/κ ]     θ = κ·l
//   [  -sθ     0   cθ      sθ/κ     ]
//   [   0      0    0        1      ]
//
// (1 - cos θ) is evaluated as 2 sin²(θ/2) to avoid cancellation near θ = 0.
template <typename Scalar>
HomTransform<Scalar> arc_transform(const ArcParams<Scalar>& arc) {
  using std::abs;
  using std::cos;
  using std::sin;
  validate(arc);

  const Scalar theta = arc.kappa * arc.length;
  const Scalar cp = cos(arc.phi), sp = sin(arc.phi);

  HomTransform<Scalar> T = HomTransform<Scalar>::Identity();
  if (abs(theta) < Scalar(kStraightArcThreshold)) {
    T(0, 0) = cp;
    T(0, 1) = -sp;
    T(1, 0) = sp;
    T(1, 1) = cp;
    T(2, 3) = arc.length;
    return T;
  }

  const Scalar ct = cos(theta), st = sin(theta);
  const Scalar half = sin(theta / Scalar(2));
  const Scalar radial = Scalar(2) * half * half / arc.kappa;  // (1 - cos θ) / κ
  const Scalar axial = st / arc.kappa;

  T(0, 0) = cp * ct;
  T(0, 1) = -sp;
  T(0, 2) = cp * st;
  T(0, 3) = cp * radial;
  T(1, 0) = sp * ct;
  T(1, 1) = cp;
  T(1, 2) = sp * st;
  T(1, 3) = sp * radial;
  T(2, 0) = -st;
  T(2, 1) = Scalar(0);
  T(2, 2) = ct;
  T(2, 3) = axial;
  return T;
}

// Flange-to-tip transform: mount · T1 · T2 · T3 · T4.
template <typename Scalar>
HomTransform<Scalar> chain_transform(const GripperConfig<Scalar>& config, const GripperMount<Scalar>& mount = {}) {
  HomTransform<Scalar> T = mount.mount_transform;
  for (const auto& section : config.sections) T = (T * arc_transform(section)).eval();
  return T;
}

// Frames at the base of every section plus the tip, expressed in the flange
// frame. Element 0 is the mount, element 4 equals chain_transform.
template <typename Scalar>
std::array<HomTransform<Scalar>, kNumSections + 1> chain_frames(const GripperConfig<Scalar>& config,
                                                                const GripperMount<Scalar>& mount = {}) {
  std::array<HomTransform<Scalar>, kNumSections + 1> frames;
  frames[0] = mount.mount_transform;
  for (std::size_t i = 0; i < kNumSections; ++i) frames[i + 1] = frames[i] * arc_transform(config.sections[i]);
  return frames;
}

inline constexpr double kUnitQuaternionTolerance = 1e-6;

// Robot base to flange, from TCP position and a unit quaternion. The
// quaternion is used as given; anything off the unit sphere by more than
// kUnitQuaternionTolerance is rejected instead of renormalized.
template <typename Scalar>
HomTransform<Scalar> flange_transform(const FlangePose<Scalar>& pose) {
  using std::abs;
  const auto& q = pose.orientation;
  for (int i = 0; i < 3; ++i) detail::require_finite(pose.translation(i), "flange translation");
  detail::require_finite(q.w(), "quaternion");
  detail::require_finite(q.x(), "quaternion");
  detail::require_finite(q.y(), "quaternion");
  detail::require_finite(q.z(), "quaternion");
  if (abs(q.norm() - Scalar(1)) > Scalar(kUnitQuaternionTolerance)) throw InvalidArgument("flange quaternion is not unit length");

  const Scalar w = q.w(), x = q.x(), y = q.y(), z = q.z();
  HomTransform<Scalar> T = HomTransform<Scalar>::Identity();
  T(0, 0) = 1 - 2 * y * y - 2 * z * z;
  T(0, 1) = 2 * x * y - 2 * z * w;
  T(0, 2) = 2 * x * z + 2 * y * w;
  T(1, 0) = 2 * x * y + 2 * z * w;
  T(1, 1) = 1 - 2 * x * x - 2 * z * z;
  T(1, 2) = 2 * y * z - 2 * x * w;
  T(2, 0) = 2 * x * z - 2 * y * w;
  T(2, 1) = 2 * y * z + 2 * x * w;
  T(2, 2) = 1 - 2 * x * x - 2 * y * y;
  T.template topRightCorner<3, 1>() = pose.translation;
  return T;
}

// Robot base to gripper tip.
template <typename Scalar>
HomTransform<Scalar> end_effector(const FlangePose<Scalar>& pose, const GripperConfig<Scalar>& config,
                                  const GripperMount<Scalar>& mount = {}) {
  return flange_transform(pose) * chain_transform(config, mount);
}

// Per-section bending angles (rad) to arc parameters, kappa = theta / length.
template <typename Scalar>
GripperConfig<Scalar> thetas_to_config(const std::array<Scalar, kNumSections>& thetas,
                                       const std::array<Scalar, kNumSections>& phis,
                                       const std::array<Scalar, kNumSections>& lengths) {
  GripperConfig<Scalar> cfg;
  for (std::size_t i = 0; i < kNumSections; ++i) {
    detail::require_finite(thetas[i], "theta");
    detail::require_finite(phis[i], "phi");
    detail::require_finite(lengths[i], "length");
    if (!(lengths[i] > Scalar(0))) throw InvalidArgument("section " + std::to_string(i + 1) + " length must be positive");
    cfg.sections[i] = {thetas[i] / lengths[i], phis[i], lengths[i]};
  }
  return cfg;
}

template <typename Scalar>
Vector3<Scalar> position_of(const HomTransform<Scalar>& T) {
  return T.template topRightCorner<3, 1>();
}

template <typename Scalar>
Eigen::Quaternion<Scalar> orientation_of(const HomTransform<Scalar>& T) {
  Eigen::Quaternion<Scalar> q(Matrix3<Scalar>(T.template topLeftCorner<3, 3>()));
  if (q.w() < Scalar(0)) q.coeffs() = -q.coeffs();
  return q.normalized();
}

}  // namespace softtwin
