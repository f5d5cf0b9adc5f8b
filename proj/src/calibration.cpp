#include "softtwin/calibration.hpp"

#include <algorithm>
#include <vector>

#include <Eigen/QR>

namespace softtwin {

void CubicFit::validate() const {
  if (!intercept.allFinite() || !B.allFinite()) throw InvalidArgument("fit coefficients must be finite");
  if (!std::isfinite(p_min) || !std::isfinite(p_max) || p_min > p_max) {
    throw InvalidArgument("fit valid_range must be finite and ordered");
  }
}

CubicFit fit_cubic(std::span<const PressureSample> samples) {
  for (const auto& s : samples) {
    if (!std::isfinite(s.pressure)) throw InvalidArgument("sample pressure must be finite");
    for (double t : s.thetas)
      if (!std::isfinite(t)) throw InvalidArgument("sample angles must be finite");
  }

  // Canonical row order makes the result independent of input ordering.
  std::vector<PressureSample> rows(samples.begin(), samples.end());
  std::sort(rows.begin(), rows.end(), [](const PressureSample& a, const PressureSample& b) {
    if (a.pressure != b.pressure) return a.pressure < b.pressure;
    return a.thetas < b.thetas;
  });

  std::size_t distinct = 0;
  for (std::size_t i = 0; i < rows.size(); ++i)
    if (i == 0 || rows[i].pressure != rows[i - 1].pressure) ++distinct;
  if (distinct < kMinDistinctPressures) {
    throw InsufficientData("need >=" + std::to_string(kMinDistinctPressures) + " distinct pressures, got " +
                           std::to_string(distinct));
  }

  const Eigen::Index n = static_cast<Eigen::Index>(rows.size());
  Eigen::MatrixXd A(n, 4);
  Eigen::MatrixXd Y(n, 4);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double p = rows[i].pressure;
    A.row(i) << 1.0, p, p * p, p * p * p;
    for (Eigen::Index k = 0; k < 4; ++k) Y(i, k) = rows[i].thetas[k];
  }

  // Monomial columns span ~6 orders of magnitude over a typical pressure
  // range; scale each to unit norm before factorizing.
  const Eigen::Vector4d scale = A.colwise().norm().transpose();
  if ((scale.array() <= 0.0).any()) throw ConditioningError("design matrix has a zero column");
  const Eigen::MatrixXd As = A * scale.cwiseInverse().asDiagonal();

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(As);
  qr.setThreshold(1e-12);
  if (qr.rank() < 4) throw ConditioningError("design matrix is rank deficient (rank " + std::to_string(qr.rank()) + ")");

  const Eigen::Matrix4d coeffs = scale.cwiseInverse().asDiagonal() * qr.solve(Y);
  const Eigen::MatrixXd residual = A * coeffs - Y;

  CubicFit fit;
  fit.intercept = coeffs.row(0).transpose();
  fit.B = coeffs.bottomRows<3>().transpose();
  fit.p_min = rows.front().pressure;
  fit.p_max = rows.back().pressure;
  fit.residual_rms = (residual.colwise().squaredNorm() / double(n)).cwiseSqrt().transpose();
  return fit;
}

ThetaPrediction predict_thetas(const CubicFit& fit, double pressure) {
  ThetaPrediction out;
  double p = pressure;
  if (!std::isfinite(p)) throw InvalidArgument("pressure must be finite");
  if (p < fit.p_min || p > fit.p_max) {
    p = std::clamp(p, fit.p_min, fit.p_max);
    out.extrapolated = true;
  }
  out.evaluated_at = p;
  const Eigen::Vector3d basis(p, p * p, p * p * p);
  const Eigen::Vector4d theta = fit.intercept + fit.B * basis;
  for (std::size_t i = 0; i < kNumSections; ++i) out.thetas[i] = theta(static_cast<Eigen::Index>(i));
  return out;
}

std::array<double, kNumSections> section_bending(const std::array<double, kNumSections>& thetas_deg,
                                                 AngleInterpretation interpretation) {
  std::array<double, kNumSections> out{};
  double previous = 0.0;
  for (std::size_t i = 0; i < kNumSections; ++i) {
    const double bend = interpretation == AngleInterpretation::cumulative ? thetas_deg[i] - previous : thetas_deg[i];
    previous = thetas_deg[i];
    out[i] = deg2rad(bend);
  }
  return out;
}

}  // namespace softtwin
