#pragma once

#include <vector>

#include "drivesim/common.hpp"

namespace drivesim::geo {

/// Natural cubic smoothing spline through scalar samples z(u).
///
/// The smoothing parameter is chosen by dyadic search: the largest lambda
/// whose RMS deviation from the samples stays below a tolerance. With clean
/// inputs this is close to interpolation; with noisy inputs it suppresses
/// the noise while keeping the fit within the tolerance.
class SmoothingSpline {
 public:
  SmoothingSpline() = default;
  /// u must be strictly increasing, size >= 4.
  SmoothingSpline(const std::vector<double>& u, const std::vector<double>& z,
                  double rms_tol);

  double eval(double u) const;
  double deriv(double u) const;
  double deriv2(double u) const;
  double rms_deviation() const { return rms_dev_; }
  double lambda() const { return lambda_; }

 private:
  void build_natural(const std::vector<double>& fitted);
  size_t interval(double u) const;

  std::vector<double> u_;
  std::vector<double> a_, b_, c_, d_;  // piecewise cubic coefficients
  double rms_dev_ = 0.0;
  double lambda_ = 0.0;
};

/// A planar curve fitted to a polyline: the polyline is re-sampled at a
/// uniform chordal spacing (so the fit depends only on the traced geometry,
/// not on how the polyline is subdivided), then x(u) and y(u) smoothing
/// splines are fitted over the chordal parameter u.
class SmoothedPath {
 public:
  /// spacing_m: canonical chordal spacing; the actual spacing divides the
  /// total length exactly so the construction is symmetric under reversal.
  explicit SmoothedPath(const std::vector<Vec2>& polyline, double rms_tol_m = 0.005,
                        double spacing_m = 2.0);

  Vec2 eval(double u) const;
  Vec2 deriv(double u) const;
  /// Signed curvature at parameter u.
  double curvature(double u) const;
  /// Chordal parameter span.
  double param_length() const { return u_max_; }
  /// Total arc length of the fitted curve.
  double arc_total() const { return knot_arc_.back(); }
  /// Arc length between two parameter values, adaptive Gauss-Legendre to tol.
  double arc_length(double u0, double u1, double tol = 1e-3) const;
  /// Parameter u >= u0 such that arc_length(u0, u) == s (clamped to the end).
  double param_at_arc(double u0, double s, double tol = 1e-3) const;

 private:
  double speed(double u) const;

  SmoothingSpline sx_, sy_;
  double u_max_ = 0.0;
  std::vector<double> knot_u_;        // canonical parameter values
  std::vector<double> knot_arc_;      // cumulative spline arc length at knots
};

}  // namespace drivesim::geo
