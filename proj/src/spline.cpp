#include "drivesim/spline.hpp"

#include <algorithm>
#include <cmath>

namespace drivesim::geo {

namespace {

// Pentadiagonal symmetric positive-definite solve via LDL^T, band width 2.
// a0 = main diagonal, a1[i] = A(i+1,i), a2[i] = A(i+2,i).
std::vector<double> solve_penta(std::vector<double> a0, std::vector<double> a1,
                                std::vector<double> a2, std::vector<double> b) {
  const size_t m = a0.size();
  std::vector<double> d(m), l1(m, 0.0), l2(m, 0.0);
  for (size_t i = 0; i < m; ++i) {
    double di = a0[i];
    if (i >= 1) di -= l1[i - 1] * l1[i - 1] * d[i - 1];
    if (i >= 2) di -= l2[i - 2] * l2[i - 2] * d[i - 2];
    d[i] = di;
    if (i + 1 < m) {
      double v = a1[i];
      if (i >= 1) v -= l2[i - 1] * d[i - 1] * l1[i - 1];
      l1[i] = v / d[i];
    }
    if (i + 2 < m) l2[i] = a2[i] / d[i];
  }
  // forward: L y = b
  for (size_t i = 0; i < m; ++i) {
    if (i >= 1) b[i] -= l1[i - 1] * b[i - 1];
    if (i >= 2) b[i] -= l2[i - 2] * b[i - 2];
  }
  for (size_t i = 0; i < m; ++i) b[i] /= d[i];
  // backward: L^T x = y
  for (size_t ii = m; ii-- > 0;) {
    if (ii + 1 < m) b[ii] -= l1[ii] * b[ii + 1];
    if (ii + 2 < m) b[ii] -= l2[ii] * b[ii + 2];
  }
  return b;
}

// Gauss-Legendre 10-point nodes/weights on [-1,1].
constexpr double kGlX[5] = {0.1488743389816312, 0.4333953941292472, 0.6794095682990244,
                            0.8650633666889845, 0.9739065285171717};
constexpr double kGlW[5] = {0.2955242247147529, 0.2692667193099963, 0.2190863625159820,
                            0.1494513491505806, 0.0666713443086881};

}  // namespace

SmoothingSpline::SmoothingSpline(const std::vector<double>& u, const std::vector<double>& z,
                                 double rms_tol) {
  const size_t n = u.size();
  if (n < 4 || z.size() != n) throw Error("smoothing spline needs >= 4 samples");
  for (size_t i = 1; i < n; ++i)
    if (!(u[i] > u[i - 1])) throw Error("spline parameter not strictly increasing");
  u_ = u;

  const size_t m = n - 2;
  std::vector<double> h(n - 1);
  for (size_t i = 0; i + 1 < n; ++i) h[i] = u[i + 1] - u[i];

  // Q columns j=0..m-1 touch rows j, j+1, j+2.
  std::vector<double> qt(m), qm(m), qb(m);
  for (size_t j = 0; j < m; ++j) {
    qt[j] = 1.0 / h[j];
    qb[j] = 1.0 / h[j + 1];
    qm[j] = -qt[j] - qb[j];
  }
  std::vector<double> rhs(m);
  for (size_t j = 0; j < m; ++j) rhs[j] = qt[j] * z[j] + qm[j] * z[j + 1] + qb[j] * z[j + 2];

  auto fit_with_lambda = [&](double lam, std::vector<double>& fitted) -> double {
    std::vector<double> gamma;
    if (lam > 0) {
      std::vector<double> a0(m), a1(m, 0.0), a2(m, 0.0);
      for (size_t j = 0; j < m; ++j) {
        a0[j] = (h[j] + h[j + 1]) / 3.0 + lam * (qt[j] * qt[j] + qm[j] * qm[j] + qb[j] * qb[j]);
        if (j + 1 < m) a1[j] = h[j + 1] / 6.0 + lam * (qm[j] * qt[j + 1] + qb[j] * qm[j + 1]);
        if (j + 2 < m) a2[j] = lam * (qb[j] * qt[j + 2]);
      }
      gamma = solve_penta(std::move(a0), std::move(a1), std::move(a2), rhs);
    } else {
      gamma.assign(m, 0.0);
    }
    fitted = z;
    double ss = 0.0;
    if (lam > 0) {
      for (size_t r = 0; r < n; ++r) {
        double qg = 0.0;
        if (r >= 2 && r - 2 < m) qg += qb[r - 2] * gamma[r - 2];
        if (r >= 1 && r - 1 < m) qg += qm[r - 1] * gamma[r - 1];
        if (r < m) qg += qt[r] * gamma[r];
        double resid = lam * qg;
        fitted[r] = z[r] - resid;
        ss += resid * resid;
      }
    }
    return std::sqrt(ss / n);
  };

  // Largest dyadic lambda whose RMS deviation stays below tolerance.
  double lam = 1e6;
  std::vector<double> fitted;
  double rms = fit_with_lambda(lam, fitted);
  int guard = 0;
  while (rms > rms_tol && guard++ < 80) {
    lam *= 0.25;
    rms = fit_with_lambda(lam, fitted);
  }
  if (rms > rms_tol) {
    lam = 0.0;
    rms = fit_with_lambda(lam, fitted);
  }
  lambda_ = lam;
  rms_dev_ = rms;
  build_natural(fitted);
}

void SmoothingSpline::build_natural(const std::vector<double>& zf) {
  const size_t n = u_.size();
  std::vector<double> h(n - 1);
  for (size_t i = 0; i + 1 < n; ++i) h[i] = u_[i + 1] - u_[i];

  // Tridiagonal solve for second derivatives, natural boundary (M0 = Mn-1 = 0).
  std::vector<double> M(n, 0.0);
  const size_t m = n - 2;
  std::vector<double> diag(m), off(m, 0.0), rhs(m);
  for (size_t j = 0; j < m; ++j) {
    diag[j] = (h[j] + h[j + 1]) / 3.0;
    if (j + 1 < m) off[j] = h[j + 1] / 6.0;
    rhs[j] = (zf[j + 2] - zf[j + 1]) / h[j + 1] - (zf[j + 1] - zf[j]) / h[j];
  }
  for (size_t j = 1; j < m; ++j) {  // Thomas
    double w = off[j - 1] / diag[j - 1];
    diag[j] -= w * off[j - 1];
    rhs[j] -= w * rhs[j - 1];
  }
  if (m > 0) {
    M[m] = rhs[m - 1] / diag[m - 1];
    for (size_t j = m - 1; j-- > 0;) M[j + 1] = (rhs[j] - off[j] * M[j + 2]) / diag[j];
  }

  a_.resize(n - 1);
  b_.resize(n - 1);
  c_.resize(n - 1);
  d_.resize(n - 1);
  for (size_t i = 0; i + 1 < n; ++i) {
    a_[i] = zf[i];
    b_[i] = (zf[i + 1] - zf[i]) / h[i] - h[i] * (2.0 * M[i] + M[i + 1]) / 6.0;
    c_[i] = M[i] / 2.0;
    d_[i] = (M[i + 1] - M[i]) / (6.0 * h[i]);
  }
}

size_t SmoothingSpline::interval(double u) const {
  if (u <= u_.front()) return 0;
  if (u >= u_.back()) return u_.size() - 2;
  size_t lo = std::upper_bound(u_.begin(), u_.end(), u) - u_.begin();
  return lo - 1;
}

double SmoothingSpline::eval(double u) const {
  size_t i = interval(u);
  double t = u - u_[i];
  return a_[i] + t * (b_[i] + t * (c_[i] + t * d_[i]));
}

double SmoothingSpline::deriv(double u) const {
  size_t i = interval(u);
  double t = u - u_[i];
  return b_[i] + t * (2.0 * c_[i] + 3.0 * t * d_[i]);
}

double SmoothingSpline::deriv2(double u) const {
  size_t i = interval(u);
  double t = u - u_[i];
  return 2.0 * c_[i] + 6.0 * t * d_[i];
}

SmoothedPath::SmoothedPath(const std::vector<Vec2>& polyline, double rms_tol_m,
                           double spacing_m) {
  if (polyline.size() < 2) throw Error("smoothed path needs a polyline");
  std::vector<double> chord(polyline.size(), 0.0);
  for (size_t i = 1; i < polyline.size(); ++i)
    chord[i] = chord[i - 1] + (polyline[i] - polyline[i - 1]).norm();
  double total = chord.back();
  if (total <= spacing_m * 3) throw Error("route too short to smooth");

  // Canonical re-sampling at a spacing that divides the total length exactly:
  // the knot set then depends only on the traced curve and is symmetric under
  // reversal of the polyline.
  size_t segs = static_cast<size_t>(std::ceil(total / spacing_m));
  double step = total / static_cast<double>(segs);
  std::vector<double> xs, ys;
  knot_u_.clear();
  size_t seg = 0;
  for (size_t k = 0; k <= segs; ++k) {
    double s = std::min(step * static_cast<double>(k), total);
    while (seg + 2 < chord.size() && chord[seg + 1] < s) ++seg;
    double ds = chord[seg + 1] - chord[seg];
    double t = ds > 0 ? (s - chord[seg]) / ds : 0.0;
    Vec2 p = polyline[seg] + (polyline[seg + 1] - polyline[seg]) * t;
    knot_u_.push_back(s);
    xs.push_back(p.x);
    ys.push_back(p.y);
  }
  u_max_ = total;
  sx_ = SmoothingSpline(knot_u_, xs, rms_tol_m);
  sy_ = SmoothingSpline(knot_u_, ys, rms_tol_m);

  knot_arc_.assign(knot_u_.size(), 0.0);
  for (size_t i = 1; i < knot_u_.size(); ++i) {
    double a = knot_u_[i - 1], b = knot_u_[i], mid = 0.5 * (a + b), half = 0.5 * (b - a);
    double acc = 0.0;
    for (int q = 0; q < 5; ++q) {
      acc += kGlW[q] * (speed(mid - half * kGlX[q]) + speed(mid + half * kGlX[q]));
    }
    knot_arc_[i] = knot_arc_[i - 1] + acc * half;
  }
}

Vec2 SmoothedPath::eval(double u) const { return {sx_.eval(u), sy_.eval(u)}; }

Vec2 SmoothedPath::deriv(double u) const { return {sx_.deriv(u), sy_.deriv(u)}; }

double SmoothedPath::speed(double u) const {
  return std::hypot(sx_.deriv(u), sy_.deriv(u));
}

double SmoothedPath::curvature(double u) const {
  double x1 = sx_.deriv(u), y1 = sy_.deriv(u);
  double x2 = sx_.deriv2(u), y2 = sy_.deriv2(u);
  double sp = std::hypot(x1, y1);
  return (x1 * y2 - y1 * x2) / (sp * sp * sp);
}

double SmoothedPath::arc_length(double u0, double u1, double tol) const {
  if (u1 < u0) return -arc_length(u1, u0, tol);
  u0 = clamp(u0, 0.0, u_max_);
  u1 = clamp(u1, 0.0, u_max_);

  // Adaptive 10-point Gauss-Legendre, split at knots so each piece is smooth.
  struct Rec {
    const SmoothedPath* p;
    double gl(double a, double b) const {
      double mid = 0.5 * (a + b), half = 0.5 * (b - a), acc = 0.0;
      for (int q = 0; q < 5; ++q)
        acc += kGlW[q] * (p->speed(mid - half * kGlX[q]) + p->speed(mid + half * kGlX[q]));
      return acc * half;
    }
    double adapt(double a, double b, double whole, double tol, int depth) const {
      double m = 0.5 * (a + b);
      double left = gl(a, m), right = gl(m, b);
      if (depth > 24 || std::fabs(left + right - whole) < tol) return left + right;
      return adapt(a, m, left, tol * 0.5, depth + 1) + adapt(m, b, right, tol * 0.5, depth + 1);
    }
  } rec{this};

  double total = 0.0;
  size_t idx = std::upper_bound(knot_u_.begin(), knot_u_.end(), u0) - knot_u_.begin();
  double a = u0;
  while (a < u1) {
    double b = (idx < knot_u_.size() && knot_u_[idx] < u1) ? knot_u_[idx] : u1;
    if (b > a) total += rec.adapt(a, b, rec.gl(a, b), tol, 0);
    a = b;
    ++idx;
  }
  return total;
}

double SmoothedPath::param_at_arc(double u0, double s, double tol) const {
  u0 = clamp(u0, 0.0, u_max_);
  size_t i0 = std::min<size_t>(
      std::upper_bound(knot_u_.begin(), knot_u_.end(), u0) - knot_u_.begin() - 1,
      knot_u_.size() - 2);
  double arc_u0 = knot_arc_[i0] + arc_length(knot_u_[i0], u0, tol * 0.1);
  double target = arc_u0 + s;
  if (target >= knot_arc_.back()) return u_max_;
  if (target <= 0.0) return 0.0;

  size_t hi = std::upper_bound(knot_arc_.begin(), knot_arc_.end(), target) - knot_arc_.begin();
  size_t i = hi - 1;  // target in [knot_arc_[i], knot_arc_[i+1])
  const double anchor = knot_u_[i];
  const double need = target - knot_arc_[i];
  double lo_u = knot_u_[i], hi_u = knot_u_[i + 1];
  double u = lo_u + (hi_u - lo_u) * need / std::max(knot_arc_[i + 1] - knot_arc_[i], 1e-12);
  for (int it = 0; it < 60; ++it) {
    double g = arc_length(anchor, u, tol * 0.1) - need;
    if (std::fabs(g) < tol * 0.5) break;
    if (g > 0)
      hi_u = u;
    else
      lo_u = u;
    double next = u - g / std::max(speed(u), 1e-9);
    if (!(next > lo_u && next < hi_u)) next = 0.5 * (lo_u + hi_u);
    u = next;
  }
  return u;
}

}  // namespace drivesim::geo
