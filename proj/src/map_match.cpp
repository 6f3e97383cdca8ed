#include "drivesim/map_match.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace drivesim::geo {

namespace {

struct Projection {
  double s = 0.0;
  double dist = 0.0;
  size_t segment = 0;
  double t01 = 0.0;
};

// Closest point on the whole polyline.
Projection project_global(const PlannedRoute& r, Vec2 p) {
  Projection best;
  best.dist = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i + 1 < r.xy.size(); ++i) {
    double t = 0.0;
    double d = point_segment_distance(p, r.xy[i], r.xy[i + 1], &t);
    if (d < best.dist) {
      double seg_len = r.cumulative_s[i + 1] - r.cumulative_s[i];
      best = {r.cumulative_s[i] + t * seg_len, d, i, t};
    }
  }
  return best;
}

// Closest point restricted to an arc-length corridor.
Projection project_corridor(const PlannedRoute& r, Vec2 p, double s_lo, double s_hi) {
  Projection best;
  best.dist = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i + 1 < r.xy.size(); ++i) {
    if (r.cumulative_s[i + 1] < s_lo || r.cumulative_s[i] > s_hi) continue;
    double t = 0.0;
    double d = point_segment_distance(p, r.xy[i], r.xy[i + 1], &t);
    double seg_len = r.cumulative_s[i + 1] - r.cumulative_s[i];
    double s = r.cumulative_s[i] + t * seg_len;
    if (s < s_lo || s > s_hi) continue;
    if (d < best.dist) best = {s, d, i, t};
  }
  return best;
}

double signed_lateral(const PlannedRoute& r, Vec2 p, const Projection& pr) {
  Vec2 a = r.xy[pr.segment], b = r.xy[pr.segment + 1];
  Vec2 tangent = (b - a).normalized();
  Vec2 closest = a + (b - a) * pr.t01;
  double side = tangent.cross(p - closest);
  return side >= 0 ? pr.dist : -pr.dist;
}

}  // namespace

RouteMatcher::RouteMatcher(const PlannedRoute& r, int window) : route_(r), window_(window) {
  if (window_ < 1) throw Error("matcher window must be positive");
}

RoutePosition RouteMatcher::match(const std::vector<TimedGeoPoint>& past) {
  if (past.empty()) throw Error("matcher needs at least one fix");
  size_t n = std::min<size_t>(past.size(), static_cast<size_t>(window_));
  std::vector<Vec2> win(n);
  std::vector<double> win_t(n);
  for (size_t i = 0; i < n; ++i) {
    const auto& rec = past[past.size() - n + i];
    win[i] = route_.proj.to_local(rec.p);
    win_t[i] = rec.t;
  }
  Vec2 latest = win.back();

  Projection global = project_global(route_, latest);
  if (global.dist > kOffRouteM)
    throw OffRouteError(strf("nearest route point is %.1f m away", global.dist));

  // Candidate projections of the newest fix, pruned to those nearly as close
  // as the best and filtered by the monotone progression constraint.
  std::vector<Projection> candidates;
  for (size_t i = 0; i + 1 < route_.xy.size(); ++i) {
    double t = 0.0;
    double d = point_segment_distance(latest, route_.xy[i], route_.xy[i + 1], &t);
    if (d > global.dist + 15.0) continue;
    double seg_len = route_.cumulative_s[i + 1] - route_.cumulative_s[i];
    Projection pr{route_.cumulative_s[i] + t * seg_len, d, i, t};
    if (prev_s_ && pr.s < *prev_s_ - kBackstepM - 1.0) continue;
    candidates.push_back(pr);
  }
  if (candidates.empty()) candidates.push_back(global);

  // Score each candidate by how well the whole window hugs the route just
  // behind it. The corridor is sized from the window's own extent so slow
  // and fast traces both fit.
  double reach = 1.5 * (win.back() - win.front()).norm() + 30.0;
  const Projection* best = nullptr;
  double best_score = std::numeric_limits<double>::infinity();
  for (const auto& c : candidates) {
    double score = 0.0;
    for (size_t j = 0; j < n; ++j) {
      Projection pj = project_corridor(route_, win[j], c.s - reach, c.s + 10.0);
      double d = std::isfinite(pj.dist) ? pj.dist : 2.0 * kOffRouteM;
      score += d * d;
    }
    bool better = score < best_score - 1e-12;
    if (!better && best && std::fabs(score - best_score) <= 1e-12) {
      if (c.dist < best->dist - 1e-12) better = true;
      else if (std::fabs(c.dist - best->dist) <= 1e-12 && c.s < best->s) better = true;
    }
    if (better || !best) {
      best_score = score;
      best = &c;
    }
  }
  Projection anchor = *best;

  // Linear fit of along-route position over time, evaluated at the newest
  // fix; suppresses along-track GPS noise.
  double s_est = anchor.s;
  if (n >= 4 && win_t.back() - win_t.front() > 1e-6) {
    double sum_t = 0, sum_s = 0, sum_tt = 0, sum_ts = 0;
    size_t used = 0;
    for (size_t j = 0; j < n; ++j) {
      Projection pj = project_corridor(route_, win[j], anchor.s - reach, anchor.s + 10.0);
      if (!std::isfinite(pj.dist)) continue;
      double tj = win_t[j] - win_t.back();
      sum_t += tj;
      sum_s += pj.s;
      sum_tt += tj * tj;
      sum_ts += tj * pj.s;
      ++used;
    }
    if (used >= 4) {
      double denom = used * sum_tt - sum_t * sum_t;
      if (std::fabs(denom) > 1e-12) {
        double slope = (used * sum_ts - sum_t * sum_s) / denom;
        double intercept = (sum_s - slope * sum_t) / used;
        if (std::fabs(intercept - anchor.s) < 8.0) s_est = intercept;
      }
    }
  }

  if (prev_s_) s_est = std::max(s_est, *prev_s_ - kBackstepM);
  s_est = clamp(s_est, 0.0, route_.length_m());

  RoutePosition pos;
  pos.s = s_est;
  Projection lat_ref = project_corridor(route_, latest, s_est - 30.0, s_est + 30.0);
  if (!std::isfinite(lat_ref.dist)) lat_ref = anchor;
  pos.lateral_offset = signed_lateral(route_, latest, lat_ref);
  pos.confidence = std::exp(-(pos.lateral_offset * pos.lateral_offset) / (2.0 * 5.0 * 5.0));
  prev_s_ = pos.s;
  return pos;
}

RoutePosition match_position(const PlannedRoute& r,
                             const std::vector<TimedGeoPoint>& past) {
  RouteMatcher m(r);
  return m.match(past);
}

RouteMatrix route_ahead(const PlannedRoute& r, const RoutePosition& p) {
  return resample_route(r, p.s, 300.0, 1.0);
}

}  // namespace drivesim::geo
