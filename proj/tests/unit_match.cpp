#include <cmath>
#include <vector>

#include "doctest.h"
#include "drivesim/map_match.hpp"

using namespace drivesim;
using namespace drivesim::geo;

namespace {

PlannedRoute route_from_xy(std::vector<Vec2> xy) {
  PlannedRoute r;
  r.proj = LocalProjection(GeoPoint{0, 0});
  r.xy = std::move(xy);
  r.cumulative_s.resize(r.xy.size());
  r.cumulative_s[0] = 0;
  for (size_t i = 1; i < r.xy.size(); ++i)
    r.cumulative_s[i] = r.cumulative_s[i - 1] + (r.xy[i] - r.xy[i - 1]).norm();
  for (const auto& p : r.xy) r.polyline.push_back(r.proj.to_geo(p));
  return r;
}

PlannedRoute wave_route() {
  std::vector<Vec2> wave;
  for (int i = 0; i <= 160; ++i) {
    double x = 5.0 * i;
    wave.push_back({x, 8.0 * std::sin(x / 40.0)});
  }
  return route_from_xy(wave);
}

// Clean fixes at constant speed along the route, ending at arc s_end.
std::vector<TimedGeoPoint> trace_to(const PlannedRoute& r, double s_end, int count,
                                    double speed_mps, double rate_hz) {
  std::vector<TimedGeoPoint> out;
  for (int j = 0; j < count; ++j) {
    double dt = (count - 1 - j) / rate_hz;
    double s = s_end - speed_mps * dt;
    TimedGeoPoint rec;
    rec.t = s_end / speed_mps - dt;
    rec.p = r.proj.to_geo(r.point_at(s));
    out.push_back(rec);
  }
  return out;
}

}  // namespace

TEST_CASE("matching clean on-route fixes recovers arc length") {
  std::vector<Vec2> line;
  for (int i = 0; i <= 40; ++i) line.push_back({10.0 * i, 0.0});
  PlannedRoute r = route_from_xy(line);

  std::vector<TimedGeoPoint> past;
  for (int j = 0; j <= 12; ++j)
    past.push_back({j * 0.5, r.proj.to_geo(Vec2{10.0 * j, 0.0})});
  RoutePosition pos = match_position(r, past);
  CHECK(pos.s == doctest::Approx(120.0).epsilon(0.004));
  CHECK(std::fabs(pos.lateral_offset) < 0.01);
  CHECK(pos.confidence == doctest::Approx(1.0).epsilon(0.001));
}

TEST_CASE("matching denoises GPS within 5 m for 95% of trials") {
  PlannedRoute r = wave_route();
  Rng rng(404);
  int ok = 0;
  const int trials = 500;
  for (int trial = 0; trial < trials; ++trial) {
    Rng local = rng.derive(trial);
    double s_true = local.uniform(60.0, r.length_m() - 60.0);
    auto past = trace_to(r, s_true, 10, 12.0, 18.0);
    for (auto& rec : past) {
      Vec2 xy = r.proj.to_local(rec.p);
      xy.x += local.normal(0, 3.0);
      xy.y += local.normal(0, 3.0);
      rec.p = r.proj.to_geo(xy);
    }
    RoutePosition pos = match_position(r, past);
    if (std::fabs(pos.s - s_true) <= 5.0) ++ok;
  }
  CHECK(ok >= static_cast<int>(0.95 * trials));
}

TEST_CASE("matching far off the route fails") {
  std::vector<Vec2> line;
  for (int i = 0; i <= 10; ++i) line.push_back({10.0 * i, 0.0});
  PlannedRoute r = route_from_xy(line);
  std::vector<TimedGeoPoint> past{{0.0, r.proj.to_geo(Vec2{50.0, 80.0})}};
  CHECK_THROWS_AS(match_position(r, past), OffRouteError);
}

TEST_CASE("matched s progresses monotonically over an episode") {
  PlannedRoute r = wave_route();
  RouteMatcher matcher(r);
  Rng rng(77);
  std::vector<TimedGeoPoint> past;
  double prev = -1e9;
  double final_s = 0.0;
  for (int k = 0; k < 400; ++k) {
    double t = k / 18.0;
    double s_true = 40.0 + 11.0 * t;
    Vec2 xy = r.point_at(s_true);
    xy.x += rng.normal(0, 3.0);
    xy.y += rng.normal(0, 3.0);
    past.push_back({t, r.proj.to_geo(xy)});
    if (past.size() < 4) continue;
    RoutePosition pos = matcher.match(past);
    CHECK(pos.s >= prev - RouteMatcher::kBackstepM - 1e-9);
    prev = pos.s;
    final_s = pos.s;
  }
  CHECK(final_s == doctest::Approx(40.0 + 11.0 * (399.0 / 18.0)).epsilon(0.03));
}

TEST_CASE("matching the projected trace is idempotent") {
  PlannedRoute r = wave_route();
  Rng rng(9);
  auto past = trace_to(r, 300.0, 10, 12.0, 18.0);
  for (auto& rec : past) {
    Vec2 xy = r.proj.to_local(rec.p);
    xy.x += rng.normal(0, 3.0);
    xy.y += rng.normal(0, 3.0);
    rec.p = r.proj.to_geo(xy);
  }
  RoutePosition first = match_position(r, past);

  std::vector<TimedGeoPoint> projected = past;
  for (auto& rec : projected) {
    Vec2 xy = r.proj.to_local(rec.p);
    double best_d = 1e18;
    Vec2 best_p{};
    for (size_t i = 0; i + 1 < r.xy.size(); ++i) {
      double t = 0.0;
      double d = point_segment_distance(xy, r.xy[i], r.xy[i + 1], &t);
      if (d < best_d) {
        best_d = d;
        best_p = r.xy[i] + (r.xy[i + 1] - r.xy[i]) * t;
      }
    }
    rec.p = r.proj.to_geo(best_p);
  }
  RoutePosition second = match_position(r, projected);
  CHECK(std::fabs(second.s - first.s) < 0.1);
}

TEST_CASE("lateral offset is signed and sets confidence") {
  std::vector<Vec2> line;
  for (int i = 0; i <= 40; ++i) line.push_back({10.0 * i, 0.0});
  PlannedRoute r = route_from_xy(line);

  std::vector<TimedGeoPoint> left;
  for (int j = 0; j < 10; ++j)
    left.push_back({j / 18.0, r.proj.to_geo(Vec2{100.0 + j, 5.0})});
  RoutePosition pos = match_position(r, left);
  CHECK(pos.lateral_offset == doctest::Approx(5.0).epsilon(0.01));
  CHECK(pos.confidence == doctest::Approx(std::exp(-0.5)).epsilon(0.01));

  std::vector<TimedGeoPoint> right;
  for (int j = 0; j < 10; ++j)
    right.push_back({j / 18.0, r.proj.to_geo(Vec2{100.0 + j, -2.0})});
  CHECK(match_position(r, right).lateral_offset == doctest::Approx(-2.0).epsilon(0.01));
}

TEST_CASE("route_ahead delegates to resampling and advances with s") {
  PlannedRoute r = wave_route();
  RoutePosition a{100.0, 0.0, 1.0};
  RouteMatrix ma = route_ahead(r, a);
  RouteMatrix direct = resample_route(r, 100.0, 300.0, 1.0);
  REQUIRE(ma.points.size() == 300);
  for (int k = 0; k < 300; ++k) CHECK((ma.points[k] - direct.points[k]).norm() < 1e-12);

  RoutePosition b{110.0, 0.0, 1.0};
  RouteMatrix mb = route_ahead(r, b);
  double advance = (mb.points[0] - ma.points[0]).norm();
  double chord_10 = (r.point_at(110.0) - r.point_at(100.0)).norm();
  CHECK(advance == doctest::Approx(chord_10).epsilon(0.02));
}
