#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "doctest.h"
#include "drivesim/geo_route.hpp"
#include "drivesim/spline.hpp"

using namespace drivesim;
using namespace drivesim::geo;

namespace {

double haversine(GeoPoint a, GeoPoint b) {
  const double R = LocalProjection::kEarthRadiusM;
  double la1 = deg2rad(a.lat), la2 = deg2rad(b.lat);
  double dlat = la2 - la1, dlon = deg2rad(b.lon - a.lon);
  double h = std::sin(dlat / 2) * std::sin(dlat / 2) +
             std::cos(la1) * std::cos(la2) * std::sin(dlon / 2) * std::sin(dlon / 2);
  return 2 * R * std::asin(std::sqrt(h));
}

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

// All simple paths, for the shortest-path oracle: minimum cost, then fewest
// edges, then lexicographically smallest node sequence.
struct BruteBest {
  bool found = false;
  double cost = 0;
  std::vector<NodeId> path;
};

void brute_dfs(const RoadGraph& g, const NodeId& cur, const NodeId& dest,
               std::vector<NodeId>& path, std::vector<bool>& used,
               const std::vector<NodeId>& ids, double cost, BruteBest& best) {
  if (cur == dest) {
    bool better = false;
    if (!best.found) {
      better = true;
    } else if (cost < best.cost - 1e-9) {
      better = true;
    } else if (cost < best.cost + 1e-9) {
      if (path.size() < best.path.size()) better = true;
      else if (path.size() == best.path.size() && path < best.path) better = true;
    }
    if (better) best = {true, cost, path};
    return;
  }
  for (const auto& e : g.edges) {
    if (e.from != cur) continue;
    size_t vi = std::find(ids.begin(), ids.end(), e.to) - ids.begin();
    if (used[vi]) continue;
    used[vi] = true;
    path.push_back(e.to);
    brute_dfs(g, e.to, dest, path, used, ids, cost + e.length_m, best);
    path.pop_back();
    used[vi] = false;
  }
}

BruteBest brute_shortest(const RoadGraph& g, const NodeId& start, const NodeId& dest) {
  std::vector<NodeId> ids;
  for (const auto& [id, _] : g.nodes) ids.push_back(id);
  std::vector<bool> used(ids.size(), false);
  size_t si = std::find(ids.begin(), ids.end(), start) - ids.begin();
  used[si] = true;
  std::vector<NodeId> path{start};
  BruteBest best;
  brute_dfs(g, start, dest, path, used, ids, 0.0, best);
  return best;
}

RoadGraph random_graph(Rng& rng, int n) {
  RoadGraph g;
  for (int i = 0; i < n; ++i)
    g.nodes[strf("n%d", i)] = GeoPoint{0.0, 0.0001 * (i + 1)};
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i == j || rng.uniform() > 0.35) continue;
      RoadEdge e;
      e.from = strf("n%d", i);
      e.to = strf("n%d", j);
      e.length_m = static_cast<double>(1 + rng.uniform_int(5));
      g.edges.push_back(e);
    }
  return g;
}

std::string minimal_graph_json() {
  GeoPoint a{0, 0}, b{0, 0};
  b.lon = 100.0 / (kPi / 180.0 * LocalProjection::kEarthRadiusM);
  double len = geodesic_distance(a, b);
  return strf(R"({"nodes":[{"id":"a","lat":0,"lon":0},{"id":"b","lat":0,"lon":%.12f}],
"edges":[{"from":"a","to":"b","length_m":%.6f,"speed_limit_kmh":50,"road_class":"urban"}]})",
              b.lon, len);
}

}  // namespace

TEST_CASE("geodesic distance matches haversine") {
  GeoPoint a{0, 0}, b{1, 0};
  double d = geodesic_distance(a, b);
  CHECK(d == doctest::Approx(111194.0).epsilon(0.002));

  CHECK(geodesic_distance(a, a) == 0.0);

  Rng rng(42);
  for (int i = 0; i < 100; ++i) {
    GeoPoint p{rng.uniform(-60, 60), rng.uniform(-170, 170)};
    GeoPoint q{p.lat + rng.uniform(-0.05, 0.05), p.lon + rng.uniform(-0.05, 0.05)};
    double dpq = geodesic_distance(p, q);
    CHECK(dpq == geodesic_distance(q, p));
    double hv = haversine(p, q);
    if (hv > 1.0) CHECK(dpq == doctest::Approx(hv).epsilon(0.001));
  }
}

TEST_CASE("local projection round-trips within 1 cm") {
  LocalProjection proj(GeoPoint{46.5, 8.2});
  Rng rng(7);
  for (int i = 0; i < 200; ++i) {
    Vec2 xy{rng.uniform(-25000, 25000), rng.uniform(-25000, 25000)};
    Vec2 back = proj.to_local(proj.to_geo(xy));
    CHECK((back - xy).norm() < 0.01);
  }
}

TEST_CASE("load_graph accepts a minimal graph") {
  RoadGraph g = load_graph(minimal_graph_json());
  CHECK(g.nodes.size() == 2);
  REQUIRE(g.edges.size() == 1);
  CHECK(g.edges[0].length_m == doctest::Approx(100.0).epsilon(1e-6));
  CHECK(g.weakly_connected());
}

TEST_CASE("load_graph rejects bad documents") {
  CHECK_THROWS_AS(load_graph("{not json"), GraphParseError);
  CHECK_THROWS_AS(load_graph("{}"), GraphParseError);

  std::string dangling = R"({"nodes":[{"id":"a","lat":0,"lon":0}],
    "edges":[{"from":"a","to":"n9","length_m":10,"speed_limit_kmh":50,"road_class":"urban"}]})";
  CHECK_THROWS_AS(load_graph(dangling), DanglingReferenceError);
  CHECK_THROWS_WITH_AS(load_graph(dangling),
                       doctest::Contains("missing node 'n9'"), DanglingReferenceError);

  std::string dup = R"({"nodes":[{"id":"a","lat":0,"lon":0},{"id":"a","lat":1,"lon":0}],
    "edges":[]})";
  CHECK_THROWS_AS(load_graph(dup), GraphParseError);

  std::string bad_len = R"({"nodes":[{"id":"a","lat":0,"lon":0},{"id":"b","lat":0,"lon":0.001}],
    "edges":[{"from":"a","to":"b","length_m":500,"speed_limit_kmh":50,"road_class":"urban"}]})";
  CHECK_THROWS_AS(load_graph(bad_len), GraphParseError);

  std::string split = R"({"nodes":[{"id":"a","lat":0,"lon":0},{"id":"b","lat":0,"lon":0.001},
    {"id":"c","lat":0.5,"lon":0.5},{"id":"d","lat":0.5,"lon":0.501}],
    "edges":[{"from":"a","to":"b","length_m":111.19,"speed_limit_kmh":50,"road_class":"urban"},
             {"from":"c","to":"d","length_m":111.18,"speed_limit_kmh":50,"road_class":"urban"}]})";
  CHECK_THROWS_WITH_AS(load_graph(split), doctest::Contains("weakly connected"),
                       GraphParseError);
}

TEST_CASE("ring with chord survives round-trip and degree audit") {
  LocalProjection proj(GeoPoint{46.0, 7.0});
  RoadGraph g;
  std::vector<Vec2> pos;
  for (int i = 0; i < 6; ++i) {
    Vec2 p = Vec2{500.0, 0.0}.rotated(deg2rad(60.0 * i));
    pos.push_back(p);
    g.nodes[strf("r%d", i)] = proj.to_geo(p);
  }
  auto add = [&](int i, int j) {
    RoadEdge e;
    e.from = strf("r%d", i);
    e.to = strf("r%d", j);
    e.length_m = geodesic_distance(g.nodes[e.from], g.nodes[e.to]);
    g.edges.push_back(e);
  };
  for (int i = 0; i < 6; ++i) add(i, (i + 1) % 6);
  add(0, 3);
  REQUIRE(g.edges.size() == 7);

  RoadGraph loaded = load_graph(g.to_json());
  CHECK(loaded.edges.size() == 7);
  CHECK(loaded.weakly_connected());
  auto deg = loaded.undirected_degree();
  CHECK(deg["r0"] == 3);
  CHECK(deg["r3"] == 3);
  CHECK(deg["r1"] == 2);
  int deg3 = 0;
  for (const auto& [id, d] : deg)
    if (d >= 3) ++deg3;
  CHECK(deg3 == 2);
}

TEST_CASE("plan_route on a single edge returns that edge") {
  RoadGraph g;
  g.nodes["a"] = {0, 0};
  g.nodes["b"] = {0, 0.001};
  g.edges.push_back({"a", "b", 111.19, 50, RoadClass::urban});
  PlannedRoute r = plan_route(g, "a", "b");
  CHECK(r.node_path == std::vector<NodeId>{"a", "b"});
  CHECK(r.length_m() == doctest::Approx(111.19).epsilon(0.01));
}

TEST_CASE("plan_route errors") {
  RoadGraph g;
  g.nodes["a"] = {0, 0};
  g.nodes["b"] = {0, 0.001};
  g.edges.push_back({"b", "a", 111.19, 50, RoadClass::urban});
  CHECK_THROWS_AS(plan_route(g, "a", "b"), UnreachableError);
  CHECK_THROWS_AS(plan_route(g, "a", "zz"), UnknownNodeError);
}

TEST_CASE("plan_route tie-break picks lexicographically smaller branch") {
  // Diamond: s -> {m1, m2} -> t with equal costs both ways.
  RoadGraph g;
  g.nodes["s"] = {0, 0};
  g.nodes["m1"] = {0, 0.001};
  g.nodes["m2"] = {0.001, 0};
  g.nodes["t"] = {0.001, 0.001};
  g.edges.push_back({"s", "m2", 10, 50, RoadClass::urban});
  g.edges.push_back({"s", "m1", 10, 50, RoadClass::urban});
  g.edges.push_back({"m2", "t", 10, 50, RoadClass::urban});
  g.edges.push_back({"m1", "t", 10, 50, RoadClass::urban});
  PlannedRoute r = plan_route(g, "s", "t");
  CHECK(r.node_path == std::vector<NodeId>{"s", "m1", "t"});
}

TEST_CASE("plan_route prefers fewer edges among equal-cost paths") {
  RoadGraph g;
  double lon = 0;
  for (const char* id : {"a", "b", "c", "d"}) g.nodes[id] = {0, lon += 0.001};
  g.edges.push_back({"a", "b", 1, 50, RoadClass::urban});
  g.edges.push_back({"b", "d", 1, 50, RoadClass::urban});
  g.edges.push_back({"a", "c", 2, 50, RoadClass::urban});
  g.edges.push_back({"c", "d", 1, 50, RoadClass::urban});
  g.edges.push_back({"a", "d", 2, 50, RoadClass::urban});
  PlannedRoute r = plan_route(g, "a", "d");
  CHECK(r.node_path == std::vector<NodeId>{"a", "d"});
}

TEST_CASE("plan_route matches brute-force enumeration") {
  Rng rng(20260815);
  int solved = 0;
  for (int trial = 0; trial < 40; ++trial) {
    Rng local = rng.derive(trial);
    int n = 2 + static_cast<int>(local.uniform_int(9));
    RoadGraph g = random_graph(local, n);
    NodeId start = "n0";
    NodeId dest = strf("n%d", n - 1);
    BruteBest oracle = brute_shortest(g, start, dest);
    if (!oracle.found) {
      CHECK_THROWS_AS(plan_route(g, start, dest), UnreachableError);
      continue;
    }
    PlannedRoute r = plan_route(g, start, dest);
    double cost = 0;
    for (size_t i = 0; i + 1 < r.node_path.size(); ++i) {
      double best_edge = std::numeric_limits<double>::infinity();
      for (const auto& e : g.edges)
        if (e.from == r.node_path[i] && e.to == r.node_path[i + 1])
          best_edge = std::min(best_edge, e.length_m);
      cost += best_edge;
    }
    CHECK(cost == doctest::Approx(oracle.cost).epsilon(1e-12));
    CHECK(r.node_path == oracle.path);
    ++solved;
  }
  CHECK(solved > 10);
}

TEST_CASE("travel_time weight prefers the faster road") {
  RoadGraph g;
  double lon = 0;
  for (const char* id : {"a", "b", "c"}) g.nodes[id] = {0, lon += 0.001};
  g.edges.push_back({"a", "c", 1000, 30, RoadClass::residential});
  g.edges.push_back({"a", "b", 800, 100, RoadClass::highway});
  g.edges.push_back({"b", "c", 800, 100, RoadClass::highway});
  CHECK(plan_route(g, "a", "c", RouteWeight::distance).node_path ==
        std::vector<NodeId>{"a", "c"});
  CHECK(plan_route(g, "a", "c", RouteWeight::travel_time).node_path ==
        std::vector<NodeId>{"a", "b", "c"});
}

TEST_CASE("resample on straight segment gives 1.000 m spacing") {
  std::vector<Vec2> line;
  for (int i = 0; i <= 40; ++i) line.push_back({10.0 * i, 0.0});
  PlannedRoute r = route_from_xy(line);
  RouteMatrix m = resample_route(r, 0.0);
  REQUIRE(m.points.size() == 300);
  for (int k = 0; k < 300; ++k) CHECK(std::fabs(m.points[k].y) < 1e-6);
  for (int k = 1; k < 300; ++k) {
    double d = (m.points[k] - m.points[k - 1]).norm();
    CHECK(d == doctest::Approx(1.0).epsilon(0.001));
  }
  CHECK(m.points[0].x == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("resample on a circle keeps spacing and curvature") {
  std::vector<Vec2> arc;
  const double R = 100.0;
  for (int i = -170; i <= 170; ++i) {
    double a = deg2rad(i);
    arc.push_back({R * std::cos(a), R * std::sin(a)});
  }
  PlannedRoute r = route_from_xy(arc);
  RouteMatrix m = resample_route(r, 50.0);
  REQUIRE(m.points.size() == 300);
  for (int k = 1; k < 300; ++k) {
    double d = (m.points[k] - m.points[k - 1]).norm();
    CHECK(d == doctest::Approx(1.0).epsilon(0.01));
  }
  // Curvature of the fitted spline at interior samples, via the path itself.
  SmoothedPath path(r.xy);
  for (int k = 20; k < 280; k += 20) {
    double u = 50.0 + k;
    CHECK(std::fabs(path.curvature(u)) == doctest::Approx(0.01).epsilon(0.05));
  }
  // All resampled points stay near the circle.
  for (const auto& p : m.points) CHECK(p.norm() == doctest::Approx(R).epsilon(0.002));
}

TEST_CASE("resample clamps at the route end") {
  std::vector<Vec2> line;
  for (int i = 0; i <= 31; ++i) line.push_back({10.0 * i, 0.0});
  PlannedRoute r = route_from_xy(line);  // 310 m
  RouteMatrix m = resample_route(r, 100.0);
  REQUIRE(m.points.size() == 300);
  CHECK(m.points[0].x == doctest::Approx(100.0).epsilon(1e-6));
  CHECK(m.points[299].x == doctest::Approx(310.0).epsilon(1e-3));
  CHECK((m.points[299] - m.points[298]).norm() < 1e-9);
  CHECK((m.points[299] - m.points[250]).norm() < 1e-9);
  CHECK(m.points[150].x == doctest::Approx(250.0).epsilon(1e-4));
}

TEST_CASE("resample is invariant under midpoint densification") {
  std::vector<Vec2> wave;
  for (int i = 0; i <= 100; ++i) {
    double x = 5.0 * i;
    wave.push_back({x, 5.0 * std::sin(x / 30.0)});
  }
  std::vector<Vec2> dense;
  for (size_t i = 0; i + 1 < wave.size(); ++i) {
    dense.push_back(wave[i]);
    dense.push_back((wave[i] + wave[i + 1]) * 0.5);
  }
  dense.push_back(wave.back());

  RouteMatrix a = resample_route(route_from_xy(wave), 50.0);
  RouteMatrix b = resample_route(route_from_xy(dense), 50.0);
  for (int k = 0; k < 300; ++k) CHECK((a.points[k] - b.points[k]).norm() < 0.01);
}

TEST_CASE("resample mirrors under route reversal") {
  std::vector<Vec2> wave;
  for (int i = 0; i <= 100; ++i) {
    double x = 5.0 * i;
    wave.push_back({x, 5.0 * std::sin(x / 30.0)});
  }
  std::vector<Vec2> rev(wave.rbegin(), wave.rend());
  PlannedRoute fwd = route_from_xy(wave);
  PlannedRoute bwd = route_from_xy(rev);
  double total_arc = SmoothedPath(fwd.xy).arc_total();
  double from_f = 60.0;
  RouteMatrix mf = resample_route(fwd, from_f);
  RouteMatrix mb = resample_route(bwd, total_arc - from_f - 299.0);
  for (int k = 0; k < 300; ++k)
    CHECK((mf.points[k] - mb.points[299 - k]).norm() < 0.01);
}

TEST_CASE("smoothing spline suppresses noise within tolerance") {
  Rng rng(11);
  std::vector<double> u, z;
  for (int i = 0; i <= 60; ++i) {
    u.push_back(2.0 * i);
    z.push_back(3.0 + 0.5 * (2.0 * i) + rng.normal(0, 0.3));
  }
  SmoothingSpline s(u, z, 0.35);
  CHECK(s.rms_deviation() <= 0.35);
  CHECK(s.lambda() > 0.0);
  CHECK(s.eval(60.0) == doctest::Approx(33.0).epsilon(0.02));
}

TEST_CASE("route matrix CSV round-trips") {
  RouteMatrix m;
  Rng rng(3);
  for (int i = 0; i < RouteMatrix::kRows; ++i)
    m.points.push_back({rng.uniform(-500, 500), rng.uniform(-500, 500)});
  std::string csv = m.to_csv();
  RouteMatrix back = RouteMatrix::from_csv(csv);
  REQUIRE(back.points.size() == 300);
  for (int i = 0; i < 300; ++i) CHECK((m.points[i] - back.points[i]).norm() < 1e-8);
  size_t comma = csv.find(',');
  std::string first = csv.substr(0, comma);
  CHECK(first.find('.') != std::string::npos);
  CHECK(first.size() - first.find('.') - 1 == 9);
}
