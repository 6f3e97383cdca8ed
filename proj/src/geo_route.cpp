#include "drivesim/geo_route.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <set>
#include <sstream>

#include "drivesim/spline.hpp"
#include "json.hpp"

namespace drivesim::geo {

using nlohmann::json;

LocalProjection::LocalProjection(GeoPoint ref) : ref_(ref) {
  m_per_deg_lat_ = kPi / 180.0 * kEarthRadiusM;
  m_per_deg_lon_ = m_per_deg_lat_ * std::cos(deg2rad(ref.lat));
}

Vec2 LocalProjection::to_local(GeoPoint p) const {
  return {(p.lon - ref_.lon) * m_per_deg_lon_, (p.lat - ref_.lat) * m_per_deg_lat_};
}

GeoPoint LocalProjection::to_geo(Vec2 xy) const {
  return {ref_.lat + xy.y / m_per_deg_lat_, ref_.lon + xy.x / m_per_deg_lon_};
}

double geodesic_distance(GeoPoint a, GeoPoint b) {
  double mid_lat = deg2rad(0.5 * (a.lat + b.lat));
  double k = kPi / 180.0 * LocalProjection::kEarthRadiusM;
  double dy = (b.lat - a.lat) * k;
  double dx = (b.lon - a.lon) * k * std::cos(mid_lat);
  return std::hypot(dx, dy);
}

RoadClass road_class_from_string(const std::string& s) {
  if (s == "highway") return RoadClass::highway;
  if (s == "rural") return RoadClass::rural;
  if (s == "urban") return RoadClass::urban;
  if (s == "residential") return RoadClass::residential;
  throw GraphParseError(strf("unknown road class '%s'", s.c_str()));
}

const char* to_string(RoadClass c) {
  switch (c) {
    case RoadClass::highway: return "highway";
    case RoadClass::rural: return "rural";
    case RoadClass::urban: return "urban";
    case RoadClass::residential: return "residential";
  }
  return "urban";
}

double default_speed_limit(RoadClass c) {
  switch (c) {
    case RoadClass::highway: return 120.0;
    case RoadClass::rural: return 80.0;
    case RoadClass::urban: return 50.0;
    case RoadClass::residential: return 30.0;
  }
  return 50.0;
}

const GeoPoint& RoadGraph::node(const NodeId& id) const {
  auto it = nodes.find(id);
  if (it == nodes.end()) throw UnknownNodeError(strf("unknown node '%s'", id.c_str()));
  return it->second;
}

std::map<NodeId, std::vector<size_t>> RoadGraph::adjacency() const {
  std::map<NodeId, std::vector<size_t>> adj;
  for (const auto& [id, _] : nodes) adj[id];
  for (size_t i = 0; i < edges.size(); ++i) adj[edges[i].from].push_back(i);
  return adj;
}

std::map<NodeId, int> RoadGraph::undirected_degree() const {
  std::map<NodeId, std::set<NodeId>> nbrs;
  for (const auto& e : edges) {
    if (e.from == e.to) continue;
    nbrs[e.from].insert(e.to);
    nbrs[e.to].insert(e.from);
  }
  std::map<NodeId, int> deg;
  for (const auto& [id, _] : nodes) deg[id] = static_cast<int>(nbrs[id].size());
  return deg;
}

bool RoadGraph::weakly_connected() const {
  if (nodes.empty()) return true;
  std::map<NodeId, std::vector<NodeId>> und;
  for (const auto& e : edges) {
    und[e.from].push_back(e.to);
    und[e.to].push_back(e.from);
  }
  std::set<NodeId> seen;
  std::vector<NodeId> stack{nodes.begin()->first};
  seen.insert(stack.back());
  while (!stack.empty()) {
    NodeId cur = stack.back();
    stack.pop_back();
    for (const auto& nb : und[cur]) {
      if (seen.insert(nb).second) stack.push_back(nb);
    }
  }
  return seen.size() == nodes.size();
}

std::string RoadGraph::to_json() const {
  json doc;
  doc["nodes"] = json::array();
  for (const auto& [id, p] : nodes) {
    doc["nodes"].push_back({{"id", id}, {"lat", p.lat}, {"lon", p.lon}});
  }
  doc["edges"] = json::array();
  for (const auto& e : edges) {
    doc["edges"].push_back({{"from", e.from},
                            {"to", e.to},
                            {"length_m", e.length_m},
                            {"speed_limit_kmh", e.speed_limit_kmh},
                            {"road_class", to_string(e.road_class)}});
  }
  return doc.dump(2) + "\n";
}

RoadGraph load_graph(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw GraphParseError(strf("graph JSON parse error: %s", e.what()));
  }

  RoadGraph g;
  try {
    if (!doc.contains("nodes") || !doc.contains("edges"))
      throw GraphParseError("graph JSON needs top-level 'nodes' and 'edges'");
    for (const auto& n : doc.at("nodes")) {
      NodeId id = n.at("id").get<NodeId>();
      if (id.empty()) throw GraphParseError("empty node id");
      GeoPoint p{n.at("lat").get<double>(), n.at("lon").get<double>()};
      if (p.lat < -90.0 || p.lat > 90.0 || p.lon < -180.0 || p.lon > 180.0)
        throw GraphParseError(strf("node '%s' has out-of-range coordinates", id.c_str()));
      if (!g.nodes.emplace(id, p).second)
        throw GraphParseError(strf("duplicate node id '%s'", id.c_str()));
    }
    size_t idx = 0;
    for (const auto& je : doc.at("edges")) {
      RoadEdge e;
      e.from = je.at("from").get<NodeId>();
      e.to = je.at("to").get<NodeId>();
      if (!g.has_node(e.from))
        throw DanglingReferenceError(
            strf("edge %zu references missing node '%s'", idx, e.from.c_str()));
      if (!g.has_node(e.to))
        throw DanglingReferenceError(
            strf("edge %zu references missing node '%s'", idx, e.to.c_str()));
      e.length_m = je.at("length_m").get<double>();
      if (!(e.length_m > 0.0))
        throw GraphParseError(strf("edge %zu ('%s'->'%s') has non-positive length", idx,
                                   e.from.c_str(), e.to.c_str()));
      e.road_class = road_class_from_string(je.at("road_class").get<std::string>());
      e.speed_limit_kmh = je.contains("speed_limit_kmh")
                              ? je.at("speed_limit_kmh").get<double>()
                              : default_speed_limit(e.road_class);
      if (!(e.speed_limit_kmh > 0.0))
        throw GraphParseError(strf("edge %zu has non-positive speed limit", idx));
      double geo = geodesic_distance(g.nodes.at(e.from), g.nodes.at(e.to));
      if (std::fabs(e.length_m - geo) > std::max(0.005 * geo, 0.01))
        throw GraphParseError(
            strf("edge %zu ('%s'->'%s') length %.3f m disagrees with endpoint distance %.3f m",
                 idx, e.from.c_str(), e.to.c_str(), e.length_m, geo));
      g.edges.push_back(std::move(e));
      ++idx;
    }
  } catch (const json::exception& e) {
    throw GraphParseError(strf("graph JSON schema error: %s", e.what()));
  }
  if (!g.weakly_connected()) throw GraphParseError("graph is not weakly connected");
  return g;
}

RoadGraph load_graph_file(const std::string& path) { return load_graph(read_file(path)); }

Vec2 PlannedRoute::point_at(double s) const {
  s = clamp(s, 0.0, length_m());
  size_t i = std::upper_bound(cumulative_s.begin(), cumulative_s.end(), s) -
             cumulative_s.begin();
  if (i == 0) return xy.front();
  if (i >= cumulative_s.size()) return xy.back();
  double t = (s - cumulative_s[i - 1]) / (cumulative_s[i] - cumulative_s[i - 1]);
  return xy[i - 1] + (xy[i] - xy[i - 1]) * t;
}

Vec2 PlannedRoute::tangent_at(double s) const {
  s = clamp(s, 0.0, length_m());
  size_t i = std::upper_bound(cumulative_s.begin(), cumulative_s.end(), s) -
             cumulative_s.begin();
  i = std::min(std::max<size_t>(i, 1), cumulative_s.size() - 1);
  return (xy[i] - xy[i - 1]).normalized();
}

PlannedRoute make_route(const RoadGraph& g, const std::vector<NodeId>& node_path) {
  if (node_path.size() < 2) throw DegenerateRouteError("route needs at least 2 nodes");
  PlannedRoute r;
  r.node_path = node_path;
  for (const auto& id : node_path) r.polyline.push_back(g.node(id));
  r.proj = LocalProjection(r.polyline.front());
  for (const auto& p : r.polyline) r.xy.push_back(r.proj.to_local(p));
  r.cumulative_s.resize(r.xy.size());
  r.cumulative_s[0] = 0.0;
  for (size_t i = 1; i < r.xy.size(); ++i) {
    double d = (r.xy[i] - r.xy[i - 1]).norm();
    if (d <= 0.0)
      throw DegenerateRouteError(strf("repeated vertex at '%s'", node_path[i].c_str()));
    r.cumulative_s[i] = r.cumulative_s[i - 1] + d;
  }
  return r;
}

namespace {

struct Label {
  double cost = std::numeric_limits<double>::infinity();
  int hops = std::numeric_limits<int>::max();
};

bool improves(double cost, int hops, const Label& best) {
  double eps = 1e-9 * (1.0 + std::fabs(best.cost));
  if (cost < best.cost - eps) return true;
  if (cost <= best.cost + eps && hops < best.hops) return true;
  return false;
}

bool tight(double a, double b) { return std::fabs(a - b) <= 1e-9 * (1.0 + std::fabs(b)); }

std::map<NodeId, Label> dijkstra(const RoadGraph& g,
                                 const std::map<NodeId, std::vector<size_t>>& adj,
                                 const NodeId& source, RouteWeight weight, bool reversed) {
  auto edge_cost = [&](const RoadEdge& e) {
    return weight == RouteWeight::distance ? e.length_m
                                           : e.length_m / (e.speed_limit_kmh / 3.6);
  };
  std::map<NodeId, Label> best;
  using Entry = std::tuple<double, int, NodeId>;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> pq;
  best[source] = {0.0, 0};
  pq.emplace(0.0, 0, source);
  while (!pq.empty()) {
    auto [cost, hops, id] = pq.top();
    pq.pop();
    auto it = best.find(id);
    if (it == best.end() || cost > it->second.cost + 1e-12 * (1.0 + cost) ||
        (tight(cost, it->second.cost) && hops > it->second.hops))
      continue;
    auto walk = [&](const RoadEdge& e) {
      const NodeId& next = reversed ? e.from : e.to;
      double nc = cost + edge_cost(e);
      int nh = hops + 1;
      Label& b = best.try_emplace(next).first->second;
      if (improves(nc, nh, b)) {
        b = {nc, nh};
        pq.emplace(nc, nh, next);
      }
    };
    if (!reversed) {
      auto ai = adj.find(id);
      if (ai != adj.end())
        for (size_t ei : ai->second) walk(g.edges[ei]);
    } else {
      for (const auto& e : g.edges)
        if (e.to == id) walk(e);
    }
  }
  return best;
}

}  // namespace

PlannedRoute plan_route(const RoadGraph& g, const NodeId& start, const NodeId& dest,
                        RouteWeight weight) {
  g.node(start);
  g.node(dest);
  if (start == dest) throw DegenerateRouteError("start equals destination");

  auto adj = g.adjacency();
  auto fwd = dijkstra(g, adj, start, weight, false);
  auto dit = fwd.find(dest);
  if (dit == fwd.end())
    throw UnreachableError(
        strf("no route from '%s' to '%s'", start.c_str(), dest.c_str()));
  const double total_cost = dit->second.cost;
  const int total_hops = dit->second.hops;
  auto bwd = dijkstra(g, adj, dest, weight, true);

  auto edge_cost = [&](const RoadEdge& e) {
    return weight == RouteWeight::distance ? e.length_m
                                           : e.length_m / (e.speed_limit_kmh / 3.6);
  };

  // Walk tight edges greedily, always taking the smallest next node id; the
  // (cost, hops) labels on both sides pin the result to the unique optimal,
  // fewest-edge, lexicographically smallest path.
  std::vector<NodeId> path{start};
  NodeId cur = start;
  int used_hops = 0;
  double used_cost = 0.0;
  while (cur != dest) {
    const NodeId* pick = nullptr;
    double pick_cost = 0.0;
    for (size_t ei : adj[cur]) {
      const RoadEdge& e = g.edges[ei];
      auto bi = bwd.find(e.to);
      if (bi == bwd.end()) continue;
      double c = used_cost + edge_cost(e) + bi->second.cost;
      int h = used_hops + 1 + bi->second.hops;
      if (tight(c, total_cost) && h == total_hops) {
        if (pick == nullptr || e.to < *pick) {
          pick = &e.to;
          pick_cost = edge_cost(e);
        }
      }
    }
    if (pick == nullptr) throw Error("route reconstruction failed");
    used_cost += pick_cost;
    used_hops += 1;
    cur = *pick;
    path.push_back(cur);
    if (used_hops > total_hops) throw Error("route reconstruction overran");
  }
  return make_route(g, path);
}

std::string RouteMatrix::to_csv() const {
  std::string out;
  out.reserve(points.size() * 28);
  for (const auto& p : points) out += strf("%.9f,%.9f\n", p.x, p.y);
  return out;
}

RouteMatrix RouteMatrix::from_csv(const std::string& text) {
  RouteMatrix m;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    double x = 0.0, y = 0.0;
    if (std::sscanf(line.c_str(), "%lf,%lf", &x, &y) != 2)
      throw Error(strf("bad route matrix row '%s'", line.c_str()));
    m.points.push_back({x, y});
  }
  if (static_cast<int>(m.points.size()) != kRows)
    throw Error(strf("route matrix has %zu rows, expected %d", m.points.size(), kRows));
  return m;
}

std::vector<GeoPoint> RouteMatrix::to_geo(const LocalProjection& proj) const {
  std::vector<GeoPoint> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(proj.to_geo(p));
  return out;
}

RouteMatrix resample_route(const PlannedRoute& r, double from_s, double ahead_m,
                           double stride_m) {
  if (r.xy.size() < 4) throw DegenerateRouteError("route polyline has fewer than 4 vertices");
  SmoothedPath path(r.xy);
  RouteMatrix m;
  m.stride_m = stride_m;
  m.points.reserve(RouteMatrix::kRows);
  int rows = static_cast<int>(std::round(ahead_m / stride_m));
  rows = std::max(rows, 1);

  double u = path.param_at_arc(0.0, std::max(from_s, 0.0));
  Vec2 p = path.eval(u);
  m.points.push_back(p);
  bool clamped = u >= path.param_length();
  for (int k = 1; k < rows; ++k) {
    if (!clamped) {
      double next = path.param_at_arc(u, stride_m);
      if (next >= path.param_length()) clamped = true;
      u = next;
      p = path.eval(u);
    }
    m.points.push_back(p);
  }
  return m;
}

}  // namespace drivesim::geo
