#include "drivesim/sim_world.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <utility>

#include "json.hpp"

#include "drivesim/can_codec.hpp"
#include "drivesim/map_match.hpp"

namespace drivesim::sim {

namespace {

using nlohmann::ordered_json;

double wrap_angle(double a) { return std::atan2(std::sin(a), std::cos(a)); }
double kmh_to_ms(double v) { return v / 3.6; }

// Shared by the simulation loop and the control replay so the two integrate
// identically.
void step_bicycle(Vec2& pos, double& heading, double& v_ms, double steer_deg,
                  double accel, double dt, const DriverParams& dp) {
  v_ms = clamp(v_ms + accel * dt, 0.0, kmh_to_ms(can::kSpeedMaxKmh));
  double yaw_rate = -(v_ms / dp.wheelbase_m) * std::tan(deg2rad(steer_deg / dp.steer_ratio));
  heading = wrap_angle(heading + yaw_rate * dt);
  pos = pos + Vec2{std::cos(heading), std::sin(heading)} * (v_ms * dt);
}

std::map<geo::NodeId, std::vector<geo::NodeId>> neighbor_map(const geo::RoadGraph& g) {
  std::map<geo::NodeId, std::set<geo::NodeId>> acc;
  for (const auto& e : g.edges) {
    acc[e.from].insert(e.to);
    acc[e.to].insert(e.from);
  }
  std::map<geo::NodeId, std::vector<geo::NodeId>> out;
  for (auto& [id, s] : acc) out[id] = std::vector<geo::NodeId>(s.begin(), s.end());
  return out;
}

struct NearMatch {
  double s = 0.0;
  double dist = 1e30;
};

NearMatch project_near(const std::vector<Vec2>& pts, const std::vector<double>& cum,
                       size_t j0, size_t span, Vec2 p) {
  NearMatch best;
  size_t j1 = std::min(pts.size() - 1, j0 + span);
  for (size_t k = j0; k < j1; ++k) {
    double t01 = 0.0;
    double d = point_segment_distance(p, pts[k], pts[k + 1], &t01);
    if (d < best.dist) best = {cum[k] + t01 * (cum[k + 1] - cum[k]), d};
  }
  return best;
}

}  // namespace

Vec2 Agent::position_at(double t) const {
  if (phases.empty() || t < phases.front().t0) return pos;
  size_t i = 0;
  while (i + 1 < phases.size() && phases[i + 1].t0 <= t) ++i;
  return phases[i].p0 + phases[i].vel * (t - phases[i].t0);
}

AgentPose Agent::pose_at(double t) const {
  return {kind == Kind::vehicle ? 0 : 1, position_at(t), heading, length, width, height};
}

Vec2 World::node_xy(const geo::NodeId& id) const { return proj.to_local(graph.node(id)); }

void World::rebuild_segs() {
  segs.clear();
  for (const auto& e : graph.edges) {
    if (e.from >= e.to) continue;  // one segment per undirected street
    segs.push_back({node_xy(e.from), node_xy(e.to), params.lane_width_m, e.road_class});
  }
}

std::string World::to_json() const {
  ordered_json j;
  j["version"] = 1;
  j["anchor"] = {{"lat", anchor.lat}, {"lon", anchor.lon}};
  j["seed"] = rng_seed;
  j["params"] = {{"n_intersections", params.n_intersections},
                 {"pedestrian_density", params.pedestrian_density},
                 {"road_mix", params.road_mix},
                 {"lane_width_m", params.lane_width_m},
                 {"block_m", params.block_m},
                 {"lane_markings", params.lane_markings},
                 {"corner_buildings", params.corner_buildings}};
  j["buildings"] = ordered_json::array();
  for (const auto& b : buildings)
    j["buildings"].push_back({b.x0, b.y0, b.x1, b.y1, b.height});
  j["agents"] = ordered_json::array();
  for (const auto& a : agents) {
    ordered_json ja = {{"kind", a.kind == Agent::Kind::vehicle ? "vehicle" : "pedestrian"},
                       {"x", a.pos.x},
                       {"y", a.pos.y},
                       {"heading", a.heading},
                       {"length", a.length},
                       {"width", a.width},
                       {"height", a.height},
                       {"phases", ordered_json::array()}};
    for (const auto& ph : a.phases)
      ja["phases"].push_back({ph.t0, ph.p0.x, ph.p0.y, ph.vel.x, ph.vel.y});
    j["agents"].push_back(std::move(ja));
  }
  return j.dump(2) + "\n";
}

World generate_world(uint64_t seed, const WorldParams& params) {
  if (params.n_intersections < 0 || params.n_intersections > 1024)
    throw InfeasibleParamsError(strf("n_intersections %d outside [0, 1024]",
                                     params.n_intersections));
  if (params.pedestrian_density < 0.0 || params.pedestrian_density > 10.0)
    throw InfeasibleParamsError("pedestrian_density outside [0, 10]");
  if (params.road_mix < 0.0 || params.road_mix > 1.0)
    throw InfeasibleParamsError("road_mix outside [0, 1]");
  if (params.lane_width_m < 2.5 || params.lane_width_m > 6.0)
    throw InfeasibleParamsError("lane_width_m outside [2.5, 6]");
  if (params.block_m < 30.0 || params.block_m > 500.0)
    throw InfeasibleParamsError("block_m outside [30, 500]");

  World w;
  w.anchor = {47.4, 8.5};
  w.proj = geo::LocalProjection(w.anchor);
  w.params = params;
  w.rng_seed = seed;

  Rng base(seed);
  Rng streets = base.derive(11);
  Rng peds = base.derive(12);

  auto add_node = [&](const geo::NodeId& id, Vec2 p) { w.graph.nodes[id] = w.proj.to_geo(p); };
  auto add_street = [&](const geo::NodeId& a, const geo::NodeId& b, geo::RoadClass rc) {
    double len = geo::geodesic_distance(w.graph.node(a), w.graph.node(b));
    double lim = geo::default_speed_limit(rc);
    w.graph.edges.push_back({a, b, len, lim, rc});
    w.graph.edges.push_back({b, a, len, lim, rc});
  };

  if (params.n_intersections == 0) {
    // A single loop road: twelve nodes on a circle, every junction degree 2.
    const int n = 12;
    double radius = 2.0 * params.block_m;
    for (int i = 0; i < n; ++i) {
      double a = 2.0 * kPi * i / n;
      add_node(strf("r%02d", i), {radius * std::cos(a), radius * std::sin(a)});
    }
    for (int i = 0; i < n; ++i)
      add_street(strf("r%02d", i), strf("r%02d", (i + 1) % n), geo::RoadClass::urban);
  } else {
    int k = int(std::ceil(std::sqrt(double(params.n_intersections)))) + 2;
    for (int r = 0; r < k; ++r)
      for (int c = 0; c < k; ++c)
        add_node(strf("n%02d_%02d", r, c), {c * params.block_m, r * params.block_m});

    // Whole streets share a class so a residential street stays slow end to end.
    std::vector<geo::RoadClass> row_class(k), col_class(k);
    for (int r = 0; r < k; ++r)
      row_class[r] = streets.uniform() < params.road_mix ? geo::RoadClass::residential
                                                         : geo::RoadClass::urban;
    for (int c = 0; c < k; ++c)
      col_class[c] = streets.uniform() < params.road_mix ? geo::RoadClass::residential
                                                         : geo::RoadClass::urban;

    for (int r = 0; r < k; ++r)
      for (int c = 0; c + 1 < k; ++c)
        add_street(strf("n%02d_%02d", r, c), strf("n%02d_%02d", r, c + 1), row_class[r]);
    for (int c = 0; c < k; ++c)
      for (int r = 0; r + 1 < k; ++r)
        add_street(strf("n%02d_%02d", r, c), strf("n%02d_%02d", r + 1, c), col_class[c]);

    if (params.corner_buildings) {
      // Full-block buildings, inset so the faces sit right behind the
      // sidewalks; one extra ring outside the grid closes the street canyons.
      double inset = params.lane_width_m + 1.5;
      for (int r = -1; r < k; ++r)
        for (int c = -1; c < k; ++c) {
          Building b;
          b.x0 = c * params.block_m + inset;
          b.y0 = r * params.block_m + inset;
          b.x1 = (c + 1) * params.block_m - inset;
          b.y1 = (r + 1) * params.block_m - inset;
          b.height = 7.0;
          if (b.x1 - b.x0 > 2.0 && b.y1 - b.y0 > 2.0) w.buildings.push_back(b);
        }
    }
  }

  if (params.pedestrian_density > 0.0) {
    for (const auto& e : w.graph.edges) {
      if (e.from >= e.to) continue;
      double expected = e.length_m / 100.0 * params.pedestrian_density;
      int count = int(expected);
      if (peds.uniform() < expected - count) ++count;
      Vec2 a = w.node_xy(e.from), b = w.node_xy(e.to);
      Vec2 dir = (b - a).normalized();
      Vec2 left = dir.rotated(kPi / 2.0);
      for (int i = 0; i < count; ++i) {
        double u = peds.uniform(0.15, 0.85);
        double side = peds.uniform() < 0.5 ? 1.0 : -1.0;
        Agent ped;
        ped.kind = Agent::Kind::pedestrian;
        ped.pos = a + dir * (u * e.length_m) + left * (side * (params.lane_width_m + 1.2));
        Vec2 facing = left * -side;
        ped.heading = std::atan2(facing.y, facing.x);
        ped.length = 0.5;
        ped.width = 0.5;
        ped.height = 1.75;
        w.agents.push_back(ped);
      }
    }
  }

  w.rebuild_segs();
  return w;
}

World world_from_graph(const geo::RoadGraph& g, const WorldParams& params) {
  if (g.nodes.empty()) throw InfeasibleParamsError("graph has no nodes");
  World w;
  w.graph = g;
  w.anchor = g.nodes.begin()->second;
  w.proj = geo::LocalProjection(w.anchor);
  w.params = params;
  w.rebuild_segs();
  return w;
}

World load_world(const std::string& graph_json, const std::string& world_json) {
  World w;
  w.graph = geo::load_graph(graph_json);
  try {
    auto j = nlohmann::json::parse(world_json);
    w.anchor = {j.at("anchor").at("lat").get<double>(), j.at("anchor").at("lon").get<double>()};
    w.rng_seed = j.at("seed").get<uint64_t>();
    const auto& p = j.at("params");
    w.params.n_intersections = p.at("n_intersections").get<int>();
    w.params.pedestrian_density = p.at("pedestrian_density").get<double>();
    w.params.road_mix = p.at("road_mix").get<double>();
    w.params.lane_width_m = p.at("lane_width_m").get<double>();
    w.params.block_m = p.at("block_m").get<double>();
    w.params.lane_markings = p.at("lane_markings").get<bool>();
    w.params.corner_buildings = p.at("corner_buildings").get<bool>();
    for (const auto& jb : j.at("buildings"))
      w.buildings.push_back({jb.at(0).get<double>(), jb.at(1).get<double>(),
                             jb.at(2).get<double>(), jb.at(3).get<double>(),
                             jb.at(4).get<double>()});
    for (const auto& ja : j.at("agents")) {
      Agent a;
      std::string kind = ja.at("kind").get<std::string>();
      if (kind == "vehicle")
        a.kind = Agent::Kind::vehicle;
      else if (kind == "pedestrian")
        a.kind = Agent::Kind::pedestrian;
      else
        throw WorldFormatError(strf("unknown agent kind '%s'", kind.c_str()));
      a.pos = {ja.at("x").get<double>(), ja.at("y").get<double>()};
      a.heading = ja.at("heading").get<double>();
      a.length = ja.at("length").get<double>();
      a.width = ja.at("width").get<double>();
      a.height = ja.at("height").get<double>();
      for (const auto& jp : ja.at("phases"))
        a.phases.push_back({jp.at(0).get<double>(),
                            {jp.at(1).get<double>(), jp.at(2).get<double>()},
                            {jp.at(3).get<double>(), jp.at(4).get<double>()}});
      w.agents.push_back(std::move(a));
    }
  } catch (const nlohmann::json::exception& e) {
    throw WorldFormatError(strf("world json: %s", e.what()));
  }
  w.proj = geo::LocalProjection(w.anchor);
  w.rebuild_segs();
  return w;
}

geo::PlannedRoute random_walk_route(const World& w, Rng& rng, int min_junctions) {
  auto deg = w.graph.undirected_degree();
  auto nbrs = neighbor_map(w.graph);
  std::vector<geo::NodeId> ids;
  for (const auto& [id, _] : w.graph.nodes) ids.push_back(id);

  int quota = min_junctions > 0 ? min_junctions : 1 << 30;
  for (int attempt = 0; attempt < 500; ++attempt) {
    geo::NodeId start = ids[rng.uniform_int(ids.size())];
    std::vector<geo::NodeId> path{start};
    std::set<geo::NodeId> visited{start};
    int junctions = 0;
    while ((int)path.size() < 400 && junctions < quota) {
      const auto& cur = path.back();
      std::vector<geo::NodeId> options;
      for (const auto& nb : nbrs[cur])
        if (!visited.count(nb)) options.push_back(nb);
      if (options.empty()) break;
      const auto& next = options[rng.uniform_int(options.size())];
      if (path.size() >= 2 && deg.at(cur) >= 3) ++junctions;  // cur just became interior
      path.push_back(next);
      visited.insert(next);
    }
    if (junctions >= min_junctions && path.size() >= 3) return geo::make_route(w.graph, path);
  }
  throw InfeasibleParamsError(
      strf("random walk found no route with %d junction visits", min_junctions));
}

std::vector<JunctionVisit> junction_visits(const World& w, const geo::PlannedRoute& r) {
  auto nbrs = neighbor_map(w.graph);
  std::vector<JunctionVisit> out;
  for (size_t i = 1; i + 1 < r.node_path.size(); ++i) {
    Vec2 p_prev = w.node_xy(r.node_path[i - 1]);
    Vec2 p_cur = w.node_xy(r.node_path[i]);
    Vec2 p_next = w.node_xy(r.node_path[i + 1]);
    Vec2 entry = (p_cur - p_prev).normalized();
    Vec2 exit = (p_next - p_cur).normalized();

    JunctionVisit v;
    v.node = r.node_path[i];
    v.pos = p_cur;
    v.s_node = r.cumulative_s[i];
    v.turn_deg = -rad2deg(std::atan2(entry.cross(exit), entry.dot(exit)));
    for (const auto& nb : nbrs[v.node]) {
      if (nb == r.node_path[i - 1]) continue;
      ++v.n_options;
      Vec2 dir = (w.node_xy(nb) - p_cur).normalized();
      double ang = rad2deg(std::atan2(entry.cross(dir), entry.dot(dir)));
      if (ang > 25.0) v.had_left = true;
      if (ang < -25.0) v.had_right = true;
    }
    out.push_back(v);
  }
  return out;
}

void place_cross_traffic(World& w, const geo::PlannedRoute& r,
                         std::vector<JunctionVisit>& visits, Rng& rng,
                         double blocked_prob) {
  std::set<std::pair<geo::NodeId, geo::NodeId>> on_route;
  for (size_t i = 0; i + 1 < r.node_path.size(); ++i)
    on_route.insert({std::min(r.node_path[i], r.node_path[i + 1]),
                     std::max(r.node_path[i], r.node_path[i + 1])});
  auto nbrs = neighbor_map(w.graph);

  for (size_t i = 0; i < visits.size(); ++i) {
    auto& v = visits[i];
    double draw = rng.uniform();  // one draw per visit keeps placement stable
    if (v.n_options < 2 || draw >= blocked_prob) continue;

    Vec2 entry = (v.pos - w.node_xy(r.node_path[i])).normalized();
    const geo::NodeId* best = nullptr;
    double best_ang = 0.0;
    for (const auto& nb : nbrs[v.node]) {
      if (nb == r.node_path[i] || nb == r.node_path[i + 2]) continue;
      if (on_route.count({std::min(v.node, nb), std::max(v.node, nb)})) continue;
      Vec2 dir = (w.node_xy(nb) - v.pos).normalized();
      double ang = rad2deg(std::atan2(entry.cross(dir), entry.dot(dir)));
      if (std::fabs(ang) < 50.0 || std::fabs(ang) > 130.0) continue;
      // Prefer the arm to the right so the waiting car reads as real cross
      // traffic with priority.
      if (!best || (ang < 0.0 && best_ang > 0.0)) {
        best = &nb;
        best_ang = ang;
      }
    }
    if (!best) continue;

    Vec2 dir = (w.node_xy(*best) - v.pos).normalized();
    Agent car;
    car.kind = Agent::Kind::vehicle;
    car.pos = v.pos + dir * 14.0 + dir.rotated(kPi / 2.0) * (w.params.lane_width_m / 2.0);
    Vec2 facing = dir * -1.0;
    car.heading = std::atan2(facing.y, facing.x);
    w.agents.push_back(car);
    v.blocked = true;
  }
}

EgoState Episode::state_at(double t) const {
  const auto& tr = track;
  if (tr.empty()) return {};
  if (t <= tr.front().t)
    return {tr.front().pos, tr.front().heading, tr.front().speed_kmh, tr.front().steering_deg};
  if (t >= tr.back().t)
    return {tr.back().pos, tr.back().heading, tr.back().speed_kmh, tr.back().steering_deg};
  size_t hi = std::lower_bound(tr.begin(), tr.end(), t,
                               [](const EgoTrackRow& r, double x) { return r.t < x; }) -
              tr.begin();
  const auto& a = tr[hi - 1];
  const auto& b = tr[hi];
  double u = (t - a.t) / (b.t - a.t);
  EgoState s;
  s.pos = a.pos + (b.pos - a.pos) * u;
  s.heading = wrap_angle(a.heading + wrap_angle(b.heading - a.heading) * u);
  s.speed_kmh = a.speed_kmh + (b.speed_kmh - a.speed_kmh) * u;
  s.steering_deg = a.steering_deg + (b.steering_deg - a.steering_deg) * u;
  return s;
}

std::vector<AgentPose> Episode::agent_poses(double t) const {
  std::vector<AgentPose> out;
  out.reserve(world.agents.size());
  for (const auto& a : world.agents) out.push_back(a.pose_at(t));
  return out;
}

Episode drive_episode(const World& w, const geo::PlannedRoute& route,
                      const DriverParams& driver, const SimConfig& sim, uint64_t seed,
                      const std::vector<JunctionVisit>* visits) {
  Episode ep;
  ep.world = w;
  ep.route = route;
  ep.seed = seed;
  ep.sim = sim;
  ep.driver = driver;
  ep.junctions = visits ? *visits : junction_visits(w, route);

  ep.route_xy.resize(route.polyline.size());
  for (size_t i = 0; i < route.polyline.size(); ++i)
    ep.route_xy[i] = w.proj.to_local(route.polyline[i]);
  const auto& pts = ep.route_xy;
  const auto& cum = route.cumulative_s;
  const double route_len = route.length_m();

  auto point_at = [&](double s) -> Vec2 {
    s = clamp(s, 0.0, route_len);
    size_t i = 1;
    while (i + 1 < cum.size() && cum[i] < s) ++i;
    double u = (s - cum[i - 1]) / (cum[i] - cum[i - 1]);
    return pts[i - 1] + (pts[i] - pts[i - 1]) * u;
  };
  auto tangent_at = [&](double s) -> Vec2 {
    s = clamp(s, 0.0, route_len);
    size_t i = 1;
    while (i + 1 < cum.size() && cum[i] < s) ++i;
    return (pts[i] - pts[i - 1]).normalized();
  };
  // The driven line: the centerline offset to the right by lane_offset_m,
  // with mitered corners. Sweeping the raw normal around a hard corner makes
  // the offset point retreat toward the apex on inside turns, which reads as
  // a target drifting the wrong way and makes the pursuit counter-steer.
  std::vector<Vec2> opts(pts.size());
  {
    auto seg_normal = [&](size_t i) {
      Vec2 d = (pts[i + 1] - pts[i]).normalized();
      return Vec2{d.y, -d.x};
    };
    for (size_t i = 0; i < pts.size(); ++i) {
      Vec2 m;
      if (i == 0) {
        m = seg_normal(0);
      } else if (i + 1 == pts.size()) {
        m = seg_normal(i - 1);
      } else {
        Vec2 n1 = seg_normal(i - 1), n2 = seg_normal(i);
        Vec2 sum = n1 + n2;
        double len = sum.norm();
        if (len < 1e-6) {
          m = n1;
        } else {
          m = sum * (1.0 / len);
          m = m * (1.0 / std::max(m.dot(n1), 0.25));
        }
      }
      opts[i] = pts[i] + m * driver.lane_offset_m;
    }
  }
  std::vector<double> ocum(opts.size(), 0.0);
  for (size_t i = 1; i < opts.size(); ++i)
    ocum[i] = ocum[i - 1] + (opts[i] - opts[i - 1]).norm();
  auto opoint_at = [&](double os) -> Vec2 {
    os = clamp(os, 0.0, ocum.back());
    size_t i = 1;
    while (i + 1 < ocum.size() && ocum[i] < os) ++i;
    double u = (os - ocum[i - 1]) / std::max(ocum[i] - ocum[i - 1], 1e-9);
    return opts[i - 1] + (opts[i] - opts[i - 1]) * u;
  };

  // Speed limit per route segment, from the underlying edges.
  std::map<std::pair<geo::NodeId, geo::NodeId>, double> edge_limit;
  for (const auto& e : w.graph.edges) edge_limit[{e.from, e.to}] = e.speed_limit_kmh;
  std::vector<double> seg_limit(pts.size() - 1, 50.0);
  for (size_t i = 0; i + 1 < route.node_path.size(); ++i) {
    auto it = edge_limit.find({route.node_path[i], route.node_path[i + 1]});
    if (it != edge_limit.end()) seg_limit[i] = it->second;
  }

  // Ego spawn: just past the route start, in the right lane.
  double s = 2.0;
  Vec2 tan0 = tangent_at(s);
  Vec2 pos = opoint_at(s);
  double heading = std::atan2(tan0.y, tan0.x);
  double v = 0.0;
  double steer = 0.0;
  size_t j = 0;   // segment index on the centerline
  size_t oj = 0;  // segment index on the driven line
  double os = s;

  // Pedestrians never spawn on top of the ego.
  ep.world.agents.erase(
      std::remove_if(ep.world.agents.begin(), ep.world.agents.end(),
                     [&](const Agent& a) {
                       return a.kind == Agent::Kind::pedestrian &&
                              (a.pos - pos).norm() < 12.0;
                     }),
      ep.world.agents.end());

  enum class PedState { idle, crossing, done };
  std::vector<PedState> ped_state(ep.world.agents.size(), PedState::idle);
  std::vector<double> ped_end(ep.world.agents.size(), 0.0);

  const double stop_s = route_len - sim.end_margin_m;
  const double dt = sim.dt;
  const size_t max_steps = size_t(sim.max_duration_s / dt);
  double stall = 0.0;

  for (size_t step = 0;; ++step) {
    double t = step * dt;

    // Track the arc position around the current segment, on both lines.
    auto advance = [&](const std::vector<Vec2>& P, const std::vector<double>& C,
                       size_t& seg) -> double {
      while (true) {
        double t01 = 0.0;
        double d = point_segment_distance(pos, P[seg], P[seg + 1], &t01);
        if (seg + 2 < P.size()) {
          double t2 = 0.0;
          double d2 = point_segment_distance(pos, P[seg + 1], P[seg + 2], &t2);
          // move on after passing the segment end, or as soon as the next
          // segment is clearly nearer (the driven line cuts corners, so the
          // end perpendicular may never be crossed)
          if ((t01 >= 1.0 && d2 <= d + 0.01) || d2 + 0.25 < d) {
            ++seg;
            continue;
          }
        }
        return C[seg] + t01 * (C[seg + 1] - C[seg]);
      }
    };
    s = advance(pts, cum, j);
    os = advance(opts, ocum, oj);

    bool done = s >= stop_s || (s >= stop_s - 10.0 && v < 0.15) || step >= max_steps;
    if (done) {
      ep.track.push_back({t, pos, heading, v * 3.6, steer, 0.0});
      break;
    }

    // Speed target: current and upcoming limits, then the rule-based caps.
    double vt = kmh_to_ms(seg_limit[j]);
    auto cap_zone = [&](double cap_kmh, double z_lo, double z_hi) {
      double cap = kmh_to_ms(cap_kmh);
      if (s >= z_lo && s <= z_hi) {
        vt = std::min(vt, cap);
      } else if (s < z_lo) {
        // brake against the distance left after half a second of travel so
        // the controller lag does not push the entry speed over the cap
        double d = std::max(0.0, z_lo - s - 0.5 * v);
        vt = std::min(vt, std::sqrt(cap * cap + 2.0 * driver.brake_comfort * d));
      }
    };
    for (size_t k = j + 1; k < std::min(seg_limit.size(), j + 4); ++k)
      cap_zone(seg_limit[k], cum[k], cum[k + 1]);
    for (const auto& jv : ep.junctions) {
      if (jv.s_node < s - 40.0 || jv.s_node > s + 120.0) continue;
      if (std::fabs(jv.turn_deg) > 20.0)
        cap_zone(driver.turn_cap_kmh, jv.s_node - 12.0, jv.s_node + 8.0);
      if (jv.blocked) cap_zone(driver.yield_cap_kmh, jv.s_node - 22.0, jv.s_node + 6.0);
    }
    cap_zone(0.0, stop_s - 5.0, route_len + 1.0);

    // Pedestrians: trigger a crossing when the ego gets close, crawl while
    // anybody is on the carriageway ahead.
    for (size_t a = 0; a < ep.world.agents.size(); ++a) {
      auto& ag = ep.world.agents[a];
      if (ag.kind != Agent::Kind::pedestrian || ped_state[a] == PedState::done) continue;
      if (ped_state[a] == PedState::idle) {
        NearMatch nm = project_near(pts, cum, j, 6, ag.pos);
        if (nm.dist < w.params.lane_width_m + 3.0 && nm.s - s > 4.0 && nm.s - s < 28.0 &&
            v > 0.5) {
          Vec2 facing{std::cos(ag.heading), std::sin(ag.heading)};
          double cross_len = 2.0 * (w.params.lane_width_m + 1.2);
          double dur = cross_len / 1.25;
          ag.phases.push_back({t, ag.pos, facing * 1.25});
          ag.phases.push_back({t + dur, ag.pos + facing * cross_len, {0.0, 0.0}});
          ped_state[a] = PedState::crossing;
          ped_end[a] = t + dur;
        }
      }
      if (ped_state[a] == PedState::crossing) {
        if (t > ped_end[a]) {
          ped_state[a] = PedState::done;
          continue;
        }
        NearMatch nm = project_near(pts, cum, j, 6, ag.position_at(t));
        if (nm.dist < w.params.lane_width_m + 0.6 && nm.s - s > -1.0 && nm.s - s < 40.0)
          cap_zone(driver.ped_cap_kmh, nm.s - 7.0, nm.s);
      }
    }

    double accel = clamp(1.5 * (vt - v), -driver.brake_max, driver.accel_max);

    // Pure pursuit toward a point ahead on the driven line.
    double look = clamp(driver.lookahead_tv_s * v, driver.lookahead_min_m,
                        driver.lookahead_max_m);
    Vec2 target = opoint_at(os + look);
    Vec2 to_t = target - pos;
    double alpha = wrap_angle(std::atan2(to_t.y, to_t.x) - heading);
    double kappa = 2.0 * std::sin(alpha) / std::max(to_t.norm(), 1.0);
    double steer_target = clamp(-rad2deg(std::atan(driver.wheelbase_m * kappa)) *
                                    driver.steer_ratio,
                                -driver.max_steer_deg, driver.max_steer_deg);
    steer += clamp(steer_target - steer, -driver.steer_slew_dps * dt,
                   driver.steer_slew_dps * dt);

    if (v < 0.15 && s < stop_s - 10.0) {
      stall += dt;
      if (stall > driver.stall_timeout_s)
        throw RouteBlockedError(strf("ego stalled at s=%.1f m for %.0f s", s, stall));
    } else {
      stall = 0.0;
    }

    ep.track.push_back({t, pos, heading, v * 3.6, steer, accel});
    step_bicycle(pos, heading, v, steer, accel, dt, driver);
  }

  ep.duration_s = ep.track.back().t;

  // Emit the raw sensor streams on their own clocks. Every stream has a
  // random capture phase; the residual shift stands in for imperfect clock
  // synchronization and survives align().
  Rng base(seed);
  Rng gps_rng = base.derive(21);
  Rng imu_rng = base.derive(22);
  Rng resid_rng = base.derive(23);
  Rng phase_rng = base.derive(24);

  auto residual = [&](double period) {
    return (resid_rng.uniform() * 2.0 - 1.0) * sim.residual_jitter_frac * period;
  };
  double res_cam = residual(1.0 / sim.camera_fps);
  double res_can = residual(1.0 / sim.can_hz);
  double res_imu = residual(1.0 / sim.imu_hz);
  double res_planner = residual(1.0 / sim.planner_fps);

  double ph_cam = phase_rng.uniform() * (1.0 / sim.camera_fps);
  double ph_can_s = phase_rng.uniform() * (1.0 / sim.can_hz);
  double ph_can_v = phase_rng.uniform() * (1.0 / sim.can_hz);
  double ph_gps = phase_rng.uniform() * (1.0 / sim.gps_hz);
  double ph_imu = phase_rng.uniform() * (1.0 / sim.imu_hz);
  double ph_planner = phase_rng.uniform() * (1.0 / sim.planner_fps);

  using sync::SensorStream;
  using sync::StreamKind;
  using sync::StreamRecord;

  for (int c = 0; c < 4; ++c) {
    SensorStream cam;
    cam.kind = StreamKind(int(StreamKind::camera0) + c);
    cam.nominal_rate_hz = sim.camera_fps;
    cam.clock_offset_s = sim.offset_camera_s;
    ep.streams.streams.push_back(std::move(cam));
  }
  for (int m = 0;; ++m) {
    double tt = ph_cam + m / sim.camera_fps;
    if (tt > ep.duration_s) break;
    ep.cam_tick_t.push_back(tt);
    for (int c = 0; c < 4; ++c) {
      StreamRecord r;
      r.t = tt + res_cam - sim.offset_camera_s;
      r.ref = m;
      ep.streams.streams[c].records.push_back(r);
    }
  }

  SensorStream can_s;
  can_s.kind = StreamKind::can_steering;
  can_s.nominal_rate_hz = sim.can_hz;
  can_s.clock_offset_s = sim.offset_can_s;
  for (int m = 0;; ++m) {
    double tt = ph_can_s + m / sim.can_hz;
    if (tt > ep.duration_s) break;
    StreamRecord r;
    r.t = tt + res_can - sim.offset_can_s;
    r.v[0] = can::decode_steering(can::encode_steering(ep.state_at(tt).steering_deg));
    can_s.records.push_back(r);
  }
  ep.streams.streams.push_back(std::move(can_s));

  SensorStream can_v;
  can_v.kind = StreamKind::can_speed;
  can_v.nominal_rate_hz = sim.can_hz;
  can_v.clock_offset_s = sim.offset_can_s;
  for (int m = 0;; ++m) {
    double tt = ph_can_v + m / sim.can_hz;
    if (tt > ep.duration_s) break;
    StreamRecord r;
    r.t = tt + res_can - sim.offset_can_s;
    r.v[0] = can::decode_speed(can::encode_speed(ep.state_at(tt).speed_kmh));
    can_v.records.push_back(r);
  }
  ep.streams.streams.push_back(std::move(can_v));

  SensorStream gps;
  gps.kind = StreamKind::gps;
  gps.nominal_rate_hz = sim.gps_hz;
  gps.clock_offset_s = sim.offset_gps_s;
  std::vector<geo::TimedGeoPoint> fixes;
  for (int m = 0;; ++m) {
    double tt = ph_gps + m / sim.gps_hz;
    if (tt > ep.duration_s) break;
    EgoState st = ep.state_at(tt);
    Vec2 noisy = st.pos + Vec2{gps_rng.normal() * sim.gps_sigma_m,
                               gps_rng.normal() * sim.gps_sigma_m};
    geo::GeoPoint g = w.proj.to_geo(noisy);
    StreamRecord r;
    r.t = tt - sim.offset_gps_s;  // the GPS clock is the reference
    r.v[0] = g.lat;
    r.v[1] = g.lon;
    gps.records.push_back(r);
    fixes.push_back({tt, g});
  }
  ep.streams.streams.push_back(std::move(gps));

  SensorStream imu;
  imu.kind = StreamKind::imu;
  imu.nominal_rate_hz = sim.imu_hz;
  imu.clock_offset_s = sim.offset_imu_s;
  for (int m = 0;; ++m) {
    double tt = ph_imu + m / sim.imu_hz;
    if (tt > ep.duration_s) break;
    EgoState st = ep.state_at(tt);
    size_t row = std::min(size_t(tt / dt), ep.track.size() - 1);
    double v_ms = st.speed_kmh / 3.6;
    double yaw_rate = -(v_ms / driver.wheelbase_m) *
                      std::tan(deg2rad(st.steering_deg / driver.steer_ratio));
    StreamRecord r;
    r.t = tt + res_imu - sim.offset_imu_s;
    r.v[0] = ep.track[row].accel + imu_rng.normal() * 0.02;
    r.v[1] = v_ms * yaw_rate + imu_rng.normal() * 0.02;
    r.v[2] = 9.81;
    r.v[5] = yaw_rate + imu_rng.normal() * 0.002;
    imu.records.push_back(r);
  }
  ep.streams.streams.push_back(std::move(imu));

  SensorStream planner;
  planner.kind = StreamKind::planner;
  planner.nominal_rate_hz = sim.planner_fps;
  planner.clock_offset_s = sim.offset_planner_s;
  geo::RouteMatcher matcher(ep.route);
  size_t fix_hi = 0;
  for (int m = 0;; ++m) {
    double tt = ph_planner + m / sim.planner_fps;
    if (tt > ep.duration_s) break;
    while (fix_hi < fixes.size() && fixes[fix_hi].t <= tt) ++fix_hi;
    if (fix_hi < 2) continue;
    size_t lo = fix_hi > 10 ? fix_hi - 10 : 0;
    std::vector<geo::TimedGeoPoint> window(fixes.begin() + lo, fixes.begin() + fix_hi);
    geo::RoutePosition rp = matcher.match(window);
    StreamRecord r;
    r.t = tt + res_planner - sim.offset_planner_s;
    r.ref = int(ep.planner_tick_t.size());
    r.v[0] = rp.s;
    r.v[1] = rp.lateral_offset;
    r.v[2] = rp.confidence;
    planner.records.push_back(r);
    ep.planner_tick_t.push_back(tt);
    ep.planner_tick_s.push_back(rp.s);
  }
  ep.streams.streams.push_back(std::move(planner));

  return ep;
}

double replay_controls_error(const Episode& ep) {
  if (ep.track.size() < 2) return 0.0;
  Vec2 pos = ep.track.front().pos;
  double heading = ep.track.front().heading;
  double v = ep.track.front().speed_kmh / 3.6;
  double worst = 0.0;
  for (size_t i = 0; i + 1 < ep.track.size(); ++i) {
    double dt = ep.track[i + 1].t - ep.track[i].t;
    step_bicycle(pos, heading, v, ep.track[i].steering_deg, ep.track[i].accel, dt,
                 ep.driver);
    worst = std::max(worst, (pos - ep.track[i + 1].pos).norm());
  }
  return worst;
}

}  // namespace drivesim::sim
