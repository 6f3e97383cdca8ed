#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "drivesim/common.hpp"
#include "drivesim/geo_route.hpp"
#include "drivesim/render.hpp"
#include "drivesim/sensor_sync.hpp"

namespace drivesim::sim {

class InfeasibleParamsError : public Error {
 public:
  using Error::Error;
};
class RouteBlockedError : public Error {
 public:
  using Error::Error;
};
class WorldFormatError : public Error {
 public:
  using Error::Error;
};

struct EgoState {
  Vec2 pos;                  // world local frame, meters
  double heading = 0.0;      // radians, CCW from +x
  double speed_kmh = 0.0;    // [0, 180]
  double steering_deg = 0.0; // steering wheel angle, right positive, [-720, 720]
};

struct Building {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // axis-aligned footprint, meters
  double height = 7.0;
};

/// Piecewise-linear motion segment; an agent holds p0 before t0 and moves at
/// vel until the next phase starts.
struct AgentPhase {
  double t0 = 0.0;
  Vec2 p0;
  Vec2 vel;
};

struct Agent {
  enum class Kind { vehicle, pedestrian };
  Kind kind = Kind::vehicle;
  Vec2 pos;                 // spawn position
  double heading = 0.0;
  double length = 4.4, width = 1.8, height = 1.5;
  std::vector<AgentPhase> phases;  // empty -> static

  Vec2 position_at(double t) const;
  AgentPose pose_at(double t) const;
};

struct WorldParams {
  int n_intersections = 9;
  double pedestrian_density = 0.0;  // pedestrians per 100 m of street
  double road_mix = 0.0;            // fraction of residential (30 km/h) streets
  double lane_width_m = 4.0;
  double block_m = 50.0;
  bool lane_markings = true;
  bool corner_buildings = true;
};

struct World {
  geo::RoadGraph graph;
  geo::GeoPoint anchor;          // local-frame origin
  geo::LocalProjection proj;
  WorldParams params;
  uint64_t rng_seed = 0;
  std::vector<Building> buildings;
  std::vector<Agent> agents;

  // Road segments in the local frame, derived from the graph.
  struct RoadSeg {
    Vec2 a, b;
    double half_width = 4.0;
    geo::RoadClass road_class = geo::RoadClass::urban;
  };
  std::vector<RoadSeg> segs;

  Vec2 node_xy(const geo::NodeId& id) const;
  void rebuild_segs();
  std::string to_json() const;  // props/agents/params; the graph serializes separately
};

/// Procedural city block world: a street grid with at least n_intersections
/// degree>=3 junctions (a single loop road when n_intersections is 0),
/// full-block buildings, and scripted pedestrians. Deterministic per seed.
World generate_world(uint64_t seed, const WorldParams& params);

/// Wrap an existing road graph (test fixtures, custom scenes).
World world_from_graph(const geo::RoadGraph& g, const WorldParams& params);

World load_world(const std::string& graph_json, const std::string& world_json);

/// Self-avoiding random walk over the graph with at least min_junctions
/// degree>=3 interior visits; turn choices are uniform over the available
/// non-reverse exits.
geo::PlannedRoute random_walk_route(const World& w, Rng& rng, int min_junctions);

/// One interior route vertex: the junction geometry the scripted driver and
/// the evaluation subsets both consume.
struct JunctionVisit {
  geo::NodeId node;
  Vec2 pos;              // world frame
  double s_node = 0.0;   // arc length along the route
  int n_options = 0;     // non-reverse exits at the junction
  bool had_left = false, had_right = false;
  double turn_deg = 0.0;  // signed route turn, right positive
  bool blocked = false;   // cross-traffic waiting on a side arm
};

std::vector<JunctionVisit> junction_visits(const World& w, const geo::PlannedRoute& r);

/// Park a waiting cross-traffic vehicle 14 m down a side arm for a random
/// subset of junction visits. Arms on the route never get agents. The
/// street canyon hides these vehicles from the front camera; only the side
/// cameras see them once the ego is within ~8 m of the junction.
void place_cross_traffic(World& w, const geo::PlannedRoute& r,
                         std::vector<JunctionVisit>& visits, Rng& rng,
                         double blocked_prob);

struct DriverParams {
  double wheelbase_m = 2.7;
  double steer_ratio = 15.0;        // wheel degrees per road-wheel degree
  double max_steer_deg = 720.0;
  double steer_slew_dps = 540.0;
  double lane_offset_m = 2.0;       // drive on the right half of the street
  double lookahead_tv_s = 0.9;
  double lookahead_min_m = 4.0, lookahead_max_m = 15.0;
  double accel_max = 2.5, brake_max = 4.5, brake_comfort = 2.2;  // m/s^2
  double turn_cap_kmh = 18.0;
  double yield_cap_kmh = 7.0;
  double ped_cap_kmh = 5.0;
  double stall_timeout_s = 20.0;
};

struct SimConfig {
  double dt = 0.01;
  double camera_fps = 10.0;
  double can_hz = 50.0;
  double gps_hz = 18.0;
  double imu_hz = 200.0;
  double planner_fps = 30.0;
  double gps_sigma_m = 0.8;
  double max_duration_s = 420.0;
  double end_margin_m = 30.0;   // stop this far before the route end
  // Known per-stream clock offsets (corrected by align()).
  double offset_camera_s = 0.0, offset_can_s = 0.0, offset_gps_s = 0.0,
         offset_imu_s = 0.0, offset_planner_s = 0.0;
  // Residual synchronization error: each stream keeps an unknown constant
  // shift drawn uniform within +/- residual_frac of its period.
  double residual_jitter_frac = 0.0;
};

struct EgoTrackRow {
  double t = 0.0;
  Vec2 pos;
  double heading = 0.0;
  double speed_kmh = 0.0;
  double steering_deg = 0.0;  // the lateral control (wheel angle)
  double accel = 0.0;         // the longitudinal control, m/s^2
};

struct Episode {
  World world;
  geo::PlannedRoute route;
  std::vector<Vec2> route_xy;  // route polyline in the world frame
  std::vector<JunctionVisit> junctions;
  std::vector<EgoTrackRow> track;      // one row per sim step
  sync::StreamSet streams;             // source-clock records
  std::vector<double> cam_tick_t;      // true capture times per camera tick
  std::vector<double> planner_tick_t;  // true times per planner tick
  std::vector<double> planner_tick_s;  // matched route position per tick
  double duration_s = 0.0;
  uint64_t seed = 0;
  SimConfig sim;
  DriverParams driver;

  EgoState state_at(double t) const;
  std::vector<AgentPose> agent_poses(double t) const;
};

/// Close the loop: pure-pursuit lateral control plus a rule-based speed
/// controller (limits, junction turn caps, yielding to waiting cross
/// traffic, stopping for crossing pedestrians) over the kinematic bicycle
/// model. Emits every raw sensor stream at its nominal rate.
Episode drive_episode(const World& w, const geo::PlannedRoute& route,
                      const DriverParams& driver, const SimConfig& sim,
                      uint64_t seed,
                      const std::vector<JunctionVisit>* visits = nullptr);

/// Re-integrate recorded controls through the bicycle model from the first
/// track row; returns the largest position error against the recorded track
/// (meters).
double replay_controls_error(const Episode& ep);

}  // namespace drivesim::sim
