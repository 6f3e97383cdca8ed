#pragma once

#include <map>
#include <string>
#include <vector>

#include "drivesim/common.hpp"

namespace drivesim::geo {

struct GeoPoint {
  double lat = 0.0;  // degrees, [-90, 90]
  double lon = 0.0;  // degrees, [-180, 180]
};

/// Equirectangular projection about a reference point. Exact inverse, so
/// round-trips are lossless; adequate within a ~50 km tile.
class LocalProjection {
 public:
  LocalProjection() = default;
  explicit LocalProjection(GeoPoint ref);

  Vec2 to_local(GeoPoint p) const;
  GeoPoint to_geo(Vec2 xy) const;
  GeoPoint ref() const { return ref_; }

  static constexpr double kEarthRadiusM = 6371000.0;

 private:
  GeoPoint ref_{};
  double m_per_deg_lat_ = 0.0;
  double m_per_deg_lon_ = 0.0;
};

/// Planar distance between two nearby points (equirectangular about their
/// midpoint). Symmetric by construction; within 0.1% of great-circle
/// distance for separations under 10 km.
double geodesic_distance(GeoPoint a, GeoPoint b);

enum class RoadClass { highway, rural, urban, residential };

RoadClass road_class_from_string(const std::string& s);
const char* to_string(RoadClass c);

/// Default speed limit per road class, km/h.
double default_speed_limit(RoadClass c);

using NodeId = std::string;

struct RoadEdge {
  NodeId from;
  NodeId to;
  double length_m = 0.0;
  double speed_limit_kmh = 50.0;
  RoadClass road_class = RoadClass::urban;
};

struct RoadGraph {
  std::map<NodeId, GeoPoint> nodes;
  std::vector<RoadEdge> edges;

  bool has_node(const NodeId& id) const { return nodes.count(id) > 0; }
  const GeoPoint& node(const NodeId& id) const;
  /// Outgoing edge indices per node.
  std::map<NodeId, std::vector<size_t>> adjacency() const;
  /// Undirected degree (number of distinct neighbors) per node.
  std::map<NodeId, int> undirected_degree() const;
  bool weakly_connected() const;
  std::string to_json() const;
};

class GraphParseError : public Error {
 public:
  using Error::Error;
};
class DanglingReferenceError : public Error {
 public:
  using Error::Error;
};
class UnknownNodeError : public Error {
 public:
  using Error::Error;
};
class UnreachableError : public Error {
 public:
  using Error::Error;
};
class DegenerateRouteError : public Error {
 public:
  using Error::Error;
};

/// Parse a road-graph JSON document (top-level "nodes" and "edges").
/// Validates invariants: unique ids, positive edge lengths consistent with
/// endpoint geometry, no dangling references, weak connectivity.
RoadGraph load_graph(const std::string& json_text);
RoadGraph load_graph_file(const std::string& path);

struct PlannedRoute {
  std::vector<NodeId> node_path;
  std::vector<GeoPoint> polyline;
  std::vector<double> cumulative_s;  // meters, strictly increasing, starts at 0
  LocalProjection proj;              // anchored at first vertex
  std::vector<Vec2> xy;              // polyline in local frame

  double length_m() const { return cumulative_s.empty() ? 0.0 : cumulative_s.back(); }
  /// Interpolated point at arc length s (clamped to the route span).
  Vec2 point_at(double s) const;
  Vec2 tangent_at(double s) const;
};

/// Build a PlannedRoute from an explicit node path (used by the simulator's
/// random-walk routes and by tests).
PlannedRoute make_route(const RoadGraph& g, const std::vector<NodeId>& node_path);

enum class RouteWeight { distance, travel_time };

/// Exact shortest path. Ties broken by fewer edges, then by the
/// lexicographically smaller node-id sequence.
PlannedRoute plan_route(const RoadGraph& g, const NodeId& start, const NodeId& dest,
                        RouteWeight weight = RouteWeight::distance);

struct RouteMatrix {
  static constexpr int kRows = 300;
  std::vector<Vec2> points;  // local (x,y) meters in the route frame
  double stride_m = 1.0;

  /// CSV, 300 rows, 2 columns, 9 decimal places.
  std::string to_csv() const;
  static RouteMatrix from_csv(const std::string& text);
  /// Same rows converted back to (lat,lon) degrees via the route projection.
  std::vector<GeoPoint> to_geo(const LocalProjection& proj) const;
};

/// Arc-length resample of the smoothed route: 300 points spaced stride_m
/// apart, the first at arc length from_s along the fitted curve. When the
/// route ends early the final point is repeated.
RouteMatrix resample_route(const PlannedRoute& r, double from_s, double ahead_m = 300.0,
                           double stride_m = 1.0);

}  // namespace drivesim::geo
