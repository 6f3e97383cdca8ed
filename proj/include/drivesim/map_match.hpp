#pragma once

#include <optional>
#include <vector>

#include "drivesim/geo_route.hpp"

namespace drivesim::geo {

struct TimedGeoPoint {
  double t = 0.0;  // seconds, GPS clock
  GeoPoint p;
};

struct RoutePosition {
  double s = 0.0;              // meters along the route
  double lateral_offset = 0.0;  // meters, positive left of travel direction
  double confidence = 1.0;      // exp(-lateral^2 / (2 * 5m^2))
};

class OffRouteError : public Error {
 public:
  using Error::Error;
};

/// Localizes a vehicle on its planned route from recent GPS fixes.
///
/// Projection candidates for the newest fix are scored by the summed squared
/// distance of the whole window to the route near that candidate, then the
/// along-route positions of the window are fitted linearly in time to
/// suppress GPS noise at the newest fix. Matched s never regresses by more
/// than the back-step allowance.
class RouteMatcher {
 public:
  explicit RouteMatcher(const PlannedRoute& r, int window = 10);

  RoutePosition match(const std::vector<TimedGeoPoint>& past);
  std::optional<double> previous_s() const { return prev_s_; }

  static constexpr double kOffRouteM = 50.0;
  static constexpr double kBackstepM = 5.0;

 private:
  const PlannedRoute& route_;
  int window_;
  std::optional<double> prev_s_;
};

/// One-shot matching without episode state.
RoutePosition match_position(const PlannedRoute& r,
                             const std::vector<TimedGeoPoint>& past);

/// The 300 m look-ahead matrix at a matched position.
RouteMatrix route_ahead(const PlannedRoute& r, const RoutePosition& p);

}  // namespace drivesim::geo
