#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "drivesim/common.hpp"
#include "drivesim/geo_route.hpp"
#include "drivesim/map_match.hpp"

namespace drivesim::sim {

struct World;
struct EgoState;

struct Image {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> pixels;  // RGB, row-major, top row first

  Image() = default;
  Image(int w, int h) : width(w), height(h), pixels(size_t(w) * h * 3, 0) {}

  uint8_t* at(int x, int y) { return &pixels[(size_t(y) * width + x) * 3]; }
  const uint8_t* at(int x, int y) const { return &pixels[(size_t(y) * width + x) * 3]; }
  bool operator==(const Image& o) const {
    return width == o.width && height == o.height && pixels == o.pixels;
  }
};

std::string to_ppm(const Image& img);
Image from_ppm(const std::string& data);
void write_ppm(const std::string& path, const Image& img);
Image read_ppm(const std::string& path);

class ImageFormatError : public Error {
 public:
  using Error::Error;
};

struct RenderConfig {
  int width = 64;
  int height = 64;
  double fov_deg = 90.0;       // horizontal
  double camera_height_m = 1.4;
  double view_distance_m = 150.0;
  double map_ahead_m = 64.0;   // world meters from the chevron to the top edge
};

/// Pose of one dynamic agent at render time.
struct AgentPose {
  int kind = 0;  // 0 vehicle, 1 pedestrian
  Vec2 pos;
  double heading = 0.0;
  double length = 4.4, width = 1.8, height = 1.5;
};

/// Perspective view from a camera mounted on the ego vehicle. mount_deg is
/// measured counter-clockwise from the forward axis: 0 front, 90 left,
/// 180 rear, 270 right. Flat-shaded ray raster over the ground plane,
/// buildings, and agent boxes; deterministic for identical inputs.
Image render_camera(const World& w, const EgoState& ego, int mount_deg,
                    const RenderConfig& cfg = RenderConfig{},
                    const std::vector<AgentPose>& agents = {});

/// Top-down ego-centric planner map: heading-up, chevron anchored at
/// (width/2, 0.75*height), route ahead highlighted, other roads neutral.
/// Uses only the route and the matched position, so it can be regenerated
/// from planner records alone.
Image render_map_view(const World& w, const geo::PlannedRoute& r,
                      const geo::RoutePosition& p,
                      const RenderConfig& cfg = RenderConfig{});

}  // namespace drivesim::sim
