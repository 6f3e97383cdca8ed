#include "drivesim/render.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "drivesim/sim_world.hpp"

namespace drivesim::sim {

std::string to_ppm(const Image& img) {
  std::string out = strf("P6\n%d %d\n255\n", img.width, img.height);
  out.append(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size());
  return out;
}

Image from_ppm(const std::string& data) {
  int w = 0, h = 0, maxv = 0, consumed = 0;
  if (std::sscanf(data.c_str(), "P6\n%d %d\n%d\n%n", &w, &h, &maxv, &consumed) < 3)
    throw ImageFormatError("not a binary PPM (P6) header");
  if (maxv != 255 || w <= 0 || h <= 0)
    throw ImageFormatError(strf("unsupported PPM geometry %dx%d maxval %d", w, h, maxv));
  size_t need = size_t(w) * h * 3;
  if (data.size() - size_t(consumed) < need)
    throw ImageFormatError("truncated PPM payload");
  Image img(w, h);
  std::copy_n(data.data() + consumed, need, reinterpret_cast<char*>(img.pixels.data()));
  return img;
}

void write_ppm(const std::string& path, const Image& img) { write_file(path, to_ppm(img)); }

Image read_ppm(const std::string& path) { return from_ppm(read_file(path)); }

namespace {

struct Rgb {
  double r, g, b;
};

constexpr Rgb kSkyTop{110, 160, 220};
constexpr Rgb kSkyHorizon{190, 205, 225};
constexpr Rgb kHaze{185, 200, 220};
constexpr Rgb kGrass{92, 120, 70};
constexpr Rgb kAsphalt{72, 72, 78};
constexpr Rgb kMarking{235, 235, 240};
constexpr Rgb kSidewalk{140, 138, 132};
constexpr Rgb kWall{158, 146, 134};
constexpr Rgb kRoof{105, 98, 92};
constexpr Rgb kVehicle{190, 40, 36};
constexpr Rgb kPedestrian{235, 190, 60};

Rgb mix(Rgb a, Rgb b, double w) {
  w = clamp(w, 0.0, 1.0);
  return {a.r + (b.r - a.r) * w, a.g + (b.g - a.g) * w, a.b + (b.b - a.b) * w};
}

Rgb shade(Rgb c, double k) { return {c.r * k, c.g * k, c.b * k}; }

void put(Image& img, int x, int y, Rgb c) {
  uint8_t* p = img.at(x, y);
  p[0] = uint8_t(clamp(c.r, 0.0, 255.0));
  p[1] = uint8_t(clamp(c.g, 0.0, 255.0));
  p[2] = uint8_t(clamp(c.b, 0.0, 255.0));
}

/// Vertical prism with an oriented rectangular footprint.
struct Prism {
  Vec2 center;
  Vec2 axis;  // unit vector along the length
  double half_len, half_wid, height;
  Rgb color;
  bool is_building;
};

struct PrismHit {
  double t = -1.0;
  Rgb color{};
};

// Ray (o2 + t*d2 in plan view, z = z0 + t*dz) against the prism. Returns the
// nearest hit distance and the flat-shaded face color.
bool hit_prism(const Prism& pr, Vec2 o2, Vec2 d2, double z0, double dz, PrismHit* out) {
  Vec2 rel = o2 - pr.center;
  Vec2 ax = pr.axis;
  Vec2 ay{-ax.y, ax.x};
  double ox = rel.dot(ax), oy = rel.dot(ay);
  double dx = d2.dot(ax), dy = d2.dot(ay);

  double t_in = -1e30, t_out = 1e30;
  int in_axis = 0;
  const double half[2] = {pr.half_len, pr.half_wid};
  const double o[2] = {ox, oy};
  const double d[2] = {dx, dy};
  for (int a = 0; a < 2; ++a) {
    if (std::fabs(d[a]) < 1e-12) {
      if (std::fabs(o[a]) > half[a]) return false;
      continue;
    }
    double t1 = (-half[a] - o[a]) / d[a];
    double t2 = (half[a] - o[a]) / d[a];
    if (t1 > t2) std::swap(t1, t2);
    if (t1 > t_in) {
      t_in = t1;
      in_axis = a;
    }
    t_out = std::min(t_out, t2);
  }
  if (t_in > t_out || t_out <= 1e-9) return false;

  if (t_in > 1e-9) {
    double z = z0 + t_in * dz;
    if (z >= 0.0 && z <= pr.height) {
      out->t = t_in;
      out->color = shade(pr.color, in_axis == 0 ? 1.0 : 0.85);
      return true;
    }
    if (z > pr.height && dz < 0.0) {
      double t_roof = (pr.height - z0) / dz;
      if (t_roof >= t_in && t_roof <= t_out) {
        out->t = t_roof;
        out->color = pr.is_building ? kRoof : shade(pr.color, 0.7);
        return true;
      }
    }
  }
  return false;
}

struct GroundQuery {
  const std::vector<World::RoadSeg>* segs;
  std::vector<size_t> near;
  bool markings;

  void cull(Vec2 center, double radius) {
    near.clear();
    for (size_t i = 0; i < segs->size(); ++i) {
      const auto& s = (*segs)[i];
      if (point_segment_distance(center, s.a, s.b) <= radius + s.half_width + 2.0)
        near.push_back(i);
    }
  }

  Rgb color_at(Vec2 p) const {
    double best_d = 1e30, best_s = 0.0, best_hw = 0.0;
    for (size_t i : near) {
      const auto& s = (*segs)[i];
      double t01 = 0.0;
      double d = point_segment_distance(p, s.a, s.b, &t01);
      if (d < best_d) {
        best_d = d;
        best_hw = s.half_width;
        best_s = t01 * (s.b - s.a).norm();
      }
    }
    if (best_d <= best_hw) {
      if (markings && best_d <= 0.15 && std::fmod(best_s, 4.0) < 2.0) return kMarking;
      return kAsphalt;
    }
    if (best_d <= best_hw + 1.5 && best_d < 1e29) return kSidewalk;
    return kGrass;
  }
};

}  // namespace

Image render_camera(const World& w, const EgoState& ego, int mount_deg,
                    const RenderConfig& cfg, const std::vector<AgentPose>& agents) {
  Image img(cfg.width, cfg.height);
  const double yaw = ego.heading + deg2rad(double(mount_deg));
  const Vec2 fwd{std::cos(yaw), std::sin(yaw)};
  const Vec2 right{fwd.y, -fwd.x};
  const double tan_h = std::tan(deg2rad(cfg.fov_deg / 2.0));
  const double tan_v = tan_h * double(cfg.height) / double(cfg.width);
  const double z0 = cfg.camera_height_m;

  GroundQuery ground{&w.segs, {}, w.params.lane_markings};
  ground.cull(ego.pos, cfg.view_distance_m);

  std::vector<Prism> prisms;
  for (const auto& b : w.buildings) {
    Vec2 c{(b.x0 + b.x1) / 2.0, (b.y0 + b.y1) / 2.0};
    if ((c - ego.pos).norm() >
        cfg.view_distance_m + std::max(b.x1 - b.x0, b.y1 - b.y0))
      continue;
    prisms.push_back({c, {1, 0}, (b.x1 - b.x0) / 2.0, (b.y1 - b.y0) / 2.0, b.height,
                      kWall, true});
  }
  for (const auto& a : agents) {
    if ((a.pos - ego.pos).norm() > cfg.view_distance_m) continue;
    Rgb col = a.kind == 0 ? kVehicle : kPedestrian;
    prisms.push_back({a.pos, {std::cos(a.heading), std::sin(a.heading)}, a.length / 2.0,
                      a.width / 2.0, a.height, col, false});
  }

  for (int py = 0; py < cfg.height; ++py) {
    double sy = (1.0 - 2.0 * (py + 0.5) / cfg.height) * tan_v;
    for (int px = 0; px < cfg.width; ++px) {
      double sx = (2.0 * (px + 0.5) / cfg.width - 1.0) * tan_h;
      Vec2 d2 = fwd + right * sx;
      double dz = sy;

      double ground_t = dz < 0.0 ? z0 / -dz : 1e30;
      PrismHit best;
      best.t = 1e30;
      bool hit_box = false;
      PrismHit h;
      for (const auto& pr : prisms) {
        if (hit_prism(pr, ego.pos, d2, z0, dz, &h) && h.t < best.t && h.t < ground_t) {
          best = h;
          hit_box = true;
        }
      }

      Rgb c;
      double dist;
      if (hit_box) {
        c = best.color;
        dist = best.t * d2.norm();
      } else if (dz < 0.0) {
        dist = ground_t * d2.norm();
        c = dist > cfg.view_distance_m ? kHaze : ground.color_at(ego.pos + d2 * ground_t);
      } else {
        double up = clamp(sy / tan_v, 0.0, 1.0);
        put(img, px, py, mix(kSkyHorizon, kSkyTop, up));
        continue;
      }
      put(img, px, py, mix(c, kHaze, dist / cfg.view_distance_m));
    }
  }
  return img;
}

Image render_map_view(const World& w, const geo::PlannedRoute& r,
                      const geo::RoutePosition& p, const RenderConfig& cfg) {
  Image img(cfg.width, cfg.height);
  const Rgb bg{34, 36, 40}, road{98, 100, 104}, route_col{70, 210, 90},
      chevron{245, 245, 245};

  // Route polyline in the world frame.
  std::vector<Vec2> rxy(r.polyline.size());
  for (size_t i = 0; i < r.polyline.size(); ++i) rxy[i] = w.proj.to_local(r.polyline[i]);

  auto point_w = [&](double s) -> Vec2 {
    s = clamp(s, 0.0, r.length_m());
    size_t i = 1;
    while (i + 1 < r.cumulative_s.size() && r.cumulative_s[i] < s) ++i;
    double s0 = r.cumulative_s[i - 1], s1 = r.cumulative_s[i];
    double u = s1 > s0 ? (s - s0) / (s1 - s0) : 0.0;
    return rxy[i - 1] + (rxy[i] - rxy[i - 1]) * u;
  };

  Vec2 center = point_w(p.s);
  Vec2 ahead = point_w(std::min(p.s + 2.0, r.length_m()));
  Vec2 up = (ahead - center).norm() > 1e-6 ? (ahead - center).normalized() : Vec2{0, 1};
  Vec2 right{up.y, -up.x};

  const double cx = cfg.width / 2.0, cy = 0.75 * cfg.height;
  const double mpp = cfg.map_ahead_m / (0.75 * cfg.height);
  const double span = cfg.map_ahead_m * 1.8;

  GroundQuery roads{&w.segs, {}, false};
  roads.cull(center, span);

  // Route segments near the window, only from slightly behind the match.
  double s_lo = std::max(0.0, p.s - 12.0);
  std::vector<std::pair<Vec2, Vec2>> route_segs;
  for (size_t i = 0; i + 1 < rxy.size(); ++i) {
    if (r.cumulative_s[i + 1] < s_lo || r.cumulative_s[i] > p.s + span) continue;
    Vec2 a = rxy[i], b = rxy[i + 1];
    if (r.cumulative_s[i] < s_lo) {
      double u = (s_lo - r.cumulative_s[i]) / (r.cumulative_s[i + 1] - r.cumulative_s[i]);
      a = a + (b - a) * u;
    }
    route_segs.emplace_back(a, b);
  }

  auto in_chevron = [&](double px, double py) {
    double scale = cfg.height / 64.0;
    Vec2 tip{cx, cy - 4.5 * scale}, bl{cx - 3.0 * scale, cy + 3.5 * scale},
        br{cx + 3.0 * scale, cy + 3.5 * scale};
    Vec2 q{px, py};
    auto side = [](Vec2 a, Vec2 b, Vec2 c) { return (b - a).cross(c - a); };
    double d1 = side(tip, bl, q), d2 = side(bl, br, q), d3 = side(br, tip, q);
    bool neg = d1 < 0 || d2 < 0 || d3 < 0, pos = d1 > 0 || d2 > 0 || d3 > 0;
    return !(neg && pos);
  };

  for (int py = 0; py < cfg.height; ++py) {
    for (int px = 0; px < cfg.width; ++px) {
      double ox = (px + 0.5 - cx) * mpp;
      double oy = (cy - (py + 0.5)) * mpp;
      Vec2 world = center + right * ox + up * oy;

      Rgb c = bg;
      double rd = 1e30;
      for (size_t i : roads.near) {
        const auto& s = w.segs[i];
        rd = std::min(rd, point_segment_distance(world, s.a, s.b) - s.half_width);
      }
      if (rd <= 0.0) c = road;

      double route_d = 1e30;
      for (const auto& seg : route_segs)
        route_d = std::min(route_d, point_segment_distance(world, seg.first, seg.second));
      if (route_d <= 2.0) c = route_col;

      if (in_chevron(px + 0.5, py + 0.5)) c = chevron;
      put(img, px, py, c);
    }
  }
  return img;
}

}  // namespace drivesim::sim
