#include "drivesim/sensor_sync.hpp"

#include <algorithm>
#include <cmath>

#include "drivesim/geo_route.hpp"

namespace drivesim::sync {

const char* to_string(StreamKind k) {
  switch (k) {
    case StreamKind::camera0: return "camera0";
    case StreamKind::camera1: return "camera1";
    case StreamKind::camera2: return "camera2";
    case StreamKind::camera3: return "camera3";
    case StreamKind::can_steering: return "can_steering";
    case StreamKind::can_speed: return "can_speed";
    case StreamKind::gps: return "gps";
    case StreamKind::imu: return "imu";
    case StreamKind::planner: return "planner";
  }
  return "?";
}

const SensorStream& StreamSet::by_kind(StreamKind k) const {
  for (const auto& s : streams)
    if (s.kind == k) return s;
  throw CoverageGapError(strf("stream %s missing", to_string(k)));
}

SensorStream& StreamSet::by_kind(StreamKind k) {
  for (auto& s : streams)
    if (s.kind == k) return s;
  throw CoverageGapError(strf("stream %s missing", to_string(k)));
}

bool StreamSet::has_kind(StreamKind k) const {
  for (const auto& s : streams)
    if (s.kind == k) return true;
  return false;
}

SensorStream align(const SensorStream& s) {
  SensorStream out = s;
  for (auto& r : out.records) r.t += s.clock_offset_s;
  out.clock_offset_s = 0.0;
  return out;
}

StreamSet align(const StreamSet& s) {
  StreamSet out;
  out.streams.reserve(s.streams.size());
  for (const auto& st : s.streams) out.streams.push_back(align(st));
  return out;
}

namespace {

size_t nearest_index(const SensorStream& s, double t) {
  const auto& rs = s.records;
  auto it = std::lower_bound(rs.begin(), rs.end(), t,
                             [](const StreamRecord& r, double q) { return r.t < q; });
  if (it == rs.begin()) return 0;
  if (it == rs.end()) return rs.size() - 1;
  size_t hi = size_t(it - rs.begin());
  size_t lo = hi - 1;
  // Ties go to the earlier record.
  return (t - rs[lo].t) <= (rs[hi].t - t) ? lo : hi;
}

size_t zoh_index(const SensorStream& s, double t) {
  const auto& rs = s.records;
  auto it = std::upper_bound(rs.begin(), rs.end(), t,
                             [](double q, const StreamRecord& r) { return q < r.t; });
  if (it == rs.begin())
    throw OutOfSpanError(strf("%s: t=%.6f before first record %.6f", to_string(s.kind),
                              t, rs.front().t));
  return size_t(it - rs.begin()) - 1;
}

void check_span(const SensorStream& s, double t) {
  if (s.records.empty())
    throw CoverageGapError(strf("stream %s has no records", to_string(s.kind)));
  if (t < s.records.front().t || t > s.records.back().t)
    throw OutOfSpanError(strf("%s: t=%.6f outside span [%.6f, %.6f]", to_string(s.kind),
                              t, s.records.front().t, s.records.back().t));
}

}  // namespace

const StreamRecord& sample_record(const SensorStream& s, double t, SampleMode mode) {
  if (s.records.empty())
    throw CoverageGapError(strf("stream %s has no records", to_string(s.kind)));
  if (mode == SampleMode::zero_order_hold) return s.records[zoh_index(s, t)];
  check_span(s, t);
  return s.records[nearest_index(s, t)];
}

double sample_value(const SensorStream& s, double t, SampleMode mode, int component) {
  if (mode != SampleMode::linear) return sample_record(s, t, mode).v[component];
  check_span(s, t);
  const auto& rs = s.records;
  auto it = std::lower_bound(rs.begin(), rs.end(), t,
                             [](const StreamRecord& r, double q) { return r.t < q; });
  if (it != rs.end() && it->t == t) return it->v[component];
  size_t hi = size_t(it - rs.begin());
  size_t lo = hi - 1;
  double w = (t - rs[lo].t) / (rs[hi].t - rs[lo].t);
  return rs[lo].v[component] + w * (rs[hi].v[component] - rs[lo].v[component]);
}

BuildResult build_samples(const StreamSet& aligned, const SamplingConfig& cfg,
                          const SyncBudget& budget) {
  (void)budget;
  const StreamKind required[] = {StreamKind::camera0, StreamKind::camera1,
                                 StreamKind::camera2, StreamKind::camera3,
                                 StreamKind::can_steering, StreamKind::can_speed,
                                 StreamKind::gps, StreamKind::planner};
  for (StreamKind k : required) {
    if (!aligned.has_kind(k)) throw CoverageGapError(strf("stream %s missing", to_string(k)));
    if (aligned.by_kind(k).records.empty())
      throw CoverageGapError(strf("stream %s has no records", to_string(k)));
  }

  const auto& cam0 = aligned.by_kind(StreamKind::camera0);
  const SensorStream* cams[4];
  for (int c = 0; c < 4; ++c)
    cams[c] = &aligned.by_kind(StreamKind(int(StreamKind::camera0) + c));
  const auto& can_s = aligned.by_kind(StreamKind::can_steering);
  const auto& can_v = aligned.by_kind(StreamKind::can_speed);
  const auto& gps = aligned.by_kind(StreamKind::gps);
  const auto& planner = aligned.by_kind(StreamKind::planner);

  const double head = -cfg.history_offsets_s.front();  // 0.9 s of history
  const double horizon = cfg.horizon_s;

  // Earliest/latest admissible anchor so every query stays in span.
  double lo = cam0.records.front().t + head;
  std::string lo_binder = "camera0";
  auto raise_lo = [&](double v, const char* who) {
    if (v > lo) { lo = v; lo_binder = who; }
  };
  for (int c = 1; c < 4; ++c)
    raise_lo(cams[c]->records.front().t + head, to_string(cams[c]->kind));
  raise_lo(can_s.records.front().t + head, "can_steering");
  raise_lo(can_v.records.front().t + head, "can_speed");
  raise_lo(gps.records.front().t + head, "gps");
  raise_lo(planner.records.front().t, "planner");

  double hi = cam0.records.back().t;
  std::string hi_binder = "camera0";
  auto lower_hi = [&](double v, const char* who) {
    if (v < hi) { hi = v; hi_binder = who; }
  };
  for (int c = 1; c < 4; ++c) lower_hi(cams[c]->records.back().t, to_string(cams[c]->kind));
  lower_hi(can_s.records.back().t - horizon, "can_steering");
  lower_hi(can_v.records.back().t - horizon, "can_speed");
  lower_hi(gps.records.back().t, "gps");
  lower_hi(planner.records.back().t, "planner");

  if (hi < lo)
    throw CoverageGapError(strf(
        "no common span: anchors need [%.3f, %.3f]; %s binds the start, %s the end",
        lo, hi, lo_binder.c_str(), hi_binder.c_str()));

  const int step = std::max(1, int(std::lround(cfg.period_s() * cam0.nominal_rate_hz)));
  const int k = int(cfg.history_offsets_s.size());

  BuildResult out;
  size_t first_tick = 0;
  while (first_tick < cam0.records.size() && cam0.records[first_tick].t < lo - 1e-9)
    ++first_tick;

  for (size_t i = first_tick; i < cam0.records.size(); i += size_t(step)) {
    const double t = cam0.records[i].t;
    if (t > hi + 1e-9) break;

    SyncedSample s;
    s.t = t;
    double err_cam = 0.0, err_can = 0.0;

    for (int c = 0; c < 4; ++c) {
      for (int j = 0; j < k; ++j) {
        double q = t + cfg.history_offsets_s[j];
        size_t idx = nearest_index(*cams[c], q);
        s.cam_ref[c][j] = cams[c]->records[idx].ref;
        err_cam = std::max(err_cam, std::fabs(cams[c]->records[idx].t - q));
      }
    }

    for (int j = 0; j < k; ++j) {
      double q = t + cfg.history_offsets_s[j];
      s.steering_hist[j] = sample_value(can_s, q, SampleMode::zero_order_hold);
      s.speed_hist[j] = sample_value(can_v, q, SampleMode::zero_order_hold);
      err_can = std::max(err_can, std::fabs(can_s.records[nearest_index(can_s, q)].t - q));
      err_can = std::max(err_can, std::fabs(can_v.records[nearest_index(can_v, q)].t - q));
    }
    s.label_steering = sample_value(can_s, t + horizon, SampleMode::zero_order_hold);
    s.label_speed = sample_value(can_v, t + horizon, SampleMode::zero_order_hold);
    err_can = std::max(err_can,
                       std::fabs(can_s.records[nearest_index(can_s, t + horizon)].t - (t + horizon)));
    err_can = std::max(err_can,
                       std::fabs(can_v.records[nearest_index(can_v, t + horizon)].t - (t + horizon)));

    // GPS history in a heading-up local frame about the newest fix.
    {
      double fx[4], fy[4];
      geo::GeoPoint newest;
      for (int j = 0; j < k; ++j) {
        const auto& r = gps.records[nearest_index(gps, t + cfg.history_offsets_s[j])];
        if (j == k - 1) newest = geo::GeoPoint{r.v[0], r.v[1]};
        fx[j] = r.v[0];
        fy[j] = r.v[1];
      }
      geo::LocalProjection proj(newest);
      Vec2 rel[4];
      for (int j = 0; j < k; ++j) rel[j] = proj.to_local(geo::GeoPoint{fx[j], fy[j]});
      Vec2 disp = rel[k - 1] - rel[0];
      double rot = disp.norm() > 1.0 ? kPi / 2.0 - std::atan2(disp.y, disp.x) : 0.0;
      for (int j = 0; j < k; ++j) {
        Vec2 v = rel[j].rotated(rot);
        s.loc_x[j] = v.x;
        s.loc_y[j] = v.y;
      }
    }

    const auto& pr = sample_record(planner, t, SampleMode::zero_order_hold);
    s.planner_ref = pr.ref;
    s.planner_s = pr.v[0];
    s.err_planner = t - pr.t;

    s.err_camera = err_cam;
    s.err_can = err_can;
    out.max_err_camera = std::max(out.max_err_camera, err_cam);
    out.max_err_can = std::max(out.max_err_can, err_can);
    out.max_err_planner = std::max(out.max_err_planner, s.err_planner);
    out.samples.push_back(s);
  }
  return out;
}

}  // namespace drivesim::sync
