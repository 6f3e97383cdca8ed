#pragma once

#include <string>
#include <vector>

#include "drivesim/common.hpp"

namespace drivesim::sync {

enum class StreamKind {
  camera0,
  camera1,
  camera2,
  camera3,
  can_steering,
  can_speed,
  gps,
  imu,
  planner,
};

const char* to_string(StreamKind k);

/// One timestamped record. Camera and planner records carry a tick reference
/// that resolves to a rendered frame; numeric payloads live in v.
struct StreamRecord {
  double t = 0.0;   // seconds on the source clock
  int ref = -1;     // tick index for camera/planner records
  double v[6] = {0, 0, 0, 0, 0, 0};
};

struct SensorStream {
  StreamKind kind = StreamKind::gps;
  double nominal_rate_hz = 0.0;
  double clock_offset_s = 0.0;  // add to t to get the GPS clock
  std::vector<StreamRecord> records;
};

struct StreamSet {
  std::vector<SensorStream> streams;

  const SensorStream& by_kind(StreamKind k) const;
  SensorStream& by_kind(StreamKind k);
  bool has_kind(StreamKind k) const;
};

class OutOfSpanError : public Error {
 public:
  using Error::Error;
};
class CoverageGapError : public Error {
 public:
  using Error::Error;
};

/// Shift every timestamp onto the GPS clock (t' = t + clock_offset).
SensorStream align(const SensorStream& s);
StreamSet align(const StreamSet& s);

enum class SampleMode { nearest, linear, zero_order_hold };

/// Record lookup at time t. nearest breaks ties toward the earlier record;
/// zero_order_hold returns the latest record at or before t.
const StreamRecord& sample_record(const SensorStream& s, double t, SampleMode mode);

/// Numeric payload lookup; linear interpolates component-wise.
double sample_value(const SensorStream& s, double t, SampleMode mode, int component = 0);

struct SamplingConfig {
  std::vector<double> history_offsets_s = {-0.9, -0.6, -0.3, 0.0};
  double horizon_s = 0.3;
  double rate_hz = 10.0 / 3.0;  // one sample every 0.3 s

  double period_s() const { return 1.0 / rate_hz; }
};

/// Alignment-error budgets, seconds. Camera and CAN errors are the distance
/// from the query time to the nearest record (clock-sync quality); the
/// planner error is staleness of the held frame.
struct SyncBudget {
  double camera_s = 0.0083;
  double can_s = 0.010;
  double planner_s = 0.5;
};

struct SyncedSample {
  double t = 0.0;        // GPS-clock anchor time
  int cam_ref[4][4] = {};     // [camera][timestep] tick index
  int planner_ref = -1;       // planner tick index
  double planner_s = 0.0;     // matched route arc length at the planner tick
  double loc_x[4] = {}, loc_y[4] = {};  // GPS history, heading-up local meters
  double steering_hist[4] = {};         // degrees
  double speed_hist[4] = {};            // km/h
  double label_steering = 0.0;
  double label_speed = 0.0;
  // Ground-truth annotations filled by the dataset writer (evaluation only).
  double ego_x = 0.0, ego_y = 0.0, ego_theta = 0.0, route_s = 0.0;
  // Worst alignment error per budgeted stream group, seconds.
  double err_camera = 0.0, err_can = 0.0, err_planner = 0.0;
};

struct BuildResult {
  std::vector<SyncedSample> samples;
  double max_err_camera = 0.0;
  double max_err_can = 0.0;
  double max_err_planner = 0.0;
};

/// Assemble training samples from aligned streams. Sample anchors sit on
/// camera-0 ticks at the configured cadence; labels are taken horizon_s
/// ahead. Throws CoverageGapError when a stream is missing or does not cover
/// the query span, and OutOfSpanError never (out-of-span anchors are
/// dropped).
BuildResult build_samples(const StreamSet& aligned, const SamplingConfig& cfg,
                          const SyncBudget& budget = SyncBudget{});

}  // namespace drivesim::sync
