#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "drivesim/render.hpp"
#include "drivesim/sensor_sync.hpp"
#include "drivesim/sim_world.hpp"

namespace drivesim::data {

class DatasetFormatError : public Error {
 public:
  using Error::Error;
};

struct DatasetWriteConfig {
  sim::RenderConfig render;
  sync::SamplingConfig sampling;
  sync::SyncBudget budget;
  bool write_camera_frames = true;
  bool write_map_frames = true;
  bool write_route_csvs = true;
};

struct EpisodeSummary {
  std::string dir;
  uint64_t seed = 0;
  size_t n_samples = 0;
  size_t n_junctions = 0;
  double duration_s = 0.0;
  double max_err_camera = 0.0, max_err_can = 0.0, max_err_planner = 0.0;
};

/// Serialize one driven episode: graph/world/meta JSON, CSV logs for every
/// stream, the synced sample table, and rendered frames for exactly the
/// camera and planner ticks the samples reference.
EpisodeSummary write_episode(const std::string& dir, const sim::Episode& ep,
                             const DatasetWriteConfig& cfg);

struct DatasetGenConfig {
  int n_episodes = 10;
  uint64_t base_seed = 1;
  int min_junctions = 8;
  double cross_traffic_prob = 0.0;
  int workers = 1;  // episodes are independent; output is worker-count invariant
  sim::WorldParams world;
  sim::DriverParams driver;
  sim::SimConfig sim;
  DatasetWriteConfig write;
};

/// Generate episodes ep_0000..ep_NNNN under root plus splits.json (even
/// episode index -> train, odd -> eval) and run_manifest.json. Everything
/// except run_manifest.json is a pure function of the config.
std::vector<EpisodeSummary> generate_dataset(const std::string& root,
                                             const DatasetGenConfig& cfg);

struct SampleRow {
  int idx = 0;
  double t = 0.0;
  int cam_tick[4] = {-1, -1, -1, -1};  // shared by all four cameras
  int planner_tick = -1;
  double loc_x[4] = {}, loc_y[4] = {};
  double steering_hist[4] = {}, speed_hist[4] = {};
  double label_steering = 0.0, label_speed = 0.0;
  double ego_x = 0.0, ego_y = 0.0, ego_theta = 0.0, route_s = 0.0;
  double err_camera = 0.0, err_can = 0.0, err_planner = 0.0;
};

struct JunctionRow {
  std::string node;
  double s_node = 0.0;
  double x = 0.0, y = 0.0;
  int n_options = 0;
  bool had_left = false, had_right = false;
  double turn_deg = 0.0;
  bool blocked = false;
};

struct EpisodeMeta {
  int format_version = 0;
  uint64_t seed = 0;
  double duration_s = 0.0;
  int image_width = 0, image_height = 0;
  double route_length_m = 0.0;
  double max_err_camera = 0.0, max_err_can = 0.0, max_err_planner = 0.0;
};

/// One episode directory, lazily loading frames with an in-memory cache.
class EpisodeData {
 public:
  explicit EpisodeData(std::string dir);

  const std::string& dir() const { return dir_; }
  const EpisodeMeta& meta() const { return meta_; }
  const std::vector<SampleRow>& samples() const { return samples_; }
  const std::vector<JunctionRow>& junctions() const { return junctions_; }

  const sim::Image& camera(int cam, int tick) const;
  const sim::Image& map_image(int tick) const;
  const geo::RouteMatrix& route_matrix(int tick) const;

 private:
  std::string dir_;
  EpisodeMeta meta_;
  std::vector<SampleRow> samples_;
  std::vector<JunctionRow> junctions_;
  mutable std::map<int64_t, sim::Image> image_cache_;
  mutable std::map<int, geo::RouteMatrix> matrix_cache_;
};

struct DatasetSplit {
  std::string root;
  std::vector<std::string> train_dirs;
  std::vector<std::string> eval_dirs;
};

DatasetSplit load_split(const std::string& root);

}  // namespace drivesim::data
