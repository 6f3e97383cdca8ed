#include "drivesim/dataset.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "json.hpp"

#include "drivesim/can_codec.hpp"

namespace drivesim::data {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr int kFormatVersion = 1;
constexpr int kMountDeg[4] = {0, 90, 270, 180};  // front, left, right, rear

constexpr const char* kSamplesHeader =
    "idx,t,tick0,tick1,tick2,tick3,ptick,lx0,ly0,lx1,ly1,lx2,ly2,lx3,ly3,"
    "s0,s1,s2,s3,v0,v1,v2,v3,label_s,label_v,ego_x,ego_y,ego_theta,route_s,"
    "err_cam,err_can,err_planner";
constexpr const char* kJunctionsHeader =
    "node,s_node,x,y,n_options,had_left,had_right,turn_deg,blocked";

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  size_t start = 0;
  while (true) {
    size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return out;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::string text = read_file(path);
  std::vector<std::string> lines;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

// Monotone projection of sample positions onto the route polyline.
class RouteWalker {
 public:
  RouteWalker(const std::vector<Vec2>& pts, const std::vector<double>& cum)
      : pts_(pts), cum_(cum) {}

  double advance(Vec2 p) {
    while (true) {
      double t01 = 0.0;
      double d = point_segment_distance(p, pts_[j_], pts_[j_ + 1], &t01);
      if (t01 >= 1.0 && j_ + 2 < pts_.size()) {
        double t2 = 0.0;
        double d2 = point_segment_distance(p, pts_[j_ + 1], pts_[j_ + 2], &t2);
        if (d2 <= d + 0.01) {
          ++j_;
          continue;
        }
      }
      return cum_[j_] + t01 * (cum_[j_ + 1] - cum_[j_]);
    }
  }

 private:
  const std::vector<Vec2>& pts_;
  const std::vector<double>& cum_;
  size_t j_ = 0;
};

}  // namespace

EpisodeSummary write_episode(const std::string& dir, const sim::Episode& ep,
                             const DatasetWriteConfig& cfg) {
  fs::create_directories(dir);

  write_file(dir + "/graph.json", ep.world.graph.to_json());
  write_file(dir + "/world.json", ep.world.to_json());

  std::string ego = "t,x,y,theta,speed_kmh,steering_deg,accel\n";
  for (const auto& r : ep.track)
    ego += strf("%.6f,%.9f,%.9f,%.9f,%.6f,%.6f,%.9f\n", r.t, r.pos.x, r.pos.y,
                r.heading, r.speed_kmh, r.steering_deg, r.accel);
  write_file(dir + "/ego.csv", ego);

  // CAN log on the source clock, merged by time then frame id.
  {
    std::vector<can::CanFrame> frames;
    for (const auto& r : ep.streams.by_kind(sync::StreamKind::can_steering).records)
      frames.push_back(can::encode_steering(r.v[0], r.t));
    for (const auto& r : ep.streams.by_kind(sync::StreamKind::can_speed).records)
      frames.push_back(can::encode_speed(r.v[0], r.t));
    std::stable_sort(frames.begin(), frames.end(),
                     [](const can::CanFrame& a, const can::CanFrame& b) {
                       return a.t != b.t ? a.t < b.t : a.id < b.id;
                     });
    write_file(dir + "/can.csv", can::emit_log(frames));
  }

  {
    std::string gps = "t,lat,lon\n";
    for (const auto& r : ep.streams.by_kind(sync::StreamKind::gps).records)
      gps += strf("%.6f,%.12f,%.12f\n", r.t, r.v[0], r.v[1]);
    write_file(dir + "/gps.csv", gps);
  }
  {
    std::string imu = "t,ax,ay,az,gx,gy,gz\n";
    for (const auto& r : ep.streams.by_kind(sync::StreamKind::imu).records)
      imu += strf("%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", r.t, r.v[0], r.v[1], r.v[2],
                  r.v[3], r.v[4], r.v[5]);
    write_file(dir + "/imu.csv", imu);
  }

  sync::BuildResult br = sync::build_samples(align(ep.streams), cfg.sampling, cfg.budget);

  RouteWalker walker(ep.route_xy, ep.route.cumulative_s);
  std::string samples = std::string(kSamplesHeader) + "\n";
  std::set<int> cam_ticks, planner_ticks;
  for (size_t i = 0; i < br.samples.size(); ++i) {
    const auto& s = br.samples[i];
    for (int c = 1; c < 4; ++c)
      for (int j = 0; j < 4; ++j)
        if (s.cam_ref[c][j] != s.cam_ref[0][j])
          throw DatasetFormatError("camera rig tick references disagree");
    for (int j = 0; j < 4; ++j) cam_ticks.insert(s.cam_ref[0][j]);
    planner_ticks.insert(s.planner_ref);

    sim::EgoState st = ep.state_at(s.t);
    double route_s = walker.advance(st.pos);
    samples += strf("%zu,%.6f,%d,%d,%d,%d,%d", i, s.t, s.cam_ref[0][0], s.cam_ref[0][1],
                    s.cam_ref[0][2], s.cam_ref[0][3], s.planner_ref);
    for (int j = 0; j < 4; ++j) samples += strf(",%.6f,%.6f", s.loc_x[j], s.loc_y[j]);
    for (int j = 0; j < 4; ++j) samples += strf(",%.6f", s.steering_hist[j]);
    for (int j = 0; j < 4; ++j) samples += strf(",%.6f", s.speed_hist[j]);
    samples += strf(",%.6f,%.6f", s.label_steering, s.label_speed);
    samples += strf(",%.6f,%.6f,%.9f,%.6f", st.pos.x, st.pos.y, st.heading, route_s);
    samples += strf(",%.9f,%.9f,%.9f\n", s.err_camera, s.err_can, s.err_planner);
  }
  write_file(dir + "/samples.csv", samples);

  std::string junctions = std::string(kJunctionsHeader) + "\n";
  for (const auto& v : ep.junctions)
    junctions += strf("%s,%.6f,%.6f,%.6f,%d,%d,%d,%.6f,%d\n", v.node.c_str(), v.s_node,
                      v.pos.x, v.pos.y, v.n_options, v.had_left ? 1 : 0,
                      v.had_right ? 1 : 0, v.turn_deg, v.blocked ? 1 : 0);
  write_file(dir + "/junctions.csv", junctions);

  if (cfg.write_camera_frames) {
    for (int tick : cam_ticks) {
      double tt = ep.cam_tick_t[size_t(tick)];
      sim::EgoState st = ep.state_at(tt);
      auto poses = ep.agent_poses(tt);
      for (int c = 0; c < 4; ++c)
        write_ppm(dir + strf("/cam%d_t%05d.ppm", c, tick),
                  render_camera(ep.world, st, kMountDeg[c], cfg.render, poses));
    }
  }
  for (int tick : planner_ticks) {
    double s_matched = ep.planner_tick_s[size_t(tick)];
    if (cfg.write_map_frames) {
      geo::RoutePosition rp;
      rp.s = s_matched;
      write_ppm(dir + strf("/map_t%05d.ppm", tick),
                render_map_view(ep.world, ep.route, rp, cfg.render));
    }
    if (cfg.write_route_csvs) {
      geo::RouteMatrix m = geo::resample_route(ep.route, s_matched);
      Vec2 origin = ep.route.point_at(s_matched);
      Vec2 tan = ep.route.tangent_at(s_matched);
      double rot = kPi / 2.0 - std::atan2(tan.y, tan.x);  // forward becomes +y
      for (auto& p : m.points) p = (p - origin).rotated(rot);
      write_file(dir + strf("/route_t%05d.csv", tick), m.to_csv());
    }
  }

  ordered_json meta;
  meta["format_version"] = kFormatVersion;
  meta["seed"] = ep.seed;
  meta["duration_s"] = ep.duration_s;
  meta["n_samples"] = br.samples.size();
  meta["n_junctions"] = ep.junctions.size();
  meta["image"] = {{"width", cfg.render.width},
                   {"height", cfg.render.height},
                   {"fov_deg", cfg.render.fov_deg},
                   {"camera_height_m", cfg.render.camera_height_m},
                   {"view_distance_m", cfg.render.view_distance_m},
                   {"map_ahead_m", cfg.render.map_ahead_m}};
  meta["cameras"] = {"front", "left", "right", "rear"};
  meta["camera_mount_deg"] = {kMountDeg[0], kMountDeg[1], kMountDeg[2], kMountDeg[3]};
  meta["sampling"] = {{"history_offsets_s", cfg.sampling.history_offsets_s},
                      {"horizon_s", cfg.sampling.horizon_s},
                      {"rate_hz", cfg.sampling.rate_hz}};
  meta["budget"] = {{"camera_s", cfg.budget.camera_s},
                    {"can_s", cfg.budget.can_s},
                    {"planner_s", cfg.budget.planner_s}};
  meta["errors"] = {{"max_err_camera", br.max_err_camera},
                    {"max_err_can", br.max_err_can},
                    {"max_err_planner", br.max_err_planner}};
  meta["can_signals"] = {
      {"steering",
       {{"id", can::kSteeringId}, {"lsb_deg", can::kSteeringLsbDeg},
        {"max_deg", can::kSteeringMaxDeg}}},
      {"speed",
       {{"id", can::kSpeedId}, {"lsb_kmh", can::kSpeedLsbKmh},
        {"max_kmh", can::kSpeedMaxKmh}}}};
  meta["route"] = {{"length_m", ep.route.length_m()},
                   {"n_nodes", ep.route.node_path.size()},
                   {"node_path", ep.route.node_path}};
  meta["sim"] = {{"dt", ep.sim.dt},
                 {"camera_fps", ep.sim.camera_fps},
                 {"can_hz", ep.sim.can_hz},
                 {"gps_hz", ep.sim.gps_hz},
                 {"imu_hz", ep.sim.imu_hz},
                 {"planner_fps", ep.sim.planner_fps},
                 {"gps_sigma_m", ep.sim.gps_sigma_m},
                 {"offset_camera_s", ep.sim.offset_camera_s},
                 {"offset_can_s", ep.sim.offset_can_s},
                 {"offset_gps_s", ep.sim.offset_gps_s},
                 {"offset_imu_s", ep.sim.offset_imu_s},
                 {"offset_planner_s", ep.sim.offset_planner_s},
                 {"residual_jitter_frac", ep.sim.residual_jitter_frac}};
  meta["driver"] = {{"wheelbase_m", ep.driver.wheelbase_m},
                    {"steer_ratio", ep.driver.steer_ratio},
                    {"lane_offset_m", ep.driver.lane_offset_m}};
  write_file(dir + "/meta.json", meta.dump(2) + "\n");

  EpisodeSummary summary;
  summary.dir = dir;
  summary.seed = ep.seed;
  summary.n_samples = br.samples.size();
  summary.n_junctions = ep.junctions.size();
  summary.duration_s = ep.duration_s;
  summary.max_err_camera = br.max_err_camera;
  summary.max_err_can = br.max_err_can;
  summary.max_err_planner = br.max_err_planner;
  return summary;
}

std::vector<EpisodeSummary> generate_dataset(const std::string& root,
                                             const DatasetGenConfig& cfg) {
  fs::create_directories(root);
  std::vector<EpisodeSummary> out(cfg.n_episodes);
  ordered_json train = ordered_json::array(), eval = ordered_json::array();

  auto gen_one = [&](int i) {
    uint64_t seed = cfg.base_seed + uint64_t(i);
    sim::World w = sim::generate_world(seed, cfg.world);
    Rng walk_rng = Rng(seed).derive(31);
    geo::PlannedRoute route = sim::random_walk_route(w, walk_rng, cfg.min_junctions);
    auto visits = sim::junction_visits(w, route);
    if (cfg.cross_traffic_prob > 0.0) {
      Rng traffic_rng = Rng(seed).derive(32);
      sim::place_cross_traffic(w, route, visits, traffic_rng, cfg.cross_traffic_prob);
    }
    sim::Episode ep = sim::drive_episode(w, route, cfg.driver, cfg.sim, seed, &visits);
    out[i] = write_episode(root + "/" + strf("ep_%04d", i), ep, cfg.write);
  };

  int workers = std::min(std::max(cfg.workers, 1), std::max(cfg.n_episodes, 1));
  if (workers <= 1) {
    for (int i = 0; i < cfg.n_episodes; ++i) gen_one(i);
  } else {
    std::atomic<int> next{0};
    std::mutex err_mutex;
    std::exception_ptr err;
    auto worker = [&] {
      for (int i = next++; i < cfg.n_episodes; i = next++) {
        try {
          gen_one(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mutex);
          if (!err) err = std::current_exception();
          return;
        }
      }
    };
    std::vector<std::thread> pool;
    for (int k = 0; k < workers; ++k) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    if (err) std::rethrow_exception(err);
  }
  for (int i = 0; i < cfg.n_episodes; ++i)
    (i % 2 == 0 ? train : eval).push_back(strf("ep_%04d", i));

  ordered_json splits;
  splits["train"] = train;
  splits["eval"] = eval;
  write_file(root + "/splits.json", splits.dump(2) + "\n");

  ordered_json cfg_j;
  cfg_j["n_episodes"] = cfg.n_episodes;
  cfg_j["base_seed"] = cfg.base_seed;
  cfg_j["min_junctions"] = cfg.min_junctions;
  cfg_j["cross_traffic_prob"] = cfg.cross_traffic_prob;
  cfg_j["world"] = {{"n_intersections", cfg.world.n_intersections},
                    {"pedestrian_density", cfg.world.pedestrian_density},
                    {"road_mix", cfg.world.road_mix},
                    {"lane_width_m", cfg.world.lane_width_m},
                    {"block_m", cfg.world.block_m},
                    {"lane_markings", cfg.world.lane_markings},
                    {"corner_buildings", cfg.world.corner_buildings}};
  cfg_j["image"] = {{"width", cfg.write.render.width}, {"height", cfg.write.render.height}};
  cfg_j["sim"] = {{"camera_fps", cfg.sim.camera_fps},
                  {"residual_jitter_frac", cfg.sim.residual_jitter_frac}};

  ordered_json manifest;
  manifest["generator"] = "drivesim gen-data";
  manifest["format_version"] = kFormatVersion;
  manifest["created_unix"] = int64_t(std::time(nullptr));
  manifest["config"] = cfg_j;
  manifest["config_hash"] = fnv1a_hex(cfg_j.dump());
  write_file(root + "/run_manifest.json", manifest.dump(2) + "\n");
  return out;
}

EpisodeData::EpisodeData(std::string dir) : dir_(std::move(dir)) {
  try {
    auto j = nlohmann::json::parse(read_file(dir_ + "/meta.json"));
    meta_.format_version = j.at("format_version").get<int>();
    meta_.seed = j.at("seed").get<uint64_t>();
    meta_.duration_s = j.at("duration_s").get<double>();
    meta_.image_width = j.at("image").at("width").get<int>();
    meta_.image_height = j.at("image").at("height").get<int>();
    meta_.route_length_m = j.at("route").at("length_m").get<double>();
    meta_.max_err_camera = j.at("errors").at("max_err_camera").get<double>();
    meta_.max_err_can = j.at("errors").at("max_err_can").get<double>();
    meta_.max_err_planner = j.at("errors").at("max_err_planner").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw DatasetFormatError(strf("%s/meta.json: %s", dir_.c_str(), e.what()));
  }

  auto lines = read_lines(dir_ + "/samples.csv");
  if (lines.empty() || lines[0] != kSamplesHeader)
    throw DatasetFormatError(dir_ + "/samples.csv: unexpected header");
  for (size_t i = 1; i < lines.size(); ++i) {
    auto f = split_csv(lines[i]);
    if (f.size() != 32)
      throw DatasetFormatError(strf("%s/samples.csv row %zu: %zu fields, expected 32",
                                    dir_.c_str(), i, f.size()));
    SampleRow r;
    size_t k = 0;
    r.idx = std::stoi(f[k++]);
    r.t = std::stod(f[k++]);
    for (int j = 0; j < 4; ++j) r.cam_tick[j] = std::stoi(f[k++]);
    r.planner_tick = std::stoi(f[k++]);
    for (int j = 0; j < 4; ++j) {
      r.loc_x[j] = std::stod(f[k++]);
      r.loc_y[j] = std::stod(f[k++]);
    }
    for (int j = 0; j < 4; ++j) r.steering_hist[j] = std::stod(f[k++]);
    for (int j = 0; j < 4; ++j) r.speed_hist[j] = std::stod(f[k++]);
    r.label_steering = std::stod(f[k++]);
    r.label_speed = std::stod(f[k++]);
    r.ego_x = std::stod(f[k++]);
    r.ego_y = std::stod(f[k++]);
    r.ego_theta = std::stod(f[k++]);
    r.route_s = std::stod(f[k++]);
    r.err_camera = std::stod(f[k++]);
    r.err_can = std::stod(f[k++]);
    r.err_planner = std::stod(f[k++]);
    samples_.push_back(r);
  }

  lines = read_lines(dir_ + "/junctions.csv");
  if (lines.empty() || lines[0] != kJunctionsHeader)
    throw DatasetFormatError(dir_ + "/junctions.csv: unexpected header");
  for (size_t i = 1; i < lines.size(); ++i) {
    auto f = split_csv(lines[i]);
    if (f.size() != 9)
      throw DatasetFormatError(strf("%s/junctions.csv row %zu: bad field count",
                                    dir_.c_str(), i));
    JunctionRow r;
    r.node = f[0];
    r.s_node = std::stod(f[1]);
    r.x = std::stod(f[2]);
    r.y = std::stod(f[3]);
    r.n_options = std::stoi(f[4]);
    r.had_left = f[5] == "1";
    r.had_right = f[6] == "1";
    r.turn_deg = std::stod(f[7]);
    r.blocked = f[8] == "1";
    junctions_.push_back(r);
  }
}

const sim::Image& EpisodeData::camera(int cam, int tick) const {
  int64_t key = int64_t(cam) * 1000000 + tick;
  auto it = image_cache_.find(key);
  if (it == image_cache_.end())
    it = image_cache_
             .emplace(key, sim::read_ppm(dir_ + strf("/cam%d_t%05d.ppm", cam, tick)))
             .first;
  return it->second;
}

const sim::Image& EpisodeData::map_image(int tick) const {
  int64_t key = int64_t(4) * 1000000 + tick;
  auto it = image_cache_.find(key);
  if (it == image_cache_.end())
    it = image_cache_.emplace(key, sim::read_ppm(dir_ + strf("/map_t%05d.ppm", tick))).first;
  return it->second;
}

const geo::RouteMatrix& EpisodeData::route_matrix(int tick) const {
  auto it = matrix_cache_.find(tick);
  if (it == matrix_cache_.end())
    it = matrix_cache_
             .emplace(tick,
                      geo::RouteMatrix::from_csv(read_file(dir_ + strf("/route_t%05d.csv", tick))))
             .first;
  return it->second;
}

DatasetSplit load_split(const std::string& root) {
  DatasetSplit out;
  out.root = root;
  try {
    auto j = nlohmann::json::parse(read_file(root + "/splits.json"));
    for (const auto& name : j.at("train")) out.train_dirs.push_back(root + "/" + name.get<std::string>());
    for (const auto& name : j.at("eval")) out.eval_dirs.push_back(root + "/" + name.get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw DatasetFormatError(strf("%s/splits.json: %s", root.c_str(), e.what()));
  }
  return out;
}

}  // namespace drivesim::data
