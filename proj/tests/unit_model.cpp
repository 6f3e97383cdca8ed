#include "drivesim/driving_model.hpp"

#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "drivesim/dataset.hpp"

using namespace drivesim;
using model::DrivingModel;
using model::Features;
using model::ModelConfig;
using model::ModelKind;
using model::PlannerKind;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.cameras = {0};
  cfg.planner = PlannerKind::matrix;
  cfg.use_past_states = true;
  cfg.history = 2;
  cfg.image_size = 8;
  cfg.cnn_channels = {2, 3};
  cfg.fc_dims = {6};
  cfg.lstm_layers = 2;
  cfg.lstm_hidden = 5;
  cfg.planner_fc = 7;
  return cfg;
}

Features random_features(Rng& rng, const ModelConfig& cfg) {
  Features f;
  auto fill = [&](std::vector<double>& v, size_t n, double lo, double hi) {
    v.resize(n);
    for (double& x : v) x = rng.uniform(lo, hi);
  };
  fill(f.steering_hist, cfg.history, -0.5, 0.5);
  fill(f.speed_hist, cfg.history, 0.0, 0.5);
  fill(f.loc, 2 * cfg.history, -0.5, 0.5);
  f.label_steering = rng.uniform(-90.0, 90.0);
  f.label_speed = rng.uniform(0.0, 60.0);
  if (cfg.kind == ModelKind::can_only) return f;
  size_t plane = size_t(3) * cfg.image_size * cfg.image_size;
  f.camera.resize(cfg.cameras.size());
  for (auto& cam : f.camera) {
    cam.resize(cfg.history);
    for (auto& frame : cam) fill(frame, plane, -0.5, 0.5);
  }
  if (cfg.planner == PlannerKind::matrix)
    fill(f.planner_matrix, size_t(geo::RouteMatrix::kRows) * 2, -1.0, 1.0);
  else if (cfg.planner == PlannerKind::map_image)
    fill(f.planner_image, plane, -0.5, 0.5);
  return f;
}

double eval_loss(DrivingModel& m, const std::vector<Features>& batch) {
  ad::Tape t;
  return m.loss(t, batch).val()[0];
}

/// Central-difference check of d(loss)/d(param) against the tape gradients.
/// Checks every index of parameters up to `full_limit` elements and a strided
/// sample of the larger ones.
void check_gradients(DrivingModel& m, const std::vector<Features>& batch,
                     size_t full_limit = 64) {
  ad::Tape t;
  ad::Tensor loss = m.loss(t, batch);
  m.params().zero_grads();
  t.backward(loss.id);
  std::vector<std::vector<double>> analytic;
  for (const ad::Param& p : m.params().all()) analytic.push_back(p.grad);

  const double h = 1e-5;
  size_t checked = 0, nonzero = 0;
  for (size_t pi = 0; pi < m.params().all().size(); ++pi) {
    ad::Param& p = m.params().all()[pi];
    if (p.name == "target_stats") continue;
    size_t stride = p.value.size() <= full_limit ? 1 : p.value.size() / full_limit;
    for (size_t i = 0; i < p.value.size(); i += stride) {
      double orig = p.value[i];
      p.value[i] = orig + h;
      double up = eval_loss(m, batch);
      p.value[i] = orig - h;
      double down = eval_loss(m, batch);
      p.value[i] = orig;
      double fd = (up - down) / (2 * h);
      double a = analytic[pi][i];
      double rel = std::fabs(a - fd) / std::max({std::fabs(a), std::fabs(fd), 1e-4});
      INFO(p.name << "[" << i << "] analytic=" << a << " fd=" << fd);
      CHECK(rel < 1e-4);
      ++checked;
      if (std::fabs(a) > 1e-12) ++nonzero;
    }
  }
  CHECK(checked > 100);
  CHECK(nonzero > checked / 2);  // the graph actually reaches the parameters
}

struct TempDir {
  std::string path;
  TempDir(const char* tag) {
    path = (std::filesystem::temp_directory_path() /
            (std::string("drivesim_model_") + tag + "_" + std::to_string(::getpid())))
               .string();
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace

TEST_CASE("model parameters are deterministic in the seed") {
  ModelConfig cfg = tiny_config();
  DrivingModel a(cfg, 7), b(cfg, 7), c(cfg, 8);
  REQUIRE(a.params().all().size() == b.params().all().size());
  bool all_equal = true, any_diff_seed = false;
  for (size_t i = 0; i < a.params().all().size(); ++i) {
    if (a.params().all()[i].value != b.params().all()[i].value) all_equal = false;
    if (a.params().all()[i].value != c.params().all()[i].value) any_diff_seed = true;
  }
  CHECK(all_equal);
  CHECK(any_diff_seed);
  CHECK(a.params().has("cam0_conv0_w"));
  CHECK(a.params().has("cam0_lstm1_wh"));
  CHECK(a.params().has("planner_fc_w"));
  CHECK(a.params().has("past_fc_w"));
  CHECK(a.params().has("head_speed_out_w"));
  CHECK(a.params().at("cam0_lstm0_wx").shape == ad::Shape{{6, 20}});
}

TEST_CASE("config validation rejects bad setups") {
  ModelConfig cfg = tiny_config();
  cfg.cameras = {};
  CHECK_THROWS_AS(cfg.validate(), model::ConfigError);
  cfg = tiny_config();
  cfg.cameras = {0, 0};
  CHECK_THROWS_AS(cfg.validate(), model::ConfigError);
  cfg = tiny_config();
  cfg.cameras = {4};
  CHECK_THROWS_AS(cfg.validate(), model::ConfigError);
  cfg = tiny_config();
  cfg.image_size = 2;
  CHECK_THROWS_AS(cfg.validate(), model::ConfigError);
  cfg = tiny_config();
  cfg.history = 5;
  CHECK_THROWS_AS(cfg.validate(), model::ConfigError);
  cfg = tiny_config();
  cfg.kind = ModelKind::can_only;
  cfg.use_past_states = false;
  CHECK_THROWS_AS(cfg.validate(), model::ConfigError);
}

TEST_CASE("config json round trip") {
  ModelConfig cfg = tiny_config();
  cfg.cameras = {0, 1, 2, 3};
  cfg.planner = PlannerKind::map_image;
  cfg.use_past_states = false;
  ModelConfig back = ModelConfig::from_json(cfg.to_json());
  CHECK(back.cameras == cfg.cameras);
  CHECK(back.planner == cfg.planner);
  CHECK(back.use_past_states == cfg.use_past_states);
  CHECK(back.image_size == cfg.image_size);
  CHECK(back.cnn_channels == cfg.cnn_channels);
  CHECK(back.lstm_hidden == cfg.lstm_hidden);
  CHECK(ModelConfig::from_json(ModelConfig().to_json()).planner == PlannerKind::none);
  CHECK_THROWS_AS(ModelConfig::from_json("{nope"), model::ConfigError);
}

TEST_CASE("finite differences confirm the full model gradients") {
  ModelConfig cfg = tiny_config();
  DrivingModel m(cfg, 11);
  m.set_target_stats(2.0, 30.0, 40.0, 10.0);
  Rng rng(100);
  std::vector<Features> batch = {random_features(rng, cfg), random_features(rng, cfg)};
  check_gradients(m, batch);
}

TEST_CASE("finite differences confirm the map-planner gradients") {
  ModelConfig cfg = tiny_config();
  cfg.planner = PlannerKind::map_image;
  cfg.use_past_states = false;
  DrivingModel m(cfg, 12);
  m.set_target_stats(0.0, 45.0, 30.0, 12.0);
  Rng rng(101);
  std::vector<Features> batch = {random_features(rng, cfg)};
  check_gradients(m, batch);
}

TEST_CASE("finite differences confirm the can-only gradients") {
  ModelConfig cfg;
  cfg.kind = ModelKind::can_only;
  cfg.history = 4;
  DrivingModel m(cfg, 13);
  m.set_target_stats(0.0, 50.0, 30.0, 15.0);
  Rng rng(102);
  std::vector<Features> batch = {random_features(rng, cfg), random_features(rng, cfg),
                                 random_features(rng, cfg)};
  check_gradients(m, batch);
}

TEST_CASE("forward is batch invariant") {
  ModelConfig cfg = tiny_config();
  cfg.cameras = {0, 1};
  DrivingModel m(cfg, 21);
  Rng rng(103);
  Features a = random_features(rng, cfg), b = random_features(rng, cfg);
  ad::Tape t1, t2, t3;
  ad::Tensor both = m.forward(t1, {a, b});
  ad::Tensor only_a = m.forward(t2, {a});
  ad::Tensor only_b = m.forward(t3, {b});
  for (int k = 0; k < 2; ++k) {
    CHECK(both.val()[k] == doctest::Approx(only_a.val()[k]).epsilon(1e-12));
    CHECK(both.val()[2 + k] == doctest::Approx(only_b.val()[k]).epsilon(1e-12));
  }
}

TEST_CASE("disabled inputs do not influence the output") {
  ModelConfig cfg = tiny_config();
  cfg.planner = PlannerKind::none;
  cfg.use_past_states = false;
  DrivingModel m(cfg, 22);
  Rng rng(104);
  Features a = random_features(rng, cfg);
  Features b = a;
  b.steering_hist.assign(b.steering_hist.size(), 0.37);
  b.speed_hist.assign(b.speed_hist.size(), 0.22);
  b.loc.assign(b.loc.size(), -0.4);
  b.planner_matrix.assign(600, 0.9);
  ad::Tape t;
  ad::Tensor out = m.forward(t, {a, b});
  CHECK(out.val()[0] == doctest::Approx(out.val()[2]).epsilon(1e-14));
  CHECK(out.val()[1] == doctest::Approx(out.val()[3]).epsilon(1e-14));
}

TEST_CASE("loss weights the speed head by lambda") {
  ModelConfig cfg;
  cfg.kind = ModelKind::can_only;
  DrivingModel m(cfg, 23);
  m.set_target_stats(0.0, 10.0, 0.0, 10.0);
  Rng rng(105);
  std::vector<Features> batch = {random_features(rng, cfg), random_features(rng, cfg)};

  ad::Tape t;
  ad::Tensor pred = m.forward(t, batch);
  double es = 0, ev = 0;
  for (size_t i = 0; i < batch.size(); ++i) {
    double ds = pred.val()[2 * i] - batch[i].label_steering / 10.0;
    double dv = pred.val()[2 * i + 1] - batch[i].label_speed / 10.0;
    es += ds * ds;
    ev += dv * dv;
  }
  es /= batch.size();
  ev /= batch.size();
  ad::Tape t0, t1, t2;
  CHECK(m.loss(t0, batch, 0.0).val()[0] == doctest::Approx(es).epsilon(1e-10));
  CHECK(m.loss(t1, batch, 1.0).val()[0] == doctest::Approx(es + ev).epsilon(1e-10));
  CHECK(m.loss(t2, batch, 2.5).val()[0] == doctest::Approx(es + 2.5 * ev).epsilon(1e-10));
}

TEST_CASE("predictions denormalize with the target stats and clamp") {
  ModelConfig cfg;
  cfg.kind = ModelKind::can_only;
  DrivingModel m(cfg, 24);
  Rng rng(106);
  Features f = random_features(rng, cfg);

  m.set_target_stats(5.0, 2.0, 40.0, 3.0);
  ad::Tape t;
  double raw_s = m.forward(t, {f}).val()[0];
  double raw_v = m.forward(t, {f}).val()[1];
  auto pred = m.predict({f});
  CHECK(pred[0].steering_deg == doctest::Approx(raw_s * 2.0 + 5.0));
  CHECK(pred[0].speed_kmh == doctest::Approx(std::clamp(raw_v * 3.0 + 40.0, 0.0, 180.0)));

  // absurd stats push the raw outputs far past the physical ranges
  m.set_target_stats(0.0, 1e9, 0.0, 1e9);
  auto extreme = m.predict({f});
  CHECK(std::fabs(extreme[0].steering_deg) == doctest::Approx(720.0));
  CHECK((extreme[0].speed_kmh == doctest::Approx(0.0) ||
         extreme[0].speed_kmh == doctest::Approx(180.0)));
  CHECK_THROWS_AS(m.set_target_stats(0, 0, 0, 1), model::ConfigError);
}

TEST_CASE("zeroed weights predict the target means") {
  ModelConfig cfg = tiny_config();
  DrivingModel m(cfg, 25);
  for (ad::Param& p : m.params().all())
    if (p.name != "target_stats") p.value.assign(p.value.size(), 0.0);
  m.set_target_stats(12.0, 4.0, 33.0, 6.0);
  Rng rng(107);
  auto pred = m.predict({random_features(rng, cfg)});
  CHECK(pred[0].steering_deg == doctest::Approx(12.0));
  CHECK(pred[0].speed_kmh == doctest::Approx(33.0));
}

TEST_CASE("checkpoints round trip and reject mismatched configs") {
  TempDir tmp("ckpt");
  ModelConfig cfg = tiny_config();
  DrivingModel m(cfg, 26);
  m.set_target_stats(1.0, 2.0, 3.0, 4.0);
  Rng rng(108);
  Features f = random_features(rng, cfg);
  auto before = m.predict({f});
  m.save(tmp.path + "/model");

  DrivingModel back = DrivingModel::load(tmp.path + "/model");
  auto after = back.predict({f});
  CHECK(after[0].steering_deg == doctest::Approx(before[0].steering_deg).epsilon(1e-14));
  CHECK(after[0].speed_kmh == doctest::Approx(before[0].speed_kmh).epsilon(1e-14));
  CHECK(back.target_stats() == std::vector<double>{1.0, 2.0, 3.0, 4.0});

  ModelConfig other = tiny_config();
  other.lstm_hidden = 6;
  CHECK_THROWS_AS(DrivingModel(other, m.params()), model::ConfigError);
}

TEST_CASE("features come out of a dataset episode normalized") {
  TempDir tmp("feat");
  sim::WorldParams wp;
  wp.n_intersections = 4;
  sim::World w = sim::generate_world(500, wp);
  Rng walk(501);
  geo::PlannedRoute route = sim::random_walk_route(w, walk, 2);
  sim::DriverParams driver;
  sim::SimConfig sc;
  sc.camera_fps = 10;
  sc.max_duration_s = 120.0;
  std::vector<sim::JunctionVisit> visits;
  sim::Episode ep = sim::drive_episode(w, route, driver, sc, 502, &visits);

  data::DatasetWriteConfig wc;
  wc.render.width = 8;
  wc.render.height = 8;
  data::write_episode(tmp.path + "/ep", ep, wc);
  data::EpisodeData epd(tmp.path + "/ep");
  REQUIRE(epd.samples().size() > 10);

  ModelConfig cfg = tiny_config();
  cfg.cameras = {0, 2};
  cfg.history = 4;
  const data::SampleRow& row = epd.samples()[5];
  Features f = model::make_features(epd, row, cfg);
  REQUIRE(f.camera.size() == 2);
  REQUIRE(f.camera[0].size() == 4);
  REQUIRE(f.camera[0][0].size() == size_t(3 * 8 * 8));
  for (double v : f.camera[1][3]) {
    CHECK(v >= -0.5);
    CHECK(v <= 0.5);
  }
  REQUIRE(f.planner_matrix.size() == 600);
  CHECK(std::fabs(f.planner_matrix[0]) < 0.05);  // matrix starts at the ego
  CHECK(f.steering_hist[3] == doctest::Approx(row.steering_hist[3] / 720.0));
  CHECK(f.speed_hist[0] == doctest::Approx(row.speed_hist[0] / 180.0));
  CHECK(f.loc[6] == doctest::Approx(row.loc_x[3] / 30.0));
  CHECK(f.label_speed == doctest::Approx(row.label_speed));

  cfg.history = 2;
  Features f2 = model::make_features(epd, row, cfg);
  CHECK(f2.steering_hist[0] == doctest::Approx(row.steering_hist[2] / 720.0));
  CHECK(f2.camera[0][1] == f.camera[0][3]);

  cfg.image_size = 16;
  CHECK_THROWS_AS(model::make_features(epd, row, cfg), model::ConfigError);
}
