#include "drivesim/train_eval.hpp"

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "json.hpp"

using namespace drivesim;
using model::DrivingModel;
using model::ModelConfig;
using model::ModelKind;
using model::PlannerKind;
using train::DatasetView;
using train::SampleRef;

namespace {

struct TempDir {
  std::string path;
  TempDir(const char* tag) {
    path = (std::filesystem::temp_directory_path() /
            (std::string("drivesim_train_") + tag + "_" + std::to_string(::getpid())))
               .string();
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

/// Shared tiny dataset: 2 episodes on a 9-intersection grid, 8 px frames.
/// Built once; the tests only read it.
const std::string& shared_dataset() {
  static std::string root;
  if (root.empty()) {
    root = (std::filesystem::temp_directory_path() /
            ("drivesim_train_data_" + std::to_string(::getpid())))
               .string();
    std::filesystem::remove_all(root);
    data::DatasetGenConfig cfg;
    cfg.n_episodes = 2;
    cfg.base_seed = 900;
    cfg.min_junctions = 8;
    cfg.world.n_intersections = 9;
    cfg.sim.camera_fps = 10;
    cfg.sim.max_duration_s = 420.0;
    cfg.write.render.width = 8;
    cfg.write.render.height = 8;
    data::generate_dataset(root, cfg);
  }
  return root;
}

ModelConfig tiny_cfg() {
  ModelConfig cfg;
  cfg.cameras = {0};
  cfg.planner = PlannerKind::matrix;
  cfg.image_size = 8;
  cfg.cnn_channels = {2, 3};
  cfg.fc_dims = {6};
  cfg.lstm_layers = 2;
  cfg.lstm_hidden = 5;
  cfg.planner_fc = 7;
  return cfg;
}

}  // namespace

TEST_CASE("dataset view serves samples from every episode") {
  data::DatasetSplit split = data::load_split(shared_dataset());
  DatasetView view(split.train_dirs);
  REQUIRE(view.n_episodes() == 1);
  REQUIRE(view.n_samples() > 50);
  std::vector<SampleRef> refs = view.all();
  CHECK(refs.size() == view.n_samples());
  CHECK(view.row(refs[3]).idx == 3);
  model::Features f = view.features(refs[3], tiny_cfg());
  CHECK(f.camera.size() == 1);
  CHECK(f.planner_matrix.size() == 600);
}

TEST_CASE("open_split rejects overlapping train and eval sets") {
  train::LoadedSplit split = train::open_split(shared_dataset());
  CHECK(split.train.n_episodes() == 1);
  CHECK(split.eval.n_episodes() == 1);

  TempDir tmp("overlap");
  std::filesystem::copy(shared_dataset(), tmp.path, std::filesystem::copy_options::recursive);
  nlohmann::json j;
  {
    std::ifstream in(tmp.path + "/splits.json");
    in >> j;
  }
  j["eval"] = j["train"];
  write_file(tmp.path + "/splits.json", j.dump(2));
  CHECK_THROWS_AS(train::open_split(tmp.path), train::TrainError);
}

TEST_CASE("target stats match the label moments") {
  train::LoadedSplit split = train::open_split(shared_dataset());
  std::vector<SampleRef> refs = split.train.all();
  train::TargetStats st = train::compute_target_stats(split.train, refs);
  double ms = 0, mv = 0;
  for (const SampleRef& r : refs) {
    ms += split.train.row(r).label_steering;
    mv += split.train.row(r).label_speed;
  }
  ms /= refs.size();
  mv /= refs.size();
  CHECK(st.steering_mean == doctest::Approx(ms));
  CHECK(st.speed_mean == doctest::Approx(mv));
  CHECK(st.steering_std > 0);
  CHECK(st.speed_std > 1.0);  // the car brakes for turns, so speeds vary
  CHECK_THROWS_AS(train::compute_target_stats(split.train, {}), train::TrainError);
}

TEST_CASE("training runs deterministically and honors the step budget") {
  train::LoadedSplit split = train::open_split(shared_dataset());
  std::vector<SampleRef> refs = split.train.all();

  train::TrainConfig tc;
  tc.lr = 1e-3;
  tc.batch_size = 8;
  tc.epochs = 2;
  tc.max_steps = 9;
  tc.seed = 5;

  ModelConfig mc;
  mc.kind = ModelKind::can_only;
  DrivingModel a(mc, 70);
  train::TrainStats sa = train::train_model(a, split.train, refs, tc);
  CHECK(sa.steps == 9);
  CHECK(a.params().adam_steps() == 9);
  CHECK(sa.step_loss.size() == 9);
  CHECK(sa.initial_loss == doctest::Approx(sa.step_loss[0].second));

  DrivingModel b(mc, 70);
  train::TrainStats sb = train::train_model(b, split.train, refs, tc);
  REQUIRE(sb.step_loss.size() == sa.step_loss.size());
  for (size_t i = 0; i < sa.step_loss.size(); ++i)
    CHECK(sa.step_loss[i].second == sb.step_loss[i].second);
  for (size_t i = 0; i < a.params().all().size(); ++i)
    CHECK(a.params().all()[i].value == b.params().all()[i].value);

  // without max_steps: steps = epochs * ceil(n / batch)
  train::TrainConfig full = tc;
  full.max_steps = 0;
  full.epochs = 1;
  DrivingModel c(mc, 70);
  train::TrainStats sc = train::train_model(c, split.train, refs, full);
  CHECK(sc.steps == int((refs.size() + 7) / 8));
  CHECK(sc.epoch_loss.size() == 1);
}

TEST_CASE("a can-only model overfits a handful of samples") {
  train::LoadedSplit split = train::open_split(shared_dataset());
  std::vector<SampleRef> all = split.train.all();
  std::vector<SampleRef> refs(all.begin(), all.begin() + 16);

  ModelConfig mc;
  mc.kind = ModelKind::can_only;
  DrivingModel m(mc, 71);
  train::TrainConfig tc;
  tc.lr = 1e-3;
  tc.batch_size = 16;
  tc.epochs = 1000;
  tc.max_steps = 400;
  train::TrainStats st = train::train_model(m, split.train, refs, tc);
  CHECK(st.final_epoch_loss < 0.05 * st.initial_loss);
}

TEST_CASE("training aborts on divergence") {
  train::LoadedSplit split = train::open_split(shared_dataset());
  std::vector<SampleRef> refs = split.train.all();
  ModelConfig mc;
  mc.kind = ModelKind::can_only;
  DrivingModel m(mc, 72);
  train::TrainConfig tc;
  tc.lr = 1e6;
  tc.epochs = 50;
  tc.divergence_loss = 1e4;
  CHECK_THROWS_AS(train::train_model(m, split.train, refs, tc), train::TrainError);
}

TEST_CASE("checkpoint directory captures the model and the loss curve") {
  TempDir tmp("ckpt");
  train::LoadedSplit split = train::open_split(shared_dataset());
  std::vector<SampleRef> refs = split.train.all();
  ModelConfig mc;
  mc.kind = ModelKind::can_only;
  DrivingModel m(mc, 73);
  train::TrainConfig tc;
  tc.max_steps = 4;
  tc.checkpoint_dir = tmp.path + "/run";
  train::train_model(m, split.train, refs, tc);
  CHECK(std::filesystem::exists(tmp.path + "/run/model.params"));
  CHECK(std::filesystem::exists(tmp.path + "/run/model.json"));
  std::string curve = read_file(tmp.path + "/run/train_curve.csv");
  CHECK(curve.substr(0, 10) == "step,loss\n");
  CHECK(std::count(curve.begin(), curve.end(), '\n') == 5);

  DrivingModel back = DrivingModel::load(tmp.path + "/run/model");
  CHECK(back.target_stats() == m.target_stats());
}

TEST_CASE("evaluation of a mean predictor reproduces the label variance") {
  train::LoadedSplit split = train::open_split(shared_dataset());
  std::vector<SampleRef> refs = split.eval.all();
  ModelConfig mc;
  mc.kind = ModelKind::can_only;
  DrivingModel m(mc, 74);
  for (ad::Param& p : m.params().all())
    if (p.name != "target_stats") p.value.assign(p.value.size(), 0.0);

  train::TargetStats st = train::compute_target_stats(split.eval, refs);
  m.set_target_stats(st.steering_mean, st.steering_std, st.speed_mean, st.speed_std);
  train::EvalMetrics em = train::evaluate(m, split.eval, refs);
  CHECK(em.n == refs.size());
  CHECK(em.steering_mse == doctest::Approx(em.label_steering_var).epsilon(1e-9));
  CHECK(em.speed_mse == doctest::Approx(em.label_speed_var).epsilon(1e-9));
  CHECK(em.label_speed_var > 1.0);
}

TEST_CASE("sample filters select by speed and junction distance") {
  train::LoadedSplit split = train::open_split(shared_dataset());
  std::vector<SampleRef> refs = split.train.all();

  std::vector<SampleRef> slow = train::filter_speed_at_most(split.train, refs, 30.0);
  REQUIRE(!slow.empty());
  CHECK(slow.size() < refs.size());
  for (const SampleRef& r : slow) CHECK(split.train.row(r).speed_hist[3] <= 30.0);

  std::vector<SampleRef> near = train::filter_near_junction(split.train, refs, 20.0);
  REQUIRE(!near.empty());
  CHECK(near.size() < refs.size());
  for (const SampleRef& r : near) {
    double s = split.train.row(r).route_s;
    bool ok = false;
    for (const auto& j : split.train.episode(r.episode).junctions())
      ok = ok || std::fabs(j.s_node - s) <= 20.0;
    CHECK(ok);
  }

  // the shared dataset has no cross traffic, so no junction is blocked
  CHECK(train::filter_near_blocked_junction(split.train, refs, 20.0).empty());
}

TEST_CASE("decision windows are straight-now turn-soon samples at open junctions") {
  train::LoadedSplit split = train::open_split(shared_dataset());
  std::vector<SampleRef> refs = split.train.all();
  auto windows = train::decision_windows(split.train, refs);
  for (const auto& w : windows) {
    CHECK(std::fabs(w.current_steering) < 10.0);
    CHECK(std::fabs(w.label_steering) >= 15.0);
    const data::SampleRow& row = split.train.row(w.ref);
    bool near_lr = false;
    for (const auto& j : split.train.episode(w.ref.episode).junctions())
      if (j.had_left && j.had_right && row.route_s >= j.s_node - 20.0 &&
          row.route_s <= j.s_node + 2.0)
        near_lr = true;
    CHECK(near_lr);
  }
  // decision onsets exist whenever the walk turned at a 4-way junction
  int turns = 0;
  for (const auto& j : split.train.episode(0).junctions())
    if (j.had_left && j.had_right && std::fabs(j.turn_deg) > 45.0) ++turns;
  if (turns > 0) CHECK(!windows.empty());
}

TEST_CASE("sign accuracy is exact for an oracle and for an anti-oracle") {
  train::LoadedSplit split = train::open_split(shared_dataset());
  std::vector<SampleRef> refs = split.train.all();
  auto windows = train::decision_windows(split.train, refs);
  if (windows.empty()) return;  // the shared walk made no two-sided turns

  ModelConfig mc;
  mc.kind = ModelKind::can_only;
  DrivingModel m(mc, 75);
  for (ad::Param& p : m.params().all())
    if (p.name != "target_stats") p.value.assign(p.value.size(), 0.0);

  // bias-only model: predicts the stats mean for every window
  m.set_target_stats(100.0, 1.0, 30.0, 1.0);  // always +100 deg: sign = right
  train::SignAccuracy right = train::eval_sign_accuracy(m, split.train, windows);
  m.set_target_stats(-100.0, 1.0, 30.0, 1.0);
  train::SignAccuracy left = train::eval_sign_accuracy(m, split.train, windows);
  CHECK(right.n == windows.size());
  CHECK(right.correct + left.correct == windows.size());
  CHECK(right.accuracy == doctest::Approx(1.0 - left.accuracy));
}

TEST_CASE("the ablation grid spans cameras, planners, and past states") {
  auto grid = train::ablation_grid(16);
  REQUIRE(grid.size() == 12);
  std::set<std::string> names;
  int surround = 0, with_planner = 0, with_past = 0;
  for (const auto& g : grid) {
    names.insert(g.name);
    g.config.validate();
    CHECK(g.config.image_size == 16);
    if (g.config.cameras.size() == 4) ++surround;
    if (g.config.planner != PlannerKind::none) ++with_planner;
    if (g.config.use_past_states) ++with_past;
  }
  CHECK(names.size() == 12);
  CHECK(surround == 6);
  CHECK(with_planner == 8);
  CHECK(with_past == 6);
  CHECK(names.count("front-matrix") == 1);
  CHECK(names.count("surround-map-past") == 1);
}

TEST_CASE("reports are deterministic") {
  TempDir tmp("report");
  train::LoadedSplit split = train::open_split(shared_dataset());
  std::vector<SampleRef> refs = split.eval.all();
  DrivingModel m(tiny_cfg(), 76);
  m.set_target_stats(0.0, 30.0, 30.0, 10.0);

  train::write_report(tmp.path + "/a", m, split.eval, refs);
  train::write_report(tmp.path + "/b", m, split.eval, refs);
  std::string a = read_file(tmp.path + "/a/report.html");
  CHECK(a == read_file(tmp.path + "/b/report.html"));
  CHECK(read_file(tmp.path + "/a/contact_sheet.ppm") ==
        read_file(tmp.path + "/b/contact_sheet.ppm"));
  CHECK(a.find("steering mse") != std::string::npos);
  CHECK(a.find("contact_sheet.ppm") != std::string::npos);
}
