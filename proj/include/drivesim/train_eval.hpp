#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "drivesim/dataset.hpp"
#include "drivesim/driving_model.hpp"

namespace drivesim::train {

class TrainError : public Error {
 public:
  using Error::Error;
};

struct SampleRef {
  int episode = 0;
  int idx = 0;
};

/// Episodes loaded for training/eval; frames decode lazily inside each
/// EpisodeData and stay cached, so feature extraction is cheap per model.
class DatasetView {
 public:
  explicit DatasetView(std::vector<std::string> dirs);

  size_t n_episodes() const { return episodes_.size(); }
  size_t n_samples() const;
  const data::EpisodeData& episode(size_t i) const { return episodes_.at(i); }
  const data::SampleRow& row(SampleRef r) const;
  model::Features features(SampleRef r, const model::ModelConfig& cfg) const;
  std::vector<SampleRef> all() const;

 private:
  std::vector<data::EpisodeData> episodes_;
};

/// Loads splits.json, checks train/eval episode disjointness, and opens both
/// sides. Throws TrainError if an episode appears on both sides.
struct LoadedSplit {
  DatasetView train;
  DatasetView eval;
};
LoadedSplit open_split(const std::string& root);

/// Label mean/std over a sample set, stds floored away from zero.
struct TargetStats {
  double steering_mean = 0, steering_std = 1;
  double speed_mean = 0, speed_std = 1;
};
TargetStats compute_target_stats(const DatasetView& view, const std::vector<SampleRef>& refs);

struct TrainConfig {
  double lr = 1e-4;
  int batch_size = 16;
  int epochs = 5;
  int max_steps = 0;  // 0 = run every epoch to completion
  double lambda = 1.0;
  uint64_t seed = 0;  // shuffle order
  double divergence_loss = 1e8;
  std::string checkpoint_dir;  // when set: model checkpoint + loss curve CSV
  bool verbose = false;
};

struct TrainStats {
  int steps = 0;
  double initial_loss = 0;
  double final_epoch_loss = 0;
  std::vector<double> epoch_loss;
  std::vector<std::pair<int, double>> step_loss;  // (step, loss) every step
};

/// Adam training over shuffled minibatches. Computes target stats from the
/// given refs, writes them into the model, and aborts on divergence.
TrainStats train_model(model::DrivingModel& m, const DatasetView& view,
                       const std::vector<SampleRef>& refs, const TrainConfig& cfg);

struct EvalMetrics {
  size_t n = 0;
  double steering_mse = 0, speed_mse = 0;  // raw deg^2 / (km/h)^2
  double steering_mae = 0, speed_mae = 0;
  double label_steering_var = 0, label_speed_var = 0;
};
EvalMetrics evaluate(model::DrivingModel& m, const DatasetView& view,
                     const std::vector<SampleRef>& refs, int batch_size = 32);

/// Samples whose current (t=0 history slot) speed is at most kmh.
std::vector<SampleRef> filter_speed_at_most(const DatasetView& view,
                                            const std::vector<SampleRef>& refs, double kmh);
/// Samples within radius_m of any junction along the episode route.
std::vector<SampleRef> filter_near_junction(const DatasetView& view,
                                            const std::vector<SampleRef>& refs,
                                            double radius_m = 20.0);
/// Samples within radius_m of a junction where cross traffic was placed.
std::vector<SampleRef> filter_near_blocked_junction(const DatasetView& view,
                                                    const std::vector<SampleRef>& refs,
                                                    double radius_m = 20.0);

/// A junction decision onset: the car is still roughly straight now but the
/// label says it is committed to a turn 0.3 s ahead, at a junction offering
/// both a left and a right exit. Only samples on the approach side of the
/// node count, so post-turn corrections cannot fake a window. The planner
/// input is the only signal that disambiguates the direction.
struct DecisionWindow {
  SampleRef ref;
  double label_steering = 0;  // raw degrees, sign = direction
  double current_steering = 0;
};
std::vector<DecisionWindow> decision_windows(const DatasetView& view,
                                             const std::vector<SampleRef>& refs,
                                             double onset_deg = 10.0, double commit_deg = 15.0,
                                             double before_m = 20.0, double after_m = 2.0);

struct SignAccuracy {
  size_t n = 0;
  size_t correct = 0;
  double accuracy = 0;
  double steering_mse = 0;  // raw deg^2 over the windows
};
SignAccuracy eval_sign_accuracy(model::DrivingModel& m, const DatasetView& view,
                                const std::vector<DecisionWindow>& windows,
                                int batch_size = 32);

/// The 12 standard ablations: {front, surround} x {none, matrix, map_image}
/// x {with, without} past vehicle states.
struct GridSpec {
  std::string name;
  model::ModelConfig config;
};
std::vector<GridSpec> ablation_grid(int image_size);

/// Deterministic HTML evaluation report plus a PPM contact sheet of the
/// first rows' front-camera frames.
struct ReportConfig {
  int max_rows = 8;
  std::string title = "evaluation report";
};
void write_report(const std::string& out_dir, model::DrivingModel& m,
                  const DatasetView& view, const std::vector<SampleRef>& refs,
                  const ReportConfig& rc = {});

}  // namespace drivesim::train
