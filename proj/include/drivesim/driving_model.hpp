#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "drivesim/autodiff.hpp"
#include "drivesim/dataset.hpp"

namespace drivesim::model {

class ConfigError : public Error {
 public:
  using Error::Error;
};

enum class PlannerKind { none, matrix, map_image };
enum class ModelKind { driving, can_only };

const char* to_string(PlannerKind k);
const char* to_string(ModelKind k);
PlannerKind planner_from_string(const std::string& s);

struct ModelConfig {
  ModelKind kind = ModelKind::driving;
  std::vector<int> cameras = {0};  // 0 front, 1 left, 2 right, 3 rear
  PlannerKind planner = PlannerKind::none;
  bool use_past_states = true;
  int history = 4;      // camera timesteps fed to the LSTMs
  int image_size = 64;  // square input images
  std::vector<int> cnn_channels = {8, 16, 32, 64};
  std::vector<int> fc_dims = {64, 64};
  int lstm_layers = 4;
  int lstm_hidden = 128;
  int planner_fc = 128;
  // input normalization denominators
  double steering_scale = 720.0;
  double speed_scale = 180.0;
  double loc_scale = 30.0;
  double matrix_scale = 150.0;

  void validate() const;
  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

/// One sample, already normalized for the network.
struct Features {
  std::vector<std::vector<std::vector<double>>> camera;  // [cam][step][3*S*S planes]
  std::vector<double> planner_matrix;                    // 600 values
  std::vector<double> planner_image;                     // 3*S*S planes
  std::vector<double> steering_hist;                     // history values
  std::vector<double> speed_hist;
  std::vector<double> loc;  // (x,y) per history step
  double label_steering = 0.0;  // raw degrees
  double label_speed = 0.0;     // raw km/h
};

/// Normalize one dataset sample into network features per the model config.
Features make_features(const data::EpisodeData& ep, const data::SampleRow& row,
                       const ModelConfig& cfg);

struct Prediction {
  double steering_deg = 0.0;
  double speed_kmh = 0.0;
};

/// Surround-view driving network: per-camera CNN+FC into a per-camera
/// stacked LSTM over the frame history, fused with the primary camera's
/// current-frame feature, the route-planner feature, and the past vehicle
/// states, into twin regression heads for the future steering angle and
/// speed. Targets are standardized with stats stored in the checkpoint.
class DrivingModel {
 public:
  DrivingModel(const ModelConfig& cfg, uint64_t seed);
  DrivingModel(const ModelConfig& cfg, ad::ParamStore params);

  const ModelConfig& config() const { return cfg_; }
  ad::ParamStore& params() { return params_; }
  const ad::ParamStore& params() const { return params_; }

  /// Standardized predictions [N,2] (steering, speed).
  ad::Tensor forward(ad::Tape& t, const std::vector<Features>& batch);
  /// Joint L2 in standardized target space, mean over the batch per head;
  /// the speed head is weighted by lambda.
  ad::Tensor loss(ad::Tape& t, const std::vector<Features>& batch, double lambda = 1.0);

  /// Denormalized, clamped to the physical signal ranges.
  std::vector<Prediction> predict(const std::vector<Features>& batch);

  void set_target_stats(double s_mean, double s_std, double v_mean, double v_std);
  std::vector<double> target_stats() const;

  void save(const std::string& path_prefix) const;
  static DrivingModel load(const std::string& path_prefix);

 private:
  ad::Tensor camera_branch(ad::Tape& t, int slot, const std::vector<Features>& batch,
                           ad::Tensor* current_feature);
  ad::Tensor cnn_fc(ad::Tape& t, const std::string& prefix, ad::Tensor img,
                    bool keep_layout = false);

  ModelConfig cfg_;
  ad::ParamStore params_;
};

}  // namespace drivesim::model
