#include "drivesim/driving_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

namespace drivesim::model {

namespace {

constexpr int kMatrixDim = geo::RouteMatrix::kRows * 2;

std::string cam_prefix(int cam_id) { return "cam" + std::to_string(cam_id); }

std::vector<double> image_planes(const sim::Image& img) {
  std::vector<double> out(size_t(3) * img.width * img.height);
  size_t n = size_t(img.width) * img.height;
  for (int c = 0; c < 3; ++c)
    for (size_t i = 0; i < n; ++i)
      out[c * n + i] = img.pixels[i * 3 + c] / 255.0 - 0.5;
  return out;
}

/// Leaves created once per forward pass so each parameter maps to a single
/// tape node regardless of how many ops consume it.
struct LeafCache {
  ad::Tape& tape;
  ad::ParamStore& store;
  std::map<std::string, ad::Tensor> cache;

  ad::Tensor operator()(const std::string& name) {
    auto it = cache.find(name);
    if (it != cache.end()) return it->second;
    ad::Tensor leaf = store.leaf(tape, name);
    cache.emplace(name, leaf);
    return leaf;
  }
};

// Spatial size left after the stride-2 conv stack (3x3, pad 1).
int conv_out_size(int image_size, size_t layers) {
  int s = image_size;
  for (size_t i = 0; i < layers; ++i) s = (s - 1) / 2 + 1;
  return s;
}

void build_cnn_params(ad::ParamStore& ps, const std::string& prefix,
                      const std::vector<int>& channels, const std::vector<int>& fc_dims,
                      Rng& rng, int fc_in = 0) {
  int in_ch = 3;
  for (size_t i = 0; i < channels.size(); ++i) {
    int out_ch = channels[i];
    std::string base = prefix + "_conv" + std::to_string(i);
    ps.add_uniform(base + "_w", ad::Shape{{out_ch, in_ch, 3, 3}}, rng,
                   ad::glorot_bound(in_ch * 9, out_ch * 9));
    ps.add(base + "_b", ad::Shape{{out_ch}}, std::vector<double>(out_ch, 0.0));
    in_ch = out_ch;
  }
  int dim = fc_in > 0 ? fc_in : in_ch;
  for (size_t i = 0; i < fc_dims.size(); ++i) {
    int out = fc_dims[i];
    std::string base = prefix + "_fc" + std::to_string(i);
    ps.add_uniform(base + "_w", ad::Shape{{dim, out}}, rng, ad::glorot_bound(dim, out));
    ps.add(base + "_b", ad::Shape{{out}}, std::vector<double>(out, 0.0));
    dim = out;
  }
}

void build_lstm_params(ad::ParamStore& ps, const std::string& prefix, int input_dim,
                       int hidden, int layers, Rng& rng) {
  for (int l = 0; l < layers; ++l) {
    int in = l == 0 ? input_dim : hidden;
    std::string base = prefix + "_lstm" + std::to_string(l);
    ps.add_uniform(base + "_wx", ad::Shape{{in, 4 * hidden}}, rng,
                   ad::glorot_bound(in, 4 * hidden));
    ps.add_uniform(base + "_wh", ad::Shape{{hidden, 4 * hidden}}, rng,
                   ad::glorot_bound(hidden, 4 * hidden));
    // forget-gate bias starts at 1 so early training keeps cell memory
    std::vector<double> b(size_t(4) * hidden, 0.0);
    for (int i = hidden; i < 2 * hidden; ++i) b[i] = 1.0;
    ps.add(base + "_b", ad::Shape{{4 * hidden}}, std::move(b));
  }
}

void build_fc_params(ad::ParamStore& ps, const std::string& base, int in, int out, Rng& rng) {
  ps.add_uniform(base + "_w", ad::Shape{{in, out}}, rng, ad::glorot_bound(in, out));
  ps.add(base + "_b", ad::Shape{{out}}, std::vector<double>(out, 0.0));
}

ad::ParamStore build_params(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  ad::ParamStore ps;
  Rng rng(seed);
  int fused = 0;
  if (cfg.kind == ModelKind::can_only) {
    build_fc_params(ps, "can_fc0", 2 * cfg.history, 64, rng);
    build_fc_params(ps, "can_fc1", 64, 64, rng);
    fused = 64;
  } else {
    int frame_feat = cfg.fc_dims.back();
    for (int cam_id : cfg.cameras) {
      build_cnn_params(ps, cam_prefix(cam_id), cfg.cnn_channels, cfg.fc_dims, rng);
      build_lstm_params(ps, cam_prefix(cam_id), frame_feat, cfg.lstm_hidden,
                        cfg.lstm_layers, rng);
      fused += cfg.lstm_hidden;
    }
    fused += frame_feat;  // primary camera, current frame
    if (cfg.planner == PlannerKind::matrix) {
      build_fc_params(ps, "planner_fc", kMatrixDim, cfg.planner_fc, rng);
      fused += cfg.planner_fc;
    } else if (cfg.planner == PlannerKind::map_image) {
      // The map frame encodes the route by where the line sits in the image,
      // so this branch keeps the spatial layout instead of pooling it away.
      int s = conv_out_size(cfg.image_size, cfg.cnn_channels.size());
      build_cnn_params(ps, "map", cfg.cnn_channels, {cfg.planner_fc}, rng,
                       cfg.cnn_channels.back() * s * s);
      fused += cfg.planner_fc;
    }
    if (cfg.use_past_states) {
      build_fc_params(ps, "past_fc", 4 * cfg.history, 64, rng);
      fused += 64;
    }
  }
  build_fc_params(ps, "head_steering_fc", fused, 64, rng);
  build_fc_params(ps, "head_steering_out", 64, 1, rng);
  build_fc_params(ps, "head_speed_fc", fused, 64, rng);
  build_fc_params(ps, "head_speed_out", 64, 1, rng);
  ps.add("target_stats", ad::Shape{{4}}, {0.0, 1.0, 0.0, 1.0});
  return ps;
}

ad::Tensor fc_relu(ad::Tensor x, LeafCache& leaf, const std::string& base) {
  return ad::relu(ad::affine(x, leaf(base + "_w"), leaf(base + "_b")));
}

}  // namespace

const char* to_string(PlannerKind k) {
  switch (k) {
    case PlannerKind::none: return "none";
    case PlannerKind::matrix: return "matrix";
    case PlannerKind::map_image: return "map_image";
  }
  return "none";
}

const char* to_string(ModelKind k) {
  return k == ModelKind::can_only ? "can_only" : "driving";
}

PlannerKind planner_from_string(const std::string& s) {
  if (s == "none") return PlannerKind::none;
  if (s == "matrix") return PlannerKind::matrix;
  if (s == "map_image") return PlannerKind::map_image;
  throw ConfigError("unknown planner kind: " + s);
}

void ModelConfig::validate() const {
  if (history < 1 || history > 4) throw ConfigError("history must be in [1,4]");
  if (kind == ModelKind::can_only) {
    if (!use_past_states) throw ConfigError("can_only model requires past states");
    return;
  }
  if (cameras.empty()) throw ConfigError("driving model needs at least one camera");
  for (int c : cameras) {
    if (c < 0 || c >= 4) throw ConfigError("camera index out of range: " + std::to_string(c));
    if (std::count(cameras.begin(), cameras.end(), c) > 1)
      throw ConfigError("duplicate camera index: " + std::to_string(c));
  }
  if (cnn_channels.empty() || fc_dims.empty())
    throw ConfigError("cnn_channels and fc_dims must be non-empty");
  if (image_size < (1 << cnn_channels.size()))
    throw ConfigError("image_size too small for the conv stack depth");
  if (lstm_layers < 1 || lstm_hidden < 1) throw ConfigError("invalid lstm dims");
  if (planner_fc < 1) throw ConfigError("invalid planner_fc");
  if (steering_scale <= 0 || speed_scale <= 0 || loc_scale <= 0 || matrix_scale <= 0)
    throw ConfigError("normalization scales must be positive");
}

std::string ModelConfig::to_json() const {
  nlohmann::ordered_json j;
  j["kind"] = to_string(kind);
  j["cameras"] = cameras;
  j["planner"] = to_string(planner);
  j["use_past_states"] = use_past_states;
  j["history"] = history;
  j["image_size"] = image_size;
  j["cnn_channels"] = cnn_channels;
  j["fc_dims"] = fc_dims;
  j["lstm_layers"] = lstm_layers;
  j["lstm_hidden"] = lstm_hidden;
  j["planner_fc"] = planner_fc;
  j["steering_scale"] = steering_scale;
  j["speed_scale"] = speed_scale;
  j["loc_scale"] = loc_scale;
  j["matrix_scale"] = matrix_scale;
  return j.dump(2);
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("bad model config json: ") + e.what());
  }
  ModelConfig cfg;
  std::string kind = j.value("kind", "driving");
  if (kind == "can_only") cfg.kind = ModelKind::can_only;
  else if (kind == "driving") cfg.kind = ModelKind::driving;
  else throw ConfigError("unknown model kind: " + kind);
  cfg.cameras = j.value("cameras", cfg.cameras);
  cfg.planner = planner_from_string(j.value("planner", "none"));
  cfg.use_past_states = j.value("use_past_states", cfg.use_past_states);
  cfg.history = j.value("history", cfg.history);
  cfg.image_size = j.value("image_size", cfg.image_size);
  cfg.cnn_channels = j.value("cnn_channels", cfg.cnn_channels);
  cfg.fc_dims = j.value("fc_dims", cfg.fc_dims);
  cfg.lstm_layers = j.value("lstm_layers", cfg.lstm_layers);
  cfg.lstm_hidden = j.value("lstm_hidden", cfg.lstm_hidden);
  cfg.planner_fc = j.value("planner_fc", cfg.planner_fc);
  cfg.steering_scale = j.value("steering_scale", cfg.steering_scale);
  cfg.speed_scale = j.value("speed_scale", cfg.speed_scale);
  cfg.loc_scale = j.value("loc_scale", cfg.loc_scale);
  cfg.matrix_scale = j.value("matrix_scale", cfg.matrix_scale);
  cfg.validate();
  return cfg;
}

Features make_features(const data::EpisodeData& ep, const data::SampleRow& row,
                       const ModelConfig& cfg) {
  cfg.validate();
  Features f;
  int start = 4 - cfg.history;  // most recent cfg.history entries
  f.steering_hist.assign(cfg.history, 0.0);
  f.speed_hist.assign(cfg.history, 0.0);
  f.loc.assign(size_t(2) * cfg.history, 0.0);
  for (int i = 0; i < cfg.history; ++i) {
    f.steering_hist[i] = row.steering_hist[start + i] / cfg.steering_scale;
    f.speed_hist[i] = row.speed_hist[start + i] / cfg.speed_scale;
    f.loc[2 * i] = row.loc_x[start + i] / cfg.loc_scale;
    f.loc[2 * i + 1] = row.loc_y[start + i] / cfg.loc_scale;
  }
  f.label_steering = row.label_steering;
  f.label_speed = row.label_speed;
  if (cfg.kind == ModelKind::can_only) return f;

  f.camera.resize(cfg.cameras.size());
  for (size_t s = 0; s < cfg.cameras.size(); ++s) {
    f.camera[s].resize(cfg.history);
    for (int i = 0; i < cfg.history; ++i) {
      const sim::Image& img = ep.camera(cfg.cameras[s], row.cam_tick[start + i]);
      if (img.width != cfg.image_size || img.height != cfg.image_size)
        throw ConfigError("camera frame is " + std::to_string(img.width) + "x" +
                          std::to_string(img.height) + " but the model expects " +
                          std::to_string(cfg.image_size));
      f.camera[s][i] = image_planes(img);
    }
  }
  if (cfg.planner == PlannerKind::matrix) {
    const geo::RouteMatrix& m = ep.route_matrix(row.planner_tick);
    f.planner_matrix.resize(kMatrixDim);
    for (int i = 0; i < geo::RouteMatrix::kRows; ++i) {
      f.planner_matrix[2 * i] = m.points[i].x / cfg.matrix_scale;
      f.planner_matrix[2 * i + 1] = m.points[i].y / cfg.matrix_scale;
    }
  } else if (cfg.planner == PlannerKind::map_image) {
    const sim::Image& img = ep.map_image(row.planner_tick);
    if (img.width != cfg.image_size || img.height != cfg.image_size)
      throw ConfigError("map frame size does not match the model image_size");
    f.planner_image = image_planes(img);
  }
  return f;
}

DrivingModel::DrivingModel(const ModelConfig& cfg, uint64_t seed)
    : cfg_(cfg), params_(build_params(cfg, seed)) {}

DrivingModel::DrivingModel(const ModelConfig& cfg, ad::ParamStore params)
    : cfg_(cfg), params_(std::move(params)) {
  ad::ParamStore expect = build_params(cfg, 0);
  if (expect.all().size() != params_.all().size())
    throw ConfigError("checkpoint does not match the model config: parameter count");
  for (size_t i = 0; i < expect.all().size(); ++i) {
    const ad::Param& a = expect.all()[i];
    const ad::Param& b = params_.all()[i];
    if (a.name != b.name || !(a.shape == b.shape))
      throw ConfigError("checkpoint does not match the model config at " + a.name);
  }
}

ad::Tensor DrivingModel::cnn_fc(ad::Tape& t, const std::string& prefix, ad::Tensor img,
                                bool keep_layout) {
  LeafCache leaf{t, params_, {}};
  ad::Tensor x = img;
  for (size_t i = 0; params_.has(prefix + "_conv" + std::to_string(i) + "_w"); ++i) {
    std::string base = prefix + "_conv" + std::to_string(i);
    x = ad::relu(ad::conv2d(x, leaf(base + "_w"), leaf(base + "_b"), 2, 1));
  }
  int n = x.shape[0], c = x.shape[1], hw = x.shape[2] * x.shape[3];
  if (keep_layout) {
    x = ad::reshape(x, ad::Shape{{n, c * hw}});
  } else {
    ad::Tensor pool_w = ad::constant(t, ad::Shape{{hw, 1}},
                                     std::vector<double>(hw, 1.0 / hw));
    x = ad::reshape(ad::matmul(ad::reshape(x, ad::Shape{{n * c, hw}}), pool_w),
                    ad::Shape{{n, c}});
  }
  for (size_t i = 0; params_.has(prefix + "_fc" + std::to_string(i) + "_w"); ++i)
    x = fc_relu(x, leaf, prefix + "_fc" + std::to_string(i));
  return x;
}

ad::Tensor DrivingModel::camera_branch(ad::Tape& t, int slot,
                                       const std::vector<Features>& batch,
                                       ad::Tensor* current_feature) {
  int n = int(batch.size());
  int s = cfg_.image_size;
  std::string prefix = cam_prefix(cfg_.cameras[slot]);
  LeafCache leaf{t, params_, {}};

  std::vector<ad::LstmLayerRefs> lstm(cfg_.lstm_layers);
  std::vector<ad::Tensor> h(cfg_.lstm_layers), c(cfg_.lstm_layers);
  for (int l = 0; l < cfg_.lstm_layers; ++l) {
    std::string base = prefix + "_lstm" + std::to_string(l);
    lstm[l] = {leaf(base + "_wx"), leaf(base + "_wh"), leaf(base + "_b")};
    h[l] = ad::zeros(t, ad::Shape{{n, cfg_.lstm_hidden}});
    c[l] = ad::zeros(t, ad::Shape{{n, cfg_.lstm_hidden}});
  }

  for (int step = 0; step < cfg_.history; ++step) {
    std::vector<double> pixels;
    pixels.reserve(size_t(n) * 3 * s * s);
    for (const Features& f : batch) {
      const std::vector<double>& planes = f.camera.at(slot).at(step);
      pixels.insert(pixels.end(), planes.begin(), planes.end());
    }
    ad::Tensor img = ad::constant(t, ad::Shape{{n, 3, s, s}}, std::move(pixels));
    ad::Tensor feat = cnn_fc(t, prefix, img);
    if (step == cfg_.history - 1 && current_feature) *current_feature = feat;
    ad::Tensor x = feat;
    for (int l = 0; l < cfg_.lstm_layers; ++l) {
      auto [hn, cn] = ad::lstm_step(x, h[l], c[l], lstm[l]);
      h[l] = hn;
      c[l] = cn;
      x = hn;
    }
  }
  return h[cfg_.lstm_layers - 1];
}

ad::Tensor DrivingModel::forward(ad::Tape& t, const std::vector<Features>& batch) {
  if (batch.empty()) throw ConfigError("forward needs a non-empty batch");
  int n = int(batch.size());
  LeafCache leaf{t, params_, {}};
  ad::Tensor fused;

  if (cfg_.kind == ModelKind::can_only) {
    std::vector<double> v;
    v.reserve(size_t(n) * 2 * cfg_.history);
    for (const Features& f : batch) {
      v.insert(v.end(), f.steering_hist.begin(), f.steering_hist.end());
      v.insert(v.end(), f.speed_hist.begin(), f.speed_hist.end());
    }
    ad::Tensor x = ad::constant(t, ad::Shape{{n, 2 * cfg_.history}}, std::move(v));
    x = fc_relu(x, leaf, "can_fc0");
    fused = fc_relu(x, leaf, "can_fc1");
  } else {
    std::vector<ad::Tensor> parts;
    ad::Tensor front_now;
    for (size_t slot = 0; slot < cfg_.cameras.size(); ++slot)
      parts.push_back(camera_branch(t, int(slot), batch, slot == 0 ? &front_now : nullptr));
    parts.push_back(front_now);
    if (cfg_.planner == PlannerKind::matrix) {
      std::vector<double> v;
      v.reserve(size_t(n) * kMatrixDim);
      for (const Features& f : batch) {
        if (int(f.planner_matrix.size()) != kMatrixDim)
          throw ConfigError("sample lacks the route planner matrix");
        v.insert(v.end(), f.planner_matrix.begin(), f.planner_matrix.end());
      }
      ad::Tensor x = ad::constant(t, ad::Shape{{n, kMatrixDim}}, std::move(v));
      parts.push_back(fc_relu(x, leaf, "planner_fc"));
    } else if (cfg_.planner == PlannerKind::map_image) {
      int s = cfg_.image_size;
      std::vector<double> v;
      v.reserve(size_t(n) * 3 * s * s);
      for (const Features& f : batch) {
        if (int(f.planner_image.size()) != 3 * s * s)
          throw ConfigError("sample lacks the planner map frame");
        v.insert(v.end(), f.planner_image.begin(), f.planner_image.end());
      }
      ad::Tensor img = ad::constant(t, ad::Shape{{n, 3, s, s}}, std::move(v));
      parts.push_back(cnn_fc(t, "map", img, /*keep_layout=*/true));
    }
    if (cfg_.use_past_states) {
      std::vector<double> v;
      v.reserve(size_t(n) * 4 * cfg_.history);
      for (const Features& f : batch) {
        v.insert(v.end(), f.steering_hist.begin(), f.steering_hist.end());
        v.insert(v.end(), f.speed_hist.begin(), f.speed_hist.end());
        v.insert(v.end(), f.loc.begin(), f.loc.end());
      }
      ad::Tensor x = ad::constant(t, ad::Shape{{n, 4 * cfg_.history}}, std::move(v));
      parts.push_back(fc_relu(x, leaf, "past_fc"));
    }
    fused = parts.size() == 1 ? parts[0] : ad::concat(parts, 1);
  }

  ad::Tensor hs = fc_relu(fused, leaf, "head_steering_fc");
  ad::Tensor out_s = ad::affine(hs, leaf("head_steering_out_w"), leaf("head_steering_out_b"));
  ad::Tensor hv = fc_relu(fused, leaf, "head_speed_fc");
  ad::Tensor out_v = ad::affine(hv, leaf("head_speed_out_w"), leaf("head_speed_out_b"));
  return ad::concat({out_s, out_v}, 1);
}

ad::Tensor DrivingModel::loss(ad::Tape& t, const std::vector<Features>& batch,
                              double lambda) {
  ad::Tensor pred = forward(t, batch);
  std::vector<double> stats = target_stats();
  int n = int(batch.size());
  std::vector<double> ts(n), tv(n);
  for (int i = 0; i < n; ++i) {
    ts[i] = (batch[i].label_steering - stats[0]) / stats[1];
    tv[i] = (batch[i].label_speed - stats[2]) / stats[3];
  }
  ad::Tensor target_s = ad::constant(t, ad::Shape{{n, 1}}, std::move(ts));
  ad::Tensor target_v = ad::constant(t, ad::Shape{{n, 1}}, std::move(tv));
  ad::Tensor loss_s = ad::mse(ad::slice(pred, 1, 0, 1), target_s);
  ad::Tensor loss_v = ad::mse(ad::slice(pred, 1, 1, 1), target_v);
  return ad::add(loss_s, ad::scale(loss_v, lambda));
}

std::vector<Prediction> DrivingModel::predict(const std::vector<Features>& batch) {
  ad::Tape t;
  ad::Tensor pred = forward(t, batch);
  std::vector<double> stats = target_stats();
  std::vector<Prediction> out(batch.size());
  for (size_t i = 0; i < batch.size(); ++i) {
    double s = pred.val()[2 * i] * stats[1] + stats[0];
    double v = pred.val()[2 * i + 1] * stats[3] + stats[2];
    out[i].steering_deg = std::clamp(s, -720.0, 720.0);
    out[i].speed_kmh = std::clamp(v, 0.0, 180.0);
  }
  return out;
}

void DrivingModel::set_target_stats(double s_mean, double s_std, double v_mean,
                                    double v_std) {
  if (s_std <= 0 || v_std <= 0) throw ConfigError("target stds must be positive");
  params_.at("target_stats").value = {s_mean, s_std, v_mean, v_std};
}

std::vector<double> DrivingModel::target_stats() const {
  return params_.at("target_stats").value;
}

void DrivingModel::save(const std::string& path_prefix) const {
  params_.save(path_prefix + ".params");
  std::ofstream out(path_prefix + ".json", std::ios::binary);
  if (!out) throw Error("cannot write " + path_prefix + ".json");
  out << cfg_.to_json() << "\n";
}

DrivingModel DrivingModel::load(const std::string& path_prefix) {
  std::ifstream in(path_prefix + ".json", std::ios::binary);
  if (!in) throw Error("cannot read " + path_prefix + ".json");
  std::stringstream ss;
  ss << in.rdbuf();
  ModelConfig cfg = ModelConfig::from_json(ss.str());
  return DrivingModel(cfg, ad::ParamStore::load(path_prefix + ".params"));
}

}  // namespace drivesim::model
