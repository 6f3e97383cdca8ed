#include "drivesim/train_eval.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <cstdio>

namespace drivesim::train {

namespace {

void shuffle_refs(std::vector<SampleRef>& refs, Rng& rng) {
  for (size_t i = refs.size(); i > 1; --i)
    std::swap(refs[i - 1], refs[rng.uniform_int(i)]);
}

std::vector<model::Features> gather(const DatasetView& view,
                                    const std::vector<SampleRef>& refs, size_t begin,
                                    size_t end, const model::ModelConfig& cfg) {
  std::vector<model::Features> batch;
  batch.reserve(end - begin);
  for (size_t i = begin; i < end; ++i) batch.push_back(view.features(refs[i], cfg));
  return batch;
}

}  // namespace

DatasetView::DatasetView(std::vector<std::string> dirs) {
  episodes_.reserve(dirs.size());
  for (const std::string& d : dirs) episodes_.emplace_back(d);
}

size_t DatasetView::n_samples() const {
  size_t n = 0;
  for (const auto& ep : episodes_) n += ep.samples().size();
  return n;
}

const data::SampleRow& DatasetView::row(SampleRef r) const {
  return episodes_.at(r.episode).samples().at(r.idx);
}

model::Features DatasetView::features(SampleRef r, const model::ModelConfig& cfg) const {
  return model::make_features(episodes_.at(r.episode), row(r), cfg);
}

std::vector<SampleRef> DatasetView::all() const {
  std::vector<SampleRef> refs;
  refs.reserve(n_samples());
  for (size_t e = 0; e < episodes_.size(); ++e)
    for (size_t i = 0; i < episodes_[e].samples().size(); ++i)
      refs.push_back({int(e), int(i)});
  return refs;
}

LoadedSplit open_split(const std::string& root) {
  data::DatasetSplit split = data::load_split(root);
  std::set<std::string> train(split.train_dirs.begin(), split.train_dirs.end());
  for (const std::string& d : split.eval_dirs)
    if (train.count(d))
      throw TrainError("split is not disjoint: " + d + " is in both train and eval");
  return LoadedSplit{DatasetView(split.train_dirs), DatasetView(split.eval_dirs)};
}

TargetStats compute_target_stats(const DatasetView& view,
                                 const std::vector<SampleRef>& refs) {
  if (refs.empty()) throw TrainError("cannot compute target stats over zero samples");
  double ms = 0, mv = 0;
  for (const SampleRef& r : refs) {
    ms += view.row(r).label_steering;
    mv += view.row(r).label_speed;
  }
  ms /= refs.size();
  mv /= refs.size();
  double vs = 0, vv = 0;
  for (const SampleRef& r : refs) {
    double ds = view.row(r).label_steering - ms, dv = view.row(r).label_speed - mv;
    vs += ds * ds;
    vv += dv * dv;
  }
  TargetStats st;
  st.steering_mean = ms;
  st.speed_mean = mv;
  st.steering_std = std::max(std::sqrt(vs / refs.size()), 1e-3);
  st.speed_std = std::max(std::sqrt(vv / refs.size()), 1e-3);
  return st;
}

TrainStats train_model(model::DrivingModel& m, const DatasetView& view,
                       const std::vector<SampleRef>& refs, const TrainConfig& cfg) {
  if (refs.empty()) throw TrainError("training set is empty");
  if (cfg.batch_size < 1) throw TrainError("batch_size must be positive");

  TargetStats st = compute_target_stats(view, refs);
  m.set_target_stats(st.steering_mean, st.steering_std, st.speed_mean, st.speed_std);

  TrainStats stats;
  std::vector<SampleRef> order = refs;
  Rng shuffle_rng(Rng(cfg.seed).derive(41).next_u64());
  bool done = false;
  for (int epoch = 0; epoch < cfg.epochs && !done; ++epoch) {
    shuffle_refs(order, shuffle_rng);
    double epoch_sum = 0;
    int epoch_steps = 0;
    for (size_t at = 0; at < order.size() && !done; at += cfg.batch_size) {
      size_t end = std::min(order.size(), at + cfg.batch_size);
      std::vector<model::Features> batch = gather(view, order, at, end, m.config());
      ad::Tape t;
      ad::Tensor loss = m.loss(t, batch, cfg.lambda);
      double l = loss.val()[0];
      if (!std::isfinite(l) || l > cfg.divergence_loss)
        throw TrainError(strf("training diverged at step %d: loss=%g", stats.steps, l));
      m.params().zero_grads();
      t.backward(loss.id);
      m.params().adam_step(cfg.lr);

      if (stats.steps == 0) stats.initial_loss = l;
      stats.step_loss.emplace_back(stats.steps, l);
      epoch_sum += l;
      ++epoch_steps;
      ++stats.steps;
      if (cfg.verbose && stats.steps % 50 == 0)
        std::fprintf(stderr, "  step %d loss %.6f\n", stats.steps, l);
      if (cfg.max_steps > 0 && stats.steps >= cfg.max_steps) done = true;
    }
    if (epoch_steps > 0) {
      stats.epoch_loss.push_back(epoch_sum / epoch_steps);
      stats.final_epoch_loss = stats.epoch_loss.back();
      if (cfg.verbose)
        std::fprintf(stderr, "epoch %d mean loss %.6f\n", epoch, stats.epoch_loss.back());
    }
  }

  if (!cfg.checkpoint_dir.empty()) {
    std::filesystem::create_directories(cfg.checkpoint_dir);
    m.save(cfg.checkpoint_dir + "/model");
    std::ostringstream curve;
    curve << "step,loss\n";
    for (auto& [s, l] : stats.step_loss) curve << s << "," << strf("%.9f", l) << "\n";
    write_file(cfg.checkpoint_dir + "/train_curve.csv", curve.str());
  }
  return stats;
}

EvalMetrics evaluate(model::DrivingModel& m, const DatasetView& view,
                     const std::vector<SampleRef>& refs, int batch_size) {
  EvalMetrics em;
  em.n = refs.size();
  if (refs.empty()) return em;
  double ls_mean = 0, lv_mean = 0;
  for (const SampleRef& r : refs) {
    ls_mean += view.row(r).label_steering;
    lv_mean += view.row(r).label_speed;
  }
  ls_mean /= refs.size();
  lv_mean /= refs.size();

  for (size_t at = 0; at < refs.size(); at += batch_size) {
    size_t end = std::min(refs.size(), at + batch_size);
    std::vector<model::Features> batch = gather(view, refs, at, end, m.config());
    std::vector<model::Prediction> pred = m.predict(batch);
    for (size_t i = 0; i < pred.size(); ++i) {
      const data::SampleRow& row = view.row(refs[at + i]);
      double ds = pred[i].steering_deg - row.label_steering;
      double dv = pred[i].speed_kmh - row.label_speed;
      em.steering_mse += ds * ds;
      em.speed_mse += dv * dv;
      em.steering_mae += std::fabs(ds);
      em.speed_mae += std::fabs(dv);
      em.label_steering_var += (row.label_steering - ls_mean) * (row.label_steering - ls_mean);
      em.label_speed_var += (row.label_speed - lv_mean) * (row.label_speed - lv_mean);
    }
  }
  em.steering_mse /= em.n;
  em.speed_mse /= em.n;
  em.steering_mae /= em.n;
  em.speed_mae /= em.n;
  em.label_steering_var /= em.n;
  em.label_speed_var /= em.n;
  return em;
}

std::vector<SampleRef> filter_speed_at_most(const DatasetView& view,
                                            const std::vector<SampleRef>& refs, double kmh) {
  std::vector<SampleRef> out;
  for (const SampleRef& r : refs)
    if (view.row(r).speed_hist[3] <= kmh) out.push_back(r);
  return out;
}

namespace {

template <typename Pred>
std::vector<SampleRef> filter_junction(const DatasetView& view,
                                       const std::vector<SampleRef>& refs, double radius_m,
                                       Pred&& keep_junction) {
  std::vector<SampleRef> out;
  for (const SampleRef& r : refs) {
    const auto& junctions = view.episode(r.episode).junctions();
    double s = view.row(r).route_s;
    for (const data::JunctionRow& j : junctions) {
      if (!keep_junction(j)) continue;
      if (std::fabs(j.s_node - s) <= radius_m) {
        out.push_back(r);
        break;
      }
    }
  }
  return out;
}

}  // namespace

std::vector<SampleRef> filter_near_junction(const DatasetView& view,
                                            const std::vector<SampleRef>& refs,
                                            double radius_m) {
  return filter_junction(view, refs, radius_m, [](const data::JunctionRow&) { return true; });
}

std::vector<SampleRef> filter_near_blocked_junction(const DatasetView& view,
                                                    const std::vector<SampleRef>& refs,
                                                    double radius_m) {
  return filter_junction(view, refs, radius_m,
                         [](const data::JunctionRow& j) { return j.blocked; });
}

std::vector<DecisionWindow> decision_windows(const DatasetView& view,
                                             const std::vector<SampleRef>& refs,
                                             double onset_deg, double commit_deg,
                                             double before_m, double after_m) {
  std::vector<DecisionWindow> out;
  for (const SampleRef& r : refs) {
    const data::SampleRow& row = view.row(r);
    if (std::fabs(row.steering_hist[3]) >= onset_deg) continue;
    if (std::fabs(row.label_steering) < commit_deg) continue;
    bool at_choice = false;
    for (const data::JunctionRow& j : view.episode(r.episode).junctions())
      if (j.had_left && j.had_right && row.route_s >= j.s_node - before_m &&
          row.route_s <= j.s_node + after_m)
        at_choice = true;
    if (at_choice) out.push_back({r, row.label_steering, row.steering_hist[3]});
  }
  return out;
}

SignAccuracy eval_sign_accuracy(model::DrivingModel& m, const DatasetView& view,
                                const std::vector<DecisionWindow>& windows,
                                int batch_size) {
  SignAccuracy sa;
  sa.n = windows.size();
  if (windows.empty()) return sa;
  for (size_t at = 0; at < windows.size(); at += batch_size) {
    size_t end = std::min(windows.size(), at + size_t(batch_size));
    std::vector<model::Features> batch;
    for (size_t i = at; i < end; ++i)
      batch.push_back(view.features(windows[i].ref, m.config()));
    std::vector<model::Prediction> pred = m.predict(batch);
    for (size_t i = 0; i < pred.size(); ++i) {
      double label = windows[at + i].label_steering;
      double p = pred[i].steering_deg;
      if ((label > 0 && p > 0) || (label < 0 && p < 0)) ++sa.correct;
      sa.steering_mse += (p - label) * (p - label);
    }
  }
  sa.accuracy = double(sa.correct) / sa.n;
  sa.steering_mse /= sa.n;
  return sa;
}

std::vector<GridSpec> ablation_grid(int image_size) {
  std::vector<GridSpec> grid;
  const std::vector<std::pair<std::string, std::vector<int>>> cams = {
      {"front", {0}}, {"surround", {0, 1, 2, 3}}};
  const std::vector<std::pair<std::string, model::PlannerKind>> planners = {
      {"none", model::PlannerKind::none},
      {"matrix", model::PlannerKind::matrix},
      {"map", model::PlannerKind::map_image}};
  for (const auto& [cam_name, cam_list] : cams) {
    for (const auto& [pl_name, pl] : planners) {
      for (bool past : {false, true}) {
        model::ModelConfig cfg;
        cfg.cameras = cam_list;
        cfg.planner = pl;
        cfg.use_past_states = past;
        cfg.image_size = image_size;
        grid.push_back({cam_name + "-" + pl_name + (past ? "-past" : ""), cfg});
      }
    }
  }
  return grid;
}

void write_report(const std::string& out_dir, model::DrivingModel& m,
                  const DatasetView& view, const std::vector<SampleRef>& refs,
                  const ReportConfig& rc) {
  std::filesystem::create_directories(out_dir);
  EvalMetrics overall = evaluate(m, view, refs);
  EvalMetrics near = evaluate(m, view, filter_near_junction(view, refs));
  EvalMetrics slow = evaluate(m, view, filter_speed_at_most(view, refs, 30.0));

  int n_rows = std::min<int>(rc.max_rows, int(refs.size()));
  std::vector<model::Features> batch;
  for (int i = 0; i < n_rows; ++i) batch.push_back(view.features(refs[i], m.config()));
  std::vector<model::Prediction> pred =
      n_rows > 0 ? m.predict(batch) : std::vector<model::Prediction>{};

  // contact sheet: the front camera's current frame for each shown row
  if (n_rows > 0 && m.config().kind == model::ModelKind::driving) {
    int s = m.config().image_size;
    sim::Image sheet(s * n_rows, s);
    for (int i = 0; i < n_rows; ++i) {
      const data::SampleRow& row = view.row(refs[i]);
      const sim::Image& frame =
          view.episode(refs[i].episode).camera(m.config().cameras[0], row.cam_tick[3]);
      for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
          const uint8_t* src = frame.at(x, y);
          uint8_t* dst = sheet.at(i * s + x, y);
          dst[0] = src[0];
          dst[1] = src[1];
          dst[2] = src[2];
        }
    }
    write_file(out_dir + "/contact_sheet.ppm", sim::to_ppm(sheet));
  }

  auto metric_rows = [](const char* name, const EvalMetrics& e) {
    return strf(
        "<tr><td>%s</td><td>%zu</td><td>%.6f</td><td>%.6f</td><td>%.6f</td><td>%.6f</td></tr>\n",
        name, e.n, e.steering_mse, e.steering_mae, e.speed_mse, e.speed_mae);
  };
  std::ostringstream html;
  html << "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>" << rc.title
       << "</title></head>\n<body>\n<h1>" << rc.title << "</h1>\n";
  html << "<h2>metrics</h2>\n<table border=\"1\">\n"
       << "<tr><th>subset</th><th>n</th><th>steering mse (deg^2)</th><th>steering mae "
          "(deg)</th><th>speed mse ((km/h)^2)</th><th>speed mae (km/h)</th></tr>\n";
  html << metric_rows("all", overall) << metric_rows("near junction (20 m)", near)
       << metric_rows("speed &le; 30 km/h", slow);
  html << "</table>\n";
  html << "<h2>samples</h2>\n<table border=\"1\">\n"
       << "<tr><th>episode</th><th>t</th><th>label steering</th><th>predicted "
          "steering</th><th>label speed</th><th>predicted speed</th></tr>\n";
  for (int i = 0; i < n_rows; ++i) {
    const data::SampleRow& row = view.row(refs[i]);
    html << strf("<tr><td>%d</td><td>%.3f</td><td>%.3f</td><td>%.3f</td><td>%.3f</td>"
                 "<td>%.3f</td></tr>\n",
                 refs[i].episode, row.t, row.label_steering, pred[i].steering_deg,
                 row.label_speed, pred[i].speed_kmh);
  }
  html << "</table>\n";
  if (n_rows > 0 && m.config().kind == model::ModelKind::driving)
    html << "<h2>front camera frames</h2>\n<p><img src=\"contact_sheet.ppm\" "
            "alt=\"front camera contact sheet\"></p>\n";
  html << "</body></html>\n";
  write_file(out_dir + "/report.html", html.str());
}

}  // namespace drivesim::train
