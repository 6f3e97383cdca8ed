#include <cstdio>
#include <ctime>
#include <filesystem>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "drivesim/dataset.hpp"
#include "drivesim/driving_model.hpp"
#include "drivesim/geo_route.hpp"
#include "drivesim/train_eval.hpp"

namespace fs = std::filesystem;
using drivesim::strf;
using ordered_json = nlohmann::ordered_json;

namespace {

constexpr const char* kToolVersion = "drivesim 0.1.0";

// Config files are either INI-style key=value (CLI11's native format) or a
// JSON object; nested objects map to subcommand sections.
class JsonOrIniConfig : public CLI::ConfigBase {
 public:
  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    std::string text((std::istreambuf_iterator<char>(input)), std::istreambuf_iterator<char>());
    size_t p = text.find_first_not_of(" \t\r\n");
    if (p == std::string::npos || text[p] != '{') {
      std::istringstream ss(text);
      return CLI::ConfigBase::from_config(ss);
    }
    std::vector<CLI::ConfigItem> out;
    std::function<void(const nlohmann::json&, std::vector<std::string>)> walk =
        [&](const nlohmann::json& j, std::vector<std::string> parents) {
          for (auto it = j.begin(); it != j.end(); ++it) {
            if (it->is_object()) {
              auto deeper = parents;
              deeper.push_back(it.key());
              walk(*it, deeper);
              continue;
            }
            CLI::ConfigItem item;
            item.parents = parents;
            item.name = it.key();
            if (it->is_array()) {
              for (const auto& v : *it)
                item.inputs.push_back(v.is_string() ? v.get<std::string>() : v.dump());
            } else {
              item.inputs.push_back(it->is_string() ? it->get<std::string>() : it->dump());
            }
            out.push_back(std::move(item));
          }
        };
    walk(nlohmann::json::parse(text), {});
    return out;
  }
};

// One manifest per command, written into the command's output directory.
// Wall time and timestamp live only here, so everything else stays
// byte-reproducible.
void write_manifest(const std::string& dir, const std::string& command,
                    const ordered_json& config, const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs, double wall_s) {
  ordered_json m;
  m["tool"] = kToolVersion;
  m["command"] = command;
  m["config"] = config;
  m["config_hash"] = drivesim::fnv1a_hex(config.dump());
  m["inputs"] = inputs;
  m["outputs"] = outputs;
  m["created_unix"] = int64_t(std::time(nullptr));
  m["wall_time_s"] = wall_s;
  drivesim::write_file(dir + "/run_manifest.json", m.dump(2) + "\n");
}

double now_s() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

void require_dataset(const std::string& dir) {
  if (!fs::exists(dir + "/splits.json"))
    throw drivesim::model::ConfigError(strf("not a dataset (no splits.json): %s", dir.c_str()));
}

ordered_json metrics_json(const drivesim::train::EvalMetrics& em) {
  ordered_json j;
  j["n"] = em.n;
  j["mse_steering"] = em.steering_mse;
  j["mse_speed"] = em.speed_mse;
  j["mae_steering"] = em.steering_mae;
  j["mae_speed"] = em.speed_mae;
  j["label_steering_var"] = em.label_steering_var;
  j["label_speed_var"] = em.label_speed_var;
  return j;
}

struct GenArgs {
  std::string out;
  int episodes = 4;
  double minutes = 2.0;
  std::string planner = "both";
  uint64_t seed = 1;
  int workers = 1;
  int min_junctions = 0;  // 0: derived from minutes
  int intersections = 25;
  double cross_traffic = 0.0;
  int image_size = 64;
  double fps = 10.0;
  double jitter = 0.25;
  double pedestrian_density = -1.0;
  double lane_offset = 2.0;
  bool json = false;
};

int cmd_gen_data(const GenArgs& a) {
  double t0 = now_s();
  drivesim::data::DatasetGenConfig cfg;
  cfg.n_episodes = a.episodes;
  cfg.base_seed = a.seed;
  cfg.workers = a.workers;
  cfg.cross_traffic_prob = a.cross_traffic;
  // the walk must outlast the duration cap, ~12 junctions per driven minute
  cfg.min_junctions = a.min_junctions > 0 ? a.min_junctions : int(a.minutes * 12.0) + 2;
  cfg.sim.max_duration_s = a.minutes * 60.0;
  cfg.sim.camera_fps = a.fps;
  cfg.sim.residual_jitter_frac = a.jitter;
  cfg.world.n_intersections = a.intersections;
  if (a.pedestrian_density >= 0.0) cfg.world.pedestrian_density = a.pedestrian_density;
  cfg.driver.lane_offset_m = a.lane_offset;
  cfg.write.render.width = a.image_size;
  cfg.write.render.height = a.image_size;
  cfg.write.write_map_frames = a.planner != "matrix";
  cfg.write.write_route_csvs = a.planner != "map";

  // fail before any episode dir exists when the target is not writable
  std::error_code ec;
  fs::create_directories(a.out, ec);
  if (ec) throw drivesim::model::ConfigError(strf("cannot create %s", a.out.c_str()));
  try {
    drivesim::write_file(a.out + "/.write_probe", "ok");
    fs::remove(a.out + "/.write_probe");
  } catch (const drivesim::Error&) {
    throw drivesim::model::ConfigError(strf("output dir not writable: %s", a.out.c_str()));
  }

  auto sums = drivesim::data::generate_dataset(a.out, cfg);

  // extend the dataset manifest with the command-level fields
  ordered_json cli_cfg;
  cli_cfg["episodes"] = a.episodes;
  cli_cfg["minutes_per_episode"] = a.minutes;
  cli_cfg["planner"] = a.planner;
  cli_cfg["seed"] = a.seed;
  cli_cfg["min_junctions"] = cfg.min_junctions;
  cli_cfg["intersections"] = a.intersections;
  cli_cfg["cross_traffic"] = a.cross_traffic;
  cli_cfg["image_size"] = a.image_size;
  cli_cfg["camera_fps"] = a.fps;
  cli_cfg["jitter"] = a.jitter;
  cli_cfg["lane_offset"] = a.lane_offset;
  auto manifest = ordered_json::parse(drivesim::read_file(a.out + "/run_manifest.json"));
  manifest["command"] = "gen-data";
  manifest["tool"] = kToolVersion;
  manifest["cli_config"] = cli_cfg;
  manifest["wall_time_s"] = now_s() - t0;
  drivesim::write_file(a.out + "/run_manifest.json", manifest.dump(2) + "\n");

  if (a.json) {
    ordered_json j;
    j["out"] = a.out;
    j["episodes"] = ordered_json::array();
    for (const auto& s : sums) {
      ordered_json e;
      e["dir"] = s.dir;
      e["seed"] = s.seed;
      e["samples"] = s.n_samples;
      e["junctions"] = s.n_junctions;
      e["duration_s"] = s.duration_s;
      j["episodes"].push_back(e);
    }
    printf("%s\n", j.dump(2).c_str());
  } else {
    for (const auto& s : sums)
      printf("%s  seed=%llu  samples=%zu  junctions=%zu  %.0f s\n", s.dir.c_str(),
             (unsigned long long)s.seed, s.n_samples, s.n_junctions, s.duration_s);
    printf("wrote %zu episodes under %s\n", sums.size(), a.out.c_str());
  }
  return 0;
}

struct RouteArgs {
  std::string graph;
  std::string from, to;
  std::string weight = "distance";
  double resample_at = -1.0;
  std::string matrix_out;
  bool json = false;
};

int cmd_route(const RouteArgs& a) {
  if (!fs::exists(a.graph))
    throw drivesim::model::ConfigError(strf("graph file not found: %s", a.graph.c_str()));
  auto g = drivesim::geo::load_graph_file(a.graph);
  auto weight = a.weight == "time" ? drivesim::geo::RouteWeight::travel_time
                                   : drivesim::geo::RouteWeight::distance;
  auto route = drivesim::geo::plan_route(g, a.from, a.to, weight);

  if (a.json) {
    ordered_json j;
    j["node_path"] = route.node_path;
    j["length_m"] = route.length_m();
    printf("%s\n", j.dump(2).c_str());
  } else {
    printf("route %s -> %s: %zu nodes, %.1f m\n", a.from.c_str(), a.to.c_str(),
           route.node_path.size(), route.length_m());
    for (const auto& n : route.node_path) printf("  %s\n", n.c_str());
  }
  if (a.resample_at >= 0.0) {
    auto m = drivesim::geo::resample_route(route, a.resample_at);
    if (a.matrix_out.empty()) {
      printf("%s", m.to_csv().c_str());
    } else {
      drivesim::write_file(a.matrix_out, m.to_csv());
      printf("wrote %s\n", a.matrix_out.c_str());
    }
  }
  return 0;
}

struct TrainArgs {
  std::string data, out;
  drivesim::train::TrainConfig tc;
  drivesim::model::ModelConfig mc;
  std::string model_kind = "driving";
  std::string planner = "none";
  int image_size = 0;  // 0: use the dataset's frame size
  bool json = false;
};

void resolve_model_config(TrainArgs& a, const drivesim::train::DatasetView& view) {
  a.mc.kind = a.model_kind == "can_only" ? drivesim::model::ModelKind::can_only
                                         : drivesim::model::ModelKind::driving;
  a.mc.planner = drivesim::model::planner_from_string(a.planner);
  a.mc.image_size = a.image_size > 0 ? a.image_size : view.episode(0).meta().image_width;
}

int cmd_train(TrainArgs& a) {
  double t0 = now_s();
  require_dataset(a.data);
  auto split = drivesim::train::open_split(a.data);
  if (split.train.n_samples() == 0) throw drivesim::train::TrainError("train split is empty");
  resolve_model_config(a, split.train);

  drivesim::model::DrivingModel m(a.mc, a.tc.seed);
  a.tc.checkpoint_dir = a.out;
  auto stats = drivesim::train::train_model(m, split.train, split.train.all(), a.tc);

  ordered_json cfg = ordered_json::parse(m.config().to_json());
  ordered_json summary;
  summary["config"] = cfg;
  summary["steps"] = stats.steps;
  summary["initial_loss"] = stats.initial_loss;
  summary["final_epoch_loss"] = stats.final_epoch_loss;
  summary["epoch_loss"] = stats.epoch_loss;
  summary["checkpoint"] = a.out + "/model";
  drivesim::write_file(a.out + "/summary.json", summary.dump(2) + "\n");

  ordered_json full = summary["config"];
  ordered_json mcfg;
  mcfg["model"] = full;
  mcfg["lr"] = a.tc.lr;
  mcfg["batch_size"] = a.tc.batch_size;
  mcfg["epochs"] = a.tc.epochs;
  mcfg["max_steps"] = a.tc.max_steps;
  mcfg["lambda"] = a.tc.lambda;
  mcfg["seed"] = a.tc.seed;
  write_manifest(a.out, "train", mcfg, {a.data}, {a.out + "/model", a.out + "/summary.json"},
                 now_s() - t0);

  if (a.json) {
    printf("%s\n", summary.dump(2).c_str());
  } else {
    printf("trained %d steps, loss %.4f -> %.4f, checkpoint %s/model\n", stats.steps,
           stats.initial_loss, stats.final_epoch_loss, a.out.c_str());
  }
  return 0;
}

struct EvalArgs {
  std::string data, model, out;
  std::string split = "eval";
  bool json = false;
};

ordered_json eval_to_json(drivesim::model::DrivingModel& m,
                          const drivesim::train::DatasetView& view) {
  auto refs = view.all();
  auto all = drivesim::train::evaluate(m, view, refs);
  auto near = drivesim::train::evaluate(m, view, drivesim::train::filter_near_junction(view, refs));
  auto slow = drivesim::train::evaluate(m, view, drivesim::train::filter_speed_at_most(view, refs, 30.0));

  ordered_json j;
  j["config"] = ordered_json::parse(m.config().to_json());
  j["n"] = all.n;
  j["mse_steering"] = all.steering_mse;
  j["mse_speed"] = all.speed_mse;
  j["subsets"] = ordered_json::object();
  j["subsets"]["all"] = metrics_json(all);
  j["subsets"]["near_junction_20m"] = metrics_json(near);
  j["subsets"]["speed_at_most_30kmh"] = metrics_json(slow);
  return j;
}

int cmd_eval(const EvalArgs& a) {
  double t0 = now_s();
  require_dataset(a.data);
  if (!fs::exists(a.model + ".json"))
    throw drivesim::model::ConfigError(strf("checkpoint not found: %s.json", a.model.c_str()));
  auto split = drivesim::train::open_split(a.data);
  const auto& view = a.split == "train" ? split.train : split.eval;
  auto m = drivesim::model::DrivingModel::load(a.model);

  ordered_json j = eval_to_json(m, view);
  j["split"] = a.split;
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    drivesim::write_file(a.out + "/eval.json", j.dump(2) + "\n");
    ordered_json cfg;
    cfg["model"] = a.model;
    cfg["split"] = a.split;
    write_manifest(a.out, "eval", cfg, {a.data, a.model + ".params"}, {a.out + "/eval.json"},
                   now_s() - t0);
  }
  if (a.json) {
    printf("%s\n", j.dump(2).c_str());
  } else {
    printf("%s split, %zu samples\n", a.split.c_str(), size_t(j["n"]));
    printf("  steering mse %.3f deg^2   speed mse %.3f (km/h)^2\n", double(j["mse_steering"]),
           double(j["mse_speed"]));
    for (auto& [name, sj] : j["subsets"].items())
      printf("  %-22s n=%-6zu steering %.3f  speed %.3f\n", name.c_str(), size_t(sj["n"]),
             double(sj["mse_steering"]), double(sj["mse_speed"]));
  }
  return 0;
}

struct GridArgs {
  std::string data, out;
  drivesim::train::TrainConfig tc;
  int image_size = 0;
  bool save_models = false;
  bool json = false;
};

int cmd_grid(GridArgs& a) {
  double t0 = now_s();
  require_dataset(a.data);
  auto split = drivesim::train::open_split(a.data);
  int image_size = a.image_size > 0 ? a.image_size : split.train.episode(0).meta().image_width;
  auto specs = drivesim::train::ablation_grid(image_size);
  fs::create_directories(a.out);

  std::string csv = "name,steps,final_loss,eval_n,mse_steering,mse_speed\n";
  ordered_json rows = ordered_json::array();
  for (auto& spec : specs) {
    drivesim::model::DrivingModel m(spec.config, a.tc.seed);
    drivesim::train::TrainConfig tc = a.tc;
    std::string dir = a.out + "/" + spec.name;
    if (a.save_models) tc.checkpoint_dir = dir;
    auto stats = drivesim::train::train_model(m, split.train, split.train.all(), tc);
    ordered_json j = eval_to_json(m, split.eval);
    fs::create_directories(dir);
    drivesim::write_file(dir + "/eval.json", j.dump(2) + "\n");
    csv += strf("%s,%d,%.6f,%zu,%.6f,%.6f\n", spec.name.c_str(), stats.steps,
                stats.final_epoch_loss, size_t(j["n"]), double(j["mse_steering"]),
                double(j["mse_speed"]));
    ordered_json row;
    row["name"] = spec.name;
    row["steps"] = stats.steps;
    row["final_loss"] = stats.final_epoch_loss;
    row["mse_steering"] = j["mse_steering"];
    row["mse_speed"] = j["mse_speed"];
    rows.push_back(row);
    if (!a.json)
      printf("%-22s steps=%-5d loss %.4f  eval steering %.2f  speed %.2f\n", spec.name.c_str(),
             stats.steps, stats.final_epoch_loss, double(j["mse_steering"]),
             double(j["mse_speed"]));
  }
  drivesim::write_file(a.out + "/grid_summary.csv", csv);
  ordered_json cfg;
  cfg["image_size"] = image_size;
  cfg["lr"] = a.tc.lr;
  cfg["epochs"] = a.tc.epochs;
  cfg["max_steps"] = a.tc.max_steps;
  cfg["seed"] = a.tc.seed;
  write_manifest(a.out, "grid", cfg, {a.data}, {a.out + "/grid_summary.csv"}, now_s() - t0);
  if (a.json) printf("%s\n", rows.dump(2).c_str());
  return 0;
}

struct ReportArgs {
  std::string data, model, out;
  std::string split = "eval";
  int rows = 8;
  std::string title = "evaluation report";
  bool json = false;
};

int cmd_report(const ReportArgs& a) {
  double t0 = now_s();
  require_dataset(a.data);
  if (!fs::exists(a.model + ".json"))
    throw drivesim::model::ConfigError(strf("checkpoint not found: %s.json", a.model.c_str()));
  auto split = drivesim::train::open_split(a.data);
  const auto& view = a.split == "train" ? split.train : split.eval;
  auto m = drivesim::model::DrivingModel::load(a.model);
  drivesim::train::ReportConfig rc;
  rc.max_rows = a.rows;
  rc.title = a.title;
  drivesim::train::write_report(a.out, m, view, view.all(), rc);
  ordered_json cfg;
  cfg["model"] = a.model;
  cfg["split"] = a.split;
  cfg["rows"] = a.rows;
  cfg["title"] = a.title;
  write_manifest(a.out, "report", cfg, {a.data, a.model + ".params"},
                 {a.out + "/report.html"}, now_s() - t0);
  if (a.json) {
    ordered_json j;
    j["report"] = a.out + "/report.html";
    printf("%s\n", j.dump(2).c_str());
  } else {
    printf("wrote %s/report.html\n", a.out.c_str());
  }
  return 0;
}

int guarded(const std::function<int()>& f) {
  try {
    return f();
  } catch (const drivesim::model::ConfigError& e) {
    fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const drivesim::data::DatasetFormatError& e) {
    fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const drivesim::geo::GraphParseError& e) {
    fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const drivesim::geo::UnknownNodeError& e) {
    fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const drivesim::Error& e) {
    // runtime failures: divergence, blocked routes, unreachable goals
    fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"procedural driving pipeline: data generation, routing, training, evaluation"};
  app.require_subcommand(1);
  app.set_config("--config", "", "config file (key=value or JSON)");
  app.config_formatter(std::make_shared<JsonOrIniConfig>());

  GenArgs ga;
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic episode dataset");
  gen->add_option("--out", ga.out, "output dataset directory")->required();
  gen->add_option("--episodes", ga.episodes, "number of episodes")->check(CLI::Range(1, 100000));
  gen->add_option("--minutes-per-episode", ga.minutes, "driven minutes per episode")
      ->check(CLI::PositiveNumber);
  gen->add_option("--planner", ga.planner, "stored route planner modality")
      ->check(CLI::IsMember({"both", "map", "matrix"}));
  gen->add_option("--seed", ga.seed, "base seed; episode i uses seed+i");
  gen->add_option("--workers", ga.workers, "parallel episode workers")
      ->check(CLI::Range(1, 256));
  gen->add_option("--min-junctions", ga.min_junctions,
                  "junction visits per route (0: derive from minutes)");
  gen->add_option("--intersections", ga.intersections, "world grid intersection count");
  gen->add_option("--cross-traffic", ga.cross_traffic,
                  "probability a 4-way junction holds a blocking vehicle")
      ->check(CLI::Range(0.0, 1.0));
  gen->add_option("--image-size", ga.image_size, "camera/map frame size in pixels");
  gen->add_option("--fps", ga.fps, "camera frame rate");
  gen->add_option("--jitter", ga.jitter, "sensor timing jitter fraction")
      ->check(CLI::Range(0.0, 0.5));
  gen->add_option("--pedestrian-density", ga.pedestrian_density,
                  "pedestrians per intersection (negative: world default)");
  gen->add_option("--lane-offset", ga.lane_offset, "driven offset right of centerline, m");
  gen->add_flag("--json", ga.json, "machine-readable summary on stdout");

  RouteArgs ra;
  auto* route = app.add_subcommand("route", "plan a route on a road graph");
  route->add_option("--graph", ra.graph, "road graph JSON file")->required();
  route->add_option("--from", ra.from, "start node id")->required();
  route->add_option("--to", ra.to, "destination node id")->required();
  route->add_option("--weight", ra.weight, "edge weight")
      ->check(CLI::IsMember({"distance", "time"}));
  route->add_option("--resample-at", ra.resample_at,
                    "also emit the 300x2 route matrix from this arc length, m");
  route->add_option("--matrix-out", ra.matrix_out, "write the route matrix CSV here");
  route->add_flag("--json", ra.json, "machine-readable route on stdout");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "train a driving model on a dataset");
  train->add_option("--data", ta.data, "dataset directory")->required();
  train->add_option("--out", ta.out, "checkpoint/output directory")->required();
  train->add_option("--model", ta.model_kind, "model kind")
      ->check(CLI::IsMember({"driving", "can_only"}));
  train->add_option("--planner", ta.planner, "route planner input")
      ->check(CLI::IsMember({"none", "matrix", "map_image"}));
  train->add_option("--cameras", ta.mc.cameras, "camera ids (0 front, 1 left, 2 right, 3 rear)");
  train->add_option("--past-states", ta.mc.use_past_states, "feed past speed/steering");
  train->add_option("--history", ta.mc.history, "history steps per sample")
      ->check(CLI::Range(1, 4));
  train->add_option("--image-size", ta.image_size, "input frame size (0: dataset native)");
  train->add_option("--cnn-channels", ta.mc.cnn_channels, "camera conv channels");
  train->add_option("--fc-dims", ta.mc.fc_dims, "camera fc dims");
  train->add_option("--lstm-layers", ta.mc.lstm_layers, "lstm depth")->check(CLI::Range(1, 64));
  train->add_option("--lstm-hidden", ta.mc.lstm_hidden, "lstm hidden size")
      ->check(CLI::Range(1, 65536));
  train->add_option("--planner-fc", ta.mc.planner_fc, "planner feature size")
      ->check(CLI::Range(1, 65536));
  train->add_option("--steering-scale", ta.mc.steering_scale, "steering input scale, deg");
  train->add_option("--speed-scale", ta.mc.speed_scale, "speed input scale, km/h");
  train->add_option("--loc-scale", ta.mc.loc_scale, "gps offset input scale, m");
  train->add_option("--matrix-scale", ta.mc.matrix_scale, "route matrix input scale, m");
  train->add_option("--lr", ta.tc.lr, "Adam learning rate")->check(CLI::PositiveNumber);
  train->add_option("--batch-size", ta.tc.batch_size, "minibatch size")
      ->check(CLI::Range(1, 65536));
  train->add_option("--epochs", ta.tc.epochs, "training epochs")->check(CLI::Range(1, 1000000));
  train->add_option("--max-steps", ta.tc.max_steps, "stop after this many steps (0: all epochs)");
  train->add_option("--lambda", ta.tc.lambda, "speed loss weight");
  train->add_option("--seed", ta.tc.seed, "init and shuffle seed");
  train->add_option("--divergence-loss", ta.tc.divergence_loss, "abort when loss exceeds this");
  train->add_flag("--verbose", ta.tc.verbose, "per-step loss on stderr");
  train->add_flag("--json", ta.json, "machine-readable summary on stdout");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
  eval->add_option("--data", ea.data, "dataset directory")->required();
  eval->add_option("--model", ea.model, "checkpoint path prefix")->required();
  eval->add_option("--split", ea.split, "dataset split")
      ->check(CLI::IsMember({"train", "eval"}));
  eval->add_option("--out", ea.out, "also write eval.json and a manifest here");
  eval->add_flag("--json", ea.json, "machine-readable metrics on stdout");

  GridArgs gr;
  auto* grid = app.add_subcommand("grid", "train and evaluate the 12 standard ablations");
  grid->add_option("--data", gr.data, "dataset directory")->required();
  grid->add_option("--out", gr.out, "grid output directory")->required();
  grid->add_option("--image-size", gr.image_size, "input frame size (0: dataset native)");
  grid->add_option("--lr", gr.tc.lr, "Adam learning rate")->check(CLI::PositiveNumber);
  grid->add_option("--batch-size", gr.tc.batch_size, "minibatch size")
      ->check(CLI::Range(1, 65536));
  grid->add_option("--epochs", gr.tc.epochs, "training epochs")->check(CLI::Range(1, 1000000));
  grid->add_option("--max-steps", gr.tc.max_steps, "step cap per config (0: all epochs)");
  grid->add_option("--lambda", gr.tc.lambda, "speed loss weight");
  grid->add_option("--seed", gr.tc.seed, "init and shuffle seed");
  grid->add_flag("--save-models", gr.save_models, "write a checkpoint per config");
  grid->add_flag("--json", gr.json, "machine-readable rows on stdout");

  ReportArgs rp;
  auto* report = app.add_subcommand("report", "write an HTML evaluation report");
  report->add_option("--data", rp.data, "dataset directory")->required();
  report->add_option("--model", rp.model, "checkpoint path prefix")->required();
  report->add_option("--out", rp.out, "report directory")->required();
  report->add_option("--split", rp.split, "dataset split")
      ->check(CLI::IsMember({"train", "eval"}));
  report->add_option("--rows", rp.rows, "sample rows in the report")->check(CLI::Range(1, 10000));
  report->add_option("--title", rp.title, "report title");
  report->add_flag("--json", rp.json, "machine-readable summary on stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (gen->parsed()) return guarded([&] { return cmd_gen_data(ga); });
  if (route->parsed()) return guarded([&] { return cmd_route(ra); });
  if (train->parsed()) return guarded([&] { return cmd_train(ta); });
  if (eval->parsed()) return guarded([&] { return cmd_eval(ea); });
  if (grid->parsed()) return guarded([&] { return cmd_grid(gr); });
  if (report->parsed()) return guarded([&] { return cmd_report(rp); });
  return 2;
}
