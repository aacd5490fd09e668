#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "grouplab/lab.hpp"
#include "grouplab/rng.hpp"

namespace fs = std::filesystem;
using namespace grouplab;

namespace {

std::string one_line(std::string msg) {
  std::replace(msg.begin(), msg.end(), '\n', ' ');
  return msg;
}

std::vector<int> parse_int_list(const std::string& csv) {
  std::vector<int> out;
  size_t start = 0;
  while (start <= csv.size()) {
    const size_t comma = csv.find(',', start);
    const std::string token = csv.substr(
        start, comma == std::string::npos ? std::string::npos : comma - start);
    if (!token.empty()) out.push_back(std::stoi(token));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (out.empty()) throw std::invalid_argument("empty value list '" + csv + "'");
  return out;
}

std::vector<Scene> generate_scenes(const SceneParams& params, uint64_t dataset_seed,
                                   int64_t first_id, int count) {
  std::vector<Scene> scenes;
  scenes.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    const int64_t id = first_id + i;
    Scene s = sample_scene(mix_seed(dataset_seed, static_cast<uint64_t>(id)), params);
    s.scene_id = id;
    build_memory(s, params);
    scenes.push_back(std::move(s));
  }
  return scenes;
}

int cmd_generate(const std::string& config_path, int count, int val_count,
                 uint64_t seed, const std::string& out) {
  SceneParams params;
  if (!config_path.empty()) params = run_config_from_file(config_path).scene;
  fs::create_directories(out);
  const std::vector<Scene> train = generate_scenes(params, seed, 0, count);
  save_dataset(train, params, out + "/train.ds");
  const std::vector<Scene> val = generate_scenes(params, seed, count, val_count);
  save_dataset(val, params, out + "/val.ds");
  std::cout << "wrote " << count << " train / " << val_count << " val scenes under "
            << out << "\n";
  return 0;
}

RunConfig load_config_with_overrides(const std::string& config_path,
                                     const CLI::App* cmd, uint64_t seed, int k,
                                     int multiplicity, int epochs,
                                     const std::string& out) {
  RunConfig cfg = run_config_from_file(config_path);
  if (cmd->count("--seed")) cfg.seed = seed;
  if (cmd->count("--epochs")) cfg.epochs = epochs;
  if (cmd->count("--k")) {
    cfg.model.groups = k;
    cfg.strategy = k > 1 ? Strategy::kGroupWise : Strategy::kOneToOne;
  }
  if (cmd->count("--multiplicity")) {
    cfg.multiplicity = multiplicity;
    cfg.strategy = Strategy::kOneToMany;
    cfg.model.groups = 1;
  }
  if (cmd->count("--out")) cfg.out_dir = out;
  return cfg;
}

std::vector<Scene> load_checked(const std::string& path, const GroupConfig& model) {
  SceneParams params;
  std::vector<Scene> scenes = load_dataset(path, &params);
  if (params.d_model != model.d_model || params.memory_grid != model.memory_grid ||
      params.num_classes != model.num_classes)
    throw std::runtime_error("dataset " + path +
                             " does not match the model config (d_model/grid/classes)");
  return scenes;
}

int cmd_train(const RunConfig& cfg) {
  if (cfg.train_dataset.empty() || cfg.val_dataset.empty())
    throw std::runtime_error("config: train_dataset and val_dataset are required");
  if (cfg.out_dir.empty()) throw std::runtime_error("an output directory is required");
  cfg.validate();
  const std::vector<Scene> train = load_checked(cfg.train_dataset, cfg.model);
  const std::vector<Scene> val = load_checked(cfg.val_dataset, cfg.model);
  fs::create_directories(cfg.out_dir);
  {
    std::ofstream cfg_out(cfg.out_dir + "/config.json");
    cfg_out << run_config_to_json(cfg) << "\n";
  }
  const TrainResult result = train_run(cfg, train, val);
  if (result.diverged)
    throw std::runtime_error("training diverged (non-finite loss); partial metrics at " +
                             cfg.out_dir + "/metrics.csv");
  const EpochMetrics& last = result.history.back();
  std::printf("trained %d epochs: loss %.4f, mAP %.4f (no NMS) / %.4f (NMS), dup %.4f\n",
              last.epoch, last.loss, last.map_no_nms, last.map_nms,
              last.duplicate_rate);
  std::cout << "outputs under " << cfg.out_dir << "\n";
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& dataset, bool no_nms,
             int group_index, const std::string& out) {
  const DetectorModel model = DetectorModel::load_checkpoint(checkpoint);
  const std::vector<Scene> scenes = load_checked(dataset, model.config());
  EvalOptions opts;
  opts.use_nms = !no_nms;
  opts.group_index = group_index;
  fs::create_directories(out);
  const std::vector<Detection> dets = collect_detections(model, scenes, group_index);
  const std::string dump_path = out + "/detections.csv";
  write_detection_dump(dets, dump_path);
  const EvalReport report = evaluate_model(model, scenes, opts);
  std::ofstream report_out(out + "/report.json");
  report_out << eval_report_to_json(report, dump_path) << "\n";
  std::printf("mAP %.4f (%s), duplicate rate %.4f over %d scenes\n", report.map,
              no_nms ? "no NMS" : "with NMS", report.duplicate_rate, report.scenes);
  return 0;
}

int cmd_sweep(const RunConfig& base, const std::string& axis, std::string values_csv,
              int seeds, const std::string& out) {
  if (base.train_dataset.empty() || base.val_dataset.empty())
    throw std::runtime_error("config: train_dataset and val_dataset are required");
  if (values_csv.empty()) values_csv = axis == "k" ? "1,2,3,5,7,11" : "1,2,3,5";
  const std::vector<int> values = parse_int_list(values_csv);
  const std::vector<Scene> train = load_checked(base.train_dataset, base.model);
  const std::vector<Scene> val = load_checked(base.val_dataset, base.model);
  fs::create_directories(out);
  const int workers =
      std::max(1u, std::thread::hardware_concurrency());
  const SweepResult result =
      run_sweep(base, axis, values, seeds, train, val, out, workers);
  write_sweep_csv(result, out + "/sweep.csv");
  std::ofstream summary(out + "/summary.json");
  summary << sweep_summary_json(result, axis) << "\n";
  int failures = 0;
  for (const SweepRow& r : result.rows) failures += r.failed ? 1 : 0;
  std::cout << "sweep finished: " << result.rows.size() - failures << " runs ok, "
            << failures << " failed; outputs under " << out << "\n";
  return failures == static_cast<int>(result.rows.size()) && !result.rows.empty() ? 1 : 0;
}

int cmd_diagnose(const std::string& run_dir, const std::string& dataset,
                 const std::string& out) {
  std::vector<Scene> scenes;
  const std::vector<Scene>* scenes_ptr = nullptr;
  if (!dataset.empty()) {
    scenes = load_dataset(dataset);
    scenes_ptr = &scenes;
  }
  const std::string out_dir = out.empty() ? run_dir + "/diagnostics" : out;
  const DiagnoseResult result =
      diagnose_run(run_dir, scenes_ptr, CostWeights{}, out_dir);
  std::cout << "diagnostics for " << result.epochs.size() << " checkpoints under "
            << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"grouplab: a desk-scale laboratory for set-prediction label assignment"};
  app.require_subcommand(1);

  std::string config_path, out, dataset, checkpoint, run_dir, axis = "k", values_csv;
  uint64_t seed = 7;
  int count = 2000, val_count = 500, k = 1, multiplicity = 3, epochs = 30,
      group_index = 0, seeds = 3;
  bool no_nms = false;

  CLI::App* generate = app.add_subcommand("generate", "Sample a synthetic dataset");
  generate->add_option("--config", config_path, "JSON config for scene parameters");
  generate->add_option("--count", count, "Training scenes (default 2000)");
  generate->add_option("--val-count", val_count, "Validation scenes (default 500)");
  generate->add_option("--seed", seed, "Dataset seed");
  generate->add_option("--out", out, "Output directory")->required();

  CLI::App* train = app.add_subcommand("train", "Train a model per the config");
  train->add_option("--config", config_path, "JSON run config")->required();
  train->add_option("--seed", seed, "Override the config seed");
  train->add_option("--k", k, "Override: group_wise with K groups (1 = one_to_one)");
  train->add_option("--multiplicity", multiplicity,
                    "Override: one_to_many with this multiplicity");
  train->add_option("--epochs", epochs, "Override the epoch count");
  train->add_option("--out", out, "Override the output directory");

  CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  eval->add_option("checkpoint", checkpoint, "Checkpoint file")->required();
  eval->add_option("dataset", dataset, "Dataset file")->required();
  eval->add_flag("--no-nms", no_nms, "Evaluate raw detections without NMS");
  eval->add_option("--group-index", group_index, "Group to slice (default 0)");
  eval->add_option("--out", out, "Output directory")->required();

  CLI::App* sweep = app.add_subcommand("sweep", "Train/eval across K or multiplicity");
  sweep->add_option("--config", config_path, "JSON base run config")->required();
  sweep->add_option("--axis", axis, "Sweep axis: k or multiplicity (default k)");
  sweep->add_option("--values", values_csv,
                    "Comma-separated axis values (default 1,2,3,5,7,11 for k)");
  sweep->add_option("--seeds", seeds, "Seeds per value (default 3)");
  sweep->add_option("--k", k, "Ignored for sweeps over k");
  sweep->add_option("--multiplicity", multiplicity, "Ignored for sweeps over it");
  sweep->add_option("--epochs", epochs, "Override the epoch count");
  sweep->add_option("--seed", seed, "Base seed (runs use seed..seed+seeds-1)");
  sweep->add_option("--out", out, "Output directory")->required();

  CLI::App* diagnose =
      app.add_subcommand("diagnose", "Emit PD/MD series and position dumps");
  diagnose->add_option("run_dir", run_dir, "Training output directory")->required();
  diagnose->add_option("--dataset", dataset,
                       "Dataset for matching distance (optional)");
  diagnose->add_option("--out", out, "Output directory (default <run>/diagnostics)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (generate->parsed())
      return cmd_generate(config_path, count, val_count, seed, out);
    if (train->parsed())
      return cmd_train(load_config_with_overrides(config_path, train, seed, k,
                                                  multiplicity, epochs, out));
    if (eval->parsed()) return cmd_eval(checkpoint, dataset, no_nms, group_index, out);
    if (sweep->parsed()) {
      RunConfig base = load_config_with_overrides(config_path, sweep, seed, k,
                                                  multiplicity, epochs, out);
      base.out_dir.clear();
      return cmd_sweep(base, axis, values_csv, seeds, out);
    }
    if (diagnose->parsed()) return cmd_diagnose(run_dir, dataset, out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << one_line(e.what()) << "\n";
    return 1;
  }
  return 0;
}
