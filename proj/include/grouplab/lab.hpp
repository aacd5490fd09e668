#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "grouplab/assign.hpp"
#include "grouplab/decoder.hpp"
#include "grouplab/eval.hpp"
#include "grouplab/optim.hpp"
#include "grouplab/query_stats.hpp"
#include "grouplab/scene.hpp"

namespace grouplab {

enum class Strategy { kOneToOne, kOneToMany, kGroupWise };

std::string strategy_name(Strategy s);
Strategy strategy_from_name(const std::string& name);

struct RunConfig {
  Strategy strategy = Strategy::kOneToOne;
  int multiplicity = 3;  // one_to_many only
  GroupConfig model;     // model.groups is the K of group_wise
  SceneParams scene;
  int epochs = 30;
  int batch_size = 8;
  double lr = 1e-3;
  int lr_drop_epoch = 0;  // 0: ceil(11/12 * epochs)
  double lr_drop_factor = 0.1;
  double weight_decay = 1e-4;
  uint64_t seed = 1;
  double nms_iou = 0.5;
  double score_threshold = 0.05;
  CostWeights weights;
  std::string train_dataset;
  std::string val_dataset;
  std::string out_dir;
  bool save_checkpoints = true;

  int effective_lr_drop_epoch() const;
  void validate() const;
};

RunConfig run_config_from_json(const std::string& json_text);
RunConfig run_config_from_file(const std::string& path);
std::string run_config_to_json(const RunConfig& cfg);

struct EpochMetrics {
  int epoch = 0;
  double loss = 0.0;
  double map_no_nms = 0.0;
  double map_nms = 0.0;
  double duplicate_rate = 0.0;
  double pd = 0.0;  // 0 when K < 2
  double md = 0.0;  // 0 when K < 2
};

struct TrainResult {
  std::vector<EpochMetrics> history;
  bool diverged = false;
  DetectorModel model;
};

// Full training run: decode, per-group assignment by strategy, set loss,
// AdamW. Deterministic given (config, datasets) on one thread. When
// cfg.out_dir is set, writes metrics.csv (row per epoch, flushed as it goes)
// and per-epoch + final checkpoints.
TrainResult train_run(const RunConfig& cfg, const std::vector<Scene>& train,
                      const std::vector<Scene>& val);

struct EvalOptions {
  bool use_nms = true;
  int group_index = 0;
  double nms_iou = 0.5;
  double score_threshold = 0.05;
};

struct EvalReport {
  double map = 0.0;
  std::map<int, double> per_class;
  double duplicate_rate = 0.0;
  int scenes = 0;
  bool used_nms = true;
  int group_index = 0;
};

// One detection per (query, class) pair of the selected group.
std::vector<Detection> collect_detections(const DetectorModel& model,
                                          const std::vector<Scene>& scenes,
                                          int group_index);
std::vector<GtRecord> gt_records(const std::vector<Scene>& scenes);

EvalReport evaluate_model(const DetectorModel& model, const std::vector<Scene>& scenes,
                          const EvalOptions& opts);

std::string eval_report_to_json(const EvalReport& report,
                                const std::string& detections_path);

void write_metrics_csv(const std::vector<EpochMetrics>& history,
                       const std::string& path);

// Runs tasks on up to `workers` threads; each task must be self-contained.
void run_parallel(const std::vector<std::function<void()>>& tasks, int workers);

struct SweepRow {
  std::string axis;
  int value = 0;
  uint64_t seed = 0;
  double map_nms = 0.0;
  double map_no_nms = 0.0;
  double duplicate_rate = 0.0;
  bool failed = false;
  std::string error;
};

struct SweepValueStats {
  int value = 0;
  double map_nms_mean = 0.0, map_nms_std = 0.0;
  double map_no_nms_mean = 0.0, map_no_nms_std = 0.0;
  double duplicate_rate_mean = 0.0, duplicate_rate_std = 0.0;
  int runs = 0;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  std::vector<SweepValueStats> stats;
};

// Axis is "k" (group count) or "multiplicity". Failed runs are recorded and
// the sweep continues. Independent runs may execute concurrently.
SweepResult run_sweep(const RunConfig& base, const std::string& axis,
                      const std::vector<int>& values, int n_seeds,
                      const std::vector<Scene>& train, const std::vector<Scene>& val,
                      const std::string& out_dir, int workers);

void write_sweep_csv(const SweepResult& result, const std::string& path);
std::string sweep_summary_json(const SweepResult& result, const std::string& axis);

struct DiagnoseResult {
  std::vector<int> epochs;
  std::vector<double> pd;
  std::vector<double> md;
  std::vector<std::string> warnings;
};

// Walks run_dir/checkpoints/epoch_*.ckpt in order, emitting the PD/MD series
// (pd_md.csv) and the final position dump (positions.csv) under out_dir.
// MD needs scenes for matching; without them it is reported as 0 with a
// warning. Missing checkpoints yield partial output with a warning.
DiagnoseResult diagnose_run(const std::string& run_dir,
                            const std::vector<Scene>* scenes,
                            const CostWeights& weights, const std::string& out_dir);

}  // namespace grouplab
