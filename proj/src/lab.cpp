#include "grouplab/lab.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <nlohmann/json.hpp>

#include "grouplab/logging.hpp"
#include "grouplab/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace grouplab {

std::string strategy_name(Strategy s) {
  switch (s) {
    case Strategy::kOneToOne: return "one_to_one";
    case Strategy::kOneToMany: return "one_to_many";
    case Strategy::kGroupWise: return "group_wise";
  }
  return "unknown";
}

Strategy strategy_from_name(const std::string& name) {
  if (name == "one_to_one") return Strategy::kOneToOne;
  if (name == "one_to_many") return Strategy::kOneToMany;
  if (name == "group_wise") return Strategy::kGroupWise;
  throw std::invalid_argument("unknown strategy '" + name +
                              "' (expected one_to_one, one_to_many, group_wise)");
}

int RunConfig::effective_lr_drop_epoch() const {
  if (lr_drop_epoch > 0) return lr_drop_epoch;
  return static_cast<int>(std::ceil(11.0 * epochs / 12.0));
}

void RunConfig::validate() const {
  model.validate();
  if (epochs < 1) throw std::invalid_argument("config: epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
  if (lr <= 0.0) throw std::invalid_argument("config: lr must be positive");
  if (lr_drop_epoch > 0 && lr_drop_epoch >= epochs)
    throw std::invalid_argument("config: lr_drop_epoch must be < epochs");
  if (strategy != Strategy::kGroupWise && model.groups != 1)
    throw std::invalid_argument("config: groups > 1 requires the group_wise strategy");
  if (strategy == Strategy::kOneToMany) {
    if (multiplicity < 1)
      throw std::invalid_argument("config: multiplicity must be >= 1");
    if (model.queries_per_group < multiplicity * scene.max_objects)
      throw std::invalid_argument(
          "config: one_to_many needs queries_per_group >= multiplicity * max_objects");
  }
  if (scene.d_model != model.d_model || scene.memory_grid != model.memory_grid)
    throw std::invalid_argument(
        "config: scene memory layout does not match the model (d_model/grid)");
  if (scene.num_classes != model.num_classes)
    throw std::invalid_argument("config: scene and model class counts differ");
  if (model.queries_per_group < scene.max_objects)
    throw std::invalid_argument(
        "config: queries_per_group must be >= max_objects for feasible matching");
}

namespace {

json scene_params_to_json(const SceneParams& p) {
  return {{"max_objects", p.max_objects},
          {"num_classes", p.num_classes},
          {"min_size", p.min_size},
          {"max_size", p.max_size},
          {"min_center_dist", p.min_center_dist},
          {"memory_grid", p.memory_grid},
          {"d_model", p.d_model},
          {"bump_scale", p.bump_scale},
          {"noise_sigma", p.noise_sigma},
          {"projection_seed", p.projection_seed}};
}

SceneParams scene_params_from_json(const json& j) {
  SceneParams p;
  p.max_objects = j.value("max_objects", p.max_objects);
  p.num_classes = j.value("num_classes", p.num_classes);
  p.min_size = j.value("min_size", p.min_size);
  p.max_size = j.value("max_size", p.max_size);
  p.min_center_dist = j.value("min_center_dist", p.min_center_dist);
  p.memory_grid = j.value("memory_grid", p.memory_grid);
  p.d_model = j.value("d_model", p.d_model);
  p.bump_scale = j.value("bump_scale", p.bump_scale);
  p.noise_sigma = j.value("noise_sigma", p.noise_sigma);
  p.projection_seed = j.value("projection_seed", p.projection_seed);
  return p;
}

}  // namespace

RunConfig run_config_from_json(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: invalid JSON: ") + e.what());
  }
  RunConfig cfg;
  cfg.strategy = strategy_from_name(j.value("strategy", std::string("one_to_one")));
  cfg.multiplicity = j.value("multiplicity", cfg.multiplicity);
  cfg.model.groups = j.value("k", cfg.model.groups);
  cfg.model.queries_per_group = j.value("queries_per_group", cfg.model.queries_per_group);
  cfg.model.num_classes = j.value("num_classes", cfg.model.num_classes);
  cfg.model.d_model = j.value("d_model", cfg.model.d_model);
  cfg.model.heads = j.value("heads", cfg.model.heads);
  cfg.model.layers = j.value("layers", cfg.model.layers);
  cfg.model.memory_grid = j.value("memory_grid", cfg.model.memory_grid);
  cfg.model.ffn_dim = j.value("ffn_dim", cfg.model.ffn_dim);
  if (j.contains("scene")) cfg.scene = scene_params_from_json(j.at("scene"));
  cfg.scene.num_classes = cfg.model.num_classes;
  cfg.scene.d_model = cfg.model.d_model;
  cfg.scene.memory_grid = cfg.model.memory_grid;
  cfg.epochs = j.value("epochs", cfg.epochs);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.lr = j.value("lr", cfg.lr);
  cfg.lr_drop_epoch = j.value("lr_drop_epoch", cfg.lr_drop_epoch);
  cfg.lr_drop_factor = j.value("lr_drop_factor", cfg.lr_drop_factor);
  cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.nms_iou = j.value("nms_iou", cfg.nms_iou);
  cfg.score_threshold = j.value("score_threshold", cfg.score_threshold);
  if (j.contains("weights")) {
    const json& w = j.at("weights");
    cfg.weights.mu_cls = w.value("mu_cls", cfg.weights.mu_cls);
    cfg.weights.l1_weight = w.value("l1_weight", cfg.weights.l1_weight);
    cfg.weights.giou_weight = w.value("giou_weight", cfg.weights.giou_weight);
    cfg.weights.focal_alpha = w.value("focal_alpha", cfg.weights.focal_alpha);
    cfg.weights.focal_gamma = w.value("focal_gamma", cfg.weights.focal_gamma);
  }
  cfg.train_dataset = j.value("train_dataset", cfg.train_dataset);
  cfg.val_dataset = j.value("val_dataset", cfg.val_dataset);
  cfg.out_dir = j.value("out_dir", cfg.out_dir);
  cfg.save_checkpoints = j.value("save_checkpoints", cfg.save_checkpoints);
  return cfg;
}

RunConfig run_config_from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return run_config_from_json(ss.str());
}

std::string run_config_to_json(const RunConfig& cfg) {
  json j{{"strategy", strategy_name(cfg.strategy)},
         {"multiplicity", cfg.multiplicity},
         {"k", cfg.model.groups},
         {"queries_per_group", cfg.model.queries_per_group},
         {"num_classes", cfg.model.num_classes},
         {"d_model", cfg.model.d_model},
         {"heads", cfg.model.heads},
         {"layers", cfg.model.layers},
         {"memory_grid", cfg.model.memory_grid},
         {"ffn_dim", cfg.model.ffn_dim},
         {"scene", scene_params_to_json(cfg.scene)},
         {"epochs", cfg.epochs},
         {"batch_size", cfg.batch_size},
         {"lr", cfg.lr},
         {"lr_drop_epoch", cfg.lr_drop_epoch},
         {"lr_drop_factor", cfg.lr_drop_factor},
         {"weight_decay", cfg.weight_decay},
         {"seed", cfg.seed},
         {"nms_iou", cfg.nms_iou},
         {"score_threshold", cfg.score_threshold},
         {"weights",
          {{"mu_cls", cfg.weights.mu_cls},
           {"l1_weight", cfg.weights.l1_weight},
           {"giou_weight", cfg.weights.giou_weight},
           {"focal_alpha", cfg.weights.focal_alpha},
           {"focal_gamma", cfg.weights.focal_gamma}}},
         {"train_dataset", cfg.train_dataset},
         {"val_dataset", cfg.val_dataset},
         {"out_dir", cfg.out_dir},
         {"save_checkpoints", cfg.save_checkpoints}};
  return j.dump(2);
}

namespace {

Tensor memory_tensor(const Scene& scene, const GroupConfig& cfg) {
  return Tensor::from_values({cfg.memory_tokens(), cfg.d_model},
                             std::vector<double>(scene.memory.begin(), scene.memory.end()));
}

std::vector<Prediction> group_predictions(const DecoderOutput& out,
                                          const GroupConfig& cfg, int group) {
  const int n = cfg.queries_per_group;
  const int classes = cfg.num_classes;
  const auto probs = out.class_probs.values();
  const auto boxes = out.boxes.values();
  std::vector<Prediction> preds(static_cast<size_t>(n));
  for (int q = 0; q < n; ++q) {
    const int row = group * n + q;
    Prediction& p = preds[static_cast<size_t>(q)];
    p.class_probs.assign(probs.begin() + static_cast<size_t>(row) * classes,
                         probs.begin() + static_cast<size_t>(row + 1) * classes);
    const double* b = boxes.data() + static_cast<size_t>(row) * 4;
    p.box = Box{b[0], b[1], b[2], b[3]};
  }
  return preds;
}

struct SceneStep {
  double loss = 0.0;
  double md = 0.0;
  bool has_md = false;
};

SceneStep train_scene_step(const DetectorModel& model, const Scene& scene,
                           const RunConfig& cfg, double inv_batch) {
  const GroupConfig& mc = model.config();
  DecoderOutput out = model.decode(memory_tensor(scene, mc));
  std::vector<GroupMatches> matches(static_cast<size_t>(mc.groups));
  std::vector<Assignment> assignments;
  for (int g = 0; g < mc.groups; ++g) {
    const std::vector<Prediction> preds = group_predictions(out, mc, g);
    const CostMatrix cost = build_cost_matrix(preds, scene.gts, cfg.weights);
    if (cfg.strategy == Strategy::kOneToMany) {
      matches[static_cast<size_t>(g)] =
          one_to_many_assign(cost, cfg.multiplicity).matches();
    } else {
      Assignment a = hungarian(cost);
      matches[static_cast<size_t>(g)] = a.matches();
      assignments.push_back(std::move(a));
    }
  }
  Tensor loss = set_loss(out.class_probs, out.boxes, scene.gts, matches, cfg.weights,
                         mc.queries_per_group);
  SceneStep step;
  step.loss = loss.value();
  backward(scale(loss, inv_batch));
  if (mc.groups >= 2 && assignments.size() == static_cast<size_t>(mc.groups)) {
    const MatchingDistanceResult md =
        matching_distance(positions_from_model(model), assignments);
    if (!md.no_gts) {
      step.md = md.value;
      step.has_md = true;
    }
  }
  return step;
}

void append_metrics_row(std::ofstream& out, const EpochMetrics& m) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", m.epoch,
                m.loss, m.map_no_nms, m.map_nms, m.duplicate_rate, m.pd, m.md);
  out << buf;
  out.flush();
}

}  // namespace

std::vector<GtRecord> gt_records(const std::vector<Scene>& scenes) {
  std::vector<GtRecord> records;
  for (const Scene& s : scenes)
    for (const GroundTruth& gt : s.gts) records.push_back({s.scene_id, gt});
  return records;
}

std::vector<Detection> collect_detections(const DetectorModel& model,
                                          const std::vector<Scene>& scenes,
                                          int group_index) {
  NoGradGuard no_grad;
  const GroupConfig& cfg = model.config();
  std::vector<Detection> dets;
  dets.reserve(scenes.size() * static_cast<size_t>(cfg.queries_per_group) *
               cfg.num_classes);
  for (const Scene& scene : scenes) {
    DecoderOutput full = model.decode(memory_tensor(scene, cfg));
    DecoderOutput out = inference_slice(full, cfg, group_index);
    const auto probs = out.class_probs.values();
    const auto boxes = out.boxes.values();
    for (int q = 0; q < cfg.queries_per_group; ++q) {
      const double* b = boxes.data() + static_cast<size_t>(q) * 4;
      for (int c = 0; c < cfg.num_classes; ++c) {
        Detection d;
        d.scene_id = scene.scene_id;
        d.class_id = c;
        d.score = probs[static_cast<size_t>(q) * cfg.num_classes + c];
        d.box = Box{b[0], b[1], b[2], b[3]};
        dets.push_back(d);
      }
    }
  }
  return dets;
}

EvalReport evaluate_model(const DetectorModel& model, const std::vector<Scene>& scenes,
                          const EvalOptions& opts) {
  const std::vector<Detection> dets =
      collect_detections(model, scenes, opts.group_index);
  EvalReport report;
  report.scenes = static_cast<int>(scenes.size());
  report.used_nms = opts.use_nms;
  report.group_index = opts.group_index;
  report.duplicate_rate = duplicate_rate(dets, opts.score_threshold, opts.nms_iou);
  const std::vector<Detection> eval_dets =
      opts.use_nms ? nms(dets, opts.nms_iou) : dets;
  const ApResult ap =
      average_precision(eval_dets, gt_records(scenes), coco_iou_thresholds());
  report.map = ap.map;
  report.per_class = ap.per_class;
  return report;
}

std::string eval_report_to_json(const EvalReport& report,
                                const std::string& detections_path) {
  json per_class = json::object();
  for (const auto& [cls, ap] : report.per_class)
    per_class[std::to_string(cls)] = ap;
  json j{{"map", report.map},
         {"per_class_ap", per_class},
         {"duplicate_rate", report.duplicate_rate},
         {"scenes", report.scenes},
         {"used_nms", report.used_nms},
         {"group_index", report.group_index},
         {"detections", detections_path}};
  return j.dump(2);
}

void write_metrics_csv(const std::vector<EpochMetrics>& history,
                       const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_metrics_csv: cannot write " + path);
  out << "epoch,loss,map_no_nms,map_nms,duplicate_rate,pd,md\n";
  for (const EpochMetrics& m : history) append_metrics_row(out, m);
}

TrainResult train_run(const RunConfig& cfg, const std::vector<Scene>& train,
                      const std::vector<Scene>& val) {
  cfg.validate();
  if (train.empty()) throw std::invalid_argument("train_run: empty training set");

  TrainResult result;
  result.model = DetectorModel::init(cfg.model, mix_seed(cfg.seed, 1));
  AdamWConfig opt_cfg;
  opt_cfg.lr = cfg.lr;
  opt_cfg.weight_decay = cfg.weight_decay;
  opt_cfg.lr_drop_epoch = cfg.effective_lr_drop_epoch();
  opt_cfg.lr_drop_factor = cfg.lr_drop_factor;
  AdamW opt(opt_cfg, result.model.parameters());
  Rng shuffle_rng(mix_seed(cfg.seed, 2));

  const bool io = !cfg.out_dir.empty();
  std::ofstream metrics_out;
  std::string checkpoints_dir;
  if (io) {
    fs::create_directories(cfg.out_dir);
    metrics_out.open(cfg.out_dir + "/metrics.csv");
    if (!metrics_out)
      throw std::runtime_error("train_run: cannot write metrics under " + cfg.out_dir);
    metrics_out << "epoch,loss,map_no_nms,map_nms,duplicate_rate,pd,md\n";
    metrics_out.flush();
    if (cfg.save_checkpoints) {
      checkpoints_dir = cfg.out_dir + "/checkpoints";
      fs::create_directories(checkpoints_dir);
    }
  }

  const std::vector<GtRecord> val_gts = gt_records(val);
  const std::vector<double> thresholds = coco_iou_thresholds();
  std::vector<size_t> order(train.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    opt.set_epoch(epoch);
    for (size_t i = order.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(
          shuffle_rng.uniform_int(0, static_cast<int>(i) - 1));
      std::swap(order[i - 1], order[j]);
    }

    double loss_sum = 0.0;
    double md_sum = 0.0;
    int md_count = 0;
    size_t cursor = 0;
    while (cursor < order.size()) {
      const int bsz =
          static_cast<int>(std::min<size_t>(cfg.batch_size, order.size() - cursor));
      opt.zero_grad();
      for (int b = 0; b < bsz; ++b, ++cursor) {
        SceneStep step;
        try {
          step = train_scene_step(result.model, train[order[cursor]], cfg, 1.0 / bsz);
        } catch (const std::exception& e) {
          // a diverging model surfaces as non-finite activations or costs
          result.diverged = true;
          log_warn("train_run: halted at epoch " + std::to_string(epoch) + ": " +
                   e.what() + " (partial metrics preserved)");
          return result;
        }
        if (!std::isfinite(step.loss)) {
          result.diverged = true;
          log_warn("train_run: non-finite loss at epoch " + std::to_string(epoch) +
                   "; halting (partial metrics preserved)");
          return result;
        }
        loss_sum += step.loss;
        if (step.has_md) {
          md_sum += step.md;
          ++md_count;
        }
      }
      opt.step();
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.loss = loss_sum / static_cast<double>(train.size());
    const int k = cfg.model.groups;
    m.pd = k >= 2 ? perturbation_distance(positions_from_model(result.model)) : 0.0;
    m.md = md_count > 0 ? md_sum / md_count : 0.0;

    const std::vector<Detection> dets = collect_detections(result.model, val, 0);
    m.duplicate_rate = duplicate_rate(dets, cfg.score_threshold, cfg.nms_iou);
    m.map_no_nms = average_precision(dets, val_gts, thresholds).map;
    m.map_nms = average_precision(nms(dets, cfg.nms_iou), val_gts, thresholds).map;

    result.history.push_back(m);
    if (io) {
      append_metrics_row(metrics_out, m);
      if (cfg.save_checkpoints) {
        char name[64];
        std::snprintf(name, sizeof(name), "/epoch_%03d.ckpt", epoch);
        result.model.save_checkpoint(checkpoints_dir + name);
      }
    }
  }

  if (io && cfg.save_checkpoints)
    result.model.save_checkpoint(checkpoints_dir + "/final.ckpt");
  return result;
}

void run_parallel(const std::vector<std::function<void()>>& tasks, int workers) {
  if (tasks.empty()) return;
  workers = std::max(1, std::min<int>(workers, static_cast<int>(tasks.size())));
  if (workers == 1) {
    for (const auto& t : tasks) t();
    return;
  }
  std::atomic<size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&]() {
      while (true) {
        const size_t i = next.fetch_add(1);
        if (i >= tasks.size()) return;
        tasks[i]();
      }
    });
  }
  for (std::thread& t : pool) t.join();
}

SweepResult run_sweep(const RunConfig& base, const std::string& axis,
                      const std::vector<int>& values, int n_seeds,
                      const std::vector<Scene>& train, const std::vector<Scene>& val,
                      const std::string& out_dir, int workers) {
  if (axis != "k" && axis != "multiplicity")
    throw std::invalid_argument("sweep: axis must be 'k' or 'multiplicity'");
  if (n_seeds < 1) throw std::invalid_argument("sweep: seeds must be >= 1");

  SweepResult result;
  result.rows.resize(values.size() * static_cast<size_t>(n_seeds));
  std::vector<std::function<void()>> tasks;
  size_t row_index = 0;
  for (int value : values) {
    for (int s = 0; s < n_seeds; ++s) {
      SweepRow& row = result.rows[row_index++];
      row.axis = axis;
      row.value = value;
      row.seed = base.seed + static_cast<uint64_t>(s);
      RunConfig cfg = base;
      cfg.seed = row.seed;
      if (axis == "k") {
        cfg.strategy = value > 1 ? Strategy::kGroupWise : Strategy::kOneToOne;
        cfg.model.groups = value;
      } else {
        cfg.strategy = Strategy::kOneToMany;
        cfg.model.groups = 1;
        cfg.multiplicity = value;
      }
      if (!out_dir.empty()) {
        cfg.out_dir = out_dir + "/run_" + axis + std::to_string(value) + "_seed" +
                      std::to_string(row.seed);
        cfg.save_checkpoints = false;
      } else {
        cfg.out_dir.clear();
      }
      tasks.push_back([&row, cfg, &train, &val]() {
        try {
          const TrainResult tr = train_run(cfg, train, val);
          if (tr.diverged || tr.history.empty()) {
            row.failed = true;
            row.error = tr.diverged ? "diverged" : "no epochs";
            return;
          }
          const EpochMetrics& last = tr.history.back();
          row.map_nms = last.map_nms;
          row.map_no_nms = last.map_no_nms;
          row.duplicate_rate = last.duplicate_rate;
        } catch (const std::exception& e) {
          row.failed = true;
          row.error = e.what();
        }
      });
    }
  }
  run_parallel(tasks, workers);

  for (int value : values) {
    std::vector<const SweepRow*> ok;
    for (const SweepRow& row : result.rows)
      if (row.value == value && !row.failed) ok.push_back(&row);
    if (ok.empty()) continue;
    SweepValueStats st;
    st.value = value;
    st.runs = static_cast<int>(ok.size());
    auto mean_std = [&](auto get, double& mean, double& stddev) {
      double m = 0.0;
      for (const SweepRow* r : ok) m += get(*r);
      m /= ok.size();
      double v = 0.0;
      for (const SweepRow* r : ok) v += (get(*r) - m) * (get(*r) - m);
      mean = m;
      stddev = ok.size() > 1 ? std::sqrt(v / (ok.size() - 1)) : 0.0;
    };
    mean_std([](const SweepRow& r) { return r.map_nms; }, st.map_nms_mean,
             st.map_nms_std);
    mean_std([](const SweepRow& r) { return r.map_no_nms; }, st.map_no_nms_mean,
             st.map_no_nms_std);
    mean_std([](const SweepRow& r) { return r.duplicate_rate; },
             st.duplicate_rate_mean, st.duplicate_rate_std);
    result.stats.push_back(st);
  }
  return result;
}

void write_sweep_csv(const SweepResult& result, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_sweep_csv: cannot write " + path);
  out << "axis,value,seed,map_nms,map_no_nms,duplicate_rate,error\n";
  char buf[256];
  for (const SweepRow& r : result.rows) {
    if (r.failed) {
      out << r.axis << ',' << r.value << ',' << r.seed << ",,,," << r.error << "\n";
      continue;
    }
    std::snprintf(buf, sizeof(buf), "%s,%d,%llu,%.17g,%.17g,%.17g,\n", r.axis.c_str(),
                  r.value, static_cast<unsigned long long>(r.seed), r.map_nms,
                  r.map_no_nms, r.duplicate_rate);
    out << buf;
  }
  for (const SweepValueStats& st : result.stats) {
    std::snprintf(buf, sizeof(buf), "%s,%d,mean,%.17g,%.17g,%.17g,\n",
                  result.rows.empty() ? "" : result.rows[0].axis.c_str(), st.value,
                  st.map_nms_mean, st.map_no_nms_mean, st.duplicate_rate_mean);
    out << buf;
    std::snprintf(buf, sizeof(buf), "%s,%d,stddev,%.17g,%.17g,%.17g,\n",
                  result.rows.empty() ? "" : result.rows[0].axis.c_str(), st.value,
                  st.map_nms_std, st.map_no_nms_std, st.duplicate_rate_std);
    out << buf;
  }
}

std::string sweep_summary_json(const SweepResult& result, const std::string& axis) {
  json values = json::array();
  const SweepValueStats* v1 = nullptr;
  const SweepValueStats* v3 = nullptr;
  for (const SweepValueStats& st : result.stats) {
    values.push_back({{"value", st.value},
                      {"runs", st.runs},
                      {"map_nms_mean", st.map_nms_mean},
                      {"map_nms_std", st.map_nms_std},
                      {"map_no_nms_mean", st.map_no_nms_mean},
                      {"map_no_nms_std", st.map_no_nms_std},
                      {"duplicate_rate_mean", st.duplicate_rate_mean},
                      {"duplicate_rate_std", st.duplicate_rate_std}});
    if (st.value == 1) v1 = &st;
    if (st.value == 3) v3 = &st;
  }
  json j{{"axis", axis}, {"values", values}};
  if (axis == "k" && v1 && v3)
    j["trend_k3_beats_k1_no_nms"] = v3->map_no_nms_mean > v1->map_no_nms_mean;
  return j.dump(2);
}

DiagnoseResult diagnose_run(const std::string& run_dir,
                            const std::vector<Scene>* scenes,
                            const CostWeights& weights, const std::string& out_dir) {
  DiagnoseResult result;
  const fs::path ckpt_dir = fs::path(run_dir) / "checkpoints";
  if (!fs::is_directory(ckpt_dir))
    throw std::runtime_error("diagnose: no checkpoints directory under " + run_dir);

  std::vector<std::pair<int, fs::path>> epochs;
  for (const auto& entry : fs::directory_iterator(ckpt_dir)) {
    const std::string name = entry.path().filename().string();
    int epoch = 0;
    if (std::sscanf(name.c_str(), "epoch_%d.ckpt", &epoch) == 1)
      epochs.emplace_back(epoch, entry.path());
  }
  std::sort(epochs.begin(), epochs.end());
  if (epochs.empty())
    result.warnings.push_back("no epoch checkpoints found; partial output");
  if (!scenes)
    result.warnings.push_back("no dataset given; md reported as 0");

  fs::create_directories(out_dir);
  std::ofstream series(out_dir + "/pd_md.csv");
  if (!series) throw std::runtime_error("diagnose: cannot write under " + out_dir);
  series << "step,pd,md\n";

  DetectorModel last;
  bool has_model = false;
  for (const auto& [epoch, path] : epochs) {
    DetectorModel model = DetectorModel::load_checkpoint(path.string());
    const int k = model.config().groups;
    double pd = 0.0, md = 0.0;
    if (k >= 2) {
      const GroupPositions pos = positions_from_model(model);
      pd = perturbation_distance(pos);
      if (scenes) {
        NoGradGuard no_grad;
        double md_sum = 0.0;
        int md_count = 0;
        for (const Scene& scene : *scenes) {
          DecoderOutput out = model.decode(memory_tensor(scene, model.config()));
          std::vector<CostMatrix> costs;
          costs.reserve(static_cast<size_t>(k));
          for (int g = 0; g < k; ++g)
            costs.push_back(
                build_cost_matrix(group_predictions(out, model.config(), g),
                                  scene.gts, weights));
          const MatchingDistanceResult r =
              matching_distance(pos, group_wise_assign(costs));
          if (!r.no_gts) {
            md_sum += r.value;
            ++md_count;
          }
        }
        md = md_count > 0 ? md_sum / md_count : 0.0;
      }
    }
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g\n", epoch, pd, md);
    series << buf;
    result.epochs.push_back(epoch);
    result.pd.push_back(pd);
    result.md.push_back(md);
    last = std::move(model);
    has_model = true;
  }

  if (has_model) {
    std::ofstream positions(out_dir + "/positions.csv");
    dump_positions(positions_from_model(last), positions);
  }
  for (const std::string& w : result.warnings) log_warn("diagnose: " + w);
  return result;
}

}  // namespace grouplab
