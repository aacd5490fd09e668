#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "grouplab/lab.hpp"
#include "grouplab/rng.hpp"

using namespace grouplab;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_run_config(Strategy strategy, int k) {
  RunConfig cfg;
  cfg.strategy = strategy;
  cfg.model.groups = k;
  cfg.model.queries_per_group = 4;
  cfg.model.num_classes = 2;
  cfg.model.d_model = 16;
  cfg.model.heads = 2;
  cfg.model.layers = 1;
  cfg.model.memory_grid = 3;
  cfg.model.ffn_dim = 32;
  cfg.scene.max_objects = 2;
  cfg.scene.num_classes = 2;
  cfg.scene.d_model = 16;
  cfg.scene.memory_grid = 3;
  cfg.multiplicity = 2;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.seed = 5;
  return cfg;
}

std::vector<Scene> make_scenes(const SceneParams& params, uint64_t seed, int count,
                               int64_t first_id) {
  std::vector<Scene> scenes;
  for (int i = 0; i < count; ++i) {
    Scene s = sample_scene(mix_seed(seed, static_cast<uint64_t>(first_id + i)), params);
    s.scene_id = first_id + i;
    build_memory(s, params);
    scenes.push_back(std::move(s));
  }
  return scenes;
}

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "grouplab_lab_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("run config json round-trips") {
  RunConfig cfg = tiny_run_config(Strategy::kGroupWise, 3);
  cfg.train_dataset = "a.ds";
  cfg.val_dataset = "b.ds";
  cfg.lr = 2e-3;
  cfg.weights.mu_cls = 1.5;
  const RunConfig parsed = run_config_from_json(run_config_to_json(cfg));
  CHECK(parsed.strategy == Strategy::kGroupWise);
  CHECK(parsed.model.groups == 3);
  CHECK(parsed.model.d_model == 16);
  CHECK(parsed.lr == 2e-3);
  CHECK(parsed.weights.mu_cls == 1.5);
  CHECK(parsed.train_dataset == "a.ds");
  CHECK(parsed.scene.memory_grid == 3);
}

TEST_CASE("strategy names parse both ways") {
  for (Strategy s :
       {Strategy::kOneToOne, Strategy::kOneToMany, Strategy::kGroupWise})
    CHECK(strategy_from_name(strategy_name(s)) == s);
  CHECK_THROWS_AS(strategy_from_name("bogus"), std::invalid_argument);
}

TEST_CASE("config validation catches inconsistent strategy fields") {
  RunConfig multi_group_o2o = tiny_run_config(Strategy::kOneToOne, 2);
  CHECK_THROWS_WITH_AS(multi_group_o2o.validate(), doctest::Contains("group_wise"),
                       std::invalid_argument);

  RunConfig starving = tiny_run_config(Strategy::kOneToMany, 1);
  starving.multiplicity = 3;  // needs 3*2=6 queries, config has 4
  CHECK_THROWS_AS(starving.validate(), std::invalid_argument);

  RunConfig bad_drop = tiny_run_config(Strategy::kOneToOne, 1);
  bad_drop.lr_drop_epoch = 2;
  bad_drop.epochs = 2;
  CHECK_THROWS_AS(bad_drop.validate(), std::invalid_argument);

  RunConfig defaults;
  CHECK(defaults.effective_lr_drop_epoch() == 28);  // ceil(11/12 * 30)
}

TEST_CASE("a tiny training run is deterministic to the bit") {
  const RunConfig cfg = tiny_run_config(Strategy::kGroupWise, 2);
  const std::vector<Scene> train = make_scenes(cfg.scene, 11, 10, 0);
  const std::vector<Scene> val = make_scenes(cfg.scene, 11, 4, 100);
  const TrainResult a = train_run(cfg, train, val);
  const TrainResult b = train_run(cfg, train, val);
  REQUIRE(a.history.size() == 2);
  REQUIRE(b.history.size() == 2);
  for (size_t e = 0; e < a.history.size(); ++e) {
    CHECK(a.history[e].loss == b.history[e].loss);
    CHECK(a.history[e].map_no_nms == b.history[e].map_no_nms);
    CHECK(a.history[e].pd == b.history[e].pd);
    CHECK(a.history[e].md == b.history[e].md);
  }
  const auto pa = a.model.named_parameters();
  const auto pb = b.model.named_parameters();
  for (size_t i = 0; i < pa.size(); ++i) {
    const auto va = pa[i].second.values();
    const auto vb = pb[i].second.values();
    for (size_t j = 0; j < va.size(); ++j) CHECK(va[j] == vb[j]);
  }
  // K=2 runs report positive diagnostics
  CHECK(a.history.back().pd > 0.0);
  CHECK(a.history.back().md > 0.0);
}

TEST_CASE("group_wise with K=1 reproduces one_to_one bit for bit") {
  RunConfig o2o = tiny_run_config(Strategy::kOneToOne, 1);
  RunConfig gw1 = tiny_run_config(Strategy::kGroupWise, 1);
  o2o.epochs = gw1.epochs = 3;
  const std::vector<Scene> train = make_scenes(o2o.scene, 21, 12, 0);
  const std::vector<Scene> val = make_scenes(o2o.scene, 21, 4, 100);
  const TrainResult a = train_run(o2o, train, val);
  const TrainResult b = train_run(gw1, train, val);
  REQUIRE(a.history.size() == 3);
  for (size_t e = 0; e < 3; ++e) {
    CHECK(a.history[e].loss == b.history[e].loss);
    CHECK(a.history[e].map_no_nms == b.history[e].map_no_nms);
    CHECK(a.history[e].map_nms == b.history[e].map_nms);
    CHECK(a.history[e].duplicate_rate == b.history[e].duplicate_rate);
  }
  const auto pa = a.model.named_parameters();
  const auto pb = b.model.named_parameters();
  for (size_t i = 0; i < pa.size(); ++i) {
    const auto va = pa[i].second.values();
    const auto vb = pb[i].second.values();
    for (size_t j = 0; j < va.size(); ++j) CHECK(va[j] == vb[j]);
  }
}

TEST_CASE("training writes metrics and checkpoints under the output directory") {
  RunConfig cfg = tiny_run_config(Strategy::kOneToOne, 1);
  const fs::path out = temp_dir("train_io");
  cfg.out_dir = out.string();
  const std::vector<Scene> train = make_scenes(cfg.scene, 31, 8, 0);
  const std::vector<Scene> val = make_scenes(cfg.scene, 31, 3, 100);
  const TrainResult result = train_run(cfg, train, val);
  CHECK(fs::exists(out / "metrics.csv"));
  CHECK(fs::exists(out / "checkpoints" / "epoch_001.ckpt"));
  CHECK(fs::exists(out / "checkpoints" / "epoch_002.ckpt"));
  CHECK(fs::exists(out / "checkpoints" / "final.ckpt"));

  std::ifstream metrics(out / "metrics.csv");
  std::string header;
  std::getline(metrics, header);
  CHECK(header == "epoch,loss,map_no_nms,map_nms,duplicate_rate,pd,md");
  int rows = 0;
  for (std::string line; std::getline(metrics, line);) ++rows;
  CHECK(rows == 2);

  const DetectorModel loaded =
      DetectorModel::load_checkpoint((out / "checkpoints" / "final.ckpt").string());
  const auto exported = result.model.named_parameters();
  const auto reloaded = loaded.named_parameters();
  for (size_t i = 0; i < exported.size(); ++i) {
    const auto va = exported[i].second.values();
    const auto vb = reloaded[i].second.values();
    for (size_t j = 0; j < va.size(); ++j) CHECK(va[j] == vb[j]);
  }
}

TEST_CASE("re-evaluating a model is bit-stable") {
  const RunConfig cfg = tiny_run_config(Strategy::kGroupWise, 2);
  const std::vector<Scene> train = make_scenes(cfg.scene, 41, 6, 0);
  const std::vector<Scene> val = make_scenes(cfg.scene, 41, 4, 100);
  const TrainResult trained = train_run(cfg, train, val);
  EvalOptions opts;
  const EvalReport a = evaluate_model(trained.model, val, opts);
  const EvalReport b = evaluate_model(trained.model, val, opts);
  CHECK(a.map == b.map);
  CHECK(a.duplicate_rate == b.duplicate_rate);
  CHECK(a.per_class == b.per_class);

  // group slicing changes the evaluated rows
  EvalOptions second_group = opts;
  second_group.group_index = 1;
  const EvalReport c = evaluate_model(trained.model, val, second_group);
  CHECK(c.group_index == 1);
}

TEST_CASE("a non-finite training state halts the run and preserves prior metrics") {
  RunConfig cfg = tiny_run_config(Strategy::kOneToOne, 1);
  cfg.epochs = 3;
  const std::vector<Scene> val = make_scenes(cfg.scene, 51, 2, 100);
  std::vector<Scene> train = make_scenes(cfg.scene, 51, 4, 0);
  // a gt coordinate far outside the unit square overflows the matching terms
  train[1].gts[0].box.cx = 1e308;
  const TrainResult result = train_run(cfg, train, val);
  CHECK(result.diverged);
  CHECK(result.history.empty());  // diverged inside the first epoch
}

TEST_CASE("run_parallel executes every task") {
  std::vector<int> done(16, 0);
  std::vector<std::function<void()>> tasks;
  for (int i = 0; i < 16; ++i) tasks.push_back([&done, i] { done[i] = 1; });
  run_parallel(tasks, 4);
  for (int v : done) CHECK(v == 1);
}

TEST_CASE("sweep covers the axis, aggregates means, and survives failures") {
  RunConfig base = tiny_run_config(Strategy::kOneToOne, 1);
  base.epochs = 1;
  const std::vector<Scene> train = make_scenes(base.scene, 61, 6, 0);
  const std::vector<Scene> val = make_scenes(base.scene, 61, 3, 100);
  const SweepResult result = run_sweep(base, "k", {1, 2}, 2, train, val, "", 2);
  REQUIRE(result.rows.size() == 4);
  for (const SweepRow& row : result.rows) CHECK_FALSE(row.failed);
  REQUIRE(result.stats.size() == 2);
  CHECK(result.stats[0].runs == 2);

  // an infeasible multiplicity fails that run but not the sweep
  const SweepResult failing =
      run_sweep(base, "multiplicity", {1, 5}, 1, train, val, "", 2);
  REQUIRE(failing.rows.size() == 2);
  CHECK_FALSE(failing.rows[0].failed);
  CHECK(failing.rows[1].failed);
  const fs::path out = temp_dir("sweep_csv");
  write_sweep_csv(failing, (out / "sweep.csv").string());
  std::ifstream in(out / "sweep.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "axis,value,seed,map_nms,map_no_nms,duplicate_rate,error");
}

TEST_CASE("diagnose walks checkpoints and emits the csv series") {
  RunConfig cfg = tiny_run_config(Strategy::kGroupWise, 2);
  const fs::path out = temp_dir("diagnose");
  cfg.out_dir = (out / "run").string();
  cfg.epochs = 2;
  const std::vector<Scene> train = make_scenes(cfg.scene, 71, 6, 0);
  const std::vector<Scene> val = make_scenes(cfg.scene, 71, 3, 100);
  train_run(cfg, train, val);

  const DiagnoseResult result = diagnose_run(cfg.out_dir, &val, CostWeights{},
                                             (out / "diag").string());
  CHECK(result.epochs == std::vector<int>{1, 2});
  CHECK(result.pd.size() == 2);
  CHECK(result.pd[0] > 0.0);
  CHECK(result.md[0] > 0.0);
  CHECK(fs::exists(out / "diag" / "pd_md.csv"));
  CHECK(fs::exists(out / "diag" / "positions.csv"));

  std::ifstream series(out / "diag" / "pd_md.csv");
  std::string header;
  std::getline(series, header);
  CHECK(header == "step,pd,md");

  // positions dump has one row per query plus the header
  std::ifstream positions(out / "diag" / "positions.csv");
  int lines = 0;
  for (std::string line; std::getline(positions, line);) ++lines;
  CHECK(lines == cfg.model.total_queries() + 1);

  CHECK_THROWS_AS(diagnose_run((out / "nowhere").string(), nullptr, CostWeights{},
                               (out / "d2").string()),
                  std::runtime_error);
}
