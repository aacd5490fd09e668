#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "grouplab/match_cost.hpp"

namespace grouplab {

struct SceneParams {
  int max_objects = 5;          // M drawn uniformly from [1, max_objects]
  int num_classes = 4;
  double min_size = 0.08;
  double max_size = 0.4;
  double min_center_dist = 0.05;
  int memory_grid = 8;          // G; the memory holds G*G feature tokens
  int d_model = 64;
  double bump_scale = 0.5;      // s in the Gaussian feature bumps
  double noise_sigma = 0.05;
  uint64_t projection_seed = 77003117;  // the frozen "encoder" projection
};

// A synthetic image surrogate: ground-truth objects plus a grid of memory
// feature tokens for cross-attention. The decoder only ever sees the memory.
struct Scene {
  int64_t scene_id = 0;
  uint64_t seed = 0;
  bool undersampled = false;  // rejection sampling gave up before reaching M
  std::vector<GroundTruth> gts;
  std::vector<double> memory;  // (G*G) x d_model, row-major
};

// Ground truths only; deterministic per (seed, params). Boxes are clipped to
// the unit square and centers kept min_center_dist apart.
Scene sample_scene(uint64_t seed, const SceneParams& params);

// Raw per-cell features: C Gaussian class channels + the 2 cell-center
// coordinates, before projection and noise. Exposed for probing tests.
std::vector<double> raw_cell_features(const Scene& scene, const SceneParams& params);

// The fixed seeded (C+2) x d_model projection.
std::vector<double> memory_projection(const SceneParams& params);

// Fills scene.memory: projected raw features plus Gaussian noise.
void build_memory(Scene& scene, const SceneParams& params);

// Line-delimited dataset with a versioned header; doubles serialized with 17
// significant digits so the round trip is bit-exact.
void save_dataset(const std::vector<Scene>& scenes, const SceneParams& params,
                  const std::string& path);
std::vector<Scene> load_dataset(const std::string& path,
                                SceneParams* params_out = nullptr);

uint64_t file_content_hash(const std::string& path);  // FNV-1a over bytes

}  // namespace grouplab
