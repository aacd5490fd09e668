#include "grouplab/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "grouplab/rng.hpp"

namespace grouplab {

namespace {

constexpr const char* kDatasetMagic = "grouplab-dataset v1 ";

void append_double(std::string& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  out += buf;
}

nlohmann::json params_to_json(const SceneParams& p) {
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

SceneParams params_from_json(const nlohmann::json& j) {
  SceneParams p;
  p.max_objects = j.at("max_objects").get<int>();
  p.num_classes = j.at("num_classes").get<int>();
  p.min_size = j.at("min_size").get<double>();
  p.max_size = j.at("max_size").get<double>();
  p.min_center_dist = j.at("min_center_dist").get<double>();
  p.memory_grid = j.at("memory_grid").get<int>();
  p.d_model = j.at("d_model").get<int>();
  p.bump_scale = j.at("bump_scale").get<double>();
  p.noise_sigma = j.at("noise_sigma").get<double>();
  p.projection_seed = j.at("projection_seed").get<uint64_t>();
  return p;
}

}  // namespace

Scene sample_scene(uint64_t seed, const SceneParams& params) {
  Scene scene;
  scene.seed = seed;
  Rng rng(mix_seed(seed, 0x5ce9e));
  const int target = rng.uniform_int(1, params.max_objects);
  for (int obj = 0; obj < target; ++obj) {
    bool placed = false;
    for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
      const double w = rng.uniform(params.min_size, params.max_size);
      const double h = rng.uniform(params.min_size, params.max_size);
      const double cx = rng.uniform();
      const double cy = rng.uniform();
      Box raw{cx, cy, w, h};
      const auto c = raw.corners();
      Box box = Box::from_corners(std::max(0.0, c.x1), std::max(0.0, c.y1),
                                  std::min(1.0, c.x2), std::min(1.0, c.y2));
      bool ok = true;
      for (const GroundTruth& gt : scene.gts) {
        const double dx = gt.box.cx - box.cx;
        const double dy = gt.box.cy - box.cy;
        if (std::sqrt(dx * dx + dy * dy) < params.min_center_dist) {
          ok = false;
          break;
        }
      }
      if (!ok) continue;
      GroundTruth gt;
      gt.class_id = rng.uniform_int(0, params.num_classes - 1);
      gt.box = box;
      scene.gts.push_back(gt);
      placed = true;
    }
    if (!placed) {
      scene.undersampled = true;
      break;
    }
  }
  return scene;
}

std::vector<double> raw_cell_features(const Scene& scene, const SceneParams& params) {
  const int g = params.memory_grid;
  const int channels = params.num_classes + 2;
  std::vector<double> raw(static_cast<size_t>(g) * g * channels, 0.0);
  for (int row = 0; row < g; ++row) {
    for (int col = 0; col < g; ++col) {
      double* cell = raw.data() + (static_cast<size_t>(row) * g + col) * channels;
      const double cell_x = (col + 0.5) / g;
      const double cell_y = (row + 0.5) / g;
      for (const GroundTruth& gt : scene.gts) {
        const double dx = cell_x - gt.box.cx;
        const double dy = cell_y - gt.box.cy;
        const double spread =
            2.0 * std::sqrt(gt.box.w * gt.box.h) * params.bump_scale;
        if (spread <= 0.0) continue;
        cell[gt.class_id] += std::exp(-(dx * dx + dy * dy) / spread);
      }
      cell[params.num_classes] = cell_x;
      cell[params.num_classes + 1] = cell_y;
    }
  }
  return raw;
}

std::vector<double> memory_projection(const SceneParams& params) {
  const int channels = params.num_classes + 2;
  Rng rng(mix_seed(params.projection_seed, 0x970));
  std::vector<double> proj(static_cast<size_t>(channels) * params.d_model);
  const double scale = 1.0 / std::sqrt(static_cast<double>(channels));
  for (double& v : proj) v = rng.normal() * scale;
  return proj;
}

void build_memory(Scene& scene, const SceneParams& params) {
  const int g = params.memory_grid;
  const int channels = params.num_classes + 2;
  const int d = params.d_model;
  const std::vector<double> raw = raw_cell_features(scene, params);
  const std::vector<double> proj = memory_projection(params);
  Rng noise(mix_seed(scene.seed, 0x11015e));
  scene.memory.assign(static_cast<size_t>(g) * g * d, 0.0);
  for (int cell = 0; cell < g * g; ++cell) {
    const double* in = raw.data() + static_cast<size_t>(cell) * channels;
    double* out = scene.memory.data() + static_cast<size_t>(cell) * d;
    for (int k = 0; k < d; ++k) {
      double acc = 0.0;
      for (int c = 0; c < channels; ++c) acc += in[c] * proj[static_cast<size_t>(c) * d + k];
      out[k] = acc + noise.normal(0.0, params.noise_sigma);
    }
  }
}

void save_dataset(const std::vector<Scene>& scenes, const SceneParams& params,
                  const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_dataset: cannot write " + path);
  out << kDatasetMagic << params_to_json(params).dump() << "\n";
  std::string line;
  for (const Scene& s : scenes) {
    line.clear();
    line += std::to_string(s.scene_id);
    line += ',';
    line += s.undersampled ? '1' : '0';
    line += ',';
    line += std::to_string(s.gts.size());
    for (const GroundTruth& gt : s.gts) {
      line += ',';
      line += std::to_string(gt.class_id);
      for (double v : {gt.box.cx, gt.box.cy, gt.box.w, gt.box.h}) {
        line += ',';
        append_double(line, v);
      }
    }
    for (double v : s.memory) {
      line += ',';
      append_double(line, v);
    }
    out << line << "\n";
  }
  if (!out) throw std::runtime_error("save_dataset: write failed for " + path);
}

std::vector<Scene> load_dataset(const std::string& path, SceneParams* params_out) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_dataset: cannot read " + path);
  std::string header;
  if (!std::getline(in, header) || header.rfind(kDatasetMagic, 0) != 0)
    throw std::runtime_error("load_dataset: " + path +
                             ": missing or mismatched format header (line 1)");
  SceneParams params;
  try {
    params = params_from_json(nlohmann::json::parse(header.substr(strlen(kDatasetMagic))));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("load_dataset: bad header params (line 1): " +
                             std::string(e.what()));
  }
  const size_t memory_len =
      static_cast<size_t>(params.memory_grid) * params.memory_grid * params.d_model;

  std::vector<Scene> scenes;
  std::string line;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const char* p = line.c_str();
    auto fail = [&](const std::string& why) {
      throw std::runtime_error("load_dataset: " + path + ": line " +
                               std::to_string(line_no) + ": " + why);
    };
    auto next_value = [&]() -> double {
      char* end = nullptr;
      const double v = std::strtod(p, &end);
      if (end == p) fail("truncated record");
      p = (*end == ',') ? end + 1 : end;
      return v;
    };
    Scene s;
    s.scene_id = static_cast<int64_t>(next_value());
    s.undersampled = next_value() != 0.0;
    const int m = static_cast<int>(next_value());
    if (m < 0 || m > params.max_objects) fail("object count out of range");
    s.gts.resize(static_cast<size_t>(m));
    for (GroundTruth& gt : s.gts) {
      gt.class_id = static_cast<int>(next_value());
      gt.box.cx = next_value();
      gt.box.cy = next_value();
      gt.box.w = next_value();
      gt.box.h = next_value();
    }
    s.memory.resize(memory_len);
    for (double& v : s.memory) v = next_value();
    while (*p == ' ') ++p;
    if (*p != '\0') fail("trailing data");
    scenes.push_back(std::move(s));
  }
  if (params_out) *params_out = params;
  return scenes;
}

uint64_t file_content_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("file_content_hash: cannot read " + path);
  uint64_t hash = 1469598103934665603ULL;
  char buf[1 << 16];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    const std::streamsize got = in.gcount();
    for (std::streamsize i = 0; i < got; ++i) {
      hash ^= static_cast<unsigned char>(buf[i]);
      hash *= 1099511628211ULL;
    }
  }
  return hash;
}

}  // namespace grouplab
