#include "grouplab/decoder.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "grouplab/rng.hpp"

namespace grouplab {

void GroupConfig::validate() const {
  if (groups < 1 || queries_per_group < 1 || num_classes < 1 || d_model < 1 ||
      heads < 1 || layers < 1 || memory_grid < 1 || ffn_dim < 1)
    throw std::invalid_argument("GroupConfig: all extents must be >= 1");
  if (d_model % heads != 0)
    throw std::invalid_argument("GroupConfig: d_model " + std::to_string(d_model) +
                                " not divisible by heads " + std::to_string(heads));
}

std::vector<uint8_t> build_group_mask(int groups, int queries_per_group) {
  if (groups < 1 || queries_per_group < 1)
    throw std::invalid_argument("build_group_mask: K and N must be >= 1");
  const int s = groups * queries_per_group;
  std::vector<uint8_t> mask(static_cast<size_t>(s) * s, 0);
  for (int i = 0; i < s; ++i) {
    const int g = i / queries_per_group;
    uint8_t* row = mask.data() + static_cast<size_t>(i) * s;
    for (int j = g * queries_per_group; j < (g + 1) * queries_per_group; ++j)
      row[j] = 1;
  }
  return mask;
}

Tensor group_mask_to_additive(const std::vector<uint8_t>& mask, int size) {
  std::vector<double> values(static_cast<size_t>(size) * size);
  for (size_t i = 0; i < values.size(); ++i)
    values[i] = mask[i] ? 0.0 : kMaskValue;
  return Tensor::from_values({size, size}, std::move(values));
}

namespace {

Tensor xavier(Rng& rng, int fan_in, int fan_out) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  std::vector<double> v(static_cast<size_t>(fan_in) * fan_out);
  for (double& x : v) x = rng.uniform(-limit, limit);
  return Tensor::from_values({fan_in, fan_out}, std::move(v), true);
}

AttentionParams init_attention(Rng& rng, int d) {
  AttentionParams p;
  p.wq = xavier(rng, d, d);
  p.bq = Tensor::zeros({d}, true);
  p.wk = xavier(rng, d, d);
  p.bk = Tensor::zeros({d}, true);
  p.wv = xavier(rng, d, d);
  p.bv = Tensor::zeros({d}, true);
  p.wo = xavier(rng, d, d);
  p.bo = Tensor::zeros({d}, true);
  return p;
}

// Standard multi-head attention; per-head slices of shared projections.
// Query/key inputs carry positional terms, values never do.
Tensor attention(const Tensor& q_in, const Tensor& k_in, const Tensor& v_in,
                 const AttentionParams& p, const Tensor* mask, int heads) {
  const int d = q_in.shape()[1];
  const int dh = d / heads;
  Tensor q = add(matmul(q_in, p.wq), p.bq);
  Tensor k = add(matmul(k_in, p.wk), p.bk);
  Tensor v = add(matmul(v_in, p.wv), p.bv);
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> outs;
  outs.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    Tensor qh = slice(q, 1, h * dh, (h + 1) * dh);
    Tensor kh = slice(k, 1, h * dh, (h + 1) * dh);
    Tensor vh = slice(v, 1, h * dh, (h + 1) * dh);
    Tensor scores = scale(matmul_nt(qh, kh), inv_sqrt_dh);
    Tensor weights = mask ? softmax_masked(scores, *mask) : softmax(scores);
    outs.push_back(matmul(weights, vh));
  }
  Tensor merged = heads == 1 ? outs[0] : concat(outs, 1);
  return add(matmul(merged, p.wo), p.bo);
}

Tensor norm_block(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  return add(mul(layer_norm(x), gain), bias);
}

void check_finite(const Tensor& x, int layer) {
  for (double v : x.values()) {
    if (!std::isfinite(v))
      throw std::runtime_error("decode: non-finite activation at layer " +
                               std::to_string(layer));
  }
}

constexpr const char* kCheckpointMagic = "grouplab-checkpoint v1 ";

nlohmann::json config_to_json(const GroupConfig& c) {
  return {{"groups", c.groups},
          {"queries_per_group", c.queries_per_group},
          {"num_classes", c.num_classes},
          {"d_model", c.d_model},
          {"heads", c.heads},
          {"layers", c.layers},
          {"memory_grid", c.memory_grid},
          {"ffn_dim", c.ffn_dim}};
}

GroupConfig config_from_json(const nlohmann::json& j) {
  GroupConfig c;
  c.groups = j.at("groups").get<int>();
  c.queries_per_group = j.at("queries_per_group").get<int>();
  c.num_classes = j.at("num_classes").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.heads = j.at("heads").get<int>();
  c.layers = j.at("layers").get<int>();
  c.memory_grid = j.at("memory_grid").get<int>();
  c.ffn_dim = j.at("ffn_dim").get<int>();
  return c;
}

double logit(double p) { return std::log(p / (1.0 - p)); }

// Fixed multi-scale sinusoidal embedding of 2-d positions in [0,1]^2; the
// x coordinate fills the first half of the feature, y the second. Frequencies
// are integer multiples of 2*pi so one period spans the unit square.
std::vector<double> sinusoid_2d(const double* xy, int rows, int d) {
  const int half = d / 2;
  const int pairs = half / 2;
  std::vector<double> out(static_cast<size_t>(rows) * d, 0.0);
  for (int r = 0; r < rows; ++r) {
    double* row = out.data() + static_cast<size_t>(r) * d;
    for (int axis = 0; axis < 2; ++axis) {
      const double p = xy[r * 2 + axis];
      double* dst = row + axis * half;
      for (int k = 0; k < pairs; ++k) {
        const double theta = 2.0 * M_PI * (k + 1) * p;
        dst[2 * k] = std::sin(theta);
        dst[2 * k + 1] = std::cos(theta);
      }
    }
  }
  return out;
}

}  // namespace

DetectorModel DetectorModel::init(const GroupConfig& cfg, uint64_t seed) {
  cfg.validate();
  DetectorModel m;
  m.cfg_ = cfg;
  Rng rng(mix_seed(seed, 0xdec0de));
  const int s = cfg.total_queries();
  const int d = cfg.d_model;

  {
    std::vector<double> content(static_cast<size_t>(s) * d);
    for (double& v : content) v = rng.normal();
    m.query_content_ = Tensor::from_values({s, d}, std::move(content), true);
    std::vector<double> anchors(static_cast<size_t>(s) * 2);
    for (double& v : anchors) v = logit(rng.uniform(0.05, 0.95));
    m.query_anchors_ = Tensor::from_values({s, 2}, std::move(anchors), true);
  }

  {
    const int g = cfg.memory_grid;
    std::vector<double> centers(static_cast<size_t>(g) * g * 2);
    for (int row = 0; row < g; ++row)
      for (int col = 0; col < g; ++col) {
        centers[(static_cast<size_t>(row) * g + col) * 2] = (col + 0.5) / g;
        centers[(static_cast<size_t>(row) * g + col) * 2 + 1] = (row + 0.5) / g;
      }
    m.memory_pos_ = Tensor::from_values(
        {cfg.memory_tokens(), d}, sinusoid_2d(centers.data(), g * g, d));
  }

  m.layers_.resize(static_cast<size_t>(cfg.layers));
  for (DecoderLayerParams& layer : m.layers_) {
    layer.self_attn = init_attention(rng, d);
    layer.ln1_gain = Tensor::full({d}, 1.0, true);
    layer.ln1_bias = Tensor::zeros({d}, true);
    layer.cross_attn = init_attention(rng, d);
    layer.ln2_gain = Tensor::full({d}, 1.0, true);
    layer.ln2_bias = Tensor::zeros({d}, true);
    layer.ffn_w1 = xavier(rng, d, cfg.ffn_dim);
    layer.ffn_b1 = Tensor::zeros({cfg.ffn_dim}, true);
    layer.ffn_w2 = xavier(rng, cfg.ffn_dim, d);
    layer.ffn_b2 = Tensor::zeros({d}, true);
    layer.ln3_gain = Tensor::full({d}, 1.0, true);
    layer.ln3_bias = Tensor::zeros({d}, true);
  }

  m.cls_w_ = xavier(rng, d, cfg.num_classes);
  m.cls_b_ = Tensor::zeros({cfg.num_classes}, true);
  m.box_w1_ = xavier(rng, d, d);
  m.box_b1_ = Tensor::zeros({d}, true);
  // Centers start near sigmoid(anchor), sizes near the 0.2 prior.
  m.box_w2_ = xavier(rng, d, 4);
  m.box_b2_ = Tensor::from_values({4}, {0.0, 0.0, logit(0.2), logit(0.2)}, true);

  m.additive_mask_ = group_mask_to_additive(
      build_group_mask(cfg.groups, cfg.queries_per_group), s);
  return m;
}

DecoderOutput DetectorModel::decode(const Tensor& memory) const {
  if (!memory.defined() || memory.shape().size() != 2 ||
      memory.shape()[0] != cfg_.memory_tokens() || memory.shape()[1] != cfg_.d_model)
    throw std::invalid_argument(
        "decode: memory shape " +
        (memory.defined() ? shape_str(memory.shape()) : std::string("<undefined>")) +
        ", expected (" + std::to_string(cfg_.memory_tokens()) + "," +
        std::to_string(cfg_.d_model) + ")");

  // Positional terms share one sinusoidal basis: anchors on the query side
  // (constant within a forward; anchors train through the box head) and grid
  // cell centers on the memory side. The stream carries the query positions
  // so the box head can produce anchor-relative offsets.
  Tensor pos;
  {
    const auto logits = query_anchors_.values();
    std::vector<double> points(logits.size());
    for (size_t i = 0; i < logits.size(); ++i)
      points[i] = 1.0 / (1.0 + std::exp(-logits[i]));
    pos = Tensor::from_values(
        {cfg_.total_queries(), cfg_.d_model},
        sinusoid_2d(points.data(), cfg_.total_queries(), cfg_.d_model));
  }
  Tensor mem_keys = add(memory, memory_pos_);
  Tensor x = add(query_content_, pos);
  int layer_index = 0;
  for (const DecoderLayerParams& layer : layers_) {
    ++layer_index;
    Tensor xp = add(x, pos);
    Tensor sa = attention(xp, xp, x, layer.self_attn, &additive_mask_, cfg_.heads);
    x = norm_block(add(x, sa), layer.ln1_gain, layer.ln1_bias);
    Tensor ca = attention(add(x, pos), mem_keys, memory, layer.cross_attn, nullptr,
                          cfg_.heads);
    x = norm_block(add(x, ca), layer.ln2_gain, layer.ln2_bias);
    Tensor f = add(matmul(relu(add(matmul(x, layer.ffn_w1), layer.ffn_b1)), layer.ffn_w2),
                   layer.ffn_b2);
    x = norm_block(add(x, f), layer.ln3_gain, layer.ln3_bias);
    check_finite(x, layer_index);
  }

  DecoderOutput out;
  out.class_probs = sigmoid(add(matmul(x, cls_w_), cls_b_));
  Tensor hidden = relu(add(matmul(x, box_w1_), box_b1_));
  Tensor raw = add(matmul(hidden, box_w2_), box_b2_);
  Tensor centers = sigmoid(add(slice(raw, 1, 0, 2), query_anchors_));
  Tensor sizes = sigmoid(slice(raw, 1, 2, 4));
  out.boxes = concat({centers, sizes}, 1);
  return out;
}

std::vector<std::pair<std::string, Tensor>> DetectorModel::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> params;
  params.emplace_back("query.content", query_content_);
  params.emplace_back("query.anchors", query_anchors_);
  for (size_t l = 0; l < layers_.size(); ++l) {
    const DecoderLayerParams& layer = layers_[l];
    const std::string prefix = "layer" + std::to_string(l) + ".";
    auto attn = [&](const std::string& name, const AttentionParams& a) {
      params.emplace_back(prefix + name + ".wq", a.wq);
      params.emplace_back(prefix + name + ".bq", a.bq);
      params.emplace_back(prefix + name + ".wk", a.wk);
      params.emplace_back(prefix + name + ".bk", a.bk);
      params.emplace_back(prefix + name + ".wv", a.wv);
      params.emplace_back(prefix + name + ".bv", a.bv);
      params.emplace_back(prefix + name + ".wo", a.wo);
      params.emplace_back(prefix + name + ".bo", a.bo);
    };
    attn("self", layer.self_attn);
    params.emplace_back(prefix + "ln1.gain", layer.ln1_gain);
    params.emplace_back(prefix + "ln1.bias", layer.ln1_bias);
    attn("cross", layer.cross_attn);
    params.emplace_back(prefix + "ln2.gain", layer.ln2_gain);
    params.emplace_back(prefix + "ln2.bias", layer.ln2_bias);
    params.emplace_back(prefix + "ffn.w1", layer.ffn_w1);
    params.emplace_back(prefix + "ffn.b1", layer.ffn_b1);
    params.emplace_back(prefix + "ffn.w2", layer.ffn_w2);
    params.emplace_back(prefix + "ffn.b2", layer.ffn_b2);
    params.emplace_back(prefix + "ln3.gain", layer.ln3_gain);
    params.emplace_back(prefix + "ln3.bias", layer.ln3_bias);
  }
  params.emplace_back("head.cls.w", cls_w_);
  params.emplace_back("head.cls.b", cls_b_);
  params.emplace_back("head.box.w1", box_w1_);
  params.emplace_back("head.box.b1", box_b1_);
  params.emplace_back("head.box.w2", box_w2_);
  params.emplace_back("head.box.b2", box_b2_);
  return params;
}

std::vector<Tensor> DetectorModel::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

int64_t DetectorModel::parameter_count() const {
  int64_t n = 0;
  for (const Tensor& t : parameters()) n += t.size();
  return n;
}

int64_t DetectorModel::shared_parameter_count() const {
  int64_t n = 0;
  for (auto& [name, t] : named_parameters())
    if (name.rfind("query.", 0) != 0) n += t.size();
  return n;
}

void DetectorModel::save_checkpoint(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_checkpoint: cannot write " + path);
  out << kCheckpointMagic << config_to_json(cfg_).dump() << "\n";
  char buf[40];
  for (const auto& [name, t] : named_parameters()) {
    out << name << ' ' << t.shape().size();
    for (int d : t.shape()) out << ' ' << d;
    for (double v : t.values()) {
      std::snprintf(buf, sizeof(buf), " %.17g", v);
      out << buf;
    }
    out << "\n";
  }
  if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

DetectorModel DetectorModel::load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_checkpoint: cannot read " + path);
  std::string header;
  if (!std::getline(in, header) || header.rfind(kCheckpointMagic, 0) != 0)
    throw std::runtime_error("load_checkpoint: " + path +
                             ": missing or mismatched format header");
  GroupConfig cfg;
  try {
    cfg = config_from_json(
        nlohmann::json::parse(header.substr(std::strlen(kCheckpointMagic))));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("load_checkpoint: bad header: " + std::string(e.what()));
  }
  DetectorModel model = init(cfg, 0);
  auto params = model.named_parameters();
  size_t loaded = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream is(line);
    std::string name;
    size_t rank = 0;
    is >> name >> rank;
    Shape shape(rank);
    for (size_t d = 0; d < rank; ++d) is >> shape[d];
    Tensor* target = nullptr;
    for (auto& [pname, t] : params)
      if (pname == name) target = &t;
    if (!target)
      throw std::runtime_error("load_checkpoint: unknown parameter " + name);
    if (target->shape() != shape)
      throw std::runtime_error("load_checkpoint: parameter " + name + " shape " +
                               shape_str(shape) + ", expected " +
                               shape_str(target->shape()));
    auto vals = target->mutable_values();
    for (size_t i = 0; i < vals.size(); ++i) {
      if (!(is >> vals[i]))
        throw std::runtime_error("load_checkpoint: truncated payload for " + name);
    }
    ++loaded;
  }
  if (loaded != params.size())
    throw std::runtime_error("load_checkpoint: " + std::to_string(loaded) + " of " +
                             std::to_string(params.size()) + " parameters present");
  return model;
}

DecoderOutput inference_slice(const DecoderOutput& out, const GroupConfig& cfg,
                              int group) {
  if (group < 0 || group >= cfg.groups)
    throw std::invalid_argument("inference_slice: group " + std::to_string(group) +
                                " out of [0," + std::to_string(cfg.groups) + ")");
  const int n = cfg.queries_per_group;
  DecoderOutput sliced;
  sliced.class_probs = slice(out.class_probs, 0, group * n, (group + 1) * n);
  sliced.boxes = slice(out.boxes, 0, group * n, (group + 1) * n);
  return sliced;
}

}  // namespace grouplab
