#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "grouplab/tensor.hpp"

namespace grouplab {

struct GroupConfig {
  int groups = 1;             // K
  int queries_per_group = 20; // N
  int num_classes = 4;        // C
  int d_model = 64;
  int heads = 4;
  int layers = 2;
  int memory_grid = 8;        // memory tokens = grid^2
  int ffn_dim = 256;

  int total_queries() const { return groups * queries_per_group; }
  int memory_tokens() const { return memory_grid * memory_grid; }
  void validate() const;
  bool operator==(const GroupConfig&) const = default;
};

struct DecoderOutput {
  Tensor class_probs;  // (K*N, C) sigmoid probabilities
  Tensor boxes;        // (K*N, 4) center-size
};

// Block-diagonal attendability: query i may attend to query j iff they share
// a group. Row-major (S,S), 1 = attendable.
std::vector<uint8_t> build_group_mask(int groups, int queries_per_group);

// Boolean mask to the additive pre-softmax form (0 or kMaskValue).
Tensor group_mask_to_additive(const std::vector<uint8_t>& mask, int size);

struct AttentionParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

struct DecoderLayerParams {
  AttentionParams self_attn;
  Tensor ln1_gain, ln1_bias;
  AttentionParams cross_attn;
  Tensor ln2_gain, ln2_bias;
  Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  Tensor ln3_gain, ln3_bias;
};

// K groups of N object queries decoded against a scene memory. All groups run
// through the same decoder weights; the self-attention mask keeps them from
// interacting. Inference slices out one group and looks like a K=1 model.
class DetectorModel {
 public:
  static DetectorModel init(const GroupConfig& cfg, uint64_t seed);

  const GroupConfig& config() const { return cfg_; }

  // Full forward pass: masked self-attention, cross-attention to memory, and
  // feed-forward per layer (post-norm residuals), then class/box heads.
  // Box centers are sigmoid(anchor + offset); sizes sigmoid(size logits).
  DecoderOutput decode(const Tensor& memory) const;

  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  std::vector<Tensor> parameters() const;
  int64_t parameter_count() const;
  // Decoder weights only; excludes the per-group query content/anchors and is
  // therefore independent of K.
  int64_t shared_parameter_count() const;

  const Tensor& query_content() const { return query_content_; }
  const Tensor& query_anchors() const { return query_anchors_; }
  Tensor& mutable_query_content() { return query_content_; }
  Tensor& mutable_query_anchors() { return query_anchors_; }

  void save_checkpoint(const std::string& path) const;
  static DetectorModel load_checkpoint(const std::string& path);

 private:
  GroupConfig cfg_;
  Tensor query_content_;  // (K*N, d_model)
  Tensor query_anchors_;  // (K*N, 2) logits; sigmoid gives the position
  Tensor memory_pos_;     // fixed sinusoidal embedding of the grid cell centers
  std::vector<DecoderLayerParams> layers_;
  Tensor cls_w_, cls_b_;
  Tensor box_w1_, box_b1_, box_w2_, box_b2_;
  Tensor additive_mask_;  // (S,S) constant
};

// Rows of one group, for inference ("only the first group is kept") and for
// per-group diagnostics.
DecoderOutput inference_slice(const DecoderOutput& out, const GroupConfig& cfg,
                              int group = 0);

}  // namespace grouplab
