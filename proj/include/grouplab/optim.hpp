#pragma once

#include <cstdint>
#include <vector>

#include "grouplab/tensor.hpp"

namespace grouplab {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
  int lr_drop_epoch = 0;  // 1-indexed epoch at which lr is multiplied by the
                          // drop factor; 0 disables the schedule
  double lr_drop_factor = 0.1;
};

// AdamW with bias-corrected moments and decoupled weight decay. The learning
// rate is constant until the configured drop epoch and scaled by the drop
// factor from then on.
class AdamW {
 public:
  AdamW(AdamWConfig cfg, std::vector<Tensor> params);

  void set_epoch(int epoch) { epoch_ = epoch; }
  double current_lr() const;

  // One update over all registered parameters. Parameters without an
  // allocated gradient are skipped; the return value counts them.
  int step();

  void zero_grad();
  int64_t step_count() const { return step_count_; }

 private:
  AdamWConfig cfg_;
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  int64_t step_count_ = 0;
  int epoch_ = 1;
};

}  // namespace grouplab
