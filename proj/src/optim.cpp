#include "grouplab/optim.hpp"

#include <cmath>

namespace grouplab {

AdamW::AdamW(AdamWConfig cfg, std::vector<Tensor> params)
    : cfg_(cfg), params_(std::move(params)) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Tensor& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

double AdamW::current_lr() const {
  if (cfg_.lr_drop_epoch > 0 && epoch_ >= cfg_.lr_drop_epoch)
    return cfg_.lr * cfg_.lr_drop_factor;
  return cfg_.lr;
}

int AdamW::step() {
  if (params_.empty()) return 0;
  ++step_count_;
  const double lr = current_lr();
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
  int skipped = 0;
  for (size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    if (!p.has_grad()) {
      ++skipped;
      continue;
    }
    auto vals = p.mutable_values();
    auto grads = p.grad();
    std::vector<double>& m = m_[i];
    std::vector<double>& v = v_[i];
    for (size_t j = 0; j < vals.size(); ++j) {
      const double g = grads[j];
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g;
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g * g;
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      // gradient-based update, then decoupled weight decay
      vals[j] -= lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
      vals[j] -= lr * cfg_.weight_decay * vals[j];
    }
  }
  return skipped;
}

void AdamW::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

}  // namespace grouplab
