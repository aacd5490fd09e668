#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace grouplab {

// Extent list; {} is a scalar. All payloads are 64-bit floats, row-major.
using Shape = std::vector<int>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// Additive attention-mask value for "not attendable". Anything at or below
// half this magnitude is treated as masked and forced to exactly 0 after
// the softmax.
inline constexpr double kMaskValue = -1e30;

struct TensorNode {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until a gradient is needed
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(TensorNode&)> backward_fn;

  int64_t numel() const { return static_cast<int64_t>(values.size()); }
  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  }
};

// Value-semantics handle to a node of the computation graph. Copies share the
// underlying storage; the graph is kept alive by parent references and is
// dropped when the last downstream handle goes away.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::vector<double> values,
                            bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t size() const { return node_->numel(); }
  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }

  std::span<const double> values() const { return node_->values; }
  std::span<double> mutable_values() { return node_->values; }
  double value() const;               // scalar tensors only
  double at(int64_t i) const { return node_->values[static_cast<size_t>(i)]; }

  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->grad; }
  void zero_grad() { node_->grad.assign(node_->values.size(), 0.0); }

  TensorNode* node() const { return node_.get(); }
  const std::shared_ptr<TensorNode>& handle() const { return node_; }
  static Tensor wrap(std::shared_ptr<TensorNode> node) { return Tensor(std::move(node)); }

 private:
  explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}
  std::shared_ptr<TensorNode> node_;
};

// While a guard is alive (per thread), ops do not record the tape. Used for
// evaluation passes where gradients are not needed.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_enabled();

// Elementwise binary ops. Shapes must match, or one operand's shape must be a
// trailing suffix of the other's (broadcast over leading axes only).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

// 2-d matrix products: (n,k)x(k,m) and the transposed variant (n,k)x(m,k)^T.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matmul_nt(const Tensor& a, const Tensor& b);

Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor log(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor pow(const Tensor& x, double exponent);

// Softmax over the last axis. The additive mask (same shape, 0 or kMaskValue)
// is applied before normalization; masked entries are exactly 0 in the output.
// A fully masked row is rejected.
Tensor softmax_masked(const Tensor& x, const Tensor& additive_mask);
Tensor softmax(const Tensor& x);

Tensor sum(const Tensor& x);   // full reduction to a scalar
Tensor mean(const Tensor& x);  // full reduction to a scalar

Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& x, int axis, int start, int end);

// Normalize over the last axis: (x - mean) / sqrt(var + eps). Affine scaling,
// when wanted, is applied by the caller with mul/add.
Tensor layer_norm(const Tensor& x, double eps = 1e-5);

// Populates d(loss)/d(node) for every node reachable from the scalar loss.
// Grads accumulate; callers zero parameter grads between steps.
void backward(const Tensor& loss);

// Convenience compositions over the primitive op set.
inline Tensor scale(const Tensor& x, double c) { return mul(x, Tensor::scalar(c)); }
inline Tensor neg(const Tensor& x) { return scale(x, -1.0); }
inline Tensor abs_elem(const Tensor& x) { return add(relu(x), relu(neg(x))); }
inline Tensor max_elem(const Tensor& a, const Tensor& b) { return add(a, relu(sub(b, a))); }
inline Tensor min_elem(const Tensor& a, const Tensor& b) { return sub(a, relu(sub(a, b))); }
inline Tensor div(const Tensor& a, const Tensor& b) { return mul(a, pow(b, -1.0)); }
inline Tensor clamp(const Tensor& x, double lo, double hi) {
  Tensor shifted = add(relu(sub(x, Tensor::scalar(lo))), Tensor::scalar(lo));
  return sub(shifted, relu(sub(shifted, Tensor::scalar(hi))));
}

}  // namespace grouplab
