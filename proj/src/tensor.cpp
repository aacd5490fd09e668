#include "grouplab/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace grouplab {

namespace {

thread_local bool g_grad_enabled = true;

using CMap = Eigen::Map<
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using MMap =
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

[[noreturn]] void fail(const std::string& op, const std::string& detail) {
  throw std::invalid_argument(op + ": " + detail);
}

void check_defined(const char* op, const Tensor& t) {
  if (!t.defined()) fail(op, "undefined tensor");
}

// true when `small` equals the trailing extents of `big`
bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

// Templated on the callable so no std::function is materialized when the
// tape is inactive.
template <class F>
std::shared_ptr<TensorNode> make_node(Shape shape, std::vector<double> values,
                                      std::vector<std::shared_ptr<TensorNode>> parents,
                                      F&& backward_fn) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  bool needs_grad = false;
  for (const auto& p : parents) needs_grad = needs_grad || p->requires_grad;
  if (g_grad_enabled && needs_grad) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward_fn = std::forward<F>(backward_fn);
  }
  return n;
}

// Elementwise binary op with leading-axis broadcast. `dfa`/`dfb` map
// (upstream grad, a value, b value) to the gradient contributions.
template <class F, class Da, class Db>
Tensor binary_elem(const char* op, const Tensor& a, const Tensor& b, F f, Da dfa,
                   Db dfb) {
  check_defined(op, a);
  check_defined(op, b);
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  Shape out_shape;
  if (sa == sb) {
    out_shape = sa;
  } else if (is_suffix(sb, sa)) {
    out_shape = sa;
  } else if (is_suffix(sa, sb)) {
    out_shape = sb;
  } else {
    fail(op, "shapes " + shape_str(sa) + " vs " + shape_str(sb) +
                 " do not conform");
  }
  const int64_t n = shape_numel(out_shape);
  const int64_t na = a.size();
  const int64_t nb = b.size();
  const double* av = a.values().data();
  const double* bv = b.values().data();
  std::vector<double> out(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    out[static_cast<size_t>(i)] = f(av[na == n ? i : i % na], bv[nb == n ? i : i % nb]);
  }
  auto backward = [pa = a.handle(), pb = b.handle(), n, dfa, dfb](TensorNode& self) {
    const double* g = self.grad.data();
    const int64_t na = pa->numel();
    const int64_t nb = pb->numel();
    const double* av = pa->values.data();
    const double* bv = pb->values.data();
    if (pa->requires_grad) {
      pa->ensure_grad();
      double* ga = pa->grad.data();
      for (int64_t i = 0; i < n; ++i) {
        const int64_t ia = na == n ? i : i % na;
        ga[ia] += dfa(g[i], av[ia], bv[nb == n ? i : i % nb]);
      }
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      double* gb = pb->grad.data();
      for (int64_t i = 0; i < n; ++i) {
        const int64_t ib = nb == n ? i : i % nb;
        gb[ib] += dfb(g[i], av[na == n ? i : i % na], bv[ib]);
      }
    }
  };
  return Tensor::wrap(make_node(std::move(out_shape), std::move(out),
                                {a.handle(), b.handle()}, backward));
}

// Elementwise unary op; `df` maps (upstream grad, input value, output value)
// to the input gradient.
template <class F, class Df>
Tensor unary_elem(const char* op, const Tensor& x, F f, Df df) {
  check_defined(op, x);
  const int64_t n = x.size();
  const double* xv = x.values().data();
  std::vector<double> out(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = f(xv[i]);
  auto backward = [px = x.handle(), df](TensorNode& self) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    const double* g = self.grad.data();
    const double* xv = px->values.data();
    const double* yv = self.values.data();
    double* gx = px->grad.data();
    const int64_t n = px->numel();
    for (int64_t i = 0; i < n; ++i) gx[i] += df(g[i], xv[i], yv[i]);
  };
  return Tensor::wrap(make_node(x.shape(), std::move(out), {x.handle()}, backward));
}

void check_matrix(const char* op, const Tensor& t) {
  check_defined(op, t);
  if (t.shape().size() != 2)
    fail(op, "expected a 2-d tensor, got shape " + shape_str(t.shape()));
}

// Shared softmax kernel; `mask` may be null for the unmasked variant.
Tensor softmax_impl(const char* op, const Tensor& x, const Tensor* mask) {
  check_defined(op, x);
  if (x.shape().empty()) fail(op, "rank must be >= 1");
  if (mask) {
    check_defined(op, *mask);
    if (mask->shape() != x.shape())
      fail(op, "mask shape " + shape_str(mask->shape()) + " vs input " +
                   shape_str(x.shape()));
    if (mask->requires_grad()) fail(op, "mask must not require gradients");
  }
  const int64_t width = x.shape().back();
  const int64_t rows = x.size() / width;
  const double* xv = x.values().data();
  const double* mv = mask ? mask->values().data() : nullptr;
  constexpr double kMaskedBelow = kMaskValue * 0.5;
  std::vector<double> out(static_cast<size_t>(x.size()), 0.0);
  for (int64_t r = 0; r < rows; ++r) {
    const int64_t base = r * width;
    double row_max = -std::numeric_limits<double>::infinity();
    int64_t live = 0;
    for (int64_t j = 0; j < width; ++j) {
      const double m = mv ? mv[base + j] : 0.0;
      if (m <= kMaskedBelow) continue;
      ++live;
      row_max = std::max(row_max, xv[base + j] + m);
    }
    if (live == 0)
      throw std::runtime_error(std::string(op) +
                               ": fully masked row (no finite entries), row " +
                               std::to_string(r));
    double denom = 0.0;
    for (int64_t j = 0; j < width; ++j) {
      const double m = mv ? mv[base + j] : 0.0;
      if (m <= kMaskedBelow) continue;  // stays exactly 0
      const double e = std::exp(xv[base + j] + m - row_max);
      out[static_cast<size_t>(base + j)] = e;
      denom += e;
    }
    for (int64_t j = 0; j < width; ++j) out[static_cast<size_t>(base + j)] /= denom;
  }
  std::vector<std::shared_ptr<TensorNode>> parents = {x.handle()};
  auto mask_handle = mask ? mask->handle() : nullptr;
  auto backward = [px = x.handle(), rows, width](TensorNode& self) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    const double* g = self.grad.data();
    const double* y = self.values.data();
    double* gx = px->grad.data();
    for (int64_t r = 0; r < rows; ++r) {
      const int64_t base = r * width;
      double dot = 0.0;
      for (int64_t j = 0; j < width; ++j) dot += g[base + j] * y[base + j];
      for (int64_t j = 0; j < width; ++j)
        gx[base + j] += y[base + j] * (g[base + j] - dot);
    }
  };
  auto node = make_node(x.shape(), std::move(out), std::move(parents), backward);
  return Tensor::wrap(std::move(node));
}

}  // namespace

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  for (int d : shape)
    if (d < 0) throw std::invalid_argument("tensor: negative extent in " + shape_str(shape));
  auto n = std::make_shared<TensorNode>();
  const int64_t count = shape_numel(shape);
  n->shape = std::move(shape);
  n->values.assign(static_cast<size_t>(count), value);
  n->requires_grad = requires_grad;
  if (requires_grad) n->ensure_grad();
  return Tensor(std::move(n));
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != static_cast<int64_t>(values.size()))
    throw std::invalid_argument("tensor: " + std::to_string(values.size()) +
                                " values for shape " + shape_str(shape));
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  n->requires_grad = requires_grad;
  if (requires_grad) n->ensure_grad();
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_values({}, {value}, requires_grad);
}

double Tensor::value() const {
  if (size() != 1)
    throw std::invalid_argument("value(): tensor of shape " + shape_str(shape()) +
                                " is not a scalar");
  return node_->values[0];
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }
bool grad_enabled() { return g_grad_enabled; }

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_elem(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double g, double, double) { return g; },
      [](double g, double, double) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_elem(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double g, double, double) { return g; },
      [](double g, double, double) { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_elem(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double g, double, double y) { return g * y; },
      [](double g, double x, double) { return g * x; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_matrix("matmul", a);
  check_matrix("matmul", b);
  if (a.shape()[1] != b.shape()[0])
    fail("matmul", "shapes " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const int64_t n = a.shape()[0], k = a.shape()[1], m = b.shape()[1];
  std::vector<double> out(static_cast<size_t>(n * m));
  MMap(out.data(), n, m).noalias() =
      CMap(a.values().data(), n, k) * CMap(b.values().data(), k, m);
  auto backward = [pa = a.handle(), pb = b.handle(), n, k, m](TensorNode& self) {
    CMap g(self.grad.data(), n, m);
    if (pa->requires_grad) {
      pa->ensure_grad();
      MMap(pa->grad.data(), n, k).noalias() +=
          g * CMap(pb->values.data(), k, m).transpose();
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      MMap(pb->grad.data(), k, m).noalias() +=
          CMap(pa->values.data(), n, k).transpose() * g;
    }
  };
  return Tensor::wrap(
      make_node({static_cast<int>(n), static_cast<int>(m)}, std::move(out),
                {a.handle(), b.handle()}, backward));
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  check_matrix("matmul_nt", a);
  check_matrix("matmul_nt", b);
  if (a.shape()[1] != b.shape()[1])
    fail("matmul_nt",
         "shapes " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const int64_t n = a.shape()[0], k = a.shape()[1], m = b.shape()[0];
  std::vector<double> out(static_cast<size_t>(n * m));
  MMap(out.data(), n, m).noalias() =
      CMap(a.values().data(), n, k) * CMap(b.values().data(), m, k).transpose();
  auto backward = [pa = a.handle(), pb = b.handle(), n, k, m](TensorNode& self) {
    CMap g(self.grad.data(), n, m);
    if (pa->requires_grad) {
      pa->ensure_grad();
      MMap(pa->grad.data(), n, k).noalias() += g * CMap(pb->values.data(), m, k);
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      MMap(pb->grad.data(), m, k).noalias() +=
          g.transpose() * CMap(pa->values.data(), n, k);
    }
  };
  return Tensor::wrap(
      make_node({static_cast<int>(n), static_cast<int>(m)}, std::move(out),
                {a.handle(), b.handle()}, backward));
}

Tensor sigmoid(const Tensor& x) {
  return unary_elem(
      "sigmoid", x,
      [](double v) { return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); },
      [](double g, double, double y) { return g * y * (1.0 - y); });
}

Tensor relu(const Tensor& x) {
  return unary_elem(
      "relu", x, [](double v) { return v > 0 ? v : 0.0; },
      [](double g, double v, double) { return v > 0 ? g : 0.0; });
}

Tensor log(const Tensor& x) {
  return unary_elem(
      "log", x, [](double v) { return std::log(v); },
      [](double g, double v, double) { return g / v; });
}

Tensor exp(const Tensor& x) {
  return unary_elem(
      "exp", x, [](double v) { return std::exp(v); },
      [](double g, double, double y) { return g * y; });
}

Tensor pow(const Tensor& x, double exponent) {
  return unary_elem(
      "pow", x, [exponent](double v) { return std::pow(v, exponent); },
      [exponent](double g, double v, double) {
        return g * exponent * std::pow(v, exponent - 1.0);
      });
}

Tensor softmax_masked(const Tensor& x, const Tensor& additive_mask) {
  return softmax_impl("softmax_masked", x, &additive_mask);
}

Tensor softmax(const Tensor& x) { return softmax_impl("softmax", x, nullptr); }

Tensor sum(const Tensor& x) {
  check_defined("sum", x);
  double total = 0.0;
  for (double v : x.values()) total += v;
  auto backward = [px = x.handle()](TensorNode& self) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    const double g = self.grad[0];
    for (double& gi : px->grad) gi += g;
  };
  return Tensor::wrap(make_node({}, {total}, {x.handle()}, backward));
}

Tensor mean(const Tensor& x) {
  check_defined("mean", x);
  if (x.size() == 0) fail("mean", "empty tensor");
  double total = 0.0;
  for (double v : x.values()) total += v;
  const double inv = 1.0 / static_cast<double>(x.size());
  auto backward = [px = x.handle(), inv](TensorNode& self) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    const double g = self.grad[0] * inv;
    for (double& gi : px->grad) gi += g;
  };
  return Tensor::wrap(make_node({}, {total * inv}, {x.handle()}, backward));
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) fail("concat", "no inputs");
  for (const Tensor& t : parts) check_defined("concat", t);
  const Shape& ref = parts[0].shape();
  const int rank = static_cast<int>(ref.size());
  if (axis < 0 || axis >= rank) fail("concat", "axis " + std::to_string(axis));
  int axis_total = 0;
  for (const Tensor& t : parts) {
    const Shape& s = t.shape();
    if (static_cast<int>(s.size()) != rank)
      fail("concat", "rank mismatch " + shape_str(s) + " vs " + shape_str(ref));
    for (int d = 0; d < rank; ++d)
      if (d != axis && s[d] != ref[d])
        fail("concat", "shapes " + shape_str(s) + " vs " + shape_str(ref));
    axis_total += s[axis];
  }
  Shape out_shape = ref;
  out_shape[axis] = axis_total;
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= ref[d];
  for (int d = axis + 1; d < rank; ++d) inner *= ref[d];
  std::vector<double> out(static_cast<size_t>(shape_numel(out_shape)));
  const int64_t out_row = static_cast<int64_t>(axis_total) * inner;
  int64_t offset = 0;
  for (const Tensor& t : parts) {
    const int64_t part_row = static_cast<int64_t>(t.shape()[axis]) * inner;
    const double* src = t.values().data();
    for (int64_t o = 0; o < outer; ++o)
      std::copy(src + o * part_row, src + (o + 1) * part_row,
                out.data() + o * out_row + offset);
    offset += part_row;
  }
  std::vector<std::shared_ptr<TensorNode>> parents;
  parents.reserve(parts.size());
  for (const Tensor& t : parts) parents.push_back(t.handle());
  auto backward = [parents, outer, inner, out_row](TensorNode& self) {
    const double* g = self.grad.data();
    int64_t offset = 0;
    for (const auto& p : parents) {
      const int64_t part_row = p->numel() / outer;
      if (p->requires_grad) {
        p->ensure_grad();
        double* gp = p->grad.data();
        for (int64_t o = 0; o < outer; ++o) {
          const double* row = g + o * out_row + offset;
          for (int64_t j = 0; j < part_row; ++j) gp[o * part_row + j] += row[j];
        }
      }
      offset += part_row;
    }
  };
  return Tensor::wrap(make_node(std::move(out_shape), std::move(out),
                                std::move(parents), backward));
}

Tensor slice(const Tensor& x, int axis, int start, int end) {
  check_defined("slice", x);
  const Shape& s = x.shape();
  const int rank = static_cast<int>(s.size());
  if (axis < 0 || axis >= rank) fail("slice", "axis " + std::to_string(axis));
  if (start < 0 || end > s[axis] || start >= end)
    fail("slice", "range [" + std::to_string(start) + "," + std::to_string(end) +
                      ") on axis extent " + std::to_string(s[axis]));
  Shape out_shape = s;
  out_shape[axis] = end - start;
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= s[d];
  for (int d = axis + 1; d < rank; ++d) inner *= s[d];
  const int64_t in_row = static_cast<int64_t>(s[axis]) * inner;
  const int64_t out_len = static_cast<int64_t>(end - start) * inner;
  std::vector<double> out(static_cast<size_t>(outer * out_len));
  const double* src = x.values().data();
  for (int64_t o = 0; o < outer; ++o)
    std::copy(src + o * in_row + start * inner, src + o * in_row + start * inner + out_len,
              out.data() + o * out_len);
  auto backward = [px = x.handle(), outer, inner, in_row, out_len,
                   start](TensorNode& self) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    const double* g = self.grad.data();
    double* gx = px->grad.data();
    for (int64_t o = 0; o < outer; ++o) {
      double* dst = gx + o * in_row + start * inner;
      const double* row = g + o * out_len;
      for (int64_t j = 0; j < out_len; ++j) dst[j] += row[j];
    }
  };
  return Tensor::wrap(make_node(std::move(out_shape), std::move(out), {x.handle()},
                                backward));
}

Tensor layer_norm(const Tensor& x, double eps) {
  check_defined("layer_norm", x);
  if (x.shape().empty()) fail("layer_norm", "rank must be >= 1");
  const int64_t width = x.shape().back();
  const int64_t rows = x.size() / width;
  const double* xv = x.values().data();
  std::vector<double> out(static_cast<size_t>(x.size()));
  std::vector<double> inv_std(static_cast<size_t>(rows));
  for (int64_t r = 0; r < rows; ++r) {
    const int64_t base = r * width;
    double m = 0.0;
    for (int64_t j = 0; j < width; ++j) m += xv[base + j];
    m /= static_cast<double>(width);
    double var = 0.0;
    for (int64_t j = 0; j < width; ++j) {
      const double d = xv[base + j] - m;
      var += d * d;
    }
    var /= static_cast<double>(width);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<size_t>(r)] = is;
    for (int64_t j = 0; j < width; ++j)
      out[static_cast<size_t>(base + j)] = (xv[base + j] - m) * is;
  }
  auto backward = [px = x.handle(), rows, width,
                   inv_std = std::move(inv_std)](TensorNode& self) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    const double* g = self.grad.data();
    const double* y = self.values.data();
    double* gx = px->grad.data();
    const double invw = 1.0 / static_cast<double>(width);
    for (int64_t r = 0; r < rows; ++r) {
      const int64_t base = r * width;
      double gsum = 0.0, gydot = 0.0;
      for (int64_t j = 0; j < width; ++j) {
        gsum += g[base + j];
        gydot += g[base + j] * y[base + j];
      }
      const double is = inv_std[static_cast<size_t>(r)];
      for (int64_t j = 0; j < width; ++j)
        gx[base + j] +=
            is * (g[base + j] - invw * gsum - y[base + j] * invw * gydot);
    }
  };
  return Tensor::wrap(make_node(x.shape(), std::move(out), {x.handle()}, backward));
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1)
    throw std::invalid_argument(
        "backward: loss must be a scalar, got shape " +
        (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  if (!loss.requires_grad()) return;  // constant loss: nothing reachable

  // Iterative post-order over the subgraph that requires gradients; each node
  // is scheduled exactly once.
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> visited;
  struct Frame {
    TensorNode* node;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({loss.node(), 0});
  visited.insert(loss.node());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      TensorNode* p = f.node->parents[f.next_parent++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  loss.node()->ensure_grad();
  loss.node()->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* n = *it;
    n->ensure_grad();
    if (n->backward_fn) n->backward_fn(*n);
  }
}

}  // namespace grouplab
