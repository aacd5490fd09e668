#include "grouplab/box.hpp"

#include <algorithm>
#include <cmath>

#include "grouplab/logging.hpp"

namespace grouplab {

namespace {
constexpr double kHullFloor = 1e-12;
}

Box Box::from_corners(double x1, double y1, double x2, double y2) {
  Box b;
  b.cx = x1 / 2 + x2 / 2;
  b.cy = y1 / 2 + y2 / 2;
  b.w = std::max(0.0, x2 - x1);
  b.h = std::max(0.0, y2 - y1);
  return b;
}

double iou(const Box& a, const Box& b) {
  const auto ca = a.corners();
  const auto cb = b.corners();
  const double iw = std::max(0.0, std::min(ca.x2, cb.x2) - std::max(ca.x1, cb.x1));
  const double ih = std::max(0.0, std::min(ca.y2, cb.y2) - std::max(ca.y1, cb.y1));
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;  // both degenerate
  return inter / uni;
}

double giou(const Box& a, const Box& b) {
  const auto ca = a.corners();
  const auto cb = b.corners();
  const double iw = std::max(0.0, std::min(ca.x2, cb.x2) - std::max(ca.x1, cb.x1));
  const double ih = std::max(0.0, std::min(ca.y2, cb.y2) - std::max(ca.y1, cb.y1));
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  const double hull_w = std::max(ca.x2, cb.x2) - std::min(ca.x1, cb.x1);
  const double hull_h = std::max(ca.y2, cb.y2) - std::min(ca.y1, cb.y1);
  const double hull = hull_w * hull_h;
  if (hull <= 0.0) {
    // both boxes zero-size at the same point
    log_warn("giou: degenerate hull, returning 0 by convention");
    return 0.0;
  }
  const double iou_term = uni > 0.0 ? inter / uni : 0.0;
  const double hull_f = std::max(hull, kHullFloor);
  return iou_term - (hull_f - uni) / hull_f;
}

double l1_distance(const Box& a, const Box& b) {
  return std::abs(a.cx - b.cx) + std::abs(a.cy - b.cy) + std::abs(a.w - b.w) +
         std::abs(a.h - b.h);
}

double box_loss_value(const Box& pred, const Box& gt) {
  return 5.0 * l1_distance(pred, gt) + 2.0 * (1.0 - giou(pred, gt));
}

Tensor box_row_tensor(const Box& b) {
  return Tensor::from_values({1, 4}, {b.cx, b.cy, b.w, b.h});
}

namespace {

struct CornerCols {
  Tensor x1, y1, x2, y2, area;
};

CornerCols corner_columns(const Tensor& cs) {
  Tensor cx = slice(cs, 1, 0, 1);
  Tensor cy = slice(cs, 1, 1, 2);
  Tensor hw = scale(slice(cs, 1, 2, 3), 0.5);
  Tensor hh = scale(slice(cs, 1, 3, 4), 0.5);
  CornerCols c;
  c.x1 = sub(cx, hw);
  c.y1 = sub(cy, hh);
  c.x2 = add(cx, hw);
  c.y2 = add(cy, hh);
  c.area = mul(scale(hw, 2.0), scale(hh, 2.0));
  return c;
}

void check_rows(const char* op, const Tensor& pred, const Tensor& gt) {
  if (pred.shape().size() != 2 || pred.shape()[1] != 4)
    throw std::invalid_argument(std::string(op) + ": pred shape " +
                                shape_str(pred.shape()) + ", expected (P,4)");
  if (gt.shape() != pred.shape())
    throw std::invalid_argument(std::string(op) + ": shapes " +
                                shape_str(pred.shape()) + " vs " +
                                shape_str(gt.shape()));
}

}  // namespace

Tensor l1_rows(const Tensor& pred, const Tensor& gt) {
  check_rows("l1_rows", pred, gt);
  Tensor diff = abs_elem(sub(pred, gt));
  // row sums via a (4,1) ones product
  return matmul(diff, Tensor::full({4, 1}, 1.0));
}

Tensor giou_rows(const Tensor& pred, const Tensor& gt) {
  check_rows("giou_rows", pred, gt);
  const int rows = pred.shape()[0];
  CornerCols a = corner_columns(pred);
  CornerCols b = corner_columns(gt);
  Tensor iw = relu(sub(min_elem(a.x2, b.x2), max_elem(a.x1, b.x1)));
  Tensor ih = relu(sub(min_elem(a.y2, b.y2), max_elem(a.y1, b.y1)));
  Tensor inter = mul(iw, ih);
  Tensor uni = sub(add(a.area, b.area), inter);
  Tensor hull = mul(sub(max_elem(a.x2, b.x2), min_elem(a.x1, b.x1)),
                    sub(max_elem(a.y2, b.y2), min_elem(a.y1, b.y1)));
  Tensor hull_f = max_elem(hull, Tensor::full({rows, 1}, kHullFloor));
  Tensor iou_term = div(inter, uni);
  return sub(iou_term, div(sub(hull_f, uni), hull_f));
}

Tensor box_loss_rows(const Tensor& pred, const Tensor& gt, double l1_weight,
                     double giou_weight) {
  Tensor l1 = l1_rows(pred, gt);
  Tensor g = giou_rows(pred, gt);
  Tensor one = Tensor::full({pred.shape()[0], 1}, 1.0);
  return add(scale(l1, l1_weight), scale(sub(one, g), giou_weight));
}

Tensor box_loss(const Tensor& pred, const Box& gt, double l1_weight,
                double giou_weight) {
  return sum(box_loss_rows(pred, box_row_tensor(gt), l1_weight, giou_weight));
}

}  // namespace grouplab
