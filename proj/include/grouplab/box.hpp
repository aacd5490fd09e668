#pragma once

#include "grouplab/tensor.hpp"

namespace grouplab {

// Axis-aligned box in normalized image coordinates, stored center-size.
struct Box {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;

  struct Corners {
    double x1, y1, x2, y2;
  };
  Corners corners() const { return {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2}; }
  static Box from_corners(double x1, double y1, double x2, double y2);

  double area() const { return w * h; }
  bool valid() const { return w >= 0.0 && h >= 0.0; }
};

// Intersection over union in [0, 1]; 0 when both boxes are degenerate.
double iou(const Box& a, const Box& b);

// Generalized IoU in (-1, 1]; equals iou when the enclosing hull equals the
// union. Both boxes degenerate at the same point returns 0 (logged).
double giou(const Box& a, const Box& b);

// L1 distance on the 4-d center-size vectors.
double l1_distance(const Box& a, const Box& b);

// 5 * L1 + 2 * (1 - GIoU); zero iff the boxes are identical.
double box_loss_value(const Box& pred, const Box& gt);

// Differentiable row-wise geometry over (P,4) center-size tensors; the
// ground-truth rows are constants. Results have shape (P,1).
Tensor l1_rows(const Tensor& pred, const Tensor& gt);
Tensor giou_rows(const Tensor& pred, const Tensor& gt);
Tensor box_loss_rows(const Tensor& pred, const Tensor& gt, double l1_weight = 5.0,
                     double giou_weight = 2.0);

// Scalar differentiable box loss for a single (1,4) prediction row.
Tensor box_loss(const Tensor& pred, const Box& gt, double l1_weight = 5.0,
                double giou_weight = 2.0);

Tensor box_row_tensor(const Box& b);  // (1,4) constant

}  // namespace grouplab
