#include <doctest.h>

#include <cmath>

#include "grouplab/box.hpp"
#include "grouplab/rng.hpp"
#include "testutil.hpp"

using namespace grouplab;

namespace {

// Independent corner-arithmetic oracle for intersection/union/hull, written
// separately from the library routines.
struct Overlap {
  double inter, uni, hull;
};

Overlap overlap_oracle(const Box& a, const Box& b) {
  const double ax1 = a.cx - a.w / 2, ax2 = a.cx + a.w / 2;
  const double ay1 = a.cy - a.h / 2, ay2 = a.cy + a.h / 2;
  const double bx1 = b.cx - b.w / 2, bx2 = b.cx + b.w / 2;
  const double by1 = b.cy - b.h / 2, by2 = b.cy + b.h / 2;
  const double iw = std::max(0.0, std::min(ax2, bx2) - std::max(ax1, bx1));
  const double ih = std::max(0.0, std::min(ay2, by2) - std::max(ay1, by1));
  Overlap o;
  o.inter = iw * ih;
  o.uni = a.w * a.h + b.w * b.h - o.inter;
  o.hull = (std::max(ax2, bx2) - std::min(ax1, bx1)) *
           (std::max(ay2, by2) - std::min(ay1, by1));
  return o;
}

double giou_oracle(const Box& a, const Box& b) {
  const Overlap o = overlap_oracle(a, b);
  return o.inter / o.uni - (o.hull - o.uni) / o.hull;
}

Box random_box(Rng& rng) {
  return Box{rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.05, 0.5),
             rng.uniform(0.05, 0.5)};
}

}  // namespace

TEST_CASE("iou basics") {
  const Box unit{0.5, 0.5, 1.0, 1.0};
  CHECK(iou(unit, unit) == doctest::Approx(1.0));
  const Box far{5.0, 5.0, 1.0, 1.0};
  CHECK(iou(unit, far) == 0.0);
  // corners (0,0,2,2) vs (1,1,3,3): inter 1, union 7
  const Box a = Box::from_corners(0, 0, 2, 2);
  const Box b = Box::from_corners(1, 1, 3, 3);
  CHECK(iou(a, b) == doctest::Approx(1.0 / 7.0));
  const Box point{0.3, 0.3, 0.0, 0.0};
  CHECK(iou(point, point) == 0.0);  // both degenerate
}

TEST_CASE("giou basics") {
  const Box a = Box::from_corners(0, 0, 2, 2);
  CHECK(giou(a, a) == doctest::Approx(1.0));
  // side-touching equal squares: hull equals union, giou == iou == 0
  const Box left = Box::from_corners(0, 0, 1, 1);
  const Box right = Box::from_corners(1, 0, 2, 1);
  CHECK(giou(left, right) == doctest::Approx(0.0));
  CHECK(giou(left, right) == doctest::Approx(iou(left, right)));
  // (0,0,2,2) vs (1,1,3,3): 1/7 - 2/9
  const Box b = Box::from_corners(1, 1, 3, 3);
  CHECK(giou(a, b) == doctest::Approx(1.0 / 7.0 - 2.0 / 9.0));
  // both zero-size at the same point: 0 by convention
  const Box point{0.3, 0.3, 0.0, 0.0};
  CHECK(giou(point, point) == 0.0);
}

TEST_CASE("giou stays in (-1,1], never exceeds iou, and matches the oracle") {
  Rng rng(2024);
  for (int trial = 0; trial < 10000; ++trial) {
    const Box a = random_box(rng);
    const Box b = random_box(rng);
    const double g = giou(a, b);
    const double i = iou(a, b);
    CHECK(g > -1.0);
    CHECK(g <= 1.0 + 1e-15);
    CHECK(g <= i + 1e-12);
    CHECK(g == doctest::Approx(giou_oracle(a, b)).epsilon(1e-12));
    // symmetry
    CHECK(giou(b, a) == doctest::Approx(g).epsilon(1e-12));
    CHECK(iou(b, a) == doctest::Approx(i).epsilon(1e-12));
  }
}

TEST_CASE("hull equal to union implies giou equals iou") {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    // two stacked boxes of equal width share their hull with their union
    const double w = rng.uniform(0.1, 0.4);
    const double h1 = rng.uniform(0.1, 0.3), h2 = rng.uniform(0.1, 0.3);
    const double x = rng.uniform(0.3, 0.6), y = rng.uniform(0.3, 0.5);
    const Box top{x, y + h1 / 2, w, h1};
    const Box bottom{x, y - h2 / 2, w, h2};
    CHECK(giou(top, bottom) == doctest::Approx(iou(top, bottom)).epsilon(1e-12));
  }
}

TEST_CASE("translating one of two identical boxes apart never increases giou") {
  Rng rng(77);
  for (int trial = 0; trial < 100; ++trial) {
    const Box base = random_box(rng);
    const double angle = rng.uniform(0, 2 * M_PI);
    const double dx = std::cos(angle), dy = std::sin(angle);
    double prev = giou(base, base);
    for (int step = 1; step <= 20; ++step) {
      const double t = 0.05 * step;
      Box moved = base;
      moved.cx += dx * t;
      moved.cy += dy * t;
      const double g = giou(base, moved);
      CHECK(g <= prev + 1e-12);
      prev = g;
    }
  }
}

TEST_CASE("corner round-trip recovers center-size to within an ulp") {
  // Exact recovery for arbitrary doubles is impossible (the corner pair
  // does not determine the inputs uniquely), so the guarantee is ulp-tight
  // closeness plus exactness on dyadic coordinates.
  Rng rng(31);
  for (int trial = 0; trial < 100000; ++trial) {
    const Box b = random_box(rng);
    const auto c = b.corners();
    const Box r = Box::from_corners(c.x1, c.y1, c.x2, c.y2);
    CHECK(std::abs(r.cx - b.cx) <=
          std::abs(std::nextafter(b.cx, 2.0) - b.cx));
    CHECK(std::abs(r.cy - b.cy) <=
          std::abs(std::nextafter(b.cy, 2.0) - b.cy));
    CHECK(std::abs(r.w - b.w) <= 2 * std::abs(std::nextafter(b.w + 1.0, 2.0) - (b.w + 1.0)));
    CHECK(std::abs(r.h - b.h) <= 2 * std::abs(std::nextafter(b.h + 1.0, 2.0) - (b.h + 1.0)));
  }
  const Box dyadic{0.5, 0.25, 0.25, 0.125};
  const auto c = dyadic.corners();
  const Box r = Box::from_corners(c.x1, c.y1, c.x2, c.y2);
  CHECK(r.cx == dyadic.cx);
  CHECK(r.cy == dyadic.cy);
  CHECK(r.w == dyadic.w);
  CHECK(r.h == dyadic.h);
}

TEST_CASE("box_loss_value is zero iff boxes are identical") {
  const Box a{0.4, 0.6, 0.2, 0.3};
  CHECK(box_loss_value(a, a) == 0.0);
  Box b = a;
  b.cx += 0.1;
  const double expected = 5.0 * 0.1 + 2.0 * (1.0 - giou_oracle(b, a));
  CHECK(box_loss_value(b, a) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(box_loss_value(b, a) > 0.0);
}

TEST_CASE("differentiable giou matches the scalar route") {
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const Box a = random_box(rng);
    const Box b = random_box(rng);
    Tensor g = giou_rows(box_row_tensor(a), box_row_tensor(b));
    CHECK(g.at(0) == doctest::Approx(giou(a, b)).epsilon(1e-12));
    Tensor loss = box_loss_rows(box_row_tensor(a), box_row_tensor(b));
    CHECK(loss.at(0) == doctest::Approx(box_loss_value(a, b)).epsilon(1e-12));
  }
}

TEST_CASE("box_loss gradients match finite differences") {
  Rng rng(44);
  double worst = 0.0;
  for (int trial = 0; trial < 25; ++trial) {
    const Box gt = random_box(rng);
    Tensor pred = Tensor::from_values(
        {1, 4},
        {rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.1, 0.4),
         rng.uniform(0.1, 0.4)},
        true);
    auto loss_fn = [&]() { return box_loss(pred, gt); };
    worst = std::max(worst, gltest::max_fd_rel_error(loss_fn, {pred}));
  }
  CHECK(worst < 1e-4);
}
