#include <doctest.h>

#include <cmath>
#include <vector>

#include "grouplab/optim.hpp"
#include "grouplab/rng.hpp"
#include "grouplab/tensor.hpp"

using namespace grouplab;

TEST_CASE("zero gradient and zero weight decay leave the parameter unchanged") {
  Tensor p = Tensor::from_values({2}, {1.5, -0.5}, true);
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  AdamW opt(cfg, {p});
  p.zero_grad();
  opt.step();
  CHECK(p.at(0) == 1.5);
  CHECK(p.at(1) == -0.5);
}

TEST_CASE("first step moves by about -lr * sign(grad)") {
  Tensor p = Tensor::from_values({3}, {1.0, 2.0, 3.0}, true);
  AdamWConfig cfg;
  cfg.lr = 1e-3;
  cfg.weight_decay = 0.0;
  AdamW opt(cfg, {p});
  p.zero_grad();
  p.mutable_grad()[0] = 0.37;
  p.mutable_grad()[1] = -4.2;
  p.mutable_grad()[2] = 1e-3;
  opt.step();
  CHECK(p.at(0) == doctest::Approx(1.0 - 1e-3).epsilon(1e-6));
  CHECK(p.at(1) == doctest::Approx(2.0 + 1e-3).epsilon(1e-6));
  CHECK(p.at(2) == doctest::Approx(3.0 - 1e-3).epsilon(1e-4));
}

TEST_CASE("a hundred steps on a 1-d quadratic land on the minimizer") {
  // f(x) = (x - 0.1)^2, closed-form minimizer 0.1
  Tensor x = Tensor::from_values({1}, {0.0}, true);
  AdamWConfig cfg;
  cfg.lr = 0.05;
  cfg.weight_decay = 0.0;
  AdamW opt(cfg, {x});
  for (int step = 0; step < 100; ++step) {
    x.zero_grad();
    x.mutable_grad()[0] = 2.0 * (x.at(0) - 0.1);
    opt.step();
  }
  CHECK(std::abs(x.at(0) - 0.1) < 1e-3);
}

TEST_CASE("decoupled weight decay shrinks parameters without touching moments") {
  Tensor p = Tensor::from_values({1}, {2.0}, true);
  AdamWConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.5;
  AdamW opt(cfg, {p});
  p.zero_grad();  // zero gradient: only the decay term acts
  opt.step();
  CHECK(p.at(0) == doctest::Approx(2.0 * (1.0 - 0.1 * 0.5)));
}

TEST_CASE("parameters without a gradient buffer are skipped and counted") {
  Tensor with = Tensor::from_values({1}, {1.0}, true);
  Tensor without = Tensor::from_values({1}, {1.0});  // no grad allocated
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  AdamW opt(cfg, {with, without});
  with.zero_grad();
  with.mutable_grad()[0] = 1.0;
  CHECK(opt.step() == 1);
  CHECK(without.at(0) == 1.0);
  CHECK(with.at(0) < 1.0);
}

TEST_CASE("stepping an empty parameter list is a no-op") {
  AdamW opt(AdamWConfig{}, {});
  CHECK(opt.step() == 0);
  CHECK(opt.step_count() == 0);
}

TEST_CASE("learning rate drops by the factor at the configured epoch") {
  AdamWConfig cfg;
  cfg.lr = 1e-3;
  cfg.lr_drop_epoch = 4;
  cfg.lr_drop_factor = 0.1;
  AdamW opt(cfg, {});
  opt.set_epoch(1);
  CHECK(opt.current_lr() == doctest::Approx(1e-3));
  opt.set_epoch(3);
  CHECK(opt.current_lr() == doctest::Approx(1e-3));
  opt.set_epoch(4);
  CHECK(opt.current_lr() == doctest::Approx(1e-4));
  opt.set_epoch(7);
  CHECK(opt.current_lr() == doctest::Approx(1e-4));
}

TEST_CASE("identical seeds give bitwise-identical parameters after T steps") {
  auto run = [](uint64_t seed) {
    Rng rng(seed);
    std::vector<double> init(8);
    for (double& v : init) v = rng.uniform(-1, 1);
    Tensor p = Tensor::from_values({8}, init, true);
    AdamW opt(AdamWConfig{}, {p});
    for (int step = 1; step <= 50; ++step) {
      opt.set_epoch(step);
      p.zero_grad();
      auto g = p.mutable_grad();
      for (size_t i = 0; i < g.size(); ++i) g[i] = rng.normal();
      opt.step();
    }
    return std::vector<double>(p.values().begin(), p.values().end());
  };
  const auto a = run(123);
  const auto b = run(123);
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}
