#include <cmath>

#include "doctest.h"
#include "lip/optim.hpp"
#include "lip/tensor.hpp"
#include "test_helpers.hpp"

using namespace lip;

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  Tensor p = Tensor::from({3}, {1.0f, -2.0f, 0.5f}, true);
  p.ensure_grad();
  Adam opt;
  std::vector<Tensor> params = {p};
  opt.step(params, {nullptr});
  CHECK(p.data()[0] == 1.0f);
  CHECK(p.data()[1] == -2.0f);
  CHECK(p.data()[2] == 0.5f);
}

TEST_CASE("adam: first-step update magnitude is about lr") {
  // with bias correction the first step is lr * g/|g| up to eps
  Tensor p = Tensor::from({2}, {0.0f, 0.0f}, true);
  p.grad()[0] = 3.0f;
  p.grad()[1] = -0.004f;
  AdamConfig cfg;
  cfg.lr = 0.01f;
  Adam opt(cfg);
  std::vector<Tensor> params = {p};
  opt.step(params, {nullptr});
  CHECK(p.data()[0] == doctest::Approx(-0.01f).epsilon(1e-3));
  CHECK(p.data()[1] == doctest::Approx(0.01f).epsilon(1e-2));
}

TEST_CASE("adam: masked parameter stays exactly zero with zero moments") {
  Tensor p = Tensor::from({4}, {0.0f, 1.0f, 0.0f, -1.0f}, true);
  std::vector<std::uint8_t> keep = {0, 1, 0, 1};
  Adam opt;
  std::vector<Tensor> params = {p};
  for (int it = 0; it < 25; ++it) {
    p.grad()[0] = 1.0f;
    p.grad()[1] = -0.5f;
    p.grad()[2] = 2.0f;
    p.grad()[3] = 0.25f;
    opt.step(params, {&keep});
  }
  CHECK(p.data()[0] == 0.0f);
  CHECK(p.data()[2] == 0.0f);
  CHECK(p.data()[1] != 1.0f);
  CHECK(opt.first_moment(0)[0] == 0.0f);
  CHECK(opt.second_moment(0)[0] == 0.0f);
  CHECK(opt.first_moment(0)[2] == 0.0f);
  CHECK(opt.second_moment(0)[2] == 0.0f);
}

TEST_CASE("adam: langevin mode is deterministic per seed") {
  auto run = [](std::uint64_t seed) {
    Tensor p = Tensor::from({2}, {0.5f, -0.5f}, true);
    AdamConfig cfg;
    cfg.langevin = true;
    cfg.temperature = 1e-4f;
    Adam opt(cfg);
    RngStream rng(seed, "noise");
    std::vector<Tensor> params = {p};
    for (int it = 0; it < 10; ++it) {
      p.grad()[0] = 1.0f;
      p.grad()[1] = -1.0f;
      opt.step(params, {nullptr}, &rng);
    }
    return std::pair<float, float>(p.data()[0], p.data()[1]);
  };
  auto a = run(7), b = run(7), c = run(8);
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
  CHECK(a.first != c.first);  // noise actually applied
}

TEST_CASE("rng streams are stable and name-separated") {
  RngStream a(1, "x"), b(1, "x"), c(1, "y");
  for (int i = 0; i < 100; ++i) {
    auto va = a.next_u64();
    CHECK(va == b.next_u64());
  }
  CHECK(a.next_u64() != c.next_u64());

  RngStream u(3, "u");
  for (int i = 0; i < 1000; ++i) {
    float v = u.uniform(0.0f, 0.1f);
    CHECK(v >= 0.0f);
    CHECK(v <= 0.1f);
  }
}
