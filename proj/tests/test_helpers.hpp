// Shared helpers for the test suites.
#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "lip/tensor.hpp"

namespace lip::test {

// Central finite differences in 64-bit against the analytic gradient of a
// scalar-valued function of the given parameter tensors. Returns the
// worst relative error over all checked entries.
inline double gradient_check(std::vector<Tensor>& params,
                             const std::function<Tensor()>& loss_fn,
                             double h = 1e-2) {
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  Tape tape;
  {
    TapeScope scope(tape);
    Tensor loss = loss_fn();
    backward(loss);
  }
  double worst = 0.0;
  for (auto& p : params) {
    for (std::int64_t i = 0; i < p.numel(); ++i) {
      float orig = p.data()[i];
      p.data()[i] = orig + static_cast<float>(h);
      double lp = static_cast<double>(loss_fn().item());
      p.data()[i] = orig - static_cast<float>(h);
      double lm = static_cast<double>(loss_fn().item());
      p.data()[i] = orig;
      double fd = (lp - lm) / (2.0 * h);
      double an = static_cast<double>(p.grad_vec()[static_cast<std::size_t>(i)]);
      // floor absorbs float32 round-off in the loss: eps*|L|/(2h)
      double denom = std::max({std::abs(fd), std::abs(an), 1e-2});
      worst = std::max(worst, std::abs(fd - an) / denom);
    }
  }
  return worst;
}

inline Tensor random_tensor(const Shape& shape, RngStream& rng, float lo = -1,
                            float hi = 1) {
  Tensor t(shape);
  for (std::int64_t i = 0; i < t.numel(); ++i)
    t.data()[i] = rng.uniform(lo, hi);
  return t;
}

}  // namespace lip::test
