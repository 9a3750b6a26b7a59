// Copyright 2026 The lip-prior Authors
// Licensed under the Apache License, Version 2.0.

#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "lip/common.hpp"
#include "lip/tensor.hpp"

namespace lip {

struct AdamConfig {
  float lr = 0.01f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  bool langevin = false;          // SGLD-style update noise
  float temperature = 1e-8f;      // noise variance = 2*lr*temperature
};

// Per-parameter Adam state. Moments are shaped like their parameters.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  std::int64_t step_count() const { return step_; }

  // One Adam step over `params`. `masks[i]`, when non-null, points at a
  // {0,1} byte vector of the parameter's size; masked entries have their
  // gradients zeroed before the moment update and the parameter pinned
  // to exactly 0.
  void step(std::vector<Tensor>& params,
            const std::vector<const std::vector<std::uint8_t>*>& masks,
            RngStream* noise_rng = nullptr) {
    require(masks.empty() || masks.size() == params.size(),
            "adam: mask list size mismatch");
    if (m_.empty()) {
      m_.resize(params.size());
      v_.resize(params.size());
      for (std::size_t i = 0; i < params.size(); ++i) {
        m_[i].assign(static_cast<std::size_t>(params[i].numel()), 0.0f);
        v_[i].assign(static_cast<std::size_t>(params[i].numel()), 0.0f);
      }
    }
    ++step_;
    const float bc1 = 1.0f - std::pow(cfg_.beta1, static_cast<float>(step_));
    const float bc2 = 1.0f - std::pow(cfg_.beta2, static_cast<float>(step_));
    const float noise_std =
        cfg_.langevin ? std::sqrt(2.0f * cfg_.lr * cfg_.temperature) : 0.0f;

    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor& p = params[i];
      if (!p.requires_grad()) continue;
      const std::vector<std::uint8_t>* mask =
          masks.empty() ? nullptr : masks[i];
      require(m_[i].size() == static_cast<std::size_t>(p.numel()),
              "adam: state shape mismatch");
      float* pv = p.data();
      float* g = p.grad();
      float* mi = m_[i].data();
      float* vi = v_[i].data();
      const std::int64_t n = p.numel();
      for (std::int64_t j = 0; j < n; ++j) {
        if (mask && (*mask)[static_cast<std::size_t>(j)] == 0) {
          // pruned weight: no moments, value pinned to zero
          g[j] = 0.0f;
          mi[j] = 0.0f;
          vi[j] = 0.0f;
          pv[j] = 0.0f;
          continue;
        }
        mi[j] = cfg_.beta1 * mi[j] + (1.0f - cfg_.beta1) * g[j];
        vi[j] = cfg_.beta2 * vi[j] + (1.0f - cfg_.beta2) * g[j] * g[j];
        float mhat = mi[j] / bc1;
        float vhat = vi[j] / bc2;
        float upd = cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        if (noise_std > 0.0f && noise_rng)
          upd += noise_std * noise_rng->gaussian();
        pv[j] -= upd;
      }
    }
  }

  // moment accumulators, exposed for invariants/tests
  const std::vector<float>& first_moment(std::size_t i) const { return m_[i]; }
  const std::vector<float>& second_moment(std::size_t i) const { return v_[i]; }

 private:
  AdamConfig cfg_;
  std::int64_t step_ = 0;
  std::vector<std::vector<float>> m_, v_;
};

}  // namespace lip
