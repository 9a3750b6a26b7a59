// Copyright 2026 The lip-prior Authors
// Licensed under the Apache License, Version 2.0.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "lip/common.hpp"
#include "lip/mask.hpp"
#include "lip/priors.hpp"
#include "lip/tasks.hpp"

namespace lip {

// Global sparsity after i rounds of pruning 20% of the survivors.
inline double sparsity_at_round(int i) {
  require(i >= 0, "round index must be >= 0");
  return 1.0 - std::pow(0.8, i);
}

inline int rounds_for_sparsity(double s, double fraction = 0.2) {
  require(s >= 0.0 && s < 1.0, "target sparsity in [0,1)");
  if (s == 0.0) return 0;
  return static_cast<int>(
      std::ceil(std::log(1.0 - s) / std::log(1.0 - fraction) - 1e-9));
}

struct LayerSparsity {
  int index = 0;
  std::string name;
  std::int64_t total = 0;
  std::int64_t zeros = 0;
  double sparsity = 0.0;
};

struct SparsityProfile {
  std::vector<LayerSparsity> layers;
  double front_quartile_mean = 0.0;  // mean sparsity over first quarter
  double back_quartile_mean = 0.0;   // mean sparsity over last quarter

  std::vector<double> ratios() const {
    std::vector<double> r;
    for (const auto& l : layers) r.push_back(l.sparsity);
    return r;
  }
};

inline SparsityProfile layer_sparsity_report(const Mask& mask) {
  SparsityProfile p;
  int idx = 0;
  for (const auto& l : mask.layers) {
    LayerSparsity s;
    s.index = idx++;
    s.name = l.name;
    s.total = l.total();
    s.zeros = l.zeros();
    s.sparsity = s.total ? static_cast<double>(s.zeros) / s.total : 0.0;
    p.layers.push_back(std::move(s));
  }
  const std::size_t n = p.layers.size();
  if (n > 0) {
    std::size_t q = std::max<std::size_t>(1, n / 4);
    double front = 0.0, back = 0.0;
    for (std::size_t i = 0; i < q; ++i) front += p.layers[i].sparsity;
    for (std::size_t i = n - q; i < n; ++i) back += p.layers[i].sparsity;
    p.front_quartile_mean = front / static_cast<double>(q);
    p.back_quartile_mean = back / static_cast<double>(q);
  }
  return p;
}

namespace detail {

struct Candidate {
  double score;
  std::uint32_t layer;
  std::int64_t idx;
};

// Prunes the `n_prune` lowest-score survivors, ties broken by
// (layer order, flat index) ascending.
inline Mask prune_lowest(const Mask& mask, std::vector<Candidate> cands,
                         std::int64_t n_prune) {
  std::stable_sort(cands.begin(), cands.end(),
                   [](const Candidate& a, const Candidate& b) {
                     return a.score < b.score;
                   });
  Mask out = mask;
  for (std::int64_t i = 0; i < n_prune && i < static_cast<std::int64_t>(
                                               cands.size());
       ++i) {
    out.layers[cands[static_cast<std::size_t>(i)].layer]
        .keep[static_cast<std::size_t>(cands[static_cast<std::size_t>(i)].idx)] =
        0;
  }
  return out;
}

}  // namespace detail

// One IMP step: zeroes the floor(fraction * remaining) smallest-magnitude
// surviving prunable weights, ranked globally over the whole network.
inline Mask magnitude_prune(const ParamSet& params, const Mask& mask,
                            double fraction) {
  require(fraction > 0.0 && fraction < 1.0, "prune fraction in (0,1)");
  std::vector<detail::Candidate> cands;
  for (std::size_t li = 0; li < mask.layers.size(); ++li) {
    const MaskLayer& layer = mask.layers[li];
    const Param& p = params.find(layer.name);
    require(static_cast<std::int64_t>(layer.keep.size()) == p.value.numel(),
            "mask/param shape mismatch");
    const float* v = p.value.data();
    for (std::size_t i = 0; i < layer.keep.size(); ++i) {
      if (layer.keep[i] == 0) continue;
      cands.push_back({std::abs(static_cast<double>(v[i])),
                       static_cast<std::uint32_t>(li),
                       static_cast<std::int64_t>(i)});
    }
  }
  require(!cands.empty(), "magnitude_prune: no surviving weights");
  std::int64_t n_prune = static_cast<std::int64_t>(
      std::floor(fraction * static_cast<double>(cands.size())));
  return detail::prune_lowest(mask, std::move(cands), n_prune);
}

// Random pruning. Uniform mode prunes each layer to target_sparsity
// independently (exact counts, not Bernoulli); a profile prunes layer l
// to profile[l].
inline Mask random_prune(const PriorNetwork& net, double target_sparsity,
                         const std::vector<double>* profile,
                         std::uint64_t seed) {
  require(target_sparsity >= 0.0 && target_sparsity < 1.0,
          "target sparsity in [0,1)");
  Mask dense = make_dense_mask(net.params);
  if (profile)
    require(profile->size() == dense.layers.size(),
            "profile length mismatch");
  Mask out = dense;
  for (std::size_t li = 0; li < out.layers.size(); ++li) {
    MaskLayer& layer = out.layers[li];
    const std::int64_t total = layer.total();
    std::int64_t zeros =
        profile ? static_cast<std::int64_t>(
                      std::llround((*profile)[li] * static_cast<double>(total)))
                : static_cast<std::int64_t>(
                      std::floor(target_sparsity * static_cast<double>(total)));
    zeros = std::min(zeros, total);
    RngStream rng(seed, "random_prune:" + layer.name);
    // partial Fisher-Yates over the index set
    std::vector<std::int64_t> idx(static_cast<std::size_t>(total));
    std::iota(idx.begin(), idx.end(), 0);
    for (std::int64_t i = 0; i < zeros; ++i) {
      std::size_t j = static_cast<std::size_t>(i) +
                      rng.index(static_cast<std::size_t>(total - i));
      std::swap(idx[static_cast<std::size_t>(i)], idx[j]);
      layer.keep[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])] =
          0;
    }
  }
  return out;
}

// SNIP: single-shot saliency |g . theta| from one forward/backward of the
// task loss at initialization, on the degraded observation.
inline Mask snip_prune(const PriorNetwork& net, const Observation& obs,
                       const Tensor& z, double target_sparsity) {
  require(target_sparsity >= 0.0 && target_sparsity < 1.0,
          "target sparsity in [0,1)");
  Mask dense = make_dense_mask(net.params);
  if (target_sparsity == 0.0) return dense;

  for (auto& p : const_cast<ParamSet&>(net.params).params) p.value.zero_grad();
  Tape tape;
  {
    TapeScope scope(tape);
    Tensor out = net.forward(z);
    Tensor loss = task_loss(out, obs);
    backward(loss);
  }

  std::vector<detail::Candidate> cands;
  std::int64_t total = 0;
  for (std::size_t li = 0; li < dense.layers.size(); ++li) {
    const Param& p = net.params.find(dense.layers[li].name);
    const float* v = p.value.data();
    const auto& g = p.value.grad_vec();
    for (std::int64_t i = 0; i < p.value.numel(); ++i) {
      cands.push_back({std::abs(static_cast<double>(g[static_cast<std::size_t>(
                           i)]) *
                                v[i]),
                       static_cast<std::uint32_t>(li), i});
    }
    total += p.value.numel();
  }
  for (auto& p : const_cast<ParamSet&>(net.params).params) p.value.zero_grad();
  std::int64_t n_prune = static_cast<std::int64_t>(
      std::floor(target_sparsity * static_cast<double>(total)));
  return detail::prune_lowest(dense, std::move(cands), n_prune);
}

// Synaptic-flow scores: with parameters replaced by their absolute
// values, R = sum of the (norm-bypassed, pre-sigmoid) outputs on an
// all-ones input; score = theta . dR/dtheta. `forward_r` must produce the
// scalar R from the current parameter values.
inline std::vector<std::vector<double>> synflow_scores(
    ParamSet& params, const std::vector<std::string>& prunable,
    const std::function<Tensor()>& forward_r) {
  ParamValues saved = snapshot_params(params);
  for (auto& p : params.params) {
    float* v = p.value.data();
    for (std::int64_t i = 0; i < p.value.numel(); ++i) v[i] = std::abs(v[i]);
    p.value.zero_grad();
  }
  Tape tape;
  {
    TapeScope scope(tape);
    Tensor r = forward_r();
    backward(r);
  }
  std::vector<std::vector<double>> scores;
  for (const auto& name : prunable) {
    const Param& p = params.find(name);
    std::vector<double> s(static_cast<std::size_t>(p.value.numel()));
    const float* v = p.value.data();
    const auto& g = p.value.grad_vec();
    for (std::size_t i = 0; i < s.size(); ++i)
      s[i] = static_cast<double>(v[i]) * g[i];
    scores.push_back(std::move(s));
  }
  for (auto& p : params.params) p.value.zero_grad();
  restore_params(params, saved);
  return scores;
}

// Data-free iterative SynFlow pruning to `target_sparsity` with an
// exponential per-round schedule.
inline Mask synflow_prune(PriorNetwork& net, const Shape& code_shape,
                          double target_sparsity, int rounds = 100) {
  require(target_sparsity >= 0.0 && target_sparsity < 1.0,
          "target sparsity in [0,1)");
  Mask mask = make_dense_mask(net.params);
  if (target_sparsity == 0.0) return mask;
  const std::int64_t total = mask.total();
  const double final_density = 1.0 - target_sparsity;
  const auto prunable = net.prunable_names();
  Tensor ones = Tensor::full(code_shape, 1.0f);
  ParamValues theta0 = snapshot_params(net.params);

  for (int r = 1; r <= rounds; ++r) {
    // mask applied through the weights themselves
    ParamValues masked = theta0;
    for (std::size_t li = 0; li < mask.layers.size(); ++li) {
      for (auto& kv : masked) {
        if (kv.first != mask.layers[li].name) continue;
        for (std::size_t i = 0; i < kv.second.size(); ++i)
          if (mask.layers[li].keep[i] == 0) kv.second[i] = 0.0f;
      }
    }
    restore_params(net.params, masked);
    auto scores = synflow_scores(net.params, prunable, [&]() {
      ForwardOptions opts;
      opts.skip_norm = true;
      opts.linear_output = true;
      return sum_all(net.forward(ones, opts));
    });
    double density =
        std::pow(final_density, static_cast<double>(r) / rounds);
    std::int64_t zeros_target =
        total - static_cast<std::int64_t>(std::llround(density * total));
    std::vector<detail::Candidate> cands;
    for (std::size_t li = 0; li < mask.layers.size(); ++li) {
      for (std::size_t i = 0; i < mask.layers[li].keep.size(); ++i) {
        // already-pruned weights rank below every live score
        double s = mask.layers[li].keep[i] ? scores[li][i] : -1.0;
        cands.push_back({s, static_cast<std::uint32_t>(li),
                         static_cast<std::int64_t>(i)});
      }
    }
    mask = detail::prune_lowest(Mask{mask.layers}, std::move(cands),
                                zeros_target);
  }
  restore_params(net.params, theta0);
  return mask;
}

}  // namespace lip
