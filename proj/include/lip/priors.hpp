// Copyright 2026 The lip-prior Authors
// Licensed under the Apache License, Version 2.0.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lip/common.hpp"
#include "lip/mask.hpp"
#include "lip/tensor.hpp"

namespace lip {

enum class Arch { Hourglass, DeepDecoder };

struct NetworkSpec {
  Arch kind = Arch::Hourglass;
  int depth = 4;
  std::vector<int> widths;       // per-scale channels; decoder uses widths[0]
  std::vector<int> skip_widths;  // hourglass only
  int kernel = 3;
  int code_channels = 32;
  int out_channels = 3;

  int width_at(int scale) const {  // scale in [1, depth]
    return widths[static_cast<std::size_t>(
        std::min<int>(scale, static_cast<int>(widths.size())) - 1)];
  }
  int skip_at(int scale) const {
    return skip_widths[static_cast<std::size_t>(
        std::min<int>(scale, static_cast<int>(skip_widths.size())) - 1)];
  }

  void validate() const {
    require(depth >= 1, "depth must be >= 1");
    require(!widths.empty(), "widths must be non-empty");
    for (int w : widths) require(w > 0, "widths must be positive");
    if (kind == Arch::Hourglass) {
      require(!skip_widths.empty(), "hourglass needs skip widths");
      for (int w : skip_widths) require(w > 0, "skip widths must be positive");
      require(kernel >= 1 && kernel % 2 == 1, "kernel must be odd");
    }
    require(out_channels == 1 || out_channels == 3,
            "output channels must be 1 or 3");
  }
};

// Desk-scale default: depth-4, width-32 hourglass.
inline NetworkSpec desk_hourglass_spec() {
  NetworkSpec s;
  s.kind = Arch::Hourglass;
  s.depth = 4;
  s.widths = {32};
  s.skip_widths = {4};
  return s;
}

// Full-scale default: depth-5, width-128 hourglass (~2.2M parameters).
inline NetworkSpec full_hourglass_spec() {
  NetworkSpec s;
  s.kind = Arch::Hourglass;
  s.depth = 5;
  s.widths = {128};
  s.skip_widths = {4};
  return s;
}

struct Param {
  std::string name;
  Tensor value;
  bool prunable = false;
};

struct ParamSet {
  std::vector<Param> params;

  Param& find(const std::string& name) {
    for (auto& p : params)
      if (p.name == name) return p;
    throw ContractError("unknown parameter: " + name);
  }
  const Param& find(const std::string& name) const {
    for (const auto& p : params)
      if (p.name == name) return p;
    throw ContractError("unknown parameter: " + name);
  }

  std::int64_t total_count() const {
    std::int64_t n = 0;
    for (const auto& p : params) n += p.value.numel();
    return n;
  }
  std::int64_t prunable_count() const {
    std::int64_t n = 0;
    for (const auto& p : params)
      if (p.prunable) n += p.value.numel();
    return n;
  }
};

// Flat value snapshot, keyed by parameter name (theta_0 / theta_j).
using ParamValues = std::vector<std::pair<std::string, FloatVec>>;

inline ParamValues snapshot_params(const ParamSet& ps) {
  ParamValues out;
  out.reserve(ps.params.size());
  for (const auto& p : ps.params) out.emplace_back(p.name, p.value.vec());
  return out;
}

inline void restore_params(ParamSet& ps, const ParamValues& values) {
  require(values.size() == ps.params.size(), "snapshot/param count mismatch");
  for (std::size_t i = 0; i < values.size(); ++i) {
    require(values[i].first == ps.params[i].name, "snapshot name mismatch");
    require(values[i].second.size() == ps.params[i].value.vec().size(),
            "snapshot shape mismatch");
    ps.params[i].value.vec() = values[i].second;
  }
}

struct InputCode {
  Tensor z;                   // (1, code_channels, H, W)
  std::uint64_t seed = 0;
  // per-iteration gaussian std, applied at fit time; unset = fit default
  std::optional<float> jitter;
};

inline InputCode sample_input_code(const Shape& shape, std::uint64_t seed,
                                   float lo = 0.0f, float hi = 0.1f) {
  require(shape.size() == 4, "input code must be (1,C,H,W)");
  InputCode code;
  code.seed = seed;
  code.z = Tensor(shape);
  RngStream rng(seed, "input_code");
  for (std::int64_t i = 0; i < code.z.numel(); ++i)
    code.z.data()[i] = rng.uniform(lo, hi);
  return code;
}

struct ForwardOptions {
  bool skip_norm = false;      // bypass normalization layers (SynFlow)
  bool linear_output = false;  // drop the output sigmoid (SynFlow)
};

class PriorNetwork {
 public:
  NetworkSpec spec;
  ParamSet params;
  Mask mask;
  std::uint64_t init_seed = 0;

  // Applies the mask to the underlying weights: pruned entries become
  // exactly 0 and stay 0 (the optimizer upholds the invariant).
  void set_mask(Mask m);
  const Mask& current_mask() const { return mask; }

  Tensor forward(const Tensor& z, const ForwardOptions& opts = {}) const;

  std::vector<std::string> prunable_names() const {
    std::vector<std::string> out;
    for (const auto& p : params.params)
      if (p.prunable) out.push_back(p.name);
    return out;
  }

 private:
  Tensor forward_hourglass(const Tensor& z, const ForwardOptions& opts) const;
  Tensor forward_deep_decoder(const Tensor& z,
                              const ForwardOptions& opts) const;
};

inline Mask make_dense_mask(const ParamSet& ps) {
  Mask m;
  for (const auto& p : ps.params) {
    if (!p.prunable) continue;
    MaskLayer l;
    l.name = p.name;
    l.dims = p.value.shape();
    l.keep.assign(static_cast<std::size_t>(p.value.numel()), 1);
    m.layers.push_back(std::move(l));
  }
  return m;
}

inline void PriorNetwork::set_mask(Mask m) {
  for (const auto& layer : m.layers) {
    Param& p = params.find(layer.name);
    require(p.prunable, "mask layer targets a non-prunable parameter");
    require(static_cast<std::int64_t>(layer.keep.size()) == p.value.numel(),
            "mask shape mismatch for " + layer.name);
    float* v = p.value.data();
    for (std::size_t i = 0; i < layer.keep.size(); ++i)
      if (layer.keep[i] == 0) v[i] = 0.0f;
  }
  mask = std::move(m);
}

namespace detail {

inline Tensor kaiming_uniform(Shape shape, std::int64_t fan_in,
                              RngStream& rng) {
  // gain for leaky_relu(0.2)
  const float gain = std::sqrt(2.0f / (1.0f + 0.2f * 0.2f));
  const float bound =
      gain * std::sqrt(3.0f / static_cast<float>(fan_in));
  Tensor t(std::move(shape), true);
  for (std::int64_t i = 0; i < t.numel(); ++i)
    t.data()[i] = rng.uniform(-bound, bound);
  return t;
}

inline void add_conv(ParamSet& ps, const std::string& name, int out_ch,
                     int in_ch, int k, bool bias, std::uint64_t seed) {
  RngStream rng(seed, name + ".weight");
  ps.params.push_back(
      {name + ".weight",
       kaiming_uniform({out_ch, in_ch, k, k},
                       static_cast<std::int64_t>(in_ch) * k * k, rng),
       true});
  if (bias) {
    Tensor b({out_ch}, true);
    ps.params.push_back({name + ".bias", std::move(b), false});
  }
}

inline void add_norm(ParamSet& ps, const std::string& name, int channels) {
  Tensor gamma = Tensor::full({channels}, 1.0f, true);
  Tensor beta({channels}, true);
  ps.params.push_back({name + ".gamma", std::move(gamma), false});
  ps.params.push_back({name + ".beta", std::move(beta), false});
}

}  // namespace detail

inline PriorNetwork build_hourglass(const NetworkSpec& spec,
                                    std::uint64_t seed) {
  spec.validate();
  require(spec.kind == Arch::Hourglass, "spec is not an hourglass");
  PriorNetwork net;
  net.spec = spec;
  net.init_seed = seed;
  ParamSet& ps = net.params;
  const int k = spec.kernel;
  const int d = spec.depth;

  for (int s = 1; s <= d; ++s) {
    const int cin = (s == 1) ? spec.code_channels : spec.width_at(s - 1);
    const int w = spec.width_at(s);
    const std::string ds = "down" + std::to_string(s);
    detail::add_conv(ps, ds + ".conv1", w, cin, k, true, seed);
    detail::add_norm(ps, ds + ".norm1", w);
    detail::add_conv(ps, ds + ".conv2", w, w, k, true, seed);
    detail::add_norm(ps, ds + ".norm2", w);
    const std::string ss = "skip" + std::to_string(s);
    detail::add_conv(ps, ss + ".conv", spec.skip_at(s), w, 1, true, seed);
    detail::add_norm(ps, ss + ".norm", spec.skip_at(s));
  }
  for (int s = d; s >= 1; --s) {
    const int w = spec.width_at(s);
    const int deeper = (s == d) ? spec.width_at(d) : spec.width_at(s + 1);
    const int cin = spec.skip_at(s) + deeper;
    const std::string us = "up" + std::to_string(s);
    detail::add_norm(ps, us + ".norm0", cin);
    detail::add_conv(ps, us + ".conv1", w, cin, k, true, seed);
    detail::add_norm(ps, us + ".norm1", w);
    detail::add_conv(ps, us + ".conv2", w, w, 1, true, seed);
  }
  detail::add_conv(ps, "final.conv", spec.out_channels, spec.width_at(1), 1,
                   true, seed);

  net.mask = make_dense_mask(ps);
  return net;
}

inline PriorNetwork build_deep_decoder(int channels, int depth,
                                       std::uint64_t seed,
                                       int out_channels = 3) {
  require(channels >= 1, "deep decoder channel count must be >= 1");
  require(depth >= 1, "deep decoder depth must be >= 1");
  PriorNetwork net;
  net.spec.kind = Arch::DeepDecoder;
  net.spec.depth = depth;
  net.spec.widths = {channels};
  net.spec.code_channels = channels;
  net.spec.out_channels = out_channels;
  net.init_seed = seed;
  ParamSet& ps = net.params;
  for (int b = 1; b <= depth; ++b) {
    const std::string name = "dd" + std::to_string(b);
    detail::add_conv(ps, name + ".conv", channels, channels, 1, false, seed);
    detail::add_norm(ps, name + ".norm", channels);
  }
  detail::add_conv(ps, "ddout.conv", out_channels, channels, 1, false, seed);
  net.mask = make_dense_mask(ps);
  return net;
}

inline Tensor PriorNetwork::forward_hourglass(const Tensor& z,
                                              const ForwardOptions& opts)
    const {
  const int d = spec.depth;
  require(z.ndim() == 4 && z.dim(1) == spec.code_channels,
          "input code channel mismatch");
  require(z.dim(2) % (1 << d) == 0 && z.dim(3) % (1 << d) == 0,
          "spatial size must be divisible by 2^depth");
  const int k = spec.kernel;
  const int pad = k / 2;

  auto conv = [&](const Tensor& x, const std::string& name, int stride) {
    const Param& w = params.find(name + ".weight");
    const Param& b = params.find(name + ".bias");
    return conv2d(x, w.value, b.value, stride, (w.value.dim(2)) / 2);
  };
  auto norm = [&](const Tensor& x, const std::string& name) {
    if (opts.skip_norm) return x;
    return normalize(x, NormKind::BatchNorm, params.find(name + ".gamma").value,
                     params.find(name + ".beta").value);
  };

  std::vector<Tensor> skips(static_cast<std::size_t>(d));
  Tensor cur = z;
  Tensor deepest;
  for (int s = 1; s <= d; ++s) {
    const std::string ds = "down" + std::to_string(s);
    cur = leaky_relu(norm(conv(cur, ds + ".conv1", 2), ds + ".norm1"));
    cur = leaky_relu(norm(conv(cur, ds + ".conv2", 1), ds + ".norm2"));
    const std::string ss = "skip" + std::to_string(s);
    skips[static_cast<std::size_t>(s - 1)] =
        leaky_relu(norm(conv(cur, ss + ".conv", 1), ss + ".norm"));
    if (s == d) deepest = cur;
  }

  cur = concat_channels(skips[static_cast<std::size_t>(d - 1)], deepest);
  for (int s = d; s >= 1; --s) {
    const std::string us = "up" + std::to_string(s);
    cur = norm(cur, us + ".norm0");
    cur = leaky_relu(norm(conv(cur, us + ".conv1", 1), us + ".norm1"));
    cur = leaky_relu(conv(cur, us + ".conv2", 1));
    cur = resample(cur, 2, 1, ResampleMode::Bilinear);
    if (s > 1) cur = concat_channels(skips[static_cast<std::size_t>(s - 2)], cur);
  }
  cur = conv(cur, "final.conv", 1);
  if (!opts.linear_output) cur = sigmoid(cur);
  (void)pad;
  return cur;
}

inline Tensor PriorNetwork::forward_deep_decoder(const Tensor& z,
                                                 const ForwardOptions& opts)
    const {
  require(z.ndim() == 4 && z.dim(1) == spec.code_channels,
          "input code channel mismatch");
  Tensor cur = z;
  for (int b = 1; b <= spec.depth; ++b) {
    const std::string name = "dd" + std::to_string(b);
    cur = conv2d(cur, params.find(name + ".conv.weight").value, std::nullopt,
                 1, 0);
    cur = resample(cur, 2, 1, ResampleMode::Bilinear);
    cur = relu(cur);
    if (!opts.skip_norm)
      cur = normalize(cur, NormKind::ChannelNorm,
                      params.find(name + ".norm.gamma").value,
                      params.find(name + ".norm.beta").value);
  }
  cur = conv2d(cur, params.find("ddout.conv.weight").value, std::nullopt, 1, 0);
  if (!opts.linear_output) cur = sigmoid(cur);
  return cur;
}

inline Tensor PriorNetwork::forward(const Tensor& z,
                                    const ForwardOptions& opts) const {
  return spec.kind == Arch::Hourglass ? forward_hourglass(z, opts)
                                      : forward_deep_decoder(z, opts);
}

inline std::int64_t count_params(const PriorNetwork& net,
                                 bool only_nonzero = false) {
  std::int64_t n = 0;
  for (const auto& p : net.params.params) {
    if (!only_nonzero || !p.prunable) {
      n += p.value.numel();
      continue;
    }
    const MaskLayer* l = net.mask.find(p.name);
    if (!l) {
      n += p.value.numel();
    } else {
      n += l->total() - l->zeros();
    }
  }
  return n;
}

// Analytic layer-sum for the hourglass (test oracle companion).
inline std::int64_t hourglass_param_formula(const NetworkSpec& s) {
  std::int64_t n = 0;
  const int k = s.kernel;
  for (int sc = 1; sc <= s.depth; ++sc) {
    const int cin = (sc == 1) ? s.code_channels : s.width_at(sc - 1);
    const int w = s.width_at(sc);
    const int ns = s.skip_at(sc);
    n += static_cast<std::int64_t>(w) * cin * k * k + w + 2 * w;  // conv1+norm1
    n += static_cast<std::int64_t>(w) * w * k * k + w + 2 * w;    // conv2+norm2
    n += static_cast<std::int64_t>(ns) * w + ns + 2 * ns;         // skip
  }
  for (int sc = s.depth; sc >= 1; --sc) {
    const int w = s.width_at(sc);
    const int deeper = (sc == s.depth) ? s.width_at(s.depth) : s.width_at(sc + 1);
    const int cin = s.skip_at(sc) + deeper;
    n += 2 * cin;                                               // norm0
    n += static_cast<std::int64_t>(w) * cin * k * k + w + 2 * w;  // conv1+norm1
    n += static_cast<std::int64_t>(w) * w + w;                    // conv2 1x1
  }
  n += static_cast<std::int64_t>(s.out_channels) * s.width_at(1) +
       s.out_channels;
  return n;
}

}  // namespace lip
