// Copyright 2026 The lip-prior Authors
// Licensed under the Apache License, Version 2.0.

#pragma once

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "lip/common.hpp"

namespace lip {

// One binary selector per prunable parameter tensor. keep[i] is 1 for a
// surviving weight, 0 for a pruned one. Value-semantic.
struct MaskLayer {
  std::string name;
  std::vector<int> dims;
  std::vector<std::uint8_t> keep;

  std::int64_t total() const { return static_cast<std::int64_t>(keep.size()); }
  std::int64_t zeros() const {
    std::int64_t z = 0;
    for (auto v : keep) z += (v == 0);
    return z;
  }
};

struct Mask {
  std::vector<MaskLayer> layers;

  std::int64_t total() const {
    std::int64_t t = 0;
    for (const auto& l : layers) t += l.total();
    return t;
  }
  std::int64_t zeros() const {
    std::int64_t z = 0;
    for (const auto& l : layers) z += l.zeros();
    return z;
  }
  double sparsity() const {
    std::int64_t t = total();
    return t == 0 ? 0.0 : static_cast<double>(zeros()) / static_cast<double>(t);
  }

  const MaskLayer* find(const std::string& name) const {
    for (const auto& l : layers)
      if (l.name == name) return &l;
    return nullptr;
  }
  MaskLayer* find(const std::string& name) {
    for (auto& l : layers)
      if (l.name == name) return &l;
    return nullptr;
  }

  bool operator==(const Mask& o) const {
    if (layers.size() != o.layers.size()) return false;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (layers[i].name != o.layers[i].name ||
          layers[i].dims != o.layers[i].dims ||
          layers[i].keep != o.layers[i].keep)
        return false;
    }
    return true;
  }
};

// elementwise a <= b (a prunes at least everything b prunes)
inline bool mask_subset_of(const Mask& a, const Mask& b) {
  if (a.layers.size() != b.layers.size()) return false;
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    if (a.layers[i].keep.size() != b.layers[i].keep.size()) return false;
    for (std::size_t j = 0; j < a.layers[i].keep.size(); ++j)
      if (a.layers[i].keep[j] > b.layers[i].keep[j]) return false;
  }
  return true;
}

}  // namespace lip
