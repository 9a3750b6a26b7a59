// Copyright 2026 The lip-prior Authors
// Licensed under the Apache License, Version 2.0.

#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace lip {

// Error taxonomy. ContractError covers precondition/shape violations,
// IoError covers file problems, ConfigError covers experiment configs.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ContractError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ContractError(msg);
}

// Named, seeded deterministic generator. The sequence is fully defined by
// (seed, name) and uses only integer arithmetic plus explicit float
// scaling, so it is identical on every platform.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::string_view name) {
    std::uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a over the name
    for (char ch : name) {
      h ^= static_cast<unsigned char>(ch);
      h *= 0x100000001b3ull;
    }
    state_ = seed ^ h;
    // warm up so that nearby seeds decorrelate
    next_u64();
    next_u64();
  }

  std::uint64_t next_u64() {  // splitmix64
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // uniform in [0,1) with 24 bits of mantissa
  float uniform01() {
    return static_cast<float>(next_u64() >> 40) * (1.0f / 16777216.0f);
  }

  float uniform(float lo, float hi) { return lo + (hi - lo) * uniform01(); }

  double uniform01d() {
    return static_cast<double>(next_u64() >> 11) * (1.0 / 9007199254740992.0);
  }

  // Box-Muller; std::normal_distribution is not platform-stable.
  float gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1, u2;
    do {
      u1 = uniform01d();
    } while (u1 <= 1e-300);
    u2 = uniform01d();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * 3.14159265358979323846 * u2;
    spare_ = static_cast<float>(r * std::sin(a));
    have_spare_ = true;
    return static_cast<float>(r * std::cos(a));
  }

  // unbiased index in [0, n)
  std::size_t index(std::size_t n) {
    if (n <= 1) return 0;
    std::uint64_t bound = ~0ull - (~0ull % n);
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= bound);
    return static_cast<std::size_t>(x % n);
  }

 private:
  std::uint64_t state_ = 0;
  bool have_spare_ = false;
  float spare_ = 0.0f;
};

}  // namespace lip
