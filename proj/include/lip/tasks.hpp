// Copyright 2026 The lip-prior Authors
// Licensed under the Apache License, Version 2.0.

#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "lip/common.hpp"
#include "lip/tensor.hpp"

namespace lip {

// Images are NCHW tensors with N=1, C in {1,3}, values in [0,1].

enum class TaskKind { Denoise, Inpaint, SuperResolve };

struct Degradation {
  TaskKind kind = TaskKind::Denoise;
  float sigma = 25.0f / 255.0f;       // denoise noise std
  float keep_prob = 0.5f;             // inpaint bernoulli keep probability
  std::optional<Tensor> pixel_mask;   // inpaint explicit mask (1 = known)
  int factor = 4;                     // SR downsampling factor

  void validate() const {
    require(sigma >= 0.0f, "sigma must be >= 0");
    require(keep_prob > 0.0f && keep_prob <= 1.0f, "keep_prob in (0,1]");
    require(factor >= 1, "SR factor must be >= 1");
  }

  static Degradation denoise(float sigma) {
    Degradation d;
    d.kind = TaskKind::Denoise;
    d.sigma = sigma;
    return d;
  }
  static Degradation inpaint(float keep_prob) {
    Degradation d;
    d.kind = TaskKind::Inpaint;
    d.keep_prob = keep_prob;
    return d;
  }
  static Degradation inpaint_mask(Tensor mask) {
    Degradation d;
    d.kind = TaskKind::Inpaint;
    d.pixel_mask = std::move(mask);
    return d;
  }
  static Degradation super_resolve(int factor) {
    Degradation d;
    d.kind = TaskKind::SuperResolve;
    d.factor = factor;
    return d;
  }
};

// A degradation task instance. The clean reference is held behind an
// instrumented accessor so that fitting code paths can be shown to never
// touch it.
class Observation {
 public:
  Tensor observed;                  // x~
  Degradation degradation;
  std::optional<Tensor> pixel_mask; // inpainting support (1 = known pixel)
  std::uint64_t seed = 0;

  Observation() = default;
  Observation(Tensor clean, Tensor obs, Degradation d,
              std::optional<Tensor> mask, std::uint64_t s)
      : observed(std::move(obs)),
        degradation(std::move(d)),
        pixel_mask(std::move(mask)),
        seed(s),
        clean_(std::move(clean)) {}

  // Evaluation-only access to the held-out clean image.
  const Tensor& clean() const {
    ++clean_reads_;
    return clean_;
  }
  long clean_read_count() const { return clean_reads_; }
  bool has_clean() const { return clean_.defined(); }

 private:
  Tensor clean_;
  mutable long clean_reads_ = 0;
};

inline Tensor make_bernoulli_mask(const Shape& shape, float keep_prob,
                                  RngStream& rng) {
  Tensor m(shape);
  // one decision per pixel, shared across channels
  require(shape.size() == 4, "mask shape must be NCHW");
  const int C = shape[1], H = shape[2], W = shape[3];
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      float v = rng.uniform01() < keep_prob ? 1.0f : 0.0f;
      for (int c = 0; c < C; ++c)
        m.data()[(static_cast<std::int64_t>(c) * H + y) * W + x] = v;
    }
  return m;
}

inline Observation make_observation(const Tensor& clean, Degradation d,
                                    std::uint64_t seed) {
  d.validate();
  require(clean.ndim() == 4 && clean.dim(0) == 1, "clean image must be 1CHW");
  for (std::int64_t i = 0; i < clean.numel(); ++i)
    require(clean.data()[i] >= 0.0f && clean.data()[i] <= 1.0f,
            "clean image must lie in [0,1]");
  RngStream rng(seed, "observation");
  switch (d.kind) {
    case TaskKind::Denoise: {
      Tensor obs = clean.clone();
      for (std::int64_t i = 0; i < obs.numel(); ++i) {
        float v = obs.data()[i] + d.sigma * rng.gaussian();
        obs.data()[i] = std::min(1.0f, std::max(0.0f, v));
      }
      return Observation(clean.clone(), std::move(obs), d, std::nullopt, seed);
    }
    case TaskKind::Inpaint: {
      Tensor mask = d.pixel_mask
                        ? d.pixel_mask->clone()
                        : make_bernoulli_mask(clean.shape(), d.keep_prob, rng);
      require(mask.shape() == clean.shape(), "inpaint mask shape mismatch");
      Tensor obs = clean.clone();
      for (std::int64_t i = 0; i < obs.numel(); ++i)
        obs.data()[i] *= mask.data()[i];
      return Observation(clean.clone(), std::move(obs), d, std::move(mask),
                         seed);
    }
    case TaskKind::SuperResolve: {
      require(clean.dim(2) % d.factor == 0 && clean.dim(3) % d.factor == 0,
              "image dims must be divisible by the SR factor");
      Tensor obs = resample(clean, 1, d.factor, ResampleMode::Lanczos);
      for (std::int64_t i = 0; i < obs.numel(); ++i)
        obs.data()[i] = std::min(1.0f, std::max(0.0f, obs.data()[i]));
      return Observation(clean.clone(), std::move(obs), d, std::nullopt, seed);
    }
  }
  throw ContractError("unknown degradation kind");
}

// Task loss E(output; x~). Differentiable in `output`; the SR branch uses
// an average-pool surrogate for the downsampling operator.
inline Tensor task_loss(const Tensor& output, const Observation& obs) {
  switch (obs.degradation.kind) {
    case TaskKind::Denoise:
      return mse(output, obs.observed);
    case TaskKind::Inpaint:
      return mse(output, obs.observed, obs.pixel_mask);
    case TaskKind::SuperResolve:
      return mse(avg_pool(output, obs.degradation.factor), obs.observed);
  }
  throw ContractError("unknown degradation kind");
}

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

inline double psnr(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "psnr shapes must be equal");
  double acc = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    double d = static_cast<double>(a.data()[i]) - b.data()[i];
    acc += d * d;
  }
  double m = acc / static_cast<double>(a.numel());
  if (m == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / m);
}

inline std::vector<double> luma(const Tensor& img) {
  require(img.ndim() == 4 && img.dim(0) == 1, "image must be 1CHW");
  const int C = img.dim(1), H = img.dim(2), W = img.dim(3);
  require(C == 1 || C == 3, "image must be gray or RGB");
  std::vector<double> out(static_cast<std::size_t>(H) * W);
  const std::int64_t plane = static_cast<std::int64_t>(H) * W;
  for (std::int64_t i = 0; i < plane; ++i) {
    if (C == 1) {
      out[static_cast<std::size_t>(i)] = img.data()[i];
    } else {
      out[static_cast<std::size_t>(i)] = 0.299 * img.data()[i] +
                                         0.587 * img.data()[plane + i] +
                                         0.114 * img.data()[2 * plane + i];
    }
  }
  return out;
}

// Mean local SSIM: 11x11 gaussian window sigma 1.5, K1=0.01 K2=0.03 L=1,
// on luma, valid windows only.
inline double ssim(const Tensor& ta, const Tensor& tb) {
  require(ta.shape() == tb.shape(), "ssim shapes must be equal");
  const int H = ta.dim(2), W = ta.dim(3);
  constexpr int win = 11;
  require(H >= win && W >= win, "image smaller than the SSIM window");
  auto a = luma(ta), b = luma(tb);

  double kernel[win];
  double ksum = 0.0;
  for (int i = 0; i < win; ++i) {
    double d = i - (win - 1) / 2.0;
    kernel[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
    ksum += kernel[i];
  }
  for (int i = 0; i < win; ++i) kernel[i] /= ksum;

  const double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
  const int OH = H - win + 1, OW = W - win + 1;

  // separable gaussian filtering of a, b, a^2, b^2, ab
  auto filt = [&](auto&& f) {
    std::vector<double> tmp(static_cast<std::size_t>(H) * OW);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < OW; ++x) {
        double acc = 0.0;
        for (int k = 0; k < win; ++k)
          acc += kernel[k] * f(y, x + k);
        tmp[static_cast<std::size_t>(y) * OW + x] = acc;
      }
    std::vector<double> out(static_cast<std::size_t>(OH) * OW);
    for (int y = 0; y < OH; ++y)
      for (int x = 0; x < OW; ++x) {
        double acc = 0.0;
        for (int k = 0; k < win; ++k)
          acc += kernel[k] * tmp[static_cast<std::size_t>(y + k) * OW + x];
        out[static_cast<std::size_t>(y) * OW + x] = acc;
      }
    return out;
  };
  auto idx = [&](int y, int x) { return static_cast<std::size_t>(y) * W + x; };
  auto mu_a = filt([&](int y, int x) { return a[idx(y, x)]; });
  auto mu_b = filt([&](int y, int x) { return b[idx(y, x)]; });
  auto aa = filt([&](int y, int x) { return a[idx(y, x)] * a[idx(y, x)]; });
  auto bb = filt([&](int y, int x) { return b[idx(y, x)] * b[idx(y, x)]; });
  auto ab = filt([&](int y, int x) { return a[idx(y, x)] * b[idx(y, x)]; });

  double total = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    double va = aa[i] - mu_a[i] * mu_a[i];
    double vb = bb[i] - mu_b[i] * mu_b[i];
    double cov = ab[i] - mu_a[i] * mu_b[i];
    double s = ((2.0 * mu_a[i] * mu_b[i] + C1) * (2.0 * cov + C2)) /
               ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + C1) * (va + vb + C2));
    total += s;
  }
  return total / static_cast<double>(mu_a.size());
}

// ---------------------------------------------------------------------------
// frequency analysis
// ---------------------------------------------------------------------------

namespace detail {

// Row-column DFT; O(n^2) per line. Fine at report scale, any size,
// bit-deterministic.
inline void dft_1d(const std::complex<double>* in, std::complex<double>* out,
                   int n, int in_stride, int out_stride) {
  for (int k = 0; k < n; ++k) {
    std::complex<double> acc(0.0, 0.0);
    for (int t = 0; t < n; ++t) {
      double ang = -2.0 * 3.14159265358979323846 * k * t / n;
      acc += in[static_cast<std::int64_t>(t) * in_stride] *
             std::complex<double>(std::cos(ang), std::sin(ang));
    }
    out[static_cast<std::int64_t>(k) * out_stride] = acc;
  }
}

}  // namespace detail

inline std::vector<std::complex<double>> fft2(const std::vector<double>& img,
                                              int h, int w) {
  std::vector<std::complex<double>> buf(img.begin(), img.end());
  std::vector<std::complex<double>> tmp(
      static_cast<std::size_t>(std::max(h, w)));
  for (int y = 0; y < h; ++y) {
    detail::dft_1d(buf.data() + static_cast<std::int64_t>(y) * w, tmp.data(),
                   w, 1, 1);
    std::copy(tmp.begin(), tmp.begin() + w,
              buf.begin() + static_cast<std::int64_t>(y) * w);
  }
  for (int x = 0; x < w; ++x) {
    detail::dft_1d(buf.data() + x, tmp.data(), h, w, 1);
    for (int y = 0; y < h; ++y)
      buf[static_cast<std::size_t>(y) * w + x] =
          tmp[static_cast<std::size_t>(y)];
  }
  return buf;
}

struct RadialBand {
  double band_low = 0.0;   // normalized radius in [0,1]
  double band_high = 0.0;
  double energy_a = 0.0;
  double energy_b = 0.0;
  double energy_diff = 0.0;  // energy of |A|-|B|
};

struct FftDiff {
  Tensor map;  // centered |FFT(a)| - |FFT(b)|, shape (1,1,H,W)
  std::vector<RadialBand> bands;
};

inline FftDiff fft_magnitude_diff(const Tensor& a, const Tensor& b,
                                  int n_bands = 8) {
  require(a.shape() == b.shape(), "fft diff shapes must be equal");
  const int H = a.dim(2), W = a.dim(3);
  auto fa = fft2(luma(a), H, W);
  auto fb = fft2(luma(b), H, W);

  FftDiff out;
  out.map = Tensor({1, 1, H, W});
  out.bands.assign(static_cast<std::size_t>(n_bands), RadialBand{});
  for (int i = 0; i < n_bands; ++i) {
    out.bands[static_cast<std::size_t>(i)].band_low =
        static_cast<double>(i) / n_bands;
    out.bands[static_cast<std::size_t>(i)].band_high =
        static_cast<double>(i + 1) / n_bands;
  }
  const double max_r =
      std::sqrt(static_cast<double>(H / 2) * (H / 2) +
                static_cast<double>(W / 2) * (W / 2));
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      // center shift: frequency (0,0) moves to (H/2, W/2)
      int sy = (y + H / 2) % H;
      int sx = (x + W / 2) % W;
      double ma = std::abs(fa[static_cast<std::size_t>(y) * W + x]);
      double mb = std::abs(fb[static_cast<std::size_t>(y) * W + x]);
      out.map.data()[static_cast<std::int64_t>(sy) * W + sx] =
          static_cast<float>(ma - mb);
      double fy = y <= H / 2 ? y : y - H;
      double fx = x <= W / 2 ? x : x - W;
      double r = std::sqrt(fy * fy + fx * fx) / (max_r > 0 ? max_r : 1.0);
      int band = std::min(n_bands - 1, static_cast<int>(r * n_bands));
      auto& rb = out.bands[static_cast<std::size_t>(band)];
      rb.energy_a += ma * ma;
      rb.energy_b += mb * mb;
      rb.energy_diff += (ma - mb) * (ma - mb);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// PNG I/O (8-bit gray / RGB)
// ---------------------------------------------------------------------------

inline Tensor load_image(const std::string& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    throw IoError("cannot read PNG: " + path + ": " + image.message);
  const bool gray = (image.format & PNG_FORMAT_FLAG_COLOR) == 0;
  image.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  const int C = gray ? 1 : 3;
  const int H = static_cast<int>(image.height);
  const int W = static_cast<int>(image.width);
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(H) * W * C);
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&image);
    throw IoError("cannot decode PNG: " + path + ": " + image.message);
  }
  Tensor t({1, C, H, W});
  const std::int64_t plane = static_cast<std::int64_t>(H) * W;
  for (std::int64_t i = 0; i < plane; ++i)
    for (int c = 0; c < C; ++c)
      t.data()[static_cast<std::int64_t>(c) * plane + i] =
          static_cast<float>(buf[static_cast<std::size_t>(i * C + c)]) /
          255.0f;
  return t;
}

inline void save_image(const Tensor& img, const std::string& path) {
  require(img.ndim() == 4 && img.dim(0) == 1, "image must be 1CHW");
  const int C = img.dim(1), H = img.dim(2), W = img.dim(3);
  require(C == 1 || C == 3, "image must be gray or RGB");
  const std::int64_t plane = static_cast<std::int64_t>(H) * W;
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(plane) * C);
  for (std::int64_t i = 0; i < plane; ++i)
    for (int c = 0; c < C; ++c) {
      float v = img.data()[static_cast<std::int64_t>(c) * plane + i];
      v = std::min(1.0f, std::max(0.0f, v));
      buf[static_cast<std::size_t>(i * C + c)] =
          static_cast<std::uint8_t>(std::lround(v * 255.0f));
    }
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(W);
  image.height = static_cast<png_uint_32>(H);
  image.format = C == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.c_str(), 0, buf.data(), 0,
                               nullptr))
    throw IoError("cannot write PNG: " + path + ": " + image.message);
}

}  // namespace lip
