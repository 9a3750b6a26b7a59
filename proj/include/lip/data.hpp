// Copyright 2026 The lip-prior Authors
// Licensed under the Apache License, Version 2.0.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "lip/common.hpp"
#include "lip/tasks.hpp"
#include "lip/tensor.hpp"

namespace lip {

struct NamedImage {
  std::string name;
  Tensor image;
};

// ---------------------------------------------------------------------------
// synthetic fixtures (deterministic, 64x64 RGB by default)
// ---------------------------------------------------------------------------

namespace fixtures {

inline Tensor gradient(int h, int w, std::uint64_t seed) {
  RngStream rng(seed, "fixture.gradient");
  float ang = rng.uniform(0.0f, 6.2831853f);
  float cx = std::cos(ang), cy = std::sin(ang);
  float phase[3] = {rng.uniform01(), rng.uniform01(), rng.uniform01()};
  Tensor t({1, 3, h, w});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        float u = (cx * x / (w - 1) + cy * y / (h - 1) + 1.0f) * 0.5f;
        float v = 0.5f + 0.45f * std::sin(6.2831853f * (u + phase[c]));
        t.data()[(static_cast<std::int64_t>(c) * h + y) * w + x] =
            0.5f + (v - 0.5f);
      }
  return t;
}

inline Tensor checkerboard(int h, int w, std::uint64_t seed) {
  RngStream rng(seed, "fixture.checkerboard");
  int cell = 4 + static_cast<int>(rng.index(5));  // 4..8 px
  float a[3] = {rng.uniform(0.1f, 0.4f), rng.uniform(0.1f, 0.4f),
                rng.uniform(0.1f, 0.4f)};
  float b[3] = {rng.uniform(0.6f, 0.9f), rng.uniform(0.6f, 0.9f),
                rng.uniform(0.6f, 0.9f)};
  Tensor t({1, 3, h, w});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        bool on = ((y / cell) + (x / cell)) % 2 == 0;
        t.data()[(static_cast<std::int64_t>(c) * h + y) * w + x] =
            on ? a[c] : b[c];
      }
  return t;
}

inline Tensor blobs(int h, int w, std::uint64_t seed) {
  RngStream rng(seed, "fixture.blobs");
  Tensor t = Tensor::full({1, 3, h, w}, 0.15f);
  const int n = 5;
  for (int k = 0; k < n; ++k) {
    float cy = rng.uniform(0.1f, 0.9f) * h;
    float cx = rng.uniform(0.1f, 0.9f) * w;
    float s = rng.uniform(0.06f, 0.18f) * std::min(h, w);
    float col[3] = {rng.uniform(0.2f, 0.85f), rng.uniform(0.2f, 0.85f),
                    rng.uniform(0.2f, 0.85f)};
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          float d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
          float g = std::exp(-d2 / (2.0f * s * s));
          float* px =
              &t.data()[(static_cast<std::int64_t>(c) * h + y) * w + x];
          *px = std::min(1.0f, *px + col[c] * g);
        }
  }
  return t;
}

// crude glyph strokes over a smooth background; also usable as an
// inpainting text mask
inline void draw_strokes(std::vector<std::uint8_t>& on, int h, int w,
                         std::uint64_t seed) {
  RngStream rng(seed, "fixture.text");
  int rows = 4;
  for (int r = 0; r < rows; ++r) {
    int y0 = 6 + r * (h - 8) / rows;
    int x = 4;
    while (x < w - 8) {
      int glyph_w = 4 + static_cast<int>(rng.index(4));
      int kind = static_cast<int>(rng.index(4));
      for (int dy = 0; dy < 7 && y0 + dy < h; ++dy)
        for (int dx = 0; dx < glyph_w; ++dx) {
          bool set = false;
          switch (kind) {
            case 0: set = (dx == 0 || dy == 0 || dy == 6); break;        // C-ish
            case 1: set = (dx == 0 || dx == glyph_w - 1 || dy == 3); break;
            case 2: set = (dy == dx || dy == 6 - dx); break;             // X-ish
            case 3: set = (dy == 0 || dx == glyph_w / 2); break;         // T-ish
          }
          if (set && x + dx < w)
            on[static_cast<std::size_t>(y0 + dy) * w + x + dx] = 1;
        }
      x += glyph_w + 2 + static_cast<int>(rng.index(3));
    }
  }
}

inline Tensor text(int h, int w, std::uint64_t seed) {
  Tensor t = gradient(h, w, seed ^ 0x7177u);
  std::vector<std::uint8_t> on(static_cast<std::size_t>(h) * w, 0);
  draw_strokes(on, h, w, seed);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (on[static_cast<std::size_t>(y) * w + x])
          t.data()[(static_cast<std::int64_t>(c) * h + y) * w + x] = 0.05f;
  return t;
}

}  // namespace fixtures

// Text-style inpainting mask: 1 = known pixel, 0 = hole.
inline Tensor text_overlay_mask(const Shape& shape, std::uint64_t seed) {
  require(shape.size() == 4, "mask shape must be NCHW");
  const int C = shape[1], H = shape[2], W = shape[3];
  std::vector<std::uint8_t> on(static_cast<std::size_t>(H) * W, 0);
  fixtures::draw_strokes(on, H, W, seed);
  Tensor m = Tensor::full(shape, 1.0f);
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        if (on[static_cast<std::size_t>(y) * W + x])
          m.data()[(static_cast<std::int64_t>(c) * H + y) * W + x] = 0.0f;
  return m;
}

inline std::vector<NamedImage> synthetic_fixtures(std::uint64_t seed,
                                                  int size = 64) {
  return {
      {"gradient", fixtures::gradient(size, size, seed)},
      {"checkerboard", fixtures::checkerboard(size, size, seed)},
      {"blobs", fixtures::blobs(size, size, seed)},
      {"text", fixtures::text(size, size, seed)},
  };
}

// Center-crop (or reflect-pad when too small) so both spatial dims are
// divisible by `multiple`.
inline Tensor fit_to_multiple(const Tensor& img, int multiple) {
  const int C = img.dim(1), H = img.dim(2), W = img.dim(3);
  int th = (H / multiple) * multiple;
  int tw = (W / multiple) * multiple;
  if (th == 0 || tw == 0) {
    th = ((H + multiple - 1) / multiple) * multiple;
    tw = ((W + multiple - 1) / multiple) * multiple;
    Tensor out({1, C, th, tw});
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < th; ++y)
        for (int x = 0; x < tw; ++x) {
          int sy = std::min(y, H - 1);
          int sx = std::min(x, W - 1);
          out.data()[(static_cast<std::int64_t>(c) * th + y) * tw + x] =
              img.data()[(static_cast<std::int64_t>(c) * H + sy) * W + sx];
        }
    return out;
  }
  if (th == H && tw == W) return img.clone();
  const int oy = (H - th) / 2, ox = (W - tw) / 2;
  Tensor out({1, C, th, tw});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < th; ++y)
      for (int x = 0; x < tw; ++x)
        out.data()[(static_cast<std::int64_t>(c) * th + y) * tw + x] =
            img.data()[(static_cast<std::int64_t>(c) * H + y + oy) * W + x +
                       ox];
  return out;
}

// `source` is a directory of PNGs or "builtin:synthetic".
inline std::vector<NamedImage> ingest_dataset(const std::string& source,
                                              int multiple,
                                              std::uint64_t seed = 7) {
  std::vector<NamedImage> out;
  if (source == "builtin:synthetic") {
    for (auto& f : synthetic_fixtures(seed))
      out.push_back({f.name, fit_to_multiple(f.image, multiple)});
    return out;
  }
  namespace fs = std::filesystem;
  if (!fs::is_directory(source))
    throw IoError("dataset source is not a directory: " + source);
  std::vector<fs::path> paths;
  for (const auto& e : fs::directory_iterator(source)) {
    if (e.is_regular_file() && e.path().extension() == ".png")
      paths.push_back(e.path());
  }
  std::sort(paths.begin(), paths.end());
  if (paths.empty()) throw IoError("no PNG images in directory: " + source);
  std::vector<std::string> bad;
  for (const auto& p : paths) {
    try {
      Tensor img = load_image(p.string());
      out.push_back({p.stem().string(), fit_to_multiple(img, multiple)});
    } catch (const IoError&) {
      bad.push_back(p.filename().string());
    }
  }
  if (!bad.empty()) {
    std::string msg = "undecodable files:";
    for (const auto& b : bad) msg += " " + b;
    if (out.empty()) throw IoError(msg);
    throw IoError(msg);
  }
  return out;
}

}  // namespace lip
