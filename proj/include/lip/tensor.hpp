// Copyright 2026 The lip-prior Authors
// Licensed under the Apache License, Version 2.0.

#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <vector>

#include "lip/common.hpp"

namespace lip {

using Shape = std::vector<int>;

// Tensor storage is kept at Eigen's preferred alignment so that results
// do not depend on where the allocator happens to place a buffer.
using FloatVec = std::vector<float, Eigen::aligned_allocator<float>>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) {
    require(d > 0, "tensor dimensions must be positive");
    n *= d;
  }
  return n;
}

// Dense row-major float tensor. Values, gradient and the requires_grad
// flag all live in one shared block, so copies are aliases of the same
// tensor; use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, bool requires_grad = false)
      : shape_(std::move(shape)) {
    st_ = std::make_shared<Storage>();
    st_->data.assign(static_cast<std::size_t>(shape_numel(shape_)), 0.0f);
    if (requires_grad) set_requires_grad(true);
  }

  static Tensor from(Shape shape, std::vector<float> values,
                     bool requires_grad = false) {
    Tensor t;
    t.shape_ = std::move(shape);
    require(shape_numel(t.shape_) == static_cast<std::int64_t>(values.size()),
            "data length must equal product of shape");
    t.st_ = std::make_shared<Storage>();
    t.st_->data.assign(values.begin(), values.end());
    if (requires_grad) t.set_requires_grad(true);
    return t;
  }

  static Tensor scalar(float v, bool requires_grad = false) {
    return from({1}, {v}, requires_grad);
  }

  static Tensor full(Shape shape, float v, bool requires_grad = false) {
    Tensor t(std::move(shape), requires_grad);
    std::fill(t.st_->data.begin(), t.st_->data.end(), v);
    return t;
  }

  const Shape& shape() const { return shape_; }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  std::int64_t numel() const {
    return st_ ? static_cast<std::int64_t>(st_->data.size()) : 0;
  }
  bool defined() const { return static_cast<bool>(st_); }

  float* data() { return st_->data.data(); }
  const float* data() const { return st_->data.data(); }
  FloatVec& vec() { return st_->data; }
  const FloatVec& vec() const { return st_->data; }

  float item() const {
    require(numel() == 1, "item() requires a scalar tensor");
    return st_->data[0];
  }

  bool requires_grad() const { return st_ && st_->requires_grad; }
  void set_requires_grad(bool rg) {
    st_->requires_grad = rg;
    if (rg) ensure_grad();  // eager: pullbacks see the shared buffer
  }

  bool has_grad() const { return st_ && !st_->grad.empty(); }
  float* grad() {
    ensure_grad();
    return st_->grad.data();
  }
  const FloatVec& grad_vec() const {
    require(has_grad(), "gradient not populated");
    return st_->grad;
  }
  void ensure_grad() {
    if (st_->grad.empty()) st_->grad.assign(st_->data.size(), 0.0f);
  }
  void zero_grad() {
    if (st_ && !st_->grad.empty())
      std::fill(st_->grad.begin(), st_->grad.end(), 0.0f);
  }

  Tensor clone() const {
    Tensor t;
    t.shape_ = shape_;
    t.st_ = std::make_shared<Storage>();
    t.st_->data = st_->data;
    if (st_->requires_grad) t.set_requires_grad(true);
    return t;
  }

  bool all_finite() const {
    for (float v : st_->data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool shares_storage(const Tensor& o) const { return st_ == o.st_; }

 private:
  struct Storage {
    FloatVec data;
    FloatVec grad;  // empty until first needed
    bool requires_grad = false;
  };

  Shape shape_;
  std::shared_ptr<Storage> st_;
};

// Linear record of differentiable operations. Activate with a TapeScope;
// ops record their pullbacks while a tape is active. backward() replays
// the record once, in reverse order.
class Tape {
 public:
  static Tape*& current() {
    static thread_local Tape* cur = nullptr;
    return cur;
  }

  void record(std::function<void()> pullback) {
    nodes_.push_back(std::move(pullback));
  }

  std::size_t size() const { return nodes_.size(); }

  void backward(Tensor& loss) {
    require(loss.numel() == 1, "backward requires a scalar loss");
    loss.ensure_grad();
    loss.grad()[0] += 1.0f;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

  void clear() { nodes_.clear(); }

 private:
  std::vector<std::function<void()>> nodes_;
};

struct TapeScope {
  explicit TapeScope(Tape& t) : prev(Tape::current()) { Tape::current() = &t; }
  ~TapeScope() { Tape::current() = prev; }
  Tape* prev;
};

inline bool tape_active() { return Tape::current() != nullptr; }

inline void backward(Tensor& loss) {
  require(tape_active(), "backward requires an active tape");
  Tape::current()->backward(loss);
}

namespace detail {

inline bool track(const Tensor& t) { return tape_active() && t.requires_grad(); }

}  // namespace detail

// ---------------------------------------------------------------------------
// conv2d: NCHW input, OIKK weight, cross-correlation.
// Implemented as im2col + GEMM (Eigen).
// ---------------------------------------------------------------------------

namespace detail {

using MatCM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic>;
using MapRM = Eigen::Map<
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using CMapRM = Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic,
                                              Eigen::Dynamic, Eigen::RowMajor>>;

// columns = output pixels, rows = (in_channel, ky, kx)
inline void im2col(const float* src, int C, int H, int W, int K, int stride,
                   int pad, int OH, int OW, MatCM& col) {
  col.setZero(static_cast<Eigen::Index>(C) * K * K,
              static_cast<Eigen::Index>(OH) * OW);
  for (int c = 0; c < C; ++c) {
    const float* plane = src + static_cast<std::int64_t>(c) * H * W;
    for (int ky = 0; ky < K; ++ky) {
      for (int kx = 0; kx < K; ++kx) {
        Eigen::Index row = (static_cast<Eigen::Index>(c) * K + ky) * K + kx;
        for (int oy = 0; oy < OH; ++oy) {
          int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) continue;
          for (int ox = 0; ox < OW; ++ox) {
            int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= W) continue;
            col(row, static_cast<Eigen::Index>(oy) * OW + ox) =
                plane[static_cast<std::int64_t>(iy) * W + ix];
          }
        }
      }
    }
  }
}

inline void col2im_add(const MatCM& col, int C, int H, int W, int K, int stride,
                       int pad, int OH, int OW, float* dst) {
  for (int c = 0; c < C; ++c) {
    float* plane = dst + static_cast<std::int64_t>(c) * H * W;
    for (int ky = 0; ky < K; ++ky) {
      for (int kx = 0; kx < K; ++kx) {
        Eigen::Index row = (static_cast<Eigen::Index>(c) * K + ky) * K + kx;
        for (int oy = 0; oy < OH; ++oy) {
          int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) continue;
          for (int ox = 0; ox < OW; ++ox) {
            int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= W) continue;
            plane[static_cast<std::int64_t>(iy) * W + ix] +=
                col(row, static_cast<Eigen::Index>(oy) * OW + ox);
          }
        }
      }
    }
  }
}

}  // namespace detail

inline Tensor conv2d(const Tensor& input, const Tensor& weight,
                     const std::optional<Tensor>& bias, int stride, int pad) {
  require(input.ndim() == 4, "conv2d input must be NCHW");
  require(weight.ndim() == 4, "conv2d weight must be OIKK");
  const int N = input.dim(0), C = input.dim(1), H = input.dim(2),
            W = input.dim(3);
  const int O = weight.dim(0), I = weight.dim(1), KH = weight.dim(2),
            KW = weight.dim(3);
  require(KH == KW, "conv2d kernels must be square");
  require(I == C, "conv2d channel counts must agree");
  if (bias) require(bias->numel() == O, "conv2d bias must have O entries");
  const int K = KH;
  require(stride >= 1 && pad >= 0, "conv2d: bad stride/padding");
  require(H + 2 * pad >= K && W + 2 * pad >= K,
          "conv2d: kernel does not fit padded input");
  const int OH = (H + 2 * pad - K) / stride + 1;
  const int OW = (W + 2 * pad - K) / stride + 1;

  Tensor out({N, O, OH, OW});
  const Eigen::Index Kdim = static_cast<Eigen::Index>(C) * K * K;
  const Eigen::Index P = static_cast<Eigen::Index>(OH) * OW;
  detail::CMapRM Wm(weight.data(), O, Kdim);

  detail::MatCM col;
  for (int n = 0; n < N; ++n) {
    detail::im2col(input.data() + static_cast<std::int64_t>(n) * C * H * W, C,
                   H, W, K, stride, pad, OH, OW, col);
    detail::MapRM Ym(out.data() + static_cast<std::int64_t>(n) * O * OH * OW, O,
                     P);
    Ym.noalias() = Wm * col;
    if (bias) {
      for (int o = 0; o < O; ++o) Ym.row(o).array() += bias->data()[o];
    }
  }

  bool need_x = detail::track(input);
  bool need_w = detail::track(weight);
  bool need_b = bias && detail::track(*bias);
  if (need_x || need_w || need_b) {
    out.set_requires_grad(true);
    Tensor x = input, w = weight, y = out;
    std::optional<Tensor> b = bias;
    Tape::current()->record([=]() mutable {
      if (!y.has_grad()) return;
      detail::CMapRM Wm2(w.data(), O, Kdim);
      detail::MatCM col2, dcol;
      for (int n = 0; n < N; ++n) {
        detail::CMapRM dY(y.grad_vec().data() +
                              static_cast<std::int64_t>(n) * O * OH * OW,
                          O, P);
        if (need_w || need_x) {
          detail::im2col(x.data() + static_cast<std::int64_t>(n) * C * H * W, C,
                         H, W, K, stride, pad, OH, OW, col2);
        }
        if (need_w) {
          detail::MapRM dW(w.grad(), O, Kdim);
          dW.noalias() += dY * col2.transpose();
        }
        if (need_x) {
          dcol.noalias() = Wm2.transpose() * dY;
          detail::col2im_add(dcol, C, H, W, K, stride, pad, OH, OW,
                             x.grad() +
                                 static_cast<std::int64_t>(n) * C * H * W);
        }
        if (need_b) {
          float* db = b->grad();
          for (int o = 0; o < O; ++o) db[o] += dY.row(o).sum();
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// resample / pooling
// ---------------------------------------------------------------------------

enum class ResampleMode { Nearest, Bilinear, Lanczos };

namespace detail {

inline double lanczos3(double t) {
  if (t == 0.0) return 1.0;
  if (std::abs(t) >= 3.0) return 0.0;
  double pt = 3.14159265358979323846 * t;
  return 3.0 * std::sin(pt) * std::sin(pt / 3.0) / (pt * pt);
}

// Separable 1-D lanczos resampling weights for one output index.
struct Taps {
  int first;
  std::vector<double> w;
};

inline Taps lanczos_taps(int out_i, int in_size, double scale) {
  // scale = in/out; half-pixel centers; widened kernel when minifying
  double center = (out_i + 0.5) * scale - 0.5;
  double support = 3.0 * std::max(scale, 1.0);
  int lo = static_cast<int>(std::floor(center - support));
  int hi = static_cast<int>(std::ceil(center + support));
  Taps t;
  t.first = lo;
  double ksc = std::max(scale, 1.0);
  double sum = 0.0;
  for (int i = lo; i <= hi; ++i) {
    double w = lanczos3((i - center) / ksc);
    t.w.push_back(w);
    sum += w;
  }
  if (sum != 0.0)
    for (double& w : t.w) w /= sum;
  return t;
}

inline int clampi(int v, int lo, int hi) { return std::min(std::max(v, lo), hi); }

}  // namespace detail

// Resizes spatial dims of an NCHW tensor by num/den. Nearest and bilinear
// are differentiable; lanczos is forward-only (used inside fixed
// degradation operators).
inline Tensor resample(const Tensor& input, int num, int den,
                       ResampleMode mode) {
  require(input.ndim() == 4, "resample input must be NCHW");
  require(num > 0 && den > 0, "resample factor must be positive");
  const int N = input.dim(0), C = input.dim(1), H = input.dim(2),
            W = input.dim(3);
  require((static_cast<std::int64_t>(H) * num) % den == 0 &&
              (static_cast<std::int64_t>(W) * num) % den == 0,
          "resample output size must be integral");
  const int OH = static_cast<int>(static_cast<std::int64_t>(H) * num / den);
  const int OW = static_cast<int>(static_cast<std::int64_t>(W) * num / den);

  if (num == den) {
    // identity, but keep value semantics and the tape contract
    Tensor out = input.clone();
    if (detail::track(input)) {
      out.set_requires_grad(true);
      Tensor x = input, y = out;
      Tape::current()->record([=]() mutable {
      if (!y.has_grad()) return;
        const auto& gy = y.grad_vec();
        float* gx = x.grad();
        for (std::int64_t i = 0; i < x.numel(); ++i) gx[i] += gy[i];
      });
    }
    return out;
  }

  Tensor out({N, C, OH, OW});
  const double sy = static_cast<double>(H) / OH;
  const double sx = static_cast<double>(W) / OW;

  if (mode == ResampleMode::Nearest) {
    std::vector<int> iy(OH), ix(OW);
    for (int o = 0; o < OH; ++o)
      iy[o] = detail::clampi(static_cast<int>(std::floor((o + 0.5) * sy)), 0,
                             H - 1);
    for (int o = 0; o < OW; ++o)
      ix[o] = detail::clampi(static_cast<int>(std::floor((o + 0.5) * sx)), 0,
                             W - 1);
    for (int nc = 0; nc < N * C; ++nc) {
      const float* src = input.data() + static_cast<std::int64_t>(nc) * H * W;
      float* dst = out.data() + static_cast<std::int64_t>(nc) * OH * OW;
      for (int oy = 0; oy < OH; ++oy)
        for (int ox = 0; ox < OW; ++ox)
          dst[static_cast<std::int64_t>(oy) * OW + ox] =
              src[static_cast<std::int64_t>(iy[oy]) * W + ix[ox]];
    }
    if (detail::track(input)) {
      out.set_requires_grad(true);
      Tensor x = input, y = out;
      Tape::current()->record([=]() mutable {
      if (!y.has_grad()) return;
        const auto& gy = y.grad_vec();
        float* gx = x.grad();
        for (int nc = 0; nc < N * C; ++nc) {
          const float* g = gy.data() + static_cast<std::int64_t>(nc) * OH * OW;
          float* d = gx + static_cast<std::int64_t>(nc) * H * W;
          for (int oy = 0; oy < OH; ++oy)
            for (int ox = 0; ox < OW; ++ox)
              d[static_cast<std::int64_t>(iy[oy]) * W + ix[ox]] +=
                  g[static_cast<std::int64_t>(oy) * OW + ox];
        }
      });
    }
    return out;
  }

  if (mode == ResampleMode::Bilinear) {
    struct Lin {
      int i0, i1;
      float w0, w1;
    };
    auto make = [](int osz, int isz, double s) {
      std::vector<Lin> v(static_cast<std::size_t>(osz));
      for (int o = 0; o < osz; ++o) {
        double c = (o + 0.5) * s - 0.5;
        int i0 = static_cast<int>(std::floor(c));
        float f = static_cast<float>(c - i0);
        Lin l;
        l.i0 = detail::clampi(i0, 0, isz - 1);
        l.i1 = detail::clampi(i0 + 1, 0, isz - 1);
        l.w0 = 1.0f - f;
        l.w1 = f;
        v[static_cast<std::size_t>(o)] = l;
      }
      return v;
    };
    auto ly = make(OH, H, sy), lx = make(OW, W, sx);
    for (int nc = 0; nc < N * C; ++nc) {
      const float* src = input.data() + static_cast<std::int64_t>(nc) * H * W;
      float* dst = out.data() + static_cast<std::int64_t>(nc) * OH * OW;
      for (int oy = 0; oy < OH; ++oy) {
        const Lin& a = ly[static_cast<std::size_t>(oy)];
        for (int ox = 0; ox < OW; ++ox) {
          const Lin& b = lx[static_cast<std::size_t>(ox)];
          float v = a.w0 * (b.w0 * src[static_cast<std::int64_t>(a.i0) * W +
                                       b.i0] +
                            b.w1 * src[static_cast<std::int64_t>(a.i0) * W +
                                       b.i1]) +
                    a.w1 * (b.w0 * src[static_cast<std::int64_t>(a.i1) * W +
                                       b.i0] +
                            b.w1 * src[static_cast<std::int64_t>(a.i1) * W +
                                       b.i1]);
          dst[static_cast<std::int64_t>(oy) * OW + ox] = v;
        }
      }
    }
    if (detail::track(input)) {
      out.set_requires_grad(true);
      Tensor x = input, y = out;
      Tape::current()->record([=]() mutable {
      if (!y.has_grad()) return;
        const auto& gy = y.grad_vec();
        float* gx = x.grad();
        for (int nc = 0; nc < N * C; ++nc) {
          const float* g = gy.data() + static_cast<std::int64_t>(nc) * OH * OW;
          float* d = gx + static_cast<std::int64_t>(nc) * H * W;
          for (int oy = 0; oy < OH; ++oy) {
            const Lin& a = ly[static_cast<std::size_t>(oy)];
            for (int ox = 0; ox < OW; ++ox) {
              const Lin& b = lx[static_cast<std::size_t>(ox)];
              float gv = g[static_cast<std::int64_t>(oy) * OW + ox];
              d[static_cast<std::int64_t>(a.i0) * W + b.i0] += a.w0 * b.w0 * gv;
              d[static_cast<std::int64_t>(a.i0) * W + b.i1] += a.w0 * b.w1 * gv;
              d[static_cast<std::int64_t>(a.i1) * W + b.i0] += a.w1 * b.w0 * gv;
              d[static_cast<std::int64_t>(a.i1) * W + b.i1] += a.w1 * b.w1 * gv;
            }
          }
        }
      });
    }
    return out;
  }

  // Lanczos: used only inside fixed degradation operators.
  require(!detail::track(input), "lanczos resample is not differentiable");
  std::vector<detail::Taps> ty(static_cast<std::size_t>(OH)),
      tx(static_cast<std::size_t>(OW));
  for (int o = 0; o < OH; ++o)
    ty[static_cast<std::size_t>(o)] = detail::lanczos_taps(o, H, sy);
  for (int o = 0; o < OW; ++o)
    tx[static_cast<std::size_t>(o)] = detail::lanczos_taps(o, W, sx);
  std::vector<double> tmp(static_cast<std::size_t>(H) * OW);
  for (int nc = 0; nc < N * C; ++nc) {
    const float* src = input.data() + static_cast<std::int64_t>(nc) * H * W;
    float* dst = out.data() + static_cast<std::int64_t>(nc) * OH * OW;
    // horizontal pass
    for (int y = 0; y < H; ++y) {
      for (int ox = 0; ox < OW; ++ox) {
        const auto& t = tx[static_cast<std::size_t>(ox)];
        double acc = 0.0;
        for (std::size_t k = 0; k < t.w.size(); ++k) {
          int ix = detail::clampi(t.first + static_cast<int>(k), 0, W - 1);
          acc += t.w[k] * src[static_cast<std::int64_t>(y) * W + ix];
        }
        tmp[static_cast<std::size_t>(y) * OW + ox] = acc;
      }
    }
    // vertical pass
    for (int oy = 0; oy < OH; ++oy) {
      const auto& t = ty[static_cast<std::size_t>(oy)];
      for (int ox = 0; ox < OW; ++ox) {
        double acc = 0.0;
        for (std::size_t k = 0; k < t.w.size(); ++k) {
          int iy = detail::clampi(t.first + static_cast<int>(k), 0, H - 1);
          acc += t.w[k] * tmp[static_cast<std::size_t>(iy) * OW + ox];
        }
        dst[static_cast<std::int64_t>(oy) * OW + ox] =
            static_cast<float>(acc);
      }
    }
  }
  return out;
}

// Differentiable f×f average pooling (the SR loss surrogate).
inline Tensor avg_pool(const Tensor& input, int factor) {
  require(input.ndim() == 4, "avg_pool input must be NCHW");
  require(factor >= 1, "avg_pool factor must be >= 1");
  const int N = input.dim(0), C = input.dim(1), H = input.dim(2),
            W = input.dim(3);
  require(H % factor == 0 && W % factor == 0,
          "avg_pool requires divisible spatial dims");
  const int OH = H / factor, OW = W / factor;
  Tensor out({N, C, OH, OW});
  const float inv = 1.0f / static_cast<float>(factor * factor);
  for (int nc = 0; nc < N * C; ++nc) {
    const float* src = input.data() + static_cast<std::int64_t>(nc) * H * W;
    float* dst = out.data() + static_cast<std::int64_t>(nc) * OH * OW;
    for (int oy = 0; oy < OH; ++oy)
      for (int ox = 0; ox < OW; ++ox) {
        float acc = 0.0f;
        for (int dy = 0; dy < factor; ++dy)
          for (int dx = 0; dx < factor; ++dx)
            acc += src[static_cast<std::int64_t>(oy * factor + dy) * W +
                       ox * factor + dx];
        dst[static_cast<std::int64_t>(oy) * OW + ox] = acc * inv;
      }
  }
  if (detail::track(input)) {
    out.set_requires_grad(true);
    Tensor x = input, y = out;
    Tape::current()->record([=]() mutable {
      if (!y.has_grad()) return;
      const auto& gy = y.grad_vec();
      float* gx = x.grad();
      for (int nc = 0; nc < N * C; ++nc) {
        const float* g = gy.data() + static_cast<std::int64_t>(nc) * OH * OW;
        float* d = gx + static_cast<std::int64_t>(nc) * H * W;
        for (int oy = 0; oy < OH; ++oy)
          for (int ox = 0; ox < OW; ++ox) {
            float gv = g[static_cast<std::int64_t>(oy) * OW + ox] * inv;
            for (int dy = 0; dy < factor; ++dy)
              for (int dx = 0; dx < factor; ++dx)
                d[static_cast<std::int64_t>(oy * factor + dy) * W +
                  ox * factor + dx] += gv;
          }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// activations
// ---------------------------------------------------------------------------

enum class Activation { Relu, LeakyRelu, Sigmoid };

inline Tensor activation(const Tensor& input, Activation kind,
                         float slope = 0.2f) {
  Tensor out(input.shape());
  const float* src = input.data();
  float* dst = out.data();
  const std::int64_t n = input.numel();
  switch (kind) {
    case Activation::Relu:
      for (std::int64_t i = 0; i < n; ++i) dst[i] = src[i] > 0 ? src[i] : 0.0f;
      break;
    case Activation::LeakyRelu:
      for (std::int64_t i = 0; i < n; ++i)
        dst[i] = src[i] > 0 ? src[i] : slope * src[i];
      break;
    case Activation::Sigmoid:
      for (std::int64_t i = 0; i < n; ++i)
        dst[i] = 1.0f / (1.0f + std::exp(-src[i]));
      break;
  }
  if (detail::track(input)) {
    out.set_requires_grad(true);
    Tensor x = input, y = out;
    Tape::current()->record([=]() mutable {
      if (!y.has_grad()) return;
      const auto& gy = y.grad_vec();
      const float* xv = x.data();
      const float* yv = y.data();
      float* gx = x.grad();
      switch (kind) {
        case Activation::Relu:
          for (std::int64_t i = 0; i < n; ++i)
            gx[i] += xv[i] > 0 ? gy[i] : 0.0f;
          break;
        case Activation::LeakyRelu:
          for (std::int64_t i = 0; i < n; ++i)
            gx[i] += xv[i] > 0 ? gy[i] : slope * gy[i];
          break;
        case Activation::Sigmoid:
          for (std::int64_t i = 0; i < n; ++i)
            gx[i] += gy[i] * yv[i] * (1.0f - yv[i]);
          break;
      }
    });
  }
  return out;
}

inline Tensor relu(const Tensor& x) { return activation(x, Activation::Relu); }
inline Tensor leaky_relu(const Tensor& x, float slope = 0.2f) {
  return activation(x, Activation::LeakyRelu, slope);
}
inline Tensor sigmoid(const Tensor& x) {
  return activation(x, Activation::Sigmoid);
}

// ---------------------------------------------------------------------------
// normalization
// ---------------------------------------------------------------------------

enum class NormKind { BatchNorm, ChannelNorm };

constexpr float kNormEps = 1e-5f;

// Per-channel zero-mean unit-variance, then gamma*x + beta. BatchNorm
// reduces over (N,H,W); ChannelNorm over (H,W) per sample.
inline Tensor normalize(const Tensor& input, NormKind kind,
                        const Tensor& gamma, const Tensor& beta) {
  require(input.ndim() == 4, "normalize input must be NCHW");
  const int N = input.dim(0), C = input.dim(1), H = input.dim(2),
            W = input.dim(3);
  require(gamma.numel() == C && beta.numel() == C,
          "affine parameters must be sized to channel count");
  Tensor out(input.shape());

  const std::int64_t plane = static_cast<std::int64_t>(H) * W;
  const int groups = (kind == NormKind::BatchNorm) ? C : N * C;
  // For BatchNorm group g covers channel g across all samples.
  // Captured by value: the backward pullback outlives this frame.
  auto group_channel = [=](int g) {
    return (kind == NormKind::BatchNorm) ? g : g % C;
  };
  const std::int64_t gsize = (kind == NormKind::BatchNorm)
                                 ? static_cast<std::int64_t>(N) * plane
                                 : plane;

  std::vector<float> means(static_cast<std::size_t>(groups)),
      inv_stds(static_cast<std::size_t>(groups));

  auto for_group = [=](int g, auto&& fn) {
    if (kind == NormKind::BatchNorm) {
      for (int n = 0; n < N; ++n) {
        std::int64_t base = (static_cast<std::int64_t>(n) * C + g) * plane;
        for (std::int64_t i = 0; i < plane; ++i) fn(base + i);
      }
    } else {
      std::int64_t base = static_cast<std::int64_t>(g) * plane;
      for (std::int64_t i = 0; i < plane; ++i) fn(base + i);
    }
  };

  const float* src = input.data();
  float* dst = out.data();
  for (int g = 0; g < groups; ++g) {
    double sum = 0.0, sq = 0.0;
    for_group(g, [&](std::int64_t i) {
      sum += src[i];
      sq += static_cast<double>(src[i]) * src[i];
    });
    double mean = sum / static_cast<double>(gsize);
    double var = sq / static_cast<double>(gsize) - mean * mean;
    if (var < 0.0) var = 0.0;
    float m = static_cast<float>(mean);
    float inv_std = static_cast<float>(1.0 / std::sqrt(var + kNormEps));
    means[static_cast<std::size_t>(g)] = m;
    inv_stds[static_cast<std::size_t>(g)] = inv_std;
    int c = group_channel(g);
    float ga = gamma.data()[c], be = beta.data()[c];
    for_group(g, [&](std::int64_t i) {
      dst[i] = ga * ((src[i] - m) * inv_std) + be;
    });
  }

  bool need_x = detail::track(input);
  bool need_g = detail::track(gamma);
  bool need_b = detail::track(beta);
  if (need_x || need_g || need_b) {
    out.set_requires_grad(true);
    Tensor x = input, y = out, ga = gamma, be = beta;
    Tape::current()->record([=]() mutable {
      if (!y.has_grad()) return;
      const auto& gy = y.grad_vec();
      const float* xv = x.data();
      for (int g = 0; g < groups; ++g) {
        int c = group_channel(g);
        float m = means[static_cast<std::size_t>(g)];
        float is = inv_stds[static_cast<std::size_t>(g)];
        float gam = ga.data()[c];
        double sum_g = 0.0, sum_gy_ = 0.0;
        for_group(g, [&](std::int64_t i) {
          float yi = (xv[i] - m) * is;
          sum_g += gy[i];
          sum_gy_ += static_cast<double>(gy[i]) * yi;
        });
        if (need_g) ga.grad()[c] += static_cast<float>(sum_gy_);
        if (need_b) be.grad()[c] += static_cast<float>(sum_g);
        if (need_x) {
          float mg = static_cast<float>(sum_g / static_cast<double>(gsize));
          float mgy = static_cast<float>(sum_gy_ / static_cast<double>(gsize));
          float* gx = x.grad();
          for_group(g, [&](std::int64_t i) {
            float yi = (xv[i] - m) * is;
            gx[i] += gam * is * (gy[i] - mg - yi * mgy);
          });
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// concat along channels
// ---------------------------------------------------------------------------

inline Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require(a.ndim() == 4 && b.ndim() == 4, "concat inputs must be NCHW");
  require(a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3),
          "concat: non-channel dims must agree");
  const int N = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), H = a.dim(2),
            W = a.dim(3);
  const std::int64_t plane = static_cast<std::int64_t>(H) * W;
  Tensor out({N, Ca + Cb, H, W});
  for (int n = 0; n < N; ++n) {
    std::memcpy(out.data() + (static_cast<std::int64_t>(n) * (Ca + Cb)) * plane,
                a.data() + static_cast<std::int64_t>(n) * Ca * plane,
                sizeof(float) * static_cast<std::size_t>(Ca * plane));
    std::memcpy(out.data() +
                    (static_cast<std::int64_t>(n) * (Ca + Cb) + Ca) * plane,
                b.data() + static_cast<std::int64_t>(n) * Cb * plane,
                sizeof(float) * static_cast<std::size_t>(Cb * plane));
  }
  bool na = detail::track(a), nb = detail::track(b);
  if (na || nb) {
    out.set_requires_grad(true);
    Tensor ta = a, tb = b, y = out;
    Tape::current()->record([=]() mutable {
      if (!y.has_grad()) return;
      const auto& gy = y.grad_vec();
      for (int n = 0; n < N; ++n) {
        const float* g =
            gy.data() + static_cast<std::int64_t>(n) * (Ca + Cb) * plane;
        if (na) {
          float* d = ta.grad() + static_cast<std::int64_t>(n) * Ca * plane;
          for (std::int64_t i = 0; i < Ca * plane; ++i) d[i] += g[i];
        }
        if (nb) {
          float* d = tb.grad() + static_cast<std::int64_t>(n) * Cb * plane;
          for (std::int64_t i = 0; i < Cb * plane; ++i)
            d[i] += g[Ca * plane + i];
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// losses / reductions
// ---------------------------------------------------------------------------

// mean of weight*(a-b)^2 over weighted entries; differentiable in a and b.
inline Tensor mse(const Tensor& a, const Tensor& b,
                  const std::optional<Tensor>& weight = std::nullopt) {
  require(a.shape() == b.shape(), "mse shapes must be equal");
  const std::int64_t n = a.numel();
  double support = static_cast<double>(n);
  if (weight) {
    require(weight->shape() == a.shape(), "mse weight shape mismatch");
    double s = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      float w = weight->data()[i];
      require(w == 0.0f || w == 1.0f, "mse weight must be binary");
      s += w;
    }
    require(s > 0.0, "mse weight has empty support");
    support = s;
  }
  double acc = 0.0;
  const float* av = a.data();
  const float* bv = b.data();
  for (std::int64_t i = 0; i < n; ++i) {
    float d = av[i] - bv[i];
    float w = weight ? weight->data()[i] : 1.0f;
    acc += static_cast<double>(w) * d * d;
  }
  Tensor out = Tensor::scalar(static_cast<float>(acc / support));

  bool na = detail::track(a), nb = detail::track(b);
  if (na || nb) {
    out.set_requires_grad(true);
    Tensor ta = a, tb = b, y = out;
    std::optional<Tensor> w = weight;
    const float inv = static_cast<float>(1.0 / support);
    Tape::current()->record([=]() mutable {
      if (!y.has_grad()) return;
      float g = y.grad_vec()[0];
      const float* av2 = ta.data();
      const float* bv2 = tb.data();
      float* ga = na ? ta.grad() : nullptr;
      float* gb = nb ? tb.grad() : nullptr;
      for (std::int64_t i = 0; i < n; ++i) {
        float wv = w ? w->data()[i] : 1.0f;
        float d = 2.0f * wv * (av2[i] - bv2[i]) * inv * g;
        if (ga) ga[i] += d;
        if (gb) gb[i] -= d;
      }
    });
  }
  return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "add shapes must be equal");
  Tensor out(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i)
    out.data()[i] = a.data()[i] + b.data()[i];
  bool na = detail::track(a), nb = detail::track(b);
  if (na || nb) {
    out.set_requires_grad(true);
    Tensor ta = a, tb = b, y = out;
    Tape::current()->record([=]() mutable {
      if (!y.has_grad()) return;
      const auto& gy = y.grad_vec();
      if (na) {
        float* g = ta.grad();
        for (std::int64_t i = 0; i < ta.numel(); ++i) g[i] += gy[i];
      }
      if (nb) {
        float* g = tb.grad();
        for (std::int64_t i = 0; i < tb.numel(); ++i) g[i] += gy[i];
      }
    });
  }
  return out;
}

// sum of all entries; used by data-free pruning scores.
inline Tensor sum_all(const Tensor& a) {
  double acc = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) acc += a.data()[i];
  Tensor out = Tensor::scalar(static_cast<float>(acc));
  if (detail::track(a)) {
    out.set_requires_grad(true);
    Tensor ta = a, y = out;
    Tape::current()->record([=]() mutable {
      if (!y.has_grad()) return;
      float g = y.grad_vec()[0];
      float* ga = ta.grad();
      for (std::int64_t i = 0; i < ta.numel(); ++i) ga[i] += g;
    });
  }
  return out;
}

}  // namespace lip
