// Copyright 2026 The lip-prior Authors
// Licensed under the Apache License, Version 2.0.

#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "lip/common.hpp"
#include "lip/mask.hpp"
#include "lip/priors.hpp"

namespace lip {

constexpr std::uint32_t kFormatVersion = 1;

namespace detail {

inline void put_u16(std::vector<std::uint8_t>& b, std::uint16_t v) {
  b.push_back(static_cast<std::uint8_t>(v & 0xff));
  b.push_back(static_cast<std::uint8_t>(v >> 8));
}
inline void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i)
    b.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}
inline void put_f32(std::vector<std::uint8_t>& b, float f) {
  std::uint32_t v;
  std::memcpy(&v, &f, 4);
  put_u32(b, v);
}

class Reader {
 public:
  Reader(const std::uint8_t* p, std::size_t n) : p_(p), n_(n) {}
  std::uint8_t u8() {
    need(1);
    return p_[pos_++];
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint16_t>(p_[pos_] | (p_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(p_[pos_ + static_cast<std::size_t>(i)])
           << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32() {
    std::uint32_t v = u32();
    float f;
    std::memcpy(&f, &v, 4);
    return f;
  }
  std::string str(std::size_t len) {
    need(len);
    std::string s(reinterpret_cast<const char*>(p_ + pos_), len);
    pos_ += len;
    return s;
  }
  const std::uint8_t* bytes(std::size_t len) {
    need(len);
    const std::uint8_t* r = p_ + pos_;
    pos_ += len;
    return r;
  }
  std::size_t remaining() const { return n_ - pos_; }

 private:
  void need(std::size_t k) const {
    if (pos_ + k > n_) throw IoError("truncated file");
  }
  const std::uint8_t* p_;
  std::size_t n_;
  std::size_t pos_ = 0;
};

// write-temp-then-rename
inline void atomic_write(const std::string& path,
                         const std::vector<std::uint8_t>& bytes) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + tmp);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("rename failed: " + path + ": " + ec.message());
}

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return bytes;
}

inline void append_crc(std::vector<std::uint8_t>& bytes) {
  std::uint32_t crc = static_cast<std::uint32_t>(
      ::crc32(0L, bytes.data(), static_cast<uInt>(bytes.size())));
  put_u32(bytes, crc);
}

inline Reader checked_reader(const std::vector<std::uint8_t>& bytes,
                             const char* magic) {
  if (bytes.size() < 12) throw IoError("file too short");
  std::uint32_t stored = 0;
  for (int i = 0; i < 4; ++i)
    stored |= static_cast<std::uint32_t>(bytes[bytes.size() - 4 +
                                               static_cast<std::size_t>(i)])
              << (8 * i);
  std::uint32_t crc = static_cast<std::uint32_t>(
      ::crc32(0L, bytes.data(), static_cast<uInt>(bytes.size() - 4)));
  if (crc != stored) throw IoError("CRC mismatch");
  Reader r(bytes.data(), bytes.size() - 4);
  if (r.str(4) != magic) throw IoError("bad magic");
  std::uint32_t version = r.u32();
  if (version != kFormatVersion) throw IoError("unsupported version");
  return r;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// mask file: "LIPM"
// ---------------------------------------------------------------------------

inline void save_mask(const Mask& mask, const std::string& path) {
  std::vector<std::uint8_t> b;
  b.insert(b.end(), {'L', 'I', 'P', 'M'});
  detail::put_u32(b, kFormatVersion);
  detail::put_u32(b, static_cast<std::uint32_t>(mask.layers.size()));
  for (const auto& l : mask.layers) {
    require(l.name.size() <= 0xffff, "layer name too long");
    require(l.dims.size() <= 0xff, "rank too large");
    detail::put_u16(b, static_cast<std::uint16_t>(l.name.size()));
    b.insert(b.end(), l.name.begin(), l.name.end());
    b.push_back(static_cast<std::uint8_t>(l.dims.size()));
    for (int d : l.dims) detail::put_u32(b, static_cast<std::uint32_t>(d));
    // bit-packed, row-major, MSB-first, zero-padded to a whole byte
    std::uint8_t acc = 0;
    int nbits = 0;
    for (std::size_t i = 0; i < l.keep.size(); ++i) {
      acc = static_cast<std::uint8_t>((acc << 1) | (l.keep[i] ? 1 : 0));
      if (++nbits == 8) {
        b.push_back(acc);
        acc = 0;
        nbits = 0;
      }
    }
    if (nbits > 0) b.push_back(static_cast<std::uint8_t>(acc << (8 - nbits)));
  }
  detail::append_crc(b);
  detail::atomic_write(path, b);
}

inline Mask load_mask(const std::string& path) {
  auto bytes = detail::read_file(path);
  detail::Reader r = detail::checked_reader(bytes, "LIPM");
  std::uint32_t n_layers = r.u32();
  Mask mask;
  for (std::uint32_t li = 0; li < n_layers; ++li) {
    MaskLayer l;
    l.name = r.str(r.u16());
    std::uint8_t rank = r.u8();
    std::int64_t total = 1;
    for (int d = 0; d < rank; ++d) {
      std::uint32_t dim = r.u32();
      if (dim == 0) throw IoError("zero dimension in mask file");
      l.dims.push_back(static_cast<int>(dim));
      total *= dim;
    }
    std::size_t nbytes = static_cast<std::size_t>((total + 7) / 8);
    const std::uint8_t* packed = r.bytes(nbytes);
    l.keep.resize(static_cast<std::size_t>(total));
    for (std::int64_t i = 0; i < total; ++i)
      l.keep[static_cast<std::size_t>(i)] =
          (packed[i / 8] >> (7 - (i % 8))) & 1;
    mask.layers.push_back(std::move(l));
  }
  return mask;
}

// ---------------------------------------------------------------------------
// checkpoint file: "LIPW"
// ---------------------------------------------------------------------------

struct CheckpointLayer {
  std::string name;
  std::vector<int> dims;
  std::vector<float> values;
};

inline void save_checkpoint(const std::vector<CheckpointLayer>& layers,
                            const std::string& path) {
  std::vector<std::uint8_t> b;
  b.insert(b.end(), {'L', 'I', 'P', 'W'});
  detail::put_u32(b, kFormatVersion);
  detail::put_u32(b, static_cast<std::uint32_t>(layers.size()));
  for (const auto& l : layers) {
    require(l.name.size() <= 0xffff, "layer name too long");
    detail::put_u16(b, static_cast<std::uint16_t>(l.name.size()));
    b.insert(b.end(), l.name.begin(), l.name.end());
    b.push_back(static_cast<std::uint8_t>(l.dims.size()));
    std::int64_t total = 1;
    for (int d : l.dims) {
      detail::put_u32(b, static_cast<std::uint32_t>(d));
      total *= d;
    }
    require(total == static_cast<std::int64_t>(l.values.size()),
            "checkpoint layer size mismatch");
    for (float f : l.values) detail::put_f32(b, f);
  }
  detail::append_crc(b);
  detail::atomic_write(path, b);
}

inline void save_checkpoint(const ParamSet& params, const std::string& path) {
  std::vector<CheckpointLayer> layers;
  for (const auto& p : params.params)
    layers.push_back({p.name, p.value.shape(),
                      std::vector<float>(p.value.vec().begin(),
                                         p.value.vec().end())});
  save_checkpoint(layers, path);
}

inline std::vector<CheckpointLayer> load_checkpoint(const std::string& path) {
  auto bytes = detail::read_file(path);
  detail::Reader r = detail::checked_reader(bytes, "LIPW");
  std::uint32_t n_layers = r.u32();
  std::vector<CheckpointLayer> layers;
  for (std::uint32_t li = 0; li < n_layers; ++li) {
    CheckpointLayer l;
    l.name = r.str(r.u16());
    std::uint8_t rank = r.u8();
    std::int64_t total = 1;
    for (int d = 0; d < rank; ++d) {
      std::uint32_t dim = r.u32();
      if (dim == 0) throw IoError("zero dimension in checkpoint file");
      l.dims.push_back(static_cast<int>(dim));
      total *= dim;
    }
    l.values.resize(static_cast<std::size_t>(total));
    for (std::int64_t i = 0; i < total; ++i)
      l.values[static_cast<std::size_t>(i)] = r.f32();
    layers.push_back(std::move(l));
  }
  return layers;
}

inline void load_checkpoint_into(ParamSet& params, const std::string& path) {
  auto layers = load_checkpoint(path);
  require(layers.size() == params.params.size(),
          "checkpoint layer count mismatch");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    Param& p = params.params[i];
    require(layers[i].name == p.name, "checkpoint layer name mismatch");
    require(layers[i].dims == p.value.shape(),
            "checkpoint layer shape mismatch");
    p.value.vec().assign(layers[i].values.begin(), layers[i].values.end());
  }
}

inline ParamValues checkpoint_to_values(
    const std::vector<CheckpointLayer>& layers) {
  ParamValues v;
  for (const auto& l : layers)
    v.emplace_back(l.name, FloatVec(l.values.begin(), l.values.end()));
  return v;
}

}  // namespace lip
