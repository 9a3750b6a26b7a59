#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "lip/serialize.hpp"
#include "test_helpers.hpp"

using namespace lip;
namespace fs = std::filesystem;

namespace {

struct TmpDir {
  fs::path path;
  TmpDir() : path(fs::temp_directory_path() / "lip_serialize_test") {
    fs::create_directories(path);
  }
  ~TmpDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const {
    return (path / name).string();
  }
};

Mask random_mask(std::uint64_t seed) {
  RngStream rng(seed, "mask");
  Mask m;
  std::vector<std::vector<int>> shapes = {{4, 3, 3, 3}, {10}, {1, 1, 7, 7}};
  int li = 0;
  for (const auto& dims : shapes) {
    MaskLayer l;
    l.name = "layer" + std::to_string(li++);
    l.dims = dims;
    std::int64_t n = 1;
    for (int d : dims) n *= d;
    l.keep.resize(static_cast<std::size_t>(n));
    for (auto& k : l.keep) k = rng.uniform01() < 0.6f ? 1 : 0;
    m.layers.push_back(std::move(l));
  }
  return m;
}

}  // namespace

TEST_CASE("mask round trip is bit identical") {
  TmpDir tmp;
  for (std::uint64_t seed : {1, 2, 3, 4, 5}) {
    Mask m = random_mask(seed);
    std::string path = tmp.file("m" + std::to_string(seed) + ".lipm");
    save_mask(m, path);
    Mask back = load_mask(path);
    CHECK(back == m);
  }
}

TEST_CASE("mask file packs 10 weights into 2 bitmap bytes") {
  TmpDir tmp;
  Mask m;
  MaskLayer l;
  l.name = "w";
  l.dims = {10};
  l.keep = {1, 0, 1, 1, 0, 0, 1, 0, 1, 1};
  m.layers.push_back(l);
  std::string path = tmp.file("bitpack.lipm");
  save_mask(m, path);
  // magic 4 + version 4 + count 4 + (name_len 2 + name 1 + rank 1 + dim 4
  // + bitmap 2) + crc 4
  CHECK(fs::file_size(path) == 4u + 4 + 4 + 2 + 1 + 1 + 4 + 2 + 4);
  // MSB-first: 10110010 -> 0xb2, then 11 padded -> 0xc0
  auto bytes = detail::read_file(path);
  CHECK(bytes[bytes.size() - 4 - 2] == 0xb2);
  CHECK(bytes[bytes.size() - 4 - 1] == 0xc0);
  CHECK(load_mask(path) == m);
}

TEST_CASE("checkpoint round trip restores exact parameter values") {
  TmpDir tmp;
  auto net = build_deep_decoder(6, 2, 9);
  ParamValues theta = snapshot_params(net.params);
  std::string path = tmp.file("weights.lipw");
  save_checkpoint(net.params, path);

  auto other = build_deep_decoder(6, 2, 10);
  CHECK(snapshot_params(other.params) != theta);
  load_checkpoint_into(other.params, path);
  CHECK(snapshot_params(other.params) == theta);
}

TEST_CASE("checkpoint layers survive as named, shaped tensors") {
  TmpDir tmp;
  std::vector<CheckpointLayer> layers;
  layers.push_back({"alpha", {2, 3}, {1, 2, 3, 4, 5, 6}});
  layers.push_back({"beta", {1}, {-0.5f}});
  std::string path = tmp.file("layers.lipw");
  save_checkpoint(layers, path);
  auto back = load_checkpoint(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].name == "alpha");
  CHECK(back[0].dims == std::vector<int>{2, 3});
  CHECK(back[0].values == layers[0].values);
  CHECK(back[1].values[0] == -0.5f);

  ParamValues v = checkpoint_to_values(back);
  CHECK(v[0].first == "alpha");
  CHECK(v[0].second.size() == 6);
}

TEST_CASE("truncated files raise a typed IO error") {
  TmpDir tmp;
  Mask m = random_mask(7);
  std::string path = tmp.file("trunc.lipm");
  save_mask(m, path);
  auto bytes = detail::read_file(path);
  for (std::size_t cut : {0u, 4u, 11u, static_cast<unsigned>(bytes.size() - 1)}) {
    std::string cut_path = tmp.file("cut.lipm");
    std::ofstream out(cut_path, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(cut));
    out.close();
    CHECK_THROWS_AS(load_mask(cut_path), IoError);
  }
}

TEST_CASE("corruption anywhere fails the checksum") {
  TmpDir tmp;
  auto net = build_deep_decoder(4, 1, 2);
  std::string path = tmp.file("good.lipw");
  save_checkpoint(net.params, path);
  auto bytes = detail::read_file(path);
  for (std::size_t pos : {5u, 20u, static_cast<unsigned>(bytes.size() / 2),
                          static_cast<unsigned>(bytes.size() - 2)}) {
    auto bad = bytes;
    bad[pos] ^= 0x40;
    std::string bad_path = tmp.file("bad.lipw");
    std::ofstream out(bad_path, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bad.data()),
              static_cast<std::streamsize>(bad.size()));
    out.close();
    CHECK_THROWS_AS(load_checkpoint(bad_path), IoError);
  }
}

TEST_CASE("a failed load leaves the parameters untouched") {
  TmpDir tmp;
  auto net = build_deep_decoder(4, 1, 2);
  std::string path = tmp.file("victim.lipw");
  save_checkpoint(net.params, path);
  auto bytes = detail::read_file(path);
  bytes[bytes.size() / 2] ^= 0xff;
  std::ofstream(path, std::ios::binary | std::ios::trunc)
      .write(reinterpret_cast<const char*>(bytes.data()),
             static_cast<std::streamsize>(bytes.size()));

  auto target = build_deep_decoder(4, 1, 3);
  ParamValues before = snapshot_params(target.params);
  CHECK_THROWS_AS(load_checkpoint_into(target.params, path), IoError);
  CHECK(snapshot_params(target.params) == before);
}

TEST_CASE("wrong magic is rejected before anything else") {
  TmpDir tmp;
  Mask m = random_mask(1);
  std::string path = tmp.file("asmask.lipm");
  save_mask(m, path);
  CHECK_THROWS_AS(load_checkpoint(path), IoError);  // LIPM loaded as LIPW
}

TEST_CASE("writes are atomic: no temp file remains") {
  TmpDir tmp;
  Mask m = random_mask(3);
  std::string path = tmp.file("atomic.lipm");
  save_mask(m, path);
  CHECK(fs::exists(path));
  CHECK(!fs::exists(path + ".tmp"));
}
