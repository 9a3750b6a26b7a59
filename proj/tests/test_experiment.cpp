#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"
#include "lip/experiment.hpp"
#include "test_helpers.hpp"

using namespace lip;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct TmpDir {
  fs::path path;
  TmpDir() : path(fs::temp_directory_path() / "lip_experiment_test") {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TmpDir() { fs::remove_all(path); }
  std::string sub(const std::string& name) const {
    return (path / name).string();
  }
};

std::string write_config(const TmpDir& tmp, const json& j,
                         const std::string& name = "config.json") {
  std::string p = tmp.sub(name);
  std::ofstream(p) << j.dump(2);
  return p;
}

// depth-2, width-8 hourglass; cheap enough for orchestration tests
json tiny_base(const TmpDir& tmp, const std::string& out) {
  return json{
      {"out", tmp.sub(out)},
      {"network", {{"depth", 2}, {"widths", json::array({8})},
                   {"skip_widths", json::array({4})}, {"code_channels", 8}}},
      {"dataset", {{"source", "builtin:synthetic"},
                   {"seed", 7},
                   {"images", json::array({"gradient"})}}},
      {"fit", {{"iterations", 4}, {"cadence", 2}, {"jitter", 0.0}}},
  };
}

std::size_t count_files(const std::string& dir, const std::string& suffix) {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(dir)) {
    std::string name = e.path().filename().string();
    if (name.size() >= suffix.size() &&
        name.substr(name.size() - suffix.size()) == suffix)
      ++n;
  }
  return n;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("fit run produces one curve row and artifacts per seed") {
  TmpDir tmp;
  json cfg = tiny_base(tmp, "fit_run");
  cfg["kind"] = "fit";
  cfg["seeds"] = {1, 2};
  RunManifest m = run(write_config(tmp, cfg));

  CHECK(!m.failed);
  REQUIRE(m.curves.size() == 2);
  CHECK(m.curves[0].seed == 1);
  CHECK(m.curves[1].seed == 2);
  CHECK(m.curves[0].method == "dense");
  CHECK(m.curves[0].sparsity == 0.0);
  CHECK(std::isfinite(m.curves[0].psnr_db));
  REQUIRE(m.artifacts.size() == 2);
  for (const auto& a : m.artifacts)
    for (const auto& p : a.paths) CHECK(fs::exists(p));
  CHECK(fs::exists(tmp.sub("fit_run") + "/manifest.json"));

  // dense-only run: header plus one row per seed
  std::string csv = read_text(tmp.sub("fit_run") + "/curves.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
  CHECK(csv.rfind("method,seed,round,sparsity,nonzero_params,psnr_db,ssim,loss",
                  0) == 0);
}

TEST_CASE("imp run writes a dense mask plus one mask per round") {
  TmpDir tmp;
  json cfg = tiny_base(tmp, "imp_run");
  cfg["kind"] = "imp";
  cfg["seeds"] = {1, 2, 3};
  cfg["fit"]["iterations"] = 1;
  cfg["fit"]["cadence"] = 1;
  cfg["imp"] = {{"target_sparsity", 0.83}};  // 8 rounds of 20%
  RunManifest m = run(write_config(tmp, cfg));

  CHECK(!m.failed);
  CHECK(count_files(tmp.sub("imp_run"), ".lipm") == 3 * 9);
  REQUIRE(m.curves.size() == 3 * 9);
  for (const auto& p : m.curves) {
    double nominal = sparsity_at_round(p.round);
    // count-based sparsity agrees with the schedule up to one weight of
    // flooring per pruning round
    CHECK(std::abs(p.sparsity - nominal) <= (p.round + 1.0) * 1e-3);
  }
}

TEST_CASE("report re-emits curves and profiles from a finished run") {
  TmpDir tmp;
  json cfg = tiny_base(tmp, "imp_small");
  cfg["kind"] = "imp";
  cfg["seeds"] = {5};
  cfg["fit"]["iterations"] = 1;
  cfg["imp"] = {{"target_sparsity", 0.488}};  // 3 rounds
  RunManifest m = run(write_config(tmp, cfg));
  REQUIRE(!m.failed);

  json rep = {{"kind", "report"},
              {"out", tmp.sub("report_out")},
              {"seeds", {1}},
              {"report", {{"source", tmp.sub("imp_small")}}}};
  RunManifest r = run(write_config(tmp, rep, "report.json"));
  std::string csv = read_text(tmp.sub("report_out") + "/curves.csv");
  REQUIRE(!csv.empty());
  for (const auto& p : r.curves)
    CHECK(std::abs(p.sparsity - sparsity_at_round(p.round)) <= (p.round + 1.0) * 1e-3);
  // every mask artifact gains a layer-profile CSV
  CHECK(count_files(tmp.sub("imp_small"), "_profile.csv") == 4);
  CHECK(fs::exists(tmp.sub("report_out") + "/summary.json"));
}

TEST_CASE("summary aggregates mean and variance across seeds") {
  CHECK(mean_var({30.0, 31.0}).mean == doctest::Approx(30.5));
  CHECK(mean_var({30.0, 31.0}).var == doctest::Approx(0.25));
  CHECK(mean_var({}).n == 0);

  TmpDir tmp;
  RunManifest m;
  m.kind = "fit";
  m.out_dir = tmp.sub("summary");
  CurvePoint a;
  a.method = "dense";
  a.seed = 1;
  a.psnr_db = 30.0;
  CurvePoint b = a;
  b.seed = 2;
  b.psnr_db = 31.0;
  m.curves = {a, b};
  fs::create_directories(m.out_dir);
  emit_report(m);
  json summary = json::parse(read_text(tmp.sub("summary") + "/summary.json"));
  REQUIRE(summary.size() == 1);
  CHECK(summary[0]["psnr_mean"].get<double>() == doctest::Approx(30.5));
  CHECK(summary[0]["psnr_var"].get<double>() == doctest::Approx(0.25));
}

TEST_CASE("config hash is stable and sensitive") {
  json a = {{"kind", "fit"}, {"seeds", {1, 2}}};
  json b = {{"seeds", {1, 2}}, {"kind", "fit"}};  // key order is canonical
  json c = {{"kind", "fit"}, {"seeds", {1, 3}}};
  CHECK(config_hash(a) == config_hash(b));
  CHECK(config_hash(a) != config_hash(c));
  CHECK(config_hash(a).size() == 16);
}

TEST_CASE("invalid configs raise errors naming the field") {
  TmpDir tmp;
  auto message_of = [&](const json& j) {
    try {
      run(write_config(tmp, j, "bad.json"));
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  json base = tiny_base(tmp, "never");
  base["seeds"] = {1};

  json bad_kind = base;
  bad_kind["kind"] = "frobnicate";
  CHECK(message_of(bad_kind).find("kind") != std::string::npos);

  json no_seeds = base;
  no_seeds["kind"] = "fit";
  no_seeds.erase("seeds");
  CHECK(message_of(no_seeds).find("seeds") != std::string::npos);

  json bad_sigma = base;
  bad_sigma["kind"] = "fit";
  bad_sigma["task"] = {{"kind", "denoise"}, {"sigma", "loud"}};
  CHECK(message_of(bad_sigma).find("task.sigma") != std::string::npos);

  json bad_method = base;
  bad_method["kind"] = "baseline-prune";
  bad_method["prune"] = {{"method", "psychic"}};
  CHECK(message_of(bad_method).find("prune.method") != std::string::npos);

  std::string not_json = tmp.sub("plain.txt");
  std::ofstream(not_json) << "kind: fit";
  CHECK_THROWS_AS(run(not_json), ConfigError);
}

TEST_CASE("ingest crops odd sizes down to the required multiple") {
  TmpDir tmp;
  std::string dir = tmp.sub("pngs");
  fs::create_directories(dir);
  Tensor odd({1, 3, 65, 65});
  RngStream rng(1, "odd");
  for (std::int64_t i = 0; i < odd.numel(); ++i)
    odd.data()[i] = rng.uniform01();
  save_image(odd, dir + "/odd.png");

  auto set = ingest_dataset(dir, 16);
  REQUIRE(set.size() == 1);
  CHECK(set[0].image.dim(2) == 64);
  CHECK(set[0].image.dim(3) == 64);
}

TEST_CASE("empty dataset directory is a typed error") {
  TmpDir tmp;
  std::string dir = tmp.sub("empty");
  fs::create_directories(dir);
  CHECK_THROWS_AS(ingest_dataset(dir, 16), IoError);
}

TEST_CASE("worker count does not change the results") {
  TmpDir tmp;
  json cfg = tiny_base(tmp, "jobs1");
  cfg["kind"] = "fit";
  cfg["seeds"] = {3, 4};
  RunManifest one = run(write_config(tmp, cfg, "jobs1.json"));

  cfg["out"] = tmp.sub("jobs2");
  cfg["jobs"] = 2;
  RunManifest two = run(write_config(tmp, cfg, "jobs2.json"));

  REQUIRE(one.curves.size() == two.curves.size());
  for (std::size_t i = 0; i < one.curves.size(); ++i) {
    CHECK(one.curves[i].seed == two.curves[i].seed);
    CHECK(one.curves[i].loss == two.curves[i].loss);
    CHECK(one.curves[i].psnr_db == two.curves[i].psnr_db);
  }
}

TEST_CASE("a mid-run failure is recorded as a failed partial manifest") {
  TmpDir tmp;
  // mask from a mismatched architecture cannot be applied at run time
  auto other = build_deep_decoder(4, 2, 1);
  std::string mask_path = tmp.sub("wrong.lipm");
  save_mask(make_dense_mask(other.params), mask_path);
  std::string w_path = tmp.sub("wrong.lipw");
  save_checkpoint(other.params, w_path);

  json cfg = tiny_base(tmp, "fail_run");
  cfg["kind"] = "eval-ticket";
  cfg["seeds"] = {1};
  cfg["ticket"] = {{"mask", mask_path}, {"weights", w_path}};
  RunManifest m = run(write_config(tmp, cfg));
  CHECK(m.failed);
  CHECK(!m.error.empty());
  CHECK(fs::exists(tmp.sub("fail_run") + "/manifest.json"));
  RunManifest back = load_manifest(tmp.sub("fail_run"));
  CHECK(back.failed);
}

TEST_CASE("manifest round-trips through JSON") {
  TmpDir tmp;
  RunManifest m;
  m.config_hash = "deadbeefdeadbeef";
  m.kind = "fit";
  m.out_dir = tmp.sub("rt");
  m.artifacts.push_back({9, {"a.png", "b.lipm"}});
  CurvePoint p;
  p.method = "lip";
  p.seed = 9;
  p.image = "gradient";
  p.round = 3;
  p.sparsity = 0.488;
  p.nonzero = 1234;
  p.psnr_db = 28.25;
  p.ssim_val = 0.91;
  p.loss = 0.004;
  m.curves.push_back(p);
  fs::create_directories(m.out_dir);
  save_manifest(m);
  RunManifest back = load_manifest(m.out_dir);
  CHECK(back.config_hash == m.config_hash);
  REQUIRE(back.curves.size() == 1);
  CHECK(back.curves[0].sparsity == m.curves[0].sparsity);
  CHECK(back.curves[0].nonzero == 1234);
  CHECK(back.artifacts[0].paths == m.artifacts[0].paths);
}
