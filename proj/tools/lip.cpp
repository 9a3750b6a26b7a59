// Copyright 2026 The lip-prior Authors
// Licensed under the Apache License, Version 2.0.
//
// Batch front end: every subcommand reads a JSON experiment config and
// writes a manifest plus report bundle into the output directory.

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lip/experiment.hpp"

namespace {

struct Overrides {
  std::string config_path;
  std::string seed_list;
  int jobs = 0;
  std::string out_dir;
  std::string method;
};

std::vector<std::uint64_t> parse_seed_list(const std::string& s) {
  std::vector<std::uint64_t> seeds;
  std::size_t pos = 0;
  while (pos < s.size()) {
    std::size_t comma = s.find(',', pos);
    if (comma == std::string::npos) comma = s.size();
    try {
      seeds.push_back(std::stoull(s.substr(pos, comma - pos)));
    } catch (const std::exception&) {
      throw lip::ConfigError("--seed: expected N[,N...], got '" + s + "'");
    }
    pos = comma + 1;
  }
  return seeds;
}

int run_kind(const std::string& kind, const Overrides& ov) {
  auto bytes = lip::detail::read_file(ov.config_path);
  nlohmann::json j =
      nlohmann::json::parse(bytes.begin(), bytes.end(), nullptr, false);
  if (j.is_discarded())
    throw lip::ConfigError("config is not valid JSON: " + ov.config_path);
  // command-line overrides are folded into the config before hashing so
  // that the manifest hash always describes the effective run
  j["kind"] = kind;
  if (!ov.seed_list.empty()) j["seeds"] = parse_seed_list(ov.seed_list);
  if (ov.jobs > 0) j["jobs"] = ov.jobs;
  if (!ov.out_dir.empty()) j["out"] = ov.out_dir;
  if (!ov.method.empty()) {
    if (!j.contains("prune")) j["prune"] = nlohmann::json::object();
    j["prune"]["method"] = ov.method;
  }

  lip::RunManifest m = lip::run(lip::parse_config(j), j);
  std::printf("%s: %s (%zu curve points, %.1fs) -> %s\n", kind.c_str(),
              m.failed ? "FAILED" : "ok", m.curves.size(), m.wall_seconds,
              m.out_dir.c_str());
  if (m.failed) {
    std::printf("error: %s\n", m.error.c_str());
    return 1;
  }
  return 0;
}

int run_fft_diff(const std::string& a_path, const std::string& b_path,
                 const std::string& out_dir) {
  namespace fs = std::filesystem;
  lip::Tensor a = lip::load_image(a_path);
  lip::Tensor b = lip::load_image(b_path);
  lip::require(a.shape() == b.shape(), "fft-diff inputs must share dimensions");
  lip::FftDiff diff = lip::fft_magnitude_diff(a, b);
  fs::create_directories(out_dir);

  float lo = diff.map.data()[0], hi = lo;
  for (std::int64_t i = 0; i < diff.map.numel(); ++i) {
    lo = std::min(lo, diff.map.data()[i]);
    hi = std::max(hi, diff.map.data()[i]);
  }
  const float span = hi > lo ? hi - lo : 1.0f;
  lip::Tensor vis(diff.map.shape());
  for (std::int64_t i = 0; i < diff.map.numel(); ++i)
    vis.data()[i] = (diff.map.data()[i] - lo) / span;
  lip::save_image(vis, (fs::path(out_dir) / "fft_diff.png").string());

  std::string csv = "band_low,band_high,energy_a,energy_b,energy_diff\n";
  for (const auto& band : diff.bands)
    csv += lip::detail::fmt(band.band_low) + "," +
           lip::detail::fmt(band.band_high) + "," +
           lip::detail::fmt(band.energy_a) + "," +
           lip::detail::fmt(band.energy_b) + "," +
           lip::detail::fmt(band.energy_diff) + "\n";
  lip::detail::atomic_write_text(
      (fs::path(out_dir) / "fft_bands.csv").string(), csv);
  std::printf("fft-diff: ok -> %s\n", out_dir.c_str());
  return 0;
}

void add_common(CLI::App* cmd, Overrides& ov, bool need_config = true) {
  cmd->add_option("--config", ov.config_path, "experiment config (JSON)")
      ->required(need_config);
  cmd->add_option("--seed", ov.seed_list, "override seeds, N[,N...]");
  cmd->add_option("--jobs", ov.jobs, "worker pool size");
  cmd->add_option("--out", ov.out_dir, "override output directory");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lottery image prior toolkit"};
  app.require_subcommand(1);
  Overrides ov;

  const std::vector<std::string> kinds = {"fit",         "imp",
                                          "imp-multi",   "eval-ticket",
                                          "four-targets", "report"};
  for (const auto& k : kinds)
    add_common(app.add_subcommand(k, "run a '" + k + "' experiment"), ov);

  CLI::App* prune = app.add_subcommand("prune", "one-shot pruning baselines");
  add_common(prune, ov);
  prune->add_option("--method", ov.method, "random | profile | snip | synflow");

  std::string fft_a, fft_b, fft_out = ".";
  CLI::App* fft = app.add_subcommand("fft-diff",
                                     "spectral difference of two images");
  fft->add_option("a", fft_a, "first PNG")->required();
  fft->add_option("b", fft_b, "second PNG")->required();
  fft->add_option("--out", fft_out, "output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    CLI::App* sub = app.get_subcommands().front();
    if (sub->get_name() == "fft-diff")
      return run_fft_diff(fft_a, fft_b, fft_out);
    if (sub->get_name() == "prune") return run_kind("baseline-prune", ov);
    return run_kind(sub->get_name(), ov);
  } catch (const lip::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
