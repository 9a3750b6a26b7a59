// Copyright 2026 The lip-prior Authors
// Licensed under the Apache License, Version 2.0.

#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "lip/common.hpp"
#include "lip/data.hpp"
#include "lip/lottery.hpp"
#include "lip/serialize.hpp"

namespace lip {

constexpr const char* kCodeVersion = "0.1.0";

// ---------------------------------------------------------------------------
// configuration schema
// ---------------------------------------------------------------------------

struct DatasetSpec {
  std::string source = "builtin:synthetic";
  std::uint64_t seed = 7;
  std::vector<std::string> images;  // empty = all
};

struct PruneSpec {
  std::string method = "random";  // random | profile | snip | synflow
  double sparsity = 0.79;
  std::vector<double> profile;  // per-layer sparsities, method "profile"
};

struct TicketSpec {
  std::string mask_path;
  std::string weights_path;
};

struct ExperimentConfig {
  std::string kind;  // fit | imp | imp-multi | eval-ticket | baseline-prune
                     // | report | four-targets
  std::string out_dir;
  std::vector<std::uint64_t> seeds;
  int jobs = 1;
  DatasetSpec dataset;
  NetworkSpec network = desk_hourglass_spec();
  Degradation task = Degradation::denoise(25.0f / 255.0f);
  bool text_mask = false;  // inpainting uses the text-overlay mask
  FitConfig fit;
  ImpConfig imp;
  PruneSpec prune;
  TicketSpec ticket;
  std::string report_source;

  void validate() const {
    static const std::vector<std::string> kinds = {
        "fit",           "imp",    "imp-multi",   "eval-ticket",
        "baseline-prune", "report", "four-targets"};
    bool ok = false;
    for (const auto& k : kinds) ok = ok || k == kind;
    if (!ok) throw ConfigError("kind: unknown experiment kind '" + kind + "'");
    if (out_dir.empty()) throw ConfigError("out: output directory is required");
    if (seeds.empty()) throw ConfigError("seeds: must be non-empty");
    if (jobs < 1) throw ConfigError("jobs: must be >= 1");
    network.validate();
    task.validate();
    fit.validate();
    imp.validate();
    namespace fs = std::filesystem;
    if (dataset.source != "builtin:synthetic" &&
        !fs::is_directory(dataset.source))
      throw ConfigError("dataset.source: directory does not exist: " +
                        dataset.source);
    if (kind == "eval-ticket") {
      if (!fs::is_regular_file(ticket.mask_path))
        throw ConfigError("ticket.mask: file does not exist: " +
                          ticket.mask_path);
      if (!fs::is_regular_file(ticket.weights_path))
        throw ConfigError("ticket.weights: file does not exist: " +
                          ticket.weights_path);
    }
    if (kind == "report" && !fs::is_directory(report_source))
      throw ConfigError("report.source: directory does not exist: " +
                        report_source);
    if ((kind == "imp" || kind == "imp-multi" || kind == "four-targets") &&
        network.kind != Arch::Hourglass)
      throw ConfigError("network.arch: kind '" + kind +
                        "' requires an hourglass network");
    if (kind == "baseline-prune") {
      if (prune.method != "random" && prune.method != "profile" &&
          prune.method != "snip" && prune.method != "synflow")
        throw ConfigError("prune.method: unknown method '" + prune.method +
                          "'");
      if (prune.method == "profile" && prune.profile.empty())
        throw ConfigError("prune.profile: required for method 'profile'");
      if (prune.sparsity < 0.0 || prune.sparsity >= 1.0)
        throw ConfigError("prune.sparsity: must lie in [0,1)");
    }
  }
};

namespace detail {

using nlohmann::json;

// Typed field access with the dotted path in every error message.
inline const json* maybe(const json& j, const std::string& key) {
  auto it = j.find(key);
  return it == j.end() ? nullptr : &*it;
}

inline std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

inline double num_field(const json& j, const std::string& path,
                        const std::string& key, double def) {
  const json* f = maybe(j, key);
  if (!f) return def;
  if (!f->is_number())
    throw ConfigError(join(path, key) + ": expected a number");
  return f->get<double>();
}

inline bool bool_field(const json& j, const std::string& path,
                       const std::string& key, bool def) {
  const json* f = maybe(j, key);
  if (!f) return def;
  if (!f->is_boolean())
    throw ConfigError(join(path, key) + ": expected a boolean");
  return f->get<bool>();
}

inline std::string str_field(const json& j, const std::string& path,
                             const std::string& key, const std::string& def) {
  const json* f = maybe(j, key);
  if (!f) return def;
  if (!f->is_string())
    throw ConfigError(join(path, key) + ": expected a string");
  return f->get<std::string>();
}

template <typename T>
std::vector<T> list_field(const json& j, const std::string& path,
                          const std::string& key, std::vector<T> def) {
  const json* f = maybe(j, key);
  if (!f) return def;
  if (!f->is_array())
    throw ConfigError(join(path, key) + ": expected an array");
  std::vector<T> out;
  for (const auto& e : *f) {
    if (!e.is_number())
      throw ConfigError(join(path, key) + ": expected numeric entries");
    out.push_back(e.get<T>());
  }
  return out;
}

inline void check_object(const json& j, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path + ": expected an object");
}

}  // namespace detail

inline ExperimentConfig parse_config(const nlohmann::json& j) {
  using namespace detail;
  check_object(j, "config");
  ExperimentConfig c;
  c.kind = str_field(j, "", "kind", "");
  c.out_dir = str_field(j, "", "out", "");
  c.seeds = list_field<std::uint64_t>(j, "", "seeds", {});
  c.jobs = static_cast<int>(num_field(j, "", "jobs", 1));

  if (const json* d = maybe(j, "dataset")) {
    check_object(*d, "dataset");
    c.dataset.source = str_field(*d, "dataset", "source", c.dataset.source);
    c.dataset.seed = static_cast<std::uint64_t>(
        num_field(*d, "dataset", "seed", static_cast<double>(c.dataset.seed)));
    if (const json* imgs = maybe(*d, "images")) {
      if (!imgs->is_array())
        throw ConfigError("dataset.images: expected an array");
      for (const auto& e : *imgs) {
        if (!e.is_string())
          throw ConfigError("dataset.images: expected string entries");
        c.dataset.images.push_back(e.get<std::string>());
      }
    }
  }

  if (const json* n = maybe(j, "network")) {
    check_object(*n, "network");
    std::string arch = str_field(*n, "network", "arch", "hourglass");
    if (arch == "hourglass") {
      c.network.kind = Arch::Hourglass;
    } else if (arch == "deep-decoder") {
      c.network.kind = Arch::DeepDecoder;
      c.network.skip_widths = {1};  // unused by the decoder
    } else {
      throw ConfigError("network.arch: unknown architecture '" + arch + "'");
    }
    c.network.depth = static_cast<int>(
        num_field(*n, "network", "depth", c.network.depth));
    c.network.widths = list_field<int>(*n, "network", "widths",
                                       c.network.widths);
    c.network.skip_widths = list_field<int>(*n, "network", "skip_widths",
                                            c.network.skip_widths);
    c.network.kernel = static_cast<int>(
        num_field(*n, "network", "kernel", c.network.kernel));
    c.network.code_channels = static_cast<int>(num_field(
        *n, "network", "code_channels", c.network.code_channels));
    c.network.out_channels = static_cast<int>(num_field(
        *n, "network", "out_channels", c.network.out_channels));
    if (c.network.kind == Arch::DeepDecoder && !c.network.widths.empty())
      c.network.code_channels = c.network.widths[0];
  }

  if (const json* t = maybe(j, "task")) {
    check_object(*t, "task");
    std::string kind = str_field(*t, "task", "kind", "denoise");
    if (kind == "denoise") {
      c.task = Degradation::denoise(static_cast<float>(
          num_field(*t, "task", "sigma", 25.0 / 255.0)));
    } else if (kind == "inpaint") {
      c.task = Degradation::inpaint(static_cast<float>(
          num_field(*t, "task", "keep_prob", 0.5)));
      c.text_mask = detail::bool_field(*t, "task", "text_mask", false);
    } else if (kind == "sr") {
      c.task = Degradation::super_resolve(static_cast<int>(
          num_field(*t, "task", "factor", 4)));
    } else {
      throw ConfigError("task.kind: unknown task '" + kind + "'");
    }
  }

  if (const json* f = maybe(j, "fit")) {
    check_object(*f, "fit");
    c.fit.iterations = static_cast<int>(
        num_field(*f, "fit", "iterations", c.fit.iterations));
    c.fit.adam.lr = static_cast<float>(
        num_field(*f, "fit", "lr", c.fit.adam.lr));
    c.fit.jitter = static_cast<float>(
        num_field(*f, "fit", "jitter", c.fit.jitter));
    c.fit.cadence = static_cast<int>(
        num_field(*f, "fit", "cadence", c.fit.cadence));
    c.fit.adam.langevin = bool_field(*f, "fit", "langevin",
                                     c.fit.adam.langevin);
  }
  c.imp.fit = c.fit;

  if (const json* i = maybe(j, "imp")) {
    check_object(*i, "imp");
    c.imp.target_sparsity =
        num_field(*i, "imp", "target_sparsity", c.imp.target_sparsity);
    c.imp.prune_fraction =
        num_field(*i, "imp", "prune_fraction", c.imp.prune_fraction);
    c.imp.rewind_fraction =
        num_field(*i, "imp", "rewind_fraction", c.imp.rewind_fraction);
    c.imp.early_stop_enabled =
        bool_field(*i, "imp", "early_stop", c.imp.early_stop_enabled);
    c.imp.early_stop_k = static_cast<int>(
        num_field(*i, "imp", "early_stop_k", c.imp.early_stop_k));
    c.imp.tail_window = static_cast<int>(
        num_field(*i, "imp", "tail_window", c.imp.tail_window));
  }

  if (const json* p = maybe(j, "prune")) {
    check_object(*p, "prune");
    c.prune.method = str_field(*p, "prune", "method", c.prune.method);
    c.prune.sparsity = num_field(*p, "prune", "sparsity", c.prune.sparsity);
    c.prune.profile = detail::list_field<double>(*p, "prune", "profile", {});
  }

  if (const json* t = maybe(j, "ticket")) {
    check_object(*t, "ticket");
    c.ticket.mask_path = str_field(*t, "ticket", "mask", "");
    c.ticket.weights_path = str_field(*t, "ticket", "weights", "");
  }

  if (const json* r = maybe(j, "report")) {
    check_object(*r, "report");
    c.report_source = str_field(*r, "report", "source", "");
  }

  return c;
}

// Stable hash over the canonical (sorted-key) JSON serialization.
inline std::string config_hash(const nlohmann::json& j) {
  std::string canon = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (char ch : canon) {
    h ^= static_cast<unsigned char>(ch);
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// manifest
// ---------------------------------------------------------------------------

struct CurvePoint {
  std::string method;
  std::uint64_t seed = 0;
  std::string image;
  int round = 0;
  double sparsity = 0.0;
  std::int64_t nonzero = 0;
  double psnr_db = std::numeric_limits<double>::quiet_NaN();
  double ssim_val = std::numeric_limits<double>::quiet_NaN();
  double loss = 0.0;
};

struct SeedArtifacts {
  std::uint64_t seed = 0;
  std::vector<std::string> paths;
};

struct RunManifest {
  std::string config_hash;
  std::string code_version = kCodeVersion;
  std::string kind;
  std::string out_dir;
  bool failed = false;
  std::string error;
  double wall_seconds = 0.0;
  std::vector<SeedArtifacts> artifacts;
  std::vector<CurvePoint> curves;
};

namespace detail {

inline json manifest_to_json(const RunManifest& m) {
  json j;
  j["config_hash"] = m.config_hash;
  j["code_version"] = m.code_version;
  j["kind"] = m.kind;
  j["out"] = m.out_dir;
  j["failed"] = m.failed;
  j["error"] = m.error;
  j["wall_seconds"] = m.wall_seconds;
  j["seeds"] = json::array();
  for (const auto& a : m.artifacts)
    j["seeds"].push_back({{"seed", a.seed}, {"artifacts", a.paths}});
  j["curves"] = json::array();
  for (const auto& p : m.curves) {
    json row = {{"method", p.method}, {"seed", p.seed},
                {"image", p.image},   {"round", p.round},
                {"sparsity", p.sparsity}, {"nonzero", p.nonzero},
                {"loss", p.loss}};
    if (std::isfinite(p.psnr_db)) row["psnr_db"] = p.psnr_db;
    if (std::isfinite(p.ssim_val)) row["ssim"] = p.ssim_val;
    j["curves"].push_back(std::move(row));
  }
  return j;
}

inline RunManifest manifest_from_json(const json& j) {
  RunManifest m;
  m.config_hash = j.value("config_hash", "");
  m.code_version = j.value("code_version", "");
  m.kind = j.value("kind", "");
  m.out_dir = j.value("out", "");
  m.failed = j.value("failed", false);
  m.error = j.value("error", "");
  m.wall_seconds = j.value("wall_seconds", 0.0);
  for (const auto& s : j.value("seeds", json::array())) {
    SeedArtifacts a;
    a.seed = s.value("seed", 0ull);
    for (const auto& p : s.value("artifacts", json::array()))
      a.paths.push_back(p.get<std::string>());
    m.artifacts.push_back(std::move(a));
  }
  for (const auto& r : j.value("curves", json::array())) {
    CurvePoint p;
    p.method = r.value("method", "");
    p.seed = r.value("seed", 0ull);
    p.image = r.value("image", "");
    p.round = r.value("round", 0);
    p.sparsity = r.value("sparsity", 0.0);
    p.nonzero = r.value("nonzero", 0ll);
    p.psnr_db = r.value("psnr_db",
                        std::numeric_limits<double>::quiet_NaN());
    p.ssim_val = r.value("ssim", std::numeric_limits<double>::quiet_NaN());
    p.loss = r.value("loss", 0.0);
    m.curves.push_back(std::move(p));
  }
  return m;
}

inline void atomic_write_text(const std::string& path,
                              const std::string& text) {
  atomic_write(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

}  // namespace detail

inline void save_manifest(const RunManifest& m) {
  std::string path =
      (std::filesystem::path(m.out_dir) / "manifest.json").string();
  detail::atomic_write_text(path, detail::manifest_to_json(m).dump(2) + "\n");
}

inline RunManifest load_manifest(const std::string& run_dir) {
  std::string path =
      (std::filesystem::path(run_dir) / "manifest.json").string();
  auto bytes = detail::read_file(path);
  nlohmann::json j = nlohmann::json::parse(bytes.begin(), bytes.end(),
                                           nullptr, false);
  if (j.is_discarded()) throw IoError("manifest is not valid JSON: " + path);
  return detail::manifest_from_json(j);
}

// ---------------------------------------------------------------------------
// report emission
// ---------------------------------------------------------------------------

struct MeanVar {
  double mean = 0.0;
  double var = 0.0;  // population variance
  int n = 0;
};

inline MeanVar mean_var(const std::vector<double>& v) {
  MeanVar s;
  for (double x : v) {
    if (!std::isfinite(x)) continue;
    s.mean += x;
    ++s.n;
  }
  if (s.n == 0) return s;
  s.mean /= s.n;
  for (double x : v)
    if (std::isfinite(x)) s.var += (x - s.mean) * (x - s.mean);
  s.var /= s.n;
  return s;
}

namespace detail {

inline std::string fmt(double v) {
  if (!std::isfinite(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.8g", v);
  return buf;
}

inline std::string profile_csv_text(const Mask& mask) {
  SparsityProfile prof = layer_sparsity_report(mask);
  std::string out = "layer_index,layer_name,total,zeros,sparsity\n";
  for (const auto& l : prof.layers) {
    out += std::to_string(l.index) + "," + l.name + "," +
           std::to_string(l.total) + "," + std::to_string(l.zeros) + "," +
           fmt(l.sparsity) + "\n";
  }
  return out;
}

}  // namespace detail

// Writes curves.csv, per-mask layer profiles, and summary.json next to the
// manifest. Image artifacts (PNGs, FFT maps) are written by the run itself.
inline void emit_report(const RunManifest& m) {
  namespace fs = std::filesystem;
  fs::path dir(m.out_dir);
  fs::create_directories(dir);

  std::string csv = "method,seed,round,sparsity,nonzero_params,psnr_db,ssim,loss\n";
  for (const auto& p : m.curves) {
    csv += p.method + "," + std::to_string(p.seed) + "," +
           std::to_string(p.round) + "," + detail::fmt(p.sparsity) + "," +
           std::to_string(p.nonzero) + "," + detail::fmt(p.psnr_db) + "," +
           detail::fmt(p.ssim_val) + "," + detail::fmt(p.loss) + "\n";
  }
  detail::atomic_write_text((dir / "curves.csv").string(), csv);

  // per-layer profile for every mask artifact
  for (const auto& a : m.artifacts) {
    for (const auto& path : a.paths) {
      if (path.size() < 5 || path.substr(path.size() - 5) != ".lipm") continue;
      Mask mask = load_mask(path);
      fs::path p(path);
      detail::atomic_write_text(
          (p.parent_path() / (p.stem().string() + "_profile.csv")).string(),
          detail::profile_csv_text(mask));
    }
  }

  // mean and variance per (method, round) across seeds and images
  nlohmann::json summary = nlohmann::json::array();
  std::vector<std::pair<std::string, int>> keys;
  for (const auto& p : m.curves) {
    std::pair<std::string, int> k{p.method, p.round};
    bool seen = false;
    for (const auto& e : keys) seen = seen || e == k;
    if (!seen) keys.push_back(k);
  }
  for (const auto& k : keys) {
    std::vector<double> psnrs, ssims, losses, sparsities;
    for (const auto& p : m.curves) {
      if (p.method != k.first || p.round != k.second) continue;
      psnrs.push_back(p.psnr_db);
      ssims.push_back(p.ssim_val);
      losses.push_back(p.loss);
      sparsities.push_back(p.sparsity);
    }
    MeanVar ps = mean_var(psnrs), ss = mean_var(ssims), lo = mean_var(losses),
            sp = mean_var(sparsities);
    nlohmann::json row = {{"method", k.first},
                          {"round", k.second},
                          {"sparsity", sp.mean},
                          {"loss_mean", lo.mean},
                          {"loss_var", lo.var},
                          {"n", lo.n}};
    if (ps.n > 0) {
      row["psnr_mean"] = ps.mean;
      row["psnr_var"] = ps.var;
    }
    if (ss.n > 0) {
      row["ssim_mean"] = ss.mean;
      row["ssim_var"] = ss.var;
    }
    summary.push_back(std::move(row));
  }
  detail::atomic_write_text((dir / "summary.json").string(),
                            summary.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// execution
// ---------------------------------------------------------------------------

namespace detail {

inline bool deterministic_env() {
  const char* v = std::getenv("LIP_DETERMINISTIC");
  return v != nullptr && std::string(v) == "1";
}

// Seed-level worker pool. Each worker owns its state; slot i of the
// result vector belongs to work item i, so the output order does not
// depend on scheduling.
inline void parallel_for(std::size_t n, int jobs,
                         const std::function<void(std::size_t)>& fn) {
  int workers = deterministic_env() ? 1 : jobs;
  workers = std::max(1, std::min<int>(workers, static_cast<int>(n)));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  std::mutex err_mu;
  std::exception_ptr first_error;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mu);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

inline std::vector<NamedImage> load_images(const ExperimentConfig& c) {
  const int multiple = 1 << c.network.depth;
  auto all = ingest_dataset(c.dataset.source, multiple, c.dataset.seed);
  if (c.dataset.images.empty()) return all;
  std::vector<NamedImage> out;
  for (const auto& want : c.dataset.images) {
    bool found = false;
    for (auto& img : all) {
      if (img.name == want) {
        out.push_back(img);
        found = true;
      }
    }
    if (!found)
      throw ConfigError("dataset.images: no image named '" + want + "'");
  }
  return out;
}

inline Observation observe(const ExperimentConfig& c, const NamedImage& img,
                           std::size_t index) {
  // One observation per image, shared by every network seed, so that
  // methods and seeds are compared on identical degraded inputs.
  const std::uint64_t obs_seed = c.dataset.seed + 1000003ull * (index + 1);
  Degradation d = c.task;
  if (d.kind == TaskKind::Inpaint && c.text_mask)
    d = Degradation::inpaint_mask(
        text_overlay_mask(img.image.shape(), obs_seed));
  return make_observation(img.image, d, obs_seed);
}

inline PriorNetwork build_network(const NetworkSpec& spec,
                                  std::uint64_t seed) {
  return spec.kind == Arch::Hourglass
             ? build_hourglass(spec, seed)
             : build_deep_decoder(spec.widths[0], spec.depth, seed,
                                  spec.out_channels);
}

inline InputCode code_for(const NetworkSpec& spec, const Tensor& img,
                          std::uint64_t seed) {
  const int H = img.dim(2), W = img.dim(3);
  if (spec.kind == Arch::Hourglass)
    return sample_input_code({1, spec.code_channels, H, W}, seed);
  const int s = 1 << spec.depth;
  return sample_input_code({1, spec.widths[0], H / s, W / s}, seed);
}

inline std::string art_path(const ExperimentConfig& c,
                            const std::string& name) {
  return (std::filesystem::path(c.out_dir) / name).string();
}

inline void save_ticket_weights(const PriorNetwork& shaped,
                                const ParamValues& values,
                                const std::string& path) {
  std::vector<CheckpointLayer> layers;
  require(values.size() == shaped.params.params.size(),
          "weight snapshot does not match the network");
  for (std::size_t i = 0; i < values.size(); ++i) {
    const Param& p = shaped.params.params[i];
    require(p.name == values[i].first, "weight snapshot name mismatch");
    layers.push_back({p.name, p.value.shape(),
                      std::vector<float>(values[i].second.begin(),
                                         values[i].second.end())});
  }
  save_checkpoint(layers, path);
}

// Restored image, its FFT difference against the observation, and the
// radial band energies.
inline void save_result_images(const ExperimentConfig& c,
                               const std::string& stem, const Tensor& restored,
                               const Tensor& reference,
                               SeedArtifacts& arts) {
  std::string png = art_path(c, stem + ".png");
  save_image(restored, png);
  arts.paths.push_back(png);
  if (restored.shape() == reference.shape()) {
    FftDiff diff = fft_magnitude_diff(restored, reference);
    // normalize the signed map into [0,1] for PNG storage
    float lo = diff.map.data()[0], hi = lo;
    for (std::int64_t i = 0; i < diff.map.numel(); ++i) {
      lo = std::min(lo, diff.map.data()[i]);
      hi = std::max(hi, diff.map.data()[i]);
    }
    const float span = hi > lo ? hi - lo : 1.0f;
    Tensor vis(diff.map.shape());
    for (std::int64_t i = 0; i < diff.map.numel(); ++i)
      vis.data()[i] = (diff.map.data()[i] - lo) / span;
    std::string fft_png = art_path(c, stem + "_fftdiff.png");
    save_image(vis, fft_png);
    arts.paths.push_back(fft_png);
    std::string csv = "band_low,band_high,energy_a,energy_b,energy_diff\n";
    for (const auto& b : diff.bands)
      csv += fmt(b.band_low) + "," + fmt(b.band_high) + "," +
             fmt(b.energy_a) + "," + fmt(b.energy_b) + "," +
             fmt(b.energy_diff) + "\n";
    std::string csv_path = art_path(c, stem + "_fftbands.csv");
    atomic_write_text(csv_path, csv);
    arts.paths.push_back(csv_path);
  }
}

inline CurvePoint curve_point(const std::string& method, std::uint64_t seed,
                              const std::string& image, int round,
                              const PriorNetwork& net, FitResult& fr,
                              const Observation& obs) {
  score_fit_result(fr, obs);
  CurvePoint p;
  p.method = method;
  p.seed = seed;
  p.image = image;
  p.round = round;
  p.sparsity = net.current_mask().sparsity();
  p.nonzero = count_params(net, true);
  if (!fr.records.empty()) {
    p.psnr_db = fr.records.back().psnr_db;
    p.ssim_val = fr.records.back().ssim_val;
  }
  p.loss = fr.final_loss;
  return p;
}

struct SeedOutput {
  SeedArtifacts arts;
  std::vector<CurvePoint> curves;
};

inline SeedOutput run_fit_seed(const ExperimentConfig& c,
                               const std::vector<NamedImage>& images,
                               std::uint64_t seed) {
  SeedOutput out;
  out.arts.seed = seed;
  for (std::size_t ii = 0; ii < images.size(); ++ii) {
    Observation obs = observe(c, images[ii], ii);
    PriorNetwork net = build_network(c.network, seed);
    InputCode code = code_for(c.network, images[ii].image, seed);
    FitResult fr = fit(net, code, {obs}, c.fit, seed);
    std::string stem = images[ii].name + "_s" + std::to_string(seed);
    out.curves.push_back(
        curve_point("dense", seed, images[ii].name, 0, net, fr, obs));
    save_result_images(c, stem, fr.final_image, obs.clean(), out.arts);
    std::string w = art_path(c, stem + "_weights.lipw");
    save_checkpoint(net.params, w);
    out.arts.paths.push_back(w);
  }
  return out;
}

inline SeedOutput run_imp_seed(const ExperimentConfig& c,
                               const std::vector<NamedImage>& images,
                               std::uint64_t seed, bool multi) {
  SeedOutput out;
  out.arts.seed = seed;
  struct Group {
    std::string name;
    std::vector<Observation> obs;
    Tensor ref;  // clean-resolution image, sizes the input code
  };
  std::vector<Group> groups;
  if (multi) {
    Group g;
    g.name = "multi";
    for (std::size_t ii = 0; ii < images.size(); ++ii)
      g.obs.push_back(observe(c, images[ii], ii));
    g.ref = images[0].image;
    groups.push_back(std::move(g));
  } else {
    for (std::size_t ii = 0; ii < images.size(); ++ii)
      groups.push_back({images[ii].name,
                        {observe(c, images[ii], ii)},
                        images[ii].image});
  }

  for (auto& [name, obs, ref] : groups) {
    InputCode code = code_for(c.network, ref, seed);
    Provenance prov;
    prov.task = name;
    ImpTrace trace = imp_run(obs, c.network, code, c.imp, seed, prov);

    std::string stem = name + "_s" + std::to_string(seed);
    PriorNetwork shaped = build_network(c.network, seed);
    std::string w = art_path(c, stem + "_theta.lipw");
    save_ticket_weights(shaped, *trace.ref_weights, w);
    out.arts.paths.push_back(w);

    for (auto& rec : trace.rounds) {
      std::string mp =
          art_path(c, stem + "_r" + std::to_string(rec.round) + ".lipm");
      save_mask(trace.tickets[static_cast<std::size_t>(rec.round)].mask, mp);
      out.arts.paths.push_back(mp);
      shaped.set_mask(trace.tickets[static_cast<std::size_t>(rec.round)].mask);
      if (multi) {
        CurvePoint p;
        p.method = "lip";
        p.seed = seed;
        p.image = name;
        p.round = rec.round;
        p.sparsity = rec.sparsity;
        p.nonzero = rec.nonzero;
        p.loss = rec.fit.final_loss;
        out.curves.push_back(std::move(p));
      } else {
        out.curves.push_back(curve_point("lip", seed, name, rec.round, shaped,
                                         rec.fit, obs[0]));
      }
      if (rec.round == static_cast<int>(trace.rounds.size()) - 1 && !multi)
        save_result_images(c, stem + "_r" + std::to_string(rec.round),
                           rec.fit.final_image, obs[0].clean(), out.arts);
    }
  }
  return out;
}

inline SeedOutput run_eval_ticket_seed(const ExperimentConfig& c,
                                       const std::vector<NamedImage>& images,
                                       std::uint64_t seed) {
  SeedOutput out;
  out.arts.seed = seed;
  Ticket t;
  t.spec = c.network;
  t.mask = load_mask(c.ticket.mask_path);
  t.ref_weights = std::make_shared<ParamValues>(
      checkpoint_to_values(load_checkpoint(c.ticket.weights_path)));
  t.provenance.seed = seed;
  for (std::size_t ii = 0; ii < images.size(); ++ii) {
    Observation obs = observe(c, images[ii], ii);
    InputCode code = code_for(c.network, images[ii].image, seed);
    FitResult fr = evaluate_ticket(t, obs, code, c.fit, seed);
    PriorNetwork shaped = build_network(c.network, seed);
    shaped.set_mask(t.mask);
    out.curves.push_back(
        curve_point("ticket", seed, images[ii].name, 0, shaped, fr, obs));
    save_result_images(c, images[ii].name + "_s" + std::to_string(seed),
                       fr.final_image, obs.clean(), out.arts);
  }
  return out;
}

inline SeedOutput run_prune_seed(const ExperimentConfig& c,
                                 const std::vector<NamedImage>& images,
                                 std::uint64_t seed) {
  SeedOutput out;
  out.arts.seed = seed;
  for (std::size_t ii = 0; ii < images.size(); ++ii) {
    Observation obs = observe(c, images[ii], ii);
    PriorNetwork net = build_network(c.network, seed);
    InputCode code = code_for(c.network, images[ii].image, seed);
    Mask mask;
    if (c.prune.method == "random") {
      mask = random_prune(net, c.prune.sparsity, nullptr, seed);
    } else if (c.prune.method == "profile") {
      mask = random_prune(net, c.prune.sparsity, &c.prune.profile, seed);
    } else if (c.prune.method == "snip") {
      mask = snip_prune(net, obs, code.z, c.prune.sparsity);
    } else {
      mask = synflow_prune(net, code.z.shape(), c.prune.sparsity);
    }
    net.set_mask(mask);
    FitResult fr = fit(net, code, {obs}, c.fit, seed);
    std::string stem =
        images[ii].name + "_" + c.prune.method + "_s" + std::to_string(seed);
    std::string mp = art_path(c, stem + ".lipm");
    save_mask(mask, mp);
    out.arts.paths.push_back(mp);
    out.curves.push_back(
        curve_point(c.prune.method, seed, images[ii].name, 0, net, fr, obs));
    save_result_images(c, stem, fr.final_image, obs.clean(), out.arts);
  }
  return out;
}

inline SeedOutput run_four_targets_seed(const ExperimentConfig& c,
                                        const std::vector<NamedImage>& images,
                                        std::uint64_t seed) {
  SeedOutput out;
  out.arts.seed = seed;
  const Tensor& img = images[0].image;
  Observation noisy = observe(c, images[0], 0);
  std::vector<std::pair<std::string, Tensor>> targets;
  targets.emplace_back("image", img.clone());
  targets.emplace_back("noisy", noisy.observed.clone());
  targets.emplace_back("shuffled", pixel_shuffled(img, seed));
  targets.emplace_back("noise", white_noise_image(img.shape(), seed));

  std::vector<NamedMask> variants;
  PriorNetwork net = build_network(c.network, seed);
  variants.push_back({"dense", make_dense_mask(net.params)});
  if (!c.ticket.mask_path.empty())
    variants.push_back({"ticket", load_mask(c.ticket.mask_path)});

  InputCode code = code_for(c.network, img, seed);
  auto curves = four_target_curves(c.network, seed, variants, targets, code,
                                   c.fit, seed);
  std::string csv = "net,target,iter,loss\n";
  for (const auto& tc : curves) {
    for (std::size_t i = 0; i < tc.losses.size(); ++i)
      csv += tc.net_name + "," + tc.target_name + "," +
             std::to_string(i + 1) + "," + fmt(tc.losses[i]) + "\n";
    CurvePoint p;
    p.method = tc.net_name + "/" + tc.target_name;
    p.seed = seed;
    p.image = images[0].name;
    p.loss = tc.losses.empty() ? 0.0 : tc.losses.back();
    out.curves.push_back(std::move(p));
  }
  std::string path =
      art_path(c, "four_targets_s" + std::to_string(seed) + ".csv");
  atomic_write_text(path, csv);
  out.arts.paths.push_back(path);
  return out;
}

}  // namespace detail

inline RunManifest run(const ExperimentConfig& cfg,
                       const nlohmann::json& raw_config) {
  cfg.validate();
  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);

  RunManifest m;
  m.config_hash = config_hash(raw_config);
  m.kind = cfg.kind;
  m.out_dir = cfg.out_dir;

  if (cfg.kind == "report") {
    RunManifest src = load_manifest(cfg.report_source);
    src.out_dir = cfg.out_dir;
    emit_report(src);
    src.config_hash = m.config_hash;
    save_manifest(src);
    return src;
  }

  auto t0 = std::chrono::steady_clock::now();
  std::vector<detail::SeedOutput> outputs(cfg.seeds.size());
  try {
    auto images = detail::load_images(cfg);
    detail::parallel_for(
        cfg.seeds.size(), cfg.jobs, [&](std::size_t i) {
          const std::uint64_t seed = cfg.seeds[i];
          if (cfg.kind == "fit")
            outputs[i] = detail::run_fit_seed(cfg, images, seed);
          else if (cfg.kind == "imp")
            outputs[i] = detail::run_imp_seed(cfg, images, seed, false);
          else if (cfg.kind == "imp-multi")
            outputs[i] = detail::run_imp_seed(cfg, images, seed, true);
          else if (cfg.kind == "eval-ticket")
            outputs[i] = detail::run_eval_ticket_seed(cfg, images, seed);
          else if (cfg.kind == "baseline-prune")
            outputs[i] = detail::run_prune_seed(cfg, images, seed);
          else if (cfg.kind == "four-targets")
            outputs[i] = detail::run_four_targets_seed(cfg, images, seed);
        });
  } catch (const std::exception& e) {
    m.failed = true;
    m.error = e.what();
  }
  for (auto& o : outputs) {
    if (o.arts.paths.empty() && o.curves.empty()) continue;
    m.artifacts.push_back(std::move(o.arts));
    for (auto& p : o.curves) m.curves.push_back(std::move(p));
  }
  m.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  save_manifest(m);
  if (!m.failed) emit_report(m);
  return m;
}

inline RunManifest run(const std::string& config_path) {
  auto bytes = detail::read_file(config_path);
  nlohmann::json j =
      nlohmann::json::parse(bytes.begin(), bytes.end(), nullptr, false);
  if (j.is_discarded())
    throw ConfigError("config is not valid JSON: " + config_path);
  return run(parse_config(j), j);
}

}  // namespace lip
