// Copyright 2026 The lip-prior Authors
// Licensed under the Apache License, Version 2.0.

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "lip/common.hpp"
#include "lip/optim.hpp"
#include "lip/priors.hpp"
#include "lip/pruning.hpp"
#include "lip/tasks.hpp"

namespace lip {

struct FitConfig {
  int iterations = 1500;
  AdamConfig adam;
  float jitter = 1.0f / 30.0f;   // per-iteration input-code noise std
  int cadence = 50;              // metric/snapshot interval
  bool track_best = true;        // keep lowest-smoothed-loss checkpoint
  int capture_at = -1;           // snapshot theta at this step (rewinding)

  void validate() const { require(iterations >= 1, "iterations must be >= 1"); }
};

struct MetricRecord {
  int iter = 0;
  double loss = 0.0;
  double psnr_db = std::numeric_limits<double>::quiet_NaN();
  double ssim_val = std::numeric_limits<double>::quiet_NaN();
};

struct FitResult {
  Tensor final_image;
  Tensor best_image;              // lowest-smoothed-loss checkpoint
  int best_iter = 0;
  std::vector<MetricRecord> records;
  std::vector<Tensor> snapshots;  // outputs at each record
  std::vector<float> losses;      // every iteration
  double final_loss = 0.0;
  std::shared_ptr<ParamValues> captured;  // theta_j when capture_at >= 0

  double tail_mean_loss(int window) const {
    if (losses.empty()) return 0.0;
    std::size_t w = std::min<std::size_t>(
        losses.size(), static_cast<std::size_t>(std::max(1, window)));
    double acc = 0.0;
    for (std::size_t i = losses.size() - w; i < losses.size(); ++i)
      acc += losses[i];
    return acc / static_cast<double>(w);
  }
};

// Fit failure; carries the last good state.
struct DivergenceError : Error {
  explicit DivergenceError(FitResult last)
      : Error("fit diverged (non-finite loss)"), last_good(std::move(last)) {}
  FitResult last_good;
};

// N masked-Adam steps minimizing the summed task loss over the given
// observations. Never touches the clean references.
inline FitResult fit(PriorNetwork& net, const InputCode& code,
                     const std::vector<Observation>& observations,
                     const FitConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  require(!observations.empty(), "fit requires at least one observation");
  RngStream jitter_rng(seed, "fit.jitter");
  RngStream noise_rng(seed, "fit.langevin");
  Adam opt(cfg.adam);

  std::vector<Tensor> params;
  std::vector<const std::vector<std::uint8_t>*> masks;
  for (auto& p : net.params.params) {
    params.push_back(p.value);
    const MaskLayer* l = net.mask.find(p.name);
    masks.push_back(l ? &l->keep : nullptr);
  }

  FitResult res;
  double smoothed = 0.0;
  double best_smoothed = std::numeric_limits<double>::infinity();
  Tape tape;
  for (int it = 1; it <= cfg.iterations; ++it) {
    Tensor z = code.z;
    const float j = code.jitter.value_or(cfg.jitter);
    if (j > 0.0f) {
      z = code.z.clone();
      for (std::int64_t i = 0; i < z.numel(); ++i)
        z.data()[i] += j * jitter_rng.gaussian();
    }
    for (auto& p : params) p.zero_grad();
    tape.clear();
    Tensor out, loss;
    {
      TapeScope scope(tape);
      out = net.forward(z);
      loss = task_loss(out, observations[0]);
      for (std::size_t a = 1; a < observations.size(); ++a)
        loss = add(loss, task_loss(out, observations[a]));
      if (!std::isfinite(loss.item())) throw DivergenceError(std::move(res));
      backward(loss);
    }
    opt.step(params, masks, cfg.adam.langevin ? &noise_rng : nullptr);

    float lv = loss.item();
    res.losses.push_back(lv);
    smoothed = res.losses.size() == 1 ? lv : 0.98 * smoothed + 0.02 * lv;
    if (it % cfg.cadence == 0 || it == cfg.iterations) {
      MetricRecord r;
      r.iter = it;
      r.loss = lv;
      res.records.push_back(r);
      res.snapshots.push_back(out.clone());
      if (cfg.track_best && smoothed < best_smoothed) {
        best_smoothed = smoothed;
        res.best_image = res.snapshots.back();
        res.best_iter = it;
      }
    }
    if (it == cfg.capture_at)
      res.captured = std::make_shared<ParamValues>(snapshot_params(net.params));
    if (it == cfg.iterations) res.final_image = out.clone();
  }
  res.final_loss = res.losses.back();
  if (!res.best_image.defined()) {
    res.best_image = res.final_image;
    res.best_iter = cfg.iterations;
  }
  return res;
}

// Fills PSNR/SSIM against the held-out clean image. Evaluation-side only.
inline void score_fit_result(FitResult& res, const Observation& obs) {
  require(obs.has_clean(), "observation has no clean reference");
  const Tensor& clean = obs.clean();
  for (std::size_t i = 0; i < res.records.size(); ++i) {
    res.records[i].psnr_db = psnr(res.snapshots[i], clean);
    res.records[i].ssim_val = ssim(res.snapshots[i], clean);
  }
}

inline double final_psnr(const FitResult& res, const Observation& obs) {
  return psnr(res.final_image, obs.clean());
}
inline double best_psnr(const FitResult& res, const Observation& obs) {
  return psnr(res.best_image, obs.clean());
}
// Trajectory peak against the clean reference: the quality an ideal early
// stop would have captured. Evaluation-side only.
inline double peak_psnr(const FitResult& res, const Observation& obs) {
  require(obs.has_clean(), "observation has no clean reference");
  double best = psnr(res.final_image, obs.clean());
  for (const Tensor& s : res.snapshots)
    best = std::max(best, psnr(s, obs.clean()));
  return best;
}

// ---------------------------------------------------------------------------
// IMP
// ---------------------------------------------------------------------------

struct ImpConfig {
  double target_sparsity = 0.79;
  double prune_fraction = 0.2;
  double rewind_fraction = 0.0;  // j/N; 0 resets to theta_0
  FitConfig fit;
  bool early_stop_enabled = false;
  int early_stop_k = 2;
  int tail_window = 50;  // round-final loss = mean over last window iters

  void validate() const {
    require(prune_fraction > 0.0 && prune_fraction < 1.0,
            "prune fraction in (0,1)");
    require(rewind_fraction >= 0.0 && rewind_fraction <= 1.0,
            "rewind fraction in [0,1]");
    fit.validate();
  }
};

struct Provenance {
  std::vector<std::string> sources;
  std::string task;
  std::uint64_t seed = 0;
};

struct Ticket {
  NetworkSpec spec;
  Mask mask;
  std::shared_ptr<ParamValues> ref_weights;  // theta_0 or theta_j
  int round = 0;
  double round_loss = 0.0;
  Provenance provenance;
  std::optional<bool> matching;  // set by is_matching, never by the IMP loop
};

struct RoundRecord {
  int round = 0;
  double sparsity = 0.0;
  std::int64_t nonzero = 0;
  double round_loss = 0.0;
  FitResult fit;
};

struct ImpTrace {
  NetworkSpec spec;
  std::uint64_t seed = 0;
  std::shared_ptr<ParamValues> ref_weights;
  std::vector<Ticket> tickets;      // tickets[r] has sparsity 1-0.8^r
  std::vector<RoundRecord> rounds;  // rounds[r] trained tickets[r]
  std::optional<int> stop_round;
};

// Returns the last round before the first run of K consecutive strict
// increases in round-final loss; nullopt when no such run exists.
inline std::optional<int> early_stop(const std::vector<double>& losses,
                                     int k = 2) {
  require(k >= 1, "early-stop K must be >= 1");
  int run = 0;
  for (std::size_t i = 1; i < losses.size(); ++i) {
    run = losses[i] > losses[i - 1] ? run + 1 : 0;
    if (run == k) return static_cast<int>(i) - k;
  }
  return std::nullopt;
}

// Train -> prune 20% of survivors -> reset to theta_ref, repeated until
// the target sparsity is evaluated (round r trains the mask produced
// after r prunes, so the round-r fit is the isolated-training evaluation
// of ticket r).
inline ImpTrace imp_run(const std::vector<Observation>& observations,
                        const NetworkSpec& spec, const InputCode& code,
                        const ImpConfig& cfg, std::uint64_t seed,
                        Provenance prov = {}) {
  cfg.validate();
  require(!observations.empty(), "imp requires at least one observation");
  for (const auto& o : observations)
    require(o.observed.dim(2) == observations[0].observed.dim(2) &&
                o.observed.dim(3) == observations[0].observed.dim(3),
            "imp observations must share dimensions");

  PriorNetwork net = build_hourglass(spec, seed);
  auto theta0 = std::make_shared<ParamValues>(snapshot_params(net.params));
  auto theta_ref = theta0;
  prov.seed = seed;

  ImpTrace trace;
  trace.spec = spec;
  trace.seed = seed;

  const int total_rounds = rounds_for_sparsity(cfg.target_sparsity,
                                               cfg.prune_fraction);
  std::vector<double> round_losses;
  Mask mask = make_dense_mask(net.params);

  for (int r = 0; r <= total_rounds; ++r) {
    restore_params(net.params, *theta_ref);
    net.set_mask(mask);
    FitConfig fc = cfg.fit;
    if (r == 0 && cfg.rewind_fraction > 0.0)
      fc.capture_at = std::max(
          1, static_cast<int>(cfg.rewind_fraction * fc.iterations));
    FitResult fr = fit(net, code, observations, fc, seed + 1000003ull * r);
    if (r == 0 && fr.captured) theta_ref = fr.captured;

    RoundRecord rec;
    rec.round = r;
    rec.sparsity = net.mask.sparsity();
    rec.nonzero = count_params(net, true);
    rec.round_loss = fr.tail_mean_loss(cfg.tail_window);
    round_losses.push_back(rec.round_loss);

    Ticket t;
    t.spec = spec;
    t.mask = net.mask;
    t.ref_weights = theta_ref;
    t.round = r;
    t.round_loss = rec.round_loss;
    t.provenance = prov;
    trace.tickets.push_back(std::move(t));
    rec.fit = std::move(fr);
    trace.rounds.push_back(std::move(rec));

    if (cfg.early_stop_enabled) {
      if (auto stop = early_stop(round_losses, cfg.early_stop_k)) {
        trace.stop_round = stop;
        break;
      }
    }
    if (r < total_rounds)
      mask = magnitude_prune(net.params, net.mask, cfg.prune_fraction);
  }
  trace.ref_weights = theta_ref;
  return trace;
}

inline ImpTrace imp_single(const Observation& obs, const NetworkSpec& spec,
                           const InputCode& code, const ImpConfig& cfg,
                           std::uint64_t seed, Provenance prov = {}) {
  return imp_run({obs}, spec, code, cfg, seed, std::move(prov));
}

inline ImpTrace imp_multi(const std::vector<Observation>& observations,
                          const NetworkSpec& spec, const InputCode& code,
                          const ImpConfig& cfg, std::uint64_t seed,
                          Provenance prov = {}) {
  return imp_run(observations, spec, code, cfg, seed, std::move(prov));
}

// Isolated-training evaluation / transfer primitive: rebuild at the
// ticket's reference weights, apply its mask, fit on the target
// observation.
inline FitResult evaluate_ticket(const Ticket& ticket, const Observation& obs,
                                 const InputCode& code, const FitConfig& cfg,
                                 std::uint64_t seed) {
  PriorNetwork net = ticket.spec.kind == Arch::Hourglass
                         ? build_hourglass(ticket.spec, ticket.provenance.seed)
                         : build_deep_decoder(ticket.spec.widths[0],
                                              ticket.spec.depth,
                                              ticket.provenance.seed,
                                              ticket.spec.out_channels);
  require(static_cast<bool>(ticket.ref_weights), "ticket has no weights");
  restore_params(net.params, *ticket.ref_weights);
  net.set_mask(ticket.mask);
  return fit(net, code, {obs}, cfg, seed);
}

// Matching test: the ticket performs no worse than the dense model, up to
// the tolerance.
inline bool is_matching(double ticket_psnr_db, double dense_psnr_db,
                        double tolerance_db = 0.0) {
  return ticket_psnr_db >= dense_psnr_db - tolerance_db;
}

// ---------------------------------------------------------------------------
// four-target impedance analysis
// ---------------------------------------------------------------------------

// Observation that targets an image directly with a plain MSE objective.
inline Observation direct_target(const Tensor& img) {
  return Observation(img.clone(), img.clone(), Degradation::denoise(0.0f),
                     std::nullopt, 0);
}

inline Tensor pixel_shuffled(const Tensor& img, std::uint64_t seed) {
  const int C = img.dim(1), H = img.dim(2), W = img.dim(3);
  const std::int64_t plane = static_cast<std::int64_t>(H) * W;
  std::vector<std::int64_t> perm(static_cast<std::size_t>(plane));
  std::iota(perm.begin(), perm.end(), 0);
  RngStream rng(seed, "pixel_shuffle");
  for (std::int64_t i = plane - 1; i > 0; --i) {
    std::size_t j = rng.index(static_cast<std::size_t>(i + 1));
    std::swap(perm[static_cast<std::size_t>(i)], perm[j]);
  }
  Tensor out(img.shape());
  for (int c = 0; c < C; ++c)
    for (std::int64_t i = 0; i < plane; ++i)
      out.data()[c * plane + i] =
          img.data()[c * plane + perm[static_cast<std::size_t>(i)]];
  return out;
}

inline Tensor white_noise_image(const Shape& shape, std::uint64_t seed) {
  Tensor out(shape);
  RngStream rng(seed, "white_noise");
  for (std::int64_t i = 0; i < out.numel(); ++i)
    out.data()[i] = rng.uniform01();
  return out;
}

struct NamedMask {
  std::string name;  // e.g. dense / lip / snip / random
  Mask mask;
};

struct TargetCurve {
  std::string net_name;
  std::string target_name;
  std::vector<float> losses;
};

// Fits every (net variant, target) pair with the plain MSE objective from
// the shared theta_0 and returns the loss curves.
inline std::vector<TargetCurve> four_target_curves(
    const NetworkSpec& spec, std::uint64_t init_seed,
    const std::vector<NamedMask>& variants,
    const std::vector<std::pair<std::string, Tensor>>& targets,
    const InputCode& code, const FitConfig& cfg, std::uint64_t seed) {
  std::vector<TargetCurve> out;
  for (const auto& v : variants) {
    for (const auto& t : targets) {
      PriorNetwork net = build_hourglass(spec, init_seed);
      net.set_mask(v.mask);
      Observation obs = direct_target(t.second);
      FitResult fr = fit(net, code, {obs}, cfg, seed);
      out.push_back({v.name, t.first, std::move(fr.losses)});
    }
  }
  return out;
}

}  // namespace lip
