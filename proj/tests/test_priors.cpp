#include <cmath>

#include "doctest.h"
#include "lip/priors.hpp"
#include "test_helpers.hpp"

using namespace lip;

TEST_CASE("deep decoder parameter counts match the closed form") {
  // total = depth*(k^2 + 2k) + 3k for 1x1 convs, per-block norm, RGB head
  auto count = [](int k, int depth) {
    return build_deep_decoder(k, depth, 1).params.total_count();
  };
  CHECK(count(128, 6) == 100224);
  CHECK(count(320, 6) == 619200);
  CHECK(count(1, 6) == 21);
  for (int k : {2, 7, 32})
    for (int d : {1, 3, 6})
      CHECK(count(k, d) ==
            static_cast<std::int64_t>(d) * (k * k + 2 * k) + 3 * k);
}

TEST_CASE("deep decoder prunable weights are the conv kernels only") {
  auto dd = build_deep_decoder(32, 6, 1);
  CHECK(dd.params.prunable_count() == 6 * 32 * 32 + 3 * 32);
  for (const auto& p : dd.params.params) {
    bool is_conv_weight = p.name.find(".conv.weight") != std::string::npos;
    CHECK(p.prunable == is_conv_weight);
  }
}

TEST_CASE("full-scale hourglass lands in the 2.2M band") {
  auto net = build_hourglass(full_hourglass_spec(), 1);
  std::int64_t n = net.params.total_count();
  CHECK(n == 2216935);
  CHECK(static_cast<double>(n) >= 2.2e6 * 0.95);
  CHECK(static_cast<double>(n) <= 2.2e6 * 1.05);
}

TEST_CASE("hourglass count agrees with the analytic layer sum") {
  std::vector<NetworkSpec> specs = {desk_hourglass_spec(),
                                    full_hourglass_spec()};
  NetworkSpec uneven;
  uneven.kind = Arch::Hourglass;
  uneven.depth = 3;
  uneven.widths = {16, 24, 40};
  uneven.skip_widths = {4, 8, 8};
  uneven.code_channels = 8;
  uneven.out_channels = 1;
  specs.push_back(uneven);
  for (const auto& s : specs) {
    auto net = build_hourglass(s, 3);
    CHECK(net.params.total_count() == hourglass_param_formula(s));
  }
}

TEST_CASE("desk-scale hourglass counts are stable") {
  auto net = build_hourglass(desk_hourglass_spec(), 1);
  CHECK(net.params.total_count() == 121523);
  CHECK(net.params.prunable_count() == 119904);
}

TEST_CASE("initialization is reproducible per seed") {
  auto a = build_hourglass(desk_hourglass_spec(), 7);
  auto b = build_hourglass(desk_hourglass_spec(), 7);
  auto c = build_hourglass(desk_hourglass_spec(), 8);
  REQUIRE(a.params.params.size() == b.params.params.size());
  bool all_equal = true, any_differs = false;
  for (std::size_t i = 0; i < a.params.params.size(); ++i) {
    const auto& pa = a.params.params[i];
    CHECK(pa.name == b.params.params[i].name);
    if (pa.value.vec() != b.params.params[i].value.vec()) all_equal = false;
    if (pa.prunable && pa.value.vec() != c.params.params[i].value.vec())
      any_differs = true;
  }
  CHECK(all_equal);
  CHECK(any_differs);
}

TEST_CASE("snapshot/restore round-trips parameter values") {
  auto net = build_hourglass(desk_hourglass_spec(), 11);
  ParamValues theta0 = snapshot_params(net.params);
  for (auto& p : net.params.params)
    for (std::int64_t i = 0; i < p.value.numel(); ++i) p.value.data()[i] += 1.0f;
  restore_params(net.params, theta0);
  ParamValues again = snapshot_params(net.params);
  CHECK(theta0 == again);
}

TEST_CASE("masked forward equals forward with weights zeroed by hand") {
  auto net = build_hourglass(desk_hourglass_spec(), 21);
  auto manual = build_hourglass(desk_hourglass_spec(), 21);

  Mask m = make_dense_mask(net.params);
  RngStream rng(4, "maskpick");
  for (auto& layer : m.layers)
    for (auto& k : layer.keep)
      if (rng.uniform01() < 0.5f) k = 0;

  for (const auto& layer : m.layers) {
    float* v = manual.params.find(layer.name).value.data();
    for (std::size_t i = 0; i < layer.keep.size(); ++i)
      if (layer.keep[i] == 0) v[i] = 0.0f;
  }
  net.set_mask(m);

  auto code = sample_input_code({1, 32, 32, 32}, 5);
  Tensor ya = net.forward(code.z);
  Tensor yb = manual.forward(code.z);
  REQUIRE(ya.numel() == yb.numel());
  for (std::int64_t i = 0; i < ya.numel(); ++i)
    CHECK(ya.data()[i] == yb.data()[i]);
}

TEST_CASE("set_mask zeroes pruned weights in place") {
  auto net = build_deep_decoder(8, 3, 2);
  Mask m = make_dense_mask(net.params);
  m.layers[0].keep[5] = 0;
  m.layers[0].keep[17] = 0;
  net.set_mask(m);
  const Tensor& w = net.params.find("dd1.conv.weight").value;
  CHECK(w.data()[5] == 0.0f);
  CHECK(w.data()[17] == 0.0f);
  CHECK(net.current_mask().zeros() == 2);
}

TEST_CASE("count_params respects the mask") {
  auto net = build_deep_decoder(8, 3, 2);
  std::int64_t total = net.params.total_count();
  CHECK(count_params(net) == total);
  CHECK(count_params(net, true) == total);
  Mask m = make_dense_mask(net.params);
  std::int64_t drop = 0;
  for (auto& layer : m.layers)
    for (std::size_t i = 0; i < layer.keep.size(); i += 3) {
      layer.keep[i] = 0;
      ++drop;
    }
  net.set_mask(m);
  CHECK(count_params(net, true) == total - drop);
  CHECK(count_params(net) == total);
}

TEST_CASE("outputs stay in [0,1] through the sigmoid head") {
  auto hg = build_hourglass(desk_hourglass_spec(), 9);
  auto code = sample_input_code({1, 32, 32, 32}, 9);
  Tensor y = hg.forward(code.z);
  CHECK(y.dim(1) == 3);
  CHECK(y.dim(2) == 32);
  for (std::int64_t i = 0; i < y.numel(); ++i) {
    CHECK(y.data()[i] >= 0.0f);
    CHECK(y.data()[i] <= 1.0f);
  }
  auto dd = build_deep_decoder(16, 4, 9);
  auto zd = sample_input_code({1, 16, 4, 4}, 9);
  Tensor yd = dd.forward(zd.z);
  CHECK(yd.dim(2) == 64);  // 4 upsampling blocks
  for (std::int64_t i = 0; i < yd.numel(); ++i) {
    CHECK(yd.data()[i] >= 0.0f);
    CHECK(yd.data()[i] <= 1.0f);
  }
}

TEST_CASE("linear_output drops the sigmoid") {
  auto net = build_deep_decoder(16, 3, 13);
  auto z = sample_input_code({1, 16, 4, 4}, 13);
  ForwardOptions opts;
  opts.linear_output = true;
  Tensor y = net.forward(z.z, opts);
  bool outside = false;
  for (std::int64_t i = 0; i < y.numel(); ++i)
    if (y.data()[i] < 0.0f || y.data()[i] > 1.0f) outside = true;
  CHECK(outside);
}

TEST_CASE("input code is deterministic and uniform on [0, 0.1]") {
  auto a = sample_input_code({1, 32, 16, 16}, 3);
  auto b = sample_input_code({1, 32, 16, 16}, 3);
  auto c = sample_input_code({1, 32, 16, 16}, 4);
  CHECK(a.z.vec() == b.z.vec());
  CHECK(a.z.vec() != c.z.vec());
  float lo = 1.0f, hi = 0.0f;
  for (std::int64_t i = 0; i < a.z.numel(); ++i) {
    lo = std::min(lo, a.z.data()[i]);
    hi = std::max(hi, a.z.data()[i]);
  }
  CHECK(lo >= 0.0f);
  CHECK(hi <= 0.1f);
  CHECK(hi > 0.05f);  // actually fills the range
}

TEST_CASE("spec validation rejects malformed networks") {
  NetworkSpec s = desk_hourglass_spec();
  s.depth = 0;
  CHECK_THROWS_AS(s.validate(), ContractError);
  s = desk_hourglass_spec();
  s.kernel = 4;
  CHECK_THROWS_AS(s.validate(), ContractError);
  s = desk_hourglass_spec();
  s.skip_widths.clear();
  CHECK_THROWS_AS(s.validate(), ContractError);
  s = desk_hourglass_spec();
  s.out_channels = 2;
  CHECK_THROWS_AS(s.validate(), ContractError);
}

TEST_CASE("forward rejects mismatched input codes") {
  auto net = build_hourglass(desk_hourglass_spec(), 1);
  CHECK_THROWS_AS(net.forward(Tensor({1, 7, 32, 32})), ContractError);
  CHECK_THROWS_AS(net.forward(Tensor({1, 32, 30, 30})), ContractError);
}

TEST_CASE("mask subset ordering holds after further pruning") {
  auto net = build_deep_decoder(8, 2, 1);
  Mask dense = make_dense_mask(net.params);
  Mask a = dense;
  a.layers[0].keep[0] = 0;
  Mask b = a;
  b.layers[1].keep[3] = 0;
  CHECK(mask_subset_of(b, a));
  CHECK(mask_subset_of(a, dense));
  CHECK(!mask_subset_of(a, b));
  CHECK(b.sparsity() == doctest::Approx(2.0 / dense.total()));
}
