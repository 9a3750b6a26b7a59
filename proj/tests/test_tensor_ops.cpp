#include <cmath>

#include "doctest.h"
#include "lip/optim.hpp"
#include "lip/tensor.hpp"
#include "test_helpers.hpp"

using namespace lip;
using lip::test::gradient_check;
using lip::test::random_tensor;

TEST_CASE("conv2d 1x1 identity kernel reproduces the input") {
  RngStream rng(1, "t");
  Tensor x = random_tensor({1, 1, 4, 4}, rng);
  Tensor w = Tensor::from({1, 1, 1, 1}, {1.0f});
  Tensor y = conv2d(x, w, std::nullopt, 1, 0);
  for (std::int64_t i = 0; i < x.numel(); ++i)
    CHECK(y.data()[i] == doctest::Approx(x.data()[i]));
}

TEST_CASE("conv2d all-ones 3x3 on constant image gives 9c interior") {
  const float c = 0.37f;
  Tensor x = Tensor::full({1, 1, 5, 5}, c);
  Tensor w = Tensor::full({1, 1, 3, 3}, 1.0f);
  Tensor y = conv2d(x, w, std::nullopt, 1, 1);
  CHECK(y.dim(2) == 5);
  // direct summation oracle for the interior
  CHECK(y.data()[1 * 5 + 1] == doctest::Approx(9.0f * c));
  CHECK(y.data()[2 * 5 + 3] == doctest::Approx(9.0f * c));
  // corner touches 4 pixels only
  CHECK(y.data()[0] == doctest::Approx(4.0f * c));
}

TEST_CASE("conv2d zero weight with bias yields constant bias") {
  RngStream rng(2, "t");
  Tensor x = random_tensor({1, 2, 4, 4}, rng);
  Tensor w({3, 2, 3, 3});
  Tensor b = Tensor::from({3}, {0.5f, -1.0f, 2.0f});
  Tensor y = conv2d(x, w, b, 1, 1);
  for (int o = 0; o < 3; ++o)
    for (int i = 0; i < 16; ++i)
      CHECK(y.data()[o * 16 + i] == doctest::Approx(b.data()[o]));
}

TEST_CASE("conv2d shape mismatch is a contract violation") {
  Tensor x({1, 2, 4, 4});
  Tensor w({1, 3, 3, 3});
  CHECK_THROWS_AS(conv2d(x, w, std::nullopt, 1, 1), ContractError);
}

TEST_CASE("resample factor 1 is the identity") {
  RngStream rng(3, "t");
  Tensor x = random_tensor({1, 2, 3, 3}, rng);
  Tensor y = resample(x, 1, 1, ResampleMode::Bilinear);
  for (std::int64_t i = 0; i < x.numel(); ++i)
    CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("nearest x2 duplicates pixels into 2x2 blocks") {
  Tensor x = Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor y = resample(x, 2, 1, ResampleMode::Nearest);
  std::vector<float> want = {1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
  for (std::size_t i = 0; i < want.size(); ++i)
    CHECK(y.data()[i] == want[i]);
}

TEST_CASE("bilinear x2 then average-pool x2 stays close to the original") {
  // smooth field: the round trip blurs, so the bound needs low-frequency data
  RngStream rng(4, "t");
  Tensor x({1, 1, 8, 8});
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j)
      x.data()[i * 8 + j] =
          0.5f + 0.3f * std::sin(2.0f * 3.14159265f * i / 8.0f) *
                     std::cos(2.0f * 3.14159265f * j / 8.0f) +
          rng.uniform(-0.05f, 0.05f);
  Tensor up = resample(x, 2, 1, ResampleMode::Bilinear);
  Tensor down = avg_pool(up, 2);
  float worst = 0.0f;
  for (std::int64_t i = 0; i < x.numel(); ++i)
    worst = std::max(worst, std::abs(down.data()[i] - x.data()[i]));
  CHECK(worst < 0.25f);
}

TEST_CASE("resample rejects non-integral output sizes") {
  Tensor x({1, 1, 5, 5});
  CHECK_THROWS_AS(resample(x, 1, 2, ResampleMode::Bilinear), ContractError);
}

TEST_CASE("activation values") {
  Tensor x = Tensor::from({3}, {0.0f, -1.0f, 2.0f});
  CHECK(sigmoid(x).data()[0] == doctest::Approx(0.5f));
  CHECK(leaky_relu(x).data()[1] == doctest::Approx(-0.2f));
  CHECK(relu(x).data()[1] == 0.0f);
  CHECK(relu(x).data()[2] == 2.0f);
}

TEST_CASE("relu gradient is 1 above zero and 0 below") {
  Tensor x = Tensor::from({2}, {2.0f, -2.0f}, true);
  Tape tape;
  TapeScope scope(tape);
  Tensor y = relu(x);
  Tensor loss = sum_all(y);
  backward(loss);
  CHECK(x.grad_vec()[0] == doctest::Approx(1.0f));
  CHECK(x.grad_vec()[1] == doctest::Approx(0.0f));
}

TEST_CASE("normalize: constant channel collapses to beta") {
  Tensor x = Tensor::full({1, 2, 3, 3}, 0.7f);
  Tensor gamma = Tensor::full({2}, 1.0f);
  Tensor beta = Tensor::from({2}, {0.25f, -0.5f});
  Tensor y = normalize(x, NormKind::BatchNorm, gamma, beta);
  for (int i = 0; i < 9; ++i) {
    CHECK(y.data()[i] == doctest::Approx(0.25f));
    CHECK(y.data()[9 + i] == doctest::Approx(-0.5f));
  }
}

TEST_CASE("normalize: +-1 data is nearly unchanged with identity affine") {
  Tensor x = Tensor::from({1, 1, 1, 2}, {-1.0f, 1.0f});
  Tensor gamma = Tensor::full({1}, 1.0f);
  Tensor beta = Tensor::full({1}, 0.0f);
  Tensor y = normalize(x, NormKind::ChannelNorm, gamma, beta);
  CHECK(y.data()[0] == doctest::Approx(-1.0f).epsilon(1e-4));
  CHECK(y.data()[1] == doctest::Approx(1.0f).epsilon(1e-4));
}

TEST_CASE("normalize: per-channel output mean is zero with beta=0") {
  RngStream rng(5, "t");
  Tensor x = random_tensor({1, 3, 6, 6}, rng);
  Tensor gamma = Tensor::full({3}, 1.3f);
  Tensor beta = Tensor::full({3}, 0.0f);
  Tensor y = normalize(x, NormKind::BatchNorm, gamma, beta);
  for (int c = 0; c < 3; ++c) {
    double m = 0.0;
    for (int i = 0; i < 36; ++i) m += y.data()[c * 36 + i];
    CHECK(std::abs(m / 36.0) < 1e-5);
  }
}

TEST_CASE("mse examples") {
  Tensor a = Tensor::from({2}, {0.0f, 0.0f});
  Tensor b = Tensor::from({2}, {1.0f, 1.0f});
  CHECK(mse(a, a).item() == 0.0f);
  CHECK(mse(a, b).item() == doctest::Approx(1.0f));

  Tensor w = Tensor::from({2}, {0.0f, 1.0f});
  Tensor b2 = Tensor::from({2}, {1.0f, 0.0f});  // differs only where masked
  CHECK(mse(a, b2, w).item() == doctest::Approx(0.0f));

  Tensor zero_w = Tensor::from({2}, {0.0f, 0.0f});
  CHECK_THROWS_AS(mse(a, b, zero_w), ContractError);
}

TEST_CASE("backward examples") {
  SUBCASE("d(mse)/da") {
    Tensor a = Tensor::from({2}, {1.0f, 0.0f}, true);
    Tensor b = Tensor::from({2}, {0.0f, 0.0f});
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = mse(a, b);
    backward(loss);
    CHECK(a.grad_vec()[0] == doctest::Approx(1.0f));
    CHECK(a.grad_vec()[1] == doctest::Approx(0.0f));
  }
  SUBCASE("sigmoid gradient at 0 is 0.25") {
    Tensor x = Tensor::from({1}, {0.0f}, true);
    Tape tape;
    TapeScope scope(tape);
    Tensor y = sum_all(sigmoid(x));
    backward(y);
    CHECK(x.grad_vec()[0] == doctest::Approx(0.25f));
  }
  SUBCASE("unused tensor gets a zero gradient") {
    Tensor a = Tensor::from({2}, {1.0f, 2.0f}, true);
    Tensor b = Tensor::from({1}, {3.0f}, true);
    Tape tape;
    TapeScope scope(tape);
    Tensor ya = sum_all(a);  // recorded but irrelevant to the loss
    (void)ya;
    Tensor loss = sum_all(sigmoid(b));
    backward(loss);
    a.ensure_grad();
    CHECK(a.grad_vec()[0] == 0.0f);
    CHECK(a.grad_vec()[1] == 0.0f);
  }
  SUBCASE("non-scalar loss is rejected") {
    Tensor a = Tensor::from({2}, {1.0f, 2.0f}, true);
    Tape tape;
    TapeScope scope(tape);
    Tensor y = relu(a);
    CHECK_THROWS_AS(backward(y), ContractError);
  }
}

TEST_CASE("gradient check: every layer type on random small tensors") {
  RngStream rng(99, "gradcheck");
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    // conv2d with bias
    {
      Tensor x = random_tensor({1, 3, 4, 4}, rng);
      Tensor w = random_tensor({2, 3, 3, 3}, rng);
      Tensor b = random_tensor({2}, rng);
      Tensor target = random_tensor({1, 2, 4, 4}, rng);
      std::vector<Tensor> params = {x, w, b};
      worst = std::max(worst, gradient_check(params, [&]() {
        return mse(conv2d(x, w, b, 1, 1), target);
      }));
    }
    // strided conv
    {
      Tensor x = random_tensor({1, 2, 4, 4}, rng);
      Tensor w = random_tensor({2, 2, 3, 3}, rng);
      Tensor target = random_tensor({1, 2, 2, 2}, rng);
      std::vector<Tensor> params = {x, w};
      worst = std::max(worst, gradient_check(params, [&]() {
        return mse(conv2d(x, w, std::nullopt, 2, 1), target);
      }));
    }
    // activations
    for (auto kind :
         {Activation::Relu, Activation::LeakyRelu, Activation::Sigmoid}) {
      Tensor x = random_tensor({1, 1, 3, 3}, rng);
      // keep relu away from the kink
      for (std::int64_t i = 0; i < x.numel(); ++i)
        if (std::abs(x.data()[i]) < 0.05f) x.data()[i] = 0.1f;
      Tensor target = random_tensor({1, 1, 3, 3}, rng);
      std::vector<Tensor> params = {x};
      worst = std::max(worst, gradient_check(params, [&]() {
        return mse(activation(x, kind), target);
      }));
    }
    // normalization (both kinds), including affine gradients
    for (auto kind : {NormKind::BatchNorm, NormKind::ChannelNorm}) {
      Tensor x = random_tensor({1, 2, 3, 3}, rng);
      Tensor gamma = random_tensor({2}, rng, 0.5f, 1.5f);
      Tensor beta = random_tensor({2}, rng);
      Tensor target = random_tensor({1, 2, 3, 3}, rng);
      std::vector<Tensor> params = {x, gamma, beta};
      worst = std::max(worst, gradient_check(params, [&]() {
        return mse(normalize(x, kind, gamma, beta), target);
      }));
    }
    // resampling and pooling
    {
      Tensor x = random_tensor({1, 2, 3, 3}, rng);
      Tensor target = random_tensor({1, 2, 6, 6}, rng);
      std::vector<Tensor> params = {x};
      worst = std::max(worst, gradient_check(params, [&]() {
        return mse(resample(x, 2, 1, ResampleMode::Bilinear), target);
      }));
      Tensor target2 = random_tensor({1, 2, 6, 6}, rng);
      worst = std::max(worst, gradient_check(params, [&]() {
        return mse(resample(x, 2, 1, ResampleMode::Nearest), target2);
      }));
    }
    {
      Tensor x = random_tensor({1, 2, 4, 4}, rng);
      Tensor target = random_tensor({1, 2, 2, 2}, rng);
      std::vector<Tensor> params = {x};
      worst = std::max(worst, gradient_check(params, [&]() {
        return mse(avg_pool(x, 2), target);
      }));
    }
    // concat + weighted mse
    {
      Tensor a = random_tensor({1, 1, 3, 3}, rng);
      Tensor b = random_tensor({1, 2, 3, 3}, rng);
      Tensor target = random_tensor({1, 3, 3, 3}, rng);
      Tensor w({1, 3, 3, 3});
      for (std::int64_t i = 0; i < w.numel(); ++i)
        w.data()[i] = (rng.uniform01() < 0.6f) ? 1.0f : 0.0f;
      w.data()[0] = 1.0f;
      std::vector<Tensor> params = {a, b};
      worst = std::max(worst, gradient_check(params, [&]() {
        return mse(concat_channels(a, b), target, w);
      }));
    }
  }
  // float32 forward limits central differences to roughly 1e-3 here
  CHECK(worst < 5e-3);
}

TEST_CASE("determinism: same seed gives bit-identical results") {
  auto run = [](std::uint64_t seed) {
    RngStream rng(seed, "det");
    Tensor x = random_tensor({1, 3, 8, 8}, rng);
    Tensor w = random_tensor({4, 3, 3, 3}, rng);
    Tensor gamma = Tensor::full({4}, 1.0f);
    Tensor beta = Tensor::full({4}, 0.0f);
    Tensor y = normalize(conv2d(x, w, std::nullopt, 1, 1),
                         NormKind::BatchNorm, gamma, beta);
    return sigmoid(y);
  };
  Tensor a = run(42), b = run(42);
  for (std::int64_t i = 0; i < a.numel(); ++i)
    CHECK(a.data()[i] == b.data()[i]);
}

TEST_CASE("no NaN/Inf escapes ops on finite inputs") {
  RngStream rng(6, "t");
  Tensor x = random_tensor({1, 3, 8, 8}, rng, -100.0f, 100.0f);
  Tensor w = random_tensor({4, 3, 3, 3}, rng, -10.0f, 10.0f);
  Tensor gamma = Tensor::full({4}, 1.0f);
  Tensor beta = Tensor::full({4}, 0.0f);
  Tensor y = conv2d(x, w, std::nullopt, 1, 1);
  CHECK(y.all_finite());
  Tensor n = normalize(y, NormKind::BatchNorm, gamma, beta);
  CHECK(n.all_finite());
  CHECK(sigmoid(n).all_finite());
  Tensor constant = Tensor::full({1, 4, 8, 8}, 3.0f);
  CHECK(normalize(constant, NormKind::ChannelNorm, gamma, beta).all_finite());
}
