#include <doctest.h>

#include <cmath>

#include "fairfader/rng.hpp"
#include "fairfader/tensor.hpp"

using namespace fairfader;

TEST_CASE("conv2d shape contract at paper geometry") {
  std::mt19937 rng(1);
  auto x = uniform<float>({1, 3, 256, 256}, -1.f, 1.f, rng);
  auto w = uniform<float>({16, 3, 4, 4}, -0.1f, 0.1f, rng);
  auto b = zeros<float>({16});
  auto y = conv2d<float>(nullptr, x, w, b, 2, 1);
  CHECK(y->shape == Shape{1, 16, 128, 128});
}

TEST_CASE("conv2d zero weight and bias gives zero output of contract shape") {
  std::mt19937 rng(2);
  auto x = uniform<float>({2, 3, 8, 8}, -1.f, 1.f, rng);
  auto w = zeros<float>({4, 3, 3, 3});
  auto b = zeros<float>({4});
  auto y = conv2d<float>(nullptr, x, w, b, 1, 1);
  CHECK(y->shape == Shape{2, 4, 8, 8});
  for (float v : y->values) CHECK(v == 0.0f);
}

TEST_CASE("conv2d all-ones 4x4 kernel with stride 2 pad 1") {
  auto x = full<float>({1, 1, 4, 4}, 1.0f);
  auto w = full<float>({1, 1, 4, 4}, 1.0f);
  auto b = zeros<float>({1});
  auto y = conv2d<float>(nullptr, x, w, b, 2, 1);
  REQUIRE(y->shape == Shape{1, 1, 2, 2});
  for (float v : y->values) CHECK(v == doctest::Approx(9.0f).epsilon(1e-6));
}

TEST_CASE("conv2d names the offending dimension on mismatch") {
  auto x = zeros<float>({1, 4, 8, 8});
  auto w = zeros<float>({2, 3, 3, 3});
  auto b = zeros<float>({2});
  CHECK_THROWS_WITH_AS(conv2d<float>(nullptr, x, w, b, 1, 1),
                       doctest::Contains("input channel extent 4"), std::invalid_argument);
  auto w2 = zeros<float>({2, 4, 9, 9});
  CHECK_THROWS_AS(conv2d<float>(nullptr, x, w2, b, 1, 0), std::invalid_argument);
}

TEST_CASE("deconv2d undoes six halvings back to 256") {
  auto x = full<float>({1, 1, 4, 4}, 0.5f);
  auto w = full<float>({1, 1, 4, 4}, 0.1f);
  auto b = zeros<float>({1});
  TensorPtr h = x;
  for (int i = 0; i < 6; ++i) h = deconv2d<float>(nullptr, h, w, b, 2, 1);
  CHECK(h->shape == Shape{1, 1, 256, 256});
}

TEST_CASE("deconv2d zero weight gives zero output") {
  std::mt19937 rng(3);
  auto x = uniform<float>({1, 2, 3, 3}, -1.f, 1.f, rng);
  auto w = zeros<float>({2, 3, 4, 4});
  auto b = zeros<float>({3});
  auto y = deconv2d<float>(nullptr, x, w, b, 2, 1);
  CHECK(y->shape == Shape{1, 3, 6, 6});
  for (float v : y->values) CHECK(v == 0.0f);
}

TEST_CASE("conv then matching deconv restores spatial extents") {
  std::mt19937 rng(4);
  for (auto [k, s, p] : {std::tuple{4, 2, 1}, std::tuple{3, 1, 1}, std::tuple{5, 3, 2},
                         std::tuple{2, 2, 0}}) {
    // legal geometry: the conv consumes its input with no remainder
    int64_t H = 12;
    H += (s - (H + 2 * p - k) % s) % s;
    auto x = uniform<float>({1, 2, H, H}, -1.f, 1.f, rng);
    auto w = uniform<float>({3, 2, k, k}, -0.5f, 0.5f, rng);
    auto bc = zeros<float>({3});
    auto bd = zeros<float>({2});
    auto y = conv2d<float>(nullptr, x, w, bc, s, p);
    auto back = deconv2d<float>(nullptr, y, w, bd, s, p);
    CHECK(back->shape[2] == H);
    CHECK(back->shape[3] == H);
  }
}

TEST_CASE("batchnorm2d constant channel trains to beta") {
  auto x = full<float>({4, 2, 3, 3}, 5.0f);
  auto gamma = full<float>({2}, 1.0f);
  auto beta = make_tensor<float>({2}, {0.7f, -0.3f});
  auto state = make_batchnorm_state<float>(2);
  auto y = batchnorm2d<float>(nullptr, x, gamma, beta, state, Mode::Train);
  for (int64_t n = 0; n < 4; ++n)
    for (int64_t c = 0; c < 2; ++c)
      for (int64_t i = 0; i < 9; ++i)
        CHECK(y->values[(size_t)((n * 2 + c) * 9 + i)] ==
              doctest::Approx(beta->values[(size_t)c]).epsilon(1e-3));
}

TEST_CASE("batchnorm2d normalizes to zero mean unit variance") {
  std::mt19937 rng(5);
  auto x = uniform<float>({4, 3, 6, 6}, -2.f, 3.f, rng);
  auto gamma = full<float>({3}, 1.0f);
  auto beta = zeros<float>({3});
  auto state = make_batchnorm_state<float>(3);
  auto y = batchnorm2d<float>(nullptr, x, gamma, beta, state, Mode::Train);
  const int64_t m = 4 * 36;
  for (int64_t c = 0; c < 3; ++c) {
    double mean = 0, var = 0;
    for (int64_t n = 0; n < 4; ++n)
      for (int64_t i = 0; i < 36; ++i) mean += y->values[(size_t)((n * 3 + c) * 36 + i)];
    mean /= m;
    for (int64_t n = 0; n < 4; ++n)
      for (int64_t i = 0; i < 36; ++i) {
        const double d = y->values[(size_t)((n * 3 + c) * 36 + i)] - mean;
        var += d * d;
      }
    var /= m;
    CHECK(std::abs(mean) < 1e-4);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-4));
  }
}

TEST_CASE("batchnorm2d rejects train-mode batch of one") {
  auto x = zeros<float>({1, 2, 3, 3});
  auto gamma = full<float>({2}, 1.0f);
  auto beta = zeros<float>({2});
  auto state = make_batchnorm_state<float>(2);
  CHECK_THROWS_AS(batchnorm2d<float>(nullptr, x, gamma, beta, state, Mode::Train),
                  std::invalid_argument);
  CHECK_NOTHROW(batchnorm2d<float>(nullptr, x, gamma, beta, state, Mode::Eval));
}

TEST_CASE("batchnorm2d eval uses running statistics") {
  auto x = full<float>({1, 1, 2, 2}, 3.0f);
  auto gamma = full<float>({1}, 2.0f);
  auto beta = full<float>({1}, 1.0f);
  auto state = make_batchnorm_state<float>(1);
  state.running_mean->values[0] = 1.0f;
  state.running_var->values[0] = 4.0f;
  auto y = batchnorm2d<float>(nullptr, x, gamma, beta, state, Mode::Eval);
  // 2*(3-1)/sqrt(4+eps) + 1
  CHECK(y->values[0] == doctest::Approx(3.0f).epsilon(1e-4));
}

TEST_CASE("activation values") {
  auto x = make_tensor<float>({3}, {-1.0f, 3.0f, -5.0f});
  auto leaky = activation<float>(nullptr, x, Act::leaky_relu(0.2));
  CHECK(leaky->values[0] == doctest::Approx(-0.2f));
  auto relu = activation<float>(nullptr, x, Act::relu());
  CHECK(relu->values[1] == 3.0f);
  CHECK(relu->values[2] == 0.0f);
  auto th = activation<float>(nullptr, x, Act::tanh());
  CHECK(th->values[1] == doctest::Approx(std::tanh(3.0f)));
}

TEST_CASE("maxpool2d basics") {
  auto x = make_tensor<float>({1, 1, 2, 2}, {1, 2, 3, 4});
  auto y = maxpool2d<float>(nullptr, x, 2);
  CHECK(y->shape == Shape{1, 1, 1, 1});
  CHECK(y->values[0] == 4.0f);

  auto c = full<float>({2, 3, 4, 4}, 0.25f);
  auto yc = maxpool2d<float>(nullptr, c, 2);
  CHECK(yc->shape == Shape{2, 3, 2, 2});
  for (float v : yc->values) CHECK(v == 0.25f);

  auto bad = zeros<float>({1, 1, 3, 3});
  CHECK_THROWS_AS(maxpool2d<float>(nullptr, bad, 2), std::invalid_argument);
}

TEST_CASE("linear identity, constant, and naive-matmul oracle") {
  auto x = make_tensor<float>({2, 3}, {1, 2, 3, 4, 5, 6});
  auto eye = make_tensor<float>({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  auto zb = zeros<float>({3});
  auto y = linear<float>(nullptr, x, eye, zb);
  CHECK(y->values == x->values);

  auto zw = zeros<float>({4, 3});
  auto b = make_tensor<float>({4}, {1, 2, 3, 4});
  auto yb = linear<float>(nullptr, x, zw, b);
  for (int64_t i = 0; i < 2; ++i)
    for (int64_t j = 0; j < 4; ++j) CHECK(yb->values[(size_t)(i * 4 + j)] == b->values[(size_t)j]);

  std::mt19937 rng(6);
  auto xr = uniform<float>({3, 4}, -1.f, 1.f, rng);
  auto wr = uniform<float>({2, 4}, -1.f, 1.f, rng);
  auto br = uniform<float>({2}, -1.f, 1.f, rng);
  auto yr = linear<float>(nullptr, xr, wr, br);
  for (int64_t i = 0; i < 3; ++i)
    for (int64_t j = 0; j < 2; ++j) {
      double acc = br->values[(size_t)j];
      for (int64_t k = 0; k < 4; ++k)
        acc += (double)xr->values[(size_t)(i * 4 + k)] * (double)wr->values[(size_t)(j * 4 + k)];
      CHECK(yr->values[(size_t)(i * 2 + j)] == doctest::Approx(acc).epsilon(1e-6));
    }

  auto wbad = zeros<float>({2, 5});
  CHECK_THROWS_AS(linear<float>(nullptr, xr, wbad, br), std::invalid_argument);
}

TEST_CASE("dropout semantics") {
  std::mt19937 rng(7);
  auto x = uniform<float>({100, 100}, 0.5f, 1.5f, rng);

  auto id_train = dropout<float>(nullptr, x, 0.0, Mode::Train, rng);
  CHECK(id_train->values == x->values);
  auto id_eval = dropout<float>(nullptr, x, 0.9, Mode::Eval, rng);
  CHECK(id_eval->values == x->values);

  auto y = dropout<float>(nullptr, x, 0.5, Mode::Train, rng);
  int64_t survived = 0;
  double mean_x = 0, mean_y = 0;
  for (size_t i = 0; i < y->values.size(); ++i) {
    if (y->values[i] != 0.0f) survived++;
    mean_x += x->values[i];
    mean_y += y->values[i];
  }
  const double frac = (double)survived / (double)y->numel();
  CHECK(frac > 0.47);
  CHECK(frac < 0.53);
  CHECK(std::abs(mean_y - mean_x) / std::abs(mean_x) < 0.05);

  CHECK_THROWS_AS(dropout<float>(nullptr, x, 1.0, Mode::Train, rng), std::invalid_argument);
}

TEST_CASE("mse_loss values and errors") {
  auto a = full<float>({2, 3}, 1.0f);
  auto b = zeros<float>({2, 3});
  CHECK(mse_loss<float>(nullptr, a, a)->values[0] == 0.0f);
  CHECK(mse_loss<float>(nullptr, a, b)->values[0] == doctest::Approx(1.0f));
  auto c = zeros<float>({3, 2});
  CHECK_THROWS_AS(mse_loss<float>(nullptr, a, c), std::invalid_argument);
}

TEST_CASE("softmax_nll analytic cases") {
  auto uniform_logits = zeros<float>({1, 5});
  auto l = softmax_nll<float>(nullptr, uniform_logits, {2});
  CHECK(l->values[0] == doctest::Approx(std::log(5.0)).epsilon(1e-5));

  auto saturated = zeros<float>({1, 5});
  saturated->values[3] = 1e4f;
  CHECK(softmax_nll<float>(nullptr, saturated, {3})->values[0] == doctest::Approx(0.0).epsilon(1e-6));

  CHECK_THROWS_AS(softmax_nll<float>(nullptr, uniform_logits, {5}), std::invalid_argument);
  std::vector<float> w = {-1.0f};
  CHECK_THROWS_AS(softmax_nll<float>(nullptr, uniform_logits, {1}, &w), std::invalid_argument);
}

TEST_CASE("softmax_rows sums to one") {
  std::mt19937 rng(8);
  auto logits = uniform<float>({4, 5}, -3.f, 3.f, rng);
  auto probs = softmax_rows<float>(logits);
  for (int i = 0; i < 4; ++i) {
    double s = 0;
    for (int k = 0; k < 5; ++k) {
      CHECK(probs[(size_t)(i * 5 + k)] >= 0.0f);
      s += probs[(size_t)(i * 5 + k)];
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-5));
  }
}

TEST_CASE("backward: linear case, fan-out accumulation, zero-grad leaves") {
  auto x = make_tensor<float>({4}, {1, 2, 3, 4}, true);
  Graph g;
  auto s = sum<float>(&g, x);
  g.backward(s);
  for (float v : x->grad) CHECK(v == 1.0f);

  auto x2 = make_tensor<float>({3}, {1, 2, 3}, true);
  Graph g2;
  auto y2 = add<float>(&g2, x2, x2);
  auto s2 = sum<float>(&g2, y2);
  g2.backward(s2);
  for (float v : x2->grad) CHECK(v == 2.0f);

  // a leaf the loss does not depend on still gets a populated zero grad
  auto used = make_tensor<float>({2}, {1, 2}, true);
  auto unused = make_tensor<float>({2}, {5, 6}, true);
  Graph g3;
  auto h = add<float>(&g3, used, zeros<float>({2}));
  auto sums = sum<float>(&g3, h);
  auto dead = scale<float>(&g3, unused, 3.0f);
  (void)dead;
  g3.backward(sums);
  REQUIRE(unused->has_grad());
  for (float v : unused->grad) CHECK(v == 0.0f);

  auto vec = make_tensor<float>({2}, {1, 2}, true);
  Graph g4;
  auto out = scale<float>(&g4, vec, 2.0f);
  CHECK_THROWS_AS(g4.backward(out), std::invalid_argument);
}

TEST_CASE("sgd_step definition, degenerate rate, missing grad") {
  auto theta = scalar_tensor<float>(1.0f, true);
  theta->ensure_grad();
  theta->grad[0] = 2.0f;
  sgd_step<float>({theta}, 0.1);
  CHECK(theta->values[0] == doctest::Approx(0.8f));
  CHECK_FALSE(theta->has_grad());

  auto frozen = scalar_tensor<float>(1.5f, true);
  frozen->ensure_grad();
  frozen->grad[0] = 7.0f;
  sgd_step<float>({frozen}, 0.0);
  CHECK(frozen->values[0] == 1.5f);

  auto missing = scalar_tensor<float>(1.0f, true);
  CHECK_THROWS_AS(sgd_step<float>({missing}, 0.1), std::runtime_error);
}

TEST_CASE("one sgd step on (theta-3)^2 strictly decreases the loss") {
  auto theta = scalar_tensor<float>(0.0f, true);
  auto target = scalar_tensor<float>(3.0f);
  auto loss_at = [&]() {
    auto d = mse_loss<float>(nullptr, theta, target);
    return d->values[0];
  };
  const float before = loss_at();
  Graph g;
  auto loss = mse_loss<float>(&g, theta, target);
  g.backward(loss);
  sgd_step<float>({theta}, 0.1);
  CHECK(loss_at() < before);
}

TEST_CASE("ops are deterministic under a fixed seed") {
  auto run = [](uint32_t seed) {
    std::mt19937 rng(seed);
    auto x = uniform<float>({8, 8}, -1.f, 1.f, rng);
    auto y = dropout<float>(nullptr, x, 0.3, Mode::Train, rng);
    return y->values;
  };
  CHECK(run(42) == run(42));
  CHECK(run(42) != run(43));
}
