#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "grad_check.hpp"
#include "mahnet/conv.hpp"
#include "mahnet/ops.hpp"

using namespace mahnet;
using mahnet::testing::check_gradients;

TEST_CASE("hand-checked gradients") {
  // d/dx sum(relu(x)) at x=2 is 1
  TensorD x = TensorD::scalar(2.0, true);
  TapeD tape;
  {
    TapeD::Scope s(tape);
    auto loss = sum_all(relu(x));
    tape.backward(loss);
  }
  CHECK(x.grad()[0] == doctest::Approx(1.0));

  // d/dx sum(sigmoid(x)) at 0 is 0.25
  TensorD z = TensorD::scalar(0.0, true);
  TapeD tape2;
  {
    TapeD::Scope s(tape2);
    auto loss = sum_all(sigmoid(z));
    tape2.backward(loss);
  }
  CHECK(z.grad()[0] == doctest::Approx(0.25));
}

TEST_CASE("backward rejects non-scalar loss") {
  TensorD x({2}, {1.0, 2.0}, true);
  TapeD tape;
  TapeD::Scope s(tape);
  auto y = relu(x);
  CHECK_THROWS(tape.backward(y));
}

TEST_CASE("disconnected tensors get zero gradient") {
  TensorD x = TensorD::scalar(1.0, true);
  TensorD other = TensorD::scalar(5.0, true);
  TapeD tape;
  {
    TapeD::Scope s(tape);
    auto loss = sum_all(mul(x, x));
    tape.backward(loss);
  }
  CHECK(other.grad()[0] == 0.0);
}

TEST_CASE("activation gradients vs finite differences, 20 seeds") {
  for (auto kind : {Activation::kRelu, Activation::kSilu, Activation::kSigmoid,
                    Activation::kSoftplus}) {
    for (int seed = 0; seed < 20; ++seed) {
      Rng rng(100 + seed);
      // keep relu inputs away from the kink
      auto x = random_uniform<double>({2, 3}, rng, 0.1, 2.0);
      if (seed % 2) for (long i = 0; i < x.size(); ++i) x[i] = -x[i] - 0.1;
      std::vector<TensorD> in{x};
      auto res = check_gradients(
          [kind](std::vector<TensorD>& v) { return sum_all(apply_activation(kind, v[0])); }, in);
      CHECK(res.max_err <= 1e-4);
    }
  }
}

TEST_CASE("elementwise and broadcast op gradients") {
  for (int seed = 0; seed < 20; ++seed) {
    Rng rng(200 + seed);
    auto a = random_uniform<double>({2, 2, 2, 3}, rng);
    auto b = random_uniform<double>({2, 2, 2, 3}, rng);
    auto v = random_uniform<double>({3}, rng);
    auto r = random_uniform<double>({2, 2, 2, 1}, rng);
    std::vector<TensorD> in{a, b, v, r};
    check_gradients(
        [](std::vector<TensorD>& t) {
          auto y = mul(add(t[0], t[1]), t[1]);
          y = add_channel(y, t[2]);
          y = mul_channel(y, t[2]);
          y = mul_spatial(y, t[3]);
          return sum_all(scale(y, 0.5));
        },
        in);
  }
}

TEST_CASE("linear gradients") {
  for (int seed = 0; seed < 20; ++seed) {
    Rng rng(300 + seed);
    auto x = random_uniform<double>({2, 4, 3}, rng);
    auto w = random_uniform<double>({3, 5}, rng);
    auto b = random_uniform<double>({5}, rng);
    std::vector<TensorD> in{x, w, b};
    check_gradients(
        [](std::vector<TensorD>& t) {
          return sum_all(sigmoid(linear(t[0], t[1], &t[2])));
        },
        in);
  }
}

TEST_CASE("softmax gradients") {
  for (int seed = 0; seed < 20; ++seed) {
    Rng rng(400 + seed);
    auto x = random_uniform<double>({1, 2, 2, 4}, rng, -2.0, 2.0);
    auto w = random_uniform<double>({1, 2, 2, 4}, rng);
    std::vector<TensorD> in{x, w};
    check_gradients(
        [](std::vector<TensorD>& t) { return sum_all(mul(softmax_channel(t[0]), t[1])); }, in);
  }
}

TEST_CASE("normalize gradients (layer and batch)") {
  for (int seed = 0; seed < 10; ++seed) {
    Rng rng(500 + seed);
    auto x = random_uniform<double>({2, 2, 2, 3}, rng);
    auto g = random_uniform<double>({3}, rng, 0.5, 1.5);
    auto b = random_uniform<double>({3}, rng);
    auto w = random_uniform<double>({2, 2, 2, 3}, rng);
    std::vector<TensorD> in{x, g, b};
    check_gradients(
        [&w](std::vector<TensorD>& t) {
          return sum_all(mul(normalize(NormKind::kLayer, t[0], t[1], t[2], 1e-5), w));
        },
        in);
    check_gradients(
        [&w](std::vector<TensorD>& t) {
          return sum_all(mul(normalize(NormKind::kBatch, t[0], t[1], t[2], 1e-5), w));
        },
        in);
  }
}

TEST_CASE("conv2d gradients: standard, transpose, depthwise") {
  for (int seed = 0; seed < 10; ++seed) {
    Rng rng(600 + seed);
    auto x = random_uniform<double>({1, 3, 3, 2}, rng);
    auto w = random_uniform<double>({3, 3, 2, 3}, rng);
    auto b = random_uniform<double>({3}, rng);
    auto m = random_uniform<double>({1, 3, 3, 3}, rng);
    std::vector<TensorD> in{x, w, b};
    check_gradients(
        [&m](std::vector<TensorD>& t) {
          return sum_all(mul(conv_same(t[0], t[1], &t[2]), m));
        },
        in);

    auto wt = random_uniform<double>({3, 3, 2, 3}, rng);
    auto mt = random_uniform<double>({1, 6, 6, 3}, rng);
    std::vector<TensorD> int_{x, wt};
    check_gradients(
        [&mt](std::vector<TensorD>& t) {
          return sum_all(mul(conv_transpose(t[0], t[1], nullptr, 2), mt));
        },
        int_);

    auto wd = random_uniform<double>({3, 3, 2, 1}, rng);
    auto md = random_uniform<double>({1, 3, 3, 2}, rng);
    std::vector<TensorD> ind{x, wd};
    check_gradients(
        [&md](std::vector<TensorD>& t) {
          return sum_all(mul(conv_depthwise(t[0], t[1]), md));
        },
        ind);
  }
}

TEST_CASE("random conv graph analytic vs finite differences") {
  for (int seed = 0; seed < 10; ++seed) {
    Rng rng(700 + seed);
    auto x = random_uniform<double>({1, 4, 4, 1}, rng);
    auto w1 = random_uniform<double>({3, 3, 1, 2}, rng);
    auto w2 = random_uniform<double>({3, 3, 2, 1}, rng);
    std::vector<TensorD> in{x, w1, w2};
    check_gradients(
        [](std::vector<TensorD>& t) {
          auto h = relu(conv_same(t[0], t[1]));
          auto p = pool_max2d(h);
          auto y = sigmoid(conv_same(p, t[2]));
          return sum_all(y);
        },
        in);
  }
}

TEST_CASE("pool, concat, crop, log gradients") {
  for (int seed = 0; seed < 10; ++seed) {
    Rng rng(800 + seed);
    auto a = random_uniform<double>({1, 4, 4, 2}, rng, 0.1, 1.0);
    auto b = random_uniform<double>({1, 4, 4, 1}, rng, 0.1, 1.0);
    std::vector<TensorD> in{a, b};
    check_gradients(
        [](std::vector<TensorD>& t) {
          auto c = concat_channels(t[0], t[1]);
          auto p = pool_max2d(c);
          auto cr = crop_center(c, 2, 2);
          return sum_all(add(log_clamped(p), cr));
        },
        in);
  }
}

TEST_CASE("determinism: identical inputs give bit-identical outputs") {
  Rng rng1(42), rng2(42);
  auto x1 = random_normal<double>({2, 4, 4, 3}, rng1);
  auto x2 = random_normal<double>({2, 4, 4, 3}, rng2);
  auto w1 = random_normal<double>({3, 3, 3, 4}, rng1);
  auto w2 = random_normal<double>({3, 3, 3, 4}, rng2);
  auto y1 = silu(conv_same(x1, w1));
  auto y2 = silu(conv_same(x2, w2));
  for (long i = 0; i < y1.size(); ++i) CHECK(y1[i] == y2[i]);
}
