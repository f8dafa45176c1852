#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "mahnet/checkpoint.hpp"
#include "mahnet/conv.hpp"
#include "mahnet/fft.hpp"
#include "mahnet/ops.hpp"
#include "mahnet/optim.hpp"

using namespace mahnet;

TEST_CASE("activations match hand values") {
  TensorD x({3}, {-1.0, 0.0, 2.0});
  auto r = relu(x);
  CHECK(r[0] == 0.0);
  CHECK(r[1] == 0.0);
  CHECK(r[2] == 2.0);

  auto s = sigmoid(TensorD::scalar(0.0));
  CHECK(s[0] == doctest::Approx(0.5));

  // silu(1) = 1 * 1/(1+e^-1)
  auto g = silu(TensorD::scalar(1.0));
  CHECK(g[0] == doctest::Approx(0.7310586).epsilon(1e-6));

  CHECK_THROWS(activation_from_string("tanh"));
}

TEST_CASE("activation rejects non-finite input") {
  TensorD x({1}, std::vector<double>{std::numeric_limits<double>::infinity()});
  CHECK_THROWS(relu(x));
}

TEST_CASE("softmax_channel") {
  TensorD x({1, 1, 1, 2}, {0.0, 0.0});
  auto y = softmax_channel(x);
  CHECK(y[0] == doctest::Approx(0.5));
  CHECK(y[1] == doctest::Approx(0.5));

  TensorD big({1, 1, 1, 2}, {1000.0, 0.0});
  auto yb = softmax_channel(big);
  CHECK(yb[0] == doctest::Approx(1.0));
  CHECK(yb[1] == doctest::Approx(0.0));

  TensorD e({1, 1, 1, 2}, {1.0, 0.0});
  auto ye = softmax_channel(e);
  double ev = std::exp(1.0);
  CHECK(ye[0] == doctest::Approx(ev / (ev + 1)).epsilon(1e-6));
  CHECK(ye[1] == doctest::Approx(1 / (ev + 1)).epsilon(1e-6));

  // rows sum to 1 for random logits
  Rng rng(11);
  auto r = random_normal<double>({2, 3, 3, 5}, rng, 0.0, 10.0);
  auto yr = softmax_channel(r);
  for (long p = 0; p < yr.size() / 5; ++p) {
    double s = 0;
    for (int j = 0; j < 5; ++j) s += yr[p * 5 + j];
    CHECK(std::abs(s - 1.0) < 1e-9);
  }
}

TEST_CASE("convolve2d identity kernel and hand values") {
  Rng rng(3);
  auto x = random_uniform<double>({1, 4, 4, 2}, rng);
  // 1x1 identity kernel over channels
  TensorD w({1, 1, 2, 2});
  w[0] = 1.0;  // (0,0,0,0)
  w[3] = 1.0;  // (0,0,1,1)
  auto y = conv_same(x, w);
  for (long i = 0; i < x.size(); ++i) CHECK(y[i] == doctest::Approx(x[i]));

  // all-ones 3x3 on all-ones 3x3 input, same padding
  auto ones = TensorD::full({1, 3, 3, 1}, 1.0);
  auto wk = TensorD::full({3, 3, 1, 1}, 1.0);
  auto z = conv_same(ones, wk);
  CHECK(z.at(0, 1, 1, 0) == doctest::Approx(9.0));
  CHECK(z.at(0, 0, 0, 0) == doctest::Approx(4.0));
  CHECK(z.at(0, 0, 2, 0) == doctest::Approx(4.0));
  CHECK(z.at(0, 2, 2, 0) == doctest::Approx(4.0));
  CHECK(z.at(0, 0, 1, 0) == doctest::Approx(6.0));
}

TEST_CASE("convolve2d transpose shape and depthwise constraint") {
  Rng rng(5);
  auto x = random_uniform<double>({1, 4, 4, 3}, rng);
  auto w = random_uniform<double>({3, 3, 3, 6}, rng);
  auto y = conv_transpose(x, w, nullptr, 2);
  CHECK(y.dim(1) == 8);
  CHECK(y.dim(2) == 8);
  CHECK(y.dim(3) == 6);

  auto wd = random_uniform<double>({3, 3, 3, 1}, rng);
  auto yd = conv_depthwise(x, wd);
  CHECK(yd.dim(3) == 3);

  TensorD bad({3, 3, 2, 1});
  CHECK_THROWS(conv_depthwise(x, bad));
  CHECK_THROWS(convolve2d(x, w, nullptr, 0, Padding::kSame, ConvMode::kStandard));
}

TEST_CASE("transpose conv then crop inverts conv shape on even extents") {
  Rng rng(7);
  auto x = random_uniform<double>({1, 8, 8, 2}, rng);
  auto w = random_uniform<double>({3, 3, 2, 4}, rng);
  auto down = conv_same(x, w, nullptr, 2);  // 4x4
  auto wt = random_uniform<double>({3, 3, 4, 2}, rng);
  auto up = conv_transpose(down, wt, nullptr, 2);  // 8x8
  CHECK(up.dim(1) == x.dim(1));
  CHECK(up.dim(2) == x.dim(2));
}

TEST_CASE("normalize layer mode") {
  TensorD g({3}, {1.0, 1.0, 1.0});
  TensorD b({3}, {0.0, 0.0, 0.0});
  TensorD x({1, 1, 1, 3}, {1.0, 1.0, 1.0});
  auto y = normalize(NormKind::kLayer, x, g, b, 1e-5);
  for (int j = 0; j < 3; ++j) CHECK(y[j] == doctest::Approx(0.0));

  TensorD g2({2}, {1.0, 1.0});
  TensorD b2({2}, {0.0, 0.0});
  TensorD x2({1, 1, 1, 2}, {1.0, -1.0});
  auto y2 = normalize(NormKind::kLayer, x2, g2, b2, 1e-12);
  CHECK(y2[0] == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(y2[1] == doctest::Approx(-1.0).epsilon(1e-5));

  CHECK_THROWS(normalize(NormKind::kLayer, x, g, b, 0.0));
}

TEST_CASE("normalize batch mode constant input gives beta") {
  TensorD g({2}, {2.0, 2.0});
  TensorD b({2}, {3.0, 3.0});
  auto x = TensorD::full({2, 2, 2, 2}, 5.0);
  RunningStats<double> stats;
  auto y = normalize(NormKind::kBatch, x, g, b, 1e-5, &stats, true);
  for (long i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(3.0));
  CHECK(stats.initialized);
  CHECK(stats.mean[0] == doctest::Approx(5.0));
}

TEST_CASE("fft round trips and known spectra") {
  auto spec = fft_real({1.0, 0.0, 0.0, 0.0});
  REQUIRE(spec.size() == 4);
  for (auto& c : spec) {
    CHECK(c.real() == doctest::Approx(1.0));
    CHECK(c.imag() == doctest::Approx(0.0));
  }

  auto dc = fft_real(std::vector<double>(8, 3.0));
  CHECK(dc[0].real() == doctest::Approx(24.0));
  for (size_t i = 1; i < dc.size(); ++i) CHECK(std::abs(dc[i]) < 1e-10);

  Rng rng(17);
  for (size_t n : {1u, 2u, 3u, 17u, 100u, 512u}) {
    std::vector<double> x(n);
    std::uniform_real_distribution<double> d(-1, 1);
    for (auto& v : x) v = d(rng);
    auto back = ifft_real(fft_real(x), n);
    for (size_t i = 0; i < n; ++i) CHECK(std::abs(back[i] - x[i]) < 1e-10);
  }
}

TEST_CASE("pool, concat, crop") {
  TensorD x({1, 2, 2, 1}, {1.0, 2.0, 3.0, 4.0});
  auto p = pool_max2d(x);
  CHECK(p.size() == 1);
  CHECK(p[0] == 4.0);

  Rng rng(9);
  auto a = random_uniform<double>({1, 2, 2, 3}, rng);
  auto b = random_uniform<double>({1, 2, 2, 5}, rng);
  auto cc = concat_channels(a, b);
  CHECK(cc.dim(3) == 8);
  CHECK(cc.at(0, 1, 1, 0) == a.at(0, 1, 1, 0));
  CHECK(cc.at(0, 1, 1, 3) == b.at(0, 1, 1, 0));

  // crop 5x5 to 3x3 keeps rows/cols 1..3
  TensorD big({1, 5, 5, 1});
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) big.at(0, i, j, 0) = i * 10 + j;
  auto cr = crop_center(big, 3, 3);
  CHECK(cr.at(0, 0, 0, 0) == 11.0);
  CHECK(cr.at(0, 2, 2, 0) == 33.0);
  CHECK_THROWS(crop_center(cr, 5, 5));
}

TEST_CASE("optimizer steps") {
  TensorD p({1}, std::vector<double>{1.0});
  p.set_requires_grad(true);
  p.grad()[0] = 2.0;
  std::vector<TensorD> params{p};
  OptimizerConfig<double> cfg;
  cfg.lr = 0.1;
  optimizer_step(OptimizerKind::kSgd, params, cfg);
  CHECK(params[0][0] == doctest::Approx(0.8));

  // adam at t=1 with constant gradient moves by ~lr
  TensorD q({1}, std::vector<double>{1.0});
  q.set_requires_grad(true);
  q.grad()[0] = 0.3;
  std::vector<TensorD> qs{q};
  optimizer_step(OptimizerKind::kAdam, qs, cfg);
  CHECK(std::abs(1.0 - qs[0][0]) == doctest::Approx(0.1).epsilon(1e-3));

  // zero gradient leaves sgd parameters unchanged
  TensorD z({1}, std::vector<double>{4.0});
  z.set_requires_grad(true);
  std::vector<TensorD> zs{z};
  optimizer_step(OptimizerKind::kSgd, zs, cfg);
  CHECK(zs[0][0] == 4.0);

  cfg.lr = 0.0;
  CHECK_THROWS(Optimizer<double>(cfg));
}

TEST_CASE("checkpoint bit-exact round trip") {
  Rng rng(23);
  NamedTensors ts;
  ts.entries["enc.0.w"] = random_normal<double>({3, 3, 1, 4}, rng);
  ts.entries["ssm.0.log_delta"] = random_normal<double>({8}, rng);
  auto path = std::filesystem::temp_directory_path() / "mahnet_ckpt_test.bin";
  save_checkpoint(ts, path.string());
  auto back = load_checkpoint(path.string());
  REQUIRE(back.entries.size() == 2);
  for (auto& [name, t] : ts.entries) {
    auto& u = back.entries.at(name);
    REQUIRE(u.shape() == t.shape());
    for (long i = 0; i < t.size(); ++i) CHECK(u[i] == t[i]);
  }
  std::filesystem::remove(path);
}

TEST_CASE("tensor invariants") {
  CHECK_THROWS(TensorD({2, 2}, std::vector<double>{1.0}));
  TensorD t({2, 3});
  CHECK(t.size() == 6);
  t.set_requires_grad(true);
  CHECK(t.grad().size() == 6);
}
