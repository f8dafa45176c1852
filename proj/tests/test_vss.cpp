#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <random>

#include "doctest.h"
#include "grad_check.hpp"
#include "mahnet/vss.hpp"

using namespace mahnet;

namespace {

void zero_all(VSSParams<double>& p) {
  for (auto* t : p.trainable()) std::fill(t->values().begin(), t->values().end(), 0.0);
}

void set_identity(TensorD& w) {
  REQUIRE(w.rank() == 2);
  REQUIRE(w.dim(0) == w.dim(1));
  std::fill(w.values().begin(), w.values().end(), 0.0);
  for (int i = 0; i < w.dim(0); ++i) w[static_cast<long>(i) * w.dim(1) + i] = 1.0;
}

}  // namespace

TEST_CASE("scan_perm: 2x2 map orders") {
  // map [[a,b],[c,d]] in row-major is (a,b,c,d)
  CHECK(scan_perm(2, 2, 0) == std::vector<int>{0, 1, 2, 3});
  CHECK(scan_perm(2, 2, 1) == std::vector<int>{3, 2, 1, 0});
  CHECK(scan_perm(2, 2, 2) == std::vector<int>{0, 2, 1, 3});
  CHECK(scan_perm(2, 2, 3) == std::vector<int>{3, 1, 2, 0});
}

TEST_CASE("scan_2d: 1x1 map gives identical sequences in all directions") {
  TensorD x({1, 1, 1, 3}, {1.0, 2.0, 3.0});
  for (int d = 0; d < 4; ++d) {
    TensorD s = scan_2d(x, d);
    CHECK(s.shape() == Shape{1, 1, 3});
    CHECK(s.values() == x.values());
  }
}

TEST_CASE("scan_2d direction 0 and 1 on a 2x2 map") {
  TensorD x({1, 2, 2, 1}, {1.0, 2.0, 3.0, 4.0});  // a,b,c,d
  CHECK(scan_2d(x, 0).values() == std::vector<double>{1, 2, 3, 4});
  CHECK(scan_2d(x, 1).values() == std::vector<double>{4, 3, 2, 1});
  CHECK(scan_2d(x, 2).values() == std::vector<double>{1, 3, 2, 4});
  CHECK(scan_2d(x, 3).values() == std::vector<double>{4, 2, 3, 1});
}

TEST_CASE("merge_2d inverts each single direction exactly") {
  Rng rng(5);
  TensorD x = random_uniform<double>({2, 3, 4, 5}, rng);
  for (int d = 0; d < 4; ++d) {
    TensorD back = merge_2d<double>({scan_2d(x, d)}, 3, 4, {d});
    CHECK(back.shape() == x.shape());
    CHECK(back.values() == x.values());
  }
}

TEST_CASE("merge of all four scans is the identity exactly") {
  Rng rng(6);
  TensorD x = random_uniform<double>({2, 4, 3, 2}, rng);
  std::vector<TensorD> seqs;
  for (int d = 0; d < 4; ++d) seqs.push_back(scan_2d(x, d));
  TensorD back = merge_2d(seqs, 4, 3, {0, 1, 2, 3});
  CHECK(back.values() == x.values());
}

TEST_CASE("scan/merge gradients flow through the permutation") {
  Rng rng(7);
  std::vector<TensorD> inputs{random_uniform<double>({1, 2, 3, 2}, rng)};
  auto f = [](std::vector<TensorD>& in) {
    std::vector<TensorD> seqs;
    for (int d = 0; d < 4; ++d) seqs.push_back(scan_2d(in[0], d));
    TensorD m = merge_2d(seqs, 2, 3, {0, 1, 2, 3});
    return sum_all(mul(m, m));
  };
  auto res = mahnet::testing::check_gradients(f, inputs);
  CHECK(res.max_err <= 1e-4);
}

TEST_CASE("ssm_seq time-invariant path matches the recurrence oracle") {
  Rng rng(11);
  const int n = 3, L = 24;
  auto p = make_ssm_layer<double>(1, n, SSMMode::kLti, rng);

  ContinuousSSM oracle;
  oracle.A = hippo_legs(n);
  oracle.B = VectorXd(n);
  oracle.C = RowVectorXd(n);
  for (int j = 0; j < n; ++j) {
    oracle.B(j) = p.B[j];
    oracle.C(j) = p.C[j];
  }
  oracle.D = p.D[0];
  DiscreteSSM d = discretize_bilinear(oracle, std::exp(p.log_delta[0]));

  std::vector<double> u(L);
  std::mt19937_64 r2(12);
  std::uniform_real_distribution<double> dist(-1, 1);
  for (auto& v : u) v = dist(r2);
  auto expect = scan_recurrent(d, u);

  TensorD x({1, L, 1}, u);
  TensorD y = ssm_seq(p, x);
  for (int t = 0; t < L; ++t)
    CHECK(y[t] == doctest::Approx(expect[static_cast<size_t>(t)]).epsilon(1e-12));
}

TEST_CASE("ssm_seq gradients: time-invariant mode vs finite differences") {
  for (uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(100 + seed);
    auto p = make_ssm_layer<double>(2, 2, SSMMode::kLti, rng);
    std::vector<TensorD> inputs{random_uniform<double>({2, 5, 2}, rng), p.B, p.C, p.D,
                                p.log_delta};
    auto f = [&p](std::vector<TensorD>& in) {
      TensorD y = ssm_seq(p, in[0]);
      return sum_all(mul(y, y));
    };
    auto res = mahnet::testing::check_gradients(f, inputs);
    CHECK(res.max_err <= 1e-4);
  }
}

TEST_CASE("ssm_seq gradients: selective mode vs finite differences") {
  for (uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(200 + seed);
    auto p = make_ssm_layer<double>(2, 2, SSMMode::kSelective, rng);
    std::vector<TensorD> inputs{random_uniform<double>({2, 5, 2}, rng), p.B, p.C, p.D,
                                p.log_delta, p.delta_w};
    auto f = [&p](std::vector<TensorD>& in) {
      TensorD y = ssm_seq(p, in[0]);
      return sum_all(mul(y, y));
    };
    auto res = mahnet::testing::check_gradients(f, inputs);
    CHECK(res.max_err <= 1e-4);
  }
}

TEST_CASE("vss_forward: all-zero weights give the output bias (zero)") {
  Rng rng(21);
  VSSConfig cfg;
  cfg.channels = 4;
  auto p = make_vss<double>(cfg, rng);
  zero_all(p);
  TensorD x = random_uniform<double>({2, 6, 4}, rng);
  TensorD y = vss_forward(p, x, 2, 3);
  for (long i = 0; i < y.size(); ++i) CHECK(y[i] == 0.0);
}

TEST_CASE("vss_forward shape contract: 2x16x8 with expansion 2") {
  Rng rng(22);
  VSSConfig cfg;
  cfg.channels = 8;
  cfg.expansion = 2;
  auto p = make_vss<double>(cfg, rng);
  CHECK(p.w_in1.shape() == Shape{8, 16});
  TensorD x = random_uniform<double>({2, 16, 8}, rng);
  TensorD y = vss_forward(p, x, 4, 4);
  CHECK(y.shape() == Shape{2, 16, 8});
}

TEST_CASE("vss branch 1 composes with a hand-set scalar state space") {
  // A chosen so the bilinear transform lands on Abar=0.5, Bbar=Cbar=1.
  Rng rng(23);
  VSSConfig cfg;
  cfg.channels = 1;
  cfg.expansion = 1;
  cfg.state_dim = 1;
  cfg.directions = 1;
  cfg.mode = SSMMode::kLti;
  auto p = make_vss<double>(cfg, rng);
  set_identity(p.w_in1);
  set_identity(p.w_out);
  std::fill(p.b_in1.values().begin(), p.b_in1.values().end(), 0.0);
  std::fill(p.b_out.values().begin(), p.b_out.values().end(), 0.0);
  p.disable_dwconv = p.disable_silu = p.disable_gate = p.disable_norm = true;
  p.ssm.A[0] = -2.0 / 3.0;
  p.ssm.log_delta[0] = 0.0;
  p.ssm.B[0] = 4.0 / 3.0;
  p.ssm.C[0] = 1.0;
  p.ssm.D[0] = 0.0;

  TensorD x({1, 3, 1}, {1.0, 0.0, 0.0});
  TensorD y = vss_forward(p, x, 1, 3);
  CHECK(y[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(y[1] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(y[2] == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("vss with identity linears reduces to LayerNorm of the SSM") {
  Rng rng(24);
  VSSConfig cfg;
  cfg.channels = 3;
  cfg.expansion = 1;
  cfg.state_dim = 2;
  cfg.directions = 1;
  cfg.mode = SSMMode::kLti;
  auto p = make_vss<double>(cfg, rng);
  set_identity(p.w_in1);
  set_identity(p.w_out);
  std::fill(p.b_in1.values().begin(), p.b_in1.values().end(), 0.0);
  std::fill(p.b_out.values().begin(), p.b_out.values().end(), 0.0);
  p.disable_dwconv = p.disable_silu = p.disable_gate = true;

  TensorD x = random_uniform<double>({2, 8, 3}, rng);
  TensorD y = vss_forward(p, x, 2, 4);
  TensorD expect = normalize(NormKind::kLayer, ssm_seq(p.ssm, x), p.ln_g, p.ln_b, 1e-5);
  REQUIRE(y.shape() == expect.shape());
  for (long i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(expect[i]).epsilon(1e-14));
}

TEST_CASE("vm_layer: zero VSS and unit s reduce to LayerNorm of the input") {
  Rng rng(31);
  VSSConfig cfg;
  cfg.channels = 4;
  auto p = make_vm_layer<double>(cfg, rng);
  zero_all(p.vss);
  p.identity_projection = true;
  TensorD x = random_uniform<double>({2, 6, 4}, rng);
  TensorD y = vm_layer_forward(p, x, 2, 3);
  TensorD expect = normalize(NormKind::kLayer, x, p.ln2_g, p.ln2_b, 1e-5);
  for (long i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(expect[i]).epsilon(1e-14));
}

TEST_CASE("vm_layer: zero s and zero VSS give the projection bias") {
  Rng rng(32);
  VSSConfig cfg;
  cfg.channels = 3;
  auto p = make_vm_layer<double>(cfg, rng);
  zero_all(p.vss);
  std::fill(p.s.values().begin(), p.s.values().end(), 0.0);
  for (long i = 0; i < p.proj_b.size(); ++i) p.proj_b[i] = 0.25 * static_cast<double>(i + 1);
  TensorD x = random_uniform<double>({1, 4, 3}, rng);
  TensorD y = vm_layer_forward(p, x, 2, 2);
  for (int l = 0; l < 4; ++l)
    for (int c = 0; c < 3; ++c)
      CHECK(y[static_cast<long>(l) * 3 + c] == doctest::Approx(p.proj_b[c]).epsilon(1e-12));
}

TEST_CASE("vm_layer: gradient with respect to s matches finite differences") {
  Rng rng(33);
  VSSConfig cfg;
  cfg.channels = 4;
  cfg.state_dim = 2;
  auto p = make_vm_layer<double>(cfg, rng);
  std::vector<TensorD> inputs{p.s};
  TensorD x = random_uniform<double>({2, 8, 4}, rng);
  auto f = [&p, &x](std::vector<TensorD>&) {
    TensorD y = vm_layer_forward(p, x, 2, 4);
    return sum_all(mul(y, y));
  };
  auto res = mahnet::testing::check_gradients(f, inputs);
  CHECK(res.max_err <= 1e-4);
}

TEST_CASE("vm_layer end-to-end gradient check over 10 seeds") {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(400 + seed);
    VSSConfig cfg;
    cfg.channels = 2;
    cfg.expansion = 2;
    cfg.state_dim = 2;
    cfg.directions = 4;
    cfg.mode = seed < 5 ? SSMMode::kLti : SSMMode::kSelective;
    auto p = make_vm_layer<double>(cfg, rng);

    std::vector<TensorD> inputs{random_uniform<double>({1, 4, 2}, rng)};
    for (auto* t : p.trainable()) inputs.push_back(*t);
    auto f = [&p](std::vector<TensorD>& in) {
      TensorD y = vm_layer_forward(p, in[0], 2, 2);
      return sum_all(mul(y, y));
    };
    // h = 1e-6: the stacked layer norms make the loss curvature large
    // enough that a wider step is dominated by truncation error
    auto res = mahnet::testing::check_gradients(f, inputs, 1e-6);
    CHECK(res.max_err <= 1e-4);
  }
}

TEST_CASE("vss and vm_layer preserve shape across valid configs") {
  Rng rng(55);
  for (int dirs : {1, 2, 4})
    for (auto mode : {SSMMode::kLti, SSMMode::kSelective}) {
      VSSConfig cfg;
      cfg.channels = 3;
      cfg.expansion = 2;
      cfg.state_dim = 2;
      cfg.directions = dirs;
      cfg.mode = mode;
      auto vm = make_vm_layer<double>(cfg, rng);
      TensorD x = random_uniform<double>({2, 12, 3}, rng);
      CHECK(vss_forward(vm.vss, x, 3, 4).shape() == x.shape());
      CHECK(vm_layer_forward(vm, x, 3, 4).shape() == x.shape());
    }
}

TEST_CASE("config validation rejects bad direction counts") {
  VSSConfig cfg;
  cfg.channels = 4;
  cfg.directions = 3;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}
