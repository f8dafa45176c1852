#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>

#include "doctest.h"
#include "grad_check.hpp"
#include "mahnet/network.hpp"

using namespace mahnet;

namespace {

NetworkSpec tiny_spec() {
  NetworkSpec s;
  s.depth = 1;
  s.base_filters = 2;
  s.input_h = 16;
  s.input_w = 16;
  s.use_mamba = true;
  s.mamba_mode = SSMMode::kLti;
  s.use_reconstruction = true;
  s.state_dim = 2;
  s.directions = 1;
  return s;
}

DatasetBundle tiny_bundle(uint64_t seed, int n) { return synth_dataset(seed, n, 16); }

std::string scratch_dir(const std::string& leaf) {
  auto p = std::filesystem::temp_directory_path() / leaf;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p.string();
}

}  // namespace

TEST_CASE("spec validation rejects bad configurations") {
  NetworkSpec s = tiny_spec();
  CHECK_NOTHROW(s.validate());
  s.base_filters = 3;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s = tiny_spec();
  s.depth = 3;  // 16 not divisible by 8
  s.input_h = 20;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s = tiny_spec();
  s.num_classes = 1;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
}

TEST_CASE("forward emits softmax maps of the expected shape") {
  Network net = build_network(tiny_spec(), 11);
  Rng rng(3);
  TensorD img = random_uniform<double>({1, 16, 16, 1}, rng, 0.0, 1.0);
  ForwardOut out = forward(net, img, true);
  CHECK(out.seg.shape() == Shape{1, 16, 16, 2});
  REQUIRE(out.recon.has_value());
  CHECK(out.recon->shape() == Shape{1, 16, 16, 2});
  for (long i = 0; i < out.seg.size(); ++i) CHECK(std::isfinite(out.seg[i]));
}

TEST_CASE("segmentation and reconstruction probabilities sum to one per pixel") {
  Network net = build_network(tiny_spec(), 4);
  Rng rng(9);
  TensorD img = random_uniform<double>({2, 16, 16, 1}, rng, 0.0, 1.0);
  ForwardOut out = forward(net, img, true);
  for (long p = 0; p < out.seg.size() / 2; ++p) {
    CHECK(out.seg[2 * p] + out.seg[2 * p + 1] == doctest::Approx(1.0).epsilon(1e-9));
    CHECK((*out.recon)[2 * p] + (*out.recon)[2 * p + 1] == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("all four ablation variants build, run and train") {
  DatasetBundle data = tiny_bundle(77, 4);
  for (bool mamba : {false, true})
    for (bool recon : {false, true}) {
      NetworkSpec s = tiny_spec();
      s.use_mamba = mamba;
      s.use_reconstruction = recon;
      Network net = build_network(s, 21);
      Rng rng(1);
      TensorD img = random_uniform<double>({1, 16, 16, 1}, rng, 0.0, 1.0);
      ForwardOut out = forward(net, img, true);
      CHECK(out.seg.dim(3) == 2);
      CHECK(out.recon.has_value() == recon);
      TrainConfig cfg;
      cfg.epochs = 1;
      cfg.seed = 2;
      TrainingReport rep = train(net, LossWeights{}, data, cfg);
      REQUIRE(rep.losses.size() == 1);
      CHECK(std::isfinite(rep.losses[0]));
    }
}

TEST_CASE("initialization is bit-identical per seed and differs across seeds") {
  Network a = build_network(tiny_spec(), 123);
  Network b = build_network(tiny_spec(), 123);
  Network c = build_network(tiny_spec(), 124);
  NamedTensors sa = a.state(), sb = b.state(), sc = c.state();
  REQUIRE(sa.entries.size() == sb.entries.size());
  bool any_diff = false;
  for (const auto& [name, t] : sa.entries) {
    const TensorD& u = sb.entries.at(name);
    REQUIRE(t.size() == u.size());
    for (long i = 0; i < t.size(); ++i) CHECK(t[i] == u[i]);
    auto it = sc.entries.find(name);
    if (it != sc.entries.end())
      for (long i = 0; i < t.size(); ++i)
        if (t[i] != it->second[i]) any_diff = true;
  }
  CHECK(any_diff);
}

TEST_CASE("mamba stages add parameters over the plain variant") {
  NetworkSpec plain = tiny_spec();
  plain.use_mamba = false;
  Network p = build_network(plain, 1);
  Network m = build_network(tiny_spec(), 1);
  CHECK(p.param_count() > 0);
  CHECK(m.param_count() > p.param_count());
}

TEST_CASE("out-of-range inputs throw in strict mode and clamp otherwise") {
  NetworkSpec s = tiny_spec();
  s.strict_input_range = true;
  Network net = build_network(s, 6);
  TensorD img = TensorD::full({1, 16, 16, 1}, 0.5);
  img[0] = 1.5;
  CHECK_THROWS_AS(forward(net, img, false), std::invalid_argument);

  net.spec.strict_input_range = false;
  TensorD clamped = img;
  clamped[0] = 1.0;
  ForwardOut a = forward(net, img, false);
  ForwardOut b = forward(net, clamped, false);
  for (long i = 0; i < a.seg.size(); ++i) CHECK(a.seg[i] == b.seg[i]);
}

TEST_CASE("cross entropy vanishes on a perfect one-hot prediction") {
  TensorD probs({1, 2, 2, 2});
  TensorD gt({1, 2, 2, 2});
  for (int p = 0; p < 4; ++p) {
    int cls = p % 2;
    probs[2 * p + cls] = 1.0;
    gt[2 * p + cls] = 1.0;
  }
  LossWeights w;
  TensorD loss = combined_loss(probs, gt, nullptr, TensorD({1, 2, 2, 1}), w);
  CHECK(std::abs(loss[0]) <= 1e-6);
}

TEST_CASE("cross entropy is non-negative for interior probabilities") {
  Rng rng(8);
  TensorD raw = random_uniform<double>({1, 3, 3, 2}, rng);
  TensorD probs = softmax_channel(raw);
  TensorD gt({1, 3, 3, 2});
  for (int p = 0; p < 9; ++p) gt[2 * p + (p % 2)] = 1.0;
  LossWeights w;
  TensorD loss = combined_loss(probs, gt, nullptr, TensorD({1, 3, 3, 1}), w);
  CHECK(loss[0] > 0.0);
}

TEST_CASE("loss rejects targets that are not one-hot") {
  TensorD probs = softmax_channel(TensorD::full({1, 2, 2, 2}, 0.3));
  TensorD gt = TensorD::full({1, 2, 2, 2}, 0.5);
  LossWeights w;
  CHECK_THROWS_AS(combined_loss(probs, gt, nullptr, TensorD({1, 2, 2, 1}), w),
                  std::invalid_argument);
}

TEST_CASE("soft dice is zero on identical masks and near one on disjoint ones") {
  const int npix = 64;
  TensorD probs({1, 8, 8, 2});
  TensorD gt({1, 8, 8, 2});
  for (int p = 0; p < npix; ++p) {
    int cls = p < 32 ? 0 : 1;
    probs[2 * p + cls] = 1.0;
    gt[2 * p + cls] = 1.0;
  }
  LossWeights w;
  w.seg_loss = SegLoss::kSoftDice;
  TensorD same = combined_loss(probs, gt, nullptr, TensorD({1, 8, 8, 1}), w);
  CHECK(std::abs(same[0]) <= 1e-12);

  TensorD flipped({1, 8, 8, 2});
  for (int p = 0; p < npix; ++p) flipped[2 * p + (p < 32 ? 1 : 0)] = 1.0;
  TensorD disj = combined_loss(probs, flipped, nullptr, TensorD({1, 8, 8, 1}), w);
  // 1 - eps / (2*npix + eps) with eps = 1
  CHECK(disj[0] == doctest::Approx(1.0 - 1.0 / (2.0 * npix + 1.0)).epsilon(1e-12));
}

TEST_CASE("combined loss gradient matches finite differences") {
  Rng rng(17);
  TensorD seg_raw = random_uniform<double>({1, 4, 4, 2}, rng, -1.0, 1.0);
  TensorD rec_raw = random_uniform<double>({1, 4, 4, 2}, rng, -1.0, 1.0);
  TensorD gt({1, 4, 4, 2});
  for (int p = 0; p < 16; ++p) gt[2 * p + (p % 3 == 0 ? 1 : 0)] = 1.0;
  TensorD img({1, 4, 4, 1});
  for (int p = 0; p < 16; ++p) img[p] = (p + 0.5) / 16.0;

  for (SegLoss kind : {SegLoss::kCrossEntropy, SegLoss::kSoftDice, SegLoss::kSum}) {
    LossWeights w;
    w.seg_loss = kind;
    std::vector<TensorD> inputs = {seg_raw, rec_raw};
    auto f = [&](std::vector<TensorD>& in) {
      TensorD recon = softmax_channel(in[1]);
      return combined_loss(softmax_channel(in[0]), gt, &recon, img, w);
    };
    CHECK_NOTHROW(mahnet::testing::check_gradients(f, inputs));
  }
}

TEST_CASE("intensity binning is equal-width with the top edge in the last bin") {
  TensorD img({1, 1, 4, 1}, {0.0, 0.24, 0.5, 1.0});
  TensorD bins = intensity_bins(img, 4);
  CHECK(bins.shape() == Shape{1, 1, 4, 4});
  CHECK(bins[0] == 1.0);   // 0.0 -> bin 0
  CHECK(bins[4] == 1.0);   // 0.24 -> bin 0
  CHECK(bins[10] == 1.0);  // 0.5 -> bin 2
  CHECK(bins[15] == 1.0);  // 1.0 -> bin 3
  for (long i = 0; i < bins.size(); ++i) CHECK((bins[i] == 0.0 || bins[i] == 1.0));
}

TEST_CASE("one training epoch reports loss, wall time and a checkpoint") {
  std::string dir = scratch_dir("mahnet_train_bookkeeping");
  Network net = build_network(tiny_spec(), 33);
  DatasetBundle data = tiny_bundle(5, 4);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.seed = 3;
  cfg.checkpoint_dir = dir;
  TrainingReport rep = train(net, LossWeights{}, data, cfg);
  REQUIRE(rep.epochs == std::vector<int>{0, 1});
  REQUIRE(rep.losses.size() == 2);
  REQUIRE(rep.seconds.size() == 2);
  for (double s : rep.seconds) CHECK(s > 0.0);
  REQUIRE(rep.checkpoints.size() == 2);
  for (const auto& p : rep.checkpoints) CHECK(std::filesystem::exists(p));
  NamedTensors ts = load_checkpoint(rep.checkpoints[1]);
  CHECK(ts.entries.at("epoch")[0] == 2.0);
  CHECK(ts.entries.count("opt.step") == 1);
}

TEST_CASE("training loss decreases over the first epochs") {
  Network net = build_network(tiny_spec(), 7);
  DatasetBundle data = tiny_bundle(19, 8);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.lr = 3e-3;
  cfg.seed = 7;
  TrainingReport rep = train(net, LossWeights{}, data, cfg);
  REQUIRE(rep.losses.size() == 5);
  for (size_t i = 1; i < rep.losses.size(); ++i) CHECK(rep.losses[i] < rep.losses[i - 1]);
}

TEST_CASE("resuming from a checkpoint reproduces the uninterrupted run bit for bit") {
  DatasetBundle data = tiny_bundle(42, 6);
  TrainConfig base;
  base.epochs = 4;
  base.seed = 13;
  base.batch_size = 3;

  Network full = build_network(tiny_spec(), 55);
  std::string dir_a = scratch_dir("mahnet_resume_full");
  TrainConfig cfg_a = base;
  cfg_a.checkpoint_dir = dir_a;
  TrainingReport rep_full = train(full, LossWeights{}, data, cfg_a);

  Network half = build_network(tiny_spec(), 55);
  std::string dir_b = scratch_dir("mahnet_resume_half");
  TrainConfig cfg_b = base;
  cfg_b.epochs = 2;
  cfg_b.checkpoint_dir = dir_b;
  train(half, LossWeights{}, data, cfg_b);

  Network resumed = build_network(tiny_spec(), 999);  // seed must not matter after restore
  TrainConfig cfg_c = base;
  cfg_c.resume_from = dir_b + "/epoch_2.ckpt";
  TrainingReport rep_res = train(resumed, LossWeights{}, data, cfg_c);

  REQUIRE(rep_res.losses.size() == 2);
  CHECK(rep_res.losses[0] == rep_full.losses[2]);
  CHECK(rep_res.losses[1] == rep_full.losses[3]);

  NamedTensors sa = full.state(), sb = resumed.state();
  REQUIRE(sa.entries.size() == sb.entries.size());
  for (const auto& [name, t] : sa.entries) {
    const TensorD& u = sb.entries.at(name);
    for (long i = 0; i < t.size(); ++i) CHECK(t[i] == u[i]);
  }
}

TEST_CASE("argmax mask extraction picks the dominant channel") {
  TensorD seg({1, 2, 2, 2}, {0.9, 0.1, 0.2, 0.8, 0.5, 0.5, 0.3, 0.7});
  Mask2D m = seg_to_mask(seg);
  CHECK(m.at(0, 0) == 0);
  CHECK(m.at(0, 1) == 1);
  CHECK(m.at(1, 0) == 0);  // ties go to the background class
  CHECK(m.at(1, 1) == 1);
}

TEST_CASE("evaluation reports all six metric columns with hand-checked means") {
  Network net = build_network(tiny_spec(), 3);
  DatasetBundle data = tiny_bundle(8, 3);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.seed = 1;
  train(net, LossWeights{}, data, cfg);  // initializes the norm running stats
  MetricsReport rep = evaluate(net, data);
  REQUIRE(rep.cases.size() == 3);
  for (const std::string& name : {"DSC", "RAVD", "ASD", "MHD", "AUC", "IoU"})
    CHECK(rep.defined.count(name) == 1);
  CHECK(rep.defined.at("DSC") == 3);
  CHECK(rep.defined.at("AUC") == 3);

  double hand = 0.0;
  int n = 0;
  for (const auto& c : rep.cases)
    if (c.dsc) {
      hand += *c.dsc;
      ++n;
    }
  REQUIRE(n == rep.defined.at("DSC"));
  CHECK(rep.mean.at("DSC") == doctest::Approx(hand / n).epsilon(1e-12));
}

TEST_CASE("evaluation-mode outputs are independent of batch composition") {
  Network net = build_network(tiny_spec(), 20);
  DatasetBundle data = tiny_bundle(30, 4);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.seed = 4;
  train(net, LossWeights{}, data, cfg);

  TensorD a = image_to_tensor(data.records[0].image);
  TensorD b = image_to_tensor(data.records[1].image);
  TensorD both({2, 16, 16, 1});
  for (long i = 0; i < a.size(); ++i) {
    both[i] = a[i];
    both[a.size() + i] = b[i];
  }
  ForwardOut oa = forward(net, a, false);
  ForwardOut ob = forward(net, b, false);
  ForwardOut o2 = forward(net, both, false);
  for (long i = 0; i < oa.seg.size(); ++i) {
    CHECK(o2.seg[i] == doctest::Approx(oa.seg[i]).epsilon(1e-12));
    CHECK(o2.seg[oa.seg.size() + i] == doctest::Approx(ob.seg[i]).epsilon(1e-12));
  }
}

TEST_CASE("state round-trips through a checkpoint including running stats") {
  Network net = build_network(tiny_spec(), 61);
  DatasetBundle data = tiny_bundle(9, 4);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.seed = 6;
  train(net, LossWeights{}, data, cfg);

  std::string path = scratch_dir("mahnet_state_rt") + "/net.ckpt";
  save_checkpoint(net.state(), path);
  Network other = build_network(tiny_spec(), 62);
  other.load_state(load_checkpoint(path));

  TensorD img = image_to_tensor(data.records[0].image);
  ForwardOut x = forward(net, img, false);
  ForwardOut y = forward(other, img, false);
  for (long i = 0; i < x.seg.size(); ++i) CHECK(x.seg[i] == y.seg[i]);
}
