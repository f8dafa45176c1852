#pragma once

// Network assembly: encoder/decoder segmentation model with optional
// Mamba-augmented decoder stages and an optional reconstruction branch,
// plus the combined loss, training loop and evaluation.

#include <chrono>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>

#include "mahnet/blocks.hpp"
#include "mahnet/bundle.hpp"
#include "mahnet/checkpoint.hpp"
#include "mahnet/metrics.hpp"
#include "mahnet/optim.hpp"
#include "mahnet/vss.hpp"

namespace mahnet {

struct NetworkSpec {
  int depth = 4;
  int base_filters = 16;
  int num_classes = 2;
  bool use_mamba = true;
  SSMMode mamba_mode = SSMMode::kSelective;
  bool use_reconstruction = true;
  int recon_bins = 0;  // 0 means num_classes
  int input_h = 256, input_w = 256;
  bool strict_input_range = false;
  // Mamba stage details
  int state_dim = 4;
  int directions = 4;
  int expansion = 2;
  // decoder test hook: force every attention gate fully open
  bool gates_open = false;

  int bins() const { return recon_bins > 0 ? recon_bins : num_classes; }

  void validate() const {
    if (depth < 1) throw std::invalid_argument("NetworkSpec: depth must be >= 1");
    if (base_filters < 2 || base_filters % 2 != 0)
      throw std::invalid_argument("NetworkSpec: base_filters must be even and >= 2");
    if (num_classes < 2) throw std::invalid_argument("NetworkSpec: need >= 2 classes");
    int div = 1 << depth;
    if (input_h % div != 0 || input_w % div != 0)
      throw std::invalid_argument("NetworkSpec: input dims must be divisible by 2^depth");
  }
};

struct Network {
  NetworkSpec spec;
  std::vector<DownBlockParams<double>> enc;
  DownBlockParams<double> bottleneck;
  std::vector<VMLayerParams<double>> vm;     // one per decoder stage when enabled
  std::vector<UpBlockParams<double>> dec_att;
  std::vector<ResBlockParams<double>> dec_res;
  TensorD seg_w, seg_b;  // 1x1 head
  ReconHeadParams<double> recon;

  struct Registry {
    std::vector<std::pair<std::string, TensorD*>> params;
    std::vector<std::pair<std::string, RunningStats<double>*>> stats;

    void add(const std::string& name, TensorD* t) { params.push_back({name, t}); }
    void add_bn(const std::string& prefix, BatchNorm2d<double>* bn) {
      add(prefix + ".g", &bn->gamma);
      add(prefix + ".b", &bn->beta);
      stats.push_back({prefix, &bn->stats});
    }
  };

  Registry registry() {
    Registry r;
    for (size_t i = 0; i < enc.size(); ++i) {
      std::string p = "enc." + std::to_string(i);
      r.add(p + ".w1", &enc[i].w1);
      r.add(p + ".w2", &enc[i].w2);
      r.add_bn(p + ".bn1", &enc[i].bn1);
      r.add_bn(p + ".bn2", &enc[i].bn2);
    }
    r.add("bott.w1", &bottleneck.w1);
    r.add("bott.w2", &bottleneck.w2);
    r.add_bn("bott.bn1", &bottleneck.bn1);
    r.add_bn("bott.bn2", &bottleneck.bn2);
    for (size_t i = 0; i < vm.size(); ++i) {
      std::string v = "vm." + std::to_string(i);
      std::string s = "vss." + std::to_string(i);
      std::string m = "ssm." + std::to_string(i);
      r.add(v + ".s", &vm[i].s);
      r.add(v + ".ln1.g", &vm[i].ln1_g);
      r.add(v + ".ln1.b", &vm[i].ln1_b);
      r.add(v + ".ln2.g", &vm[i].ln2_g);
      r.add(v + ".ln2.b", &vm[i].ln2_b);
      r.add(v + ".proj.w", &vm[i].proj_w);
      r.add(v + ".proj.b", &vm[i].proj_b);
      VSSParams<double>& q = vm[i].vss;
      r.add(s + ".in1.w", &q.w_in1);
      r.add(s + ".in1.b", &q.b_in1);
      r.add(s + ".in2.w", &q.w_in2);
      r.add(s + ".in2.b", &q.b_in2);
      r.add(s + ".dw.w", &q.dw_w);
      r.add(s + ".dw.b", &q.dw_b);
      r.add(s + ".ln.g", &q.ln_g);
      r.add(s + ".ln.b", &q.ln_b);
      r.add(s + ".out.w", &q.w_out);
      r.add(s + ".out.b", &q.b_out);
      r.add(m + ".A", &q.ssm.A);
      r.add(m + ".B", &q.ssm.B);
      r.add(m + ".C", &q.ssm.C);
      r.add(m + ".D", &q.ssm.D);
      r.add(m + ".log_delta", &q.ssm.log_delta);
      if (q.ssm.mode == SSMMode::kSelective) r.add(m + ".delta_w", &q.ssm.delta_w);
    }
    for (size_t i = 0; i < dec_att.size(); ++i) {
      std::string p = "dec." + std::to_string(i);
      UpBlockParams<double>& a = dec_att[i];
      r.add(p + ".att.up_w", &a.up_w);
      r.add(p + ".att.post_w", &a.post_w);
      r.add_bn(p + ".att.up_bn", &a.up_bn);
      r.add_bn(p + ".att.post_bn", &a.post_bn);
      r.add(p + ".gate.theta_w", &a.gate.theta_w);
      r.add(p + ".gate.phi_w", &a.gate.phi_w);
      r.add(p + ".gate.psi_w", &a.gate.psi_w);
      r.add(p + ".gate.psi_b", &a.gate.psi_b);
      r.add_bn(p + ".gate.theta_bn", &a.gate.theta_bn);
      r.add_bn(p + ".gate.phi_bn", &a.gate.phi_bn);
      r.add_bn(p + ".gate.psi_bn", &a.gate.psi_bn);
      ResBlockParams<double>& b = dec_res[i];
      r.add(p + ".res.up_w", &b.main.up_w);
      r.add(p + ".res.post_w", &b.main.post_w);
      r.add(p + ".res.proj_w", &b.proj_w);
      r.add_bn(p + ".res.up_bn", &b.main.up_bn);
      r.add_bn(p + ".res.post_bn", &b.main.post_bn);
      r.add(p + ".res.gate.theta_w", &b.main.gate.theta_w);
      r.add(p + ".res.gate.phi_w", &b.main.gate.phi_w);
      r.add(p + ".res.gate.psi_w", &b.main.gate.psi_w);
      r.add(p + ".res.gate.psi_b", &b.main.gate.psi_b);
      r.add_bn(p + ".res.gate.theta_bn", &b.main.gate.theta_bn);
      r.add_bn(p + ".res.gate.phi_bn", &b.main.gate.phi_bn);
      r.add_bn(p + ".res.gate.psi_bn", &b.main.gate.psi_bn);
    }
    r.add("seg.w", &seg_w);
    r.add("seg.b", &seg_b);
    if (spec.use_reconstruction) {
      r.add("recon.w", &recon.w);
      r.add("recon.b", &recon.b);
    }
    return r;
  }

  std::vector<TensorD> trainable_params() {
    std::vector<TensorD> out;
    for (auto& [name, t] : registry().params)
      if (t->requires_grad()) out.push_back(*t);
    return out;
  }

  long param_count() {
    long n = 0;
    for (auto& [name, t] : registry().params) n += t->size();
    return n;
  }

  NamedTensors state() {
    NamedTensors ts;
    Registry r = registry();
    for (auto& [name, t] : r.params) ts.entries[name] = *t;
    for (auto& [name, s] : r.stats) {
      if (!s->initialized) continue;
      ts.entries[name + ".rm"] = TensorD({static_cast<int>(s->mean.size())}, s->mean);
      ts.entries[name + ".rv"] = TensorD({static_cast<int>(s->var.size())}, s->var);
    }
    return ts;
  }

  void load_state(const NamedTensors& ts) {
    Registry r = registry();
    for (auto& [name, t] : r.params) {
      auto it = ts.entries.find(name);
      if (it == ts.entries.end())
        throw std::runtime_error("load_state: missing tensor " + name);
      if (it->second.shape() != t->shape())
        throw std::runtime_error("load_state: shape mismatch for " + name);
      bool rg = t->requires_grad();
      *t = it->second;
      t->set_requires_grad(rg);
    }
    for (auto& [name, s] : r.stats) {
      auto im = ts.entries.find(name + ".rm");
      auto iv = ts.entries.find(name + ".rv");
      if (im == ts.entries.end() || iv == ts.entries.end()) {
        s->initialized = false;
        continue;
      }
      s->mean = im->second.values();
      s->var = iv->second.values();
      s->initialized = true;
    }
  }
};

inline Network build_network(const NetworkSpec& spec, uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  Network net;
  net.spec = spec;

  int cin = 1;
  for (int i = 0; i < spec.depth; ++i) {
    int f = spec.base_filters << i;
    net.enc.push_back(make_down_block<double>(cin, f, rng));
    cin = f;
  }
  int bott_f = spec.base_filters << spec.depth;
  net.bottleneck = make_down_block<double>(cin, bott_f, rng);

  int cur = bott_f;
  for (int j = 0; j < spec.depth; ++j) {
    int f = spec.base_filters << (spec.depth - 1 - j);
    if (spec.use_mamba) {
      VSSConfig cfg;
      cfg.channels = cur;
      cfg.expansion = spec.expansion;
      cfg.state_dim = spec.state_dim;
      cfg.directions = spec.directions;
      cfg.mode = spec.mamba_mode;
      net.vm.push_back(make_vm_layer<double>(cfg, rng));
    }
    net.dec_att.push_back(make_up_block<double>(cur, f, 3, 2, rng));
    // stride-1 refinement stage; the upsampling already happened
    net.dec_res.push_back(make_res_block<double>(f, f, 3, 1, rng));
    if (spec.gates_open) {
      net.dec_att.back().gate.force_open = true;
      net.dec_res.back().main.gate.force_open = true;
    }
    cur = f;
  }

  net.seg_w = he_uniform<double>({1, 1, cur, spec.num_classes}, cur, rng);
  net.seg_b = TensorD({spec.num_classes});
  net.seg_w.set_requires_grad(true);
  net.seg_b.set_requires_grad(true);
  if (spec.use_reconstruction) net.recon = make_recon_head<double>(cur, spec.bins(), rng);
  return net;
}

struct ForwardOut {
  TensorD seg;                   // [N,H,W,N_cls] channel softmax
  std::optional<TensorD> recon;  // [N,H,W,bins] channel softmax
};

inline ForwardOut forward(Network& net, const TensorD& images, bool training = true) {
  if (images.rank() != 4 || images.dim(3) != 1)
    throw std::invalid_argument("forward: [N,H,W,1] input required");
  TensorD x = images;
  bool clamped = false;
  for (long i = 0; i < x.size(); ++i)
    if (x[i] < 0.0 || x[i] > 1.0) {
      if (net.spec.strict_input_range)
        throw std::invalid_argument("forward: input values outside [0,1]");
      clamped = true;
      break;
    }
  if (clamped) {
    TensorD c(x.shape());
    for (long i = 0; i < x.size(); ++i) c[i] = std::clamp(x[i], 0.0, 1.0);
    std::cerr << "warning: input values outside [0,1] were clamped\n";
    x = c;
  }

  std::vector<TensorD> skips;
  for (auto& blk : net.enc) {
    auto out = downsample_block(blk, x, training);
    skips.push_back(out.skip);
    x = out.pooled;
  }
  // bottleneck: the two-conv stack without pooling
  x = relu(apply_bn(net.bottleneck.bn1, conv_same<double>(x, net.bottleneck.w1), training));
  x = relu(apply_bn(net.bottleneck.bn2, conv_same<double>(x, net.bottleneck.w2), training));

  for (int j = 0; j < net.spec.depth; ++j) {
    if (net.spec.use_mamba) {
      int h = x.dim(1), w = x.dim(2);
      TensorD seq = scan_2d(x, 0);
      seq = vm_layer_forward(net.vm[static_cast<size_t>(j)], seq, h, w);
      x = reshape(seq, {x.dim(0), h, w, x.dim(3)});
    }
    const TensorD& skip = skips[static_cast<size_t>(net.spec.depth - 1 - j)];
    x = attention_upsample_block(net.dec_att[static_cast<size_t>(j)], x, skip, training);
    x = upsample_residual_block(net.dec_res[static_cast<size_t>(j)], x, skip, training);
  }

  ForwardOut out;
  out.seg = softmax_channel(conv_same(x, net.seg_w, &net.seg_b));
  if (net.spec.use_reconstruction) out.recon = reconstruction_head(net.recon, x);
  return out;
}

// ---- loss ----

enum class SegLoss { kCrossEntropy, kSoftDice, kSum };

inline SegLoss seg_loss_from_string(const std::string& s) {
  if (s == "cross_entropy") return SegLoss::kCrossEntropy;
  if (s == "soft_dice") return SegLoss::kSoftDice;
  if (s == "sum") return SegLoss::kSum;
  throw std::invalid_argument("unknown seg loss: " + s);
}

struct LossWeights {
  double alpha_recon = 0.5;
  SegLoss seg_loss = SegLoss::kCrossEntropy;

  void validate() const {
    if (alpha_recon < 0.0) throw std::invalid_argument("LossWeights: alpha_recon must be >= 0");
  }
};

namespace detail {

inline void check_one_hot(const TensorD& t) {
  const int c = t.shape().back();
  const long rows = t.size() / c;
  for (long r = 0; r < rows; ++r) {
    double sum = 0.0;
    for (int j = 0; j < c; ++j) {
      double v = t[r * c + j];
      if (v != 0.0 && v != 1.0)
        throw std::invalid_argument("combined_loss: target is not one-hot");
      sum += v;
    }
    if (sum != 1.0) throw std::invalid_argument("combined_loss: target is not one-hot");
  }
}

inline TensorD mean_cross_entropy(const TensorD& probs, const TensorD& onehot) {
  if (probs.shape() != onehot.shape())
    throw std::invalid_argument("cross entropy: shape mismatch");
  const long pixels = probs.size() / probs.shape().back();
  TensorD nll = sum_all(mul(onehot, log_clamped(probs)));
  return scale(nll, -1.0 / static_cast<double>(pixels));
}

inline TensorD soft_dice_loss(const TensorD& probs, const TensorD& onehot, double eps = 1.0) {
  TensorD inter = scale(sum_all(mul(probs, onehot)), 2.0);
  TensorD num = add(inter, TensorD::scalar(eps));
  TensorD den = add(add(sum_all(probs), sum_all(onehot)), TensorD::scalar(eps));
  return add(TensorD::scalar(1.0), scale(div_scalar(num, den), -1.0));
}

}  // namespace detail

// Quantizes intensities in [0,1] into `bins` equal-width one-hot channels.
inline TensorD intensity_bins(const TensorD& images, int bins) {
  if (images.rank() != 4 || images.dim(3) != 1)
    throw std::invalid_argument("intensity_bins: [N,H,W,1] input required");
  Shape os = images.shape();
  os.back() = bins;
  TensorD t(os);
  for (long p = 0; p < images.size(); ++p) {
    double v = std::clamp(images[p], 0.0, 1.0);
    int b = std::min(static_cast<int>(v * bins), bins - 1);
    t[p * bins + b] = 1.0;
  }
  return t;
}

inline TensorD combined_loss(const TensorD& seg_probs, const TensorD& seg_gt_onehot,
                             const TensorD* recon_probs, const TensorD& images,
                             const LossWeights& w) {
  w.validate();
  if (seg_probs.shape() != seg_gt_onehot.shape())
    throw std::invalid_argument("combined_loss: prediction/target shape mismatch");
  detail::check_one_hot(seg_gt_onehot);

  TensorD loss;
  switch (w.seg_loss) {
    case SegLoss::kCrossEntropy:
      loss = detail::mean_cross_entropy(seg_probs, seg_gt_onehot);
      break;
    case SegLoss::kSoftDice:
      loss = detail::soft_dice_loss(seg_probs, seg_gt_onehot);
      break;
    case SegLoss::kSum:
      loss = add(detail::mean_cross_entropy(seg_probs, seg_gt_onehot),
                 detail::soft_dice_loss(seg_probs, seg_gt_onehot));
      break;
  }
  if (recon_probs && w.alpha_recon > 0.0) {
    TensorD target = intensity_bins(images, recon_probs->shape().back());
    loss = add(loss, scale(detail::mean_cross_entropy(*recon_probs, target), w.alpha_recon));
  }
  return loss;
}

// ---- data conversion ----

inline TensorD image_to_tensor(const Image8& img) {
  TensorD t({1, img.h, img.w, 1});
  for (long i = 0; i < t.size(); ++i) t[i] = static_cast<double>(img.v[static_cast<size_t>(i)]) / 255.0;
  return t;
}

inline TensorD label_to_onehot(const Mask2D& m, int num_classes) {
  TensorD t({1, m.h, m.w, num_classes});
  for (size_t i = 0; i < m.v.size(); ++i)
    t[static_cast<long>(i) * num_classes + (m.v[i] ? 1 : 0)] = 1.0;
  return t;
}

inline Mask2D seg_to_mask(const TensorD& seg_probs, int item = 0) {
  const int h = seg_probs.dim(1), w = seg_probs.dim(2), c = seg_probs.dim(3);
  Mask2D m(h, w);
  for (int r = 0; r < h; ++r)
    for (int col = 0; col < w; ++col) {
      int best = 0;
      for (int j = 1; j < c; ++j)
        if (seg_probs.at(item, r, col, j) > seg_probs.at(item, r, col, best)) best = j;
      m.at(r, col) = best > 0 ? 1 : 0;
    }
  return m;
}

// ---- training ----

struct TrainConfig {
  int epochs = 1;
  double lr = 1e-3;
  uint64_t seed = 0;
  std::string checkpoint_dir;
  int batch_size = 4;
  std::string resume_from;     // optional checkpoint path
  double stop_at_loss = -1.0;  // early stop threshold; negative disables
  // optional per-epoch hook (epoch index, mean loss); returning true stops
  std::function<bool(Network&, int, double)> on_epoch;
};

struct TrainingReport {
  std::vector<int> epochs;
  std::vector<double> losses;
  std::vector<double> seconds;
  std::vector<std::string> checkpoints;
};

namespace detail {

inline NamedTensors train_state(Network& net, Optimizer<double>& opt, int epoch) {
  NamedTensors ts = net.state();
  for (auto& [name, t] : net.registry().params) {
    if (!t->requires_grad()) continue;
    const auto* m = opt.first_moment(t->id());
    const auto* v = opt.second_moment(t->id());
    if (!m || !v) continue;
    ts.entries["opt." + name + ".m"] = TensorD(t->shape(), *m);
    ts.entries["opt." + name + ".v"] = TensorD(t->shape(), *v);
  }
  ts.entries["opt.step"] = TensorD::scalar(static_cast<double>(opt.step_count()));
  ts.entries["epoch"] = TensorD::scalar(static_cast<double>(epoch));
  return ts;
}

inline int restore_train_state(Network& net, Optimizer<double>& opt, const std::string& path) {
  NamedTensors ts = load_checkpoint(path);
  net.load_state(ts);
  for (auto& [name, t] : net.registry().params) {
    auto im = ts.entries.find("opt." + name + ".m");
    auto iv = ts.entries.find("opt." + name + ".v");
    if (im != ts.entries.end() && iv != ts.entries.end())
      opt.restore_moments(t->id(), im->second.values(), iv->second.values());
  }
  auto is = ts.entries.find("opt.step");
  if (is != ts.entries.end()) opt.set_step_count(static_cast<long>(is->second[0]));
  auto ie = ts.entries.find("epoch");
  return ie == ts.entries.end() ? 0 : static_cast<int>(ie->second[0]);
}

}  // namespace detail

inline TrainingReport train(Network& net, const LossWeights& weights,
                            const DatasetBundle& bundle, const TrainConfig& cfg) {
  if (bundle.records.empty()) throw std::invalid_argument("train: empty bundle");
  if (cfg.epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
  weights.validate();

  OptimizerConfig<double> oc;
  oc.lr = cfg.lr;
  Optimizer<double> opt(oc);

  int start_epoch = 0;
  if (!cfg.resume_from.empty())
    start_epoch = detail::restore_train_state(net, opt, cfg.resume_from);

  if (!cfg.checkpoint_dir.empty()) std::filesystem::create_directories(cfg.checkpoint_dir);

  const int nrec = static_cast<int>(bundle.records.size());
  TrainingReport report;
  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    // order depends on (seed, epoch) only, so resumed runs replay it
    std::vector<int> order(static_cast<size_t>(nrec));
    for (int i = 0; i < nrec; ++i) order[static_cast<size_t>(i)] = i;
    Rng shuffle_rng(cfg.seed * 1000003ull + static_cast<uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0;
    int batches = 0;
    for (int ofs = 0; ofs < nrec; ofs += cfg.batch_size) {
      int bs = std::min(cfg.batch_size, nrec - ofs);
      const SliceRecord& first = bundle.records[static_cast<size_t>(order[static_cast<size_t>(ofs)])];
      TensorD images({bs, first.image.h, first.image.w, 1});
      TensorD gt({bs, first.image.h, first.image.w, net.spec.num_classes});
      for (int k = 0; k < bs; ++k) {
        const SliceRecord& rec = bundle.records[static_cast<size_t>(order[static_cast<size_t>(ofs + k)])];
        if (rec.image.h != first.image.h || rec.image.w != first.image.w)
          throw std::invalid_argument("train: mixed slice sizes in bundle");
        for (int p = 0; p < rec.image.h * rec.image.w; ++p) {
          images[(static_cast<long>(k) * rec.image.h * rec.image.w + p)] =
              static_cast<double>(rec.image.v[static_cast<size_t>(p)]) / 255.0;
          gt[(static_cast<long>(k) * rec.image.h * rec.image.w + p) * net.spec.num_classes +
             (rec.label.v[static_cast<size_t>(p)] ? 1 : 0)] = 1.0;
        }
      }

      TapeD tape;
      {
        TapeD::Scope scope(tape);
        ForwardOut out = forward(net, images, true);
        TensorD loss = combined_loss(out.seg, gt, out.recon ? &*out.recon : nullptr, images,
                                     weights);
        loss_sum += loss[0];
        ++batches;
        tape.backward(loss);
      }
      auto params = net.trainable_params();
      opt.step(params);
      for (auto& p : params) p.zero_grad();
    }

    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    double mean_loss = loss_sum / batches;
    report.epochs.push_back(epoch);
    report.losses.push_back(mean_loss);
    report.seconds.push_back(secs);
    if (!cfg.checkpoint_dir.empty()) {
      std::string path = cfg.checkpoint_dir + "/epoch_" + std::to_string(epoch + 1) + ".ckpt";
      save_checkpoint(detail::train_state(net, opt, epoch + 1), path);
      report.checkpoints.push_back(path);
    }
    if (cfg.stop_at_loss >= 0.0 && mean_loss <= cfg.stop_at_loss) break;
    if (cfg.on_epoch && cfg.on_epoch(net, epoch, mean_loss)) break;
  }
  return report;
}

// ---- evaluation ----

struct CaseMetrics {
  std::string case_id;
  std::optional<double> dsc, ravd, asd, mhd, auc, iou;
};

struct MetricsReport {
  // column order: DSC RAVD ASD MHD AUC IoU
  std::vector<CaseMetrics> cases;
  std::map<std::string, double> mean;
  std::map<std::string, double> stddev;
  std::map<std::string, int> defined;
};

// With `oracle` set the ground truth doubles as the prediction; this test
// hook exercises the reporting path with a perfect predictor.
inline MetricsReport evaluate(Network& net, const DatasetBundle& bundle, bool oracle = false) {
  if (bundle.records.empty()) throw std::invalid_argument("evaluate: empty bundle");
  MetricsReport rep;
  std::map<std::string, std::vector<double>> cols;
  const std::vector<std::string> names = {"DSC", "RAVD", "ASD", "MHD", "AUC", "IoU"};

  for (const auto& rec : bundle.records) {
    MaskPair pair;
    pair.gt = rec.label;
    std::vector<double> probs(static_cast<size_t>(rec.image.h) * rec.image.w);
    if (oracle) {
      pair.pred = rec.label;
      for (size_t p = 0; p < probs.size(); ++p) probs[p] = rec.label.v[p] ? 1.0 : 0.0;
    } else {
      TensorD img = image_to_tensor(rec.image);
      ForwardOut out = forward(net, img, false);
      pair.pred = seg_to_mask(out.seg);
      const int c = out.seg.dim(3);
      for (size_t p = 0; p < probs.size(); ++p)
        probs[p] = 1.0 - out.seg[static_cast<long>(p) * c];  // foreground probability
    }
    pair.probs = probs;

    CaseMetrics m;
    m.case_id = rec.case_id;
    auto guard = [](auto&& f) -> std::optional<double> {
      try {
        return f();
      } catch (const UndefinedMetric&) {
        return std::nullopt;
      }
    };
    m.dsc = guard([&] { return dsc(pair); });
    m.ravd = guard([&] { return ravd(pair); });
    m.asd = guard([&] { return asd(pair); });
    m.mhd = guard([&] { return mhd(pair); });
    m.auc = guard([&] { return auc(pair); });
    m.iou = guard([&] { return iou(pair); });
    rep.cases.push_back(m);

    const std::optional<double>* vals[] = {&m.dsc, &m.ravd, &m.asd, &m.mhd, &m.auc, &m.iou};
    for (size_t i = 0; i < names.size(); ++i)
      if (*vals[i]) cols[names[i]].push_back(**vals[i]);
  }

  for (const auto& name : names) {
    auto& v = cols[name];
    rep.defined[name] = static_cast<int>(v.size());
    if (v.empty()) continue;
    double mean = 0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0;
    for (double x : v) var += (x - mean) * (x - mean);
    var /= static_cast<double>(v.size());
    rep.mean[name] = mean;
    rep.stddev[name] = std::sqrt(var);
  }
  return rep;
}

}  // namespace mahnet
