#pragma once

// Encoder/decoder building blocks: upsampling attention gate,
// attention-enhanced upsampling block, upsampling residual block,
// reconstruction output head and the plain downsampling block.

#include "mahnet/conv.hpp"
#include "mahnet/ops.hpp"

namespace mahnet {

template <class T>
struct BatchNorm2d {
  Tensor<T> gamma, beta;
  RunningStats<T> stats;
  bool identity = false;  // test hook: pass input through unchanged
};

template <class T>
BatchNorm2d<T> make_batch_norm(int channels) {
  BatchNorm2d<T> bn;
  bn.gamma = Tensor<T>::full({channels}, T(1));
  bn.beta = Tensor<T>({channels});
  bn.gamma.set_requires_grad(true);
  bn.beta.set_requires_grad(true);
  return bn;
}

template <class T>
Tensor<T> apply_bn(BatchNorm2d<T>& bn, const Tensor<T>& x, bool training) {
  if (bn.identity) return x;
  return normalize(NormKind::kBatch, x, bn.gamma, bn.beta, T(1e-5), &bn.stats, training);
}

// ---- upsampling attention gate ----

template <class T>
struct GateParams {
  int inter_channels = 0;
  Tensor<T> theta_w;  // 1x1, Cx -> c
  Tensor<T> phi_w;    // 1x1, Cg -> c
  Tensor<T> psi_w;    // 1x1, c -> 1
  Tensor<T> psi_b;    // [1]
  BatchNorm2d<T> theta_bn, phi_bn, psi_bn;
  bool force_open = false;  // test hook: rate = 1 everywhere

  std::vector<Tensor<T>*> trainable() {
    return {&theta_w, &phi_w, &psi_w, &psi_b,
            &theta_bn.gamma, &theta_bn.beta, &phi_bn.gamma, &phi_bn.beta,
            &psi_bn.gamma, &psi_bn.beta};
  }
};

template <class T>
GateParams<T> make_gate(int cx, int cg, int inter, Rng& rng) {
  if (inter < 1) throw std::invalid_argument("make_gate: inter channels must be >= 1");
  GateParams<T> p;
  p.inter_channels = inter;
  p.theta_w = he_uniform<T>({1, 1, cx, inter}, cx, rng);
  p.phi_w = he_uniform<T>({1, 1, cg, inter}, cg, rng);
  p.psi_w = he_uniform<T>({1, 1, inter, 1}, inter, rng);
  p.psi_b = Tensor<T>({1});
  p.theta_bn = make_batch_norm<T>(inter);
  p.phi_bn = make_batch_norm<T>(inter);
  p.psi_bn = make_batch_norm<T>(1);
  for (auto* t : {&p.theta_w, &p.phi_w, &p.psi_w, &p.psi_b}) t->set_requires_grad(true);
  return p;
}

// Crops g to x's spatial dims, then att_x = x .* sigmoid(BN(psi(
// relu(BN(theta(x)) + BN(phi(g)))))). The rate map lies strictly in (0,1).
template <class T>
Tensor<T> attention_gate(GateParams<T>& p, const Tensor<T>& x, const Tensor<T>& g,
                         bool training = true) {
  if (x.rank() != 4 || g.rank() != 4)
    throw std::invalid_argument("attention_gate: NHWC tensors required");
  if (g.dim(1) < x.dim(1) || g.dim(2) < x.dim(2))
    throw std::invalid_argument("attention_gate: gating signal smaller than x");
  if (p.force_open) return x;
  Tensor<T> gc = crop_center(g, x.dim(1), x.dim(2));
  Tensor<T> theta = apply_bn(p.theta_bn, conv_same<T>(x, p.theta_w), training);
  Tensor<T> phi = apply_bn(p.phi_bn, conv_same<T>(gc, p.phi_w), training);
  Tensor<T> f = relu(add(theta, phi));
  Tensor<T> rate = sigmoid(apply_bn(p.psi_bn, conv_same(f, p.psi_w, &p.psi_b), training));
  return mul_spatial(x, rate);
}

// ---- attention-enhanced upsampling block ----

template <class T>
struct UpBlockParams {
  int filters = 0, kernel = 3, stride = 2;
  Tensor<T> up_w;    // transpose conv, Cin -> f
  Tensor<T> post_w;  // same conv, 2f -> f
  BatchNorm2d<T> up_bn, post_bn;
  GateParams<T> gate;

  std::vector<Tensor<T>*> trainable() {
    std::vector<Tensor<T>*> v{&up_w, &post_w, &up_bn.gamma, &up_bn.beta,
                              &post_bn.gamma, &post_bn.beta};
    auto g = gate.trainable();
    v.insert(v.end(), g.begin(), g.end());
    return v;
  }
};

template <class T>
UpBlockParams<T> make_up_block(int cin, int filters, int kernel, int stride, Rng& rng) {
  if (filters % 2 != 0) throw std::invalid_argument("make_up_block: filters must be even");
  UpBlockParams<T> p;
  p.filters = filters;
  p.kernel = kernel;
  p.stride = stride;
  p.up_w = he_uniform<T>({kernel, kernel, cin, filters}, static_cast<long>(kernel) * kernel * cin,
                         rng);
  p.post_w = he_uniform<T>({kernel, kernel, 2 * filters, filters},
                           static_cast<long>(kernel) * kernel * 2 * filters, rng);
  p.up_bn = make_batch_norm<T>(filters);
  p.post_bn = make_batch_norm<T>(filters);
  p.gate = make_gate<T>(filters, filters, filters / 2, rng);
  p.up_w.set_requires_grad(true);
  p.post_w.set_requires_grad(true);
  return p;
}

// x_up = ReLU(BN(ConvT(x))); attended = gate(x_up, skip);
// out = ReLU(BN(Conv(concat(x_up, attended)))). Spatial dims scale by stride.
template <class T>
Tensor<T> attention_upsample_block(UpBlockParams<T>& p, const Tensor<T>& x,
                                   const Tensor<T>& skip, bool training = true) {
  Tensor<T> x_up = relu(apply_bn(
      p.up_bn, convolve2d<T>(x, p.up_w, nullptr, p.stride, Padding::kSame, ConvMode::kTranspose),
      training));
  Tensor<T> attended = attention_gate(p.gate, x_up, skip, training);
  Tensor<T> cat = concat_channels(x_up, attended);
  return relu(apply_bn(p.post_bn, conv_same<T>(cat, p.post_w), training));
}

// ---- upsampling residual block ----

template <class T>
struct ResBlockParams {
  UpBlockParams<T> main;
  Tensor<T> proj_w;  // 1x1, f -> f skip projection around the post-concat conv

  std::vector<Tensor<T>*> trainable() {
    auto v = main.trainable();
    v.push_back(&proj_w);
    return v;
  }
};

template <class T>
ResBlockParams<T> make_res_block(int cin, int filters, int kernel, int stride, Rng& rng) {
  ResBlockParams<T> p;
  p.main = make_up_block<T>(cin, filters, kernel, stride, rng);
  p.proj_w = he_uniform<T>({1, 1, filters, filters}, filters, rng);
  p.proj_w.set_requires_grad(true);
  return p;
}

// Same pipeline as the attention block plus out += Proj1x1(x_up).
template <class T>
Tensor<T> upsample_residual_block(ResBlockParams<T>& p, const Tensor<T>& x,
                                  const Tensor<T>& skip, bool training = true) {
  UpBlockParams<T>& m = p.main;
  Tensor<T> x_up = relu(apply_bn(
      m.up_bn, convolve2d<T>(x, m.up_w, nullptr, m.stride, Padding::kSame, ConvMode::kTranspose),
      training));
  Tensor<T> attended = attention_gate(m.gate, x_up, skip, training);
  Tensor<T> cat = concat_channels(x_up, attended);
  Tensor<T> out = relu(apply_bn(m.post_bn, conv_same<T>(cat, m.post_w), training));
  return add(out, conv_same<T>(x_up, p.proj_w));
}

// ---- reconstruction head ----

template <class T>
struct ReconHeadParams {
  Tensor<T> w;  // 3x3 same, C -> N_cls
  Tensor<T> b;  // [N_cls]

  std::vector<Tensor<T>*> trainable() { return {&w, &b}; }
};

template <class T>
ReconHeadParams<T> make_recon_head(int cin, int num_classes, Rng& rng) {
  if (num_classes < 2) throw std::invalid_argument("make_recon_head: need >= 2 classes");
  ReconHeadParams<T> p;
  p.w = he_uniform<T>({3, 3, cin, num_classes}, static_cast<long>(9) * cin, rng);
  p.b = Tensor<T>({num_classes});
  p.w.set_requires_grad(true);
  p.b.set_requires_grad(true);
  return p;
}

// 3x3 same conv to N_cls channels followed by a channel softmax.
template <class T>
Tensor<T> reconstruction_head(ReconHeadParams<T>& p, const Tensor<T>& x) {
  return softmax_channel(conv_same(x, p.w, &p.b));
}

// ---- downsampling block ----

template <class T>
struct DownBlockParams {
  Tensor<T> w1, w2;  // 3x3 same convs
  BatchNorm2d<T> bn1, bn2;

  std::vector<Tensor<T>*> trainable() {
    return {&w1, &w2, &bn1.gamma, &bn1.beta, &bn2.gamma, &bn2.beta};
  }
};

template <class T>
DownBlockParams<T> make_down_block(int cin, int filters, Rng& rng) {
  DownBlockParams<T> p;
  p.w1 = he_uniform<T>({3, 3, cin, filters}, static_cast<long>(9) * cin, rng);
  p.w2 = he_uniform<T>({3, 3, filters, filters}, static_cast<long>(9) * filters, rng);
  p.bn1 = make_batch_norm<T>(filters);
  p.bn2 = make_batch_norm<T>(filters);
  p.w1.set_requires_grad(true);
  p.w2.set_requires_grad(true);
  return p;
}

template <class T>
struct DownBlockOut {
  Tensor<T> skip;    // pre-pool features for the decoder
  Tensor<T> pooled;  // 2x2 max-pooled, stride 2
};

template <class T>
DownBlockOut<T> downsample_block(DownBlockParams<T>& p, const Tensor<T>& x,
                                 bool training = true) {
  Tensor<T> h = relu(apply_bn(p.bn1, conv_same<T>(x, p.w1), training));
  h = relu(apply_bn(p.bn2, conv_same<T>(h, p.w2), training));
  return {h, pool_max2d(h)};
}

}  // namespace mahnet
