#pragma once

// SGD and Adam parameter updates over named tensor lists.

#include <map>
#include <string>

#include "mahnet/tensor.hpp"

namespace mahnet {

enum class OptimizerKind { kSgd, kAdam };

inline OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "sgd") return OptimizerKind::kSgd;
  if (s == "adam") return OptimizerKind::kAdam;
  throw std::invalid_argument("unknown optimizer kind: " + s);
}

template <class T>
struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kAdam;
  T lr = T(1e-3);
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T eps = T(1e-8);
};

template <class T>
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig<T> cfg) : cfg_(cfg) {
    if (cfg_.lr <= T(0)) throw std::invalid_argument("optimizer: learning rate must be positive");
  }

  // Applies one step using each parameter's accumulated gradient, then
  // leaves the gradient for the caller to clear.
  void step(std::vector<Tensor<T>>& params) {
    ++t_;
    for (size_t p = 0; p < params.size(); ++p) {
      Tensor<T>& par = params[p];
      if (!par.requires_grad()) continue;
      const auto& g = par.grad();
      if (cfg_.kind == OptimizerKind::kSgd) {
        for (long i = 0; i < par.size(); ++i) par[i] -= cfg_.lr * g[i];
      } else {
        auto& m = m_[par.id()];
        auto& v = v_[par.id()];
        if (m.empty()) {
          m.assign(g.size(), T(0));
          v.assign(g.size(), T(0));
        }
        const T bc1 = T(1) - std::pow(cfg_.beta1, T(t_));
        const T bc2 = T(1) - std::pow(cfg_.beta2, T(t_));
        for (long i = 0; i < par.size(); ++i) {
          m[i] = cfg_.beta1 * m[i] + (T(1) - cfg_.beta1) * g[i];
          v[i] = cfg_.beta2 * v[i] + (T(1) - cfg_.beta2) * g[i] * g[i];
          T mhat = m[i] / bc1;
          T vhat = v[i] / bc2;
          par[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
      }
    }
  }

  long step_count() const { return t_; }

  // State access for checkpoint resume; moments are keyed by storage id.
  const std::vector<T>* first_moment(const void* id) const {
    auto it = m_.find(id);
    return it == m_.end() ? nullptr : &it->second;
  }
  const std::vector<T>* second_moment(const void* id) const {
    auto it = v_.find(id);
    return it == v_.end() ? nullptr : &it->second;
  }
  void restore_moments(const void* id, std::vector<T> m, std::vector<T> v) {
    m_[id] = std::move(m);
    v_[id] = std::move(v);
  }
  void set_step_count(long t) { t_ = t; }

 private:
  OptimizerConfig<T> cfg_;
  long t_ = 0;
  std::map<const void*, std::vector<T>> m_, v_;
};

// One-shot form matching the functional contract; used by the unit tests.
template <class T>
void optimizer_step(OptimizerKind kind, std::vector<Tensor<T>>& params, const OptimizerConfig<T>& cfg_in) {
  OptimizerConfig<T> cfg = cfg_in;
  cfg.kind = kind;
  Optimizer<T>(cfg).step(params);
}

}  // namespace mahnet
