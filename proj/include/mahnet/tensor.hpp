#pragma once

// Dense N-d tensor with optional reverse-mode gradient tape participation.
// Row-major (NHWC for image data), 64-bit reals by default.

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace mahnet {

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

inline long shape_numel(const Shape& s) {
  long n = 1;
  for (int e : s) {
    if (e < 0) throw std::invalid_argument("negative extent in shape " + shape_str(s));
    n *= e;
  }
  return n;
}

template <class T>
class Tensor {
 public:
  Tensor() : st_(std::make_shared<Storage>()) {}

  explicit Tensor(Shape shape, bool requires_grad = false)
      : st_(std::make_shared<Storage>()) {
    st_->shape = std::move(shape);
    st_->v.assign(static_cast<size_t>(shape_numel(st_->shape)), T(0));
    st_->requires_grad = requires_grad;
  }

  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false)
      : st_(std::make_shared<Storage>()) {
    if (static_cast<long>(values.size()) != shape_numel(shape))
      throw std::invalid_argument("value count does not match shape " + shape_str(shape));
    st_->shape = std::move(shape);
    st_->v = std::move(values);
    st_->requires_grad = requires_grad;
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return Tensor({1}, {value}, requires_grad);
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    Tensor t(std::move(shape), requires_grad);
    std::fill(t.st_->v.begin(), t.st_->v.end(), value);
    return t;
  }

  const Shape& shape() const { return st_->shape; }
  int dim(int i) const { return st_->shape.at(static_cast<size_t>(i)); }
  int rank() const { return static_cast<int>(st_->shape.size()); }
  long size() const { return static_cast<long>(st_->v.size()); }

  T* data() { return st_->v.data(); }
  const T* data() const { return st_->v.data(); }
  std::vector<T>& values() { return st_->v; }
  const std::vector<T>& values() const { return st_->v; }

  T& operator[](long i) { return st_->v[static_cast<size_t>(i)]; }
  const T& operator[](long i) const { return st_->v[static_cast<size_t>(i)]; }

  // NHWC addressing.
  long index(int n, int h, int w, int c) const {
    const Shape& s = st_->shape;
    return ((static_cast<long>(n) * s[1] + h) * s[2] + w) * s[3] + c;
  }
  T& at(int n, int h, int w, int c) { return st_->v[static_cast<size_t>(index(n, h, w, c))]; }
  const T& at(int n, int h, int w, int c) const {
    return st_->v[static_cast<size_t>(index(n, h, w, c))];
  }

  bool requires_grad() const { return st_->requires_grad; }
  void set_requires_grad(bool f) {
    st_->requires_grad = f;
    if (f && st_->g.empty()) st_->g.assign(st_->v.size(), T(0));
  }

  bool has_grad() const { return !st_->g.empty(); }
  std::vector<T>& grad() {
    if (st_->g.empty()) st_->g.assign(st_->v.size(), T(0));
    return st_->g;
  }
  const std::vector<T>& grad() const { return st_->g; }
  void zero_grad() { std::fill(st_->g.begin(), st_->g.end(), T(0)); }

  // Identity of the underlying storage; used by the tape.
  const void* id() const { return st_.get(); }

  bool same_shape(const Tensor& o) const { return st_->shape == o.st_->shape; }

  void check_finite(const char* where) const {
    for (const T& x : st_->v)
      if (!std::isfinite(static_cast<double>(x)))
        throw std::runtime_error(std::string("non-finite value after ") + where);
  }

 private:
  struct Storage {
    Shape shape;
    std::vector<T> v;
    std::vector<T> g;  // allocated lazily, same length as v
    bool requires_grad = false;
  };
  std::shared_ptr<Storage> st_;
};

// Reverse-mode tape. Ops append backward closures in topological order;
// backward() replays them in exact reverse.
template <class T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape*& active() {
    thread_local Tape* t = nullptr;
    return t;
  }

  // RAII activation for one training thread.
  class Scope {
   public:
    explicit Scope(Tape& t) : prev_(active()) { active() = &t; }
    ~Scope() { active() = prev_; }

   private:
    Tape* prev_;
  };

  void record(std::function<void()> back) { backs_.push_back(std::move(back)); }
  size_t num_ops() const { return backs_.size(); }
  void clear() { backs_.clear(); }

  void backward(Tensor<T>& loss) {
    if (loss.size() != 1) throw std::invalid_argument("backward requires a scalar loss");
    loss.grad()[0] = T(1);
    for (auto it = backs_.rbegin(); it != backs_.rend(); ++it) (*it)();
  }

 private:
  std::vector<std::function<void()>> backs_;
};

template <class T>
inline bool grad_enabled(const Tensor<T>& x) {
  return Tape<T>::active() != nullptr && x.requires_grad();
}

// Deterministic RNG used everywhere a seed is accepted.
using Rng = std::mt19937_64;

template <class T>
inline Tensor<T> random_uniform(Shape shape, Rng& rng, T lo = T(-1), T hi = T(1)) {
  Tensor<T> t(std::move(shape));
  std::uniform_real_distribution<double> d(static_cast<double>(lo), static_cast<double>(hi));
  for (long i = 0; i < t.size(); ++i) t[i] = static_cast<T>(d(rng));
  return t;
}

template <class T>
inline Tensor<T> random_normal(Shape shape, Rng& rng, T mean = T(0), T stddev = T(1)) {
  Tensor<T> t(std::move(shape));
  std::normal_distribution<double> d(static_cast<double>(mean), static_cast<double>(stddev));
  for (long i = 0; i < t.size(); ++i) t[i] = static_cast<T>(d(rng));
  return t;
}

using TensorD = Tensor<double>;
using TapeD = Tape<double>;

}  // namespace mahnet
