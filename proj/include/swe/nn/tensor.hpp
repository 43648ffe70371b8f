#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <unordered_set>
#include <vector>

#include "swe/common.hpp"

namespace swe::nn {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i)
    out += std::to_string(s[i]) + (i + 1 < s.size() ? "," : "");
  return out + ")";
}

// Dense row-major tensor. The buffer is shared so reshapes are free; ops never
// mutate their inputs, only the optimizer writes into parameter leaves.
template <class T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape)
      : shape_(std::move(shape)),
        buf_(std::make_shared<std::vector<T>>(shape_numel(shape_), T(0))) {}
  Tensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)),
        buf_(std::make_shared<std::vector<T>>(std::move(data))) {
    if (static_cast<std::int64_t>(buf_->size()) != shape_numel(shape_))
      throw ContractError("tensor data does not match shape " +
                          shape_str(shape_));
  }

  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
  static Tensor full(Shape s, T v) {
    Tensor t(std::move(s));
    std::fill(t.buf_->begin(), t.buf_->end(), v);
    return t;
  }
  static Tensor scalar(T v) { return full({1}, v); }

  const Shape& shape() const { return shape_; }
  std::int64_t numel() const { return shape_numel(shape_); }
  std::int64_t dim(std::size_t i) const { return shape_[i]; }
  std::size_t rank() const { return shape_.size(); }
  bool empty() const { return !buf_; }

  T* ptr() { return buf_->data(); }
  const T* ptr() const { return buf_->data(); }
  T& operator[](std::int64_t i) { return (*buf_)[i]; }
  const T& operator[](std::int64_t i) const { return (*buf_)[i]; }

  // Shares the buffer under a new shape of equal element count.
  Tensor reshaped(Shape s) const {
    if (shape_numel(s) != numel())
      throw ContractError("reshape " + shape_str(shape_) + " -> " +
                          shape_str(s) + " changes element count");
    Tensor t;
    t.shape_ = std::move(s);
    t.buf_ = buf_;
    return t;
  }

  Tensor clone() const {
    Tensor t;
    t.shape_ = shape_;
    t.buf_ = std::make_shared<std::vector<T>>(*buf_);
    return t;
  }

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> t{shape_};
    for (std::int64_t i = 0; i < numel(); ++i)
      t[i] = static_cast<U>((*buf_)[i]);
    return t;
  }

 private:
  Shape shape_;
  std::shared_ptr<std::vector<T>> buf_;
  template <class U>
  friend class Tensor;
};

// Thread-local switch that disables graph recording (inference mode).
inline bool& grad_enabled() {
  thread_local bool enabled = true;
  return enabled;
}

struct NoGradGuard {
  NoGradGuard() : prev(grad_enabled()) { grad_enabled() = false; }
  ~NoGradGuard() { grad_enabled() = prev; }
  bool prev;
};

// Autodiff handle. Graphs are built define-by-run; backward() topologically
// sorts the recorded tape and accumulates gradients into the leaves.
template <class T>
class Var {
 public:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // allocated on demand, shape of value
    bool requires_grad = false;
    bool grad_ready = false;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backprop;
    const char* op = "leaf";
  };

  Var() = default;
  explicit Var(Tensor<T> v, bool requires_grad = false)
      : n_(std::make_shared<Node>()) {
    n_->value = std::move(v);
    n_->requires_grad = requires_grad;
  }
  static Var leaf(Tensor<T> v, bool requires_grad = false) {
    return Var(std::move(v), requires_grad);
  }

  bool defined() const { return static_cast<bool>(n_); }
  const Tensor<T>& val() const { return n_->value; }
  Tensor<T>& val() { return n_->value; }
  bool requires_grad() const { return n_ && n_->requires_grad; }
  const Shape& shape() const { return n_->value.shape(); }
  T item() const {
    if (n_->value.numel() != 1)
      throw ContractError("item() on non-scalar tensor");
    return n_->value[0];
  }

  Tensor<T>& grad() {
    ensure_grad(*n_);
    return n_->grad;
  }
  void zero_grad() {
    if (n_->grad_ready)
      std::fill(n_->grad.ptr(), n_->grad.ptr() + n_->grad.numel(), T(0));
  }

  std::shared_ptr<Node> node() const { return n_; }

  static void ensure_grad(Node& n) {
    if (!n.grad_ready) {
      n.grad = Tensor<T>::zeros(n.value.shape());
      n.grad_ready = true;
    }
  }

  // Creates a recorded op node. When grad mode is off or no input needs
  // gradients, the tape edge is dropped and the result is a detached value.
  template <class F>
  static Var make(const char* op, Tensor<T> value,
                  std::initializer_list<Var> inputs, F&& backprop) {
    return make_impl(op, std::move(value), inputs.begin(), inputs.end(),
                     std::forward<F>(backprop));
  }
  template <class F>
  static Var make(const char* op, Tensor<T> value,
                  const std::vector<Var>& inputs, F&& backprop) {
    return make_impl(op, std::move(value), inputs.data(),
                     inputs.data() + inputs.size(), std::forward<F>(backprop));
  }

  void backward() {
    if (n_->value.numel() != 1)
      throw ContractError("backward() must start from a scalar loss");
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{n_.get(), 0}};
    seen.insert(n_.get());
    while (!stack.empty()) {
      auto& [node, idx] = stack.back();
      if (idx < node->inputs.size()) {
        Node* next = node->inputs[idx++].get();
        if (next->requires_grad && seen.insert(next).second)
          stack.push_back({next, 0});
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
    ensure_grad(*n_);
    n_->grad[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node* node = *it;
      if (node->backprop && node->grad_ready) node->backprop(*node);
    }
  }

 private:
  template <class F>
  static Var make_impl(const char* op, Tensor<T> value, const Var* first,
                       const Var* last, F&& backprop) {
    Var out(std::move(value), false);
    bool needs = false;
    if (grad_enabled())
      for (const Var* v = first; v != last; ++v)
        needs = needs || v->requires_grad();
    if (needs) {
      out.n_->requires_grad = true;
      out.n_->op = op;
      for (const Var* v = first; v != last; ++v)
        out.n_->inputs.push_back(v->n_);
      out.n_->backprop = std::forward<F>(backprop);
    }
    return out;
  }

  std::shared_ptr<Node> n_;
};

using Shape64 = Shape;

}  // namespace swe::nn
