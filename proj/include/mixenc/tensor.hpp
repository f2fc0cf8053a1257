#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace mixenc {

using Shape = std::vector<int64_t>;

struct EngineError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

inline bool grad_enabled() { return grad_mode_flag(); }

// Disables graph recording for the enclosing scope (inference paths).
struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_mode_flag()) { grad_mode_flag() = false; }
  ~NoGradGuard() { grad_mode_flag() = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <class T>
struct TensorNode {
  Shape shape;
  std::shared_ptr<std::vector<T>> values;  // shared so reshape is zero-copy
  std::vector<T> grad;                     // same length as values when present
  bool requires_grad = false;
  bool backward_done = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backprop;

  int64_t numel() const { return static_cast<int64_t>(values->size()); }

  void ensure_grad() {
    if (grad.size() != values->size()) grad.assign(values->size(), T(0));
  }
};

// Dense row-major tensor handle. Values are immutable after construction;
// grad accumulation and optimizer updates on leaf parameters are the only
// sanctioned mutations.
template <class T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    Tensor t = alloc(std::move(shape));
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static Tensor full(Shape shape, T value) {
    Tensor t = alloc(std::move(shape));
    std::fill(t.node_->values->begin(), t.node_->values->end(), value);
    return t;
  }

  static Tensor scalar(T value) { return full({1}, value); }

  static Tensor from_data(Shape shape, std::vector<T> data,
                          bool requires_grad = false) {
    if (shape_numel(shape) != static_cast<int64_t>(data.size()))
      throw EngineError("tensor data length " + std::to_string(data.size()) +
                        " does not match shape " + shape_str(shape));
    Tensor t;
    t.node_ = std::make_shared<TensorNode<T>>();
    t.node_->shape = std::move(shape);
    t.node_->values = std::make_shared<std::vector<T>>(std::move(data));
    t.node_->requires_grad = requires_grad;
    return t;
  }

  // View over an existing buffer (reshape); no copy.
  static Tensor from_shared(Shape shape,
                            std::shared_ptr<std::vector<T>> values) {
    Tensor t;
    t.node_ = std::make_shared<TensorNode<T>>();
    t.node_->shape = std::move(shape);
    t.node_->values = std::move(values);
    return t;
  }

  // Fresh node with an uninitialized-to-zero buffer; used by every op.
  static Tensor alloc(Shape shape) {
    Tensor t;
    t.node_ = std::make_shared<TensorNode<T>>();
    t.node_->values =
        std::make_shared<std::vector<T>>(shape_numel(shape), T(0));
    t.node_->shape = std::move(shape);
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t dim() const { return static_cast<int64_t>(node_->shape.size()); }
  int64_t size(int axis) const {
    return node_->shape[static_cast<size_t>(normalize_axis(axis))];
  }
  int64_t numel() const { return node_->numel(); }

  const std::vector<T>& values() const { return *node_->values; }
  const T* data() const { return node_->values->data(); }
  // In-place access: leaf parameters (optimizer step) and test setup only.
  std::vector<T>& values_mut() { return *node_->values; }
  T* data_mut() { return node_->values->data(); }

  T item() const {
    if (numel() != 1)
      throw EngineError("item() on non-scalar tensor " + shape_str(shape()));
    return (*node_->values)[0];
  }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  bool has_grad() const { return node_ && !node_->grad.empty(); }
  const std::vector<T>& grad() const {
    if (!has_grad())
      throw EngineError("tensor has no gradient (backward not run?)");
    return node_->grad;
  }
  std::vector<T>& grad_mut() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }

  std::shared_ptr<TensorNode<T>> node() const { return node_; }

  int normalize_axis(int axis) const {
    const int nd = static_cast<int>(dim());
    if (axis < 0) axis += nd;
    if (axis < 0 || axis >= nd)
      throw EngineError("axis out of range for " + shape_str(shape()));
    return axis;
  }

  // Reverse-mode sweep from a scalar. The graph is released afterwards;
  // running it twice without rebuilding the graph is an error.
  void backward() const {
    TensorNode<T>* root = node_.get();
    if (!root) throw EngineError("backward on undefined tensor");
    if (root->numel() != 1)
      throw EngineError("backward requires a scalar, got " +
                        shape_str(root->shape));
    if (root->backward_done)
      throw EngineError("backward called twice without graph reset");
    if (!root->requires_grad)
      throw EngineError("backward on a tensor with no recorded graph");

    std::vector<TensorNode<T>*> order;
    std::unordered_set<TensorNode<T>*> visited;
    std::vector<std::pair<TensorNode<T>*, size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
      auto& top = stack.back();
      if (top.second < top.first->parents.size()) {
        TensorNode<T>* p = top.first->parents[top.second++].get();
        if (p->requires_grad && !visited.count(p)) {
          visited.insert(p);
          stack.emplace_back(p, 0);
        }
      } else {
        order.push_back(top.first);
        stack.pop_back();
      }
    }

    root->ensure_grad();
    root->grad[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      TensorNode<T>* n = *it;
      if (n->backprop) {
        n->ensure_grad();
        n->backprop(*n);
      }
    }
    // Release interior graph structure; leaf grads stay.
    for (TensorNode<T>* n : order) {
      n->backprop = nullptr;
      if (n != root) n->parents.clear();
    }
    root->parents.clear();
    root->backward_done = true;
  }

 private:
  std::shared_ptr<TensorNode<T>> node_;
};

// Accumulates g into parent's grad buffer if the parent participates.
template <class T>
inline void accumulate_grad(TensorNode<T>& parent, const T* g, int64_t n) {
  if (!parent.requires_grad) return;
  parent.ensure_grad();
  T* dst = parent.grad.data();
  for (int64_t i = 0; i < n; ++i) dst[i] += g[i];
}

}  // namespace mixenc
