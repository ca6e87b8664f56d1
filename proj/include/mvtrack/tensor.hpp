#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "mvtrack/errors.hpp"

namespace mvtrack {

// Reverse-mode autodiff over flat n-d arrays. A TensorT is a handle onto a
// shared node; copying a tensor aliases its storage and its place in the
// recorded graph. Gradients accumulate into the persistent `grad` buffer of
// every requires_grad node each time backward() runs; the per-pass flow uses
// scratch buffers so repeated backward() calls add one full pass each.
namespace detail {

template <typename T>
struct NodeT {
  std::vector<int64_t> shape;
  std::vector<T> data;
  std::vector<T> grad;  // persistent; empty until first backward touches it
  bool requires_grad = false;
  bool released = false;  // true once the backward closure was dropped
  std::vector<std::shared_ptr<NodeT>> parents;
  // Scatters this node's pass-local gradient `gout` into the pass-local
  // buffers of the parents (`gpar[k]` is null when parent k needs no grad).
  std::function<void(NodeT& self, const std::vector<T>& gout,
                     const std::vector<std::vector<T>*>& gpar)>
      backward;
};

inline int64_t shape_numel(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

// Thread-local switch: while active, ops run forward-only and record nothing.
inline bool& grad_recording_flag() {
  thread_local bool recording = true;
  return recording;
}

}  // namespace detail

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(detail::grad_recording_flag()) { detail::grad_recording_flag() = false; }
  ~NoGradGuard() { detail::grad_recording_flag() = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

inline bool grad_recording() { return detail::grad_recording_flag(); }

template <typename T>
class TensorT {
 public:
  using Node = detail::NodeT<T>;

  TensorT() = default;

  explicit TensorT(std::vector<int64_t> shape, bool requires_grad = false)
      : node_(std::make_shared<Node>()) {
    node_->shape = std::move(shape);
    node_->data.assign(detail::shape_numel(node_->shape), T(0));
    node_->requires_grad = requires_grad;
  }

  static TensorT zeros(std::vector<int64_t> shape, bool requires_grad = false) {
    return TensorT(std::move(shape), requires_grad);
  }

  static TensorT full(std::vector<int64_t> shape, T value, bool requires_grad = false) {
    TensorT t(std::move(shape), requires_grad);
    std::fill(t.data().begin(), t.data().end(), value);
    return t;
  }

  static TensorT from(std::vector<int64_t> shape, std::vector<T> values,
                      bool requires_grad = false) {
    TensorT t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = std::move(shape);
    if (detail::shape_numel(t.node_->shape) != static_cast<int64_t>(values.size()))
      throw ShapeMismatchError("from(): value count does not match shape");
    t.node_->data = std::move(values);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static TensorT scalar(T value, bool requires_grad = false) {
    return from({}, {value}, requires_grad);
  }

  // Internal op constructor: result node with parents and a backward closure.
  // Recording is suppressed under NoGradGuard or when no parent needs grads.
  template <typename Fn>
  static TensorT make_op(std::vector<int64_t> shape, std::vector<T> values,
                         std::vector<TensorT> parents, Fn&& backward) {
    TensorT t = from(std::move(shape), std::move(values), false);
    bool any = false;
    for (const auto& p : parents) any = any || (p.defined() && p.requires_grad());
    if (any && grad_recording()) {
      t.node_->requires_grad = true;
      t.node_->parents.reserve(parents.size());
      for (auto& p : parents) t.node_->parents.push_back(p.node_);
      t.node_->backward = std::forward<Fn>(backward);
    }
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const std::vector<int64_t>& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int64_t dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
  int64_t numel() const { return detail::shape_numel(node_->shape); }

  std::vector<T>& data() { return node_->data; }
  const std::vector<T>& data() const { return node_->data; }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool rg) { node_->requires_grad = rg; }

  bool has_grad() const { return node_ && !node_->grad.empty(); }
  std::vector<T>& grad() {
    if (node_->grad.empty()) node_->grad.assign(node_->data.size(), T(0));
    return node_->grad;
  }
  const std::vector<T>& grad() const { return node_->grad; }
  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }

  T item() const {
    if (numel() != 1) throw ShapeMismatchError("item(): tensor is not a scalar");
    return node_->data[0];
  }

  T& at(std::initializer_list<int64_t> idx) { return node_->data[flat_index(idx)]; }
  T at(std::initializer_list<int64_t> idx) const { return node_->data[flat_index(idx)]; }

  Node* raw_node() const { return node_.get(); }
  const std::shared_ptr<Node>& node() const { return node_; }

  bool same_storage(const TensorT& other) const { return node_ == other.node_; }

 private:
  int64_t flat_index(std::initializer_list<int64_t> idx) const {
    if (static_cast<int>(idx.size()) != rank())
      throw ShapeMismatchError("at(): index rank mismatch");
    int64_t flat = 0;
    int i = 0;
    for (int64_t v : idx) {
      flat = flat * node_->shape[static_cast<size_t>(i)] + v;
      ++i;
    }
    return flat;
  }

  std::shared_ptr<Node> node_;
};

namespace detail {

// Topological order of the graph reachable from `root` (parents before users).
template <typename T>
std::vector<NodeT<T>*> topo_order(NodeT<T>* root) {
  std::vector<NodeT<T>*> order;
  std::unordered_set<NodeT<T>*> seen;
  // Iterative post-order DFS.
  std::vector<std::pair<NodeT<T>*, size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      NodeT<T>* p = node->parents[next++].get();
      if (seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

}  // namespace detail

// Runs one reverse pass from a scalar loss. Gradients of every reachable
// requires_grad tensor are accumulated (additively across calls) into their
// persistent grad buffers.
template <typename T>
void backward(const TensorT<T>& loss) {
  if (loss.numel() != 1) throw ShapeMismatchError("backward(): loss must be a scalar");
  using Node = detail::NodeT<T>;
  Node* root = loss.raw_node();
  std::vector<Node*> order = detail::topo_order(root);
  for (Node* n : order)
    if (n->released) throw GraphConsumedError("backward() on a released graph");

  std::unordered_map<Node*, std::vector<T>> pass;
  pass[root] = {T(1)};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->backward) continue;
    auto found = pass.find(n);
    if (found == pass.end()) continue;  // no gradient flowed here
    std::vector<std::vector<T>*> gpar(n->parents.size(), nullptr);
    for (size_t k = 0; k < n->parents.size(); ++k) {
      Node* p = n->parents[k].get();
      if (!p->requires_grad) continue;
      auto& buf = pass[p];
      if (buf.empty()) buf.assign(p->data.size(), T(0));
      gpar[k] = &buf;
    }
    n->backward(*n, found->second, gpar);
  }
  for (Node* n : order) {
    if (!n->requires_grad) continue;
    auto found = pass.find(n);
    if (found == pass.end()) continue;
    if (n->grad.empty()) n->grad.assign(n->data.size(), T(0));
    for (size_t i = 0; i < n->grad.size(); ++i) n->grad[i] += found->second[i];
  }
}

// Drops the backward closures of the graph under `root`, freeing the
// recorded computation. Leaf tensors (parameters, inputs) are untouched and
// can join new graphs; calling backward() through a released graph throws.
template <typename T>
void release_graph(const TensorT<T>& root) {
  auto order = detail::topo_order(root.raw_node());
  for (auto* n : order) {
    if (n->backward) {
      n->backward = nullptr;
      n->parents.clear();
      n->released = true;
    }
  }
}

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

}  // namespace mvtrack
