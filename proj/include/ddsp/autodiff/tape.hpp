#pragma once

// Minimal reverse-mode automatic differentiation.
//
// A Tape is an append-only list of nodes. Each node holds its value, its
// parents and a backward closure. backward() walks nodes in strict reverse
// insertion order, so insertion order must be a topological order, which
// holds because an op can only consume nodes that already exist.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ddsp/errors.hpp"

namespace ddsp::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

/// Dense row-major array.
template <class T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;
  Tensor(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != numel(shape))
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + to_string(shape));
  }
  static Tensor zeros(Shape s) {
    const auto n = numel(s);
    return Tensor(std::move(s), std::vector<T>(n, T(0)));
  }

  std::size_t size() const { return data.size(); }

  template <class U>
  Tensor<U> cast() const {
    return Tensor<U>(shape, std::vector<U>(data.begin(), data.end()));
  }

  bool operator==(const Tensor&) const = default;
};

template <class T>
class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
template <class T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Shape& shape() const { return tape_->shape(id_); }
  std::span<const T> value() const { return tape_->value(id_); }
  std::size_t size() const { return value().size(); }
  bool requires_grad() const { return tape_->requires_grad(id_); }
  T item() const {
    if (size() != 1) throw InvalidArgument("item() on non-scalar " + to_string(shape()));
    return value()[0];
  }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <class T>
class Tape {
 public:
  /// Called with the tape and the node's own id. Reads out_grad(self) and
  /// accumulates into parents through grad_buffer().
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf owning its data.
  Var<T> leaf(Shape shape, std::vector<T> data, bool requires_grad) {
    check_size(shape, data.size(), "leaf");
    Node n;
    n.shape = std::move(shape);
    n.owned = std::move(data);
    n.requires_grad = requires_grad;
    return push(std::move(n));
  }

  Var<T> leaf(const Tensor<T>& t, bool requires_grad) { return leaf(t.shape, t.data, requires_grad); }

  /// Leaf referencing caller storage; the storage must outlive the tape.
  Var<T> leaf_view(Shape shape, std::span<const T> data, bool requires_grad) {
    check_size(shape, data.size(), "leaf_view");
    Node n;
    n.shape = std::move(shape);
    n.external = data;
    n.requires_grad = requires_grad;
    return push(std::move(n));
  }

  Var<T> constant(Shape shape, std::vector<T> data) { return leaf(std::move(shape), std::move(data), false); }
  Var<T> scalar(T v) { return constant({1}, {v}); }

  /// Appends an op result. Parents that require grad make the result require
  /// grad; otherwise the closure is dropped. Non-finite values are rejected.
  Var<T> record(Shape shape, std::vector<T> value, std::initializer_list<Var<T>> parents,
                BackwardFn backward, const char* op_name) {
    return record(std::move(shape), std::move(value), std::vector<Var<T>>(parents), std::move(backward), op_name);
  }

  Var<T> record(Shape shape, std::vector<T> value, const std::vector<Var<T>>& parents,
                BackwardFn backward, const char* op_name) {
    check_size(shape, value.size(), op_name);
    for (T v : value)
      if (!std::isfinite(v)) throw NumericError(std::string(op_name) + ": non-finite output");
    Node n;
    n.shape = std::move(shape);
    n.owned = std::move(value);
    for (const auto& p : parents) {
      if (&p.tape() != this) throw InvalidArgument(std::string(op_name) + ": input from another tape");
      if (nodes_[p.id()].requires_grad) n.requires_grad = true;
    }
    if (n.requires_grad) {
      for (const auto& p : parents) n.parents.push_back(p.id());
      n.backward = std::move(backward);
    }
    return push(std::move(n));
  }

  /// Reverse sweep from a scalar node. Gradients from a previous sweep are cleared.
  void backward(Var<T> loss) {
    if (&loss.tape() != this) throw InvalidArgument("backward: loss from another tape");
    if (loss.size() != 1) throw InvalidArgument("backward: loss must be scalar, got " + to_string(loss.shape()));
    for (auto& n : nodes_) n.grad.clear();
    if (!nodes_[loss.id()].requires_grad) return;
    nodes_[loss.id()].grad.assign(1, T(1));
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.empty() || !n.backward) continue;
      n.backward(*this, i);
    }
  }

  /// Gradient of the last backward() w.r.t. v; zeros when v was not reached.
  std::vector<T> grad(Var<T> v) const {
    const Node& n = nodes_[v.id()];
    if (n.grad.empty()) return std::vector<T>(n.value().size(), T(0));
    return n.grad;
  }

  // Inside backward closures.
  std::span<const T> out_grad(std::size_t id) const { return nodes_[id].grad; }

  /// Accumulator for v's gradient, zero-initialized on first use. Empty span
  /// when v does not require grad.
  std::span<T> grad_buffer(Var<T> v) {
    Node& n = nodes_[v.id()];
    if (!n.requires_grad) return {};
    if (n.grad.empty()) n.grad.assign(n.value().size(), T(0));
    return n.grad;
  }

  const Shape& shape(std::size_t id) const { return nodes_[id].shape; }
  std::span<const T> value(std::size_t id) const { return nodes_[id].value(); }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Drops the stored value of a node that no longer feeds anything that needs
  /// it. Only permitted for nodes outside the gradient graph.
  void release(Var<T> v) {
    Node& n = nodes_[v.id()];
    if (n.requires_grad) return;
    std::vector<T>().swap(n.owned);
    n.external = {};
  }

 private:
  struct Node {
    Shape shape;
    std::vector<T> owned;
    std::span<const T> external;
    bool requires_grad = false;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    std::vector<T> grad;

    std::span<const T> value() const { return external.data() ? external : std::span<const T>(owned); }
  };

  static void check_size(const Shape& shape, std::size_t n, const char* what) {
    if (numel(shape) != n)
      throw ShapeError(std::string(what) + ": data length " + std::to_string(n) + " does not match shape " +
                       to_string(shape));
  }

  Var<T> push(Node&& n) {
    nodes_.push_back(std::move(n));
    return Var<T>(this, nodes_.size() - 1);
  }

  std::deque<Node> nodes_;
};

}  // namespace ddsp::ad
