#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fedsn/field.hpp"

namespace fedsn {

template <std::floating_point T>
class Tape;

/// Handle to a value recorded on a Tape.
template <std::floating_point T>
class Var {
 public:
  Var() = default;

  Tape<T>* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }
  const Field<T>& value() const { return tape_->value(*this); }
  const Shape& shape() const { return value().shape(); }

 private:
  friend class Tape<T>;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode computation record.
///
/// Nodes are appended in evaluation order, which is a topological order of
/// the graph. Leaves either own their value or reference an external Field;
/// referenced leaves whose Field requires_grad receive accumulated gradients
/// in that Field's grad buffer when backward() runs.
///
/// A tape constructed with record_gradients=false stores values only, which
/// is what inference and validation use.
template <std::floating_point T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t)>;

  explicit Tape(bool record_gradients = true) : recording_(record_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const noexcept { return recording_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Trainable leaf: gradients flow into `field` if it requires_grad.
  Var<T> param(Field<T>& field) {
    Node node;
    node.ref = &field;
    if (recording_ && field.requires_grad()) {
      node.sink = &field;
      node.needs_grad = true;
    }
    return push(std::move(node));
  }

  /// Non-trainable leaf referencing caller-owned storage.
  Var<T> constant(const Field<T>& field) {
    Node node;
    node.ref = &field;
    return push(std::move(node));
  }

  /// Non-trainable leaf owning its value.
  Var<T> constant(Field<T>&& field) {
    Node node;
    node.owned = std::move(field);
    return push(std::move(node));
  }

  const Field<T>& value(Var<T> v) const { return value(check(v)); }
  const Field<T>& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.ref ? *n.ref : n.owned;
  }

  bool needs_grad(Var<T> v) const { return nodes_[check(v)].needs_grad; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }

  /// Gradient buffer of a node after backward(); empty if the node does not
  /// need a gradient.
  std::span<const T> grad(Var<T> v) const { return nodes_[check(v)].grad; }

  /// Gradient accumulator for an input of a backward rule.
  std::span<T> grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.size() != value(id).size()) n.grad.assign(value(id).size(), T{0});
    return n.grad;
  }

  /// Appends an operation result. `backward` is kept only if some input needs
  /// a gradient.
  Var<T> record(Field<T> result, std::initializer_list<std::size_t> inputs, Backward backward) {
    return record(std::move(result), std::vector<std::size_t>(inputs), std::move(backward));
  }

  Var<T> record(Field<T> result, const std::vector<std::size_t>& inputs, Backward backward) {
    Node node;
    node.owned = std::move(result);
    if (recording_) {
      for (std::size_t in : inputs) {
        if (nodes_.at(in).needs_grad) {
          node.needs_grad = true;
          break;
        }
      }
      if (node.needs_grad) node.backward = std::move(backward);
    }
    return push(std::move(node));
  }

  /// Propagates d(loss)/d(node) to every node in reverse order, each visited
  /// once. Leaf gradients accumulate across calls; intermediate gradients are
  /// reset at the start of each call.
  void backward(Var<T> loss) {
    const std::size_t root = check(loss);
    if (value(root).size() != 1) {
      throw std::invalid_argument("backward: loss must have exactly one element, got shape " +
                                  shape_string(value(root).shape()));
    }
    if (!nodes_[root].needs_grad) return;
    for (std::size_t i = 0; i <= root; ++i) nodes_[i].grad.clear();
    grad_buffer(root)[0] = T{1};
    for (std::size_t i = root + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.needs_grad || n.grad.empty()) continue;
      if (n.backward) n.backward(*this, i);
      if (n.sink) {
        std::span<T> dst = n.sink->ensure_grad();
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += n.grad[j];
      }
    }
  }

 private:
  struct Node {
    Field<T> owned;
    const Field<T>* ref = nullptr;
    Field<T>* sink = nullptr;
    bool needs_grad = false;
    std::vector<T> grad;
    Backward backward;
  };

  Var<T> push(Node&& node) {
    nodes_.push_back(std::move(node));
    return Var<T>(this, nodes_.size() - 1);
  }

  std::size_t check(Var<T> v) const {
    if (v.tape() != this || v.id() >= nodes_.size()) {
      throw std::invalid_argument("Var does not belong to this tape");
    }
    return v.id();
  }

  // deque keeps references to existing nodes stable while new ones are added.
  std::deque<Node> nodes_;
  bool recording_;
};

}  // namespace fedsn
