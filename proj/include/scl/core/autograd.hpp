#ifndef SCL_CORE_AUTOGRAD_HPP
#define SCL_CORE_AUTOGRAD_HPP

#include <cstddef>
#include <functional>
#include <deque>
#include <initializer_list>
#include <string>
#include <utility>
#include <vector>

#include "scl/core/tensor.hpp"

namespace scl {

/// A named trainable array. `grad` accumulates across backward passes until cleared.
template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool frozen = false;

  void zero_grad() {
    if (grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
    else grad.fill(T(0));
  }
};

template <class T>
class Tape;

/// Handle to a value recorded on a tape.
template <class T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->value(id); }
  const Shape& shape() const { return tape->value(id).shape(); }
  std::size_t dim(std::size_t i) const { return shape().at(i); }
};

/// Reverse-mode tape. Nodes are appended in evaluation order and replayed backwards.
///
/// A tape built with `grad_enabled == false` only stores values, which is what
/// inference uses. Backward closures refer to parents by id, never by reference,
/// so appending nodes never invalidates them.
template <class T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const noexcept { return grad_enabled_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  Var<T> constant(Tensor<T> value) {
    nodes_.push_back(Node{std::move(value), {}, nullptr, false, false});
    return {this, nodes_.size() - 1};
  }

  /// Records a parameter leaf. Frozen parameters behave like constants.
  Var<T> parameter(Parameter<T>& p) {
    const bool needs = grad_enabled_ && !p.frozen;
    BackwardFn fn;
    if (needs) {
      Parameter<T>* target = &p;
      fn = [target](Tape& tape, std::size_t self) {
        if (target->grad.shape() != target->value.shape()) target->zero_grad();
        as_matrix(target->grad).array() += as_matrix(tape.grad(self)).array();
      };
    }
    nodes_.push_back(Node{p.value, {}, std::move(fn), needs, false});
    return {this, nodes_.size() - 1};
  }

  /// Records an op output. `fn` runs only if some parent needs a gradient.
  Var<T> push(Tensor<T> value, std::initializer_list<Var<T>> parents, BackwardFn fn) {
    bool needs = false;
    if (grad_enabled_) {
      for (const auto& p : parents) needs = needs || nodes_[p.id].needs_grad;
    }
    nodes_.push_back(Node{std::move(value), {}, needs ? std::move(fn) : BackwardFn{}, needs, false});
    return {this, nodes_.size() - 1};
  }

  Var<T> push(Tensor<T> value, const std::vector<Var<T>>& parents, BackwardFn fn) {
    bool needs = false;
    if (grad_enabled_) {
      for (const auto& p : parents) needs = needs || nodes_[p.id].needs_grad;
    }
    nodes_.push_back(Node{std::move(value), {}, needs ? std::move(fn) : BackwardFn{}, needs, false});
    return {this, nodes_.size() - 1};
  }

  const Tensor<T>& value(std::size_t id) const { return nodes_[id].value; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }

  /// Gradient buffer of a node, allocated as zeros on first access.
  Tensor<T>& grad(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.has_grad) {
      n.grad = Tensor<T>(n.value.shape());
      n.has_grad = true;
    }
    return n.grad;
  }
  bool has_grad(std::size_t id) const { return nodes_[id].has_grad; }

  /// Backpropagates from `root` with seed gradient `seed` (all ones of root's shape scaled).
  void backward(Var<T> root, T seed = T(1)) {
    if (!grad_enabled_) throw Error("backward called on an inference tape");
    Tensor<T>& g = grad(root.id);
    for (auto& v : g.values()) v += seed;
    for (std::size_t i = root.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.has_grad && n.needs_grad && n.backward) n.backward(*this, i);
    }
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    BackwardFn backward;
    bool needs_grad;
    bool has_grad;
  };

  bool grad_enabled_;
  // A deque keeps references to earlier values valid while nodes are appended.
  std::deque<Node> nodes_;
};

}  // namespace scl

#endif  // SCL_CORE_AUTOGRAD_HPP
