#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <vector>

#include "endopoint/tensor.hpp"

namespace endopoint {

class Tape;

/// Handle to a tensor recorded on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  /// Accumulated gradient; zeros when backward never reached this node.
  const Tensor& grad() const;
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Records a forward computation and replays it in reverse to accumulate
/// gradients. Nodes are appended after their inputs, so reverse insertion
/// order is a reverse topological order.
class Tape {
 public:
  /// Receives the gradient flowing into the node's output and the output
  /// value itself.
  using BackwardFn =
      std::function<void(const Tensor& grad_out, const Tensor& out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var variable(Tensor value);
  /// Appends the result of an operation. `backward` is only invoked when one
  /// of `inputs` requires a gradient.
  Var record(Tensor value, std::initializer_list<Var> inputs,
             BackwardFn backward);

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded backward function
  /// once. Rejects non-scalar losses.
  void backward(Var loss);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& grad(std::size_t id);
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Gradient buffer of an input node, allocated on first use. Backward
  /// functions add into it.
  Tensor& grad_buffer(Var v);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
  };
  std::deque<Node> nodes_;  // stable references while recording
};

}  // namespace endopoint
