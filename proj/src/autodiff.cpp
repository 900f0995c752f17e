#include "endopoint/autodiff.hpp"

namespace endopoint {

const Tensor& Var::value() const { return tape_->value(id_); }
const Tensor& Var::grad() const { return tape_->grad(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, true, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs,
                 BackwardFn backward) {
  bool needs = false;
  for (const Var& in : inputs) needs = needs || nodes_[in.id()].requires_grad;
  nodes_.push_back(Node{std::move(value), {}, needs,
                        needs ? std::move(backward) : BackwardFn{}});
  return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::grad(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.shape() != n.value.shape()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

Tensor& Tape::grad_buffer(Var v) {
  grad(v.id());
  return nodes_[v.id()].grad;
}

void Tape::backward(Var loss) {
  if (loss.value().size() != 1) {
    throw ShapeError("backward: loss must be scalar, got " +
                     shape_string(loss.value().shape()));
  }
  for (Node& n : nodes_) n.grad = Tensor(n.value.shape());
  nodes_[loss.id()].grad[0] = 1.0;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    // A node's gradient is final once every later node has run.
    if (n.backward) n.backward(n.grad, n.value);
  }
}

}  // namespace endopoint
