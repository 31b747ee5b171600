#include "mla/kernel/tape.hpp"

#include <algorithm>

#include "mla/error.hpp"

namespace mla::kernel {

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, nullptr, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::input(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, true, nullptr, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(Tensor& param) {
  nodes_.push_back(Node{param, {}, true, &param, {}});
  nodes_.back().value.drop_grad();
  return Var(this, nodes_.size() - 1);
}

Var Tape::detach(Var v) { return constant(value(v)); }

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, Backprop backprop) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(backprop));
}

Var Tape::record(Tensor value, std::span<const Var> inputs, Backprop backprop) {
  const bool needs = std::any_of(inputs.begin(), inputs.end(),
                                 [this](Var in) { return requires_grad(in); });
  nodes_.push_back(Node{std::move(value), {}, needs, nullptr,
                        needs ? std::move(backprop) : Backprop{}});
  return Var(this, nodes_.size() - 1);
}

std::span<double> Tape::grad_buffer(Var v) {
  Node& node = nodes_[v.id()];
  if (node.grad.size() != node.value.size()) node.grad.assign(node.value.size(), 0.0);
  return node.grad;
}

void Tape::backward(Var loss) {
  if (&loss.tape() != this) throw ContractError("loss node belongs to another tape");
  const Tensor& out = value(loss);
  if (out.size() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " + shape_string(out.shape()));
  }
  if (swept_) throw ContractError("tape has already been swept backwards");
  swept_ = true;
  if (!requires_grad(loss)) return;
  grad_buffer(loss)[0] = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.requires_grad || node.grad.empty()) continue;
    if (node.backprop) {
      // Inputs precede the node, so this buffer is never written by the callback.
      node.backprop(*this, node.grad);
    } else if (node.param != nullptr) {
      std::span<double> dst = node.param->grad();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += node.grad[k];
    }
  }
}

}  // namespace mla::kernel
