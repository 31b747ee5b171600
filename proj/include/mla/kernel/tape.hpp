#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "mla/kernel/tensor.hpp"

namespace mla::kernel {

class Tape;

// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Ordered record of primitive operations. Nodes are appended after their
// inputs, so a single reverse sweep over the node list is a valid
// reverse-topological traversal.
class Tape {
 public:
  // Receives the gradient of the node's output and pushes it to the inputs.
  using Backprop = std::function<void(Tape&, std::span<const double>)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  // Leaf whose gradient is kept on the tape (read it with grad()).
  Var input(Tensor value);
  // Leaf bound to an external parameter; backward() adds into param.grad().
  Var parameter(Tensor& param);
  // Copy of v's value that blocks gradient flow.
  Var detach(Var v);

  Var record(Tensor value, std::initializer_list<Var> inputs, Backprop backprop);
  Var record(Tensor value, std::span<const Var> inputs, Backprop backprop);

  const Tensor& value(Var v) const { return nodes_[v.id()].value; }
  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }
  // Gradient buffer of v; allocated (zeros) on first access.
  std::span<double> grad_buffer(Var v);
  std::span<const double> grad(Var v) const { return nodes_[v.id()].grad; }

  // Seeds d(loss)/d(loss) = 1 and sweeps backwards once. Gradients
  // accumulate; callers zero parameter grads between steps.
  void backward(Var loss);

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    bool requires_grad = false;
    Tensor* param = nullptr;
    Backprop backprop;
  };

  std::vector<Node> nodes_;
  bool swept_ = false;
};

inline const Tensor& Var::value() const { return tape_->value(*this); }

}  // namespace mla::kernel
