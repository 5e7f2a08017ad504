#pragma once

#include "gimtp/tensor.hpp"

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace gimtp {
class ParameterStore;
}

namespace gimtp::ad {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
// owning tape is alive.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t axis) const { return value().dim(axis); }
  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

// Linear record of a forward evaluation. backward() walks it in reverse.
// A tape is confined to one thread; separate tapes may run concurrently as
// long as the parameters they read are not being updated.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var variable(Tensor value);
  // Binds parameter `index` of the store. Repeated calls return the same node,
  // so reuse across timesteps accumulates into one gradient.
  Var parameter(const ParameterStore& store, std::size_t index);

  // Zeroes all gradients, seeds d(loss)/d(loss) = 1 and propagates.
  void backward(Var loss);

  const Tensor& value(int id) const;
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  // Gradient buffer of a node; zero-sized if nothing flowed into it.
  const Tensor& grad(Var v) const { return grad(v.id()); }
  const Tensor& grad(int id) const;
  Tensor& grad_buffer(int id);

  std::size_t size() const { return nodes_.size(); }
  const std::vector<std::pair<std::size_t, int>>& bound_parameters() const { return bound_; }

  Var record(Tensor value, std::span<const Var> parents, BackwardFn fn);

 private:
  struct Node {
    Tensor value;
    const Tensor* external = nullptr;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  const ParameterStore* store_ = nullptr;
  std::vector<Node> nodes_;
  std::vector<int> param_nodes_;
  std::vector<std::pair<std::size_t, int>> bound_;
};

// Arithmetic. Binary elementwise ops accept equal shapes or leading-axis
// broadcasting: the smaller operand's shape (after stripping leading 1s) must
// be a suffix of the larger one.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var add_scalar(Var a, double offset);

Var matmul(Var a, Var b);
// Batched matrix product over the leading axis. Either operand may be 2-D, in
// which case it is shared by every batch entry.
Var bmm(Var a, Var b);
Var transpose(Var a);

Var tanh(Var a);
Var exp(Var a);
Var log(Var a);
Var sigmoid(Var a);
Var relu(Var a);
Var leaky_relu(Var a, double slope);
Var square(Var a);
// max(a, floor); no gradient where the floor is active.
Var floor_at(Var a, double floor);

Var softmax(Var a, std::size_t axis);
Var log_softmax(Var a, std::size_t axis);

Var sum(Var a);
Var mean(Var a);

Var reshape(Var a, Shape shape);
Var concat(std::span<const Var> parts, std::size_t axis);
// Rows [begin, end) along the leading axis.
Var slice(Var a, std::size_t begin, std::size_t end);
// Columns [begin, end) of a matrix.
Var columns(Var a, std::size_t begin, std::size_t end);

// Normalizes each row over the last axis, then applies gain and bias (both
// shaped like that axis).
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);

// Operator sugar for the common cases.
inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

}  // namespace gimtp::ad
