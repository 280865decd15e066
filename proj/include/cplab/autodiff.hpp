#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cplab/ndarray.hpp"

namespace cplab {

class ParameterStore;
class Tape;

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

enum class OpKind {
  kConstant,
  kParameter,
  kInput,
  kMatmul,
  kTranspose,
  kAdd,
  kSub,
  kMul,
  kScale,
  kAddScalar,
  kTanh,
  kSigmoid,
  kRelu,
  kExp,
  kLog,
  kClampMin,
  kSum,
  kMean,
  kSoftmax,
  kConcat,
  kGatherRows,
  kSliceCols,
  kMask,
  kReshape,
  kDetach,
  kPick,
  kSquaredError,
  kCrossEntropy,
};

const char* op_name(OpKind op);

// Handle to a node recorded on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const NdArray& value() const;
  const Shape& shape() const { return value().shape(); }
  double item() const { return value().item(); }
};

struct Node {
  NdArray value;
  NdArray grad;  // empty until the first gradient reaches the node
  OpKind op = OpKind::kConstant;
  std::vector<std::size_t> parents;
  bool requires_grad = false;
  std::string name;  // parameter path for kParameter, label for kInput
  std::function<void(Tape&, std::size_t)> backward;
};

// Define-by-run tape. Nodes are appended in creation order, so reverse order
// is a valid topological order for the backward sweep.
class Tape {
 public:
  Var constant(NdArray value);
  Var input(NdArray value, std::string label = {});
  // Records the current value of a stored parameter as a differentiable leaf.
  // Repeated calls with the same name return the same node.
  Var param(const ParameterStore& store, const std::string& name);

  Var record(NdArray value, OpKind op, std::vector<std::size_t> parents,
             std::function<void(Tape&, std::size_t)> backward);

  const Node& node(std::size_t id) const { return nodes_.at(id); }
  std::size_t size() const { return nodes_.size(); }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  // Gradient accumulator of a node, allocated as zeros on first access.
  NdArray& grad_of(std::size_t id);
  const NdArray& grad_seed(std::size_t id) const { return nodes_[id].grad; }

  // Reverse sweep from a scalar root. Throws ShapeError on non-scalar roots.
  void backward(Var root);

  // Gradients for every parameter leaf on this tape; unreached leaves get zeros.
  std::map<std::string, NdArray> parameter_grads() const;
  // Gradient of a leaf (zeros if unreached).
  NdArray grad(Var v) const;

 private:
  std::vector<Node> nodes_;
  std::map<std::string, std::size_t> param_ids_;
};

// Runs a fresh backward on `root` and returns the parameter gradient map.
std::map<std::string, NdArray> backward(Var root);

// ---- primitives -----------------------------------------------------------
//
// Broadcasting for add/sub/mul: `b` must match `a` exactly, be a single
// element, be a row vector ([c] or [1,c]) matching a's last dim, or be a
// column [r,1] matching a 2-D a of shape [r,c].

Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double c);
Var tanh(Var a);
Var sigmoid(Var a);
Var relu(Var a);
Var exp(Var a);
Var log(Var a);  // DomainError on non-positive input
Var clamp_min(Var a, double lo);
Var sum(Var a, std::size_t axis);
Var mean(Var a, std::size_t axis);
Var sum_all(Var a);
Var mean_all(Var a);
Var softmax(Var a, std::size_t axis);
Var concat(std::span<const Var> parts, std::size_t axis);
Var concat(std::initializer_list<Var> parts, std::size_t axis);
Var gather_rows(Var a, std::span<const std::size_t> rows);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var mask(Var a, const NdArray& keep);
Var reshape(Var a, Shape shape);
Var detach(Var a);
// out[r] = a[r, cols[r]], shape [rows, 1].
Var pick(Var a, std::span<const std::size_t> cols);
// mean((a - b)^2) over all elements.
Var squared_error(Var a, Var b);
// mean over rows of -log softmax(logits[r])[targets[r]].
Var cross_entropy_logits(Var logits, std::span<const std::size_t> targets);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

}  // namespace cplab
