#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "mlbviz/tensor.hpp"

namespace mlbviz {

// Opaque handle to a node on a Tape.
struct NodeId {
  std::size_t index = 0;
  friend bool operator==(NodeId, NodeId) = default;
};

// Guided differs from Standard only at ReLU nodes, where it additionally
// zeroes negative upstream gradients.
enum class GradMode { Standard, Guided };

enum class OpKind {
  Constant,
  Variable,
  MatMul,
  Hadamard,
  Add,
  AddChannelBias,
  Tanh,
  Relu,
  SoftmaxRows,
  LogSoftmaxRows,
  Conv2d,
  EmbeddingLookup,
  Detach,
  Transpose,
  Reshape,
  ReplicateRows,
  Row,
  Element,
  Sum,
};

const char* op_name(OpKind op);

struct OpAttrs {
  std::size_t stride = 1;
  std::size_t pad = 0;
  std::size_t index = 0;  // Row / Element / ReplicateRows count
  std::vector<std::size_t> ids;  // EmbeddingLookup
};

struct Node {
  OpKind op = OpKind::Constant;
  std::vector<std::size_t> inputs;
  Tensor value;
  OpAttrs attrs;
  bool requires_grad = false;
};

// Append-only operation record. Every input index of node k is below k, so
// the node order is a topological order.
class Tape {
 public:
  std::size_t size() const { return nodes_.size(); }
  const Node& node(NodeId id) const;
  const Tensor& value(NodeId id) const { return node(id).value; }
  std::span<const Node> nodes() const { return nodes_; }

  // Used by the op functions below; validates inputs and finiteness.
  NodeId append(OpKind op, std::vector<std::size_t> inputs, Tensor value, OpAttrs attrs = {});

  // Re-executes every non-leaf node from its inputs on a fresh tape.
  Tape replay() const;

 private:
  std::vector<Node> nodes_;
};

// Leaf whose gradient is never tracked.
NodeId const_node(Tape& tape, Tensor value);
// Leaf that receives a gradient in backward().
NodeId variable(Tape& tape, Tensor value);

// a: m×k (or a length-k vector, treated as one row), b: k×n.
NodeId matmul(Tape& tape, NodeId a, NodeId b);
NodeId hadamard(Tape& tape, NodeId a, NodeId b);
// Equal dims, or b is a bias vector matching the last extent of a.
NodeId add(Tape& tape, NodeId a, NodeId b);
// a: C×H×W, b: length-C vector added to every pixel of channel c.
NodeId add_channel_bias(Tape& tape, NodeId a, NodeId b);
NodeId tanh_op(Tape& tape, NodeId a);
NodeId relu_op(Tape& tape, NodeId a);
// Row-wise softmax of a matrix; a vector is a single row.
NodeId softmax_rows(Tape& tape, NodeId a);
NodeId log_softmax_rows(Tape& tape, NodeId a);
// Cross-correlation. input: C_in×H×W, kernel: C_out×C_in×k×k.
NodeId conv2d(Tape& tape, NodeId input, NodeId kernel, std::size_t stride, std::size_t pad);
// table: V×D; result row i is table row ids[i].
NodeId embedding_lookup(Tape& tape, NodeId table, std::span<const std::size_t> ids);
NodeId detach(Tape& tape, NodeId a);
NodeId transpose(Tape& tape, NodeId a);
NodeId reshape(Tape& tape, NodeId a, Shape dims);
// Vector of length n -> count×n matrix with every row equal to a.
NodeId replicate_rows(Tape& tape, NodeId a, std::size_t count);
// Row r of a matrix as a vector.
NodeId row(Tape& tape, NodeId a, std::size_t r);
// Single entry at a flat index, as a length-1 tensor.
NodeId element(Tape& tape, NodeId a, std::size_t flat_index);
NodeId sum_all(Tape& tape, NodeId a);

// Gradients produced by a backward sweep, indexed by node.
class Gradients {
 public:
  explicit Gradients(std::size_t n) : grads_(n) {}
  bool contains(NodeId id) const { return id.index < grads_.size() && grads_[id.index].has_value(); }
  const Tensor& at(NodeId id) const;
  // Gradient at id, or zeros of the node's shape when nothing reached it.
  Tensor get_or_zero(const Tape& tape, NodeId id) const;
  std::size_t size() const { return grads_.size(); }

 private:
  friend Gradients backward(const Tape&, NodeId, const Tensor&, GradMode);
  std::vector<std::optional<Tensor>> grads_;
};

// Reverse sweep from seed_node in descending node order. Shared nodes sum
// their incoming contributions in that order. Only nodes that depend on a
// variable receive gradients; detach and constants stop the flow.
Gradients backward(const Tape& tape, NodeId seed_node, const Tensor& seed, GradMode mode = GradMode::Standard);

// Builds a scalar (length-1) output from a variable leaf on the given tape.
using ScalarProbe = std::function<NodeId(Tape&, NodeId)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped_at_kink = 0;
};

// Compares the Standard-mode gradient of probe at x with central differences
// (f(x+h)-f(x-h))/2h. Relative error uses max(|analytic|, |numeric|, floor) as
// the denominator; the floor must sit above the round-off of the difference
// quotient (about 1e-16·|f|/h) or exactly-zero gradients report noise. Coordinates whose perturbation flips any ReLU input sign
// are skipped and counted. When coords is non-empty only those flat indices
// are checked.
GradCheckResult grad_check(const ScalarProbe& probe, const Tensor& x, double h = 1e-5,
                           std::span<const std::size_t> coords = {}, double floor = 1e-8);

// Bit pattern of every ReLU input sign on the tape, in node order.
std::vector<bool> relu_signature(const Tape& tape);

namespace testing {
// Makes ReLU backward pass gradients through unmasked. Only for mutation
// checks of the verification suite.
void set_relu_backward_fault(bool enabled);
bool relu_backward_fault();
}  // namespace testing

}  // namespace mlbviz
