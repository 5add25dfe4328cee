#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "cdd/tensor.hpp"

// Reverse-mode automatic differentiation over a static tape.
//
// A Tape is built once as a graph of primitives whose leaves are named inputs
// and constants, then evaluated any number of times with `forward` and
// differentiated with `backward`. Nodes are appended in construction order,
// which is a topological order by construction: every parent id is smaller
// than its child id.
//
// Elementwise primitives (add, mul) broadcast an operand along any axis of
// extent 1, so per-row coefficients ([B x 1]) and scalars ([1]) combine with
// [B x D] batches directly. Gradients of broadcast operands are summed back in
// row-major order, which keeps every reduction deterministic.
namespace cdd::ad {

using NodeId = std::size_t;

enum class Op { input, constant, add, mul, matmul, affine, pointwise, reduce, concat, gate_blend };

enum class Pointwise { silu, tanh, relu, square, huber, scale };

enum class Reduction { sum, mean };

const char* op_name(Op op);

class Tape {
 public:
  // Leaf bound by name at forward time. Inputs with requires_grad = false
  // never receive gradient; their reported gradient is identically zero.
  NodeId input(const std::string& name, bool requires_grad = true);
  NodeId constant(Tensor value);

  NodeId add(NodeId a, NodeId b, double ca = 1.0, double cb = 1.0);
  NodeId sub(NodeId a, NodeId b) { return add(a, b, 1.0, -1.0); }
  NodeId mul(NodeId a, NodeId b);
  NodeId matmul(NodeId a, NodeId b);
  NodeId affine(NodeId x, NodeId weight, NodeId bias);
  NodeId pointwise(NodeId x, Pointwise fn, double param = 0.0);
  NodeId reduce(NodeId x, Reduction r);
  NodeId concat(NodeId a, NodeId b);
  // (1 - mu) * a + mu * b with scalar mu.
  NodeId gate_blend(NodeId a, NodeId b, NodeId mu);

  void set_label(NodeId id, std::string label);
  void mark_output(const std::string& name, NodeId id);

  std::map<std::string, Tensor> forward(const std::map<std::string, Tensor>& inputs);

  // Gradient of the scalar output `output` with respect to the named inputs.
  std::map<std::string, Tensor> backward(const std::string& output, const std::vector<std::string>& wrt) const;

  const Tensor& value(NodeId id) const;
  const Tensor& output_value(const std::string& name) const;
  const std::map<std::string, Tensor>& bound_inputs() const { return bound_; }
  std::size_t size() const { return nodes_.size(); }
  bool has_input(const std::string& name) const { return input_ids_.count(name) != 0; }
  bool has_run() const { return evaluated_; }

 private:
  struct Node {
    Op op = Op::input;
    std::vector<NodeId> parents;
    double c0 = 0.0;
    double c1 = 0.0;
    Pointwise fn = Pointwise::scale;
    Reduction red = Reduction::sum;
    std::string name;   // input name
    std::string label;  // diagnostic label
    bool requires_grad = false;
    Tensor constant;
  };

  static Node make_node(Op op, std::vector<NodeId> parents);
  NodeId push(Node node);
  void check_parent(NodeId id) const;
  std::string describe(NodeId id) const;
  void eval_node(NodeId id);

  std::vector<Node> nodes_;
  std::vector<Tensor> values_;
  std::map<std::string, NodeId> input_ids_;
  std::map<std::string, NodeId> outputs_;
  std::map<std::string, Tensor> bound_;
  bool evaluated_ = false;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  bool pass = true;
};

// Relative error |a - n| / max(|a|, |n|, kRelErrorFloor); the floor keeps
// entries whose true gradient is ~0 from dominating on rounding noise.
inline constexpr double kRelErrorFloor = 1e-6;

Tensor numeric_gradient(Tape& tape, const std::string& output, const std::string& wrt, double step);
GradCheckReport compare_gradients(const Tensor& analytic, const Tensor& numeric, double tol);

// Compares reverse-mode gradients against central differences at the inputs
// most recently bound with forward(). Leaves the tape evaluated at those inputs.
GradCheckReport grad_check(Tape& tape, const std::string& output, const std::string& wrt, double step,
                           double tol);

}  // namespace cdd::ad
