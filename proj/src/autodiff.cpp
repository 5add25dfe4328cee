#include "cdd/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "cdd/error.hpp"

namespace cdd::ad {

namespace {

// Rank-1 tensors take part in broadcasting as a single row.
struct Dims {
  std::size_t rows;
  std::size_t cols;
};

Dims dims_of(const Tensor& t) { return {t.rows(), t.cols()}; }

bool broadcastable(Dims a, Dims b, Dims& out) {
  auto merge = [](std::size_t x, std::size_t y, std::size_t& r) {
    if (x == y || y == 1) {
      r = x;
      return true;
    }
    if (x == 1) {
      r = y;
      return true;
    }
    return false;
  };
  return merge(a.rows, b.rows, out.rows) && merge(a.cols, b.cols, out.cols);
}

Shape out_shape(const Tensor& a, const Tensor& b, Dims d) {
  if (a.rank() == 1 && b.rank() == 1) return {d.cols};
  return {d.rows, d.cols};
}

inline std::size_t bindex(Dims operand, std::size_t r, std::size_t c) {
  return (operand.rows == 1 ? 0 : r) * operand.cols + (operand.cols == 1 ? 0 : c);
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double apply_fn(Pointwise fn, double param, double x) {
  switch (fn) {
    case Pointwise::silu:
      return x * sigmoid(x);
    case Pointwise::tanh:
      return std::tanh(x);
    case Pointwise::relu:
      return x > 0.0 ? x : 0.0;
    case Pointwise::square:
      return x * x;
    case Pointwise::huber: {
      double a = std::abs(x);
      return a <= param ? 0.5 * x * x : param * (a - 0.5 * param);
    }
    case Pointwise::scale:
      return param * x;
  }
  return 0.0;
}

double apply_dfn(Pointwise fn, double param, double x) {
  switch (fn) {
    case Pointwise::silu: {
      double s = sigmoid(x);
      return s * (1.0 + x * (1.0 - s));
    }
    case Pointwise::tanh: {
      double t = std::tanh(x);
      return 1.0 - t * t;
    }
    case Pointwise::relu:
      return x > 0.0 ? 1.0 : 0.0;
    case Pointwise::square:
      return 2.0 * x;
    case Pointwise::huber:
      return std::clamp(x, -param, param);
    case Pointwise::scale:
      return param;
  }
  return 0.0;
}

void accumulate(Tensor& slot, const Tensor& g) {
  if (slot.empty()) {
    slot = g;
    return;
  }
  for (std::size_t i = 0; i < g.size(); ++i) slot[i] += g[i];
}

// Sums a gradient of broadcast shape `full` back onto an operand.
Tensor unbroadcast(const Tensor& g, Dims full, const Tensor& operand) {
  Dims od = dims_of(operand);
  if (od.rows == full.rows && od.cols == full.cols) return Tensor(operand.shape(), g.storage());
  Tensor out(operand.shape(), 0.0);
  for (std::size_t r = 0; r < full.rows; ++r) {
    for (std::size_t c = 0; c < full.cols; ++c) out[bindex(od, r, c)] += g[r * full.cols + c];
  }
  return out;
}

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::input: return "input";
    case Op::constant: return "constant";
    case Op::add: return "add";
    case Op::mul: return "mul";
    case Op::matmul: return "matmul";
    case Op::affine: return "affine";
    case Op::pointwise: return "pointwise";
    case Op::reduce: return "reduce";
    case Op::concat: return "concat";
    case Op::gate_blend: return "gate_blend";
  }
  return "?";
}

Tape::Node Tape::make_node(Op op, std::vector<NodeId> parents) {
  Node n;
  n.op = op;
  n.parents = std::move(parents);
  return n;
}

NodeId Tape::push(Node node) {
  for (NodeId p : node.parents) check_parent(p);
  nodes_.push_back(std::move(node));
  evaluated_ = false;
  return nodes_.size() - 1;
}

void Tape::check_parent(NodeId id) const {
  if (id >= nodes_.size()) throw Error("tape: parent id " + std::to_string(id) + " does not exist");
}

NodeId Tape::input(const std::string& name, bool requires_grad) {
  if (input_ids_.count(name)) throw Error("tape: duplicate input name '" + name + "'");
  Node n;
  n.op = Op::input;
  n.name = name;
  n.requires_grad = requires_grad;
  NodeId id = push(std::move(n));
  input_ids_[name] = id;
  return id;
}

NodeId Tape::constant(Tensor value) {
  Node n;
  n.op = Op::constant;
  n.constant = std::move(value);
  return push(std::move(n));
}

NodeId Tape::add(NodeId a, NodeId b, double ca, double cb) {
  Node n = make_node(Op::add, {a, b});
  n.c0 = ca;
  n.c1 = cb;
  return push(std::move(n));
}

NodeId Tape::mul(NodeId a, NodeId b) { return push(make_node(Op::mul, {a, b})); }

NodeId Tape::matmul(NodeId a, NodeId b) { return push(make_node(Op::matmul, {a, b})); }

NodeId Tape::affine(NodeId x, NodeId weight, NodeId bias) {
  return push(make_node(Op::affine, {x, weight, bias}));
}

NodeId Tape::pointwise(NodeId x, Pointwise fn, double param) {
  if (fn == Pointwise::huber && !(param > 0.0)) throw Error("tape: huber threshold must be positive");
  Node n = make_node(Op::pointwise, {x});
  n.c0 = param;
  n.fn = fn;
  return push(std::move(n));
}

NodeId Tape::reduce(NodeId x, Reduction r) {
  Node n = make_node(Op::reduce, {x});
  n.red = r;
  return push(std::move(n));
}

NodeId Tape::concat(NodeId a, NodeId b) { return push(make_node(Op::concat, {a, b})); }

NodeId Tape::gate_blend(NodeId a, NodeId b, NodeId mu) {
  return push(make_node(Op::gate_blend, {a, b, mu}));
}

void Tape::set_label(NodeId id, std::string label) {
  check_parent(id);
  nodes_[id].label = std::move(label);
}

void Tape::mark_output(const std::string& name, NodeId id) {
  check_parent(id);
  outputs_[name] = id;
}

std::string Tape::describe(NodeId id) const {
  const Node& n = nodes_[id];
  std::string s = "node " + std::to_string(id) + " (" + op_name(n.op);
  if (!n.name.empty()) s += " '" + n.name + "'";
  if (!n.label.empty()) s += " [" + n.label + "]";
  return s + ")";
}

const Tensor& Tape::value(NodeId id) const {
  if (!evaluated_) throw Error("tape: forward has not been run");
  check_parent(id);
  return values_[id];
}

const Tensor& Tape::output_value(const std::string& name) const {
  auto it = outputs_.find(name);
  if (it == outputs_.end()) throw Error("tape: unknown output '" + name + "'");
  return value(it->second);
}

void Tape::eval_node(NodeId id) {
  const Node& n = nodes_[id];
  auto val = [&](std::size_t k) -> const Tensor& { return values_[n.parents[k]]; };
  auto fail = [&](const std::string& msg) { throw ShapeError(describe(id) + ": " + msg); };
  Tensor& out = values_[id];

  switch (n.op) {
    case Op::input:
    case Op::constant:
      break;
    case Op::add:
    case Op::mul: {
      const Tensor& a = val(0);
      const Tensor& b = val(1);
      Dims da = dims_of(a), db = dims_of(b), d{};
      if (!broadcastable(da, db, d)) {
        fail("cannot broadcast " + shape_str(a.shape()) + " with " + shape_str(b.shape()));
      }
      out = Tensor(out_shape(a, b, d));
      const bool fast = (da.rows == d.rows && da.cols == d.cols && db.rows == d.rows && db.cols == d.cols);
      const std::size_t total = d.rows * d.cols;
      if (n.op == Op::add) {
        if (fast) {
          for (std::size_t i = 0; i < total; ++i) out[i] = n.c0 * a[i] + n.c1 * b[i];
        } else {
          for (std::size_t r = 0; r < d.rows; ++r)
            for (std::size_t c = 0; c < d.cols; ++c)
              out[r * d.cols + c] = n.c0 * a[bindex(da, r, c)] + n.c1 * b[bindex(db, r, c)];
        }
      } else {
        if (fast) {
          for (std::size_t i = 0; i < total; ++i) out[i] = a[i] * b[i];
        } else {
          for (std::size_t r = 0; r < d.rows; ++r)
            for (std::size_t c = 0; c < d.cols; ++c)
              out[r * d.cols + c] = a[bindex(da, r, c)] * b[bindex(db, r, c)];
        }
      }
      break;
    }
    case Op::matmul:
    case Op::affine: {
      const Tensor& a = val(0);
      const Tensor& w = val(1);
      if (a.rank() != 2 || w.rank() != 2) fail("operands must be rank 2");
      const std::size_t m = a.rows(), k = a.cols(), nn = w.cols();
      if (w.rows() != k) fail("inner dimensions differ: " + shape_str(a.shape()) + " * " + shape_str(w.shape()));
      out = Tensor({m, nn});
      if (n.op == Op::affine) {
        const Tensor& b = val(2);
        if (b.size() != nn || b.rows() != 1) fail("bias shape " + shape_str(b.shape()) + " does not match output width");
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < nn; ++j) out[i * nn + j] = b[j];
      }
      for (std::size_t i = 0; i < m; ++i) {
        double* orow = &out[i * nn];
        for (std::size_t p = 0; p < k; ++p) {
          const double av = a[i * k + p];
          const double* wrow = &w[p * nn];
          for (std::size_t j = 0; j < nn; ++j) orow[j] += av * wrow[j];
        }
      }
      break;
    }
    case Op::pointwise: {
      const Tensor& x = val(0);
      out = Tensor(x.shape());
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = apply_fn(n.fn, n.c0, x[i]);
      break;
    }
    case Op::reduce: {
      const Tensor& x = val(0);
      double acc = 0.0;
      for (double v : x.values()) acc += v;
      if (n.red == Reduction::mean) acc /= static_cast<double>(x.size());
      out = Tensor::scalar(acc);
      break;
    }
    case Op::concat: {
      const Tensor& a = val(0);
      const Tensor& b = val(1);
      if (a.rank() != 2 || b.rank() != 2 || a.rows() != b.rows()) {
        fail("concat needs rank-2 operands with equal rows, got " + shape_str(a.shape()) + " and " +
             shape_str(b.shape()));
      }
      const std::size_t m = a.rows(), p = a.cols(), q = b.cols();
      out = Tensor({m, p + q});
      for (std::size_t i = 0; i < m; ++i) {
        std::copy_n(&a[i * p], p, &out[i * (p + q)]);
        std::copy_n(&b[i * q], q, &out[i * (p + q) + p]);
      }
      break;
    }
    case Op::gate_blend: {
      const Tensor& a = val(0);
      const Tensor& b = val(1);
      const Tensor& mu = val(2);
      if (!a.same_shape(b)) fail("blend operands differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
      if (mu.size() != 1) fail("gate must be scalar, got " + shape_str(mu.shape()));
      const double g = mu[0];
      out = Tensor(a.shape());
      for (std::size_t i = 0; i < a.size(); ++i) out[i] = (1.0 - g) * a[i] + g * b[i];
      break;
    }
  }
}

std::map<std::string, Tensor> Tape::forward(const std::map<std::string, Tensor>& inputs) {
  for (const auto& [name, t] : inputs) {
    if (!input_ids_.count(name)) throw Error("tape: unknown input '" + name + "'");
  }
  values_.assign(nodes_.size(), Tensor{});
  evaluated_ = false;
  for (NodeId id = 0; id < nodes_.size(); ++id) {
    const Node& n = nodes_[id];
    if (n.op == Op::input) {
      auto it = inputs.find(n.name);
      if (it == inputs.end()) throw Error(describe(id) + ": input not bound");
      values_[id] = it->second;
    } else if (n.op == Op::constant) {
      values_[id] = n.constant;
    } else {
      eval_node(id);
    }
  }
  bound_ = inputs;
  evaluated_ = true;
  std::map<std::string, Tensor> result;
  for (const auto& [name, id] : outputs_) result[name] = values_[id];
  return result;
}

std::map<std::string, Tensor> Tape::backward(const std::string& output, const std::vector<std::string>& wrt) const {
  if (!evaluated_) throw Error("tape: backward called before forward");
  auto oit = outputs_.find(output);
  if (oit == outputs_.end()) throw Error("tape: unknown output '" + output + "'");
  const NodeId root = oit->second;
  if (values_[root].size() != 1) {
    throw ShapeError("tape: backward needs a scalar output, '" + output + "' has shape " +
                     shape_str(values_[root].shape()));
  }

  // A node is relevant when some requested, differentiable leaf feeds it.
  std::vector<char> relevant(nodes_.size(), 0);
  for (const auto& name : wrt) {
    auto it = input_ids_.find(name);
    if (it == input_ids_.end()) throw Error("tape: unknown input '" + name + "' in backward");
    if (nodes_[it->second].requires_grad) relevant[it->second] = 1;
  }
  for (NodeId id = 0; id < nodes_.size(); ++id) {
    for (NodeId p : nodes_[id].parents) relevant[id] |= relevant[p];
  }

  std::vector<Tensor> grads(nodes_.size());
  if (relevant[root]) grads[root] = Tensor(values_[root].shape(), 1.0);

  for (NodeId id = root + 1; id-- > 0;) {
    if (!relevant[id] || grads[id].empty()) continue;
    const Node& n = nodes_[id];
    const Tensor& g = grads[id];
    auto val = [&](std::size_t k) -> const Tensor& { return values_[n.parents[k]]; };
    auto wants = [&](std::size_t k) { return relevant[n.parents[k]] != 0; };
    auto give = [&](std::size_t k, const Tensor& t) { accumulate(grads[n.parents[k]], t); };

    switch (n.op) {
      case Op::input:
      case Op::constant:
        break;
      case Op::add: {
        const Tensor& a = val(0);
        const Tensor& b = val(1);
        Dims d{};
        broadcastable(dims_of(a), dims_of(b), d);
        if (wants(0)) give(0, unbroadcast(scaled(g, n.c0), d, a));
        if (wants(1)) give(1, unbroadcast(scaled(g, n.c1), d, b));
        break;
      }
      case Op::mul: {
        const Tensor& a = val(0);
        const Tensor& b = val(1);
        Dims da = dims_of(a), db = dims_of(b), d{};
        broadcastable(da, db, d);
        Tensor partial({d.rows * d.cols});
        if (wants(0)) {
          for (std::size_t r = 0; r < d.rows; ++r)
            for (std::size_t c = 0; c < d.cols; ++c) partial[r * d.cols + c] = g[r * d.cols + c] * b[bindex(db, r, c)];
          give(0, unbroadcast(partial, d, a));
        }
        if (wants(1)) {
          for (std::size_t r = 0; r < d.rows; ++r)
            for (std::size_t c = 0; c < d.cols; ++c) partial[r * d.cols + c] = g[r * d.cols + c] * a[bindex(da, r, c)];
          give(1, unbroadcast(partial, d, b));
        }
        break;
      }
      case Op::matmul:
      case Op::affine: {
        const Tensor& a = val(0);
        const Tensor& w = val(1);
        const std::size_t m = a.rows(), k = a.cols(), nn = w.cols();
        if (wants(0)) {
          Tensor ga(a.shape(), 0.0);
          for (std::size_t i = 0; i < m; ++i) {
            const double* grow = &g[i * nn];
            for (std::size_t p = 0; p < k; ++p) {
              const double* wrow = &w[p * nn];
              double acc = 0.0;
              for (std::size_t j = 0; j < nn; ++j) acc += grow[j] * wrow[j];
              ga[i * k + p] = acc;
            }
          }
          give(0, ga);
        }
        if (wants(1)) {
          Tensor gw(w.shape(), 0.0);
          for (std::size_t i = 0; i < m; ++i) {
            const double* grow = &g[i * nn];
            for (std::size_t p = 0; p < k; ++p) {
              const double av = a[i * k + p];
              double* gwrow = &gw[p * nn];
              for (std::size_t j = 0; j < nn; ++j) gwrow[j] += av * grow[j];
            }
          }
          give(1, gw);
        }
        if (n.op == Op::affine && wants(2)) {
          Tensor gb(val(2).shape(), 0.0);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < nn; ++j) gb[j] += g[i * nn + j];
          give(2, gb);
        }
        break;
      }
      case Op::pointwise: {
        const Tensor& x = val(0);
        Tensor gx(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) gx[i] = g[i] * apply_dfn(n.fn, n.c0, x[i]);
        give(0, gx);
        break;
      }
      case Op::reduce: {
        const Tensor& x = val(0);
        double scale = n.red == Reduction::mean ? g[0] / static_cast<double>(x.size()) : g[0];
        give(0, Tensor(x.shape(), scale));
        break;
      }
      case Op::concat: {
        const Tensor& a = val(0);
        const Tensor& b = val(1);
        const std::size_t m = a.rows(), p = a.cols(), q = b.cols();
        if (wants(0)) {
          Tensor ga(a.shape());
          for (std::size_t i = 0; i < m; ++i) std::copy_n(&g[i * (p + q)], p, &ga[i * p]);
          give(0, ga);
        }
        if (wants(1)) {
          Tensor gb(b.shape());
          for (std::size_t i = 0; i < m; ++i) std::copy_n(&g[i * (p + q) + p], q, &gb[i * q]);
          give(1, gb);
        }
        break;
      }
      case Op::gate_blend: {
        const Tensor& a = val(0);
        const Tensor& b = val(1);
        const double mu = val(2)[0];
        if (wants(0)) give(0, scaled(g, 1.0 - mu));
        if (wants(1)) give(1, scaled(g, mu));
        if (wants(2)) {
          double acc = 0.0;
          for (std::size_t i = 0; i < a.size(); ++i) acc += g[i] * (b[i] - a[i]);
          give(2, Tensor(val(2).shape(), acc));
        }
        break;
      }
    }
  }

  std::map<std::string, Tensor> result;
  for (const auto& name : wrt) {
    NodeId id = input_ids_.at(name);
    result[name] = grads[id].empty() ? Tensor(values_[id].shape(), 0.0) : grads[id];
  }
  return result;
}

Tensor numeric_gradient(Tape& tape, const std::string& output, const std::string& wrt, double step) {
  if (!(step > 0.0)) throw Error("numeric_gradient: step must be positive");
  if (!tape.has_run()) throw Error("numeric_gradient: forward has not been run");
  std::map<std::string, Tensor> inputs = tape.bound_inputs();
  auto it = inputs.find(wrt);
  if (it == inputs.end()) throw Error("numeric_gradient: unknown input '" + wrt + "'");
  const Tensor original = it->second;
  Tensor grad(original.shape());
  for (std::size_t i = 0; i < original.size(); ++i) {
    it->second[i] = original[i] + step;
    double up = tape.forward(inputs).at(output).item();
    it->second[i] = original[i] - step;
    double down = tape.forward(inputs).at(output).item();
    it->second[i] = original[i];
    grad[i] = (up - down) / (2.0 * step);
  }
  tape.forward(inputs);
  return grad;
}

GradCheckReport compare_gradients(const Tensor& analytic, const Tensor& numeric, double tol) {
  require_same_shape(analytic, numeric, "compare_gradients");
  GradCheckReport rep;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    double a = analytic[i], n = numeric[i];
    double denom = std::max({std::abs(a), std::abs(n), kRelErrorFloor});
    double rel = std::abs(a - n) / denom;
    if (!(rel <= rep.max_rel_error)) {
      rep.max_rel_error = rel;
      rep.worst_index = i;
    }
  }
  rep.pass = rep.max_rel_error <= tol;
  return rep;
}

GradCheckReport grad_check(Tape& tape, const std::string& output, const std::string& wrt, double step, double tol) {
  if (!tape.has_run()) throw Error("grad_check: forward has not been run");
  Tensor analytic = tape.backward(output, {wrt}).at(wrt);
  Tensor numeric = numeric_gradient(tape, output, wrt, step);
  return compare_gradients(analytic, numeric, tol);
}

}  // namespace cdd::ad
