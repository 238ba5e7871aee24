#include "hypermimo/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "hypermimo/errors.hpp"

namespace hypermimo::ad {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape s, double fill)
    : shape(std::move(s)), data(shape_size(shape), fill) {}

Tensor::Tensor(Shape s, std::vector<double> values)
    : shape(std::move(s)), data(std::move(values)) {
  if (data.size() != shape_size(shape)) {
    throw DimensionError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
  }
}

bool Tensor::all_finite() const {
  return std::all_of(data.begin(), data.end(),
                     [](double v) { return std::isfinite(v); });
}

const char* op_name(Op op) {
  switch (op) {
    case Op::Constant: return "constant";
    case Op::Parameter: return "parameter";
    case Op::MatMul: return "matmul";
    case Op::BatchMatMul: return "batch_matmul";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Div: return "div";
    case Op::Exp: return "exp";
    case Op::MaxConst: return "max_const";
    case Op::Sum: return "sum";
    case Op::SumRows: return "sum_rows";
    case Op::Elu: return "elu";
    case Op::Abs: return "abs";
    case Op::Square: return "square";
    case Op::StopGradient: return "stop_gradient";
    case Op::Scale: return "scale";
    case Op::AddConst: return "add_const";
    case Op::Reshape: return "reshape";
    case Op::Transpose: return "transpose";
    case Op::Expand: return "expand";
    case Op::SliceCols: return "slice_cols";
  }
  return "unknown";
}

namespace {

[[noreturn]] void shape_error(Op op, const Shape& a, const Shape& b) {
  throw DimensionError(std::string(op_name(op)) + ": incompatible shapes " +
                       shape_str(a) + " and " + shape_str(b));
}

[[noreturn]] void shape_error(Op op, const Shape& a) {
  throw DimensionError(std::string(op_name(op)) + ": invalid input shape " +
                       shape_str(a));
}

// c[m x n] += a[m x k] . b[k x n], optionally with either operand transposed
// in storage (ta: a stored [k x m]; tb: b stored [n x k]).
void gemm_acc(const double* a, const double* b, double* c, std::size_t m,
              std::size_t k, std::size_t n, bool ta, bool tb) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ta ? a[p * m + i] : a[i * k + p];
      if (av == 0.0) continue;
      if (tb) {
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * b[j * k + p];
      } else {
        const double* brow = b + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

struct ExpandMap {
  std::vector<std::size_t> out_strides;
  std::vector<std::size_t> in_strides;  // zero along broadcast dims
};

ExpandMap expand_map(const Shape& in, const Shape& out) {
  ExpandMap m;
  const std::size_t r = out.size();
  m.out_strides.assign(r, 1);
  m.in_strides.assign(r, 0);
  std::size_t os = 1, is = 1;
  for (std::size_t d = r; d-- > 0;) {
    m.out_strides[d] = os;
    m.in_strides[d] = in[d] == 1 ? 0 : is;
    os *= out[d];
    is *= in[d];
  }
  return m;
}

std::size_t expand_source(const ExpandMap& m, std::size_t flat) {
  std::size_t src = 0;
  for (std::size_t d = 0; d < m.out_strides.size(); ++d) {
    const std::size_t idx = flat / m.out_strides[d];
    flat -= idx * m.out_strides[d];
    src += idx * m.in_strides[d];
  }
  return src;
}

}  // namespace

void Graph::check_input(NodeId id) const {
  if (id >= nodes_.size()) {
    throw ContractError("graph input node " + std::to_string(id) +
                        " does not exist");
  }
}

NodeId Graph::constant(Tensor value) {
  nodes_.push_back({Op::Constant, {}, std::move(value), 0.0, {}});
  return nodes_.size() - 1;
}

NodeId Graph::parameter(Tensor value) {
  nodes_.push_back({Op::Parameter, {}, std::move(value), 0.0, {}});
  params_.push_back(nodes_.size() - 1);
  return nodes_.size() - 1;
}

NodeId Graph::apply(Op op, std::span<const NodeId> inputs, double scalar,
                    std::vector<std::size_t> ints) {
  for (NodeId id : inputs) check_input(id);
  auto in = [&](std::size_t i) -> const Tensor& {
    return nodes_[inputs[i]].value;
  };
  auto need = [&](std::size_t n) {
    if (inputs.size() != n) {
      throw ContractError(std::string(op_name(op)) + " expects " +
                          std::to_string(n) + " inputs");
    }
  };

  Tensor out;
  switch (op) {
    case Op::Constant:
    case Op::Parameter:
      throw ContractError("leaf nodes are created with constant()/parameter()");

    case Op::MatMul: {
      need(2);
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        shape_error(op, a.shape, b.shape);
      }
      out = Tensor({a.dim(0), b.dim(1)});
      gemm_acc(a.data.data(), b.data.data(), out.data.data(), a.dim(0),
               a.dim(1), b.dim(1), false, false);
      break;
    }
    case Op::BatchMatMul: {
      need(2);
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) ||
          a.dim(2) != b.dim(1)) {
        shape_error(op, a.shape, b.shape);
      }
      const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2),
                        n = b.dim(2);
      out = Tensor({batch, m, n});
      for (std::size_t s = 0; s < batch; ++s) {
        gemm_acc(a.data.data() + s * m * k, b.data.data() + s * k * n,
                 out.data.data() + s * m * n, m, k, n, false, false);
      }
      break;
    }
    case Op::Add:
    case Op::Sub:
    case Op::Mul:
    case Op::Div: {
      need(2);
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      if (a.shape != b.shape) shape_error(op, a.shape, b.shape);
      out = Tensor(a.shape);
      const std::size_t n = a.size();
      for (std::size_t i = 0; i < n; ++i) {
        switch (op) {
          case Op::Add: out[i] = a[i] + b[i]; break;
          case Op::Sub: out[i] = a[i] - b[i]; break;
          case Op::Mul: out[i] = a[i] * b[i]; break;
          default: out[i] = a[i] / b[i]; break;
        }
      }
      break;
    }
    case Op::Exp:
    case Op::Elu:
    case Op::Abs:
    case Op::Square:
    case Op::StopGradient:
    case Op::MaxConst:
    case Op::Scale:
    case Op::AddConst: {
      need(1);
      const Tensor& a = in(0);
      out = Tensor(a.shape);
      const std::size_t n = a.size();
      for (std::size_t i = 0; i < n; ++i) {
        const double x = a[i];
        switch (op) {
          case Op::Exp: out[i] = std::exp(x); break;
          case Op::Elu: out[i] = x > 0.0 ? x : std::expm1(x); break;
          case Op::Abs: out[i] = std::fabs(x); break;
          case Op::Square: out[i] = x * x; break;
          case Op::MaxConst: out[i] = std::max(x, scalar); break;
          case Op::Scale: out[i] = scalar * x; break;
          case Op::AddConst: out[i] = x + scalar; break;
          default: out[i] = x; break;
        }
      }
      break;
    }
    case Op::Sum: {
      need(1);
      const Tensor& a = in(0);
      out = Tensor::scalar(std::accumulate(a.data.begin(), a.data.end(), 0.0));
      break;
    }
    case Op::SumRows: {
      need(1);
      const Tensor& a = in(0);
      if (a.rank() < 2) shape_error(op, a.shape);
      const std::size_t rows = a.dim(0);
      const std::size_t width = a.size() / std::max<std::size_t>(rows, 1);
      out = Tensor({rows});
      for (std::size_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (std::size_t j = 0; j < width; ++j) acc += a[r * width + j];
        out[r] = acc;
      }
      break;
    }
    case Op::Reshape: {
      need(1);
      const Tensor& a = in(0);
      if (shape_size(ints) != a.size()) shape_error(op, a.shape, ints);
      out = Tensor(ints, a.data);
      break;
    }
    case Op::Transpose: {
      need(1);
      const Tensor& a = in(0);
      if (a.rank() != 2) shape_error(op, a.shape);
      const std::size_t r = a.dim(0), c = a.dim(1);
      out = Tensor({c, r});
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a[i * c + j];
      break;
    }
    case Op::Expand: {
      need(1);
      const Tensor& a = in(0);
      if (a.rank() != ints.size()) shape_error(op, a.shape, ints);
      for (std::size_t d = 0; d < ints.size(); ++d) {
        if (a.dim(d) != ints[d] && a.dim(d) != 1) shape_error(op, a.shape, ints);
      }
      out = Tensor(ints);
      const ExpandMap m = expand_map(a.shape, ints);
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[expand_source(m, i)];
      break;
    }
    case Op::SliceCols: {
      need(1);
      const Tensor& a = in(0);
      if (ints.size() != 3 || a.rank() != 2) shape_error(op, a.shape);
      const std::size_t start = ints[0], stride = ints[1], count = ints[2];
      const std::size_t rows = a.dim(0), cols = a.dim(1);
      if (count == 0 || stride == 0 || start + (count - 1) * stride >= cols) {
        shape_error(op, a.shape, {start, stride, count});
      }
      out = Tensor({rows, count});
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < count; ++j)
          out[r * count + j] = a[r * cols + start + j * stride];
      break;
    }
  }

  nodes_.push_back(
      {op, std::vector<NodeId>(inputs.begin(), inputs.end()), std::move(out),
       scalar, std::move(ints)});
  return nodes_.size() - 1;
}

NodeId Graph::matmul(NodeId a, NodeId b) {
  const NodeId in[] = {a, b};
  return apply(Op::MatMul, in);
}
NodeId Graph::batch_matmul(NodeId a, NodeId b) {
  const NodeId in[] = {a, b};
  return apply(Op::BatchMatMul, in);
}
NodeId Graph::add(NodeId a, NodeId b) {
  const NodeId in[] = {a, b};
  return apply(Op::Add, in);
}
NodeId Graph::sub(NodeId a, NodeId b) {
  const NodeId in[] = {a, b};
  return apply(Op::Sub, in);
}
NodeId Graph::mul(NodeId a, NodeId b) {
  const NodeId in[] = {a, b};
  return apply(Op::Mul, in);
}
NodeId Graph::div(NodeId a, NodeId b) {
  const NodeId in[] = {a, b};
  return apply(Op::Div, in);
}
NodeId Graph::exp(NodeId a) { return apply(Op::Exp, {&a, 1}); }
NodeId Graph::max_const(NodeId a, double c) {
  return apply(Op::MaxConst, {&a, 1}, c);
}
NodeId Graph::sum(NodeId a) { return apply(Op::Sum, {&a, 1}); }
NodeId Graph::sum_rows(NodeId a) { return apply(Op::SumRows, {&a, 1}); }
NodeId Graph::elu(NodeId a) { return apply(Op::Elu, {&a, 1}); }
NodeId Graph::abs(NodeId a) { return apply(Op::Abs, {&a, 1}); }
NodeId Graph::square(NodeId a) { return apply(Op::Square, {&a, 1}); }
NodeId Graph::stop_gradient(NodeId a) {
  return apply(Op::StopGradient, {&a, 1});
}
NodeId Graph::scale(NodeId a, double c) { return apply(Op::Scale, {&a, 1}, c); }
NodeId Graph::add_const(NodeId a, double c) {
  return apply(Op::AddConst, {&a, 1}, c);
}
NodeId Graph::reshape(NodeId a, Shape shape) {
  return apply(Op::Reshape, {&a, 1}, 0.0, std::move(shape));
}
NodeId Graph::transpose(NodeId a) { return apply(Op::Transpose, {&a, 1}); }
NodeId Graph::expand(NodeId a, Shape shape) {
  return apply(Op::Expand, {&a, 1}, 0.0, std::move(shape));
}
NodeId Graph::slice_cols(NodeId a, std::size_t start, std::size_t stride,
                         std::size_t count) {
  return apply(Op::SliceCols, {&a, 1}, 0.0, {start, stride, count});
}

void Graph::accumulate(std::vector<Tensor>& grads, NodeId id,
                       const Tensor& g) const {
  const Op op = nodes_[id].op;
  if (op == Op::Constant) return;
  Tensor& dst = grads[id];
  if (dst.data.empty()) {
    dst = g;
    dst.shape = nodes_[id].value.shape;
    return;
  }
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

void Graph::backward_node(const Node& node, const Tensor& gout,
                          std::vector<Tensor>& grads) const {
  auto in = [&](std::size_t i) -> const Tensor& {
    return nodes_[node.inputs[i]].value;
  };
  const std::size_t n = gout.size();

  switch (node.op) {
    case Op::Constant:
    case Op::Parameter:
    case Op::StopGradient:
      return;

    case Op::MatMul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      const std::size_t m = a.dim(0), k = a.dim(1), c = b.dim(1);
      Tensor ga(a.shape), gb(b.shape);
      gemm_acc(gout.data.data(), b.data.data(), ga.data.data(), m, c, k, false,
               true);
      gemm_acc(a.data.data(), gout.data.data(), gb.data.data(), k, m, c, true,
               false);
      accumulate(grads, node.inputs[0], ga);
      accumulate(grads, node.inputs[1], gb);
      return;
    }
    case Op::BatchMatMul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2),
                        c = b.dim(2);
      Tensor ga(a.shape), gb(b.shape);
      for (std::size_t s = 0; s < batch; ++s) {
        const double* go = gout.data.data() + s * m * c;
        gemm_acc(go, b.data.data() + s * k * c, ga.data.data() + s * m * k, m,
                 c, k, false, true);
        gemm_acc(a.data.data() + s * m * k, go, gb.data.data() + s * k * c, k,
                 m, c, true, false);
      }
      accumulate(grads, node.inputs[0], ga);
      accumulate(grads, node.inputs[1], gb);
      return;
    }
    case Op::Add:
      accumulate(grads, node.inputs[0], gout);
      accumulate(grads, node.inputs[1], gout);
      return;
    case Op::Sub: {
      Tensor neg(gout.shape);
      for (std::size_t i = 0; i < n; ++i) neg[i] = -gout[i];
      accumulate(grads, node.inputs[0], gout);
      accumulate(grads, node.inputs[1], neg);
      return;
    }
    case Op::Mul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      Tensor ga(a.shape), gb(b.shape);
      for (std::size_t i = 0; i < n; ++i) {
        ga[i] = gout[i] * b[i];
        gb[i] = gout[i] * a[i];
      }
      accumulate(grads, node.inputs[0], ga);
      accumulate(grads, node.inputs[1], gb);
      return;
    }
    case Op::Div: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      Tensor ga(a.shape), gb(b.shape);
      for (std::size_t i = 0; i < n; ++i) {
        ga[i] = gout[i] / b[i];
        gb[i] = -gout[i] * a[i] / (b[i] * b[i]);
      }
      accumulate(grads, node.inputs[0], ga);
      accumulate(grads, node.inputs[1], gb);
      return;
    }
    case Op::Exp:
    case Op::Elu:
    case Op::Abs:
    case Op::Square:
    case Op::MaxConst:
    case Op::Scale:
    case Op::AddConst: {
      const Tensor& a = in(0);
      Tensor ga(a.shape);
      for (std::size_t i = 0; i < n; ++i) {
        const double x = a[i];
        double d = 1.0;
        switch (node.op) {
          case Op::Exp: d = node.value[i]; break;
          case Op::Elu: d = x > 0.0 ? 1.0 : std::exp(x); break;
          case Op::Abs: d = x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); break;
          case Op::Square: d = 2.0 * x; break;
          case Op::MaxConst: d = x > node.scalar ? 1.0 : 0.0; break;
          case Op::Scale: d = node.scalar; break;
          default: break;
        }
        ga[i] = gout[i] * d;
      }
      accumulate(grads, node.inputs[0], ga);
      return;
    }
    case Op::Sum: {
      accumulate(grads, node.inputs[0], Tensor(in(0).shape, gout[0]));
      return;
    }
    case Op::SumRows: {
      const Tensor& a = in(0);
      const std::size_t rows = a.dim(0);
      const std::size_t width = a.size() / std::max<std::size_t>(rows, 1);
      Tensor ga(a.shape);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < width; ++j) ga[r * width + j] = gout[r];
      accumulate(grads, node.inputs[0], ga);
      return;
    }
    case Op::Reshape: {
      accumulate(grads, node.inputs[0], Tensor(in(0).shape, gout.data));
      return;
    }
    case Op::Transpose: {
      const Tensor& a = in(0);
      const std::size_t r = a.dim(0), c = a.dim(1);
      Tensor ga(a.shape);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) ga[i * c + j] = gout[j * r + i];
      accumulate(grads, node.inputs[0], ga);
      return;
    }
    case Op::Expand: {
      const Tensor& a = in(0);
      Tensor ga(a.shape);
      const ExpandMap m = expand_map(a.shape, node.value.shape);
      for (std::size_t i = 0; i < n; ++i) ga[expand_source(m, i)] += gout[i];
      accumulate(grads, node.inputs[0], ga);
      return;
    }
    case Op::SliceCols: {
      const Tensor& a = in(0);
      const std::size_t start = node.ints[0], stride = node.ints[1],
                        count = node.ints[2];
      const std::size_t rows = a.dim(0), cols = a.dim(1);
      Tensor ga(a.shape);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < count; ++j)
          ga[r * cols + start + j * stride] += gout[r * count + j];
      accumulate(grads, node.inputs[0], ga);
      return;
    }
  }
}

std::unordered_map<NodeId, Tensor> Graph::backward(NodeId loss) const {
  check_input(loss);
  const Tensor& lv = nodes_[loss].value;
  if (lv.rank() != 1 || lv.size() != 1) {
    throw ContractError("backward: loss must be a scalar of shape [1], got " +
                        shape_str(lv.shape));
  }

  std::vector<Tensor> grads(loss + 1);
  grads[loss] = Tensor::scalar(1.0);
  for (NodeId id = loss + 1; id-- > 0;) {
    if (grads[id].data.empty()) continue;
    backward_node(nodes_[id], grads[id], grads);
  }

  std::unordered_map<NodeId, Tensor> out;
  for (NodeId p : params_) {
    if (p <= loss && !grads[p].data.empty()) {
      out.emplace(p, std::move(grads[p]));
    } else {
      out.emplace(p, Tensor(nodes_[p].value.shape));
    }
  }
  return out;
}

NodeId dense_layer(Graph& g, NodeId input, NodeId weights, NodeId bias,
                   Activation activation) {
  const Shape ws = g.shape(weights);
  const Shape bs = g.shape(bias);
  Shape xs = g.shape(input);
  if (ws.size() != 2 || bs.size() != 1 || bs[0] != ws[0]) {
    throw DimensionError("dense_layer: weights " + shape_str(ws) +
                         " and bias " + shape_str(bs) + " do not match");
  }
  const bool vector_input = xs.size() == 1;
  NodeId x = vector_input ? g.reshape(input, {1, xs[0]}) : input;
  xs = g.shape(x);
  if (xs.size() != 2 || xs[1] != ws[1]) {
    throw DimensionError("dense_layer: input " + shape_str(g.shape(input)) +
                         " incompatible with weights " + shape_str(ws));
  }
  const std::size_t batch = xs[0], out = ws[0];
  NodeId h = g.matmul(x, g.transpose(weights));
  h = g.add(h, g.expand(g.reshape(bias, {1, out}), {batch, out}));
  switch (activation) {
    case Activation::Elu: h = g.elu(h); break;
    case Activation::Abs: h = g.abs(h); break;
    case Activation::Linear: break;
  }
  return vector_input ? g.reshape(h, {out}) : h;
}

Tensor glorot_uniform(std::size_t out, std::size_t in, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor w({out, in});
  for (double& v : w.data) v = dist(rng);
  return w;
}

void adam_step(AdamState& state, std::span<Tensor> params,
               std::span<const Tensor> grads, double learning_rate) {
  if (params.size() != grads.size()) {
    throw DimensionError("adam_step: " + std::to_string(params.size()) +
                         " parameters but " + std::to_string(grads.size()) +
                         " gradients");
  }
  if (state.first_moment.empty()) {
    for (const Tensor& p : params) {
      state.first_moment.emplace_back(p.shape);
      state.second_moment.emplace_back(p.shape);
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw DimensionError("adam_step: optimizer state tracks " +
                         std::to_string(state.first_moment.size()) +
                         " parameters, got " + std::to_string(params.size()));
  }
  const std::uint64_t next = state.step + 1;
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k].shape != grads[k].shape) {
      throw DimensionError("adam_step: parameter " + std::to_string(k) +
                           " has shape " + shape_str(params[k].shape) +
                           " but gradient " + shape_str(grads[k].shape));
    }
    if (!grads[k].all_finite()) {
      throw NumericError("adam_step: non-finite gradient at step " +
                         std::to_string(next) + ", parameter " +
                         std::to_string(k));
    }
  }

  state.step = next;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& m = state.first_moment[k];
    Tensor& v = state.second_moment[k];
    Tensor& p = params[k];
    const Tensor& g = grads[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p[i] -= learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
}

}  // namespace hypermimo::ad
