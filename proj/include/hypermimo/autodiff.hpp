#pragma once

// Define-by-run reverse-mode automatic differentiation over dense row-major
// double tensors. A Graph is built fresh for every forward pass; node inputs
// always reference earlier nodes so the node list is already topologically
// ordered and backward is a single reverse sweep.

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace hypermimo::ad {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0);
  Tensor(Shape s, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  bool all_finite() const;
};

enum class Op : std::uint8_t {
  Constant,
  Parameter,
  MatMul,       // [m x k] . [k x n]
  BatchMatMul,  // [B x m x k] . [B x k x n]
  Add,
  Sub,
  Mul,
  Div,
  Exp,
  MaxConst,  // max(x, c)
  Sum,       // full reduction to [1]
  SumRows,   // [B x ...] -> [B]
  Elu,
  Abs,
  Square,
  StopGradient,
  Scale,     // c * x
  AddConst,  // x + c
  Reshape,
  Transpose,  // 2-D only
  Expand,     // broadcast size-1 dims to a target shape of equal rank
  SliceCols,  // [B x C] -> [B x count], columns start + i * stride
};

const char* op_name(Op op);

using NodeId = std::size_t;

enum class Activation { Linear, Elu, Abs };

class Graph {
 public:
  NodeId constant(Tensor value);
  NodeId parameter(Tensor value);

  // Generic entry point. `scalar` carries the constant for MaxConst, Scale and
  // AddConst; `ints` carries the target shape for Reshape/Expand and
  // (start, stride, count) for SliceCols.
  NodeId apply(Op op, std::span<const NodeId> inputs, double scalar = 0.0,
               std::vector<std::size_t> ints = {});

  NodeId matmul(NodeId a, NodeId b);
  NodeId batch_matmul(NodeId a, NodeId b);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId div(NodeId a, NodeId b);
  NodeId exp(NodeId a);
  NodeId max_const(NodeId a, double c);
  NodeId sum(NodeId a);
  NodeId sum_rows(NodeId a);
  NodeId elu(NodeId a);
  NodeId abs(NodeId a);
  NodeId square(NodeId a);
  NodeId stop_gradient(NodeId a);
  NodeId scale(NodeId a, double c);
  NodeId add_const(NodeId a, double c);
  NodeId reshape(NodeId a, Shape shape);
  NodeId transpose(NodeId a);
  NodeId expand(NodeId a, Shape shape);
  NodeId slice_cols(NodeId a, std::size_t start, std::size_t stride,
                    std::size_t count);

  const Tensor& value(NodeId id) const { return nodes_.at(id).value; }
  const Shape& shape(NodeId id) const { return nodes_.at(id).value.shape; }
  Op op(NodeId id) const { return nodes_.at(id).op; }
  std::size_t size() const { return nodes_.size(); }
  bool is_parameter(NodeId id) const {
    return nodes_.at(id).op == Op::Parameter;
  }

  // Gradients of a scalar loss with respect to every parameter node that the
  // loss depends on. Parameters the loss does not reach get a zero tensor.
  std::unordered_map<NodeId, Tensor> backward(NodeId loss) const;

 private:
  struct Node {
    Op op;
    std::vector<NodeId> inputs;
    Tensor value;
    double scalar = 0.0;
    std::vector<std::size_t> ints;
  };

  void check_input(NodeId id) const;
  void accumulate(std::vector<Tensor>& grads, NodeId id, const Tensor& g) const;
  void backward_node(const Node& node, const Tensor& gout,
                     std::vector<Tensor>& grads) const;

  std::vector<Node> nodes_;
  std::vector<NodeId> params_;
};

// activation(input . W^T + b); input is [in] or [batch x in], W is [out x in],
// b is [out].
NodeId dense_layer(Graph& g, NodeId input, NodeId weights, NodeId bias,
                   Activation activation);

// Glorot-uniform weight matrix [out x in].
Tensor glorot_uniform(std::size_t out, std::size_t in, std::mt19937_64& rng);

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
};

// One bias-corrected Adam update, in place. Moment buffers are created on the
// first call. Throws NumericError naming the step and parameter index when a
// gradient is not finite.
void adam_step(AdamState& state, std::span<Tensor> params,
               std::span<const Tensor> grads, double learning_rate);

}  // namespace hypermimo::ad
