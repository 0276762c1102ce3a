#pragma once

#include <cstdint>
#include <vector>

#include "refiner/tensor.hpp"

namespace refiner {

using NodeId = std::size_t;

enum class OpKind : std::uint8_t {
  kLeaf,
  kMatMul,
  kTranspose,
  kAdd,
  kSub,
  kAddRowVector,
  kRelu,
  kScale,
  kRepeatRows,
  kConcatCols,
  kSoftmaxRows,
  kLayerNorm,
  kSumAll,
  kMse,
};

// Define-by-run tape. Every operation runs its forward pass immediately,
// records (op kind, input ids, result) and rejects non-finite outputs.
// Node inputs always have smaller ids than the node itself, so one reverse
// sweep from the loss node propagates gradients to every dependency.
//
// Analytic cost convention used by flops() (n = output element count unless
// stated): matmul m*k*n -> 2mkn; add/sub/relu/scale -> n; row-vector add
// m*n -> mn; softmax over m rows of n -> 5mn; layer norm over m rows of
// d -> m*(7d+2); sum -> n_in; mse -> 3*n_in+1; copies and transposes 0.
class Tape {
 public:
  static constexpr double kLayerNormEps = 1e-5;

  NodeId leaf(Tensor value);

  NodeId matmul(NodeId a, NodeId b);
  NodeId transpose(NodeId a);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId add_row_vector(NodeId a, NodeId v);  // a: m x n, v: length n
  NodeId relu(NodeId a);
  NodeId scale(NodeId a, double factor);
  NodeId repeat_rows(NodeId row, std::size_t count);  // 1 x n -> count x n
  NodeId concat_cols(const std::vector<NodeId>& parts);
  NodeId softmax_rows(NodeId a);
  NodeId layer_norm(NodeId x, NodeId gain, NodeId bias);
  NodeId sum_all(NodeId a);
  NodeId mse(NodeId a, NodeId b);  // mean over all elements of (a-b)^2

  const Tensor& value(NodeId id) const { return nodes_[id].value; }
  const Tensor& grad(NodeId id) const { return nodes_[id].grad; }
  double scalar(NodeId id) const;

  // Reverse sweep from a scalar-valued node. Gradients of all nodes with
  // id <= root become available; unreachable ones are zero.
  void backward(NodeId root);

  std::size_t size() const { return nodes_.size(); }
  void reset() { nodes_.clear(); }
  void truncate(std::size_t count);

  std::uint64_t flops() const;

 private:
  struct Node {
    OpKind kind;
    std::vector<NodeId> in;
    double aux = 0.0;  // scale factor
    Tensor value;
    Tensor grad;
  };

  NodeId push(OpKind kind, std::vector<NodeId> in, Tensor value,
              double aux = 0.0);
  void check_id(NodeId id) const;
  void backward_node(Node& node);

  std::vector<Node> nodes_;
};

}  // namespace refiner
