#include "refiner/tape.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "refiner/errors.hpp"

namespace refiner {

namespace {
void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}
}  // namespace

NodeId Tape::push(OpKind kind, std::vector<NodeId> in, Tensor value,
                  double aux) {
  if (!value.all_finite()) {
    throw NumericError("tape op produced a non-finite value");
  }
  nodes_.push_back(Node{kind, std::move(in), aux, std::move(value), Tensor{}});
  return nodes_.size() - 1;
}

void Tape::check_id(NodeId id) const {
  if (id >= nodes_.size()) throw std::invalid_argument("unknown tape node id");
}

NodeId Tape::leaf(Tensor value) {
  if (!value.all_finite()) throw NumericError("leaf tensor is non-finite");
  return push(OpKind::kLeaf, {}, std::move(value));
}

NodeId Tape::matmul(NodeId a, NodeId b) {
  check_id(a);
  check_id(b);
  const Tensor& ta = nodes_[a].value;
  const Tensor& tb = nodes_[b].value;
  require(ta.rank() == 2 && tb.rank() == 2, "matmul needs rank-2 tensors");
  require(ta.cols() == tb.rows(), "matmul inner dimensions disagree: " +
                                      ta.shape_str() + " vs " + tb.shape_str());
  const std::size_t m = ta.rows(), k = ta.cols(), n = tb.cols();
  Tensor out({m, n});
  const double* pa = ta.data.data();
  const double* pb = tb.data.data();
  double* pc = out.data.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double aik = pa[i * k + kk];
      const double* brow = pb + kk * n;
      double* crow = pc + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
    }
  }
  return push(OpKind::kMatMul, {a, b}, std::move(out));
}

NodeId Tape::transpose(NodeId a) {
  check_id(a);
  const Tensor& ta = nodes_[a].value;
  require(ta.rank() == 2, "transpose needs a rank-2 tensor");
  Tensor out({ta.cols(), ta.rows()});
  for (std::size_t i = 0; i < ta.rows(); ++i) {
    for (std::size_t j = 0; j < ta.cols(); ++j) out(j, i) = ta(i, j);
  }
  return push(OpKind::kTranspose, {a}, std::move(out));
}

NodeId Tape::add(NodeId a, NodeId b) {
  check_id(a);
  check_id(b);
  const Tensor& ta = nodes_[a].value;
  const Tensor& tb = nodes_[b].value;
  require(ta.same_shape(tb), "add shape mismatch: " + ta.shape_str() + " vs " +
                                 tb.shape_str());
  Tensor out(ta.shape);
  for (std::size_t i = 0; i < ta.size(); ++i) out.data[i] = ta.data[i] + tb.data[i];
  return push(OpKind::kAdd, {a, b}, std::move(out));
}

NodeId Tape::sub(NodeId a, NodeId b) {
  check_id(a);
  check_id(b);
  const Tensor& ta = nodes_[a].value;
  const Tensor& tb = nodes_[b].value;
  require(ta.same_shape(tb), "sub shape mismatch: " + ta.shape_str() + " vs " +
                                 tb.shape_str());
  Tensor out(ta.shape);
  for (std::size_t i = 0; i < ta.size(); ++i) out.data[i] = ta.data[i] - tb.data[i];
  return push(OpKind::kSub, {a, b}, std::move(out));
}

NodeId Tape::add_row_vector(NodeId a, NodeId v) {
  check_id(a);
  check_id(v);
  const Tensor& ta = nodes_[a].value;
  const Tensor& tv = nodes_[v].value;
  require(ta.rank() == 2 && tv.rank() == 1, "add_row_vector wants matrix + vector");
  require(ta.cols() == tv.size(), "row vector length mismatch");
  Tensor out(ta.shape);
  for (std::size_t i = 0; i < ta.rows(); ++i) {
    for (std::size_t j = 0; j < ta.cols(); ++j) out(i, j) = ta(i, j) + tv(j);
  }
  return push(OpKind::kAddRowVector, {a, v}, std::move(out));
}

NodeId Tape::relu(NodeId a) {
  check_id(a);
  const Tensor& ta = nodes_[a].value;
  Tensor out(ta.shape);
  for (std::size_t i = 0; i < ta.size(); ++i) {
    out.data[i] = ta.data[i] > 0.0 ? ta.data[i] : 0.0;
  }
  return push(OpKind::kRelu, {a}, std::move(out));
}

NodeId Tape::scale(NodeId a, double factor) {
  check_id(a);
  if (!std::isfinite(factor)) throw NumericError("scale factor is non-finite");
  const Tensor& ta = nodes_[a].value;
  Tensor out(ta.shape);
  for (std::size_t i = 0; i < ta.size(); ++i) out.data[i] = factor * ta.data[i];
  return push(OpKind::kScale, {a}, std::move(out), factor);
}

NodeId Tape::repeat_rows(NodeId row, std::size_t count) {
  check_id(row);
  const Tensor& tr = nodes_[row].value;
  require(tr.rank() == 2 && tr.rows() == 1, "repeat_rows expects a 1 x n row");
  require(count > 0, "repeat_rows count must be positive");
  Tensor out({count, tr.cols()});
  for (std::size_t i = 0; i < count; ++i) {
    std::copy(tr.data.begin(), tr.data.end(), out.data.begin() + i * tr.cols());
  }
  return push(OpKind::kRepeatRows, {row}, std::move(out));
}

NodeId Tape::concat_cols(const std::vector<NodeId>& parts) {
  require(!parts.empty(), "concat_cols needs at least one input");
  std::size_t rows = 0, cols = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    check_id(parts[p]);
    const Tensor& t = nodes_[parts[p]].value;
    require(t.rank() == 2, "concat_cols needs rank-2 tensors");
    if (p == 0) rows = t.rows();
    require(t.rows() == rows, "concat_cols row count mismatch");
    cols += t.cols();
  }
  Tensor out({rows, cols});
  std::size_t col0 = 0;
  for (NodeId p : parts) {
    const Tensor& t = nodes_[p].value;
    for (std::size_t i = 0; i < rows; ++i) {
      std::copy(t.data.begin() + i * t.cols(), t.data.begin() + (i + 1) * t.cols(),
                out.data.begin() + i * cols + col0);
    }
    col0 += t.cols();
  }
  return push(OpKind::kConcatCols, parts, std::move(out));
}

NodeId Tape::softmax_rows(NodeId a) {
  check_id(a);
  const Tensor& ta = nodes_[a].value;
  require(ta.rank() == 2, "softmax_rows needs a rank-2 tensor");
  Tensor out(ta.shape);
  const std::size_t n = ta.cols();
  for (std::size_t i = 0; i < ta.rows(); ++i) {
    const double* x = ta.data.data() + i * n;
    double* y = out.data.data() + i * n;
    double mx = x[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      y[j] = std::exp(x[j] - mx);
      sum += y[j];
    }
    const double inv = 1.0 / sum;
    for (std::size_t j = 0; j < n; ++j) y[j] *= inv;
  }
  return push(OpKind::kSoftmaxRows, {a}, std::move(out));
}

NodeId Tape::layer_norm(NodeId x, NodeId gain, NodeId bias) {
  check_id(x);
  check_id(gain);
  check_id(bias);
  const Tensor& tx = nodes_[x].value;
  const Tensor& tg = nodes_[gain].value;
  const Tensor& tb = nodes_[bias].value;
  require(tx.rank() == 2, "layer_norm input must be rank-2");
  const std::size_t d = tx.cols();
  require(d >= 2, "layer_norm needs at least 2 features");
  require(tg.rank() == 1 && tg.size() == d, "layer_norm gain length mismatch");
  require(tb.rank() == 1 && tb.size() == d, "layer_norm bias length mismatch");
  Tensor out(tx.shape);
  for (std::size_t i = 0; i < tx.rows(); ++i) {
    const double* row = tx.data.data() + i * d;
    double* y = out.data.data() + i * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = row[j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    for (std::size_t j = 0; j < d; ++j) {
      y[j] = (row[j] - mean) * inv * tg(j) + tb(j);
    }
  }
  return push(OpKind::kLayerNorm, {x, gain, bias}, std::move(out));
}

NodeId Tape::sum_all(NodeId a) {
  check_id(a);
  const Tensor& ta = nodes_[a].value;
  double s = 0.0;
  for (double v : ta.data) s += v;
  return push(OpKind::kSumAll, {a}, Tensor::scalar(s));
}

NodeId Tape::mse(NodeId a, NodeId b) {
  check_id(a);
  check_id(b);
  const Tensor& ta = nodes_[a].value;
  const Tensor& tb = nodes_[b].value;
  require(ta.same_shape(tb), "mse shape mismatch: " + ta.shape_str() + " vs " +
                                 tb.shape_str());
  double s = 0.0;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    const double d = ta.data[i] - tb.data[i];
    s += d * d;
  }
  return push(OpKind::kMse, {a, b}, Tensor::scalar(s / static_cast<double>(ta.size())));
}

double Tape::scalar(NodeId id) const {
  check_id(id);
  const Tensor& t = nodes_[id].value;
  if (t.size() != 1) throw std::invalid_argument("node is not scalar-valued");
  return t.data[0];
}

void Tape::truncate(std::size_t count) {
  if (count > nodes_.size()) throw std::invalid_argument("truncate beyond tape end");
  nodes_.resize(count);
}

void Tape::backward(NodeId root) {
  check_id(root);
  if (nodes_[root].value.size() != 1) {
    throw std::invalid_argument("backward root must be scalar-valued");
  }
  for (NodeId id = 0; id <= root; ++id) {
    nodes_[id].grad = Tensor::zeros(nodes_[id].value.shape);
  }
  nodes_[root].grad.data[0] = 1.0;
  for (NodeId id = root + 1; id-- > 0;) {
    backward_node(nodes_[id]);
  }
}

void Tape::backward_node(Node& node) {
  const Tensor& g = node.grad;
  switch (node.kind) {
    case OpKind::kLeaf:
      break;
    case OpKind::kMatMul: {
      Node& na = nodes_[node.in[0]];
      Node& nb = nodes_[node.in[1]];
      const std::size_t m = na.value.rows(), k = na.value.cols(),
                        n = nb.value.cols();
      // dA += dC * B^T, dB += A^T * dC
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t kk = 0; kk < k; ++kk) {
          double s = 0.0;
          const double* grow = g.data.data() + i * n;
          const double* brow = nb.value.data.data() + kk * n;
          for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
          na.grad.data[i * k + kk] += s;
        }
      }
      for (std::size_t i = 0; i < m; ++i) {
        const double* arow = na.value.data.data() + i * k;
        const double* grow = g.data.data() + i * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
          const double aik = arow[kk];
          double* brow = nb.grad.data.data() + kk * n;
          for (std::size_t j = 0; j < n; ++j) brow[j] += aik * grow[j];
        }
      }
      break;
    }
    case OpKind::kTranspose: {
      Node& na = nodes_[node.in[0]];
      const std::size_t r = node.value.rows(), c = node.value.cols();
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) na.grad(j, i) += g(i, j);
      }
      break;
    }
    case OpKind::kAdd: {
      Node& na = nodes_[node.in[0]];
      Node& nb = nodes_[node.in[1]];
      for (std::size_t i = 0; i < g.size(); ++i) {
        na.grad.data[i] += g.data[i];
        nb.grad.data[i] += g.data[i];
      }
      break;
    }
    case OpKind::kSub: {
      Node& na = nodes_[node.in[0]];
      Node& nb = nodes_[node.in[1]];
      for (std::size_t i = 0; i < g.size(); ++i) {
        na.grad.data[i] += g.data[i];
        nb.grad.data[i] -= g.data[i];
      }
      break;
    }
    case OpKind::kAddRowVector: {
      Node& na = nodes_[node.in[0]];
      Node& nv = nodes_[node.in[1]];
      const std::size_t rows = node.value.rows(), cols = node.value.cols();
      for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
          na.grad(i, j) += g(i, j);
          nv.grad(j) += g(i, j);
        }
      }
      break;
    }
    case OpKind::kRelu: {
      Node& na = nodes_[node.in[0]];
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (na.value.data[i] > 0.0) na.grad.data[i] += g.data[i];
      }
      break;
    }
    case OpKind::kScale: {
      Node& na = nodes_[node.in[0]];
      for (std::size_t i = 0; i < g.size(); ++i) {
        na.grad.data[i] += node.aux * g.data[i];
      }
      break;
    }
    case OpKind::kRepeatRows: {
      Node& na = nodes_[node.in[0]];
      const std::size_t rows = node.value.rows(), cols = node.value.cols();
      for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) na.grad.data[j] += g(i, j);
      }
      break;
    }
    case OpKind::kConcatCols: {
      const std::size_t rows = node.value.rows(), cols = node.value.cols();
      std::size_t col0 = 0;
      for (NodeId p : node.in) {
        Node& np = nodes_[p];
        const std::size_t pc = np.value.cols();
        for (std::size_t i = 0; i < rows; ++i) {
          for (std::size_t j = 0; j < pc; ++j) {
            np.grad(i, j) += g.data[i * cols + col0 + j];
          }
        }
        col0 += pc;
      }
      break;
    }
    case OpKind::kSoftmaxRows: {
      Node& na = nodes_[node.in[0]];
      const std::size_t rows = node.value.rows(), cols = node.value.cols();
      for (std::size_t i = 0; i < rows; ++i) {
        const double* y = node.value.data.data() + i * cols;
        const double* gy = g.data.data() + i * cols;
        double dot = 0.0;
        for (std::size_t j = 0; j < cols; ++j) dot += y[j] * gy[j];
        double* gx = na.grad.data.data() + i * cols;
        for (std::size_t j = 0; j < cols; ++j) gx[j] += y[j] * (gy[j] - dot);
      }
      break;
    }
    case OpKind::kLayerNorm: {
      Node& nx = nodes_[node.in[0]];
      Node& ng = nodes_[node.in[1]];
      Node& nb = nodes_[node.in[2]];
      const std::size_t rows = node.value.rows(), d = node.value.cols();
      std::vector<double> y(d), dy(d);
      for (std::size_t i = 0; i < rows; ++i) {
        const double* x = nx.value.data.data() + i * d;
        const double* go = g.data.data() + i * d;
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += x[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          const double c = x[j] - mean;
          var += c * c;
        }
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
        double m1 = 0.0, m2 = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          y[j] = (x[j] - mean) * inv;
          dy[j] = go[j] * ng.value(j);
          m1 += dy[j];
          m2 += dy[j] * y[j];
          ng.grad(j) += go[j] * y[j];
          nb.grad(j) += go[j];
        }
        m1 /= static_cast<double>(d);
        m2 /= static_cast<double>(d);
        double* gx = nx.grad.data.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) {
          gx[j] += inv * (dy[j] - m1 - y[j] * m2);
        }
      }
      break;
    }
    case OpKind::kSumAll: {
      Node& na = nodes_[node.in[0]];
      const double g0 = g.data[0];
      for (double& v : na.grad.data) v += g0;
      break;
    }
    case OpKind::kMse: {
      Node& na = nodes_[node.in[0]];
      Node& nb = nodes_[node.in[1]];
      const double c = 2.0 * g.data[0] / static_cast<double>(na.value.size());
      for (std::size_t i = 0; i < na.value.size(); ++i) {
        const double d = c * (na.value.data[i] - nb.value.data[i]);
        na.grad.data[i] += d;
        nb.grad.data[i] -= d;
      }
      break;
    }
  }
}

std::uint64_t Tape::flops() const {
  std::uint64_t total = 0;
  for (const Node& node : nodes_) {
    const std::uint64_t n_out = node.value.size();
    switch (node.kind) {
      case OpKind::kLeaf:
      case OpKind::kTranspose:
      case OpKind::kRepeatRows:
      case OpKind::kConcatCols:
        break;
      case OpKind::kMatMul: {
        const Tensor& a = nodes_[node.in[0]].value;
        total += 2ull * a.rows() * a.cols() * node.value.cols();
        break;
      }
      case OpKind::kAdd:
      case OpKind::kSub:
      case OpKind::kAddRowVector:
      case OpKind::kRelu:
      case OpKind::kScale:
        total += n_out;
        break;
      case OpKind::kSoftmaxRows:
        total += 5ull * n_out;
        break;
      case OpKind::kLayerNorm:
        total += node.value.rows() * (7ull * node.value.cols() + 2ull);
        break;
      case OpKind::kSumAll:
        total += nodes_[node.in[0]].value.size();
        break;
      case OpKind::kMse:
        total += 3ull * nodes_[node.in[0]].value.size() + 1ull;
        break;
    }
  }
  return total;
}

}  // namespace refiner
