#pragma once

#include <functional>
#include <vector>

#include "plaindet/matrix.hpp"

namespace plaindet {

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode autodiff over Matrix values. Nodes are appended in evaluation
// order, so creation order is already a topological order for backward().
// One tape per forward pass; gradients accumulate into leaf nodes marked
// requires_grad.
class Tape {
 public:
  Tape() { nodes_.reserve(256); }

  Var input(Matrix value, bool requires_grad = false);

  const Matrix& val(Var v) const { return nodes_[v.id].value; }
  const Matrix& grad(Var v) const { return nodes_[v.id].grad; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  int rows(Var v) const { return nodes_[v.id].value.rows(); }
  int cols(Var v) const { return nodes_[v.id].value.cols(); }

  // Elementwise.
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var div(Var a, Var b);
  Var scale(Var a, double s);
  Var add_scalar(Var a, double s);
  Var sub_from_scalar(double s, Var a);  // s - A
  Var emin(Var a, Var b);                // ties resolve to a
  Var emax(Var a, Var b);
  Var abs(Var a);

  // Linear algebra.
  Var matmul(Var a, Var b);
  Var matmul_nt(Var a, Var b);  // A * B^T
  Var add_rowvec(Var a, Var row);
  Var reshape(Var a, int rows, int cols);

  // Nonlinearities.
  Var tanh(Var a);
  Var sigmoid(Var a);
  Var softplus(Var a);
  Var row_softmax(Var a);
  Var l2_normalize_rows(Var a, double eps = 1e-12);
  Var layer_norm_rows(Var a, Var gamma, Var beta, double eps = 1e-5);

  // Reductions.
  Var maxpool_rows(Var a);  // column-wise max over rows -> 1 x cols
  Var sum_all(Var a);       // -> 1x1
  Var mean_all(Var a);      // -> 1x1

  // Runs reverse accumulation from a 1x1 loss node.
  void backward(Var loss);

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    std::function<void(Tape&)> backward;
  };

  Var emit(Matrix value, bool requires_grad, std::function<void(Tape&)> back);
  Matrix& grad_mut(Var v) { return nodes_[v.id].grad; }

  std::vector<Node> nodes_;
};

}  // namespace plaindet
