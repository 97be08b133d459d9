#pragma once

// Reverse-mode automatic differentiation over dense double matrices.
//
// A Graph is a tape: every operation appends a node holding its value and a
// local derivative rule, so creation order is already a topological order and
// backward() simply walks the tape in reverse. Graphs are rebuilt for every
// training step. Parameters live outside any graph and receive accumulated
// gradients when a graph that references them is differentiated.
//
// Row convention: samples are rows, features are columns.

#include <Eigen/Dense>

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace inverse_uq::ad {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Persistent trainable array. `grad` accumulates across backward passes
/// until zero_grad() is called.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string name_, Matrix value_)
      : name(std::move(name_)), value(std::move(value_)), grad(Matrix::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
  Eigen::Index size() const { return value.size(); }
};

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while its Graph lives.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  /// Gradient from the last backward pass; zero-sized if the node was not reached.
  const Matrix& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const;

  Graph& graph() const;
  int id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

 private:
  friend class Graph;
  Var(Graph* graph, int id) : graph_(graph), id_(id) {}

  Graph* graph_ = nullptr;
  int id_ = -1;
};

class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, int self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Leaf that never receives a gradient.
  Var constant(Matrix value);
  /// Leaf whose gradient is kept on the node (read it with Var::grad()).
  Var variable(Matrix value);
  /// Leaf bound to a Parameter; backward() adds into `p.grad`.
  Var param(Parameter& p);

  /// Differentiates a 1x1 output. Node gradients restart from zero on each
  /// call; Parameter gradients accumulate.
  void backward(const Var& output);

  std::size_t size() const { return nodes_.size(); }

  // Interface for operation authors.
  Var record(Matrix value, std::span<const Var> parents, BackwardFn backward);
  const Matrix& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  const Matrix& grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
  /// Gradient accumulator of `id`, zero-initialised on first use.
  Matrix& grad_ref(int id);
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
};

// Primitives. All operands must belong to the same graph; shape mismatches
// throw DimensionError naming both shapes.
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
/// Adds a 1 x n row to every row of an m x n matrix.
Var add_bias(const Var& a, const Var& row);
/// Elementwise product.
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var add_scalar(const Var& a, double offset);
Var neg(const Var& a);
Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var relu(const Var& a);
/// log(1 + exp(x)), evaluated without overflow.
Var softplus(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var sqrt(const Var& a);
Var square(const Var& a);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);
Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count);
/// Sum of all entries, 1x1.
Var sum(const Var& a);
/// Mean of all entries, 1x1.
Var mean(const Var& a);
/// Per-row sum, m x 1.
Var row_sum(const Var& a);
/// Scales each row to unit L2 norm. Rows with norm below `eps` map to zero
/// and pass no gradient.
Var normalize_rows(const Var& a, double eps = 1e-12);

/// Fused LSTM cell.
///
/// `input_proj` holds x_t W_x + b for one or more time steps stacked by rows;
/// the block [row_begin, row_begin + batch) is used. `state` is [h | c]
/// (batch x 2H) and `w_hidden` is H x 4H with gate blocks ordered i, f, g, o.
/// Returns the new [h | c]. With `sigmoid_candidate` the g gate uses a
/// logistic instead of tanh.
Var lstm_cell(const Var& input_proj, Eigen::Index row_begin, const Var& state, const Var& w_hidden,
              bool sigmoid_candidate = false);

// Scalar helpers shared with non-graph code.
double softplus(double x);
double sigmoid(double x);

}  // namespace inverse_uq::ad
