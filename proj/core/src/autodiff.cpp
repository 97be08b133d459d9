#include "inverse_uq/autodiff.hpp"

#include "inverse_uq/errors.hpp"

#include <cmath>
#include <sstream>

namespace inverse_uq::ad {

namespace {

std::string shape_of(const Matrix& m) {
  std::ostringstream os;
  os << "(" << m.rows() << " x " << m.cols() << ")";
  return os.str();
}

[[noreturn]] void shape_error(const char* op, const Matrix& a, const Matrix& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_of(a) + " and " + shape_of(b));
}

Graph& common_graph(const Var& a, const Var& b) {
  if (!a.valid() || !b.valid()) throw ContractError("operation on an empty Var");
  if (&a.graph() != &b.graph()) throw ContractError("operands belong to different graphs");
  return a.graph();
}

Graph& graph_of(const Var& a) {
  if (!a.valid()) throw ContractError("operation on an empty Var");
  return a.graph();
}

void require_same_shape(const char* op, const Var& a, const Var& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error(op, a.value(), b.value());
}

// Records a unary elementwise op whose derivative is expressed through the
// input value x and output value y.
template <typename Forward, typename Derivative>
Var unary(const Var& a, Forward forward, Derivative derivative) {
  Graph& g = graph_of(a);
  const int ia = a.id();
  Matrix y = forward(a.value());
  const Var parents[] = {a};
  return g.record(std::move(y), parents, [ia, derivative](Graph& gr, int self) {
    gr.grad_ref(ia).array() += gr.grad(self).array() * derivative(gr.value(ia).array(), gr.value(self).array());
  });
}

}  // namespace

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

const Matrix& Var::value() const { return graph_->value(id_); }
const Matrix& Var::grad() const { return graph_->grad(id_); }
Graph& Var::graph() const { return *graph_; }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) throw ContractError("scalar() on a " + shape_of(v) + " value");
  return v(0, 0);
}

Var Graph::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), Matrix(), nullptr, nullptr, false});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Graph::variable(Matrix value) {
  nodes_.push_back(Node{std::move(value), Matrix(), nullptr, nullptr, true});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Graph::param(Parameter& p) {
  nodes_.push_back(Node{p.value, Matrix(), nullptr, &p, true});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Graph::record(Matrix value, std::span<const Var> parents, BackwardFn backward) {
  bool needs = false;
  for (const Var& p : parents) {
    if (p.graph_ != this) throw ContractError("operand belongs to a different graph");
    needs = needs || requires_grad(p.id());
  }
  nodes_.push_back(Node{std::move(value), Matrix(), needs ? std::move(backward) : BackwardFn{}, nullptr, needs});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Matrix& Graph::grad_ref(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Graph::backward(const Var& output) {
  if (output.graph_ != this) throw ContractError("backward: output belongs to a different graph");
  if (output.value().size() != 1) {
    throw ContractError("backward: output must be a scalar, got " + shape_of(output.value()));
  }
  for (Node& n : nodes_) n.grad.resize(0, 0);
  grad_ref(output.id()).setOnes();
  for (int i = output.id(); i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.requires_grad || n.grad.size() == 0) continue;
    if (n.backward) n.backward(*this, i);
    if (n.param != nullptr) {
      Matrix& pg = n.param->grad;
      if (pg.rows() != n.grad.rows() || pg.cols() != n.grad.cols()) pg = Matrix::Zero(n.grad.rows(), n.grad.cols());
      pg += nodes_[static_cast<std::size_t>(i)].grad;
    }
  }
}

Var matmul(const Var& a, const Var& b) {
  Graph& g = common_graph(a, b);
  if (a.cols() != b.rows()) shape_error("matmul", a.value(), b.value());
  const int ia = a.id(), ib = b.id();
  Matrix y = a.value() * b.value();
  const Var parents[] = {a, b};
  return g.record(std::move(y), parents, [ia, ib](Graph& gr, int self) {
    const Matrix& gy = gr.grad(self);
    if (gr.requires_grad(ia)) gr.grad_ref(ia).noalias() += gy * gr.value(ib).transpose();
    if (gr.requires_grad(ib)) gr.grad_ref(ib).noalias() += gr.value(ia).transpose() * gy;
  });
}

Var transpose(const Var& a) {
  Graph& g = graph_of(a);
  const int ia = a.id();
  Matrix y = a.value().transpose();
  const Var parents[] = {a};
  return g.record(std::move(y), parents,
                  [ia](Graph& gr, int self) { gr.grad_ref(ia) += gr.grad(self).transpose(); });
}

Var add(const Var& a, const Var& b) {
  Graph& g = common_graph(a, b);
  require_same_shape("add", a, b);
  const int ia = a.id(), ib = b.id();
  Matrix y = a.value() + b.value();
  const Var parents[] = {a, b};
  return g.record(std::move(y), parents, [ia, ib](Graph& gr, int self) {
    if (gr.requires_grad(ia)) gr.grad_ref(ia) += gr.grad(self);
    if (gr.requires_grad(ib)) gr.grad_ref(ib) += gr.grad(self);
  });
}

Var sub(const Var& a, const Var& b) {
  Graph& g = common_graph(a, b);
  require_same_shape("sub", a, b);
  const int ia = a.id(), ib = b.id();
  Matrix y = a.value() - b.value();
  const Var parents[] = {a, b};
  return g.record(std::move(y), parents, [ia, ib](Graph& gr, int self) {
    if (gr.requires_grad(ia)) gr.grad_ref(ia) += gr.grad(self);
    if (gr.requires_grad(ib)) gr.grad_ref(ib) -= gr.grad(self);
  });
}

Var add_bias(const Var& a, const Var& row) {
  Graph& g = common_graph(a, row);
  if (row.rows() != 1 || row.cols() != a.cols()) shape_error("add_bias", a.value(), row.value());
  const int ia = a.id(), ib = row.id();
  Matrix y = a.value().rowwise() + row.value().row(0);
  const Var parents[] = {a, row};
  return g.record(std::move(y), parents, [ia, ib](Graph& gr, int self) {
    if (gr.requires_grad(ia)) gr.grad_ref(ia) += gr.grad(self);
    if (gr.requires_grad(ib)) gr.grad_ref(ib) += gr.grad(self).colwise().sum();
  });
}

Var mul(const Var& a, const Var& b) {
  Graph& g = common_graph(a, b);
  require_same_shape("mul", a, b);
  const int ia = a.id(), ib = b.id();
  Matrix y = a.value().cwiseProduct(b.value());
  const Var parents[] = {a, b};
  return g.record(std::move(y), parents, [ia, ib](Graph& gr, int self) {
    const Matrix& gy = gr.grad(self);
    if (gr.requires_grad(ia)) gr.grad_ref(ia) += gy.cwiseProduct(gr.value(ib));
    if (gr.requires_grad(ib)) gr.grad_ref(ib) += gy.cwiseProduct(gr.value(ia));
  });
}

Var scale(const Var& a, double factor) {
  Graph& g = graph_of(a);
  const int ia = a.id();
  Matrix y = a.value() * factor;
  const Var parents[] = {a};
  return g.record(std::move(y), parents,
                  [ia, factor](Graph& gr, int self) { gr.grad_ref(ia) += gr.grad(self) * factor; });
}

Var add_scalar(const Var& a, double offset) {
  Graph& g = graph_of(a);
  const int ia = a.id();
  Matrix y = a.value().array() + offset;
  const Var parents[] = {a};
  return g.record(std::move(y), parents, [ia](Graph& gr, int self) { gr.grad_ref(ia) += gr.grad(self); });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var sigmoid(const Var& a) {
  return unary(
      a, [](const Matrix& x) -> Matrix { return x.unaryExpr([](double v) { return sigmoid(v); }); },
      [](const auto&, const auto& y) { return y * (1.0 - y); });
}

Var tanh(const Var& a) {
  return unary(
      a, [](const Matrix& x) -> Matrix { return x.array().tanh().matrix(); },
      [](const auto&, const auto& y) { return 1.0 - y.square(); });
}

Var relu(const Var& a) {
  return unary(
      a, [](const Matrix& x) -> Matrix { return x.cwiseMax(0.0); },
      [](const auto& x, const auto&) { return (x > 0.0).template cast<double>(); });
}

Var softplus(const Var& a) {
  return unary(
      a, [](const Matrix& x) -> Matrix { return x.unaryExpr([](double v) { return softplus(v); }); },
      [](const auto& x, const auto&) { return x.unaryExpr([](double v) { return sigmoid(v); }); });
}

Var exp(const Var& a) {
  return unary(
      a, [](const Matrix& x) -> Matrix { return x.array().exp().matrix(); },
      [](const auto&, const auto& y) { return y; });
}

Var log(const Var& a) {
  return unary(
      a, [](const Matrix& x) -> Matrix { return x.array().log().matrix(); },
      [](const auto& x, const auto&) { return x.inverse(); });
}

Var sqrt(const Var& a) {
  return unary(
      a, [](const Matrix& x) -> Matrix { return x.array().sqrt().matrix(); },
      [](const auto&, const auto& y) { return 0.5 * y.inverse(); });
}

Var square(const Var& a) {
  return unary(
      a, [](const Matrix& x) -> Matrix { return x.array().square().matrix(); },
      [](const auto& x, const auto&) { return 2.0 * x; });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no operands");
  Graph& g = graph_of(parts.front());
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const Var& p : parts) {
    if (&graph_of(p) != &g) throw ContractError("concat_cols: operands belong to different graphs");
    if (p.rows() != rows) shape_error("concat_cols", parts.front().value(), p.value());
    cols += p.cols();
  }
  Matrix y(rows, cols);
  std::vector<std::pair<int, Eigen::Index>> layout;
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    y.middleCols(at, p.cols()) = p.value();
    layout.emplace_back(p.id(), at);
    at += p.cols();
  }
  return g.record(std::move(y), parts, [layout](Graph& gr, int self) {
    for (const auto& [id, offset] : layout) {
      if (gr.requires_grad(id)) gr.grad_ref(id) += gr.grad(self).middleCols(offset, gr.value(id).cols());
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_rows: no operands");
  Graph& g = graph_of(parts.front());
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  for (const Var& p : parts) {
    if (&graph_of(p) != &g) throw ContractError("concat_rows: operands belong to different graphs");
    if (p.cols() != cols) shape_error("concat_rows", parts.front().value(), p.value());
    rows += p.rows();
  }
  Matrix y(rows, cols);
  std::vector<std::pair<int, Eigen::Index>> layout;
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    y.middleRows(at, p.rows()) = p.value();
    layout.emplace_back(p.id(), at);
    at += p.rows();
  }
  return g.record(std::move(y), parts, [layout](Graph& gr, int self) {
    for (const auto& [id, offset] : layout) {
      if (gr.requires_grad(id)) gr.grad_ref(id) += gr.grad(self).middleRows(offset, gr.value(id).rows());
    }
  });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  Graph& g = graph_of(a);
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw DimensionError("slice_cols: columns [" + std::to_string(start) + ", " + std::to_string(start + count) +
                         ") out of range for " + shape_of(a.value()));
  }
  const int ia = a.id();
  Matrix y = a.value().middleCols(start, count);
  const Var parents[] = {a};
  return g.record(std::move(y), parents, [ia, start, count](Graph& gr, int self) {
    gr.grad_ref(ia).middleCols(start, count) += gr.grad(self);
  });
}

Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count) {
  Graph& g = graph_of(a);
  if (start < 0 || count < 0 || start + count > a.rows()) {
    throw DimensionError("slice_rows: rows [" + std::to_string(start) + ", " + std::to_string(start + count) +
                         ") out of range for " + shape_of(a.value()));
  }
  const int ia = a.id();
  Matrix y = a.value().middleRows(start, count);
  const Var parents[] = {a};
  return g.record(std::move(y), parents, [ia, start, count](Graph& gr, int self) {
    gr.grad_ref(ia).middleRows(start, count) += gr.grad(self);
  });
}

Var sum(const Var& a) {
  Graph& g = graph_of(a);
  const int ia = a.id();
  Matrix y(1, 1);
  y(0, 0) = a.value().sum();
  const Var parents[] = {a};
  return g.record(std::move(y), parents,
                  [ia](Graph& gr, int self) { gr.grad_ref(ia).array() += gr.grad(self)(0, 0); });
}

Var mean(const Var& a) {
  if (a.value().size() == 0) throw DimensionError("mean: empty operand");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var row_sum(const Var& a) {
  Graph& g = graph_of(a);
  const int ia = a.id();
  Matrix y = a.value().rowwise().sum();
  const Var parents[] = {a};
  return g.record(std::move(y), parents, [ia](Graph& gr, int self) {
    gr.grad_ref(ia).colwise() += gr.grad(self).col(0);
  });
}

Var normalize_rows(const Var& a, double eps) {
  Graph& g = graph_of(a);
  const int ia = a.id();
  Vector norms = a.value().rowwise().norm();
  Matrix y = Matrix::Zero(a.rows(), a.cols());
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    if (norms(r) >= eps) y.row(r) = a.value().row(r) / norms(r);
  }
  const Var parents[] = {a};
  return g.record(std::move(y), parents, [ia, norms, eps](Graph& gr, int self) {
    const Matrix& y = gr.value(self);
    const Matrix& gy = gr.grad(self);
    Matrix& ga = gr.grad_ref(ia);
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      if (norms(r) < eps) continue;
      const double proj = y.row(r).dot(gy.row(r));
      ga.row(r) += (gy.row(r) - proj * y.row(r)) / norms(r);
    }
  });
}

Var lstm_cell(const Var& input_proj, Eigen::Index row_begin, const Var& state, const Var& w_hidden,
              bool sigmoid_candidate) {
  Graph& g = common_graph(input_proj, state);
  if (&graph_of(w_hidden) != &g) throw ContractError("lstm_cell: operands belong to different graphs");
  const Eigen::Index hidden = w_hidden.rows();
  const Eigen::Index batch = state.rows();
  if (w_hidden.cols() != 4 * hidden) shape_error("lstm_cell (w_hidden)", w_hidden.value(), w_hidden.value());
  if (state.cols() != 2 * hidden) shape_error("lstm_cell (state vs w_hidden)", state.value(), w_hidden.value());
  if (input_proj.cols() != 4 * hidden || row_begin < 0 || row_begin + batch > input_proj.rows()) {
    shape_error("lstm_cell (input_proj vs state)", input_proj.value(), state.value());
  }

  const auto h_prev = state.value().leftCols(hidden);
  const auto c_prev = state.value().rightCols(hidden);
  Matrix gates = input_proj.value().middleRows(row_begin, batch);
  gates.noalias() += h_prev * w_hidden.value();

  // Vectorised forms; exp saturates to 0 or inf, which both map to the limits.
  auto logistic = [](auto block) { block = (1.0 + (-block.array()).exp()).inverse().matrix(); };
  auto hyperbolic = [](auto block) { block = (2.0 * (1.0 + (-2.0 * block.array()).exp()).inverse() - 1.0).matrix(); };
  logistic(gates.leftCols(2 * hidden));
  if (sigmoid_candidate) {
    logistic(gates.middleCols(2 * hidden, hidden));
  } else {
    hyperbolic(gates.middleCols(2 * hidden, hidden));
  }
  logistic(gates.rightCols(hidden));

  Matrix y(batch, 2 * hidden);
  auto c = y.rightCols(hidden);
  c = gates.middleCols(hidden, hidden).cwiseProduct(c_prev) +
      gates.leftCols(hidden).cwiseProduct(gates.middleCols(2 * hidden, hidden));
  Matrix tanh_c = c;
  hyperbolic(tanh_c.leftCols(hidden));
  y.leftCols(hidden) = gates.rightCols(hidden).cwiseProduct(tanh_c);

  const int ip = input_proj.id(), is = state.id(), iw = w_hidden.id();
  const Var parents[] = {input_proj, state, w_hidden};
  return g.record(std::move(y), parents,
                  [ip, is, iw, row_begin, hidden, batch, sigmoid_candidate, gates = std::move(gates),
                   tanh_c = std::move(tanh_c)](Graph& gr, int self) {
                    const Matrix& gy = gr.grad(self);
                    const auto i = gates.leftCols(hidden).array();
                    const auto f = gates.middleCols(hidden, hidden).array();
                    const auto gc = gates.middleCols(2 * hidden, hidden).array();
                    const auto o = gates.rightCols(hidden).array();
                    const auto tc = tanh_c.array();
                    const auto c_prev = gr.value(is).rightCols(hidden).array();
                    const auto dh = gy.leftCols(hidden).array();

                    Eigen::ArrayXXd dc = gy.rightCols(hidden).array() + dh * o * (1.0 - tc.square());
                    Matrix dz(batch, 4 * hidden);
                    dz.leftCols(hidden) = (dc * gc * i * (1.0 - i)).matrix();
                    dz.middleCols(hidden, hidden) = (dc * c_prev * f * (1.0 - f)).matrix();
                    if (sigmoid_candidate) {
                      dz.middleCols(2 * hidden, hidden) = (dc * i * gc * (1.0 - gc)).matrix();
                    } else {
                      dz.middleCols(2 * hidden, hidden) = (dc * i * (1.0 - gc.square())).matrix();
                    }
                    dz.rightCols(hidden) = (dh * tc * o * (1.0 - o)).matrix();

                    if (gr.requires_grad(ip)) gr.grad_ref(ip).middleRows(row_begin, batch) += dz;
                    if (gr.requires_grad(iw)) {
                      gr.grad_ref(iw).noalias() += gr.value(is).leftCols(hidden).transpose() * dz;
                    }
                    if (gr.requires_grad(is)) {
                      Matrix& gs = gr.grad_ref(is);
                      gs.leftCols(hidden).noalias() += dz * gr.value(iw).transpose();
                      gs.rightCols(hidden) += (dc * f).matrix();
                    }
                  });
}

}  // namespace inverse_uq::ad
