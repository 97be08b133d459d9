#include "inverse_uq/autodiff.hpp"
#include "inverse_uq/errors.hpp"
#include "inverse_uq/random.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <functional>
#include <vector>

using namespace inverse_uq;
using ad::Graph;
using ad::Matrix;
using ad::Parameter;
using ad::Var;

namespace {

Matrix scalar(double x) { return Matrix::Constant(1, 1, x); }

// Builds the op on fresh graph leaves bound to `inputs` and contracts the
// output with a fixed random matrix so every output entry reaches the check.
using Op = std::function<Var(std::vector<Var>&)>;

double contracted(std::vector<Parameter>& inputs, const Op& op, const Matrix& weights, bool differentiate) {
  Graph g;
  std::vector<Var> leaves;
  for (auto& p : inputs) leaves.push_back(g.param(p));
  Var out = op(leaves);
  Var loss = ad::sum(ad::mul(out, g.constant(weights)));
  if (differentiate) g.backward(loss);
  return loss.scalar();
}

double gradient_error(std::vector<Matrix> values, const Op& op, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Parameter> inputs;
  for (std::size_t i = 0; i < values.size(); ++i) inputs.emplace_back("x" + std::to_string(i), values[i]);
  Matrix out_shape;
  {
    Graph g;
    std::vector<Var> leaves;
    for (auto& p : inputs) leaves.push_back(g.constant(p.value));
    out_shape = op(leaves).value();
  }
  const Matrix weights = standard_normal(out_shape.rows(), out_shape.cols(), rng);
  contracted(inputs, op, weights, true);
  double worst = 0.0;
  for (auto& p : inputs) {
    const Matrix numeric = test_support::numeric_gradient(p, [&] { return contracted(inputs, op, weights, false); });
    worst = std::max(worst, test_support::max_relative_error(p.grad, numeric, 1e-4));
  }
  return worst;
}

Matrix random(Eigen::Index r, Eigen::Index c, Rng& rng) { return standard_normal(r, c, rng); }
Matrix positive(Eigen::Index r, Eigen::Index c, Rng& rng) {
  return (standard_normal(r, c, rng).array().abs() + 0.5).matrix();
}
// Keeps entries away from the relu kink so central differences stay smooth.
Matrix off_kink(Eigen::Index r, Eigen::Index c, Rng& rng) {
  Matrix m = standard_normal(r, c, rng);
  for (Eigen::Index i = 0; i < m.size(); ++i)
    if (std::abs(m.data()[i]) < 0.1) m.data()[i] += m.data()[i] < 0 ? -0.2 : 0.2;
  return m;
}

}  // namespace

TEST(Primitives, SigmoidAtZeroIsHalf) {
  Graph g;
  EXPECT_EQ(ad::sigmoid(g.constant(scalar(0.0))).scalar(), 0.5);
  EXPECT_EQ(ad::sigmoid(0.0), 0.5);
}

TEST(Primitives, SoftplusAtZeroIsLn2) {
  Graph g;
  EXPECT_NEAR(ad::softplus(g.constant(scalar(0.0))).scalar(), std::log(2.0), 1e-15);
  EXPECT_NEAR(ad::softplus(0.0), 0.693147, 1e-6);
}

TEST(Primitives, SoftplusDoesNotOverflow) {
  EXPECT_EQ(ad::softplus(1000.0), 1000.0);
  EXPECT_GT(ad::softplus(-50.0), 0.0);
  EXPECT_NEAR(ad::softplus(-50.0), std::exp(-50.0), 1e-30);
}

TEST(Primitives, TanhDerivativeAtZeroIsOne) {
  Graph g;
  Var x = g.variable(scalar(0.0));
  g.backward(ad::tanh(x));
  EXPECT_DOUBLE_EQ(x.grad()(0, 0), 1.0);
}

TEST(Primitives, ShapeMismatchNamesBothShapes) {
  Graph g;
  Var a = g.constant(Matrix::Zero(2, 3));
  Var b = g.constant(Matrix::Zero(4, 5));
  try {
    ad::add(a, b);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("(2 x 3)"), std::string::npos) << what;
    EXPECT_NE(what.find("(4 x 5)"), std::string::npos) << what;
  }
  EXPECT_THROW(ad::matmul(a, a), DimensionError);
  EXPECT_THROW(ad::slice_cols(a, 2, 2), DimensionError);
}

TEST(Primitives, NormalizeRowsGivesUnitRowsAndZeroForNullRows) {
  Graph g;
  Matrix m(2, 2);
  m << 3, 4, 0, 0;
  const Matrix out = ad::normalize_rows(g.constant(m)).value();
  EXPECT_NEAR(out(0, 0), 0.6, 1e-15);
  EXPECT_NEAR(out(0, 1), 0.8, 1e-15);
  EXPECT_EQ(out(1, 0), 0.0);
  EXPECT_EQ(out(1, 1), 0.0);
}

TEST(Backward, SquareAtThreeHasGradientSix) {
  Graph g;
  Var x = g.variable(scalar(3.0));
  g.backward(ad::square(x));
  EXPECT_DOUBLE_EQ(x.grad()(0, 0), 6.0);
}

TEST(Backward, NonScalarOutputIsAContractError) {
  Graph g;
  Var x = g.variable(Matrix::Ones(2, 2));
  EXPECT_THROW(g.backward(ad::square(x)), ContractError);
}

TEST(Backward, TwoPassesWithoutZeroingDoubleTheGradient) {
  Parameter p("w", Matrix::Constant(2, 2, 0.7));
  auto pass = [&] {
    Graph g;
    g.backward(ad::sum(ad::tanh(ad::square(g.param(p)))));
  };
  pass();
  const Matrix once = p.grad;
  pass();
  EXPECT_EQ(p.grad, 2.0 * once);
  p.zero_grad();
  EXPECT_TRUE(p.grad.isZero(0.0));
}

TEST(Backward, NodeGradientsRestartOnEachCall) {
  Graph g;
  Var x = g.variable(scalar(2.0));
  Var y = ad::square(x);
  g.backward(y);
  g.backward(y);
  EXPECT_DOUBLE_EQ(x.grad()(0, 0), 4.0);
}

TEST(Backward, LstmCellMatchesCentralDifferences) {
  Rng rng(3);
  const Eigen::Index batch = 2, d_in = 3, hidden = 4;
  Parameter w_in("w_in", random(d_in, 4 * hidden, rng) * 0.5);
  Parameter w_h("w_h", random(hidden, 4 * hidden, rng) * 0.5);
  Parameter b("b", random(1, 4 * hidden, rng) * 0.1);
  Parameter state("state", random(batch, 2 * hidden, rng));
  const Matrix x = random(batch, d_in, rng);
  auto loss = [&](bool differentiate) {
    Graph g;
    Var proj = ad::add_bias(ad::matmul(g.constant(x), g.param(w_in)), g.param(b));
    Var next = ad::lstm_cell(proj, 0, g.param(state), g.param(w_h));
    Var l = ad::sum(ad::square(next));
    if (differentiate) g.backward(l);
    return l.scalar();
  };
  loss(true);
  for (Parameter* p : {&w_in, &w_h, &b, &state}) {
    const Matrix numeric = test_support::numeric_gradient(*p, [&] { return loss(false); });
    EXPECT_LT(test_support::max_relative_error(p->grad, numeric), 1e-6) << p->name;
  }
}

// Every primitive against central differences on seeded random shapes.
TEST(BackwardProperty, EveryPrimitiveMatchesCentralDifferences) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    std::uniform_int_distribution<int> dim(1, 4);
    const Eigen::Index m = dim(rng), n = dim(rng), k = dim(rng);
    struct Case {
      const char* name;
      std::vector<Matrix> inputs;
      Op op;
    };
    const std::vector<Case> cases = {
        {"matmul", {random(m, k, rng), random(k, n, rng)}, [](auto& v) { return ad::matmul(v[0], v[1]); }},
        {"transpose", {random(m, n, rng)}, [](auto& v) { return ad::transpose(v[0]); }},
        {"add", {random(m, n, rng), random(m, n, rng)}, [](auto& v) { return ad::add(v[0], v[1]); }},
        {"sub", {random(m, n, rng), random(m, n, rng)}, [](auto& v) { return ad::sub(v[0], v[1]); }},
        {"add_bias", {random(m, n, rng), random(1, n, rng)}, [](auto& v) { return ad::add_bias(v[0], v[1]); }},
        {"mul", {random(m, n, rng), random(m, n, rng)}, [](auto& v) { return ad::mul(v[0], v[1]); }},
        {"scale", {random(m, n, rng)}, [](auto& v) { return ad::scale(v[0], -1.7); }},
        {"add_scalar", {random(m, n, rng)}, [](auto& v) { return ad::add_scalar(v[0], 0.3); }},
        {"neg", {random(m, n, rng)}, [](auto& v) { return ad::neg(v[0]); }},
        {"sigmoid", {random(m, n, rng)}, [](auto& v) { return ad::sigmoid(v[0]); }},
        {"tanh", {random(m, n, rng)}, [](auto& v) { return ad::tanh(v[0]); }},
        {"relu", {off_kink(m, n, rng)}, [](auto& v) { return ad::relu(v[0]); }},
        {"softplus", {random(m, n, rng)}, [](auto& v) { return ad::softplus(v[0]); }},
        {"exp", {random(m, n, rng)}, [](auto& v) { return ad::exp(v[0]); }},
        {"log", {positive(m, n, rng)}, [](auto& v) { return ad::log(v[0]); }},
        {"sqrt", {positive(m, n, rng)}, [](auto& v) { return ad::sqrt(v[0]); }},
        {"square", {random(m, n, rng)}, [](auto& v) { return ad::square(v[0]); }},
        {"concat_cols",
         {random(m, n, rng), random(m, k, rng)},
         [](auto& v) { return ad::concat_cols(std::array<Var, 2>{v[0], v[1]}); }},
        {"concat_rows",
         {random(m, n, rng), random(k, n, rng)},
         [](auto& v) { return ad::concat_rows(std::array<Var, 2>{v[0], v[1]}); }},
        {"slice_cols", {random(m, n + 2, rng)}, [n](auto& v) { return ad::slice_cols(v[0], 1, n); }},
        {"slice_rows", {random(m + 2, n, rng)}, [m](auto& v) { return ad::slice_rows(v[0], 2, m); }},
        {"sum", {random(m, n, rng)}, [](auto& v) { return ad::sum(v[0]); }},
        {"mean", {random(m, n, rng)}, [](auto& v) { return ad::mean(v[0]); }},
        {"row_sum", {random(m, n, rng)}, [](auto& v) { return ad::row_sum(v[0]); }},
        {"normalize_rows", {positive(m, n, rng)}, [](auto& v) { return ad::normalize_rows(v[0]); }},
    };
    for (const auto& c : cases) {
      EXPECT_LT(gradient_error(c.inputs, c.op, seed + 100), 1e-6) << c.name << " seed " << seed;
    }
  }
}

TEST(BackwardProperty, ForwardIsDeterministic) {
  Rng rng(9);
  const Matrix a = random(3, 4, rng), b = random(4, 2, rng);
  auto run = [&] {
    Graph g;
    return ad::tanh(ad::matmul(g.constant(a), g.constant(b))).value();
  };
  EXPECT_EQ(run(), run());
}
