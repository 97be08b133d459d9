#include "inverse_uq/forward_model.hpp"
#include "inverse_uq/inverse_model.hpp"
#include "inverse_uq/linalg.hpp"
#include "inverse_uq/losses.hpp"
#include "inverse_uq/random.hpp"
#include "inverse_uq/synthetic.hpp"

#include <benchmark/benchmark.h>

#include <Eigen/Eigenvalues>

using namespace inverse_uq;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

namespace {

model::ModelConfig bench_model(Eigen::Index hidden) {
  model::ModelConfig c;
  c.input_dim = 6;
  c.static_dim = 27;
  c.hidden = c.embed = c.decoder_hidden = c.regressor_hidden = hidden;
  return c;
}

std::vector<data::WindowSample> windows(int count, Eigen::Index length, Rng& rng) {
  std::vector<data::WindowSample> out(static_cast<std::size_t>(count));
  for (auto& w : out) {
    w.basin_id = "b";
    w.length = length;
    w.inputs = standard_normal(length, 6, rng);
  }
  return out;
}

Matrix random_psd(Eigen::Index n, Rng& rng) {
  const Matrix a = standard_normal(n, n, rng);
  return a * a.transpose();
}

}  // namespace

// Bidirectional encoder over a batch of 16 windows; arg is the window length.
void BM_EncodeHidden(benchmark::State& state) {
  Rng rng(1);
  const model::BimModel m(bench_model(32), 1);
  const auto w = windows(16, state.range(0), rng);
  for (auto _ : state) benchmark::DoNotOptimize(model::encode_hidden(m, w));
  state.SetItemsProcessed(state.iterations() * 16 * state.range(0));
}
BENCHMARK(BM_EncodeHidden)->Arg(90)->Arg(365);

// Posterior draws for one window; arg is the draw count.
void BM_PredictPosterior(benchmark::State& state) {
  Rng rng(2);
  const model::BimModel m(bench_model(32), 2);
  const auto w = windows(1, 365, rng);
  for (auto _ : state) benchmark::DoNotOptimize(model::predict_posterior(m, w.front(), static_cast<int>(state.range(0)), rng));
}
BENCHMARK(BM_PredictPosterior)->Arg(100)->Arg(1000);

// Jacobi eigendecomposition of a covariance-sized PSD matrix.
void BM_SymmetricEigen(benchmark::State& state) {
  Rng rng(3);
  const Matrix a = random_psd(state.range(0), rng);
  for (auto _ : state) benchmark::DoNotOptimize(linalg::symmetric_eigen(a));
}
BENCHMARK(BM_SymmetricEigen)->Arg(5)->Arg(27);

void BM_EigenSelfAdjointSolver(benchmark::State& state) {
  Rng rng(3);
  const Matrix a = random_psd(state.range(0), rng);
  for (auto _ : state) benchmark::DoNotOptimize(Eigen::SelfAdjointEigenSolver<Matrix>(a).eigenvalues());
}
BENCHMARK(BM_EigenSelfAdjointSolver)->Arg(5)->Arg(27);

// Contrastive loss with its gradient; arg is the batch size.
void BM_ContrastiveLossBackward(benchmark::State& state) {
  Rng rng(4);
  ad::Parameter a("a", standard_normal(state.range(0), 64, rng));
  ad::Parameter p("p", standard_normal(state.range(0), 64, rng));
  for (auto _ : state) {
    a.grad.setZero();
    p.grad.setZero();
    ad::Graph g;
    const ad::Var loss = losses::contrastive_loss(g.param(a), g.param(p), 0.1);
    g.backward(loss);
    benchmark::DoNotOptimize(a.grad.data());
  }
}
BENCHMARK(BM_ContrastiveLossBackward)->Arg(8)->Arg(64);

// Forward model over a ten-year daily record.
void BM_ForwardRunSequence(benchmark::State& state) {
  Rng rng(5);
  forward::ForwardConfig c;
  c.hidden = state.range(0);
  const forward::ForwardModel m(c, 32, 5);
  const Matrix x = standard_normal(3650, 32, rng);
  for (auto _ : state) benchmark::DoNotOptimize(forward::run_sequence(m, x));
  state.SetItemsProcessed(state.iterations() * 3650);
}
BENCHMARK(BM_ForwardRunSequence)->Arg(16)->Arg(64);

void BM_SimulateBucket(benchmark::State& state) {
  Rng rng(6);
  const Vector p = standard_normal(3650, 1, rng).cwiseAbs() * 5.0;
  const Vector e = standard_normal(3650, 1, rng).cwiseAbs();
  for (auto _ : state) benchmark::DoNotOptimize(synthetic::simulate_bucket({0.1, 200.0, 0.5}, p, e, 10.0));
  state.SetItemsProcessed(state.iterations() * 3650);
}
BENCHMARK(BM_SimulateBucket);
BENCHMARK_MAIN();
