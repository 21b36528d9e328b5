#include <benchmark/benchmark.h>

#include "silentgrad/analytic.hpp"
#include "silentgrad/estimators.hpp"
#include "silentgrad/nets.hpp"
#include "silentgrad/oracle.hpp"

using namespace silentgrad;

namespace {

DenseMatrix random_matrix(std::size_t rows, std::size_t cols, RngStream& rng) {
  DenseMatrix m(rows, cols);
  for (double& w : m.data()) w = 2.0 * rng.next_uniform() - 1.0;
  return m;
}

LatentDistribution random_gaussian(std::size_t d, RngStream& rng) {
  DenseVector mean(d), var(d);
  for (std::size_t i = 0; i < d; ++i) {
    mean[i] = 2.0 * rng.next_uniform() - 1.0;
    var[i] = 0.1 + rng.next_uniform();
  }
  return LatentDistribution::diag_gaussian(std::move(mean), std::move(var));
}

void BM_ExpectedSqNorm(benchmark::State& state) {
  const std::size_t d = static_cast<std::size_t>(state.range(0));
  RngStream rng(1);
  const DenseMatrix w = random_matrix(64, d, rng);
  const LatentDistribution dist = random_gaussian(d, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(expected_sq_norm(w, dist));
  }
  state.SetComplexityN(static_cast<std::int64_t>(d));
}
BENCHMARK(BM_ExpectedSqNorm)->RangeMultiplier(2)->Range(64, 4096)->Complexity(benchmark::oN);

void BM_ExpectedReconFixed(benchmark::State& state) {
  const std::size_t d = static_cast<std::size_t>(state.range(0));
  RngStream rng(2);
  LinearDecoder dec{random_matrix(64, d, rng), std::nullopt};
  const LatentDistribution dist = random_gaussian(d, rng);
  DenseVector x(64);
  for (double& v : x) v = rng.next_uniform();
  for (auto _ : state) {
    benchmark::DoNotOptimize(expected_recon_fixed(x, dec, dist, 0.01));
  }
}
BENCHMARK(BM_ExpectedReconFixed)->RangeMultiplier(4)->Range(16, 1024);

void BM_ExpectedReconLearnable(benchmark::State& state) {
  const std::size_t d = static_cast<std::size_t>(state.range(0));
  RngStream rng(3);
  DenseMatrix wa = random_matrix(64, d, rng);
  for (std::size_t j = 0; j < 64; ++j) wa(j, d - 1) = 2.0;
  LinearDecoder dec{random_matrix(64, d, rng), wa};
  const LatentDistribution dist = random_gaussian(d, rng);
  DenseVector x(64);
  for (double& v : x) v = rng.next_uniform();
  for (auto _ : state) {
    benchmark::DoNotOptimize(expected_recon_learnable(x, dec, dist));
  }
}
BENCHMARK(BM_ExpectedReconLearnable)->RangeMultiplier(4)->Range(16, 1024);

void BM_SilentGrad(benchmark::State& state) {
  RngStream rng(4);
  const std::size_t d = 200;  // the controlled-experiment latent width
  LinearDecoder dec{random_matrix(784, d + 1, rng), std::nullopt};
  const LatentDistribution dist = random_gaussian(d, rng);
  DenseVector x(784);
  for (double& v : x) v = rng.next_uniform();
  for (auto _ : state) {
    benchmark::DoNotOptimize(silent_grad(x, dec, dist, ReconMode::fixed(0.01)));
  }
}
BENCHMARK(BM_SilentGrad);

void BM_ReparamGrad(benchmark::State& state) {
  RngStream rng(5);
  const std::size_t d = 200;
  LinearDecoder dec{random_matrix(784, d + 1, rng), std::nullopt};
  const LatentDistribution dist = random_gaussian(d, rng);
  DenseVector x(784);
  for (double& v : x) v = rng.next_uniform();
  const auto eval = make_linear_fixed_eval(x, dec, 0.01);
  for (auto _ : state) {
    benchmark::DoNotOptimize(reparam_grad(eval, dist, rng));
  }
}
BENCHMARK(BM_ReparamGrad);

void BM_MlpForwardBackward(benchmark::State& state) {
  RngStream rng(6);
  Mlp net = Mlp::create({64, 128, 64, 32}, HeadKind::GaussianStats, rng);
  DenseVector x(64);
  for (double& v : x) v = rng.next_uniform();
  DenseVector upstream(32);
  for (double& v : upstream) v = rng.next_uniform();
  for (auto _ : state) {
    MlpTape tape;
    benchmark::DoNotOptimize(mlp_forward(net, x, &tape));
    benchmark::DoNotOptimize(mlp_backward(net, tape, upstream));
  }
}
BENCHMARK(BM_MlpForwardBackward);

void BM_McExpect(benchmark::State& state) {
  RngStream rng(7);
  const DenseMatrix w = random_matrix(8, 8, rng);
  const LatentDistribution dist = random_gaussian(8, rng);
  for (auto _ : state) {
    RngStream mc(11);
    benchmark::DoNotOptimize(mc_expect_scalar(
        [&w](const DenseVector& z) {
          const DenseVector y = matvec(w, z);
          return dot(y, y);
        },
        dist, static_cast<std::size_t>(state.range(0)), mc));
  }
}
BENCHMARK(BM_McExpect)->Arg(1000)->Arg(10000);

}  // namespace

int main(int argc, char** argv) {
  ::benchmark::Initialize(&argc, argv);
  if (::benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  ::benchmark::RunSpecifiedBenchmarks();
  ::benchmark::Shutdown();
  return 0;
}
