#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "silentgrad/nets.hpp"
#include "silentgrad/oracle.hpp"
#include "testutil.hpp"

using namespace silentgrad;

TEST_CASE("zero-weight net outputs its final bias") {
  RngStream rng(1);
  Mlp net = Mlp::create({3, 4, 2}, HeadKind::DecoderMean, rng);
  for (AffineLayer& l : net.layers) {
    for (double& w : l.w.data()) w = 0.0;
  }
  net.layers.back().b = {1.5, -2.5};
  const DenseVector out = mlp_forward(net, {0.3, 0.7, -0.1});
  CHECK(out == DenseVector{1.5, -2.5});
}

TEST_CASE("single affine layer equals matvec plus bias") {
  RngStream rng(2);
  Mlp net = Mlp::create({3, 2}, HeadKind::DecoderMean, rng);
  net.layers[0].b = {0.1, -0.2};
  const DenseVector x{0.5, -1.0, 2.0};
  const DenseVector out = mlp_forward(net, x);
  const DenseVector expect = matvec(net.layers[0].w, x);
  CHECK(out[0] == expect[0] + 0.1);
  CHECK(out[1] == expect[1] - 0.2);
}

TEST_CASE("forward is bitwise deterministic") {
  RngStream rng(3);
  const Mlp net = Mlp::create({5, 8, 4}, HeadKind::DecoderMean, rng);
  const DenseVector x = sgtest::random_vector(5, rng, -1.0, 1.0);
  const DenseVector a = mlp_forward(net, x);
  const DenseVector b = mlp_forward(net, x);
  CHECK(sgtest::bitwise_equal(a, b));
}

TEST_CASE("forward rejects mismatched input") {
  RngStream rng(4);
  const Mlp net = Mlp::create({5, 3}, HeadKind::DecoderMean, rng);
  CHECK_THROWS_AS(mlp_forward(net, DenseVector(4, 0.0)), std::invalid_argument);
}

TEST_CASE("backward matches finite differences on a 3-layer net") {
  for (const HeadKind head :
       {HeadKind::DecoderMean, HeadKind::GaussianStats, HeadKind::BernoulliLogits}) {
    RngStream rng(5);
    Mlp net = Mlp::create({4, 6, 5, 4}, head, rng);
    for (int probe = 0; probe < 10; ++probe) {
      const DenseVector x = sgtest::random_vector(4, rng, -1.0, 1.0);
      const DenseVector upstream = sgtest::random_vector(4, rng, -1.0, 1.0);
      MlpTape tape;
      mlp_forward(net, x, &tape);
      const MlpGrads grads = mlp_backward(net, tape, upstream);
      const DenseVector analytic = flatten_grads(grads);
      DenseVector params = flatten_params(net);
      const DenseVector fd = fd_gradient(
          [&](const DenseVector& p) {
            Mlp probe_net = net;
            unflatten_params(probe_net, p);
            const DenseVector out = mlp_forward(probe_net, x);
            return dot(upstream, out);
          },
          params, 1e-5);
      CHECK(sgtest::rel_l2_gap(analytic, fd) <= 1e-5);
    }
  }
}

TEST_CASE("backward input gradient matches finite differences") {
  RngStream rng(6);
  Mlp net = Mlp::create({4, 7, 3}, HeadKind::DecoderMean, rng);
  const DenseVector x = sgtest::random_vector(4, rng, -1.0, 1.0);
  const DenseVector upstream = sgtest::random_vector(3, rng, -1.0, 1.0);
  MlpTape tape;
  mlp_forward(net, x, &tape);
  const MlpGrads grads = mlp_backward(net, tape, upstream);
  const DenseVector fd = fd_gradient(
      [&](const DenseVector& p) { return dot(upstream, mlp_forward(net, p)); }, x, 1e-6);
  CHECK(sgtest::rel_l2_gap(grads.wrt_input, fd) <= 1e-5);
}

TEST_CASE("backward is linear in the upstream gradient") {
  RngStream rng(7);
  Mlp net = Mlp::create({3, 5, 2}, HeadKind::DecoderMean, rng);
  const DenseVector x = sgtest::random_vector(3, rng, -1.0, 1.0);
  MlpTape tape;
  mlp_forward(net, x, &tape);
  DenseVector upstream = sgtest::random_vector(2, rng, -1.0, 1.0);
  const DenseVector base = flatten_grads(mlp_backward(net, tape, upstream));
  for (double& u : upstream) u *= 2.5;
  const DenseVector scaled = flatten_grads(mlp_backward(net, tape, upstream));
  for (std::size_t i = 0; i < base.size(); ++i) {
    CHECK(scaled[i] == doctest::Approx(2.5 * base[i]).epsilon(1e-12));
  }

  const DenseVector zeros =
      flatten_grads(mlp_backward(net, tape, DenseVector(2, 0.0)));
  for (double g : zeros) CHECK(g == 0.0);
}

TEST_CASE("adamw leaves parameters alone at zero gradient and zero decay") {
  AdamW opt(3, {0.1, 0.9, 0.95, 1e-8, 0.0});
  DenseVector params{1.0, -2.0, 0.5};
  const DenseVector before = params;
  opt.step(params, DenseVector(3, 0.0));
  CHECK(sgtest::bitwise_equal(params, before));
}

TEST_CASE("adamw single hand-computed step") {
  AdamW opt(1, {0.1, 0.9, 0.95, 1e-8, 0.0});
  DenseVector p{1.0};
  opt.step(p, {1.0});
  // Bias-corrected m_hat = v_hat = 1, so p <- 1 - 0.1 / (1 + 1e-8).
  CHECK(p[0] == doctest::Approx(0.9).epsilon(1e-7));
}

TEST_CASE("adamw decoupled weight decay with zero gradient") {
  AdamW opt(1, {0.1, 0.9, 0.95, 1e-8, 0.1});
  DenseVector p{1.0};
  opt.step(p, {0.0});
  CHECK(p[0] == doctest::Approx(1.0 * (1.0 - 0.01)).epsilon(1e-12));
}

TEST_CASE("adamw rejects mismatched shapes") {
  AdamW opt(2, {});
  DenseVector p{1.0, 2.0};
  CHECK_THROWS_AS(opt.step(p, DenseVector(3, 0.0)), std::invalid_argument);
}

TEST_CASE("checkpoint round-trip is bit-exact") {
  RngStream rng(8);
  Mlp net = Mlp::create({6, 9, 4}, HeadKind::GaussianStats, rng);
  TensorMap tensors;
  pack_mlp(tensors, "encoder", net);
  tensors["lin.w_mu"] = sgtest::random_matrix(4, 7, rng);

  const std::string path =
      (std::filesystem::temp_directory_path() / "sg_ckpt_test.bin").string();
  save_checkpoint(path, tensors);
  const TensorMap loaded = load_checkpoint(path);
  REQUIRE(loaded.size() == tensors.size());
  for (const auto& [name, tensor] : tensors) {
    const auto it = loaded.find(name);
    REQUIRE(it != loaded.end());
    REQUIRE(it->second.same_shape(tensor));
    CHECK(sgtest::bitwise_equal(it->second.data(), tensor.data()));
  }

  Mlp restored = Mlp::create({6, 9, 4}, HeadKind::GaussianStats, rng);
  unpack_mlp(loaded, "encoder", restored);
  CHECK(sgtest::bitwise_equal(flatten_params(restored), flatten_params(net)));
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint errors are reported") {
  const auto dir = std::filesystem::temp_directory_path();
  const std::string bad = (dir / "sg_ckpt_bad.bin").string();
  {
    std::FILE* f = std::fopen(bad.c_str(), "wb");
    std::fputs("NOTACKPT", f);
    std::fclose(f);
  }
  CHECK_THROWS_AS(load_checkpoint(bad), std::runtime_error);
  CHECK_THROWS_AS(load_checkpoint((dir / "sg_missing.bin").string()), std::runtime_error);
  std::filesystem::remove(bad);
}
