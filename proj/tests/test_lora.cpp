#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "sslora/losses.hpp"
#include "sslora/lora.hpp"

using namespace sslora;
using Eigen::MatrixXd;

namespace {

ConstrainedLinearLayer<double> make_layer(RandomSource& rng, Index d, Index dp,
                                          Index rank, Index domains, LayerMode mode,
                                          InitScheme scheme = InitScheme::gaussian,
                                          double threshold = 0.9) {
  ConstrainedLinearLayer<double> layer;
  layer.W = gaussian_matrix<double>(rng, d, dp, 1.0);
  layer.decomposition = decompose<double>(layer.W, threshold);
  layer.mode = mode;
  init_projected(rng, layer, rank, domains, scheme);
  return layer;
}

// Dense oracle for the constrained forward: (W + Pm B A^T + Pn Bi Ai^T) x,
// everything materialized with naive products.
MatrixXd dense_forward_oracle(const ConstrainedLinearLayer<double>& layer,
                              const MatrixXd& x, int domain) {
  const MatrixXd pm = layer.constrained()
                          ? layer.decomposition->P_m
                          : MatrixXd::Identity(layer.out_dim(), layer.out_dim());
  const MatrixXd pn = layer.constrained()
                          ? layer.decomposition->P_n
                          : MatrixXd::Identity(layer.out_dim(), layer.out_dim());
  MatrixXd weight =
      layer.W + oracle::naive_matmul(
                    pm, oracle::naive_matmul(layer.shared.B, layer.shared.A.transpose()));
  if (layer.mode == LayerMode::both) {
    const auto& p = layer.specific[static_cast<std::size_t>(domain)];
    weight += oracle::naive_matmul(pn, oracle::naive_matmul(p.B, p.A.transpose()));
  }
  return oracle::naive_matmul(weight, x);
}

}  // namespace

TEST_CASE("init: zero-B scheme leaves the adapters inert") {
  RandomSource rng = seeded_rng(40);
  auto layer = make_layer(rng, 10, 8, 3, 2, LayerMode::both, InitScheme::zero_b);
  CHECK(layer.shared.B.norm() == 0.0);
  CHECK((layer.shared.B * layer.shared.A.transpose()).norm() == 0.0);
  for (const auto& p : layer.specific) CHECK(p.B.norm() == 0.0);
}

TEST_CASE("init: gaussian B lands inside its subspace") {
  RandomSource rng = seeded_rng(41);
  auto layer = make_layer(rng, 32, 32, 4, 3, LayerMode::both);
  const auto& dec = *layer.decomposition;
  const MatrixXd eye = MatrixXd::Identity(32, 32);
  CHECK(((eye - dec.P_m) * layer.shared.B).norm() <= 1e-12);
  for (const auto& p : layer.specific) {
    CHECK((dec.P_n * p.B - p.B).norm() <= 1e-12);
    CHECK(((eye - dec.P_n) * p.B).norm() <= 1e-12);
  }
  // Cross-check with a projector rebuilt from the independent Jacobi SVD.
  const MatrixXd pn_oracle = oracle::null_projector_from_oracle(layer.W, dec.k);
  for (const auto& p : layer.specific)
    CHECK((pn_oracle * p.B - p.B).norm() <= 1e-9);
}

TEST_CASE("init: empty left null space rejects domain adapters") {
  RandomSource rng = seeded_rng(42);
  ConstrainedLinearLayer<double> layer;
  layer.W = MatrixXd::Identity(8, 8);  // equal singular values, tau=0.95 -> s=0
  layer.decomposition = decompose<double>(layer.W, 0.95);
  REQUIRE(layer.decomposition->s == 0);
  layer.mode = LayerMode::both;
  CHECK_THROWS_AS(init_projected(rng, layer, 2, 2, InitScheme::gaussian), ConfigError);
  layer.mode = LayerMode::shared_only;
  CHECK_NOTHROW(init_projected(rng, layer, 2, 0, InitScheme::gaussian));
  CHECK_THROWS_AS(init_projected(rng, layer, 9, 0, InitScheme::gaussian),
                  DimensionError);
}

TEST_CASE("forward: zero adapters reduce to the frozen weight") {
  RandomSource rng = seeded_rng(43);
  auto layer = make_layer(rng, 9, 7, 2, 2, LayerMode::both, InitScheme::zero_b);
  MatrixXd x = gaussian_matrix<double>(rng, 7, 5, 1.0);
  CHECK(oracle::max_abs_diff(forward(layer, x, 1), layer.W * x) == 0.0);
}

TEST_CASE("forward: identity pass-through") {
  // W = 0 with P_m = I and the shared adapter equal to the identity: h = x.
  const Index d = 6;
  ConstrainedLinearLayer<double> layer;
  layer.W = MatrixXd::Zero(d, d);
  SubspaceDecomposition<double> dec;
  dec.k = d;
  dec.s = 0;
  dec.threshold = 0.95;
  dec.U_m = MatrixXd::Identity(d, d);
  dec.U_n = MatrixXd::Zero(d, 0);
  dec.Sigma_m = Eigen::VectorXd::Ones(d);
  dec.V_m = MatrixXd::Identity(d, d);
  dec.V_n = MatrixXd::Zero(d, 0);
  dec.P_m = MatrixXd::Identity(d, d);
  dec.P_n = MatrixXd::Zero(d, d);
  layer.decomposition = dec;
  layer.mode = LayerMode::shared_only;
  layer.shared.A = MatrixXd::Identity(d, d);
  layer.shared.B = MatrixXd::Identity(d, d);

  RandomSource rng = seeded_rng(44);
  MatrixXd x = gaussian_matrix<double>(rng, d, 3, 1.0);
  CHECK(oracle::max_abs_diff(forward(layer, x), x) <= 1e-12);
}

TEST_CASE("forward: matches the dense materialization oracle") {
  RandomSource rng = seeded_rng(45);
  auto layer = make_layer(rng, 12, 9, 3, 3, LayerMode::both);
  MatrixXd x = gaussian_matrix<double>(rng, 9, 4, 1.0);
  for (int dom = 0; dom < 3; ++dom)
    CHECK(oracle::max_abs_diff(forward(layer, x, dom),
                               dense_forward_oracle(layer, x, dom)) <= 1e-10);
}

TEST_CASE("forward: argument contract") {
  RandomSource rng = seeded_rng(46);
  auto layer = make_layer(rng, 8, 6, 2, 2, LayerMode::both);
  MatrixXd x = gaussian_matrix<double>(rng, 6, 2, 1.0);
  CHECK_THROWS_AS((void)forward(layer, x, 5), DimensionError);
  CHECK_THROWS_AS((void)forward(layer, x, -1), DimensionError);
  MatrixXd bad = gaussian_matrix<double>(rng, 5, 2, 1.0);
  CHECK_THROWS_AS((void)forward(layer, bad, 0), DimensionError);

  auto shared = make_layer(rng, 8, 6, 2, 0, LayerMode::shared_only);
  CHECK_THROWS_AS((void)forward(shared, x, 0), DimensionError);
  CHECK_NOTHROW((void)forward(shared, x));
}

TEST_CASE("backward: zero upstream gives zero gradients") {
  RandomSource rng = seeded_rng(47);
  auto layer = make_layer(rng, 10, 8, 2, 2, LayerMode::both);
  MatrixXd x = gaussian_matrix<double>(rng, 8, 3, 1.0);
  MatrixXd g = MatrixXd::Zero(10, 3);
  auto grads = backward(layer, x, 1, g);
  CHECK(grads.dA.norm() == 0.0);
  CHECK(grads.dB.norm() == 0.0);
  CHECK(grads.dA_dom.norm() == 0.0);
  CHECK(grads.dB_dom.norm() == 0.0);
  CHECK(grads.dx.norm() == 0.0);
}

TEST_CASE("backward: hand-sized layer against finite differences") {
  // d = d' = 2, r = 1, batch of 1, fixed numbers.
  ConstrainedLinearLayer<double> layer;
  layer.W.resize(2, 2);
  layer.W << 1.0, 0.5, -0.25, 2.0;
  layer.decomposition = decompose<double>(layer.W, 0.9);
  layer.mode = LayerMode::both;
  layer.shared.A.resize(2, 1);
  layer.shared.A << 0.3, -0.7;
  layer.shared.B.resize(2, 1);
  layer.shared.B << 1.1, 0.2;
  layer.shared.B = layer.decomposition->P_m * layer.shared.B;
  layer.specific.resize(1);
  layer.specific[0].A.resize(2, 1);
  layer.specific[0].A << -0.4, 0.9;
  layer.specific[0].B.resize(2, 1);
  layer.specific[0].B << 0.6, -1.3;
  layer.specific[0].B = layer.decomposition->P_n * layer.specific[0].B;

  MatrixXd x(2, 1), probe(2, 1);
  x << 0.8, -0.6;
  probe << 1.0, -2.0;

  auto loss = [&] { return (probe.array() * forward(layer, x, 0).array()).sum(); };
  auto grads = backward(layer, x, 0, probe);

  MatrixXd fd_a = oracle::fd_gradient(layer.shared.A, loss);
  MatrixXd fd_b = oracle::fd_gradient(layer.shared.B, loss);
  MatrixXd fd_ad = oracle::fd_gradient(layer.specific[0].A, loss);
  MatrixXd fd_bd = oracle::fd_gradient(layer.specific[0].B, loss);
  MatrixXd fd_x = oracle::fd_gradient(x, loss);
  CHECK(oracle::grad_rel_err(grads.dA, fd_a) <= 1e-6);
  CHECK(oracle::grad_rel_err(grads.dB, fd_b) <= 1e-6);
  CHECK(oracle::grad_rel_err(grads.dA_dom, fd_ad) <= 1e-6);
  CHECK(oracle::grad_rel_err(grads.dB_dom, fd_bd) <= 1e-6);
  CHECK(oracle::grad_rel_err(grads.dx, fd_x) <= 1e-6);
}

TEST_CASE("backward: gradients over random configurations match finite differences") {
  RandomSource rng = seeded_rng(48);
  for (int t = 0; t < 6; ++t) {
    const Index d = 5 + t % 3, dp = 4 + t % 4, r = 1 + t % 2;
    auto layer = make_layer(rng, d, dp, r, 2, t % 2 ? LayerMode::both
                                                    : LayerMode::shared_only);
    const int dom = t % 2 ? 1 : -1;
    MatrixXd x = gaussian_matrix<double>(rng, dp, 3, 1.0);
    MatrixXd probe = gaussian_matrix<double>(rng, d, 3, 1.0);
    auto loss = [&] { return (probe.array() * forward(layer, x, dom).array()).sum(); };
    auto grads = backward(layer, x, dom, probe);
    CHECK(oracle::grad_rel_err(grads.dA, oracle::fd_gradient(layer.shared.A, loss)) <= 1e-5);
    CHECK(oracle::grad_rel_err(grads.dB, oracle::fd_gradient(layer.shared.B, loss)) <= 1e-5);
    CHECK(oracle::grad_rel_err(grads.dx, oracle::fd_gradient(x, loss)) <= 1e-5);
    if (dom >= 0) {
      auto& p = layer.specific[1];
      CHECK(oracle::grad_rel_err(grads.dA_dom, oracle::fd_gradient(p.A, loss)) <= 1e-5);
      CHECK(oracle::grad_rel_err(grads.dB_dom, oracle::fd_gradient(p.B, loss)) <= 1e-5);
    }
  }
}

TEST_CASE("backward: B gradients stay inside their subspaces") {
  RandomSource rng = seeded_rng(49);
  auto layer = make_layer(rng, 14, 11, 3, 2, LayerMode::both);
  MatrixXd x = gaussian_matrix<double>(rng, 11, 4, 1.0);
  MatrixXd g = gaussian_matrix<double>(rng, 14, 4, 1.0);
  auto grads = backward(layer, x, 0, g);
  const auto& dec = *layer.decomposition;
  const MatrixXd eye = MatrixXd::Identity(14, 14);
  CHECK(((eye - dec.P_m) * grads.dB).norm() <= 1e-12);
  CHECK(((eye - dec.P_n) * grads.dB_dom).norm() <= 1e-12);
}

TEST_CASE("merge: zero adapters return the frozen weight") {
  RandomSource rng = seeded_rng(50);
  auto layer = make_layer(rng, 7, 7, 2, 2, LayerMode::both, InitScheme::zero_b);
  CHECK(oracle::max_abs_diff(merge(layer, 0), layer.W) == 0.0);
}

TEST_CASE("merge: equivalent to the training forward") {
  RandomSource rng = seeded_rng(51);
  auto layer = make_layer(rng, 10, 12, 3, 2, LayerMode::both);
  MatrixXd x = gaussian_matrix<double>(rng, 12, 6, 1.0);
  for (int dom = 0; dom < 2; ++dom) {
    MatrixXd merged = merge(layer, dom);
    CHECK(oracle::max_abs_diff(merged * x, forward(layer, x, dom)) <= 1e-10);
  }
  auto shared = make_layer(rng, 10, 12, 3, 0, LayerMode::shared_only);
  CHECK_THROWS_AS((void)merge(shared, 0), DimensionError);
  CHECK(oracle::max_abs_diff(merged_weight(shared) * x, forward(shared, x)) <= 1e-10);
}

TEST_CASE("sgd keeps B confined; projected and raw merges agree") {
  RandomSource rng = seeded_rng(52);
  auto layer = make_layer(rng, 12, 10, 3, 2, LayerMode::both);
  const auto& dec = *layer.decomposition;
  REQUIRE(dec.s >= 3);
  const MatrixXd eye = MatrixXd::Identity(12, 12);
  const double lr = 0.05;

  for (int step = 0; step < 100; ++step) {
    const int dom = step % 2;
    MatrixXd x = gaussian_matrix<double>(rng, 10, 4, 1.0);
    MatrixXd g = gaussian_matrix<double>(rng, 12, 4, 0.5);
    auto grads = backward(layer, x, dom, g);
    layer.shared.A -= lr * grads.dA;
    layer.shared.B -= lr * grads.dB;
    auto& p = layer.specific[static_cast<std::size_t>(dom)];
    p.A -= lr * grads.dA_dom;
    p.B -= lr * grads.dB_dom;
    // Regularizer gradients touch every domain's B and must stay in-subspace.
    std::vector<const MatrixXd*> bs;
    for (const auto& sp : layer.specific) bs.push_back(&sp.B);
    auto orth = orth_loss<double>(bs);
    auto ss = ss_loss<double>(bs);
    for (std::size_t i = 0; i < layer.specific.size(); ++i)
      layer.specific[i].B -= lr * (0.1 * orth.grads[i] + 0.01 * ss.grads[i]);
  }

  CHECK(((eye - dec.P_m) * layer.shared.B).norm() <=
        1e-8 * std::max(1.0, layer.shared.B.norm()));
  for (const auto& p : layer.specific)
    CHECK(((eye - dec.P_n) * p.B).norm() <= 1e-8 * std::max(1.0, p.B.norm()));
  for (int dom = 0; dom < 2; ++dom)
    CHECK(oracle::max_abs_diff(merge(layer, dom, true), merge(layer, dom, false)) <=
          1e-8);
}

TEST_CASE("shared and domain contributions are orthogonal") {
  RandomSource rng = seeded_rng(53);
  auto layer = make_layer(rng, 16, 13, 3, 2, LayerMode::both);
  const auto& dec = *layer.decomposition;
  for (int t = 0; t < 5; ++t) {
    MatrixXd x = gaussian_matrix<double>(rng, 13, 1, 1.0);
    MatrixXd shared_part =
        dec.P_m * (layer.shared.B * (layer.shared.A.transpose() * x));
    const auto& p = layer.specific[0];
    MatrixXd dom_part = dec.P_n * (p.B * (p.A.transpose() * x));
    const double inner = (shared_part.array() * dom_part.array()).sum();
    CHECK(std::abs(inner) <= 1e-8 * std::max(1e-12, shared_part.norm() * dom_part.norm()));
  }
}

TEST_CASE("unconstrained layer: projections degenerate to the identity") {
  RandomSource rng = seeded_rng(54);
  ConstrainedLinearLayer<double> layer;
  layer.W = gaussian_matrix<double>(rng, 8, 8, 1.0);
  layer.mode = LayerMode::both;
  init_projected(rng, layer, 2, 2, InitScheme::gaussian);
  REQUIRE(!layer.constrained());
  MatrixXd x = gaussian_matrix<double>(rng, 8, 3, 1.0);
  MatrixXd want = (layer.W + layer.shared.B * layer.shared.A.transpose() +
                   layer.specific[1].B * layer.specific[1].A.transpose()) *
                  x;
  CHECK(oracle::max_abs_diff(forward(layer, x, 1), want) <= 1e-12);
  CHECK(oracle::max_abs_diff(merge(layer, 1), merge(layer, 1, false)) == 0.0);
}
