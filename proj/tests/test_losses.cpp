#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "sslora/losses.hpp"

using namespace sslora;
using Eigen::MatrixXd;

namespace {

MatrixXd orthonormal_cols(RandomSource& rng, Index d, Index r) {
  MatrixXd g = gaussian_matrix<double>(rng, d, r, 1.0);
  Eigen::HouseholderQR<MatrixXd> qr(g);
  return qr.householderQ() * MatrixXd::Identity(d, r);
}

std::vector<const MatrixXd*> ptrs(const std::vector<MatrixXd>& ms) {
  std::vector<const MatrixXd*> out;
  for (const auto& m : ms) out.push_back(&m);
  return out;
}

}  // namespace

TEST_CASE("cross entropy: uniform logits give ln C") {
  MatrixXd logits = MatrixXd::Constant(4, 3, 0.7);
  auto r = cross_entropy<double>(logits, {0, 2, 3});
  CHECK(r.loss == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  // Gradient columns sum to zero.
  for (Index b = 0; b < 3; ++b)
    CHECK(std::abs(r.dlogits.col(b).sum()) <= 1e-15);
}

TEST_CASE("cross entropy: confident correct logits vanish") {
  MatrixXd logits = MatrixXd::Zero(4, 1);
  logits(1, 0) = 50.0;
  auto r = cross_entropy<double>(logits, {1});
  CHECK(r.loss >= 0.0);
  CHECK(r.loss <= 1e-20);
}

TEST_CASE("cross entropy: gradient matches finite differences") {
  RandomSource rng = seeded_rng(20);
  MatrixXd logits = gaussian_matrix<double>(rng, 5, 4, 1.0);
  std::vector<int> labels{3, 0, 4, 1};
  auto r = cross_entropy<double>(logits, labels);
  MatrixXd fd = oracle::fd_gradient(
      logits, [&] { return cross_entropy<double>(logits, labels).loss; });
  CHECK(oracle::grad_rel_err(r.dlogits, fd) <= 1e-6);
}

TEST_CASE("cross entropy: contract errors") {
  MatrixXd logits = MatrixXd::Zero(3, 0);
  CHECK_THROWS_AS((void)cross_entropy<double>(logits, {}), DimensionError);
  MatrixXd one = MatrixXd::Zero(3, 1);
  CHECK_THROWS_AS((void)cross_entropy<double>(one, {5}), DimensionError);
  CHECK_THROWS_AS((void)cross_entropy<double>(one, {0, 1}), DimensionError);
}

TEST_CASE("orth loss: orthonormal bases give zero") {
  RandomSource rng = seeded_rng(21);
  std::vector<MatrixXd> bs;
  for (int i = 0; i < 3; ++i) bs.push_back(orthonormal_cols(rng, 12, 4));
  auto r = orth_loss<double>(ptrs(bs));
  CHECK(r.loss >= 0.0);
  CHECK(r.loss <= 1e-10);
}

TEST_CASE("orth loss: scaled orthonormal basis, hand value 9r") {
  RandomSource rng = seeded_rng(22);
  const Index r = 5;
  std::vector<MatrixXd> bs{2.0 * orthonormal_cols(rng, 16, r)};
  auto res = orth_loss<double>(ptrs(bs));
  CHECK(res.loss == doctest::Approx(9.0 * r).epsilon(1e-10));
}

TEST_CASE("orth loss: gradient matches finite differences") {
  RandomSource rng = seeded_rng(23);
  std::vector<MatrixXd> bs;
  for (int i = 0; i < 2; ++i) bs.push_back(gaussian_matrix<double>(rng, 7, 3, 0.8));
  auto res = orth_loss<double>(ptrs(bs));
  for (std::size_t i = 0; i < bs.size(); ++i) {
    MatrixXd fd = oracle::fd_gradient(
        bs[i], [&] { return orth_loss<double>(ptrs(bs)).loss; });
    CHECK(oracle::grad_rel_err(res.grads[i], fd) <= 1e-6);
  }
}

TEST_CASE("orth loss: invariant under column permutation") {
  RandomSource rng = seeded_rng(24);
  MatrixXd b = gaussian_matrix<double>(rng, 9, 4, 1.0);
  MatrixXd p = MatrixXd::Zero(4, 4);
  p(0, 2) = p(1, 0) = p(2, 3) = p(3, 1) = 1.0;  // a permutation
  std::vector<MatrixXd> plain{b}, permuted{b * p};
  CHECK(std::abs(orth_loss<double>(ptrs(plain)).loss -
                 orth_loss<double>(ptrs(permuted)).loss) <= 1e-12);
}

TEST_CASE("ss loss: equal pair contributes zero with a degeneracy flag") {
  RandomSource rng = seeded_rng(25);
  MatrixXd b = gaussian_matrix<double>(rng, 8, 3, 1.0);
  std::vector<MatrixXd> bs{b, b};
  auto r = ss_loss<double>(ptrs(bs));
  CHECK(r.loss == 0.0);
  CHECK(r.degenerate_pairs == 1);
  CHECK(r.grads[0].norm() == 0.0);
  CHECK(r.grads[1].norm() == 0.0);
}

TEST_CASE("ss loss: disjoint orthonormal spans give -sqrt(r)") {
  const Index d = 10, r = 3;
  MatrixXd b1 = MatrixXd::Zero(d, r), b2 = MatrixXd::Zero(d, r);
  for (Index j = 0; j < r; ++j) {
    b1(j, j) = 1.0;
    b2(r + j, j) = 1.0;
  }
  std::vector<MatrixXd> bs{b1, b2};
  auto res = ss_loss<double>(ptrs(bs));
  CHECK(std::abs(res.loss - (-std::sqrt(static_cast<double>(r)))) <= 1e-8);
}

TEST_CASE("ss loss: gradient matches finite differences") {
  RandomSource rng = seeded_rng(26);
  std::vector<MatrixXd> bs;
  for (int i = 0; i < 3; ++i) bs.push_back(gaussian_matrix<double>(rng, 6, 2, 0.9));
  auto res = ss_loss<double>(ptrs(bs));
  for (std::size_t i = 0; i < bs.size(); ++i) {
    MatrixXd fd = oracle::fd_gradient(
        bs[i], [&] { return ss_loss<double>(ptrs(bs)).loss; });
    CHECK(oracle::grad_rel_err(res.grads[i], fd) <= 1e-5);
  }
}

TEST_CASE("ss loss: symmetric under domain swap, non-positive, zero below D=2") {
  RandomSource rng = seeded_rng(27);
  std::vector<MatrixXd> bs;
  for (int i = 0; i < 3; ++i) bs.push_back(gaussian_matrix<double>(rng, 7, 3, 1.1));
  auto base = ss_loss<double>(ptrs(bs));
  CHECK(base.loss <= 0.0);

  std::vector<MatrixXd> swapped{bs[2], bs[1], bs[0]};
  CHECK(std::abs(base.loss - ss_loss<double>(ptrs(swapped)).loss) <= 1e-12);

  std::vector<MatrixXd> single{bs[0]};
  auto r1 = ss_loss<double>(ptrs(single));
  CHECK(r1.loss == 0.0);
  CHECK(r1.grads[0].norm() == 0.0);
}

TEST_CASE("orth loss is non-negative on random bases") {
  RandomSource rng = seeded_rng(28);
  for (int t = 0; t < 5; ++t) {
    std::vector<MatrixXd> bs{gaussian_matrix<double>(rng, 11, 4, 0.5 + 0.3 * t)};
    CHECK(orth_loss<double>(ptrs(bs)).loss >= 0.0);
  }
}

TEST_CASE("gradient descent on orth loss alone converges") {
  RandomSource rng = seeded_rng(29);
  const Index d = 32, r = 8;
  std::vector<MatrixXd> bs;
  for (int i = 0; i < 3; ++i) bs.push_back(gaussian_matrix<double>(rng, d, r, 0.1));
  double loss = 0.0;
  for (int step = 0; step < 5000; ++step) {
    auto res = orth_loss<double>(ptrs(bs));
    loss = res.loss;
    if (loss < 1e-6) break;
    for (std::size_t i = 0; i < bs.size(); ++i) bs[i] -= 0.01 * res.grads[i];
  }
  CHECK(loss < 1e-6);
}

TEST_CASE("total loss arithmetic") {
  auto a = total_loss<double>(1.0, 0.0, 0.0, 1.0, 1e-7);
  CHECK(a.total == 1.0);
  auto b = total_loss<double>(2.0, 3.0, -4.0, 1.0, 1e-7);
  CHECK(b.total == doctest::Approx(2.0 + 3.0 - 4e-7).epsilon(1e-15));

  RandomSource rng = seeded_rng(30);
  for (int t = 0; t < 10; ++t) {
    const double ce = rng.gaussian(), orth = std::abs(rng.gaussian());
    const double ss = -std::abs(rng.gaussian());
    const double l1 = std::abs(rng.gaussian()), l2 = std::abs(rng.gaussian());
    auto r = total_loss<double>(ce, orth, ss, l1, l2);
    CHECK(std::abs(r.total - (ce + l1 * orth + l2 * ss)) <= 1e-12);
  }
}
