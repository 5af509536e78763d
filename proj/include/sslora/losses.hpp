#pragma once

#include <vector>

#include "sslora/linalg.hpp"

namespace sslora {

/// Weighted objective: total = ce + lambda1 * orth + lambda2 * ss.
template <class S>
struct LossBreakdown {
  S ce = S(0);
  S orth = S(0);
  S ss = S(0);
  S total = S(0);
  S lambda1 = S(0);
  S lambda2 = S(0);
};

template <class S>
LossBreakdown<S> total_loss(S ce, S orth, S ss, S lambda1, S lambda2) {
  LossBreakdown<S> b;
  b.ce = ce;
  b.orth = orth;
  b.ss = ss;
  b.lambda1 = lambda1;
  b.lambda2 = lambda2;
  b.total = ce + lambda1 * orth + lambda2 * ss;
  return b;
}

template <class S>
struct CrossEntropyResult {
  S loss = S(0);
  MatrixX<S> dlogits;  // (softmax - onehot) / batch
};

/// Mean negative log-softmax of the true class over the batch (columns).
template <class S>
CrossEntropyResult<S> cross_entropy(const MatrixX<S>& logits,
                                    const std::vector<int>& labels) {
  const Index classes = logits.rows();
  const Index batch = logits.cols();
  if (batch == 0) throw DimensionError("cross_entropy: empty batch");
  if (static_cast<Index>(labels.size()) != batch)
    throw DimensionError("cross_entropy: labels/batch mismatch");

  CrossEntropyResult<S> r;
  r.dlogits.resize(classes, batch);
  S loss = S(0);
  for (Index b = 0; b < batch; ++b) {
    const int y = labels[static_cast<std::size_t>(b)];
    if (y < 0 || y >= classes)
      throw DimensionError("cross_entropy: label out of range");
    const S zmax = logits.col(b).maxCoeff();
    S sum = S(0);
    for (Index c = 0; c < classes; ++c) sum += std::exp(logits(c, b) - zmax);
    const S lse = zmax + std::log(sum);
    loss += lse - logits(y, b);
    for (Index c = 0; c < classes; ++c)
      r.dlogits(c, b) = std::exp(logits(c, b) - lse);
    r.dlogits(y, b) -= S(1);
  }
  r.loss = loss / S(batch);
  r.dlogits /= S(batch);
  return r;
}

template <class S>
struct RegularizerResult {
  S loss = S(0);
  std::vector<MatrixX<S>> grads;  // one per input B_i
  int degenerate_pairs = 0;       // ss only: pairs with exactly equal Gram matrices
};

/// Orthonormality pressure on domain-specific bases:
/// sum_i ||B_i^T B_i - I_r||_F^2, gradient 4 B_i (B_i^T B_i - I_r).
template <class S>
RegularizerResult<S> orth_loss(const std::vector<const MatrixX<S>*>& bs) {
  RegularizerResult<S> r;
  r.grads.reserve(bs.size());
  Index rank = -1;
  for (const MatrixX<S>* b : bs) {
    if (rank < 0) rank = b->cols();
    if (b->cols() != rank)
      throw DimensionError("orth_loss: rank mismatch between bases");
    const MatrixX<S> gram_residual =
        b->transpose() * (*b) - MatrixX<S>::Identity(rank, rank);
    r.loss += gram_residual.squaredNorm();
    r.grads.push_back(S(4) * (*b) * gram_residual);
  }
  return r;
}

/// Subspace separation between domains:
/// -(1/sqrt(2)) * sum_{i<j} ||B_i B_i^T - B_j B_j^T||_F  (norm not squared).
/// Gradient via d||M||_F = M / ||M||_F; an exactly equal pair is the
/// non-differentiable point and contributes zero gradient (counted).
template <class S>
RegularizerResult<S> ss_loss(const std::vector<const MatrixX<S>*>& bs) {
  RegularizerResult<S> r;
  const std::size_t n = bs.size();
  r.grads.reserve(n);
  for (const MatrixX<S>* b : bs) r.grads.push_back(MatrixX<S>::Zero(b->rows(), b->cols()));
  if (n < 2) return r;

  const S inv_sqrt2 = S(1) / std::sqrt(S(2));
  for (std::size_t i = 0; i + 1 < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (bs[i]->rows() != bs[j]->rows())
        throw DimensionError("ss_loss: dimension mismatch between bases");
      const MatrixX<S> m = (*bs[i]) * bs[i]->transpose() - (*bs[j]) * bs[j]->transpose();
      const S norm = m.norm();
      if (norm == S(0)) {
        ++r.degenerate_pairs;
        continue;
      }
      r.loss -= inv_sqrt2 * norm;
      const MatrixX<S> dir = m / norm;
      // d/dB_i [-(1/sqrt2)||M||] = -sqrt(2) (M/||M||) B_i, opposite sign for B_j.
      r.grads[i] -= std::sqrt(S(2)) * dir * (*bs[i]);
      r.grads[j] += std::sqrt(S(2)) * dir * (*bs[j]);
    }
  }
  return r;
}

}  // namespace sslora
