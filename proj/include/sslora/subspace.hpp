#pragma once

#include "sslora/linalg.hpp"

namespace sslora {

/// Cumulative contribution rate of squared singular values:
/// C_k = sum_{i<=k} sigma_i^2 / sum_j sigma_j^2, k = 1..d~.
template <class S>
struct ContributionCurve {
  VectorX<S> values;  // nondecreasing, in [0,1], last value 1
  Index size() const { return values.size(); }
};

template <class S>
ContributionCurve<S> contribution_curve(const VectorX<S>& sigma) {
  if (sigma.size() == 0) throw DimensionError("contribution_curve: empty sigma");
  for (Index i = 0; i < sigma.size(); ++i) {
    if (sigma[i] < S(0)) throw DimensionError("contribution_curve: negative sigma");
    if (i + 1 < sigma.size() && sigma[i] < sigma[i + 1])
      throw DimensionError("contribution_curve: sigma not descending");
  }
  VectorX<S> partial(sigma.size());
  S acc = S(0);
  for (Index i = 0; i < sigma.size(); ++i) {
    acc += sigma[i] * sigma[i];
    partial[i] = acc;
  }
  if (acc == S(0))
    throw DegenerateInputError("contribution_curve: all singular values are zero");
  ContributionCurve<S> curve;
  curve.values = partial / acc;
  return curve;
}

/// Smallest k (1-based) with C_k >= threshold. The comparison is inclusive.
template <class S>
Index truncation_rank(const ContributionCurve<S>& curve, S threshold) {
  if (!(threshold > S(0)) || threshold > S(1))
    throw DimensionError("truncation_rank: threshold must be in (0, 1]");
  for (Index k = 0; k < curve.values.size(); ++k)
    if (curve.values[k] >= threshold) return k + 1;
  return curve.values.size();  // C_{d~} = 1 always satisfies
}

/// Truncated SVD split of a frozen weight W (d x d'):
/// U_m spans the retained column space, U_n the left null space (the trailing
/// s left singular vectors), P_m/P_n the corresponding projectors.
template <class S>
struct SubspaceDecomposition {
  Index k = 0;        // retained column-space dimension
  Index s = 0;        // left-null-space dimension, k + s = min(d, d')
  S threshold = S(0);
  MatrixX<S> U_m;     // d x k
  MatrixX<S> U_n;     // d x s
  VectorX<S> Sigma_m; // k retained singular values
  MatrixX<S> V_m;     // d' x k
  MatrixX<S> V_n;     // d' x s  (kept for completeness; unused downstream)
  MatrixX<S> P_m;     // d x d
  MatrixX<S> P_n;     // d x d
};

template <class S>
SubspaceDecomposition<S> decompose(const MatrixX<S>& w, S threshold) {
  if (!(threshold > S(0)) || threshold > S(1))
    throw DimensionError("decompose: threshold must be in (0, 1]");
  const SvdResult<S> sv = svd(w);
  const ContributionCurve<S> curve = contribution_curve<S>(sv.sigma);
  const Index k = truncation_rank(curve, threshold);
  const Index dtil = sv.sigma.size();

  SubspaceDecomposition<S> dec;
  dec.k = k;
  dec.s = dtil - k;
  dec.threshold = threshold;
  dec.U_m = sv.U.leftCols(k);
  dec.U_n = sv.U.rightCols(dec.s);
  dec.Sigma_m = sv.sigma.head(k);
  dec.V_m = sv.Vt.topRows(k).transpose();
  dec.V_n = sv.Vt.bottomRows(dec.s).transpose();
  dec.P_m = dec.U_m * dec.U_m.transpose();
  dec.P_n = dec.U_n * dec.U_n.transpose();
  return dec;
}

}  // namespace sslora
