#pragma once

#include <optional>
#include <vector>

#include "sslora/subspace.hpp"

namespace sslora {

/// Low-rank factor pair: the adapter update is dW = B * A^T (d x d').
template <class S>
struct LoraPair {
  MatrixX<S> A;  // d' x r
  MatrixX<S> B;  // d x r
  Index rank() const { return A.cols(); }
};

enum class LayerMode { shared_only, both };
enum class InitScheme { gaussian, zero_b };

/// Frozen linear weight with its subspace split, one shared adapter and
/// (in `both` mode) one adapter per domain. W is never written after
/// construction. A layer without a decomposition is unconstrained: the
/// projections degenerate to the identity everywhere.
template <class S>
struct ConstrainedLinearLayer {
  MatrixX<S> W;  // frozen, d x d'
  std::optional<SubspaceDecomposition<S>> decomposition;
  LoraPair<S> shared;
  std::vector<LoraPair<S>> specific;  // per-domain, only when mode == both
  LayerMode mode = LayerMode::shared_only;

  Index out_dim() const { return W.rows(); }
  Index in_dim() const { return W.cols(); }
  Index num_domains() const { return static_cast<Index>(specific.size()); }
  bool constrained() const { return decomposition.has_value(); }
};

template <class S>
struct LayerGradients {
  MatrixX<S> dA;      // shared, d' x r
  MatrixX<S> dB;      // shared, d x r
  MatrixX<S> dA_dom;  // active domain (empty in shared-only mode)
  MatrixX<S> dB_dom;
  MatrixX<S> dx;      // input gradient for chaining
};

/// Draw A and B for the shared adapter and (mode == both) each domain, then
/// confine the update columns to their subspaces by projecting B: the columns
/// of B A^T span col(B), so B <- P B is exactly the column projection of dW
/// and preserves the rank-r factorization. Draw order is pinned: shared A,
/// shared B, then per domain A_i, B_i.
template <class S>
void init_projected(RandomSource& rng, ConstrainedLinearLayer<S>& layer, Index rank,
                    Index num_domains, InitScheme scheme, double std_dev = 0.02) {
  const Index d = layer.out_dim(), dp = layer.in_dim();
  if (rank < 1 || rank > std::min(d, dp))
    throw DimensionError("init_projected: rank must be in [1, min(d, d')]");
  if (layer.mode == LayerMode::both && layer.constrained() &&
      layer.decomposition->s == 0)
    throw ConfigError("init_projected: left null space empty; lower the threshold");

  auto draw_pair = [&](LoraPair<S>& p) {
    p.A = gaussian_matrix<S>(rng, dp, rank, std_dev);
    p.B = scheme == InitScheme::zero_b ? MatrixX<S>::Zero(d, rank)
                                       : gaussian_matrix<S>(rng, d, rank, std_dev);
  };

  draw_pair(layer.shared);
  layer.specific.clear();
  if (layer.mode == LayerMode::both) {
    layer.specific.resize(static_cast<std::size_t>(num_domains));
    for (auto& p : layer.specific) draw_pair(p);
  }

  if (layer.constrained()) {
    layer.shared.B = layer.decomposition->P_m * layer.shared.B;
    for (auto& p : layer.specific) p.B = layer.decomposition->P_n * p.B;
  }
}

namespace detail_lora {

template <class S>
void check_forward_args(const ConstrainedLinearLayer<S>& layer, const MatrixX<S>& x,
                        int domain) {
  if (x.rows() != layer.in_dim())
    throw DimensionError("layer: input rows do not match d'");
  if (layer.mode == LayerMode::both) {
    if (domain < 0 || domain >= layer.num_domains())
      throw DimensionError("layer: domain index out of range");
  } else if (domain >= 0) {
    throw DimensionError("layer: domain given for a shared-only layer");
  }
}

}  // namespace detail_lora

/// h = W x + P_m B A^T x + P_n B_dom A_dom^T x (last term only in `both`
/// mode). Evaluated factor-wise: A^T x (r x batch) first, never forming the
/// d x d' adapter product.
template <class S>
MatrixX<S> forward(const ConstrainedLinearLayer<S>& layer, const MatrixX<S>& x,
                   int domain = -1) {
  detail_lora::check_forward_args(layer, x, domain);
  MatrixX<S> h = layer.W * x;
  {
    const MatrixX<S> update = layer.shared.B * (layer.shared.A.transpose() * x);
    h += layer.constrained() ? MatrixX<S>(layer.decomposition->P_m * update) : update;
  }
  if (layer.mode == LayerMode::both) {
    const LoraPair<S>& p = layer.specific[static_cast<std::size_t>(domain)];
    const MatrixX<S> update = p.B * (p.A.transpose() * x);
    h += layer.constrained() ? MatrixX<S>(layer.decomposition->P_n * update) : update;
  }
  return h;
}

/// Analytic gradients for upstream g = dL/dh. With dL/d(dW) = P^T g x^T and
/// P^T = P, every adapter gradient lands inside its subspace:
///   dB = (P_m g)(A^T x)^T,   dA = x (g^T P_m B),
/// and the same with P_n for the batch domain's adapter.
/// dx = W^T g + A B^T P_m g + A_dom B_dom^T P_n g.
template <class S>
LayerGradients<S> backward(const ConstrainedLinearLayer<S>& layer, const MatrixX<S>& x,
                           int domain, const MatrixX<S>& g) {
  detail_lora::check_forward_args(layer, x, domain);
  if (g.rows() != layer.out_dim() || g.cols() != x.cols())
    throw DimensionError("layer backward: upstream shape mismatch");

  LayerGradients<S> out;
  const MatrixX<S> pm_g =
      layer.constrained() ? MatrixX<S>(layer.decomposition->P_m * g) : g;
  const MatrixX<S> atx = layer.shared.A.transpose() * x;  // r x batch
  out.dB = pm_g * atx.transpose();
  out.dA = x * (pm_g.transpose() * layer.shared.B);
  out.dx = layer.W.transpose() * g + layer.shared.A * (layer.shared.B.transpose() * pm_g);

  if (layer.mode == LayerMode::both) {
    const LoraPair<S>& p = layer.specific[static_cast<std::size_t>(domain)];
    const MatrixX<S> pn_g =
        layer.constrained() ? MatrixX<S>(layer.decomposition->P_n * g) : g;
    out.dB_dom = pn_g * (p.A.transpose() * x).transpose();
    out.dA_dom = x * (pn_g.transpose() * p.B);
    out.dx += p.A * (p.B.transpose() * pn_g);
  }
  return out;
}

/// Collapsed inference weight W + P_m B A^T + P_n B_dom A_dom^T. The
/// projected form (default) is bit-consistent with the training forward even
/// when per-coordinate optimizers let B drift off its subspace; project=false
/// gives the plain unprojected sum, which coincides under SGD.
template <class S>
MatrixX<S> merge(const ConstrainedLinearLayer<S>& layer, int domain,
                 bool project = true) {
  if (layer.mode != LayerMode::both)
    throw DimensionError("merge: layer has no domain-specific adapter");
  if (domain < 0 || domain >= layer.num_domains())
    throw DimensionError("merge: domain index out of range");
  const LoraPair<S>& p = layer.specific[static_cast<std::size_t>(domain)];
  MatrixX<S> shared_dw = layer.shared.B * layer.shared.A.transpose();
  MatrixX<S> dom_dw = p.B * p.A.transpose();
  if (project && layer.constrained()) {
    shared_dw = layer.decomposition->P_m * shared_dw;
    dom_dw = layer.decomposition->P_n * dom_dw;
  }
  return layer.W + shared_dw + dom_dw;
}

/// Merged weight for any mode; shared-only layers collapse W + P_m B A^T.
template <class S>
MatrixX<S> merged_weight(const ConstrainedLinearLayer<S>& layer, int domain = -1,
                         bool project = true) {
  if (layer.mode == LayerMode::both) return merge(layer, domain, project);
  MatrixX<S> shared_dw = layer.shared.B * layer.shared.A.transpose();
  if (project && layer.constrained())
    shared_dw = layer.decomposition->P_m * shared_dw;
  return layer.W + shared_dw;
}

}  // namespace sslora
