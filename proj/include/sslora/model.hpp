#pragma once

#include <numeric>
#include <string>
#include <vector>

#include "sslora/lora.hpp"
#include "sslora/losses.hpp"
#include "sslora/optim.hpp"

namespace sslora {

/// LoRA insertion layout. A block is two linear layers; upper_heavy gives
/// both adapter kinds to the final block only, all_flat to every layer.
enum class Structure { upper_heavy, all_flat };

inline const char* structure_name(Structure s) {
  return s == Structure::upper_heavy ? "upper_heavy" : "all_flat";
}

inline Structure structure_from_name(const std::string& s) {
  if (s == "upper_heavy") return Structure::upper_heavy;
  if (s == "all_flat") return Structure::all_flat;
  throw ConfigError("unknown structure '" + s + "'");
}

template <class S>
struct NetworkSpec {
  Index input_dim = 64;
  Index hidden_dim = 64;
  Index num_blocks = 2;  // one block = two linear layers (GELU after each)
  Index num_classes = 5;
  Index num_domains = 3;
  Structure structure = Structure::upper_heavy;
  Index rank = 8;
  S threshold = S(0.95);
  bool constrained = true;  // false: identity projections, no decomposition
  InitScheme init = InitScheme::gaussian;
  double init_std = 0.02;

  Index num_layers() const { return 2 * num_blocks; }
};

template <class S>
std::vector<LayerMode> layer_modes(const NetworkSpec<S>& spec) {
  std::vector<LayerMode> modes(static_cast<std::size_t>(spec.num_layers()),
                               LayerMode::shared_only);
  for (Index l = 0; l < spec.num_layers(); ++l) {
    const bool last_block = l >= spec.num_layers() - 2;
    if (spec.structure == Structure::all_flat || last_block)
      modes[static_cast<std::size_t>(l)] = LayerMode::both;
  }
  return modes;
}

template <class S>
std::vector<LayerMode> block_modes(const NetworkSpec<S>& spec) {
  std::vector<LayerMode> modes;
  const auto per_layer = layer_modes(spec);
  for (Index b = 0; b < spec.num_blocks; ++b)
    modes.push_back(per_layer[static_cast<std::size_t>(2 * b)]);
  return modes;
}

/// Per-domain classifier head: logits = W f + b.
template <class S>
struct Head {
  MatrixX<S> W;  // C x d
  MatrixX<S> b;  // C x 1
};

template <class S>
struct MultiDomainNet {
  NetworkSpec<S> spec;
  std::vector<ConstrainedLinearLayer<S>> layers;
  std::vector<Head<S>> heads;
  std::uint64_t base_fingerprint = 0;

  Index num_layers() const { return static_cast<Index>(layers.size()); }
};

template <class S>
std::uint64_t fingerprint_base(const std::vector<ConstrainedLinearLayer<S>>& layers) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& layer : layers) h = fnv1a64(layer.W, h);
  return h;
}

template <class S>
MatrixX<S> gelu(const MatrixX<S>& x) {
  return x.unaryExpr([](S v) {
    return static_cast<S>(0.5 * static_cast<double>(v) *
                          (1.0 + std::erf(static_cast<double>(v) * M_SQRT1_2)));
  });
}

template <class S>
MatrixX<S> gelu_grad(const MatrixX<S>& x) {
  return x.unaryExpr([](S v) {
    const double t = static_cast<double>(v);
    const double cdf = 0.5 * (1.0 + std::erf(t * M_SQRT1_2));
    const double pdf = std::exp(-0.5 * t * t) / std::sqrt(2.0 * M_PI);
    return static_cast<S>(cdf + t * pdf);
  });
}

/// Assemble the net: freeze the base weights, decompose each at the spec
/// threshold (constrained mode), draw projected adapters, zero the heads.
template <class S>
MultiDomainNet<S> build(const NetworkSpec<S>& spec,
                        const std::vector<MatrixX<S>>& base_weights,
                        RandomSource& rng) {
  if (static_cast<Index>(base_weights.size()) != spec.num_layers())
    throw ConfigError("build: expected " + std::to_string(spec.num_layers()) +
                      " base weights, got " + std::to_string(base_weights.size()));
  MultiDomainNet<S> net;
  net.spec = spec;
  const auto modes = layer_modes(spec);
  for (Index l = 0; l < spec.num_layers(); ++l) {
    const Index want_in = l == 0 ? spec.input_dim : spec.hidden_dim;
    const MatrixX<S>& w = base_weights[static_cast<std::size_t>(l)];
    if (w.rows() != spec.hidden_dim || w.cols() != want_in)
      throw ConfigError("build: layer " + std::to_string(l) + " weight shape mismatch");
    ConstrainedLinearLayer<S> layer;
    layer.W = w;
    layer.mode = modes[static_cast<std::size_t>(l)];
    if (spec.constrained) layer.decomposition = decompose<S>(w, spec.threshold);
    try {
      init_projected(rng, layer, spec.rank, spec.num_domains, spec.init, spec.init_std);
    } catch (const ConfigError& e) {
      throw ConfigError("layer " + std::to_string(l) + ": " + e.what());
    }
    net.layers.push_back(std::move(layer));
  }
  for (Index dmn = 0; dmn < spec.num_domains; ++dmn) {
    Head<S> head;
    head.W = MatrixX<S>::Zero(spec.num_classes, spec.hidden_dim);
    head.b = MatrixX<S>::Zero(spec.num_classes, 1);
    net.heads.push_back(std::move(head));
  }
  net.base_fingerprint = fingerprint_base(net.layers);
  return net;
}

template <class S>
long trainable_param_count(const MultiDomainNet<S>& net) {
  long count = 0;
  for (const auto& layer : net.layers) {
    const long pair = static_cast<long>(layer.shared.A.size() + layer.shared.B.size());
    count += pair;
    if (layer.mode == LayerMode::both)
      count += pair * static_cast<long>(layer.specific.size());
  }
  for (const auto& head : net.heads)
    count += static_cast<long>(head.W.size() + head.b.size());
  return count;
}

/// Activations recorded by the forward pass for backprop.
template <class S>
struct ForwardTape {
  std::vector<MatrixX<S>> inputs;   // input to each layer
  std::vector<MatrixX<S>> preacts;  // layer output before GELU
  MatrixX<S> features;              // input to the head
};

template <class S>
MatrixX<S> net_forward(const MultiDomainNet<S>& net, const MatrixX<S>& x, int domain,
                       ForwardTape<S>* tape = nullptr) {
  if (domain < 0 || domain >= net.spec.num_domains)
    throw DimensionError("net_forward: domain out of range");
  MatrixX<S> z = x;
  for (const auto& layer : net.layers) {
    if (tape) tape->inputs.push_back(z);
    const MatrixX<S> a =
        forward(layer, z, layer.mode == LayerMode::both ? domain : -1);
    if (tape) tape->preacts.push_back(a);
    z = gelu(a);
  }
  if (tape) tape->features = z;
  const Head<S>& head = net.heads[static_cast<std::size_t>(domain)];
  return (head.W * z).colwise() + VectorX<S>(head.b.col(0));
}

template <class S>
struct NetGradients {
  std::vector<LayerGradients<S>> layers;  // per layer; dx fields chained already
  MatrixX<S> head_dW;
  MatrixX<S> head_db;
};

/// Backprop from dL/dlogits. The frozen W receives no gradient by
/// construction; adapter gradients come out of the projected layer backward.
template <class S>
NetGradients<S> net_backward(const MultiDomainNet<S>& net, const ForwardTape<S>& tape,
                             int domain, const MatrixX<S>& dlogits) {
  const Head<S>& head = net.heads[static_cast<std::size_t>(domain)];
  NetGradients<S> out;
  out.head_dW = dlogits * tape.features.transpose();
  out.head_db = dlogits.rowwise().sum();
  MatrixX<S> dz = head.W.transpose() * dlogits;

  out.layers.resize(net.layers.size());
  for (Index l = net.num_layers() - 1; l >= 0; --l) {
    const auto& layer = net.layers[static_cast<std::size_t>(l)];
    const MatrixX<S> da =
        dz.cwiseProduct(gelu_grad(tape.preacts[static_cast<std::size_t>(l)]));
    LayerGradients<S> g =
        backward(layer, tape.inputs[static_cast<std::size_t>(l)],
                 layer.mode == LayerMode::both ? domain : -1, da);
    dz = g.dx;
    out.layers[static_cast<std::size_t>(l)] = std::move(g);
  }
  return out;
}

/// Fit a fully-trainable plain MLP of the spec's shape on pooled data and
/// return its weights, to be frozen as the base. Stands in for a large-scale
/// pre-training run so that col(W) carries real structure.
template <class S>
std::vector<MatrixX<S>> pretrain_base(const NetworkSpec<S>& spec, const MatrixX<S>& x,
                                      const std::vector<int>& labels, int epochs,
                                      S lr, std::uint64_t seed, Index batch_size = 32) {
  if (x.cols() != static_cast<Index>(labels.size()))
    throw DimensionError("pretrain_base: labels/samples mismatch");
  RandomSource rng = seeded_rng(seed);
  std::vector<MatrixX<S>> weights;
  for (Index l = 0; l < spec.num_layers(); ++l) {
    const Index in = l == 0 ? spec.input_dim : spec.hidden_dim;
    const double he_std = std::sqrt(2.0 / static_cast<double>(in));
    weights.push_back(gaussian_matrix<S>(rng, spec.hidden_dim, in, he_std));
  }
  MatrixX<S> head_w = MatrixX<S>::Zero(spec.num_classes, spec.hidden_dim);
  MatrixX<S> head_b = MatrixX<S>::Zero(spec.num_classes, 1);
  if (epochs <= 0) return weights;

  AdamWParams<S> hp;
  std::vector<ParamState<S>> wstate(weights.size());
  ParamState<S> hw_state, hb_state;
  std::vector<std::size_t> order(static_cast<std::size_t>(x.cols()));
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (int epoch = 0; epoch < epochs; ++epoch) {
    deterministic_shuffle(order, rng);
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(batch_size)) {
      const std::size_t count =
          std::min(static_cast<std::size_t>(batch_size), order.size() - start);
      MatrixX<S> xb(x.rows(), static_cast<Index>(count));
      std::vector<int> yb(count);
      for (std::size_t i = 0; i < count; ++i) {
        xb.col(static_cast<Index>(i)) = x.col(static_cast<Index>(order[start + i]));
        yb[i] = labels[order[start + i]];
      }

      std::vector<MatrixX<S>> inputs, preacts;
      MatrixX<S> z = xb;
      for (const auto& w : weights) {
        inputs.push_back(z);
        preacts.push_back(w * z);
        z = gelu(preacts.back());
      }
      const MatrixX<S> logits = (head_w * z).colwise() + VectorX<S>(head_b.col(0));
      auto ce = cross_entropy<S>(logits, yb);
      if (!std::isfinite(static_cast<double>(ce.loss)))
        throw NumericalError("pretrain_base: loss diverged (epoch " +
                             std::to_string(epoch) + ")");

      MatrixX<S> dhw = ce.dlogits * z.transpose();
      MatrixX<S> dhb = ce.dlogits.rowwise().sum();
      MatrixX<S> dz = head_w.transpose() * ce.dlogits;
      std::vector<MatrixX<S>> dws(weights.size());
      for (Index l = static_cast<Index>(weights.size()) - 1; l >= 0; --l) {
        const MatrixX<S> da =
            dz.cwiseProduct(gelu_grad(preacts[static_cast<std::size_t>(l)]));
        dws[static_cast<std::size_t>(l)] =
            da * inputs[static_cast<std::size_t>(l)].transpose();
        dz = weights[static_cast<std::size_t>(l)].transpose() * da;
      }
      for (std::size_t l = 0; l < weights.size(); ++l)
        adamw_update(weights[l], dws[l], wstate[l], lr, S(0), hp);
      adamw_update(head_w, dhw, hw_state, lr, S(0), hp);
      adamw_update(head_b, dhb, hb_state, lr, S(0), hp);
    }
  }
  return weights;
}

}  // namespace sslora
