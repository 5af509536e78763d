#pragma once

#include <string>
#include <vector>

#include "sslora/model.hpp"
#include "sslora/persist.hpp"

namespace sslora {

// Checkpoint = <prefix>.sslw (tensor container: frozen base, adapters, heads)
// + <prefix>.json (network spec and fingerprint). Decompositions are not
// stored: they are recomputed from W and the threshold on load, which is
// bit-identical because the SVD (including its sign convention) is
// deterministic.

std::string network_spec_json(Index input_dim, Index hidden_dim, Index num_blocks,
                              Index num_classes, Index num_domains,
                              const std::string& structure, Index rank,
                              double threshold, bool constrained,
                              const std::string& init, double init_std,
                              const std::string& dtype, std::uint64_t fingerprint);

struct ParsedNetworkSpec {
  Index input_dim, hidden_dim, num_blocks, num_classes, num_domains, rank;
  double threshold, init_std;
  bool constrained;
  std::string structure, init, dtype;
  std::uint64_t fingerprint;
};

ParsedNetworkSpec parse_network_spec_json(const std::string& text);

template <class S>
TensorContainer container_from_net(const MultiDomainNet<S>& net) {
  TensorContainer c;
  for (Index l = 0; l < net.num_layers(); ++l) {
    const auto& layer = net.layers[static_cast<std::size_t>(l)];
    const std::string base = "layer" + std::to_string(l);
    c.put<S>(base + ".W", layer.W);
    c.put<S>(base + ".shared.A", layer.shared.A);
    c.put<S>(base + ".shared.B", layer.shared.B);
    for (std::size_t j = 0; j < layer.specific.size(); ++j) {
      const std::string dom = base + ".dom" + std::to_string(j);
      c.put<S>(dom + ".A", layer.specific[j].A);
      c.put<S>(dom + ".B", layer.specific[j].B);
    }
  }
  for (std::size_t j = 0; j < net.heads.size(); ++j) {
    const std::string base = "head" + std::to_string(j);
    c.put<S>(base + ".W", net.heads[j].W);
    c.put<S>(base + ".b", net.heads[j].b);
  }
  return c;
}

template <class S>
void save_checkpoint(const MultiDomainNet<S>& net, const std::string& prefix) {
  save_container(container_from_net(net), prefix + ".sslw");
  const NetworkSpec<S>& sp = net.spec;
  write_text_atomic(
      prefix + ".json",
      network_spec_json(sp.input_dim, sp.hidden_dim, sp.num_blocks, sp.num_classes,
                        sp.num_domains, structure_name(sp.structure), sp.rank,
                        static_cast<double>(sp.threshold), sp.constrained,
                        sp.init == InitScheme::gaussian ? "gaussian" : "zero_b",
                        sp.init_std, sizeof(S) == 4 ? "f32" : "f64",
                        net.base_fingerprint));
}

template <class S>
MultiDomainNet<S> load_checkpoint(const std::string& prefix) {
  const ParsedNetworkSpec p = parse_network_spec_json(read_text(prefix + ".json"));
  const TensorContainer c = load_container(prefix + ".sslw");

  MultiDomainNet<S> net;
  net.spec.input_dim = p.input_dim;
  net.spec.hidden_dim = p.hidden_dim;
  net.spec.num_blocks = p.num_blocks;
  net.spec.num_classes = p.num_classes;
  net.spec.num_domains = p.num_domains;
  net.spec.structure = structure_from_name(p.structure);
  net.spec.rank = p.rank;
  net.spec.threshold = static_cast<S>(p.threshold);
  net.spec.constrained = p.constrained;
  net.spec.init = p.init == "zero_b" ? InitScheme::zero_b : InitScheme::gaussian;
  net.spec.init_std = p.init_std;

  const auto modes = layer_modes(net.spec);
  for (Index l = 0; l < net.spec.num_layers(); ++l) {
    const std::string base = "layer" + std::to_string(l);
    ConstrainedLinearLayer<S> layer;
    layer.W = c.get<S>(base + ".W");
    layer.mode = modes[static_cast<std::size_t>(l)];
    if (net.spec.constrained)
      layer.decomposition = decompose<S>(layer.W, net.spec.threshold);
    layer.shared.A = c.get<S>(base + ".shared.A");
    layer.shared.B = c.get<S>(base + ".shared.B");
    if (layer.mode == LayerMode::both) {
      layer.specific.resize(static_cast<std::size_t>(net.spec.num_domains));
      for (std::size_t j = 0; j < layer.specific.size(); ++j) {
        const std::string dom = base + ".dom" + std::to_string(j);
        layer.specific[j].A = c.get<S>(dom + ".A");
        layer.specific[j].B = c.get<S>(dom + ".B");
      }
    }
    net.layers.push_back(std::move(layer));
  }
  for (Index j = 0; j < net.spec.num_domains; ++j) {
    const std::string base = "head" + std::to_string(j);
    Head<S> head;
    head.W = c.get<S>(base + ".W");
    head.b = c.get<S>(base + ".b");
    net.heads.push_back(std::move(head));
  }
  net.base_fingerprint = fingerprint_base(net.layers);
  if (sizeof(S) == 8 && p.dtype == "f64" && net.base_fingerprint != p.fingerprint)
    throw PersistError(PersistCode::bad_header,
                       "checkpoint fingerprint mismatch (corrupt or edited base)");
  return net;
}

}  // namespace sslora
