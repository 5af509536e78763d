#pragma once

#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "sslora/checkpoint.hpp"
#include "sslora/data.hpp"
#include "sslora/model.hpp"

namespace sslora {

enum class OptimizerKind { sgd, adamw };

inline const char* optimizer_name(OptimizerKind k) {
  return k == OptimizerKind::sgd ? "sgd" : "adamw";
}

inline OptimizerKind optimizer_from_name(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adamw") return OptimizerKind::adamw;
  throw ConfigError("unknown optimizer '" + s + "'");
}

template <class S>
struct TrainConfig {
  S lr = S(1e-4);
  Index batch_size = 8;
  long max_steps = 2000;
  OptimizerKind optimizer = OptimizerKind::adamw;
  AdamWParams<S> adamw;       // beta1 0.9, beta2 0.999, eps 1e-8
  S weight_decay = S(0.01);   // decoupled; heads and A factors only
  std::vector<long> milestones;
  S gamma = S(0.1);
  S lambda1 = S(1);
  S lambda2 = S(1e-7);
  std::uint64_t seed = 0;
  bool reproject_every_step = false;
  long eval_every = 500;
};

/// Default when a config names no milestones: decay at 60% and 85%.
inline std::vector<long> default_milestones(long max_steps) {
  return {static_cast<long>(0.60 * static_cast<double>(max_steps)),
          static_cast<long>(0.85 * static_cast<double>(max_steps))};
}

template <class S>
void validate(const TrainConfig<S>& cfg) {
  if (!(cfg.lr > S(0))) throw ConfigError("train config: lr must be > 0");
  if (cfg.batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
  if (cfg.max_steps < 0) throw ConfigError("train config: max_steps must be >= 0");
  if (cfg.eval_every < 1) throw ConfigError("train config: eval_every must be >= 1");
  for (std::size_t i = 1; i < cfg.milestones.size(); ++i)
    if (cfg.milestones[i] <= cfg.milestones[i - 1])
      throw ConfigError("train config: milestones must be strictly increasing");
}

template <class S>
struct TrainState {
  explicit TrainState(std::uint64_t seed) : rng(seed) {}

  long step = 0;
  S current_lr = S(0);
  std::map<std::string, ParamState<S>> moments;
  RandomSource rng;  // batching stream
  std::vector<std::vector<std::size_t>> order;  // per-domain sample permutation
  std::vector<std::size_t> cursor;              // per-domain position
  long ss_degenerate_pairs = 0;
};

template <class S>
S schedule_lr(const TrainState<S>& state, const TrainConfig<S>& cfg) {
  return multistep_lr(cfg.lr, cfg.milestones, cfg.gamma, state.step);
}

template <class S>
struct Batch {
  int domain = 0;
  MatrixX<S> x;
  std::vector<int> labels;
};

namespace detail_train {

/// Both-mode layer indices, the regularizers' scope.
template <class S>
std::vector<Index> both_layers(const MultiDomainNet<S>& net) {
  std::vector<Index> out;
  for (Index l = 0; l < net.num_layers(); ++l)
    if (net.layers[static_cast<std::size_t>(l)].mode == LayerMode::both)
      out.push_back(l);
  return out;
}

template <class S>
struct Update {
  std::string name;
  MatrixX<S>* param;
  MatrixX<S> grad;
  bool decay;
};

}  // namespace detail_train

/// One optimizer step on one domain batch.
/// Forward, CE, regularizers over both-mode layers, backward, update:
/// task gradients reach the shared adapters, the batch domain's adapters and
/// head; regularizer gradients reach every domain's B in both-mode layers.
/// Parameters without a gradient this step are untouched (their AdamW moments
/// and bias-correction counters do not advance).
template <class S>
LossBreakdown<S> step(MultiDomainNet<S>& net, const Batch<S>& batch,
                      TrainState<S>& state, const TrainConfig<S>& cfg) {
  const int dom = batch.domain;
  if (dom < 0 || dom >= net.spec.num_domains)
    throw DimensionError("step: batch domain out of range");

  ForwardTape<S> tape;
  const MatrixX<S> logits = net_forward(net, batch.x, dom, &tape);
  const auto ce = cross_entropy<S>(logits, batch.labels);

  // Regularizers, summed over both-mode layers.
  const auto reg_layers = detail_train::both_layers(net);
  S orth_total = S(0), ss_total = S(0);
  std::vector<RegularizerResult<S>> orth_results, ss_results;
  for (Index l : reg_layers) {
    auto& layer = net.layers[static_cast<std::size_t>(l)];
    std::vector<const MatrixX<S>*> bs;
    for (const auto& p : layer.specific) bs.push_back(&p.B);
    auto orth = orth_loss<S>(bs);
    auto ss = ss_loss<S>(bs);
    orth_total += orth.loss;
    ss_total += ss.loss;
    state.ss_degenerate_pairs += ss.degenerate_pairs;
    orth_results.push_back(std::move(orth));
    ss_results.push_back(std::move(ss));
  }
  const LossBreakdown<S> breakdown =
      total_loss(ce.loss, orth_total, ss_total, cfg.lambda1, cfg.lambda2);
  if (!std::isfinite(static_cast<double>(breakdown.total)))
    throw NumericalError("step: loss is not finite", state.step);

  auto grads = net_backward(net, tape, dom, ce.dlogits);

  std::vector<detail_train::Update<S>> updates;
  for (Index l = 0; l < net.num_layers(); ++l) {
    auto& layer = net.layers[static_cast<std::size_t>(l)];
    auto& g = grads.layers[static_cast<std::size_t>(l)];
    const std::string base = "layer" + std::to_string(l);
    updates.push_back({base + ".shared.A", &layer.shared.A, std::move(g.dA), true});
    updates.push_back({base + ".shared.B", &layer.shared.B, std::move(g.dB), false});
    if (layer.mode == LayerMode::both) {
      auto& p = layer.specific[static_cast<std::size_t>(dom)];
      const std::string name = base + ".dom" + std::to_string(dom);
      updates.push_back({name + ".A", &p.A, std::move(g.dA_dom), true});
      updates.push_back({name + ".B", &p.B, std::move(g.dB_dom), false});
    }
  }
  auto& head = net.heads[static_cast<std::size_t>(dom)];
  const std::string head_base = "head" + std::to_string(dom);
  updates.push_back({head_base + ".W", &head.W, std::move(grads.head_dW), true});
  updates.push_back({head_base + ".b", &head.b, std::move(grads.head_db), true});

  // Fold the regularizer gradients in; inactive domains' B gain an update of
  // their own, the active domain's B accumulates onto its task gradient.
  if (cfg.lambda1 != S(0) || cfg.lambda2 != S(0)) {
    for (std::size_t r = 0; r < reg_layers.size(); ++r) {
      const Index l = reg_layers[r];
      auto& layer = net.layers[static_cast<std::size_t>(l)];
      for (std::size_t j = 0; j < layer.specific.size(); ++j) {
        MatrixX<S> reg_grad = cfg.lambda1 * orth_results[r].grads[j] +
                              cfg.lambda2 * ss_results[r].grads[j];
        const std::string name =
            "layer" + std::to_string(l) + ".dom" + std::to_string(j) + ".B";
        bool merged = false;
        for (auto& u : updates) {
          if (u.name == name) {
            u.grad += reg_grad;
            merged = true;
            break;
          }
        }
        if (!merged)
          updates.push_back({name, &layer.specific[j].B, std::move(reg_grad), false});
      }
    }
  }

  const S lr = schedule_lr(state, cfg);
  for (auto& u : updates) {
    if (cfg.optimizer == OptimizerKind::sgd) {
      sgd_update(*u.param, u.grad, lr);
    } else {
      adamw_update(*u.param, u.grad, state.moments[u.name], lr,
                   u.decay ? cfg.weight_decay : S(0), cfg.adamw);
    }
  }

  if (cfg.reproject_every_step) {
    for (auto& layer : net.layers) {
      if (!layer.constrained()) continue;
      layer.shared.B = layer.decomposition->P_m * layer.shared.B;
      for (auto& p : layer.specific) p.B = layer.decomposition->P_n * p.B;
    }
  }

  state.current_lr = lr;
  state.step += 1;
  return breakdown;
}

/// Merged-weight inference (the export path): collapse every layer to
/// W + P_m B A^T (+ P_n B_dom A_dom^T) and run plain matmuls.
template <class S>
MatrixX<S> merged_logits(const MultiDomainNet<S>& net, const MatrixX<S>& x,
                         int domain) {
  if (domain < 0 || domain >= net.spec.num_domains)
    throw DimensionError("merged_logits: domain out of range");
  MatrixX<S> z = x;
  for (const auto& layer : net.layers) {
    const MatrixX<S> w =
        merged_weight(layer, layer.mode == LayerMode::both ? domain : -1);
    z = gelu<S>(MatrixX<S>(w * z));
  }
  const Head<S>& head = net.heads[static_cast<std::size_t>(domain)];
  return (head.W * z).colwise() + VectorX<S>(head.b.col(0));
}

struct EvalResult {
  double accuracy = 0.0;
  double mean_ce = 0.0;
};

template <class S>
EvalResult evaluate(const MultiDomainNet<S>& net, const SplitData& split, int domain) {
  if (split.size() == 0) throw ConfigError("evaluate: empty eval set");
  const MatrixX<S> x = split.x.cast<S>();
  const MatrixX<S> logits = merged_logits(net, x, domain);
  const auto ce = cross_entropy<S>(logits, split.labels);
  int hits = 0;
  for (Index i = 0; i < logits.cols(); ++i) {
    Index arg;
    logits.col(i).maxCoeff(&arg);
    if (static_cast<int>(arg) == split.labels[static_cast<std::size_t>(i)]) ++hits;
  }
  return {static_cast<double>(hits) / static_cast<double>(logits.cols()),
          static_cast<double>(ce.loss)};
}

namespace detail_train {

inline void append_g17(std::string& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  out += buf;
}

}  // namespace detail_train

template <class S>
struct TrainResult {
  std::string metrics_csv;
  std::vector<double> final_val_accuracy;  // per domain
  long steps_run = 0;
  long ss_degenerate_pairs = 0;
};

/// Round-robin multi-domain training: step t draws from domain t mod D.
/// Per-domain batches walk a seeded permutation, reshuffled each epoch.
/// Writes one metrics row per step; validation columns are filled every
/// eval_every steps and on the last step. With a non-empty out_prefix the
/// metrics CSV and a checkpoint are written to <out_prefix>.metrics.csv /
/// .sslw / .json; on a NaN abort the last good snapshot is saved next to
/// them as <out_prefix>.lastgood.*.
template <class S>
TrainResult<S> train_loop(MultiDomainNet<S>& net, const MultiDomainDataset& data,
                          const TrainConfig<S>& cfg,
                          const std::string& out_prefix = {}) {
  validate(cfg);
  const int domains = static_cast<int>(net.spec.num_domains);
  if (static_cast<int>(data.train.size()) != domains)
    throw ConfigError("train_loop: dataset domain count does not match the net");
  for (const auto& split : data.train)
    if (split.size() == 0) throw ConfigError("train_loop: empty training set");

  TrainState<S> state(derive_seed(cfg.seed, 17));
  state.order.resize(static_cast<std::size_t>(domains));
  state.cursor.assign(static_cast<std::size_t>(domains), 0);
  for (int d = 0; d < domains; ++d) {
    auto& order = state.order[static_cast<std::size_t>(d)];
    order.resize(static_cast<std::size_t>(data.train[static_cast<std::size_t>(d)].size()));
    std::iota(order.begin(), order.end(), std::size_t{0});
    deterministic_shuffle(order, state.rng);
  }

  TrainResult<S> result;
  std::string& csv = result.metrics_csv;
  csv = "step,domain,ce,orth,ss,total,lr";
  for (int d = 0; d < domains; ++d) csv += ",val_acc_d" + std::to_string(d);
  csv += "\n";

  TensorContainer last_good = container_from_net(net);
  result.final_val_accuracy.assign(static_cast<std::size_t>(domains), 0.0);

  auto next_batch = [&](int dom) {
    const auto& split = data.train[static_cast<std::size_t>(dom)];
    auto& order = state.order[static_cast<std::size_t>(dom)];
    auto& cursor = state.cursor[static_cast<std::size_t>(dom)];
    Batch<S> batch;
    batch.domain = dom;
    batch.x.resize(split.x.rows(), cfg.batch_size);
    batch.labels.resize(static_cast<std::size_t>(cfg.batch_size));
    for (Index i = 0; i < cfg.batch_size; ++i) {
      if (cursor >= order.size()) {
        deterministic_shuffle(order, state.rng);
        cursor = 0;
      }
      const std::size_t idx = order[cursor++];
      batch.x.col(i) = split.x.col(static_cast<Index>(idx)).template cast<S>();
      batch.labels[static_cast<std::size_t>(i)] =
          split.labels[idx];
    }
    return batch;
  };

  for (long t = 0; t < cfg.max_steps; ++t) {
    const int dom = static_cast<int>(t % domains);
    const Batch<S> batch = next_batch(dom);
    LossBreakdown<S> loss;
    try {
      loss = step(net, batch, state, cfg);
    } catch (const NumericalError& e) {
      std::string path;
      if (!out_prefix.empty()) {
        path = out_prefix + ".lastgood";
        save_container(last_good, path + ".sslw");
      }
      throw NumericalError(std::string("train_loop: ") + e.what(), t, path);
    }

    csv += std::to_string(t) + "," + std::to_string(dom) + ",";
    detail_train::append_g17(csv, static_cast<double>(loss.ce));
    csv += ",";
    detail_train::append_g17(csv, static_cast<double>(loss.orth));
    csv += ",";
    detail_train::append_g17(csv, static_cast<double>(loss.ss));
    csv += ",";
    detail_train::append_g17(csv, static_cast<double>(loss.total));
    csv += ",";
    detail_train::append_g17(csv, static_cast<double>(state.current_lr));

    const bool eval_now = (t + 1) % cfg.eval_every == 0 || t + 1 == cfg.max_steps;
    if (eval_now) {
      for (int d = 0; d < domains; ++d) {
        const EvalResult ev = evaluate(net, data.val[static_cast<std::size_t>(d)], d);
        result.final_val_accuracy[static_cast<std::size_t>(d)] = ev.accuracy;
        csv += ",";
        detail_train::append_g17(csv, ev.accuracy);
      }
      last_good = container_from_net(net);
    } else {
      for (int d = 0; d < domains; ++d) csv += ",";
    }
    csv += "\n";
  }
  result.steps_run = cfg.max_steps;
  result.ss_degenerate_pairs = state.ss_degenerate_pairs;

  if (!out_prefix.empty()) {
    write_text_atomic(out_prefix + ".metrics.csv", csv);
    save_checkpoint(net, out_prefix);
  }
  return result;
}

}  // namespace sslora
