// sslora: subspace-separated multi-domain LoRA on a frozen MLP base.
//
// Subcommands: gen-data, pretrain, decompose, train, eval, analyze.
// Exit codes: 0 success, 1 user error, 2 numerical failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <iostream>
#include <regex>
#include <string>

#include "sslora/analysis.hpp"
#include "sslora/checkpoint.hpp"
#include "sslora/data.hpp"
#include "sslora/train.hpp"

using namespace sslora;
using nlohmann::json;

namespace {

json load_config(const std::string& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
}

json section(const json& cfg, const std::string& name) {
  if (!cfg.contains(name)) return json::object();
  if (!cfg.at(name).is_object())
    throw ConfigError("config: section '" + name + "' must be an object");
  return cfg.at(name);
}

DomainDatasetSpec data_spec_from(const json& cfg) {
  const json d = section(cfg, "data");
  DomainDatasetSpec spec;
  spec.num_domains = d.value("domains", spec.num_domains);
  spec.num_classes = d.value("classes", spec.num_classes);
  spec.input_dim = d.value("input_dim", spec.input_dim);
  spec.n_train_per_class = d.value("n_train_per_class", spec.n_train_per_class);
  spec.n_val_per_class = d.value("n_val_per_class", spec.n_val_per_class);
  spec.noise_std = d.value("noise_std", spec.noise_std);
  spec.mean_scale = d.value("mean_scale", spec.mean_scale);
  spec.bias_std = d.value("bias_std", spec.bias_std);
  spec.seed = d.value("seed", cfg.value("seed", spec.seed));
  return spec;
}

template <class S>
NetworkSpec<S> model_spec_from(const json& cfg, const MultiDomainDataset& data) {
  const json m = section(cfg, "model");
  NetworkSpec<S> spec;
  spec.input_dim = data.spec.input_dim;
  spec.num_classes = data.spec.num_classes;
  spec.num_domains = data.spec.num_domains;
  spec.hidden_dim = m.value("hidden_dim", 64);
  spec.num_blocks = m.value("num_blocks", 2);
  spec.structure = structure_from_name(m.value("structure", "upper_heavy"));
  spec.rank = m.value("rank", 8);
  spec.threshold = static_cast<S>(m.value("threshold", 0.95));
  spec.constrained = m.value("constrained", true);
  const std::string init = m.value("init", "gaussian");
  if (init != "gaussian" && init != "zero_b")
    throw ConfigError("config: model.init must be gaussian or zero_b");
  spec.init = init == "zero_b" ? InitScheme::zero_b : InitScheme::gaussian;
  spec.init_std = m.value("init_std", 0.02);
  return spec;
}

template <class S>
TrainConfig<S> train_config_from(const json& cfg) {
  const json t = section(cfg, "train");
  TrainConfig<S> out;
  out.lr = static_cast<S>(t.value("lr", 1e-4));
  out.batch_size = t.value("batch_size", 8);
  out.max_steps = t.value("max_steps", 2000L);
  out.optimizer = optimizer_from_name(t.value("optimizer", "adamw"));
  out.adamw.beta1 = static_cast<S>(t.value("beta1", 0.9));
  out.adamw.beta2 = static_cast<S>(t.value("beta2", 0.999));
  out.adamw.eps = static_cast<S>(t.value("eps", 1e-8));
  out.weight_decay = static_cast<S>(t.value("weight_decay", 0.01));
  out.gamma = static_cast<S>(t.value("gamma", 0.1));
  out.milestones = t.contains("milestones")
                       ? t.at("milestones").get<std::vector<long>>()
                       : default_milestones(out.max_steps);
  out.lambda1 = static_cast<S>(t.value("lambda1", 1.0));
  out.lambda2 = static_cast<S>(t.value("lambda2", 1e-7));
  out.seed = cfg.value("seed", std::uint64_t{0});
  out.reproject_every_step = t.value("reproject_every_step", false);
  out.eval_every = t.value("eval_every", 500L);
  return out;
}

MatrixX<double> pooled_features(const MultiDomainDataset& data,
                                std::vector<int>& labels) {
  Index total = 0;
  for (const auto& split : data.train) total += split.size();
  MatrixX<double> pooled(data.spec.input_dim, total);
  labels.clear();
  Index col = 0;
  for (const auto& split : data.train) {
    pooled.middleCols(col, split.size()) = split.x;
    labels.insert(labels.end(), split.labels.begin(), split.labels.end());
    col += split.size();
  }
  return pooled;
}

template <class S>
std::vector<MatrixX<S>> base_weights_from_container(const TensorContainer& c,
                                                    const NetworkSpec<S>& spec) {
  std::vector<MatrixX<S>> ws;
  for (Index l = 0; l < spec.num_layers(); ++l) {
    const std::string name = "layer" + std::to_string(l) + ".W";
    if (!c.contains(name))
      throw ConfigError("base weights: missing tensor '" + name +
                        "' (wrong num_blocks?)");
    ws.push_back(c.get<S>(name));
  }
  return ws;
}

int cmd_gen_data(const std::string& config_path, const std::string& out_dir) {
  const json cfg = load_config(config_path);
  DomainDatasetSpec spec = data_spec_from(cfg);
  MultiDomainDataset ds = generate(spec);
  save_dataset(ds, out_dir);
  std::cout << "wrote " << out_dir << " (" << spec.num_domains << " domains, "
            << spec.num_classes << " classes, input_dim " << spec.input_dim << ")\n";
  return 0;
}

template <class S>
int cmd_pretrain(const json& cfg, const std::string& data_dir, const std::string& out) {
  const MultiDomainDataset data = load_dataset(data_dir);
  const NetworkSpec<S> spec = model_spec_from<S>(cfg, data);
  const json p = section(cfg, "pretrain");
  std::vector<int> labels;
  const MatrixX<double> pooled = pooled_features(data, labels);
  const auto weights = pretrain_base<S>(
      spec, pooled.template cast<S>(), labels, p.value("epochs", 30),
      static_cast<S>(p.value("lr", 1e-3)),
      derive_seed(cfg.value("seed", std::uint64_t{0}), 11), p.value("batch_size", 32));
  TensorContainer c;
  for (std::size_t l = 0; l < weights.size(); ++l)
    c.put<S>("layer" + std::to_string(l) + ".W", weights[l]);
  save_container(c, out);
  std::cout << "wrote " << out << " (" << weights.size() << " layers)\n";
  return 0;
}

int cmd_decompose(const std::string& weights_path, double threshold,
                  const std::string& out_prefix) {
  const TensorContainer in = load_container(weights_path);
  TensorContainer out;
  json summary = json::array();
  const std::regex layer_re("^layer([0-9]+)\\.W$");
  int found = 0;
  for (const auto& [name, tensor] : in.tensors) {
    std::smatch m;
    if (!std::regex_match(name, m, layer_re)) continue;
    ++found;
    const MatrixX<double> w = in.get<double>(name);
    const SubspaceDecomposition<double> dec = decompose<double>(w, threshold);
    const std::string base = "layer" + m[1].str();
    out.put<double>(base + ".U_m", dec.U_m);
    out.put<double>(base + ".U_n", dec.U_n);
    out.put<double>(base + ".Sigma_m", MatrixX<double>(dec.Sigma_m));
    out.put<double>(base + ".V_m", dec.V_m);
    out.put<double>(base + ".V_n", dec.V_n);
    out.put<double>(base + ".P_m", dec.P_m);
    out.put<double>(base + ".P_n", dec.P_n);
    summary.push_back({{"layer", name},
                       {"d", w.rows()},
                       {"dprime", w.cols()},
                       {"k", dec.k},
                       {"s", dec.s},
                       {"threshold", threshold}});
  }
  if (found == 0)
    throw ConfigError("decompose: no layer{i}.W tensors in " + weights_path);
  save_container(out, out_prefix + ".sslw");
  write_text_atomic(out_prefix + ".json", summary.dump(2) + "\n");
  std::cout << "wrote " << out_prefix << ".sslw and " << out_prefix << ".json ("
            << found << " layers)\n";
  return 0;
}

template <class S>
int cmd_train(const json& cfg, const std::string& data_dir,
              const std::string& base_path, const std::string& out_prefix,
              const std::string& resume) {
  const MultiDomainDataset data = load_dataset(data_dir);
  const TrainConfig<S> tcfg = train_config_from<S>(cfg);

  MultiDomainNet<S> net;
  if (!resume.empty()) {
    net = load_checkpoint<S>(resume);
  } else {
    if (base_path.empty())
      throw ConfigError("train: either --base or --resume is required");
    const NetworkSpec<S> spec = model_spec_from<S>(cfg, data);
    const TensorContainer base = load_container(base_path);
    RandomSource rng = seeded_rng(derive_seed(tcfg.seed, 3));
    net = build(spec, base_weights_from_container<S>(base, spec), rng);
  }

  const TrainResult<S> result = train_loop(net, data, tcfg, out_prefix);
  std::cout << "trained " << result.steps_run << " steps; final val accuracy:";
  for (double acc : result.final_val_accuracy) std::cout << " " << acc;
  std::cout << "\nwrote " << out_prefix << ".sslw, " << out_prefix << ".json, "
            << out_prefix << ".metrics.csv\n";
  return 0;
}

template <class S>
int cmd_eval(const std::string& ckpt_prefix, const std::string& data_dir, int domain,
             const std::string& split_name) {
  const MultiDomainDataset data = load_dataset(data_dir);
  const MultiDomainNet<S> net = load_checkpoint<S>(ckpt_prefix);
  if (static_cast<int>(net.spec.num_domains) != data.spec.num_domains)
    throw ConfigError("eval: checkpoint and dataset disagree on the domain count");
  const auto& splits = split_name == "train" ? data.train : data.val;
  json out;
  for (int d = 0; d < data.spec.num_domains; ++d) {
    if (domain >= 0 && d != domain) continue;
    const EvalResult ev = evaluate(net, splits[static_cast<std::size_t>(d)], d);
    out["domain" + std::to_string(d)] = {{"accuracy", ev.accuracy},
                                         {"mean_ce", ev.mean_ce}};
  }
  std::cout << out.dump(2) << "\n";
  return 0;
}

template <class S>
int cmd_analyze(const std::string& ckpt_prefix, const std::string& out_path,
                bool use_delta_w) {
  const MultiDomainNet<S> net = load_checkpoint<S>(ckpt_prefix);
  const AdapterReport rep = report(net, use_delta_w);
  write_text_atomic(out_path, report_csv(rep));
  const std::string pairs_path =
      (std::filesystem::path(out_path).parent_path() / "pairs.csv").string();
  write_text_atomic(pairs_path, pairs_csv(rep));
  std::cout << "wrote " << out_path << " and " << pairs_path << " ("
            << rep.rows.size() << " rows, " << rep.pairs.size() << " pairs)\n";
  return 0;
}

std::string checkpoint_dtype(const std::string& prefix) {
  return parse_network_spec_json(read_text(prefix + ".json")).dtype;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"subspace-separated multi-domain LoRA"};
  app.require_subcommand(1);

  std::string config_path, data_dir, out, weights, base, resume, ckpt;
  std::string split_name = "val";
  double threshold = 0.95;
  int domain = -1;
  bool use_delta_w = false;

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic multi-domain dataset");
  gen->add_option("--config", config_path, "config json")->required();
  gen->add_option("--out", out, "output dataset directory")->required();

  auto* pre = app.add_subcommand("pretrain", "train the plain base network on pooled data");
  pre->add_option("--config", config_path, "config json")->required();
  pre->add_option("--data", data_dir, "dataset directory")->required();
  pre->add_option("--out", out, "output weights file (.sslw)")->required();

  auto* dec = app.add_subcommand("decompose", "truncated-SVD split of frozen weights");
  dec->add_option("--weights", weights, "weights container (.sslw)")->required();
  dec->add_option("--threshold", threshold, "cumulative contribution threshold");
  dec->add_option("--out", out, "output prefix (writes .sslw and .json)")->required();

  auto* trn = app.add_subcommand("train", "multi-domain constrained LoRA training");
  trn->add_option("--config", config_path, "config json")->required();
  trn->add_option("--data", data_dir, "dataset directory")->required();
  trn->add_option("--base", base, "pretrained base weights (.sslw)");
  trn->add_option("--out", out, "checkpoint/metrics prefix")->required();
  trn->add_option("--resume", resume, "checkpoint prefix to continue from");

  auto* evl = app.add_subcommand("eval", "merged-weight evaluation of a checkpoint");
  evl->add_option("--ckpt", ckpt, "checkpoint prefix")->required();
  evl->add_option("--data", data_dir, "dataset directory")->required();
  evl->add_option("--domain", domain, "restrict to one domain");
  evl->add_option("--split", split_name, "val or train")
      ->check(CLI::IsMember({"val", "train"}));

  auto* ana = app.add_subcommand("analyze", "adapter contribution curves and distances");
  ana->add_option("--ckpt", ckpt, "checkpoint prefix")->required();
  ana->add_option("--out", out, "report csv path (pairs.csv lands next to it)")
      ->required();
  ana->add_flag("--deltaw", use_delta_w, "analyze B*A^T instead of B");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(config_path, out);
    if (pre->parsed()) {
      const json cfg = load_config(config_path);
      if (cfg.value("dtype", "f64") == "f32")
        return cmd_pretrain<float>(cfg, data_dir, out);
      return cmd_pretrain<double>(cfg, data_dir, out);
    }
    if (dec->parsed()) return cmd_decompose(weights, threshold, out);
    if (trn->parsed()) {
      const json cfg = load_config(config_path);
      if (cfg.value("dtype", "f64") == "f32")
        return cmd_train<float>(cfg, data_dir, base, out, resume);
      return cmd_train<double>(cfg, data_dir, base, out, resume);
    }
    if (evl->parsed()) {
      if (checkpoint_dtype(ckpt) == "f32")
        return cmd_eval<float>(ckpt, data_dir, domain, split_name);
      return cmd_eval<double>(ckpt, data_dir, domain, split_name);
    }
    if (ana->parsed()) {
      if (checkpoint_dtype(ckpt) == "f32")
        return cmd_analyze<float>(ckpt, out, use_delta_w);
      return cmd_analyze<double>(ckpt, out, use_delta_w);
    }
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    if (!e.last_good_checkpoint().empty())
      std::cerr << "last good checkpoint: " << e.last_good_checkpoint() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
