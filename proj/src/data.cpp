#include "sslora/data.hpp"

#include <json.hpp>

#include <cinttypes>
#include <cstring>
#include <filesystem>

#include "sslora/persist.hpp"

namespace sslora {

namespace {

using nlohmann::json;

}  // namespace

std::string dataset_manifest_json(const DomainDatasetSpec& spec) {
  json j;
  j["domains"] = spec.num_domains;
  j["classes"] = spec.num_classes;
  j["input_dim"] = spec.input_dim;
  j["n_train_per_class"] = spec.n_train_per_class;
  j["n_val_per_class"] = spec.n_val_per_class;
  j["noise_std"] = spec.noise_std;
  j["mean_scale"] = spec.mean_scale;
  j["bias_std"] = spec.bias_std;
  j["seed"] = spec.seed;
  j["counts"] = {{"train_per_domain", spec.n_train_per_class * spec.num_classes},
                 {"val_per_domain", spec.n_val_per_class * spec.num_classes}};
  return j.dump(2) + "\n";
}

std::string split_to_csv(int domain, const SplitData& split) {
  std::string out = "domain,label";
  for (Index f = 0; f < split.x.rows(); ++f) out += ",f" + std::to_string(f);
  out += "\n";
  char buf[64];
  for (Index i = 0; i < split.x.cols(); ++i) {
    std::snprintf(buf, sizeof(buf), "%d,%d", domain,
                  split.labels[static_cast<std::size_t>(i)]);
    out += buf;
    for (Index f = 0; f < split.x.rows(); ++f) {
      std::snprintf(buf, sizeof(buf), ",%.17g", split.x(f, i));
      out += buf;
    }
    out += "\n";
  }
  return out;
}

SplitData split_from_csv(const std::string& text, int expect_domain, int input_dim,
                         int num_classes) {
  std::string want_header = "domain,label";
  for (int f = 0; f < input_dim; ++f) want_header += ",f" + std::to_string(f);

  std::size_t pos = text.find('\n');
  if (pos == std::string::npos || text.substr(0, pos) != want_header)
    throw ConfigError("dataset csv: malformed header");

  std::vector<Eigen::VectorXd> cols;
  std::vector<int> labels;
  std::size_t line_start = pos + 1;
  while (line_start < text.size()) {
    std::size_t line_end = text.find('\n', line_start);
    if (line_end == std::string::npos) line_end = text.size();
    const std::string line = text.substr(line_start, line_end - line_start);
    line_start = line_end + 1;
    if (line.empty()) continue;

    const char* p = line.c_str();
    char* end = nullptr;
    const long dmn = std::strtol(p, &end, 10);
    if (end == p || *end != ',')
      throw ConfigError("dataset csv: malformed row");
    p = end + 1;
    const long label = std::strtol(p, &end, 10);
    if (end == p) throw ConfigError("dataset csv: malformed row");
    p = end;
    if (dmn != expect_domain) throw ConfigError("dataset csv: unexpected domain id");
    if (label < 0 || label >= num_classes)
      throw ConfigError("dataset csv: label out of range");

    Eigen::VectorXd v(input_dim);
    for (int f = 0; f < input_dim; ++f) {
      if (*p != ',') throw ConfigError("dataset csv: dimension mismatch");
      ++p;
      v[f] = std::strtod(p, &end);
      if (end == p) throw ConfigError("dataset csv: malformed feature");
      p = end;
    }
    if (*p != '\0') throw ConfigError("dataset csv: dimension mismatch");
    if (!v.allFinite()) throw ConfigError("dataset csv: non-finite feature");
    cols.push_back(std::move(v));
    labels.push_back(static_cast<int>(label));
  }

  SplitData split;
  split.x.resize(input_dim, static_cast<Index>(cols.size()));
  for (std::size_t i = 0; i < cols.size(); ++i)
    split.x.col(static_cast<Index>(i)) = cols[i];
  split.labels = std::move(labels);
  return split;
}

void save_dataset(const MultiDomainDataset& ds, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  write_text_atomic((fs::path(dir) / "manifest.json").string(),
                    dataset_manifest_json(ds.spec));
  for (int d = 0; d < ds.spec.num_domains; ++d) {
    const auto base = fs::path(dir) / ("domain" + std::to_string(d));
    write_text_atomic(base.string() + "_train.csv",
                      split_to_csv(d, ds.train[static_cast<std::size_t>(d)]));
    write_text_atomic(base.string() + "_val.csv",
                      split_to_csv(d, ds.val[static_cast<std::size_t>(d)]));
  }
}

MultiDomainDataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  json manifest;
  try {
    manifest = json::parse(read_text((fs::path(dir) / "manifest.json").string()));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("dataset manifest: ") + e.what());
  }

  MultiDomainDataset ds;
  try {
    ds.spec.num_domains = manifest.at("domains").get<int>();
    ds.spec.num_classes = manifest.at("classes").get<int>();
    ds.spec.input_dim = manifest.at("input_dim").get<int>();
    ds.spec.n_train_per_class = manifest.at("n_train_per_class").get<int>();
    ds.spec.n_val_per_class = manifest.at("n_val_per_class").get<int>();
    ds.spec.noise_std = manifest.at("noise_std").get<double>();
    ds.spec.mean_scale = manifest.value("mean_scale", 1.0);
    ds.spec.bias_std = manifest.value("bias_std", 0.3);
    ds.spec.seed = manifest.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("dataset manifest: ") + e.what());
  }

  for (int d = 0; d < ds.spec.num_domains; ++d) {
    const auto base = fs::path(dir) / ("domain" + std::to_string(d));
    SplitData train = split_from_csv(read_text(base.string() + "_train.csv"), d,
                                     ds.spec.input_dim, ds.spec.num_classes);
    SplitData val = split_from_csv(read_text(base.string() + "_val.csv"), d,
                                   ds.spec.input_dim, ds.spec.num_classes);
    const Index want_train =
        static_cast<Index>(ds.spec.n_train_per_class) * ds.spec.num_classes;
    const Index want_val =
        static_cast<Index>(ds.spec.n_val_per_class) * ds.spec.num_classes;
    if (train.size() != want_train || val.size() != want_val)
      throw ConfigError("dataset: sample counts disagree with manifest");
    ds.train.push_back(std::move(train));
    ds.val.push_back(std::move(val));
  }
  return ds;
}

}  // namespace sslora
