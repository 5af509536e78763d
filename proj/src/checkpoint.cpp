#include "sslora/checkpoint.hpp"

#include <json.hpp>

namespace sslora {

namespace {
using nlohmann::json;
}

std::string network_spec_json(Index input_dim, Index hidden_dim, Index num_blocks,
                              Index num_classes, Index num_domains,
                              const std::string& structure, Index rank,
                              double threshold, bool constrained,
                              const std::string& init, double init_std,
                              const std::string& dtype, std::uint64_t fingerprint) {
  json j;
  j["format"] = "sslora-checkpoint";
  j["version"] = 1;
  j["input_dim"] = input_dim;
  j["hidden_dim"] = hidden_dim;
  j["num_blocks"] = num_blocks;
  j["num_classes"] = num_classes;
  j["num_domains"] = num_domains;
  j["structure"] = structure;
  j["rank"] = rank;
  j["threshold"] = threshold;
  j["constrained"] = constrained;
  j["init"] = init;
  j["init_std"] = init_std;
  j["dtype"] = dtype;
  j["base_fingerprint"] = fingerprint;
  return j.dump(2) + "\n";
}

ParsedNetworkSpec parse_network_spec_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
    if (j.value("format", "") != "sslora-checkpoint")
      throw ConfigError("checkpoint json: wrong format tag");
    ParsedNetworkSpec p;
    p.input_dim = j.at("input_dim").get<Index>();
    p.hidden_dim = j.at("hidden_dim").get<Index>();
    p.num_blocks = j.at("num_blocks").get<Index>();
    p.num_classes = j.at("num_classes").get<Index>();
    p.num_domains = j.at("num_domains").get<Index>();
    p.structure = j.at("structure").get<std::string>();
    p.rank = j.at("rank").get<Index>();
    p.threshold = j.at("threshold").get<double>();
    p.constrained = j.at("constrained").get<bool>();
    p.init = j.value("init", "gaussian");
    p.init_std = j.value("init_std", 0.02);
    p.dtype = j.value("dtype", "f64");
    p.fingerprint = j.at("base_fingerprint").get<std::uint64_t>();
    return p;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("checkpoint json: ") + e.what());
  }
}

}  // namespace sslora
