#pragma once

#include <nlohmann/json.hpp>

#include <fstream>
#include <string>
#include <vector>

#include "cgpo/errors.hpp"
#include "cgpo/mlp.hpp"
#include "cgpo/tensor.hpp"

namespace cgpo {

inline constexpr const char* kCheckpointFormat = "cgpo-checkpoint/1";

inline nlohmann::json tensor_to_json(const Tensor& t) {
  return {{"shape", t.shape()}, {"data", t.storage()}};
}

inline Tensor tensor_from_json(const nlohmann::json& j) {
  return Tensor(j.at("shape").get<Shape>(), j.at("data").get<std::vector<double>>());
}

/// {"format_version", "activation", "layers": [{"shape", "data"}, ...]} with
/// layers in parameter order (w0, b0, w1, b1, ...).
inline nlohmann::json mlp_to_json(const Mlp& net) {
  nlohmann::json layers = nlohmann::json::array();
  for (const Tensor* p : net.parameters()) layers.push_back(tensor_to_json(*p));
  return {{"format_version", kCheckpointFormat},
          {"activation", to_string(net.activation())},
          {"layers", std::move(layers)}};
}

inline Mlp mlp_from_json(const nlohmann::json& j) {
  if (j.value("format_version", std::string{}) != kCheckpointFormat) {
    throw ConfigError("unsupported checkpoint format '" + j.value("format_version", std::string{}) + "'");
  }
  const auto& layers = j.at("layers");
  if (layers.size() % 2 != 0) throw DimensionError("checkpoint layer list must alternate weight/bias");
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;
  for (std::size_t i = 0; i < layers.size(); i += 2) {
    weights.push_back(tensor_from_json(layers[i]));
    biases.push_back(tensor_from_json(layers[i + 1]));
  }
  return Mlp::from_parameters(activation_from_string(j.at("activation").get<std::string>()),
                              std::move(weights), std::move(biases));
}

inline void write_json_file(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw StateError("cannot open '" + path + "' for writing");
  out << j.dump(1) << '\n';
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StateError("cannot open '" + path + "'");
  return nlohmann::json::parse(in);
}

}  // namespace cgpo
