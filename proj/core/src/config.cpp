#include "tased/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "tased/error.hpp"

namespace tased {

namespace {

using nlohmann::json;

void reject_unknown(const json& obj, const std::string& where, const std::set<std::string>& allowed) {
  if (!obj.is_object()) throw ConfigError(fmt::format("{}: expected a JSON object", where));
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.count(key)) throw ConfigError(fmt::format("{}: unknown key '{}'", where, key));
  }
}

template <typename T>
void read(const json& obj, const std::string& where, const char* key, T& out) {
  const auto it = obj.find(key);
  if (it == obj.end()) return;
  const std::string path = where + "." + key;
  if constexpr (std::is_same_v<T, bool>) {
    if (!it->is_boolean()) throw ConfigError(fmt::format("{}: expected a boolean", path));
  } else if constexpr (std::is_integral_v<T>) {
    if (!it->is_number_unsigned()) throw ConfigError(fmt::format("{}: expected a non-negative integer", path));
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!it->is_number()) throw ConfigError(fmt::format("{}: expected a number", path));
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!it->is_string()) throw ConfigError(fmt::format("{}: expected a string", path));
  } else {
    if (!it->is_array()) throw ConfigError(fmt::format("{}: expected an array", path));
    for (const auto& e : *it) {
      if (!e.is_number_unsigned()) throw ConfigError(fmt::format("{}: expected non-negative integers", path));
    }
  }
  out = it->get<T>();
}

ModelConfig parse_model(const json& j) {
  const std::string where = "model";
  reject_unknown(j, where,
                 {"preset", "clip_length", "input_size", "encoder_channels", "spatial_downsample",
                  "temporal_downsample", "aggregation", "upsampling", "unpool_layers", "seed"});
  ModelConfig c;
  std::string preset = "toy";
  read(j, where, "preset", preset);
  if (preset == "tiny") {
    c = ModelConfig::tiny();
  } else if (preset == "paperlike") {
    c = ModelConfig::paperlike();
  } else if (preset != "toy") {
    throw ConfigError(fmt::format("model.preset: unknown preset '{}' (expected toy, tiny or paperlike)", preset));
  }
  read(j, where, "clip_length", c.clip_length);
  if (const auto it = j.find("input_size"); it != j.end()) {
    std::vector<std::size_t> size;
    read(j, where, "input_size", size);
    if (size.size() != 2) throw ConfigError("model.input_size: expected [height, width]");
    c.height = size[0];
    c.width = size[1];
  }
  read(j, where, "encoder_channels", c.encoder_channels);
  read(j, where, "spatial_downsample", c.spatial_downsample);
  read(j, where, "temporal_downsample", c.temporal_downsample);
  std::string text;
  if (j.contains("aggregation")) {
    read(j, where, "aggregation", text);
    c.aggregation = parse_aggregation(text);
  }
  if (j.contains("upsampling")) {
    read(j, where, "upsampling", text);
    c.upsampling = parse_upsampling(text);
  }
  read(j, where, "unpool_layers", c.unpool_layers);
  read(j, where, "seed", c.seed);
  c.validate();
  return c;
}

TrainConfig parse_train(const json& j) {
  const std::string where = "train";
  reject_unknown(j, where,
                 {"batch_size", "micro_batch_size", "momentum", "encoder_lr", "decoder_lr", "decay_factor",
                  "decay_mode", "decay_steps", "patience", "validate_every", "total_steps", "validation_samples",
                  "loss_eps", "seed"});
  TrainConfig c;
  read(j, where, "batch_size", c.batch_size);
  read(j, where, "micro_batch_size", c.micro_batch_size);
  read(j, where, "momentum", c.momentum);
  read(j, where, "encoder_lr", c.encoder_lr);
  read(j, where, "decoder_lr", c.decoder_lr);
  read(j, where, "decay_factor", c.decay_factor);
  if (j.contains("decay_mode")) {
    std::string mode;
    read(j, where, "decay_mode", mode);
    c.decay_mode = parse_decay_mode(mode);
  }
  read(j, where, "decay_steps", c.decay_steps);
  read(j, where, "patience", c.patience);
  read(j, where, "validate_every", c.validate_every);
  read(j, where, "total_steps", c.total_steps);
  read(j, where, "validation_samples", c.validation_samples);
  read(j, where, "loss_eps", c.loss_eps);
  read(j, where, "seed", c.seed);
  c.validate();
  return c;
}

PathsConfig parse_paths(const json& j) {
  const std::string where = "paths";
  reject_unknown(j, where, {"data_root", "val_root", "output_dir", "checkpoint"});
  PathsConfig p;
  read(j, where, "data_root", p.data_root);
  read(j, where, "val_root", p.val_root);
  read(j, where, "output_dir", p.output_dir);
  read(j, where, "checkpoint", p.checkpoint);
  return p;
}

}  // namespace

RunConfig parse_run_config(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(fmt::format("invalid JSON: {}", e.what()));
  }
  reject_unknown(j, "config", {"model", "train", "paths"});
  RunConfig c;
  if (j.contains("model")) c.model = parse_model(j.at("model"));
  if (j.contains("train")) c.train = parse_train(j.at("train"));
  if (j.contains("paths")) c.paths = parse_paths(j.at("paths"));
  c.model.validate();
  c.train.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(fmt::format("cannot open config '{}'", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_run_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

std::string to_json(const RunConfig& c) {
  json j;
  j["model"] = {{"clip_length", c.model.clip_length},
                {"input_size", {c.model.height, c.model.width}},
                {"encoder_channels", c.model.encoder_channels},
                {"spatial_downsample", c.model.spatial_downsample},
                {"temporal_downsample", c.model.temporal_downsample},
                {"aggregation", to_string(c.model.aggregation)},
                {"upsampling", to_string(c.model.upsampling)},
                {"unpool_layers", c.model.unpool_layers},
                {"seed", c.model.seed}};
  j["train"] = {{"batch_size", c.train.batch_size},
                {"micro_batch_size", c.train.micro_batch_size},
                {"momentum", c.train.momentum},
                {"encoder_lr", c.train.encoder_lr},
                {"decoder_lr", c.train.decoder_lr},
                {"decay_factor", c.train.decay_factor},
                {"decay_mode", to_string(c.train.decay_mode)},
                {"decay_steps", c.train.decay_steps},
                {"patience", c.train.patience},
                {"validate_every", c.train.validate_every},
                {"total_steps", c.train.total_steps},
                {"validation_samples", c.train.validation_samples},
                {"loss_eps", c.train.loss_eps},
                {"seed", c.train.seed}};
  j["paths"] = {{"data_root", c.paths.data_root},
                {"val_root", c.paths.val_root},
                {"output_dir", c.paths.output_dir},
                {"checkpoint", c.paths.checkpoint}};
  return j.dump(2);
}

}  // namespace tased
