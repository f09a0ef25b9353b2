#pragma once

// Versioned checkpoint container:
//   "NNBRCKPT" | u32 version | u64 header length | JSON header | f64 payload
// The JSON header carries the model config, seed, caller metadata and the
// tensor table; the payload holds every tensor in tensor_views() order,
// little-endian IEEE-754 doubles.

#include <bit>
#include <cstring>
#include <fstream>
#include <string>

#include <json.hpp>

#include "nnbr/core.hpp"
#include "nnbr/model.hpp"

namespace nnbr {

inline constexpr char kCheckpointMagic[8] = {'N', 'N', 'B', 'R', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"embed_dim", c.embed_dim}, {"layers", c.layers},   {"heads", c.heads},
          {"max_positions", c.max_positions}, {"max_len", c.max_len},     {"dropout", c.dropout}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.layers = j.value("layers", c.layers);
  c.heads = j.value("heads", c.heads);
  c.max_positions = j.value("max_positions", c.max_positions);
  c.max_len = j.value("max_len", c.max_len);
  c.dropout = j.value("dropout", c.dropout);
  return c;
}

struct Checkpoint {
  ModelConfig config;
  Parameters params;
  std::uint64_t seed = 0;
  nlohmann::json metadata = nlohmann::json::object();
};

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  nlohmann::json header{{"config", to_json(ckpt.config)}, {"seed", ckpt.seed}, {"metadata", ckpt.metadata}, {"tensors", nlohmann::json::array()}};
  const auto views = tensor_views(ckpt.params);
  for (const auto& v : views) header["tensors"].push_back({{"name", v.name}, {"rows", v.rows}, {"cols", v.cols}});
  const std::string text = header.dump();
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp);
    const std::uint32_t version = kCheckpointVersion;
    const std::uint64_t len = text.size();
    out.write(kCheckpointMagic, sizeof kCheckpointMagic);
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& v : views) out.write(reinterpret_cast<const char*>(v.data), static_cast<std::streamsize>(v.size * sizeof(double)));
    if (!out) throw Error("failed writing " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw Error("cannot move checkpoint into place at " + path);
}

/// Loads a checkpoint; when expected_vocab_size is non-zero a different
/// vocabulary is rejected.
inline Checkpoint load_checkpoint(const std::string& path, std::size_t expected_vocab_size = 0) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path);
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) throw SchemaError(path + ": not a checkpoint");
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  if (version != kCheckpointVersion) throw SchemaError(path + ": unsupported checkpoint version " + std::to_string(version));
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw SchemaError(path + ": truncated header");
  auto header = nlohmann::json::parse(text);
  Checkpoint ckpt;
  ckpt.config = model_config_from_json(header.at("config"));
  ckpt.config.validate();
  if (expected_vocab_size != 0 && ckpt.config.vocab_size != expected_vocab_size) {
    throw ConfigError(path + ": checkpoint vocabulary " + std::to_string(ckpt.config.vocab_size) + " does not match corpus vocabulary " +
                      std::to_string(expected_vocab_size));
  }
  ckpt.seed = header.at("seed").get<std::uint64_t>();
  ckpt.metadata = header.value("metadata", nlohmann::json::object());
  ckpt.params = zero_parameters(ckpt.config);
  auto views = tensor_views(ckpt.params);
  const auto& table = header.at("tensors");
  if (table.size() != views.size()) throw SchemaError(path + ": tensor table does not match the configuration");
  for (std::size_t k = 0; k < views.size(); ++k) {
    if (table[k].at("name") != views[k].name || table[k].at("rows") != views[k].rows || table[k].at("cols") != views[k].cols) {
      throw SchemaError(path + ": unexpected tensor " + table[k].dump());
    }
    in.read(reinterpret_cast<char*>(views[k].data), static_cast<std::streamsize>(views[k].size * sizeof(double)));
  }
  if (!in) throw SchemaError(path + ": truncated payload");
  return ckpt;
}

}  // namespace nnbr
