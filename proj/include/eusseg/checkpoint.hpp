#pragma once

#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "eusseg/model.hpp"

namespace eusseg {

using json = nlohmann::json;

// Versioned checkpoint container: magic, version, JSON header describing the
// ModelConfig and every named tensor shape, then raw little-endian float64
// data in header order. Loading fails loudly on any mismatch.

inline constexpr char kCheckpointMagic[8] = {'E', 'U', 'S', 'S', 'E', 'G', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline json model_config_to_json(const ModelConfig& c) {
  return json{{"image_size", c.image_size},
              {"patch_size", c.patch_size},
              {"embed_dim", c.embed_dim},
              {"depth", c.depth},
              {"num_heads", c.num_heads},
              {"tap_layers", c.tap_layers},
              {"decoder_embed_dim", c.decoder_embed_dim},
              {"decoder_layers", c.decoder_layers},
              {"decoder_heads", c.decoder_heads},
              {"num_classes", c.num_classes}};
}

inline ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  c.image_size = j.at("image_size").get<std::size_t>();
  c.patch_size = j.at("patch_size").get<std::size_t>();
  c.embed_dim = j.at("embed_dim").get<std::size_t>();
  c.depth = j.at("depth").get<std::size_t>();
  c.num_heads = j.at("num_heads").get<std::size_t>();
  c.tap_layers = j.at("tap_layers").get<std::vector<std::size_t>>();
  c.decoder_embed_dim = j.at("decoder_embed_dim").get<std::size_t>();
  c.decoder_layers = j.at("decoder_layers").get<std::size_t>();
  c.decoder_heads = j.at("decoder_heads").get<std::size_t>();
  c.num_classes = j.at("num_classes").get<std::size_t>();
  return c;
}

inline void save_checkpoint(const std::filesystem::path& path,
                            const ParameterSet<double>& params) {
  json header;
  header["model_config"] = model_config_to_json(params.config);
  header["dtype"] = "f64";
  header["tensors"] = json::array();
  params.for_each([&](const std::string& name, const Tensor<double>& t, int layer, bool exempt) {
    header["tensors"].push_back(
        json{{"name", name}, {"shape", t.shape}, {"layer_index", layer}, {"decay_exempt", exempt}});
  });
  const std::string head = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeFailure("cannot write checkpoint: " + path.string());
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  const std::uint32_t version = kCheckpointVersion;
  const std::uint64_t head_len = head.size();
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  out.write(reinterpret_cast<const char*>(&head_len), sizeof(head_len));
  out.write(head.data(), static_cast<std::streamsize>(head.size()));
  params.for_each([&](const std::string&, const Tensor<double>& t, int, bool) {
    out.write(reinterpret_cast<const char*>(t.v.data()),
              static_cast<std::streamsize>(t.v.size() * sizeof(double)));
  });
  if (!out) throw RuntimeFailure("short checkpoint write: " + path.string());
}

inline ParameterSet<double> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open checkpoint: " + path.string());
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t head_len = 0;
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(&head_len), sizeof(head_len));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw ValidationError("not a checkpoint file: " + path.string());
  }
  if (version != kCheckpointVersion) {
    throw ValidationError("unsupported checkpoint version " + std::to_string(version) + " in " +
                          path.string());
  }
  std::string head(head_len, '\0');
  in.read(head.data(), static_cast<std::streamsize>(head_len));
  if (!in) throw ValidationError("truncated checkpoint header: " + path.string());
  json header;
  try {
    header = json::parse(head);
  } catch (const json::exception& e) {
    throw ValidationError("corrupt checkpoint header: " + std::string(e.what()));
  }
  if (header.value("dtype", "") != "f64") {
    throw ValidationError("unsupported checkpoint dtype in " + path.string());
  }

  ParameterSet<double> params = make_parameter_skeleton<double>(
      model_config_from_json(header.at("model_config")));

  // Stored tensor list must agree exactly, in order, with the skeleton.
  const auto& tensors = header.at("tensors");
  std::size_t cursor = 0;
  params.for_each([&](const std::string& name, Tensor<double>& t, int, bool) {
    if (cursor >= tensors.size()) {
      throw ValidationError("checkpoint is missing tensor '" + name + "'");
    }
    const auto& meta = tensors[cursor];
    if (meta.at("name").get<std::string>() != name) {
      throw ValidationError("checkpoint tensor order mismatch: expected '" + name + "', found '" +
                            meta.at("name").get<std::string>() + "'");
    }
    const auto shape = meta.at("shape").get<std::vector<std::size_t>>();
    if (shape != t.shape) {
      throw ValidationError("checkpoint shape mismatch for '" + name + "'");
    }
    in.read(reinterpret_cast<char*>(t.v.data()),
            static_cast<std::streamsize>(t.v.size() * sizeof(double)));
    if (!in) throw ValidationError("truncated checkpoint data at '" + name + "'");
    ++cursor;
  });
  if (cursor != tensors.size()) {
    throw ValidationError("checkpoint holds unexpected extra tensors");
  }
  return params;
}

}  // namespace eusseg
