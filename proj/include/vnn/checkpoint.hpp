#pragma once

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <string>

#include "vnn/net.hpp"
#include "vnn/version.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace vnn {

// Versioned binary model container: magic, format version, a JSON descriptor
// (architecture, method, tensor manifest), then flat little-endian doubles.
inline constexpr char kCheckpointMagic[8] = {'V', 'N', 'N', 'C', 'K', 'P', 'T', '1'};

namespace detail {

inline nlohmann::json arch_to_json(const Architecture& arch) {
  nlohmann::json j;
  j["name"] = arch.name;
  j["input_shape"] = arch.input_shape;
  nlohmann::json layers = nlohmann::json::array();
  for (const LayerSpec& s : arch.layers) {
    nlohmann::json l;
    switch (s.kind) {
      case LayerSpec::Kind::Dense:
        l["kind"] = "dense";
        l["units"] = s.units;
        break;
      case LayerSpec::Kind::Conv2d:
        l["kind"] = "conv2d";
        l["channels"] = s.channels;
        l["ksize"] = s.ksize;
        l["stride"] = s.stride;
        l["padding"] = s.padding;
        break;
      case LayerSpec::Kind::Flatten:
        l["kind"] = "flatten";
        break;
      case LayerSpec::Kind::Activation:
        l["kind"] = "activation";
        l["act"] = activation_name(s.act);
        break;
    }
    layers.push_back(l);
  }
  j["layers"] = layers;
  return j;
}

inline Architecture arch_from_json(const nlohmann::json& j) {
  Architecture arch;
  arch.name = j.at("name").get<std::string>();
  arch.input_shape = j.at("input_shape").get<Shape>();
  for (const auto& l : j.at("layers")) {
    const std::string kind = l.at("kind").get<std::string>();
    if (kind == "dense") {
      arch.layers.push_back(LayerSpec::dense(l.at("units").get<std::size_t>()));
    } else if (kind == "conv2d") {
      arch.layers.push_back(LayerSpec::conv2d(l.at("channels").get<std::size_t>(),
                                              l.at("ksize").get<std::size_t>(),
                                              l.at("stride").get<int>(),
                                              l.at("padding").get<int>()));
    } else if (kind == "flatten") {
      arch.layers.push_back(LayerSpec::flatten());
    } else if (kind == "activation") {
      arch.layers.push_back(
          LayerSpec::activation(activation_from_string(l.at("act").get<std::string>())));
    } else {
      throw ParseError("checkpoint: unknown layer kind '" + kind + "'");
    }
  }
  return arch;
}

inline nlohmann::json method_to_json(const MethodConfig& m) {
  nlohmann::json j;
  j["method"] = method_name(m.method);
  j["dropout_rate"] = m.dropout_rate;
  j["prior_std"] = m.prior_std;
  j["kl_weight"] = m.kl_weight;
  j["rho_init_frac"] = m.rho_init_frac;
  j["ensemble_size"] = m.ensemble_size;
  j["index_dim"] = m.index_dim;
  j["hm_init_scale"] = m.hm_init_scale;
  j["sigma_init"] = m.sigma_init;
  return j;
}

inline MethodConfig method_from_json(const nlohmann::json& j) {
  MethodConfig m;
  m.method = method_from_string(j.at("method").get<std::string>());
  m.dropout_rate = j.at("dropout_rate").get<double>();
  m.prior_std = j.at("prior_std").get<double>();
  m.kl_weight = j.at("kl_weight").get<double>();
  m.rho_init_frac = j.at("rho_init_frac").get<double>();
  m.ensemble_size = j.at("ensemble_size").get<int>();
  m.index_dim = j.at("index_dim").get<int>();
  m.hm_init_scale = j.at("hm_init_scale").get<double>();
  m.sigma_init = j.at("sigma_init").get<double>();
  return m;
}

// Every tensor holding state, in a stable order (ensemble members first to
// last, hypermodel a then B, layer parameters in stack order).
inline std::vector<Tensor*> state_tensors(Model& m) {
  std::vector<Tensor*> out;
  if (m.method.method == Method::Ensemble) {
    for (Model& member : m.members) {
      auto sub = state_tensors(member);
      out.insert(out.end(), sub.begin(), sub.end());
    }
    return out;
  }
  if (m.method.method == Method::Hypermodel) {
    out.push_back(&m.hm.a);
    out.push_back(&m.hm.B);
    return out;
  }
  return m.parameters();
}

}  // namespace detail

inline void save_checkpoint(Model& model, const std::filesystem::path& path) {
  nlohmann::json header;
  header["artifact_version"] = kArtifactVersion;
  header["architecture"] = detail::arch_to_json(model.arch);
  header["method"] = detail::method_to_json(model.method);
  nlohmann::json manifest = nlohmann::json::array();
  auto tensors = detail::state_tensors(model);
  for (Tensor* t : tensors) manifest.push_back(t->shape);
  header["tensors"] = manifest;
  const std::string hs = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("checkpoint: cannot open " + path.string() + " for writing");
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  const std::uint64_t hlen = hs.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof hlen);
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (Tensor* t : tensors)
    out.write(reinterpret_cast<const char*>(t->data.data()),
              static_cast<std::streamsize>(t->data.size() * sizeof(double)));
  if (!out) throw ParseError("checkpoint: write failed for " + path.string());
}

inline Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("checkpoint: cannot open " + path.string());
  char magic[sizeof kCheckpointMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
    throw ParseError("checkpoint: bad magic in " + path.string());
  std::uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof hlen);
  if (!in || hlen > (1ULL << 30)) throw ParseError("checkpoint: bad header length");
  std::string hs(hlen, '\0');
  in.read(hs.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw ParseError("checkpoint: truncated header");
  nlohmann::json header = nlohmann::json::parse(hs, nullptr, false);
  if (header.is_discarded()) throw ParseError("checkpoint: header is not valid JSON");

  Architecture arch = detail::arch_from_json(header.at("architecture"));
  MethodConfig method = detail::method_from_json(header.at("method"));
  RngStream scratch(0);
  Model model = Model::build(arch, method, scratch);

  auto tensors = detail::state_tensors(model);
  const auto manifest = header.at("tensors");
  if (manifest.size() != tensors.size())
    throw ParseError("checkpoint: tensor count mismatch");
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const Shape s = manifest[i].get<Shape>();
    if (s != tensors[i]->shape) throw ParseError("checkpoint: tensor shape mismatch");
    in.read(reinterpret_cast<char*>(tensors[i]->data.data()),
            static_cast<std::streamsize>(tensors[i]->data.size() * sizeof(double)));
    if (!in) throw ParseError("checkpoint: truncated tensor payload");
  }
  return model;
}

}  // namespace vnn
