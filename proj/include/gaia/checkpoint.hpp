#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>

#include <json.hpp>

#include "gaia/common.hpp"
#include "gaia/vit.hpp"

namespace gaia {

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"enc_width", c.enc_width},   {"enc_layers", c.enc_layers},
          {"enc_heads", c.enc_heads},   {"dec_width", c.dec_width},
          {"dec_layers", c.dec_layers}, {"dec_heads", c.dec_heads},
          {"patch_h", c.patch_h},       {"patch_w", c.patch_w},
          {"use_global_token", c.use_global_token},
          {"mlp_ratio", c.mlp_ratio},   {"dino_hidden", c.dino_hidden},
          {"dino_bottleneck", c.dino_bottleneck},
          {"dino_prototypes", c.dino_prototypes}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  if (j.contains("preset")) {
    const std::string preset = j.at("preset").get<std::string>();
    if (preset == "paper") c = ModelConfig::paper();
    else if (preset == "desk") c = ModelConfig::desk();
    else check(false, "model config: unknown preset '", preset, "'");
  }
  c.enc_width = j.value("enc_width", c.enc_width);
  c.enc_layers = j.value("enc_layers", c.enc_layers);
  c.enc_heads = j.value("enc_heads", c.enc_heads);
  c.dec_width = j.value("dec_width", c.dec_width);
  c.dec_layers = j.value("dec_layers", c.dec_layers);
  c.dec_heads = j.value("dec_heads", c.dec_heads);
  c.patch_h = j.value("patch_h", c.patch_h);
  c.patch_w = j.value("patch_w", c.patch_w);
  c.use_global_token = j.value("use_global_token", c.use_global_token);
  c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
  c.dino_hidden = j.value("dino_hidden", c.dino_hidden);
  c.dino_bottleneck = j.value("dino_bottleneck", c.dino_bottleneck);
  c.dino_prototypes = j.value("dino_prototypes", c.dino_prototypes);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Checkpoint archive: magic, version, JSON header (config + tensor directory
// with shapes, dtypes and byte offsets), then raw little-endian payloads.
// Readable without executing any model code.
// ---------------------------------------------------------------------------
struct Checkpoint {
  static constexpr uint32_t kVersion = 1;
  std::string kind = "pretrain";  // pretrain | task
  std::string task;               // precip | ar (kind == task)
  ModelConfig model;
  nlohmann::json schedule;  // opaque training configuration
  nlohmann::json extra;     // epoch, step, task-specific fields
  std::map<std::string, MatF> tensors;
};

namespace detail {
constexpr char kCkptMagic[8] = {'G', 'A', 'I', 'A', 'C', 'K', 'P', 'T'};
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  nlohmann::json dir = nlohmann::json::array();
  uint64_t offset = 0;
  for (const auto& [name, mat] : ckpt.tensors) {
    const uint64_t nbytes = uint64_t(mat.v.size()) * 4;
    dir.push_back({{"name", name},
                   {"dtype", "f32"},
                   {"rows", mat.rows},
                   {"cols", mat.cols},
                   {"offset", offset},
                   {"nbytes", nbytes}});
    offset += nbytes;
  }
  nlohmann::json header = {{"version", Checkpoint::kVersion},
                           {"kind", ckpt.kind},
                           {"task", ckpt.task.empty() ? nlohmann::json(nullptr)
                                                      : nlohmann::json(ckpt.task)},
                           {"model", to_json(ckpt.model)},
                           {"schedule", ckpt.schedule},
                           {"extra", ckpt.extra},
                           {"tensors", dir}};
  const std::string hs = header.dump();

  std::ofstream os(path, std::ios::binary);
  check(os.good(), "save_checkpoint: cannot open ", path);
  os.write(detail::kCkptMagic, 8);
  const uint32_t version = Checkpoint::kVersion;
  const uint32_t hlen = uint32_t(hs.size());
  os.write(reinterpret_cast<const char*>(&version), 4);
  os.write(reinterpret_cast<const char*>(&hlen), 4);
  os.write(hs.data(), std::streamsize(hs.size()));
  for (const auto& [name, mat] : ckpt.tensors)
    os.write(reinterpret_cast<const char*>(mat.v.data()), std::streamsize(mat.v.size() * 4));
  check(os.good(), "save_checkpoint: short write to ", path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  check(is.good(), "load_checkpoint: cannot open ", path);
  char magic[8];
  is.read(magic, 8);
  check(is.good() && std::memcmp(magic, detail::kCkptMagic, 8) == 0,
        "load_checkpoint: not a gaia checkpoint: ", path);
  uint32_t version = 0, hlen = 0;
  is.read(reinterpret_cast<char*>(&version), 4);
  is.read(reinterpret_cast<char*>(&hlen), 4);
  check(is.good() && version == Checkpoint::kVersion, "load_checkpoint: unsupported version ",
        version);
  std::string hs(hlen, '\0');
  is.read(hs.data(), hlen);
  check(is.good(), "load_checkpoint: truncated header");
  nlohmann::json header = nlohmann::json::parse(hs);

  Checkpoint ckpt;
  ckpt.kind = header.value("kind", "pretrain");
  if (header.contains("task") && !header["task"].is_null())
    ckpt.task = header["task"].get<std::string>();
  ckpt.model = model_config_from_json(header.at("model"));
  ckpt.schedule = header.value("schedule", nlohmann::json::object());
  ckpt.extra = header.value("extra", nlohmann::json::object());

  const std::streampos payload_start = is.tellg();
  for (const auto& t : header.at("tensors")) {
    const std::string name = t.at("name").get<std::string>();
    check(t.at("dtype").get<std::string>() == "f32", "load_checkpoint: unsupported dtype");
    MatF mat(t.at("rows").get<int>(), t.at("cols").get<int>());
    is.seekg(payload_start + std::streampos(t.at("offset").get<uint64_t>()));
    is.read(reinterpret_cast<char*>(mat.v.data()), std::streamsize(mat.v.size() * 4));
    check(is.good(), "load_checkpoint: truncated tensor ", name);
    ckpt.tensors.emplace(name, std::move(mat));
  }
  return ckpt;
}

// Pack / unpack parameter structs under a namespace prefix.
template <class T>
void pack_tensors(const Params<T>& p, const std::string& prefix,
                  std::map<std::string, MatF>& out) {
  for_each_tensor(p, [&](const std::string& name, const Mat<T>& m, bool) {
    out[prefix + name] = m.template cast<float>();
  });
}

template <class T>
void pack_tensors(const DinoHeadParams<T>& h, const std::string& prefix,
                  std::map<std::string, MatF>& out) {
  for_each_tensor(h, [&](const std::string& name, const Mat<T>& m, bool) {
    out[prefix + name] = m.template cast<float>();
  });
}

template <class T>
void unpack_tensors(Params<T>& p, const std::string& prefix,
                    const std::map<std::string, MatF>& in) {
  for_each_tensor(p, [&](const std::string& name, Mat<T>& m, bool) {
    auto it = in.find(prefix + name);
    check(it != in.end(), "checkpoint: missing tensor ", prefix + name);
    check(it->second.rows == m.rows && it->second.cols == m.cols,
          "checkpoint: shape mismatch for ", prefix + name);
    m = it->second.template cast<T>();
  });
}

template <class T>
void unpack_tensors(DinoHeadParams<T>& h, const std::string& prefix,
                    const std::map<std::string, MatF>& in) {
  for_each_tensor(h, [&](const std::string& name, Mat<T>& m, bool) {
    auto it = in.find(prefix + name);
    check(it != in.end(), "checkpoint: missing tensor ", prefix + name);
    check(it->second.rows == m.rows && it->second.cols == m.cols,
          "checkpoint: shape mismatch for ", prefix + name);
    m = it->second.template cast<T>();
  });
}

}  // namespace gaia
