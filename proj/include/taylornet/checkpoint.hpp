// Checkpoint archive: a single self-describing binary file holding every
// parameter tensor keyed by module path, plus the model configuration as an
// embedded key=value block.
//
//   magic   "TNCK" | u32 version = 1
//   config  u32 byte length | bytes (key=value text)
//   count   u32 tensor count
//   tensor  u16 name length | name bytes | u8 dtype (4 = f32, 8 = f64)
//           u8 rank | u32 dims... | raw little-endian payload
//
// Writes go through a temp file and an atomic rename.
#pragma once

#include <cstdio>
#include <cstring>
#include <fstream>

#include "taylornet/binio.hpp"
#include "taylornet/config.hpp"
#include "taylornet/model.hpp"

namespace taylornet {

inline KeyValues model_config_kv(const ModelConfig& c) {
  KeyValues kv;
  kv.set_int("model.frame_h", c.frame_h);
  kv.set_int("model.frame_w", c.frame_w);
  kv.set_int("model.frame_c", c.frame_c);
  kv.set_int("model.enc_mid", c.enc_mid);
  kv.set_int("model.latent_c", c.latent_c);
  kv.set_int("model.dec_mid", c.dec_mid);
  kv.set_int("model.dec_low", c.dec_low);
  kv.set_int("model.bank_k", c.bank_k);
  kv.set_int("model.taylor_order", c.taylor_order);
  kv.set_int("model.lstm_layers", c.lstm_layers);
  kv.set_bool("model.mcu_enabled", c.mcu_enabled);
  kv.set_bool("model.residual_branch_enabled", c.residual_branch_enabled);
  kv.set_bool("model.taylor_branch_enabled", c.taylor_branch_enabled);
  kv.set_int("model.input_frames", c.input_frames);
  kv.set_int("model.future_frames", c.future_frames);
  return kv;
}

inline ModelConfig model_config_from_kv(const KeyValues& kv) {
  ModelConfig c;
  c.frame_h = static_cast<int>(kv.get_int("model.frame_h"));
  c.frame_w = static_cast<int>(kv.get_int("model.frame_w"));
  c.frame_c = static_cast<int>(kv.get_int("model.frame_c"));
  c.enc_mid = static_cast<int>(kv.get_int("model.enc_mid"));
  c.latent_c = static_cast<int>(kv.get_int("model.latent_c"));
  c.dec_mid = static_cast<int>(kv.get_int("model.dec_mid"));
  c.dec_low = static_cast<int>(kv.get_int("model.dec_low"));
  c.bank_k = static_cast<int>(kv.get_int("model.bank_k"));
  c.taylor_order = static_cast<int>(kv.get_int("model.taylor_order"));
  c.lstm_layers = static_cast<int>(kv.get_int("model.lstm_layers"));
  c.mcu_enabled = kv.get_bool("model.mcu_enabled");
  c.residual_branch_enabled = kv.get_bool("model.residual_branch_enabled");
  c.taylor_branch_enabled = kv.get_bool("model.taylor_branch_enabled");
  c.input_frames = static_cast<int>(kv.get_int("model.input_frames"));
  c.future_frames = static_cast<int>(kv.get_int("model.future_frames"));
  return c;
}

template <typename T>
void save_checkpoint(const std::string& path, ModelParams<T>& params,
                     const KeyValues& extra = {}) {
  KeyValues kv = model_config_kv(params.config);
  for (const auto& [k, v] : extra.entries()) kv.set(k, v);
  const std::string cfg = kv.serialize();

  std::vector<std::pair<std::string, Tensor<T>*>> tensors;
  params.visit([&](const std::string& n, Tensor<T>& t) { tensors.emplace_back(n, &t); });

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + tmp);
    out.write("TNCK", 4);
    detail::write_pod<uint32_t>(out, 1);
    detail::write_pod<uint32_t>(out, static_cast<uint32_t>(cfg.size()));
    out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
    detail::write_pod<uint32_t>(out, static_cast<uint32_t>(tensors.size()));
    for (auto& [name, t] : tensors) {
      detail::write_pod<uint16_t>(out, static_cast<uint16_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      detail::write_pod<uint8_t>(out, sizeof(T));
      detail::write_pod<uint8_t>(out, static_cast<uint8_t>(t->rank()));
      for (int d = 0; d < t->rank(); ++d) detail::write_pod<uint32_t>(out, t->dim(d));
      out.write(reinterpret_cast<const char*>(t->data()),
                static_cast<std::streamsize>(t->size() * sizeof(T)));
    }
    if (!out) throw std::runtime_error("short write on checkpoint: " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("cannot rename checkpoint into place: " + path);
}

template <typename T>
struct LoadedCheckpoint {
  ModelParams<T> params;
  KeyValues config;
};

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "TNCK", 4) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);
  const uint32_t version = detail::read_pod<uint32_t>(in);
  if (version != 1) throw std::runtime_error("unsupported checkpoint version");
  const uint32_t cfg_len = detail::read_pod<uint32_t>(in);
  std::string cfg(cfg_len, '\0');
  in.read(cfg.data(), cfg_len);
  if (!in) throw std::runtime_error("checkpoint truncated (config)");
  LoadedCheckpoint<T> out;
  out.config = KeyValues::parse(cfg);
  out.params.config = model_config_from_kv(out.config);

  // shape the parameter tree, then fill by name
  Rng dummy(0);
  out.params = [&] {
    auto p = init_model<T>(out.params.config, dummy);
    return p;
  }();
  std::map<std::string, Tensor<T>*> by_name;
  out.params.visit([&](const std::string& n, Tensor<T>& t) { by_name[n] = &t; });

  const uint32_t count = detail::read_pod<uint32_t>(in);
  uint32_t filled = 0;
  for (uint32_t i = 0; i < count; ++i) {
    const uint16_t nlen = detail::read_pod<uint16_t>(in);
    std::string name(nlen, '\0');
    in.read(name.data(), nlen);
    const uint8_t dtype = detail::read_pod<uint8_t>(in);
    const uint8_t rank = detail::read_pod<uint8_t>(in);
    Shape shape;
    for (int d = 0; d < rank; ++d) shape.push_back(static_cast<int>(detail::read_pod<uint32_t>(in)));
    const int64_t numel = shape_numel(shape);
    auto it = by_name.find(name);
    if (it == by_name.end()) throw std::runtime_error("checkpoint holds unknown tensor: " + name);
    if (it->second->shape() != shape)
      throw std::runtime_error("checkpoint tensor " + name + " has shape " + shape_str(shape) +
                               ", expected " + shape_str(it->second->shape()));
    if (dtype == sizeof(T)) {
      in.read(reinterpret_cast<char*>(it->second->data()),
              static_cast<std::streamsize>(numel * sizeof(T)));
    } else if (dtype == 4) {
      std::vector<float> buf(static_cast<size_t>(numel));
      in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(numel * 4));
      for (int64_t j = 0; j < numel; ++j) (*it->second)[j] = static_cast<T>(buf[static_cast<size_t>(j)]);
    } else if (dtype == 8) {
      std::vector<double> buf(static_cast<size_t>(numel));
      in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(numel * 8));
      for (int64_t j = 0; j < numel; ++j) (*it->second)[j] = static_cast<T>(buf[static_cast<size_t>(j)]);
    } else {
      throw std::runtime_error("checkpoint tensor " + name + " has unsupported dtype");
    }
    if (!in) throw std::runtime_error("checkpoint truncated (tensor " + name + ")");
    ++filled;
  }
  if (filled != by_name.size())
    throw std::runtime_error("checkpoint is missing tensors (" + std::to_string(filled) + "/" +
                             std::to_string(by_name.size()) + ")");
  return out;
}

}  // namespace taylornet
