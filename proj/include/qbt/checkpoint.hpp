#pragma once

// Checkpoint container:
//   "QBTCKPT1" | u64 header length | JSON header | float32 little-endian payload
// The header holds the model config, free-form metadata and the name, shape
// and payload offset (in floats) of every tensor. Optimizer moments, when
// present, are stored as extra tensors prefixed "adam.m." / "adam.v.".

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qbt/model.hpp"
#include "qbt/optim.hpp"

namespace qbt {

using Json = nlohmann::json;

inline constexpr char kCheckpointMagic[8] = {'Q', 'B', 'T', 'C', 'K', 'P', 'T', '1'};

inline Json to_json(const ModelConfig& c) {
  return Json{{"n_enc_layers", c.n_enc_layers},
              {"n_dec_layers", c.n_dec_layers},
              {"d_model", c.d_model},
              {"d_ff", c.d_ff},
              {"n_heads", c.n_heads},
              {"max_positions", c.max_positions},
              {"vocab_size", c.vocab_size},
              {"dropout", c.dropout},
              {"tie_encoder_head", c.tie_encoder_head},
              {"tie_decoder_head", c.tie_decoder_head},
              {"share_enc_dec_embeddings", c.share_enc_dec_embeddings},
              {"encoder_target_lang", c.encoder_target_lang}};
}

inline ModelConfig model_config_from_json(const Json& j) {
  ModelConfig c;
  c.n_enc_layers = j.at("n_enc_layers").get<int>();
  c.n_dec_layers = j.at("n_dec_layers").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.d_ff = j.at("d_ff").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.max_positions = j.at("max_positions").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.tie_encoder_head = j.at("tie_encoder_head").get<bool>();
  c.tie_decoder_head = j.at("tie_decoder_head").get<bool>();
  c.share_enc_dec_embeddings = j.at("share_enc_dec_embeddings").get<bool>();
  c.encoder_target_lang = j.at("encoder_target_lang").get<bool>();
  c.validate();
  return c;
}

namespace detail {

inline std::uint32_t to_little(std::uint32_t x) {
  if constexpr (std::endian::native == std::endian::big)
    return ((x & 0xffu) << 24) | ((x & 0xff00u) << 8) | ((x >> 8) & 0xff00u) | (x >> 24);
  return x;
}

inline void append_floats(std::string& out, const Mat<float>& m) {
  const auto n = static_cast<std::size_t>(m.size());
  const std::size_t start = out.size();
  out.resize(start + 4 * n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t bits = to_little(std::bit_cast<std::uint32_t>(m.data()[i]));
    std::memcpy(out.data() + start + 4 * i, &bits, 4);
  }
}

inline void read_floats(const std::string& payload, std::size_t offset, Mat<float>& m) {
  const auto n = static_cast<std::size_t>(m.size());
  if ((offset + n) * 4 > payload.size()) throw InvalidInput("checkpoint: truncated payload");
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, payload.data() + 4 * (offset + i), 4);
    m.data()[i] = std::bit_cast<float>(to_little(bits));
  }
}

}  // namespace detail

struct Checkpoint {
  ModelParams<float> params;
  std::optional<OptimizerState<float>> optimizer;
  Json meta = Json::object();
};

inline void save_checkpoint(const std::filesystem::path& path, const ModelParams<float>& params,
                            const OptimizerState<float>* optimizer = nullptr, const Json& meta = Json::object()) {
  Json tensors = Json::array();
  std::string payload;
  auto add = [&](const std::string& name, const Mat<float>& m) {
    tensors.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}, {"offset", payload.size() / 4}});
    detail::append_floats(payload, m);
  };
  for_each_tensor(params, [&](const std::string& name, ParamGroup, const Mat<float>& m) { add(name, m); });
  Json header{{"config", to_json(params.config)}, {"meta", meta}};
  if (optimizer) {
    header["adam"] = {{"step", optimizer->step},
                      {"lr", optimizer->hp.lr},
                      {"beta1", optimizer->hp.beta1},
                      {"beta2", optimizer->hp.beta2},
                      {"epsilon", optimizer->hp.epsilon}};
    for_each_tensor(optimizer->m, [&](const std::string& name, ParamGroup, const Mat<float>& m) { add("adam.m." + name, m); });
    for_each_tensor(optimizer->v, [&](const std::string& name, ParamGroup, const Mat<float>& m) { add("adam.v." + name, m); });
  }
  header["tensors"] = std::move(tensors);
  const std::string text = header.dump();

  // Write to a sibling file first so an interrupted save never clobbers a good checkpoint.
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InvalidInput("checkpoint: cannot open " + tmp.string());
    out.write(kCheckpointMagic, sizeof kCheckpointMagic);
    std::uint64_t len = text.size();
    unsigned char len_bytes[8];
    for (int i = 0; i < 8; ++i) len_bytes[i] = static_cast<unsigned char>(len >> (8 * i));
    out.write(reinterpret_cast<const char*>(len_bytes), 8);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) throw InvalidInput("checkpoint: write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

// Loads a checkpoint and checks every tensor against the shapes implied by
// the stored config (and against `expected` when given).
inline Checkpoint load_checkpoint(const std::filesystem::path& path, const std::optional<ModelConfig>& expected = std::nullopt) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("checkpoint: cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  const std::string bytes = buffer.str();
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0)
    throw InvalidInput("checkpoint: bad magic in " + path.string());
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[8 + i])) << (8 * i);
  if (16 + len > bytes.size()) throw InvalidInput("checkpoint: truncated header");
  Json header;
  try {
    header = Json::parse(bytes.substr(16, len));
  } catch (const Json::exception& e) {
    throw InvalidInput(std::string("checkpoint: corrupt header: ") + e.what());
  }
  const std::string payload = bytes.substr(16 + len);

  const ModelConfig config = model_config_from_json(header.at("config"));
  if (expected && !(*expected == config)) throw InvalidInput("checkpoint: model config does not match the expected config");

  std::map<std::string, Json> index;
  for (const auto& t : header.at("tensors")) index[t.at("name").get<std::string>()] = t;
  auto fill = [&](const std::string& name, Mat<float>& m) {
    const auto it = index.find(name);
    if (it == index.end()) throw InvalidInput("checkpoint: missing tensor " + name);
    if (it->second.at("rows").get<Eigen::Index>() != m.rows() || it->second.at("cols").get<Eigen::Index>() != m.cols())
      throw InvalidInput("checkpoint: shape mismatch for " + name);
    detail::read_floats(payload, it->second.at("offset").get<std::size_t>(), m);
    index.erase(it);
  };

  Checkpoint ck{ModelParams<float>::zeros(config), std::nullopt, header.value("meta", Json::object())};
  for_each_tensor(ck.params, [&](const std::string& name, ParamGroup, Mat<float>& m) { fill(name, m); });
  if (header.contains("adam")) {
    const Json& a = header.at("adam");
    AdamConfig hp{a.at("lr").get<double>(), a.at("beta1").get<double>(), a.at("beta2").get<double>(),
                  a.at("epsilon").get<double>()};
    OptimizerState<float> opt(config, hp);
    opt.step = a.at("step").get<long>();
    for_each_tensor(opt.m, [&](const std::string& name, ParamGroup, Mat<float>& m) { fill("adam.m." + name, m); });
    for_each_tensor(opt.v, [&](const std::string& name, ParamGroup, Mat<float>& m) { fill("adam.v." + name, m); });
    ck.optimizer = std::move(opt);
  }
  if (!index.empty()) throw InvalidInput("checkpoint: unexpected tensor " + index.begin()->first);
  return ck;
}

}  // namespace qbt
