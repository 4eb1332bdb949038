#include "deci/io.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

namespace deci {

std::string sha256_hex(const void* data, std::size_t size) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data, size, digest, &len, EVP_sha256(), nullptr) != 1) throw std::runtime_error("SHA-256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 15]);
  }
  return out;
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"d_model", c.d_model}, {"expand", c.expand},
          {"n_layers", c.n_layers},     {"d_state", c.d_state}, {"d_conv", c.d_conv}};
}

namespace {

template <class U>
void put_le(std::vector<unsigned char>& out, U bits) {
  for (std::size_t b = 0; b < sizeof(U); ++b) out.push_back(static_cast<unsigned char>(bits >> (8 * b)));
}

template <class U>
U get_le(const unsigned char* p) {
  U v = 0;
  for (std::size_t b = 0; b < sizeof(U); ++b) v |= static_cast<U>(p[b]) << (8 * b);
  return v;
}

struct RawFile {
  nlohmann::json header;
  std::vector<unsigned char> payload;
};

RawFile read_raw(const std::filesystem::path& path, bool with_payload) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  unsigned char len_bytes[8];
  if (!in.read(reinterpret_cast<char*>(len_bytes), 8)) throw IntegrityError("checkpoint truncated before header");
  const auto header_len = get_le<std::uint64_t>(len_bytes);
  const auto file_size = std::filesystem::file_size(path);
  if (header_len > file_size - 8) throw IntegrityError("checkpoint header length exceeds file size");
  std::string text(header_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_len));
  RawFile raw;
  try {
    raw.header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  if (!raw.header.is_object() || !raw.header.contains("format"))
    throw IntegrityError("checkpoint header lacks a format field");
  const auto format = raw.header["format"].get<std::string>();
  if (format != kCheckpointFormat)
    throw VersionError("unsupported checkpoint format '" + format + "' (expected " + kCheckpointFormat + ")");
  if (with_payload) {
    raw.payload.resize(file_size - 8 - header_len);
    in.read(reinterpret_cast<char*>(raw.payload.data()), static_cast<std::streamsize>(raw.payload.size()));
  }
  return raw;
}

}  // namespace

void save_checkpoint(const ModelWeights& w, const std::filesystem::path& path, StorageType dtype) {
  std::vector<unsigned char> payload;
  nlohmann::json tensors = nlohmann::json::array();
  const std::size_t width = dtype == StorageType::f32 ? 4 : 8;
  for (const auto& [name, t] : named_parameters(w)) {
    const std::size_t offset = payload.size();
    for (double v : t->values()) {
      if (dtype == StorageType::f32) {
        put_le(payload, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
      } else {
        put_le(payload, std::bit_cast<std::uint64_t>(v));
      }
    }
    tensors.push_back({{"name", name},
                       {"dtype", width == 4 ? "f32" : "f64"},
                       {"shape", t->shape()},
                       {"offset", offset},
                       {"nbytes", t->size() * width},
                       {"sha256", sha256_hex(payload.data() + offset, t->size() * width)}});
  }
  const nlohmann::json header{{"format", kCheckpointFormat}, {"model", to_json(w.config)}, {"tensors", tensors}};
  const std::string text = header.dump();
  std::vector<unsigned char> len;
  put_le(len, static_cast<std::uint64_t>(text.size()));

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path).concat(".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
    out.write(reinterpret_cast<const char*>(len.data()), 8);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
    if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

nlohmann::json read_checkpoint_header(const std::filesystem::path& path) { return read_raw(path, false).header; }

ModelWeights load_checkpoint(const std::filesystem::path& path) {
  RawFile raw = read_raw(path, true);
  ModelConfig cfg;
  try {
    const auto& m = raw.header.at("model");
    cfg.vocab_size = m.at("vocab_size");
    cfg.d_model = m.at("d_model");
    cfg.expand = m.at("expand");
    cfg.n_layers = m.at("n_layers");
    cfg.d_state = m.at("d_state");
    cfg.d_conv = m.at("d_conv");
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(std::string("checkpoint model config is malformed: ") + e.what());
  }
  cfg.validate();
  ModelWeights w = init_model(cfg, 0);
  const auto& dir = raw.header.at("tensors");
  auto params = named_parameters(w);
  if (dir.size() != params.size())
    throw IntegrityError("checkpoint lists " + std::to_string(dir.size()) + " tensors, model has " +
                         std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, t] = params[i];
    const auto& e = dir[i];
    if (e.at("name") != name) throw IntegrityError("checkpoint tensor " + std::to_string(i) + " is not " + name);
    if (e.at("shape").get<Shape>() != t->shape()) throw IntegrityError("shape mismatch for tensor " + name);
    const std::string dt = e.at("dtype");
    const std::size_t width = dt == "f32" ? 4 : dt == "f64" ? 8 : 0;
    if (width == 0) throw IntegrityError("unknown dtype '" + dt + "' for tensor " + name);
    const std::size_t offset = e.at("offset"), nbytes = e.at("nbytes");
    if (nbytes != t->size() * width || offset > raw.payload.size() || nbytes > raw.payload.size() - offset)
      throw IntegrityError("tensor " + name + " does not fit inside the payload");
    const unsigned char* p = raw.payload.data() + offset;
    if (sha256_hex(p, nbytes) != e.at("sha256").get<std::string>())
      throw IntegrityError("digest mismatch for tensor " + name);
    for (std::size_t k = 0; k < t->size(); ++k) {
      (*t)[k] = width == 4 ? static_cast<double>(std::bit_cast<float>(get_le<std::uint32_t>(p + 4 * k)))
                           : std::bit_cast<double>(get_le<std::uint64_t>(p + 8 * k));
    }
  }
  return w;
}

}  // namespace deci
