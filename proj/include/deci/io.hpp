#pragma once

#include <filesystem>
#include <nlohmann/json.hpp>
#include <stdexcept>
#include <string>

#include "deci/mamba.hpp"

namespace deci {

inline constexpr const char* kCheckpointFormat = "deci-ssm/1";

class IntegrityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class VersionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class StorageType { f32, f64 };

/// Layout: u64 little-endian header size, JSON header, payload. The header holds
/// the format string, the model config and, per tensor, dtype, shape, byte
/// offset into the payload and a SHA-256 of its bytes.
void save_checkpoint(const ModelWeights& w, const std::filesystem::path& path, StorageType dtype = StorageType::f32);
ModelWeights load_checkpoint(const std::filesystem::path& path);
nlohmann::json read_checkpoint_header(const std::filesystem::path& path);

nlohmann::json to_json(const ModelConfig& c);
std::string sha256_hex(const void* data, std::size_t size);

}  // namespace deci
