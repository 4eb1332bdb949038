#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "deci/decimation.hpp"
#include "deci/erf.hpp"
#include "deci/io.hpp"
#include "deci/mamba.hpp"
#include "deci/tasks.hpp"
#include "deci/training.hpp"

namespace deci {

struct PasskeyEvalConfig {
  PasskeyTaskConfig task;
  std::size_t samples_per_cell = 10;
};

struct LmConfig {
  std::string corpus;  // text file; empty means generated text
  std::size_t corpus_bytes = 400000;
  double heldout_fraction = 0.1;
  std::size_t n_last = 100;
  std::size_t n_windows = 10;
  std::vector<double> context_multipliers{1, 2, 4, 8, 16};
};

struct ErfConfig {
  ErfOptions options;
  std::size_t calibration_samples = kDefaultCalibrationSamples;
  std::vector<double> length_multipliers{0.5, 1, 2, 4, 8};
  bool write_alpha = false;
};

struct BenchConfig {
  std::size_t reps = 10;
  std::size_t warmup = 2;
  std::vector<std::size_t> lengths{1024, 4096, 16384, 65536};
  bool parallel_scan = true;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DecimationConfig decimation;
  bool decimation_enabled = false;
  std::string task = "passkey";  // passkey | lm
  PasskeyEvalConfig passkey;
  LmConfig lm;
  ErfConfig erf;
  BenchConfig bench;
  std::string out = "runs/default";
  std::uint64_t seed = 0;

  /// Cross-field checks; throws ConfigError naming the offending field.
  void validate() const;
};

/// Strict parse: missing keys take defaults, unknown keys and wrong types throw
/// ConfigError with the dotted path of the field.
RunConfig parse_config(const nlohmann::json& doc);
RunConfig load_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& c);

}  // namespace deci
