#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "deci/decimation.hpp"
#include "deci/hidden_attention.hpp"
#include "deci/mamba.hpp"

namespace deci {

enum class Variant { baseline, decimated };
std::string to_string(Variant v);

struct BenchResult {
  Variant variant = Variant::baseline;
  std::size_t length = 0;
  std::size_t reps = 0;
  std::size_t warmup = 0;
  bool parallel_scan = true;
  // Wall seconds of the whole prefill over the timed reps.
  double median = 0, p10 = 0, p90 = 0;
  std::uint64_t ops = 0;
  std::size_t final_length = 0;  // rows reaching the head
  std::vector<double> block_median;
  // Blocks [0, split] and (split, n): split is the first decimating layer, which
  // still projects the full sequence before it gathers.
  std::size_t split_layer = 0;
  double before_split = 0, after_split = 0;
};

/// Linear-interpolated quantile of unsorted samples, q in [0, 1].
double quantile(std::vector<double> samples, double q);

/// Times forward prefill of L seeded random byte tokens, including the head on
/// the final row. `cfg` is ignored for the baseline except to place the split.
/// Throws ResourceError naming L when buffers cannot be allocated.
BenchResult time_prefill(const ModelWeights& w, Variant variant, const DecimationConfig& cfg, std::size_t L,
                         std::size_t reps, std::size_t warmup = 2, ScanMode mode = ScanMode::parallel,
                         std::uint64_t seed = 0);

void write_bench_csv(const std::vector<BenchResult>& results, const std::filesystem::path& path);

}  // namespace deci
