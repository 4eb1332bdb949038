#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "deci/hidden_attention.hpp"
#include "deci/mamba.hpp"

namespace deci {

/// |x_j| / Σ|x_k|. An all-zero row (total underflow) comes back uniform with
/// `*zero_row` set instead of failing.
std::vector<double> normalize_row(std::span<const double> row, bool* zero_row = nullptr);

/// Σ_{j≤i} p_j (i − j) for the normalised row i (0-based).
double attention_mean_distance(std::span<const double> row, std::size_t i, bool* zero_row = nullptr);
double attention_mean_distance(const Tensor& alpha, std::size_t i, bool* zero_row = nullptr);
/// Mean distance of the last row only.
double mamba_mean_distance(const Tensor& alpha, bool* zero_row = nullptr);
double mamba_mean_distance(const ChannelSsm& ch, bool* zero_row = nullptr);

struct CurvePoint {
  std::size_t length = 0;
  double value = 0.0;
  std::size_t samples = 0;
};

/// Σ_{k=2}^{L} Δ_k at `layer`, averaged over channels and samples. Nested mode
/// truncates every sequence to each length; otherwise each length averages the
/// sequences of exactly that length.
std::vector<CurvePoint> delta_sum_curve(const ModelWeights& w, std::size_t layer,
                                        const std::vector<std::vector<int>>& sequences,
                                        std::span<const std::size_t> lengths, bool nested);

struct LayerScore {
  std::size_t layer = 0;
  double mean_distance = 0.0;
};

/// Layers in descending order of Mamba Mean Distance averaged over samples and
/// the evenly spaced channel subsample (0 = all channels). Ties keep the
/// shallower layer first.
std::vector<LayerScore> rank_layers_by_distance(const ModelWeights& w,
                                                const std::vector<std::vector<int>>& calibration,
                                                std::size_t channels_per_layer = 16);

inline constexpr std::size_t kDefaultCalibrationSamples = 100;

struct ErfOptions {
  std::size_t channels_per_layer = 16;
  /// Average the mean distance over every row instead of the last one.
  bool all_rows = false;
  std::size_t alpha_cap = kAlphaLengthCap;
};

struct ErfRow {
  std::size_t layer = 0;
  std::size_t context_length = 0;
  double mean_distance = 0.0;
  double normalized_mean_distance = 0.0;
  double delta_sum = 0.0;
  std::size_t samples = 0;
  std::size_t zero_rows = 0;
  std::vector<std::size_t> channels;
  std::vector<double> channel_mean_distance;
};

struct ErfReport {
  std::vector<ErfRow> rows;  // ordered by context length, then layer

  void write_csv(const std::filesystem::path& path) const;
  void write_json(const std::filesystem::path& path) const;
};

/// Evaluates every layer on each prefix length of the given sequences.
ErfReport build_erf_report(const ModelWeights& w, const std::vector<std::vector<int>>& sequences,
                           std::span<const std::size_t> lengths, const ErfOptions& opt = {});

}  // namespace deci
