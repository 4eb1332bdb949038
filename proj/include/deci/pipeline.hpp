#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "deci/config.hpp"

namespace deci {

/// Passkey prompts of length L with needle depths spread evenly over [0, 1].
std::vector<std::vector<int>> passkey_calibration(const PasskeyTaskConfig& task, std::size_t L, std::size_t n,
                                                  std::uint64_t seed);

/// Consecutive windows of L tokens from a corpus, n of them spaced evenly.
std::vector<std::vector<int>> corpus_calibration(std::span<const int> corpus, std::size_t L, std::size_t n);

/// The k layers with the largest mean distance, ascending by index.
std::vector<std::size_t> top_ranked_layers(const ModelWeights& w, const std::vector<std::vector<int>>& calibration,
                                           std::size_t k, std::size_t channels_per_layer = 16);

struct CorpusSplit {
  std::vector<int> train;
  std::vector<int> heldout;
};
/// lm.corpus when set, generated text otherwise; the tail is held out.
CorpusSplit load_lm_corpus(const LmConfig& lm, std::uint64_t seed);

/// round(base · m) for each multiplier, never below `floor`.
std::vector<std::size_t> scaled_lengths(std::size_t base, const std::vector<double>& multipliers,
                                        std::size_t floor = 1);

}  // namespace deci
