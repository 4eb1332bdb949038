#include "deci/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace deci {

std::vector<std::vector<int>> passkey_calibration(const PasskeyTaskConfig& task, std::size_t L, std::size_t n,
                                                  std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::vector<int>> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double depth = n > 1 ? static_cast<double>(i) / static_cast<double>(n - 1) : 0.5;
    out.push_back(generate_passkey_sample(task, L, depth, rng).prompt);
  }
  return out;
}

std::vector<std::vector<int>> corpus_calibration(std::span<const int> corpus, std::size_t L, std::size_t n) {
  if (corpus.size() < L) throw InputError("corpus shorter than one calibration window");
  const std::size_t span = corpus.size() - L;
  std::vector<std::vector<int>> out;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t start = n > 1 ? span * i / (n - 1) : 0;
    out.emplace_back(corpus.begin() + static_cast<std::ptrdiff_t>(start),
                     corpus.begin() + static_cast<std::ptrdiff_t>(start + L));
  }
  return out;
}

std::vector<std::size_t> top_ranked_layers(const ModelWeights& w, const std::vector<std::vector<int>>& calibration,
                                           std::size_t k, std::size_t channels_per_layer) {
  const auto ranking = rank_layers_by_distance(w, calibration, channels_per_layer);
  std::vector<std::size_t> layers;
  for (std::size_t i = 0; i < std::min(k, ranking.size()); ++i) layers.push_back(ranking[i].layer);
  std::sort(layers.begin(), layers.end());
  return layers;
}

CorpusSplit load_lm_corpus(const LmConfig& lm, std::uint64_t seed) {
  const std::vector<int> all =
      lm.corpus.empty() ? encode_bytes(generate_lm_text(lm.corpus_bytes, seed)) : load_text_corpus(lm.corpus);
  const auto cut = static_cast<std::size_t>(std::llround(static_cast<double>(all.size()) * (1.0 - lm.heldout_fraction)));
  CorpusSplit s;
  s.train.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(cut));
  s.heldout.assign(all.begin() + static_cast<std::ptrdiff_t>(cut), all.end());
  return s;
}

std::vector<std::size_t> scaled_lengths(std::size_t base, const std::vector<double>& multipliers, std::size_t floor) {
  std::vector<std::size_t> out;
  for (double m : multipliers) {
    const auto L = static_cast<std::size_t>(std::llround(static_cast<double>(base) * m));
    out.push_back(std::max(L, floor));
  }
  return out;
}

}  // namespace deci
