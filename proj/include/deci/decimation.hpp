#pragma once

#include <cstddef>
#include <cstdint>
#include <nlohmann/json_fwd.hpp>
#include <span>
#include <string>
#include <vector>

#include "deci/mamba.hpp"
#include "deci/s6.hpp"

namespace deci {

enum class Strategy { delta_mean, random, max_norm, top_k_percent };

Strategy parse_strategy(const std::string& name);
std::string to_string(Strategy s);

struct DecimationConfig {
  std::size_t l_base = 2000;
  double beta = 0.5;
  std::vector<std::size_t> layers;  // decimating layers, ascending
  std::size_t min_seq_len = 20;
  Strategy strategy = Strategy::delta_mean;
  double top_k_percent = 50.0;
  bool prefill_only = true;
  std::size_t decode_chunk = 50;
  std::uint64_t seed = 0;  // random strategy only
  /// Trailing tokens that always survive on top of the budget. Zero means only
  /// the final token is forced, inside the budget.
  std::size_t protected_suffix = 0;

  /// Throws ConfigError. `n_layers` bounds the layer indices.
  void validate(std::size_t n_layers) const;
};

/// P_s = max(min_seq_len, floor(L_base · beta^s)).
std::size_t schedule(std::size_t s, const DecimationConfig& cfg);

/// Mean over channels of |Δ[t, :]|.
std::vector<double> importance_scores(const Tensor& delta);

/// Strategy-specific scores. `layer` salts the random stream.
std::vector<double> ablation_scores(const Tensor& x, const Tensor& delta, Strategy strategy,
                                    std::uint64_t seed = 0, std::size_t layer = 0);

/// Indices of the max(P, min_seq_len) largest scores, ties to the earlier index,
/// returned ascending. All indices when L fits.
std::vector<std::size_t> select_indices(std::span<const double> scores, std::size_t P, std::size_t min_seq_len);

/// Model-level selection: like select_indices with the final token forced in
/// (or a protected suffix kept in addition to the budget).
std::vector<std::size_t> select_with_tail(std::span<const double> scores, std::size_t budget,
                                          std::size_t protected_suffix);

struct DecimatedS6 {
  Tensor y;  // P'×D
  std::vector<std::size_t> kept;
};

/// Δ, B, C from the full input, then gather and scan.
DecimatedS6 decimated_s6_forward(const Tensor& x, const S6Params& params, std::size_t P, std::size_t min_seq_len,
                                 ScanMode mode = ScanMode::sequential);

struct LayerTrace {
  std::size_t layer = 0;
  std::size_t input_length = 0;
  std::size_t target = 0;             // P_s (or ⌈K%·L⌉)
  std::vector<std::size_t> kept;      // original token positions, ascending
  double score_min = 0, score_mean = 0, score_max = 0;
};

struct DecimationTrace {
  std::vector<LayerTrace> layers;

  /// Kept positions run-length encoded as [start, end] inclusive ranges.
  nlohmann::json to_json() const;
};

/// Hook for forward_hidden / forward_hidden_tape implementing cfg. `trace`
/// may be null.
TokenSelector make_selector(const DecimationConfig& cfg, DecimationTrace* trace = nullptr);

struct DecimatedForward {
  Tensor logits;  // rows for surviving positions
  std::vector<std::size_t> positions;
  DecimationTrace trace;
};

DecimatedForward decimated_model_forward(std::span<const int> tokens, const ModelWeights& w,
                                         const DecimationConfig& cfg, ScanMode mode = ScanMode::sequential);

/// Greedy continuation of `prompt` by `n_new` tokens. Prefill is decimated per
/// cfg; decoding is plain recurrence unless cfg.prefill_only is false, in which
/// case the whole context is re-prefilled with decimation every decode_chunk
/// generated tokens.
std::vector<int> generate_greedy(std::span<const int> prompt, std::size_t n_new, const ModelWeights& w,
                                 const DecimationConfig* cfg = nullptr);

}  // namespace deci
