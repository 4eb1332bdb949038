#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "deci/decimation.hpp"
#include "deci/mamba.hpp"
#include "deci/optim.hpp"
#include "deci/tasks.hpp"

namespace deci {

struct TrainConfig {
  double learning_rate = 1e-4;
  double weight_decay = 0.1;
  double grad_clip_norm = 1.0;
  std::size_t batch_size = 32;
  std::size_t steps = 1000;
  std::size_t train_seq_len = 128;
  std::uint64_t seed = 0;
  std::size_t warmup_steps = 0;
  /// Cosine decay from learning_rate down to learning_rate·min_lr_ratio; 1 keeps it constant.
  double min_lr_ratio = 1.0;
  std::size_t checkpoint_every = 0;  // 0 = only the final checkpoint

  void validate() const;
};

double learning_rate_at(std::size_t step, const TrainConfig& cfg);

struct StepMetrics {
  std::size_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
};

struct TrainHooks {
  std::filesystem::path out_dir;  // metrics.csv and checkpoints; empty disables files
  std::function<void(const StepMetrics&)> on_step;
};

struct TrainLog {
  std::vector<StepMetrics> steps;
};

/// Mean NLL of `targets` predicted at rows `positions` (original indices),
/// gradients accumulated into `grad_sum` (aligned with named_parameters) scaled
/// by `weight`. Returns the loss.
double accumulate_loss_and_grad(const ModelWeights& w, std::span<const int> tokens,
                                std::span<const std::size_t> positions, std::span<const int> targets,
                                const TokenSelector& select, double weight, std::vector<Tensor>& grad_sum);

/// Teacher-forced passkey example: prompt followed by all but the last digit,
/// loss on the digit positions only.
struct LabeledSequence {
  std::vector<int> tokens;
  std::vector<std::size_t> positions;
  std::vector<int> targets;
};
LabeledSequence passkey_training_example(const PasskeySample& s);

/// With `deci`, the prompt is decimated in the forward and backward passes; the
/// labelled digit rows are kept as a protected suffix.
TrainLog train_passkey(ModelWeights& w, const TrainConfig& cfg, const PasskeyTaskConfig& task,
                       const DecimationConfig* deci = nullptr, const TrainHooks& hooks = {});

/// Two-chunk LM objective: the first half of the labels conditions on the first
/// half of the window; the second half conditions on the whole window with the
/// first half compressed by `deci` (its protected suffix is set to L/2).
/// Without decimation layers this is the ordinary next-token loss.
TrainLog train_chunked_lm(ModelWeights& w, const TrainConfig& cfg, std::span<const int> corpus,
                          const DecimationConfig* deci = nullptr, const TrainHooks& hooks = {});

/// Sum of both chunks' NLL over L, for one window of L+1 tokens.
double chunked_lm_loss(const ModelWeights& w, std::span<const int> window, const DecimationConfig* deci,
                       std::vector<Tensor>* grad_sum = nullptr);

struct PasskeyCell {
  std::size_t length = 0;
  double position = 0.0;
  double accuracy = 0.0;
  std::size_t samples = 0;
};

struct PasskeyGrid {
  std::vector<PasskeyCell> cells;

  double mean_accuracy(std::size_t length) const;
  void write_csv(const std::filesystem::path& path) const;
};

/// Exact-match greedy accuracy per (length, position). Samples depend only on
/// (seed, length, position, index), so runs with and without decimation see the
/// same prompts.
PasskeyGrid eval_passkey(const ModelWeights& w, const PasskeyTaskConfig& task, std::span<const std::size_t> lengths,
                         std::span<const double> positions, std::size_t samples_per_cell, std::uint64_t seed,
                         const DecimationConfig* deci = nullptr);

struct PerplexityResult {
  double perplexity = 0.0;
  double mean_nll = 0.0;
  std::size_t labels = 0;
  std::size_t windows = 0;
  std::size_t stride = 0;
};

/// exp(mean NLL) over the last n_last labels of n_windows windows of
/// window_len inputs, placed with the largest constant stride that fits.
PerplexityResult lm_perplexity_farthest(const ModelWeights& w, std::span<const int> corpus, std::size_t window_len,
                                        std::size_t n_last = 100, std::size_t n_windows = 10,
                                        const DecimationConfig* deci = nullptr);

struct PerplexityPoint {
  std::size_t context_length = 0;
  double perplexity = 0.0;
};
void write_ppl_curve(const std::vector<PerplexityPoint>& curve, const std::filesystem::path& path);

}  // namespace deci
