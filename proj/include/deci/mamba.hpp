#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "deci/s6.hpp"
#include "deci/tensor.hpp"

namespace deci {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ModelConfig {
  std::size_t vocab_size = 261;
  std::size_t d_model = 64;
  std::size_t expand = 2;
  std::size_t n_layers = 6;
  std::size_t d_state = 16;
  std::size_t d_conv = 4;

  std::size_t d_inner() const { return expand * d_model; }
  std::size_t dt_rank() const { return (d_inner() + 15) / 16; }
  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct BlockParams {
  Tensor norm_scale;  // d_model
  Tensor in_proj;     // d_model × 2D; columns [0, D) feed the conv branch, [D, 2D) the gate
  Tensor conv_w;      // d_conv × D; row d_conv-1 multiplies the current token
  Tensor conv_b;      // D
  S6Params s6;
  Tensor out_proj;  // D × d_model
};

struct ModelWeights {
  ModelConfig config;
  Tensor embedding;  // vocab × d_model, tied with the output head
  std::vector<BlockParams> blocks;
  Tensor final_norm;  // d_model
};

ModelWeights init_model(const ModelConfig& config, std::uint64_t seed);

/// Every trainable tensor with a stable dotted name, in a fixed order.
std::vector<std::pair<std::string, Tensor*>> named_parameters(ModelWeights& w);
std::vector<std::pair<std::string, const Tensor*>> named_parameters(const ModelWeights& w);
std::size_t parameter_count(const ModelWeights& w);

/// Depthwise causal convolution with (d_conv-1) zero left-padding, no activation.
Tensor causal_conv1d_linear(const Tensor& x, const Tensor& w, const Tensor& b);
/// The same followed by silu.
Tensor causal_conv1d(const Tensor& x, const Tensor& w, const Tensor& b);

/// Intermediate values of one block on an already-normalised input.
struct BlockInternals {
  Tensor x_branch;  // pre-conv, L×D
  Tensor gate;      // silu(z), L×D
  Tensor s6_input;  // silu(conv(x_branch)), L×D
  SsmInputs ssm;
};
BlockInternals block_internals(const Tensor& normed, const BlockParams& p);

/// u + out_proj(S6(X) ⊗ G) with u RMS-normalised before the input projection.
Tensor block_forward(const Tensor& u, const BlockParams& p, ScanMode mode);

/// Recurrent state of one block: the last d_conv-1 pre-conv inputs (oldest
/// first) and the SSM hidden state.
struct LayerState {
  Tensor conv_window;  // (d_conv-1) × D
  Tensor h;            // D × N
};

/// Read-only view of one layer's S6 inputs handed to hooks.
struct LayerTap {
  std::size_t layer;
  const Tensor& s6_input;
  const SsmInputs& ssm;
  std::span<const std::size_t> positions;  // original token index of each row
};

using LayerObserver = std::function<void(const LayerTap&)>;
/// Returns ascending row indices to keep, or nullopt to keep all rows.
using TokenSelector = std::function<std::optional<std::vector<std::size_t>>(const LayerTap&)>;

struct ForwardOptions {
  ScanMode mode = ScanMode::sequential;
  LayerObserver observe;
  TokenSelector select;
  bool keep_states = false;
  std::vector<double>* block_seconds = nullptr;
};

struct ForwardResult {
  Tensor hidden;                       // final-normalised rows, L'×d_model
  std::vector<std::size_t> positions;  // original index of each surviving row
  std::vector<LayerState> states;      // filled when keep_states
};

ForwardResult forward_hidden(std::span<const int> tokens, const ModelWeights& w, const ForwardOptions& opt);
Tensor lm_head(const Tensor& hidden, const ModelWeights& w);
/// Logits L×vocab.
Tensor model_forward(std::span<const int> tokens, const ModelWeights& w, ScanMode mode = ScanMode::sequential);

/// One recurrent step: consumes `token`, advances `states`, returns vocab logits.
Tensor decode_step(int token, const ModelWeights& w, std::vector<LayerState>& states);

void check_tokens(std::span<const int> tokens, std::size_t vocab_size);

}  // namespace deci
