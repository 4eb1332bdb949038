#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

#include "deci/mamba.hpp"
#include "deci/s6.hpp"
#include "deci/tensor.hpp"

namespace deci {

class ResourceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::size_t kAlphaLengthCap = 4096;

/// SSM inputs of a single channel d: Δ[:, d], A[d, :], and the shared B, C.
struct ChannelSsm {
  std::vector<double> delta;  // L
  std::vector<double> a;      // N, negative
  Tensor b;                   // L×N
  Tensor c;                   // L×N

  std::size_t length() const { return delta.size(); }
};

ChannelSsm channel_ssm(const SsmInputs& in, const Tensor& a, std::size_t channel);

/// Row i of the implicit attention matrix:
/// α_{i,j} = Σ_n C_i[n] exp(A[n] Σ_{k=j+1}^{i} Δ_k) Δ_j B_j[n] for j ≤ i, zero after.
/// The exponent is accumulated as a running sum from the diagonal outwards.
std::vector<double> alpha_row(const ChannelSsm& ch, std::size_t i);

/// Full L×L lower-triangular matrix. Throws ResourceError above `cap`.
Tensor materialize_alpha(const ChannelSsm& ch, std::size_t cap = kAlphaLengthCap);

std::vector<double> apply_alpha(const Tensor& alpha, std::span<const double> x);

struct HiddenAttention {
  std::size_t layer = 0;
  std::size_t sequence_length = 0;
  std::vector<std::size_t> channels;
  std::vector<Tensor> alpha;  // one L×L matrix per entry of `channels`
};

/// `count` channel indices spread evenly over [0, D), always including 0.
std::vector<std::size_t> evenly_spaced_channels(std::size_t D, std::size_t count = 16);

HiddenAttention extract_hidden_attention(std::span<const int> tokens, const ModelWeights& w, std::size_t layer,
                                         const std::vector<std::size_t>& channels,
                                         std::size_t cap = kAlphaLengthCap);

/// Writes alpha_<channel>.f32 (row-major little-endian float32) per channel
/// and hidden_attention.json describing them.
void write_hidden_attention(const HiddenAttention& ha, const std::filesystem::path& dir);

}  // namespace deci
