#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace deci {

class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Byte vocabulary 0..255 followed by the special tokens.
namespace tok {
inline constexpr int bos = 256;
inline constexpr int eos = 257;
inline constexpr int key = 258;
inline constexpr int query = 259;
inline constexpr int pad = 260;
inline constexpr std::size_t vocab_size = 261;
}  // namespace tok

std::vector<int> encode_bytes(std::string_view text);
/// Bytes back to text; special tokens are dropped.
std::string decode_bytes(std::span<const int> tokens);

struct PasskeyTaskConfig {
  std::size_t digits = 5;
  std::vector<std::string> filler;  // sentences; empty means the built-in set
  std::vector<double> positions{0.0, 0.25, 0.5, 0.75, 1.0};
  /// Eval lengths as multiples of the training length.
  std::vector<double> length_multipliers{0.5, 1, 2, 4, 8, 16};
};

const std::vector<std::string>& default_filler_sentences();

/// `n` filler bytes from the sentence set, shuffled per pass with `rng`.
std::vector<int> filler_tokens(std::size_t n, const std::vector<std::string>& sentences, std::mt19937_64& rng);

struct PasskeySample {
  std::vector<int> prompt;  // BOS filler KEY d…d '.' filler QUERY; exactly `length` tokens
  std::vector<int> answer;  // the digits
  std::size_t needle_begin = 0;  // [begin, end) of the digit tokens inside prompt
  std::size_t needle_end = 0;
  std::string passkey;
};

/// Fixed tokens in a prompt besides filler.
std::size_t passkey_overhead(const PasskeyTaskConfig& cfg);

PasskeySample generate_passkey_sample(const PasskeyTaskConfig& cfg, std::size_t length, double position_fraction,
                                      std::mt19937_64& rng);

/// Synthetic English-like text built from a small grammar; names and
/// attributes introduced early are referred to again later.
std::string generate_lm_text(std::size_t n_bytes, std::uint64_t seed);
std::vector<int> load_text_corpus(const std::filesystem::path& path);

}  // namespace deci
