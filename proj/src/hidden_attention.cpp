#include "deci/hidden_attention.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>

namespace deci {

ChannelSsm channel_ssm(const SsmInputs& in, const Tensor& a, std::size_t channel) {
  const std::size_t L = in.delta.rows(), D = in.delta.cols();
  if (channel >= D) throw std::out_of_range("channel " + std::to_string(channel) + " >= " + std::to_string(D));
  ChannelSsm ch;
  ch.delta.resize(L);
  for (std::size_t t = 0; t < L; ++t) ch.delta[t] = in.delta(t, channel);
  const auto arow = a.row(channel);
  ch.a.assign(arow.begin(), arow.end());
  ch.b = in.b;
  ch.c = in.c;
  return ch;
}

std::vector<double> alpha_row(const ChannelSsm& ch, std::size_t i) {
  const std::size_t L = ch.length(), N = ch.a.size();
  if (i >= L) throw std::out_of_range("alpha row out of range");
  std::vector<double> row(L, 0.0);
  // acc = Σ_{k=j+1}^{i} Δ_k, grows as j walks left.
  double acc = 0.0;
  for (std::size_t j = i + 1; j-- > 0;) {
    double v = 0.0;
    for (std::size_t n = 0; n < N; ++n) v += ch.c(i, n) * std::exp(ch.a[n] * acc) * ch.delta[j] * ch.b(j, n);
    row[j] = v;
    acc += ch.delta[j];
  }
  return row;
}

Tensor materialize_alpha(const ChannelSsm& ch, std::size_t cap) {
  const std::size_t L = ch.length();
  if (L > cap) {
    throw ResourceError("sequence length " + std::to_string(L) + " exceeds the hidden-attention cap of " +
                        std::to_string(cap) + "; subsample channels or shorten the input");
  }
  Tensor alpha({L, L});
  for (std::size_t i = 0; i < L; ++i) {
    const auto row = alpha_row(ch, i);
    std::copy_n(row.begin(), i + 1, alpha.data() + i * L);
  }
  return alpha;
}

std::vector<double> apply_alpha(const Tensor& alpha, std::span<const double> x) {
  const std::size_t L = x.size();
  require_shape(alpha, {L, L}, "alpha");
  std::vector<double> y(L, 0.0);
  for (std::size_t i = 0; i < L; ++i)
    for (std::size_t j = 0; j <= i; ++j) y[i] += alpha(i, j) * x[j];
  return y;
}

std::vector<std::size_t> evenly_spaced_channels(std::size_t D, std::size_t count) {
  if (count >= D) {
    std::vector<std::size_t> all(D);
    for (std::size_t d = 0; d < D; ++d) all[d] = d;
    return all;
  }
  std::vector<std::size_t> out(count);
  for (std::size_t k = 0; k < count; ++k) out[k] = k * D / count;
  return out;
}

HiddenAttention extract_hidden_attention(std::span<const int> tokens, const ModelWeights& w, std::size_t layer,
                                         const std::vector<std::size_t>& channels, std::size_t cap) {
  if (layer >= w.blocks.size()) throw ConfigError("layer " + std::to_string(layer) + " out of range");
  if (tokens.size() > cap) {
    throw ResourceError("sequence length " + std::to_string(tokens.size()) +
                        " exceeds the hidden-attention cap of " + std::to_string(cap));
  }
  std::optional<SsmInputs> captured;
  ForwardOptions opt;
  opt.observe = [&](const LayerTap& tap) {
    if (tap.layer == layer) captured = tap.ssm;
  };
  forward_hidden(tokens, w, opt);

  HiddenAttention ha;
  ha.layer = layer;
  ha.sequence_length = tokens.size();
  ha.channels = channels;
  const Tensor a = w.blocks[layer].s6.a();
  for (std::size_t d : channels) ha.alpha.push_back(materialize_alpha(channel_ssm(*captured, a, d), cap));
  return ha;
}

void write_hidden_attention(const HiddenAttention& ha, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json meta;
  meta["layer"] = ha.layer;
  meta["sequence_length"] = ha.sequence_length;
  meta["dtype"] = "float32";
  meta["byte_order"] = "little";
  meta["layout"] = "row-major lower-triangular, zeros above the diagonal";
  meta["tiles"] = nlohmann::json::array();
  for (std::size_t k = 0; k < ha.channels.size(); ++k) {
    const std::string file = "alpha_" + std::to_string(ha.channels[k]) + ".f32";
    std::ofstream out(dir / file, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + (dir / file).string());
    for (double v : ha.alpha[k].values()) {
      std::uint32_t bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
      if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
      out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
    meta["tiles"].push_back({{"channel", ha.channels[k]}, {"file", file}, {"shape", {ha.sequence_length, ha.sequence_length}}});
  }
  std::ofstream(dir / "hidden_attention.json") << meta.dump(2) << '\n';
}

}  // namespace deci
