#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <random>

#include "deci/hidden_attention.hpp"
#include "test_util.hpp"

namespace deci {
namespace {

using testing::random_tensor;

ChannelSsm random_channel(std::size_t L, std::size_t N, std::mt19937_64& rng) {
  ChannelSsm ch;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t t = 0; t < L; ++t) ch.delta.push_back(0.01 + 0.5 * u(rng));
  for (std::size_t n = 0; n < N; ++n) ch.a.push_back(-0.1 - 2.0 * u(rng));
  ch.b = random_tensor({L, N}, rng);
  ch.c = random_tensor({L, N}, rng);
  return ch;
}

std::vector<double> scan_oracle(const ChannelSsm& ch, const std::vector<double>& x) {
  const std::size_t L = ch.length(), N = ch.a.size();
  Tensor delta({L, 1}), a({1, N}), xt({L, 1});
  for (std::size_t t = 0; t < L; ++t) delta(t, 0) = ch.delta[t], xt(t, 0) = x[t];
  for (std::size_t n = 0; n < N; ++n) a(0, n) = ch.a[n];
  const Discretized dz = discretize(delta, a, ch.b);
  const Tensor y = scan_sequential(dz.a_bar, dz.b_bar, ch.c, xt).y;
  return {y.values().begin(), y.values().end()};
}

TEST(MaterializeAlpha, CornerEntriesFollowTheProductForm) {
  std::mt19937_64 rng(1);
  const ChannelSsm ch = random_channel(7, 3, rng);
  const Tensor alpha = materialize_alpha(ch);
  double diag = 0, corner = 0;
  for (std::size_t n = 0; n < 3; ++n) {
    diag += ch.c(0, n) * ch.delta[0] * ch.b(0, n);
    double prod = 1.0;
    for (std::size_t k = 1; k < 7; ++k) prod *= std::exp(ch.a[n] * ch.delta[k]);
    corner += ch.c(6, n) * prod * ch.delta[0] * ch.b(0, n);
  }
  EXPECT_NEAR(alpha(0, 0), diag, 1e-15);
  EXPECT_NEAR(alpha(6, 0), corner, 1e-14);
}

TEST(MaterializeAlpha, UnitSystemIsLowerTriangleOfOnes) {
  ChannelSsm ch;
  ch.delta.assign(5, 1.0);
  ch.a = {0.0};
  ch.b = Tensor({5, 1}, 1.0);
  ch.c = Tensor({5, 1}, 1.0);
  const Tensor alpha = materialize_alpha(ch);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j) EXPECT_EQ(alpha(i, j), j <= i ? 1.0 : 0.0);
  const std::vector<double> x{1, 2, 3, 4, 5};
  EXPECT_EQ(apply_alpha(alpha, x), (std::vector<double>{1, 3, 6, 10, 15}));
}

TEST(ApplyAlpha, IdentityReturnsInput) {
  Tensor eye({4, 4});
  for (std::size_t i = 0; i < 4; ++i) eye(i, i) = 1.0;
  const std::vector<double> x{0.5, -1, 2, 7};
  EXPECT_EQ(apply_alpha(eye, x), x);
}

TEST(MaterializeAlpha, ReproducesTheScanOnRandomInstances) {
  std::mt19937_64 rng(2);
  double worst = 0;
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t L = 1 + rng() % (rep < 90 ? 64 : 512), N = 1 + rng() % 4;
    const ChannelSsm ch = random_channel(L, N, rng);
    std::vector<double> x(L);
    for (auto& v : x) v = std::uniform_real_distribution<double>(-1, 1)(rng);
    const auto got = apply_alpha(materialize_alpha(ch), x);
    const auto want = scan_oracle(ch, x);
    for (std::size_t t = 0; t < L; ++t) worst = std::max(worst, std::abs(got[t] - want[t]));
  }
  EXPECT_LT(worst, 1e-9);
}

TEST(MaterializeAlpha, StrictUpperTriangleIsExactlyZero) {
  std::mt19937_64 rng(3);
  const Tensor alpha = materialize_alpha(random_channel(20, 2, rng));
  for (std::size_t i = 0; i < 20; ++i)
    for (std::size_t j = i + 1; j < 20; ++j) EXPECT_EQ(alpha(i, j), 0.0);
  EXPECT_TRUE(alpha.all_finite());
}

TEST(AlphaRow, LastRowMatchesExponentOfDeltaSums) {
  std::mt19937_64 rng(4);
  const std::size_t L = 50, N = 3;
  const ChannelSsm ch = random_channel(L, N, rng);
  const auto row = alpha_row(ch, L - 1);
  for (std::size_t j = 0; j < L; ++j) {
    double s = 0;
    for (std::size_t k = j + 1; k < L; ++k) s += ch.delta[k];
    double expected = 0;
    for (std::size_t n = 0; n < N; ++n) expected += ch.c(L - 1, n) * std::exp(ch.a[n] * s) * ch.delta[j] * ch.b(j, n);
    EXPECT_NEAR(row[j], expected, 1e-14 * (1 + std::abs(expected)));
  }
}

TEST(AlphaRow, StaysFiniteWhenProductsUnderflow) {
  ChannelSsm ch;
  ch.delta.assign(3000, 5.0);
  ch.a = {-10.0};
  ch.b = Tensor({3000, 1}, 1.0);
  ch.c = Tensor({3000, 1}, 1.0);
  const auto row = alpha_row(ch, 2999);
  EXPECT_EQ(row[2999], 5.0);
  EXPECT_EQ(row[0], 0.0);
  for (double v : row) EXPECT_TRUE(std::isfinite(v));
}

TEST(MaterializeAlpha, RejectsLengthsOverTheCap) {
  std::mt19937_64 rng(5);
  const ChannelSsm ch = random_channel(9, 1, rng);
  EXPECT_THROW(materialize_alpha(ch, 8), ResourceError);
  EXPECT_NO_THROW(materialize_alpha(ch, 9));
}

TEST(EvenlySpacedChannels, SpreadsAcrossChannels) {
  const auto c = evenly_spaced_channels(64, 16);
  ASSERT_EQ(c.size(), 16u);
  for (std::size_t k = 0; k < 16; ++k) EXPECT_EQ(c[k], 4 * k);
  EXPECT_EQ(evenly_spaced_channels(5, 16).size(), 5u);
}

TEST(ExtractHiddenAttention, MatchesLayerOutputAndWritesTiles) {
  ModelConfig cfg;
  cfg.vocab_size = 11;
  cfg.d_model = 8;
  cfg.n_layers = 2;
  cfg.d_state = 4;
  cfg.d_conv = 3;
  const ModelWeights w = init_model(cfg, 6);
  const std::vector<int> tokens{1, 4, 2, 9, 9, 0, 3};
  const HiddenAttention ha = extract_hidden_attention(tokens, w, 1, {0, 5});
  ASSERT_EQ(ha.alpha.size(), 2u);

  // αX must reproduce the S6 output of the same channel.
  Tensor s6_in;
  ForwardOptions opt;
  opt.observe = [&](const LayerTap& tap) {
    if (tap.layer == 1) s6_in = tap.s6_input;
  };
  forward_hidden(tokens, w, opt);
  const Tensor y = s6_forward(s6_in, w.blocks[1].s6, ScanMode::sequential);
  for (std::size_t k = 0; k < 2; ++k) {
    std::vector<double> x(tokens.size());
    for (std::size_t t = 0; t < x.size(); ++t) x[t] = s6_in(t, ha.channels[k]);
    const auto got = apply_alpha(ha.alpha[k], x);
    for (std::size_t t = 0; t < x.size(); ++t) EXPECT_NEAR(got[t], y(t, ha.channels[k]), 1e-12);
  }

  const auto dir = std::filesystem::temp_directory_path() / "deci_ha_test";
  std::filesystem::remove_all(dir);
  write_hidden_attention(ha, dir);
  const auto meta = nlohmann::json::parse(std::ifstream(dir / "hidden_attention.json"));
  EXPECT_EQ(meta["tiles"].size(), 2u);
  EXPECT_EQ(std::filesystem::file_size(dir / "alpha_5.f32"), 7u * 7u * 4u);
  std::ifstream in(dir / "alpha_5.f32", std::ios::binary);
  float first = 0;
  in.read(reinterpret_cast<char*>(&first), 4);
  EXPECT_EQ(first, static_cast<float>(ha.alpha[1](0, 0)));
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace deci
